// unicb: data generation, two-stage training, evaluation and image dumps.
//
// Exit codes: 0 ok, 1 other failure, 2 usage/config error, 3 missing input
// artifact, 4 numeric failure during training.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unicb/paradigms.hpp"

#ifndef UNICB_BUILD_ID
#define UNICB_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace unicb;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigFlags {
    std::string preset = "desk";
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
    cmd->add_option("--preset", f.preset, "Base configuration: desk (small LM) or default")
        ->check(CLI::IsMember({"desk", "default"}))
        ->capture_default_str();
    cmd->add_option("--config", f.config_path, "Flat key = value config file applied over the preset");
    cmd->add_option("--set", f.overrides, "key=value override, applied last (repeatable)");
}

void apply_overrides(ExperimentConfig& c, const std::vector<std::string>& overrides) {
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

ExperimentConfig resolve_config(const ConfigFlags& f) {
    ExperimentConfig c = f.preset == "desk" ? desk_config() : ExperimentConfig{};
    if (!f.config_path.empty()) {
        if (!fs::exists(f.config_path)) throw MissingArtifactError("no such config file: " + f.config_path);
        const auto bytes = read_file(f.config_path);
        c.apply_text(std::string(bytes.begin(), bytes.end()));
    }
    apply_overrides(c, f.overrides);
    c.validate();
    return c;
}

fs::path default_out(const std::string& leaf) {
    const char* root = std::getenv("UNICB_OUT_ROOT");
    return fs::path(root != nullptr && *root != '\0' ? root : "runs") / leaf;
}

void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir) && !force) {
            throw UsageError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
        }
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
    const std::string s = text;
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string manifest(const std::string& command, const ExperimentConfig& c,
                     const std::vector<std::pair<std::string, std::string>>& extra,
                     const std::vector<std::string>& files) {
    std::ostringstream os;
    os << "# unicb run manifest\n";
    os << "command = " << command << '\n';
    os << "build = " << UNICB_BUILD_ID << '\n';
    os << "seed = " << c.seed << '\n';
    for (const auto& [k, v] : extra) os << k << " = " << v << '\n';
    os << "outputs =";
    for (const auto& f : files) os << ' ' << f;
    os << "\n\n# resolved config\n" << c.to_text();
    return os.str();
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
    const auto bytes = read_file(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
        out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

fs::path dataset_path(const std::string& arg) {
    fs::path p(arg);
    if (fs::is_directory(p)) p /= "dataset.bin";
    return p;
}

Dataset load_or_make_dataset(const std::string& arg, const ExperimentConfig& c) {
    if (arg.empty()) return make_dataset(c);
    Dataset d = load_dataset(dataset_path(arg));
    if (d.resolution != c.image_size) {
        throw UsageError("dataset resolution " + std::to_string(d.resolution) + " does not match image_size " +
                         std::to_string(c.image_size));
    }
    return d;
}

// ---- gen-data -----------------------------------------------------------------------------

struct GenDataFlags {
    ConfigFlags cfg;
    std::string out;
    bool force = false;
};

int cmd_gen_data(const GenDataFlags& f) {
    const ExperimentConfig c = resolve_config(f.cfg);
    if (c.image_size == 0 || c.image_size % c.patch != 0) {
        throw UsageError("resolution " + std::to_string(c.image_size) + " is not a positive multiple of patch " +
                         std::to_string(c.patch));
    }
    const fs::path out = f.out.empty() ? default_out("data") : fs::path(f.out);
    prepare_out_dir(out, f.force);
    const Dataset d = make_dataset(c);
    write_text(out / "manifest.txt",
               manifest("gen-data", c,
                        {{"train_images", std::to_string(d.train.size())},
                         {"heldout_images", std::to_string(d.heldout.size())},
                         {"resolution", std::to_string(d.resolution)},
                         {"dataset_digest", std::to_string(d.digest())}},
                        {"dataset.bin", "captions.txt"}));
    save_dataset(d, out / "dataset.bin");
    std::string captions;
    for (const auto& it : d.train) captions += it.caption + '\n';
    write_text(out / "captions.txt", captions);
    std::cout << "wrote " << d.train.size() << " training and " << d.heldout.size() << " held-out images ("
              << d.resolution << "x" << d.resolution << ") to " << out.string() << '\n';
    return 0;
}

// ---- train --------------------------------------------------------------------------------

struct TrainFlags {
    ConfigFlags cfg;
    int stage = 1;
    std::string paradigm;
    std::string data;
    std::string checkpoint;
    std::string out;
    long long steps = -1;
    bool force = false;
};

int cmd_train(const TrainFlags& f) {
    ExperimentConfig c;
    std::optional<TrainingState> state;
    if (f.stage == 2) {
        if (f.checkpoint.empty()) throw UsageError("--stage 2 requires --checkpoint from a stage 1 run");
        state = load_checkpoint(f.checkpoint);
        c = state->config;
        const auto digest = c.architecture_digest();
        apply_overrides(c, f.cfg.overrides);
        if (!f.paradigm.empty()) c.paradigm = parse_paradigm(f.paradigm);
        c.validate();
        if (c.architecture_digest() != digest) {
            throw ConfigMismatchError("stage 2 overrides change the model architecture of the checkpoint");
        }
        if (state->stage < 1) throw UsageError("checkpoint has not completed stage 1");
    } else {
        c = resolve_config(f.cfg);
        if (!f.paradigm.empty()) c.paradigm = parse_paradigm(f.paradigm);
        c.validate();
    }
    if (f.steps >= 0) {
        if (f.stage == 2) {
            c.stage2_steps = static_cast<std::size_t>(f.steps);
        } else {
            throw UsageError("--steps applies to stage 2; use --set rounds=... for stage 1");
        }
    }
    if (state) state->config = c;

    const Dataset data = load_or_make_dataset(f.data, c);
    const fs::path out =
        f.out.empty() ? default_out("stage" + std::to_string(f.stage) + "-" + std::string(to_string(c.paradigm)))
                      : fs::path(f.out);
    if (!f.checkpoint.empty() && fs::exists(out / "checkpoint.bin") &&
        fs::equivalent(out / "checkpoint.bin", f.checkpoint)) {
        throw UsageError("refusing to overwrite the input checkpoint; choose another --out");
    }
    prepare_out_dir(out, f.force);
    write_text(out / "manifest.txt",
               manifest("train", c,
                        {{"stage", std::to_string(f.stage)},
                         {"dataset_digest", std::to_string(data.digest())},
                         {"input_checkpoint", f.checkpoint.empty() ? "-" : f.checkpoint}},
                        {"metrics.csv", "checkpoint.bin", "summary.txt"}));

    std::ofstream csv(out / "metrics.csv", std::ios::trunc);
    csv << metrics_csv_header() << std::flush;
    auto on_step = [&](const StepRow& row) { csv << metrics_csv_row(row) << std::flush; };

    std::vector<std::pair<std::string, std::string>> summary{
        {"stage", std::to_string(f.stage)},
        {"paradigm", std::string(to_string(c.paradigm))},
        {"seed", std::to_string(c.seed)},
        {"dataset_digest", std::to_string(data.digest())},
    };
    StageMetrics m;
    if (f.stage == 1) {
        state = TrainingState::initialize(c);
        m = run_stage1(*state, data, on_step);
        summary.insert(summary.end(), {
                                          {"initial_mse", fmt(m.initial_eval_mse)},
                                          {"final_mse", fmt(m.final_eval_mse)},
                                          {"initial_text_loss", fmt(m.initial_text_loss)},
                                          {"final_text_loss", fmt(m.final_text_loss)},
                                          {"initial_distance", fmt(m.initial_distance)},
                                          {"final_distance", fmt(m.final_distance)},
                                          {"utilization", fmt(m.final_utilization)},
                                          {"non_gradient_drift", fmt(m.non_gradient_drift)},
                                      });
    } else {
        auto r = run_stage2(*state, data, c.stage2_steps, on_step);
        m = r.metrics;
        summary.insert(summary.end(), {
                                          {"steps", std::to_string(c.stage2_steps)},
                                          {"initial_heldout_loss", fmt(r.initial_heldout_loss)},
                                          {"final_heldout_loss", fmt(r.final_heldout_loss)},
                                          {"final_distance", fmt(m.final_distance)},
                                      });
    }
    save_checkpoint(*state, out / "checkpoint.bin");
    std::string text;
    for (const auto& [k, v] : summary) text += k + " = " + v + '\n';
    write_text(out / "summary.txt", text);
    std::cout << text << "wall_seconds = " << fmt(m.wall_seconds) << '\n';
    return 0;
}

// ---- eval ---------------------------------------------------------------------------------

struct EvalFlags {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::size_t dump = 0;
    std::size_t segments = 1;
    bool force = false;
};

int cmd_eval(const EvalFlags& f) {
    const TrainingState state = load_checkpoint(f.checkpoint);
    const auto& c = state.config;
    const Dataset data = load_or_make_dataset(f.data, c);
    const auto heldout = images_of(data.heldout);
    const auto recon = reconstruct_eval(state.tokenizer, heldout, state.codebook);
    const auto text_loss = eval_loss(state.lm, heldout_text(c, state.lm.vocab()));
    std::vector<TokenSequence> instr;
    for (auto& s : build_instruction_corpus(state, data.heldout, c.seed + 1)) instr.push_back(std::move(s.sequence));
    const auto instr_loss = eval_loss(state.lm, instr);
    const auto dec = evaluate_decompression(state, data.heldout, f.segments);

    std::ostringstream os;
    os << "checkpoint = " << f.checkpoint << '\n'
       << "stage = " << state.stage << '\n'
       << "heldout_images = " << heldout.size() << '\n'
       << "recon_mse = " << fmt(recon.mse) << '\n'
       << "recon_psnr = " << fmt(recon.psnr) << '\n'
       << "code_utilization = " << fmt(recon.utilization) << '\n'
       << "code_entropy_bits = " << fmt(recon.entropy_bits) << '\n'
       << "text_loss = " << fmt(text_loss) << '\n'
       << "instruction_loss = " << fmt(instr_loss) << '\n'
       << "decompression_segments = " << f.segments << '\n'
       << "decompression_token_exact = " << fmt(dec.exact_token_rate) << '\n'
       << "decompression_map_exact = " << fmt(dec.exact_map_rate) << '\n'
       << "decompression_violations = " << dec.violations << '\n'
       << "chance_token_rate = " << fmt(1.0 / static_cast<double>(c.codes)) << '\n'
       << "codebook_distance = " << fmt(codebook_distance(state.codebook, state.lm.visual_codebook())) << '\n';
    std::cout << os.str();
    if (!f.out.empty()) {
        prepare_out_dir(f.out, f.force);
        write_text(fs::path(f.out) / "report.txt", os.str());
        for (std::size_t i = 0; i < std::min(f.dump, heldout.size()); ++i) {
            write_ppm(heldout[i], fs::path(f.out) / ("heldout_" + std::to_string(i) + "_input.ppm"));
            write_ppm(reconstruct(state.tokenizer, heldout[i], state.codebook),
                      fs::path(f.out) / ("heldout_" + std::to_string(i) + "_recon.ppm"));
        }
    }
    return 0;
}

// ---- reconstruct --------------------------------------------------------------------------

struct ReconstructFlags {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::size_t count = 4;
    std::size_t resolution = 0;
    bool force = false;
};

int cmd_reconstruct(const ReconstructFlags& f) {
    const TrainingState state = load_checkpoint(f.checkpoint);
    const auto& c = state.config;
    const Dataset data = load_or_make_dataset(f.data, c);
    const std::size_t res = f.resolution == 0 ? c.image_size : f.resolution;
    if (res % c.patch != 0) {
        throw UsageError("resolution " + std::to_string(res) + " is not a multiple of patch " + std::to_string(c.patch));
    }
    const fs::path out = f.out.empty() ? default_out("reconstruct") : fs::path(f.out);
    prepare_out_dir(out, f.force);
    std::string csv = "index,resolution,mse,psnr\n";
    const std::size_t n = std::min(f.count, data.heldout.size());
    for (std::size_t i = 0; i < n; ++i) {
        // Re-render the same scene so other resolutions see identical content.
        const Image src = render(data.heldout[i].shape, res);
        const Image rec = reconstruct(state.tokenizer, src, state.codebook);
        const double e = image_mse(rec, src);
        csv += std::to_string(i) + "," + std::to_string(res) + "," + fmt(e) + "," + fmt(psnr_from_mse(e)) + "\n";
        write_ppm(src, out / ("image_" + std::to_string(i) + "_input.ppm"));
        write_ppm(rec, out / ("image_" + std::to_string(i) + "_recon.ppm"));
    }
    write_text(out / "reconstruction.csv", csv);
    std::cout << csv;
    return 0;
}

// ---- generate -----------------------------------------------------------------------------

struct GenerateFlags {
    std::string checkpoint;
    std::string caption;
    std::string out;
    bool sample = false;
    double temperature = 1.0;
    std::size_t top_k = 0;
    std::uint64_t seed = 1;
};

int cmd_generate(const GenerateFlags& f) {
    const TrainingState state = load_checkpoint(f.checkpoint);
    const auto& c = state.config;
    const auto& vocab = state.lm.vocab();
    const std::size_t grid = c.image_size / c.patch;
    const std::size_t n_codes = grid * grid * c.depth;
    const auto prompt = text_to_image_prompt(f.caption, vocab);
    SamplingConfig sampling{!f.sample, f.temperature, f.top_k};
    const auto seq = generate(prompt, state.lm, sampling, n_codes + 1, f.seed);

    CodeMap codes{grid, grid, c.depth, c.quantizer, {}};
    std::size_t violations = 0;
    for (std::size_t t = prompt.size(); t < seq.size() && codes.indices.size() < n_codes; ++t) {
        if (vocab.is_visual(seq.ids[t])) {
            codes.indices.push_back(vocab.code_of(seq.ids[t]));
        } else {
            ++violations;
            if (seq.ids[t] == vocab.special(Special::image_end) || seq.ids[t] == vocab.special(Special::eos)) break;
        }
    }
    const std::size_t produced = codes.indices.size();
    codes.indices.resize(n_codes, 0);
    const Image img = state.tokenizer.decode(aggregate(codes, state.codebook));
    const fs::path out = f.out.empty() ? default_out("generated.ppm") : fs::path(f.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_ppm(img, out);
    std::cout << "caption = " << f.caption << '\n'
              << "codes_generated = " << produced << " / " << n_codes << '\n'
              << "non_visual_tokens = " << violations << '\n'
              << "image = " << out.string() << '\n';
    return 0;
}

// ---- decompress ---------------------------------------------------------------------------

struct DecompressFlags {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::size_t index = 0;
    std::size_t segments = 1;
};

int cmd_decompress(const DecompressFlags& f) {
    const TrainingState state = load_checkpoint(f.checkpoint);
    const auto& c = state.config;
    const Dataset data = load_or_make_dataset(f.data, c);
    if (f.index >= data.heldout.size()) {
        throw UsageError("--index " + std::to_string(f.index) + " out of range (" +
                         std::to_string(data.heldout.size()) + " held-out images)");
    }
    const Image& src = data.heldout[f.index].image;
    const auto z = state.tokenizer.encode(src);
    const auto sq = quantize_stacked(z, state.codebook, c.depth, c.quantizer);
    const auto got = decompress_image(sq.aggregated, state.lm, c.depth, c.quantizer, f.segments);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < sq.codes.indices.size(); ++i) hits += got.codes.indices[i] == sq.codes.indices[i];
    const Image img = state.tokenizer.decode(aggregate(got.codes, state.codebook));
    const fs::path out = f.out.empty() ? default_out("decompressed.ppm") : fs::path(f.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_ppm(img, out);
    std::cout << "index = " << f.index << '\n'
              << "caption = " << data.heldout[f.index].caption << '\n'
              << "codes_exact = " << hits << " / " << sq.codes.indices.size() << '\n'
              << "violations = " << got.violations << '\n'
              << "image = " << out.string() << '\n';
    return 0;
}

// ---- compare-paradigms --------------------------------------------------------------------

struct CompareFlags {
    std::vector<std::string> runs;
    std::string out;
};

int cmd_compare(const CompareFlags& f) {
    if (f.runs.size() != 3) throw UsageError("compare-paradigms expects exactly three run directories");
    std::vector<std::map<std::string, std::string>> rows;
    for (const auto& r : f.runs) rows.push_back(read_kv(fs::path(r) / "summary.txt"));
    for (const auto& row : rows) {
        if (!row.count("stage") || row.at("stage") != "1") throw UsageError("compare-paradigms needs stage 1 runs");
        if (row.at("dataset_digest") != rows[0].at("dataset_digest") || row.at("seed") != rows[0].at("seed")) {
            throw UsageError("runs were trained on different corpora or seeds");
        }
    }
    std::ostringstream os;
    os << "paradigm,final_mse,final_text_loss,final_distance,utilization,non_gradient_drift\n";
    for (const auto& row : rows) {
        os << row.at("paradigm") << ',' << row.at("final_mse") << ',' << row.at("final_text_loss") << ','
           << row.at("final_distance") << ',' << row.at("utilization") << ',' << row.at("non_gradient_drift")
           << '\n';
    }
    std::cout << os.str();
    if (!f.out.empty()) write_text(f.out, os.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unicb: unified codebook tokenizer and language model"};
    app.require_subcommand(1);

    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic image dataset");
    add_config_flags(gen_cmd, gen.cfg);
    gen_cmd->add_option("--out", gen.out, "Output directory (default $UNICB_OUT_ROOT/data)");
    gen_cmd->add_flag("--force", gen.force, "Write into a non-empty output directory");

    TrainFlags train;
    auto* train_cmd = app.add_subcommand("train", "Run stage 1 or stage 2 training");
    add_config_flags(train_cmd, train.cfg);
    train_cmd->add_option("--stage", train.stage, "1: codebook learning, 2: instruction tuning")
        ->check(CLI::IsMember({1, 2}))
        ->capture_default_str();
    train_cmd->add_option("--paradigm", train.paradigm, "frozen | dual | iterative");
    train_cmd->add_option("--data", train.data, "Dataset file or directory (default: generate from config)");
    train_cmd->add_option("--checkpoint", train.checkpoint, "Stage 1 checkpoint (required for stage 2)");
    train_cmd->add_option("--steps", train.steps, "Stage 2 step count (overrides stage2_steps)");
    train_cmd->add_option("--out", train.out, "Output directory (default $UNICB_OUT_ROOT/stage<N>-<paradigm>)");
    train_cmd->add_flag("--force", train.force, "Write into a non-empty output directory");

    EvalFlags ev;
    auto* eval_cmd = app.add_subcommand("eval", "Report reconstruction, LM and decompression metrics");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--data", ev.data, "Dataset file or directory (default: generate from config)");
    eval_cmd->add_option("--out", ev.out, "Directory for report.txt and image dumps");
    eval_cmd->add_option("--dump", ev.dump, "Number of held-out reconstructions to write as PPM");
    eval_cmd->add_option("--segments", ev.segments, "Decompression rounds per image")->capture_default_str();
    eval_cmd->add_flag("--force", ev.force, "Write into a non-empty output directory");

    ReconstructFlags rec;
    auto* rec_cmd = app.add_subcommand("reconstruct", "Write input/reconstruction PPM pairs");
    rec_cmd->add_option("--checkpoint", rec.checkpoint, "Checkpoint to use")->required();
    rec_cmd->add_option("--data", rec.data, "Dataset file or directory (default: generate from config)");
    rec_cmd->add_option("--out", rec.out, "Output directory (default $UNICB_OUT_ROOT/reconstruct)");
    rec_cmd->add_option("--count", rec.count, "Number of held-out images")->capture_default_str();
    rec_cmd->add_option("--resolution", rec.resolution, "Render the scenes at this size (default: training size)");
    rec_cmd->add_flag("--force", rec.force, "Write into a non-empty output directory");

    GenerateFlags genimg;
    auto* generate_cmd = app.add_subcommand("generate", "Generate an image from a caption");
    generate_cmd->add_option("--checkpoint", genimg.checkpoint, "Checkpoint to use")->required();
    generate_cmd->add_option("--caption", genimg.caption, "Caption, e.g. \"red disk on black\"")->required();
    generate_cmd->add_option("--out", genimg.out, "Output PPM path");
    generate_cmd->add_flag("--sample", genimg.sample, "Sample instead of greedy decoding");
    generate_cmd->add_option("--temperature", genimg.temperature, "Sampling temperature")->capture_default_str();
    generate_cmd->add_option("--top-k", genimg.top_k, "Sample among the k most likely tokens (0: all)");
    generate_cmd->add_option("--seed", genimg.seed, "Sampling seed")->capture_default_str();

    DecompressFlags dec;
    auto* dec_cmd = app.add_subcommand("decompress", "Recover a held-out image's code map from its embeddings");
    dec_cmd->add_option("--checkpoint", dec.checkpoint, "Checkpoint to use")->required();
    dec_cmd->add_option("--data", dec.data, "Dataset file or directory (default: generate from config)");
    dec_cmd->add_option("--index", dec.index, "Held-out image index")->capture_default_str();
    dec_cmd->add_option("--segments", dec.segments, "Decompression rounds")->capture_default_str();
    dec_cmd->add_option("--out", dec.out, "Output PPM path");

    CompareFlags cmp;
    auto* cmp_cmd = app.add_subcommand("compare-paradigms", "Tabulate three stage 1 runs");
    cmp_cmd->add_option("--runs", cmp.runs, "Three run directories")->required()->expected(3);
    cmp_cmd->add_option("--out", cmp.out, "Write the table as CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(train);
        if (*eval_cmd) return cmd_eval(ev);
        if (*rec_cmd) return cmd_reconstruct(rec);
        if (*generate_cmd) return cmd_generate(genimg);
        if (*dec_cmd) return cmd_decompress(dec);
        if (*cmp_cmd) return cmd_compare(cmp);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigMismatchError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing: " << e.what() << '\n';
        return kExitMissing;
    } catch (const TrainingAborted& e) {
        std::cerr << "numeric failure at step " << e.step() << ": " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitUsage;
}
