#include "unicb/paradigms.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>

namespace unicb {

double codebook_distance(const Codebook& a, const Codebook& b) {
    if (a.size() != b.size() || a.dim() != b.dim()) {
        throw ShapeError("codebook_distance: " + std::to_string(a.size()) + "x" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.size()) + "x" + std::to_string(b.dim()));
    }
    return frobenius_distance(a, b);
}

std::string metrics_csv_header() { return "step,mse,lm_loss,codebook_distance,utilization\n"; }

std::string metrics_csv_row(const StepRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(row.step), row.mse, row.lm_loss, row.codebook_distance,
                  row.utilization);
    return buf;
}

std::string metrics_csv(const StageMetrics& metrics) {
    std::string out = metrics_csv_header();
    for (const auto& r : metrics.rows) out += metrics_csv_row(r);
    return out;
}

namespace {

constexpr std::size_t kHeldoutText = 128;

// Fraction of codes hit at least once in the last `window` tokenizer steps.
class UsageWindow {
public:
    UsageWindow(std::size_t codes, std::size_t window) : counts_(codes, 0), window_(window) {}

    void push(std::vector<int> assignments) {
        for (int k : assignments) {
            if (counts_[static_cast<std::size_t>(k)]++ == 0) ++used_;
        }
        history_.push_back(std::move(assignments));
        while (history_.size() > window_) {
            for (int k : history_.front()) {
                if (--counts_[static_cast<std::size_t>(k)] == 0) --used_;
            }
            history_.pop_front();
        }
    }
    double utilization() const { return static_cast<double>(used_) / static_cast<double>(counts_.size()); }

private:
    std::vector<std::size_t> counts_;
    std::size_t window_;
    std::size_t used_ = 0;
    std::deque<std::vector<int>> history_;
};

template <typename T>
std::vector<T> sample_batch(const std::vector<T>& pool, std::size_t n, Rng& rng) {
    std::vector<T> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.below(pool.size())]);
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<TokenSequence> heldout_text(const ExperimentConfig& config, const UnifiedVocabulary& vocab) {
    return gen_text_corpus(config.seed ^ 0x5eed0f7e57ULL, kHeldoutText, vocab);
}

StageMetrics run_stage1(TrainingState& state, const Dataset& data, const StepCallback& on_step) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig& cfg = state.config;
    cfg.validate();
    if (data.train.empty() || data.heldout.empty()) throw std::invalid_argument("stage 1: empty dataset");
    if (data.resolution % cfg.patch != 0) {
        throw std::invalid_argument("stage 1: resolution " + std::to_string(data.resolution) +
                                    " is not a multiple of patch " + std::to_string(cfg.patch));
    }

    const auto& vocab = state.lm.vocab();
    const auto train_images = images_of(data.train);
    const auto heldout_images = images_of(data.heldout);
    const auto text = gen_text_corpus(cfg.seed, cfg.text_samples, vocab);
    const auto text_eval = heldout_text(cfg, vocab);
    Rng rng(cfg.seed ^ 0x737461676531ULL);

    TokenizerTrainer tok_trainer(state.tokenizer, AdamConfig{cfg.tok_lr, 0.9, 0.999, 1e-8, 0.0});
    state.tok_opt.apply(tok_trainer.optimizer());
    LmTrainer lm_trainer(state.lm, AdamConfig{cfg.lm_lr, 0.9, 0.999, 1e-8, cfg.lm_clip});
    state.lm_opt.apply(lm_trainer.optimizer());

    const Paradigm paradigm = cfg.paradigm;
    if (paradigm == Paradigm::frozen) {
        state.codebook = state.lm.visual_codebook();
        state.ema.rebase(state.codebook);
    }
    lm_trainer.set_freeze_visual_rows(paradigm == Paradigm::frozen);

    TokenizerStepOptions tok_opts;
    tok_opts.beta = cfg.beta;
    tok_opts.ema_decay = cfg.ema_decay;
    tok_opts.ema_mode = cfg.ema_mode;
    tok_opts.update_codebook = paradigm != Paradigm::frozen && cfg.ema_enabled;
    tok_opts.update_weights = !cfg.freeze_tokenizer;

    StageMetrics m;
    m.initial_eval_mse = reconstruct_eval(state.tokenizer, heldout_images, state.codebook).mse;
    m.initial_text_loss = eval_loss(state.lm, text_eval);
    m.initial_distance = codebook_distance(state.codebook, state.lm.visual_codebook());

    UsageWindow usage(cfg.codes, cfg.util_window);
    double last_mse = m.initial_eval_mse;
    double last_lm = m.initial_text_loss;
    std::uint64_t step = 0;
    std::uint64_t tok_steps = 0;

    auto emit = [&] {
        StepRow row{step, last_mse, last_lm, codebook_distance(state.codebook, state.lm.visual_codebook()),
                    usage.utilization()};
        m.rows.push_back(row);
        if (on_step) on_step(row);
    };
    // Direct replacement of the LM's visual rows, measured as non-gradient drift.
    auto overwrite_lm_rows = [&](double& round_drift) {
        const Codebook before = state.lm.visual_codebook();
        state.lm.set_visual_rows(state.codebook);
        const double d = codebook_distance(before, state.codebook);
        round_drift += d;
        m.non_gradient_drift += d;
    };
    auto take_lm_rows = [&] {
        state.codebook.assign(state.lm.visual_codebook().entries());
        state.ema.rebase(state.codebook);
    };

    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        double round_drift = 0.0;
        const bool dual = paradigm == Paradigm::dual;
        const bool per_step = cfg.dual_swap == DualSwap::step;

        if (dual && !per_step) take_lm_rows();
        for (std::size_t i = 0; i < cfg.tok_steps_per_round; ++i) {
            ++step;
            if (dual && per_step) take_lm_rows();
            const auto batch = sample_batch(train_images, cfg.tok_batch, rng);
            try {
                auto rec = tok_trainer.step(batch, state.codebook, state.ema, tok_opts);
                last_mse = rec.recon_mse;
                usage.push(std::move(rec.assignments));
            } catch (const NumericError& e) {
                throw TrainingAborted(step, e.what());
            }
            ++tok_steps;
            if (paradigm == Paradigm::iterative && tok_steps % cfg.sync_interval == 0) {
                state.codebook = sync_update(state.codebook, state.lm.visual_codebook(), cfg.sync_decay);
                state.ema.rebase(state.codebook);
                m.sync_distances.push_back(codebook_distance(state.codebook, state.lm.visual_codebook()));
            }
            emit();
        }

        if (dual && !per_step) overwrite_lm_rows(round_drift);
        for (std::size_t i = 0; i < cfg.lm_steps_per_round; ++i) {
            ++step;
            if (dual && per_step) overwrite_lm_rows(round_drift);
            const auto batch = sample_batch(text, cfg.lm_batch, rng);
            try {
                last_lm = cfg.freeze_lm ? eval_loss(state.lm, batch) : lm_trainer.step(batch);
            } catch (const NumericError& e) {
                throw TrainingAborted(step, e.what());
            }
            emit();
        }
        m.drift_per_round.push_back(round_drift);
    }

    m.final_eval_mse = reconstruct_eval(state.tokenizer, heldout_images, state.codebook).mse;
    m.final_text_loss = eval_loss(state.lm, text_eval);
    m.final_distance = codebook_distance(state.codebook, state.lm.visual_codebook());
    m.final_utilization = usage.utilization();
    state.tok_opt.capture(tok_trainer.optimizer());
    state.lm_opt.capture(lm_trainer.optimizer());
    state.stage = 1;
    state.steps = step;
    m.wall_seconds = seconds_since(t0);
    return m;
}

std::vector<TrainingSample> build_instruction_corpus(const TrainingState& state,
                                                     std::span<const LabeledImage> images,
                                                     std::uint64_t seed) {
    const auto& cfg = state.config;
    const auto& vocab = state.lm.vocab();
    Rng rng(seed ^ 0x696e737472756374ULL);
    std::vector<TrainingSample> out;
    for (const auto& item : images) {
        const auto z = state.tokenizer.encode(item.image);
        const auto sq = quantize_stacked(z, state.codebook, cfg.depth, cfg.quantizer);
        const auto q = static_cast<QuestionKind>(rng.below(3));
        out.push_back({SampleKind::vqa,
                       to_token_sequence(make_vqa_sample(sq.aggregated, item.shape, q, vocab), vocab)});
        out.push_back({SampleKind::text_to_image,
                       to_token_sequence(make_text_to_image_sample(sq.codes, item.caption, vocab, cfg.lm_context),
                                         vocab)});
        out.push_back({SampleKind::decompression, build_decompression_sample(sq.aggregated, sq.codes, 1, vocab)});
        if (cfg.decompression_segments > 1) {
            out.push_back({SampleKind::decompression,
                           build_decompression_sample(sq.aggregated, sq.codes, cfg.decompression_segments, vocab)});
        }
    }
    for (const auto& s : out) {
        if (s.sequence.size() > cfg.lm_context) {
            throw std::length_error(std::string(to_string(s.kind)) + " sample of " +
                                    std::to_string(s.sequence.size()) + " tokens exceeds context " +
                                    std::to_string(cfg.lm_context));
        }
    }
    return out;
}

void require_kinds(std::span<const TrainingSample> corpus, std::span<const SampleKind> kinds) {
    for (auto k : kinds) {
        bool found = false;
        for (const auto& s : corpus) found = found || s.kind == k;
        if (!found) {
            throw std::invalid_argument("instruction corpus has no " + std::string(to_string(k)) + " samples");
        }
    }
}

namespace {

std::vector<TokenSequence> sequences_of(const std::vector<TrainingSample>& samples) {
    std::vector<TokenSequence> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.sequence);
    return out;
}

}  // namespace

Stage2Result run_stage2(TrainingState& state, const Dataset& data, std::size_t steps, const StepCallback& on_step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = state.config;
    constexpr SampleKind required[] = {SampleKind::vqa, SampleKind::text_to_image, SampleKind::decompression};

    const auto train_samples = build_instruction_corpus(state, data.train, cfg.seed);
    require_kinds(train_samples, required);
    const auto corpus = sequences_of(train_samples);
    const auto heldout = sequences_of(build_instruction_corpus(state, data.heldout, cfg.seed + 1));

    Stage2Result result;
    result.initial_heldout_loss = eval_loss(state.lm, heldout);
    if (steps == 0) {
        result.final_heldout_loss = result.initial_heldout_loss;
        return result;
    }

    const auto heldout_images = images_of(data.heldout);
    const auto recon = reconstruct_eval(state.tokenizer, heldout_images, state.codebook);
    const Codebook codebook_before = state.codebook;

    LmTrainer trainer(state.lm, AdamConfig{cfg.stage2_lr, 0.9, 0.999, 1e-8, cfg.lm_clip});
    Rng rng(cfg.seed ^ 0x737461676532ULL);
    auto& m = result.metrics;
    m.initial_eval_mse = m.final_eval_mse = recon.mse;
    m.initial_distance = codebook_distance(state.codebook, state.lm.visual_codebook());
    for (std::size_t i = 1; i <= steps; ++i) {
        const auto batch = sample_batch(corpus, cfg.lm_batch, rng);
        double loss = 0.0;
        try {
            loss = trainer.step(batch);
        } catch (const NumericError& e) {
            throw TrainingAborted(i, e.what());
        }
        StepRow row{i, recon.mse, loss, codebook_distance(state.codebook, state.lm.visual_codebook()),
                    recon.utilization};
        m.rows.push_back(row);
        if (on_step) on_step(row);
    }
    if (!(state.codebook == codebook_before)) throw std::logic_error("stage 2 modified the tokenizer codebook");

    result.final_heldout_loss = eval_loss(state.lm, heldout);
    m.final_distance = codebook_distance(state.codebook, state.lm.visual_codebook());
    m.final_utilization = recon.utilization;
    state.lm_opt.capture(trainer.optimizer());
    state.stage = 2;
    state.steps = steps;
    m.wall_seconds = seconds_since(t0);
    return result;
}

DecompressionReport evaluate_decompression(const TrainingState& state, std::span<const LabeledImage> images,
                                           std::size_t segments) {
    const auto& cfg = state.config;
    DecompressionReport r;
    std::size_t tokens = 0, hits = 0, maps = 0;
    for (const auto& item : images) {
        const auto z = state.tokenizer.encode(item.image);
        const auto sq = quantize_stacked(z, state.codebook, cfg.depth, cfg.quantizer);
        const auto got = decompress_image(sq.aggregated, state.lm, cfg.depth, cfg.quantizer, segments);
        r.violations += got.violations;
        bool all = true;
        for (std::size_t i = 0; i < sq.codes.indices.size(); ++i) {
            const bool hit = got.codes.indices[i] == sq.codes.indices[i];
            hits += hit ? 1 : 0;
            all = all && hit;
        }
        tokens += sq.codes.indices.size();
        maps += all ? 1 : 0;
        ++r.images;
    }
    if (r.images > 0) {
        r.exact_token_rate = static_cast<double>(hits) / static_cast<double>(tokens);
        r.exact_map_rate = static_cast<double>(maps) / static_cast<double>(r.images);
    }
    return r;
}

}  // namespace unicb
