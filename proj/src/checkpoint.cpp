#include "unicb/checkpoint.hpp"

#include <cmath>

#include "unicb/hash.hpp"

namespace unicb {

void OptimizerState::capture(const Adam& adam) {
    slots = adam.slots();
    steps = adam.steps();
}

void OptimizerState::apply(Adam& adam) const {
    if (slots.empty()) return;
    auto& dst = adam.slots();
    if (dst.size() != slots.size()) {
        throw ShapeError("optimizer state has " + std::to_string(slots.size()) + " slots, optimizer has " +
                         std::to_string(dst.size()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].m.size() != slots[i].m.size()) throw ShapeError("optimizer slot size mismatch");
        dst[i] = slots[i];
    }
    adam.set_steps(steps);
}

bool operator==(const OptimizerState& a, const OptimizerState& b) {
    if (a.steps != b.steps || a.slots.size() != b.slots.size()) return false;
    for (std::size_t i = 0; i < a.slots.size(); ++i) {
        if (a.slots[i].m != b.slots[i].m || a.slots[i].v != b.slots[i].v) return false;
    }
    return true;
}

TrainingState TrainingState::initialize(const ExperimentConfig& config) {
    config.validate();
    Rng rng(config.seed);
    Tokenizer tokenizer = Tokenizer::from_config(config, rng);
    LanguageModel lm(LmConfig::from_experiment(config, tokenizer.feature_width()), rng);
    Codebook codebook;
    if (config.codebook_init == CodebookInit::random && config.paradigm != Paradigm::frozen) {
        Rng cb_rng(config.seed ^ 0x636f6465626f6f6bULL);
        const double std = config.codebook_init_std > 0.0
                               ? config.codebook_init_std
                               : (config.lm_init_std > 0.0 ? config.lm_init_std
                                                           : 1.0 / std::sqrt(static_cast<double>(config.lm_width)));
        codebook = Codebook::random(config.codes, config.code_dim(), cb_rng, std);
    } else {
        codebook = lm.visual_codebook();
    }
    EmaTracker ema(codebook);
    return TrainingState{config, std::move(codebook), std::move(ema), std::move(tokenizer), std::move(lm),
                         {}, {}, 0, 0};
}

namespace {

void copy_params(const std::vector<TensorPtr>& src, const std::vector<TensorPtr>& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->data = src[i]->data;
}

bool params_equal(const std::vector<TensorPtr>& a, const std::vector<TensorPtr>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->shape != b[i]->shape || a[i]->data != b[i]->data) return false;
    }
    return true;
}

}  // namespace

TrainingState clone(const TrainingState& state) {
    TrainingState out = TrainingState::initialize(state.config);
    copy_params(state.tokenizer.parameters(), out.tokenizer.parameters());
    copy_params(state.lm.parameters(), out.lm.parameters());
    out.codebook = state.codebook;
    out.ema = state.ema;
    out.tok_opt = state.tok_opt;
    out.lm_opt = state.lm_opt;
    out.stage = state.stage;
    out.steps = state.steps;
    return out;
}

bool bit_equal(const TrainingState& a, const TrainingState& b) {
    return a.config == b.config && a.codebook == b.codebook && a.ema.counts() == b.ema.counts() &&
           a.ema.sums() == b.ema.sums() && params_equal(a.tokenizer.parameters(), b.tokenizer.parameters()) &&
           params_equal(a.lm.parameters(), b.lm.parameters()) && a.tok_opt == b.tok_opt &&
           a.lm_opt == b.lm_opt && a.stage == b.stage && a.steps == b.steps;
}

namespace {

Bytes encode_params(const std::vector<TensorPtr>& params) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.u32(static_cast<std::uint32_t>(p->shape.size()));
        for (auto s : p->shape) w.u64(s);
        w.f64s(p->data);
    }
    return w.take();
}

void decode_params(const Bytes& bytes, const std::vector<TensorPtr>& params, const std::string& name) {
    ByteReader r(bytes, name);
    const std::uint32_t count = r.u32();
    if (count != params.size()) {
        throw FormatError(name + ": " + std::to_string(count) + " tensors, model has " +
                          std::to_string(params.size()));
    }
    for (const auto& p : params) {
        std::vector<std::size_t> shape(r.u32());
        for (auto& s : shape) s = r.u64();
        if (shape != p->shape) throw FormatError(name + ": tensor shape does not match the model");
        auto data = r.f64s();
        if (data.size() != p->data.size()) throw FormatError(name + ": tensor size does not match the model");
        p->data = std::move(data);
    }
    r.expect_done();
}

Bytes encode_optimizer(const OptimizerState& opt) {
    ByteWriter w;
    w.i64(opt.steps);
    w.u32(static_cast<std::uint32_t>(opt.slots.size()));
    for (const auto& s : opt.slots) {
        w.f64s(s.m);
        w.f64s(s.v);
    }
    return w.take();
}

OptimizerState decode_optimizer(const Bytes& bytes, const std::string& name) {
    ByteReader r(bytes, name);
    OptimizerState opt;
    opt.steps = r.i64();
    opt.slots.resize(r.u32());
    for (auto& s : opt.slots) {
        s.m = r.f64s();
        s.v = r.f64s();
    }
    r.expect_done();
    return opt;
}

}  // namespace

Bytes encode_checkpoint(const TrainingState& state) {
    Container c;
    c.magic = kCheckpointMagic;
    c.version = kCheckpointVersion;
    c.config_digest = state.config.architecture_digest();
    c.seed = state.config.seed;

    ByteWriter meta;
    meta.u32(state.stage);
    meta.u64(state.steps);
    c.add("meta", meta.take());

    ByteWriter cfg;
    cfg.str(state.config.to_text());
    c.add("config", cfg.take());

    ByteWriter cb;
    cb.u64(state.codebook.size());
    cb.u64(state.codebook.dim());
    cb.u64(state.codebook.version());
    cb.f64s(state.codebook.entries());
    c.add("codebook", cb.take());

    ByteWriter ema;
    ema.f64s(state.ema.counts());
    ema.f64s(state.ema.sums());
    c.add("ema", ema.take());

    c.add("tokenizer", encode_params(state.tokenizer.parameters()));
    c.add("lm", encode_params(state.lm.parameters()));
    c.add("tokenizer_opt", encode_optimizer(state.tok_opt));
    c.add("lm_opt", encode_optimizer(state.lm_opt));
    return encode_container(c);
}

TrainingState decode_checkpoint(std::span<const std::uint8_t> data, const ExperimentConfig* expected) {
    Container c = decode_container(data, kCheckpointMagic, kCheckpointVersion);
    if (expected != nullptr && expected->architecture_digest() != c.config_digest) {
        throw ConfigMismatchError("checkpoint was written for a different model configuration (digest " +
                                  std::to_string(c.config_digest) + ", expected " +
                                  std::to_string(expected->architecture_digest()) + ")");
    }
    ByteReader cfg(c.segment("config"), "config");
    ExperimentConfig config = ExperimentConfig::from_text(cfg.str());
    cfg.expect_done();
    if (config.architecture_digest() != c.config_digest) {
        throw ConfigMismatchError("checkpoint header digest disagrees with its stored configuration");
    }

    TrainingState state = TrainingState::initialize(config);
    ByteReader meta(c.segment("meta"), "meta");
    state.stage = meta.u32();
    state.steps = meta.u64();
    meta.expect_done();

    ByteReader cb(c.segment("codebook"), "codebook");
    const std::uint64_t codes = cb.u64(), dim = cb.u64(), version = cb.u64();
    state.codebook = Codebook(codes, dim, cb.f64s());
    state.codebook.set_version(version);
    cb.expect_done();

    ByteReader ema(c.segment("ema"), "ema");
    auto counts = ema.f64s();
    auto sums = ema.f64s();
    ema.expect_done();
    state.ema.restore(std::move(counts), std::move(sums));

    decode_params(c.segment("tokenizer"), state.tokenizer.parameters(), "tokenizer");
    decode_params(c.segment("lm"), state.lm.parameters(), "lm");
    state.tok_opt = decode_optimizer(c.segment("tokenizer_opt"), "tokenizer_opt");
    state.lm_opt = decode_optimizer(c.segment("lm_opt"), "lm_opt");
    return state;
}

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path) {
    write_file(path, encode_checkpoint(state));
}

TrainingState load_checkpoint(const std::filesystem::path& path, const ExperimentConfig* expected) {
    return decode_checkpoint(read_file(path), expected);
}

std::uint64_t Dataset::digest() const {
    Fnv1a h;
    h.u64(seed);
    h.u64(resolution);
    for (const auto* set : {&train, &heldout}) {
        h.u64(set->size());
        for (const auto& item : *set) {
            h.f64s(item.image.rgb);
            h.text(item.caption);
        }
    }
    return h.digest();
}

Dataset make_dataset(const ExperimentConfig& config) {
    Dataset d;
    d.seed = config.seed;
    d.resolution = config.image_size;
    d.train = gen_images(config.seed, config.train_images, config.image_size);
    d.heldout = gen_images(config.seed ^ 0x68656c646f7574ULL, config.heldout_images, config.image_size);
    return d;
}

namespace {

void write_items(ByteWriter& w, const std::vector<LabeledImage>& items) {
    w.u64(items.size());
    for (const auto& it : items) {
        w.str(it.caption);
        w.u32(static_cast<std::uint32_t>(it.shape.kind));
        w.u32(static_cast<std::uint32_t>(it.shape.color));
        w.u32(static_cast<std::uint32_t>(it.shape.background));
        for (double v : it.shape.rgb) w.f64(v);
        for (double v : it.shape.bg_rgb) w.f64(v);
        w.f64(it.shape.cx);
        w.f64(it.shape.cy);
        w.f64(it.shape.sx);
        w.f64(it.shape.sy);
        w.f64s(it.image.rgb);
    }
}

std::vector<LabeledImage> read_items(ByteReader& r, std::size_t resolution) {
    std::vector<LabeledImage> items(r.u64());
    for (auto& it : items) {
        it.caption = r.str();
        it.shape.kind = static_cast<ShapeKind>(r.u32());
        it.shape.color = static_cast<int>(r.u32());
        it.shape.background = static_cast<int>(r.u32());
        for (double& v : it.shape.rgb) v = r.f64();
        for (double& v : it.shape.bg_rgb) v = r.f64();
        it.shape.cx = r.f64();
        it.shape.cy = r.f64();
        it.shape.sx = r.f64();
        it.shape.sy = r.f64();
        it.image = Image(resolution, resolution);
        it.image.rgb = r.f64s();
        if (it.image.rgb.size() != resolution * resolution * 3) {
            throw FormatError("dataset image has " + std::to_string(it.image.rgb.size()) + " values");
        }
    }
    return items;
}

}  // namespace

Bytes encode_dataset(const Dataset& data) {
    Container c;
    c.magic = kDatasetMagic;
    c.version = kDatasetVersion;
    c.seed = data.seed;
    c.config_digest = data.digest();
    ByteWriter meta;
    meta.u64(data.resolution);
    c.add("meta", meta.take());
    ByteWriter train, heldout;
    write_items(train, data.train);
    write_items(heldout, data.heldout);
    c.add("train", train.take());
    c.add("heldout", heldout.take());
    return encode_container(c);
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
    Container c = decode_container(bytes, kDatasetMagic, kDatasetVersion);
    Dataset d;
    d.seed = c.seed;
    ByteReader meta(c.segment("meta"), "meta");
    d.resolution = meta.u64();
    meta.expect_done();
    ByteReader train(c.segment("train"), "train");
    d.train = read_items(train, d.resolution);
    train.expect_done();
    ByteReader heldout(c.segment("heldout"), "heldout");
    d.heldout = read_items(heldout, d.resolution);
    heldout.expect_done();
    if (d.digest() != c.config_digest) throw ChecksumError("header", "dataset digest mismatch");
    return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    write_file(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

std::vector<Image> images_of(const std::vector<LabeledImage>& items) {
    std::vector<Image> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.image);
    return out;
}

}  // namespace unicb
