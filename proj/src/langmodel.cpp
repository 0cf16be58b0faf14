#include "unicb/langmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "unicb/hash.hpp"

namespace unicb {

// ---- vocabulary ----------------------------------------------------------------

int UnifiedVocabulary::visual_id(int code) const {
    if (code < 0 || code >= codes_) {
        throw std::out_of_range("visual code " + std::to_string(code) + " outside [0, " +
                                std::to_string(codes_) + ")");
    }
    return kTextSize + code;
}

int UnifiedVocabulary::code_of(int id) const {
    if (!is_visual(id)) throw std::out_of_range("id " + std::to_string(id) + " is not a visual token");
    return id - kTextSize;
}

std::vector<int> UnifiedVocabulary::encode_text(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
}

std::string UnifiedVocabulary::render(std::span<const int> ids) const {
    static constexpr const char* names[kSpecialCount] = {"<bos>",  "<eos>",       "<img>",       "</img>",
                                                         "<user>", "<assistant>", "<gen-image>", "<pad>"};
    std::string out;
    for (int id : ids) {
        if (is_text(id)) {
            out.push_back(static_cast<char>(id));
        } else if (is_visual(id)) {
            out += "<v" + std::to_string(code_of(id)) + ">";
        } else if (is_special(id)) {
            out += names[id - visual_end()];
        } else {
            out += "<?>";
        }
    }
    return out;
}

// ---- TokenSequence ---------------------------------------------------------------

std::size_t TokenSequence::masked_count() const {
    return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

void TokenSequence::push(int id, bool target) {
    ids.push_back(id);
    loss_mask.push_back(target ? 1 : 0);
}

void TokenSequence::push_embedding(std::span<const double> values, int placeholder) {
    if (prefix_width == 0) prefix_width = values.size();
    if (values.size() != prefix_width) {
        throw ShapeError("injected embedding of width " + std::to_string(values.size()) +
                         " into a sequence of prefix width " + std::to_string(prefix_width));
    }
    prefix_positions.push_back(ids.size());
    prefix_values.insert(prefix_values.end(), values.begin(), values.end());
    push(placeholder, false);
}

void TokenSequence::validate(const UnifiedVocabulary& vocab) const {
    if (ids.size() != loss_mask.size()) {
        throw std::invalid_argument("token sequence: " + std::to_string(ids.size()) + " ids but " +
                                    std::to_string(loss_mask.size()) + " mask entries");
    }
    for (int id : ids) {
        if (id < 0 || id >= vocab.size()) {
            throw std::invalid_argument("token sequence: id " + std::to_string(id) + " outside vocabulary");
        }
    }
    if (!loss_mask.empty() && loss_mask[0]) {
        throw std::invalid_argument("token sequence: the first position cannot be a target");
    }
    if (prefix_values.size() != prefix_positions.size() * prefix_width) {
        throw std::invalid_argument("token sequence: injected embedding values do not match positions");
    }
    for (auto p : prefix_positions) {
        if (p >= ids.size()) throw std::invalid_argument("token sequence: injected position out of range");
        if (loss_mask[p]) throw std::invalid_argument("token sequence: injected position marked as target");
    }
}

// ---- model -----------------------------------------------------------------------

LmConfig LmConfig::from_experiment(const ExperimentConfig& c, std::size_t prefix_width) {
    LmConfig lm;
    lm.codes = c.codes;
    lm.width = c.lm_width;
    lm.layers = c.lm_layers;
    lm.heads = c.lm_heads;
    lm.context = c.lm_context;
    lm.mlp_mult = c.lm_mlp_mult;
    lm.prefix_width = prefix_width;
    lm.init_std = c.lm_init_std;
    return lm;
}

LanguageModel::LanguageModel(const LmConfig& config, Rng& rng)
    : config_(config), vocab_(config.codes) {
    const std::size_t d = config.width, V = static_cast<std::size_t>(vocab_.size());
    if (config.heads == 0 || d % config.heads != 0) {
        throw ShapeError("language model width " + std::to_string(d) + " not divisible by " +
                         std::to_string(config.heads) + " heads");
    }
    const double emb_std = config.init_std > 0.0 ? config.init_std : 1.0 / std::sqrt(static_cast<double>(d));
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double resid_std = w_std / std::sqrt(2.0 * static_cast<double>(config.layers));
    const std::size_t hidden = d * config.mlp_mult;
    tok_emb_ = randn({V, d}, rng, emb_std, true);
    pos_emb_ = randn({config.context, d}, rng, 0.1 * emb_std, true);
    for (std::size_t l = 0; l < config.layers; ++l) {
        TransformerBlock b;
        b.ln1_g = full({d}, 1.0, true);
        b.ln1_b = zeros({d}, true);
        b.w_qkv = randn({d, 3 * d}, rng, w_std, true);
        b.b_qkv = zeros({3 * d}, true);
        b.w_o = randn({d, d}, rng, resid_std, true);
        b.b_o = zeros({d}, true);
        b.ln2_g = full({d}, 1.0, true);
        b.ln2_b = zeros({d}, true);
        b.w_fc = randn({d, hidden}, rng, w_std, true);
        b.b_fc = zeros({hidden}, true);
        b.w_proj = randn({hidden, d}, rng, resid_std / std::sqrt(static_cast<double>(config.mlp_mult)), true);
        b.b_proj = zeros({d}, true);
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = full({d}, 1.0, true);
    lnf_b_ = zeros({d}, true);
    if (config.prefix_width != d) {
        prefix_proj_ = randn({config.prefix_width, d}, rng,
                             1.0 / std::sqrt(static_cast<double>(config.prefix_width)), true);
    }
}

std::vector<TensorPtr> LanguageModel::parameters() const {
    std::vector<TensorPtr> ps{tok_emb_, pos_emb_};
    for (const auto& b : blocks_) {
        for (const auto& p : {b.ln1_g, b.ln1_b, b.w_qkv, b.b_qkv, b.w_o, b.b_o, b.ln2_g, b.ln2_b, b.w_fc,
                              b.b_fc, b.w_proj, b.b_proj}) {
            ps.push_back(p);
        }
    }
    ps.push_back(lnf_g_);
    ps.push_back(lnf_b_);
    if (prefix_proj_) ps.push_back(prefix_proj_);
    return ps;
}

std::uint64_t LanguageModel::checksum() const {
    Fnv1a h;
    for (const auto& p : parameters()) h.f64s(p->data);
    return h.digest();
}

Codebook LanguageModel::visual_codebook() const {
    const std::size_t d = config_.width;
    const auto begin = tok_emb_->data.begin() + static_cast<long>(vocab_.visual_begin() * d);
    return Codebook(config_.codes, d, std::vector<double>(begin, begin + static_cast<long>(config_.codes * d)));
}

void LanguageModel::set_visual_rows(const Codebook& codebook) {
    if (codebook.size() != config_.codes || codebook.dim() != config_.width) {
        throw ShapeError("set_visual_rows: codebook shape does not match the embedding block");
    }
    std::copy(codebook.entries().begin(), codebook.entries().end(),
              tok_emb_->data.begin() + static_cast<long>(vocab_.visual_begin() * config_.width));
}

TensorPtr LanguageModel::forward(const TokenSequence& seq) const {
    if (seq.ids.empty()) throw std::invalid_argument("lm_forward: empty sequence");
    if (seq.size() > config_.context) {
        throw std::length_error("lm_forward: sequence of length " + std::to_string(seq.size()) +
                                " exceeds context " + std::to_string(config_.context));
    }
    seq.validate(vocab_);
    if (!seq.prefix_positions.empty() && seq.prefix_width != config_.prefix_width) {
        throw ShapeError("lm_forward: injected embeddings of width " + std::to_string(seq.prefix_width) +
                         " but the model expects " + std::to_string(config_.prefix_width));
    }
    const std::size_t len = seq.size();
    auto x = embedding(tok_emb_, seq.ids);
    if (!seq.prefix_positions.empty()) {
        auto inj = make_tensor({seq.prefix_positions.size(), seq.prefix_width}, seq.prefix_values);
        if (prefix_proj_) inj = matmul(inj, prefix_proj_);
        x = replace_rows(x, seq.prefix_positions, inj);
    }
    std::vector<int> positions(len);
    std::iota(positions.begin(), positions.end(), 0);
    x = add(x, embedding(pos_emb_, positions));
    for (const auto& b : blocks_) {
        auto a = layernorm_rows(x, b.ln1_g, b.ln1_b);
        auto qkv = add_row(matmul(a, b.w_qkv), b.b_qkv);
        auto att = causal_attention(qkv, config_.heads);
        x = add(x, add_row(matmul(att, b.w_o), b.b_o));
        auto m = layernorm_rows(x, b.ln2_g, b.ln2_b);
        auto h = gelu(add_row(matmul(m, b.w_fc), b.b_fc));
        x = add(x, add_row(matmul(h, b.w_proj), b.b_proj));
    }
    x = layernorm_rows(x, lnf_g_, lnf_b_);
    return matmul_nt(x, tok_emb_);
}

TensorPtr lm_forward(const TokenSequence& seq, const LanguageModel& model) {
    return model.forward(seq);
}

TensorPtr nll_loss(const TensorPtr& logits, const TokenSequence& seq) {
    if (logits->rows() != seq.size() || logits->shape.size() != 2) {
        throw ShapeError("nll_loss: logits " + shape_str(logits->shape) + " for a sequence of length " +
                         std::to_string(seq.size()));
    }
    std::vector<int> targets(seq.size(), -1);
    bool any = false;
    for (std::size_t t = 1; t < seq.size(); ++t) {
        if (seq.loss_mask[t]) {
            targets[t - 1] = seq.ids[t];
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("nll_loss: loss mask has no target positions");
    return cross_entropy_rows(logits, targets);
}

// ---- generation ---------------------------------------------------------------------

namespace {

TokenSequence truncated(const TokenSequence& seq, std::size_t len) {
    TokenSequence out;
    out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<long>(len));
    out.loss_mask.assign(len, 0);
    out.prefix_width = seq.prefix_width;
    for (std::size_t i = 0; i < seq.prefix_positions.size(); ++i) {
        if (seq.prefix_positions[i] >= len) continue;
        out.prefix_positions.push_back(seq.prefix_positions[i]);
        auto row = std::span(seq.prefix_values).subspan(i * seq.prefix_width, seq.prefix_width);
        out.prefix_values.insert(out.prefix_values.end(), row.begin(), row.end());
    }
    return out;
}

std::vector<double> last_logits(const LanguageModel& model, const TokenSequence& seq) {
    NoGradScope no_grad;
    auto logits = model.forward(seq);
    auto row = logits->row(logits->rows() - 1);
    return {row.begin(), row.end()};
}

int argmax(std::span<const double> v, std::size_t begin, std::size_t end) {
    std::size_t best = begin;
    for (std::size_t i = begin + 1; i < end; ++i) {
        if (v[i] > v[best]) best = i;
    }
    return static_cast<int>(best);
}

int sample_token(std::span<const double> logits, const SamplingConfig& s, Rng& rng) {
    if (s.greedy || s.temperature <= 0.0) return argmax(logits, 0, logits.size());
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
    const std::size_t k = s.top_k == 0 ? order.size() : std::min(s.top_k, order.size());
    std::vector<double> p(k);
    const double mx = logits[order[0]];
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp((logits[order[i]] - mx) / s.temperature);
        z += p[i];
    }
    double u = rng.uniform() * z;
    for (std::size_t i = 0; i < k; ++i) {
        u -= p[i];
        if (u < 0.0) return order[i];
    }
    return order[k - 1];
}

}  // namespace

TokenSequence generate(const TokenSequence& prompt, const LanguageModel& model,
                       const SamplingConfig& sampling, std::size_t max_new, std::uint64_t seed) {
    const auto& vocab = model.vocab();
    prompt.validate(vocab);
    if (prompt.size() > model.config().context) {
        throw std::length_error("generate: prompt longer than the context");
    }
    TokenSequence seq = prompt;
    Rng rng(seed);
    const int eos = vocab.special(Special::eos), img_end = vocab.special(Special::image_end);
    for (std::size_t i = 0; i < max_new && seq.size() < model.config().context; ++i) {
        auto logits = last_logits(model, seq);
        const int id = sample_token(logits, sampling, rng);
        seq.push(id, false);
        if (id == eos || id == img_end) break;
    }
    return seq;
}

// ---- decompression samples ------------------------------------------------------------

TokenSequence build_decompression_sample(const FeatureMap& aggregated, const CodeMap& codes,
                                         std::size_t segments, const UnifiedVocabulary& vocab) {
    const std::size_t cells = codes.cells();
    if (aggregated.cells() != cells) {
        throw ShapeError("decompression sample: feature map and code map cover different grids");
    }
    if (segments == 0 || cells % segments != 0) {
        throw std::invalid_argument("decompression sample: " + std::to_string(segments) +
                                    " segments do not divide " + std::to_string(cells) + " cells");
    }
    const std::size_t per = cells / segments;
    TokenSequence seq;
    seq.prefix_width = aggregated.dim;
    seq.push(vocab.special(Special::bos), false);
    for (std::size_t t = 0; t < segments; ++t) {
        seq.push(vocab.special(Special::user), false);
        for (std::size_t c = t * per; c < (t + 1) * per; ++c) {
            seq.push_embedding(aggregated.cell(c), vocab.special(Special::pad));
        }
        seq.push(vocab.special(Special::assistant), false);
        for (std::size_t c = t * per; c < (t + 1) * per; ++c) {
            for (std::size_t d = 0; d < codes.depth; ++d) {
                seq.push(vocab.visual_id(codes.indices[c * codes.depth + d]), true);
            }
        }
    }
    return seq;
}

CodeMap extract_decompression_codes(const TokenSequence& seq, std::size_t h, std::size_t w,
                                    std::size_t depth, QuantizerMode mode,
                                    const UnifiedVocabulary& vocab) {
    CodeMap out{h, w, depth, mode, {}};
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq.loss_mask[t]) out.indices.push_back(vocab.code_of(seq.ids[t]));
    }
    if (out.indices.size() != h * w * depth) {
        throw std::invalid_argument("decompression sample holds " + std::to_string(out.indices.size()) +
                                    " targets, expected " + std::to_string(h * w * depth));
    }
    return out;
}

DecompressResult decompress_image(const FeatureMap& aggregated, const LanguageModel& model,
                                  std::size_t depth, QuantizerMode mode, std::size_t segments) {
    const auto& vocab = model.vocab();
    CodeMap placeholder{aggregated.h, aggregated.w, depth, mode,
                        std::vector<int>(aggregated.cells() * depth, 0)};
    TokenSequence seq = build_decompression_sample(aggregated, placeholder, segments, vocab);
    DecompressResult result;
    for (std::size_t pos = 0; pos < seq.size(); ++pos) {
        if (!seq.loss_mask[pos]) continue;
        auto logits = last_logits(model, truncated(seq, pos));
        int id = argmax(logits, 0, logits.size());
        if (!vocab.is_visual(id)) {
            ++result.violations;
            id = argmax(logits, static_cast<std::size_t>(vocab.visual_begin()),
                        static_cast<std::size_t>(vocab.visual_end()));
        }
        seq.ids[pos] = id;
    }
    result.codes = extract_decompression_codes(seq, aggregated.h, aggregated.w, depth, mode, vocab);
    return result;
}

// ---- training -----------------------------------------------------------------------------

LmTrainer::LmTrainer(LanguageModel& model, AdamConfig adam)
    : model_(model), adam_(model.parameters(), adam) {}

double LmTrainer::step(std::span<const TokenSequence> batch) {
    if (batch.empty()) throw std::invalid_argument("LmTrainer::step: empty batch");
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto& seq : batch) {
        Tape tape;
        TapeScope scope(tape);
        auto loss = nll_loss(model_.forward(seq), seq);
        const double v = loss->data[0];
        if (!std::isfinite(v)) throw NumericError("language model loss is not finite");
        total += v;
        backward(scale(loss, inv));
    }
    std::optional<Codebook> frozen;
    if (freeze_visual_) frozen = model_.visual_codebook();
    adam_.step();
    if (frozen) model_.set_visual_rows(*frozen);
    return total * inv;
}

double eval_loss(const LanguageModel& model, std::span<const TokenSequence> samples) {
    if (samples.empty()) throw std::invalid_argument("eval_loss: no samples");
    NoGradScope no_grad;
    double total = 0.0;
    for (const auto& seq : samples) total += nll_loss(model.forward(seq), seq)->data[0];
    return total / static_cast<double>(samples.size());
}

}  // namespace unicb
