#pragma once

// Tiny decoder-only transformer over the unified vocabulary. The visual-id
// block of its (weight-tied) embedding table is the language side of the
// shared codebook.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unicb/codebook.hpp"
#include "unicb/config.hpp"
#include "unicb/quantizer.hpp"
#include "unicb/tensor.hpp"

namespace unicb {

enum class Special : int { bos = 0, eos, image_start, image_end, user, assistant, generate_image, pad };
inline constexpr int kSpecialCount = 8;

/// Byte-level text ids, then one id per codebook row, then special markers.
class UnifiedVocabulary {
public:
    static constexpr int kTextSize = 256;

    explicit UnifiedVocabulary(std::size_t codes) : codes_(static_cast<int>(codes)) {}

    int size() const { return kTextSize + codes_ + kSpecialCount; }
    int codes() const { return codes_; }
    int visual_begin() const { return kTextSize; }
    int visual_end() const { return kTextSize + codes_; }
    int visual_id(int code) const;
    int code_of(int id) const;
    int special(Special s) const { return kTextSize + codes_ + static_cast<int>(s); }
    bool is_text(int id) const { return id >= 0 && id < kTextSize; }
    bool is_visual(int id) const { return id >= visual_begin() && id < visual_end(); }
    bool is_special(int id) const { return id >= visual_end() && id < size(); }

    std::vector<int> encode_text(std::string_view text) const;
    /// Text ids as bytes; other ids render as <v123> or <name>.
    std::string render(std::span<const int> ids) const;

private:
    int codes_;
};

/// Token ids with a per-position answer mask and optional injected input
/// embeddings. mask[t] marks ids[t] as a prediction target (from position t-1).
struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::uint8_t> loss_mask;
    std::vector<std::size_t> prefix_positions;
    /// prefix_positions.size() × prefix_width values.
    std::vector<double> prefix_values;
    std::size_t prefix_width = 0;

    std::size_t size() const { return ids.size(); }
    std::size_t masked_count() const;
    void push(int id, bool target);
    /// Appends one injected position carrying `values`; the id slot holds `placeholder`.
    void push_embedding(std::span<const double> values, int placeholder);
    /// Throws std::invalid_argument when lengths, ids or mask placement are inconsistent.
    void validate(const UnifiedVocabulary& vocab) const;

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct LmConfig {
    std::size_t codes = 512;
    std::size_t width = 128;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t context = 512;
    std::size_t mlp_mult = 4;
    /// Width of injected prefix embeddings; a learned projection is used when it differs from width.
    std::size_t prefix_width = 128;
    double init_std = 0.0;

    static LmConfig from_experiment(const ExperimentConfig& c, std::size_t prefix_width);
};

struct TransformerBlock {
    TensorPtr ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    TensorPtr ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

class LanguageModel {
public:
    LanguageModel(const LmConfig& config, Rng& rng);

    const LmConfig& config() const { return config_; }
    const UnifiedVocabulary& vocab() const { return vocab_; }

    /// Logits L × V. Records on the active tape when one is set.
    TensorPtr forward(const TokenSequence& seq) const;

    const TensorPtr& token_embedding() const { return tok_emb_; }
    /// The output projection; the same tensor as token_embedding().
    const TensorPtr& output_weight() const { return tok_emb_; }
    const TensorPtr& prefix_projection() const { return prefix_proj_; }

    /// C_L: copy of the visual-id rows of the embedding table.
    Codebook visual_codebook() const;
    /// Overwrites the visual-id rows; used only by the dual paradigm.
    void set_visual_rows(const Codebook& codebook);

    std::vector<TensorPtr> parameters() const;
    std::uint64_t checksum() const;

private:
    LmConfig config_;
    UnifiedVocabulary vocab_;
    TensorPtr tok_emb_;
    TensorPtr pos_emb_;
    std::vector<TransformerBlock> blocks_;
    TensorPtr lnf_g_, lnf_b_;
    TensorPtr prefix_proj_;  // null when prefix_width == width
};

TensorPtr lm_forward(const TokenSequence& seq, const LanguageModel& model);

/// Mean negative log-likelihood over masked positions.
TensorPtr nll_loss(const TensorPtr& logits, const TokenSequence& seq);

struct SamplingConfig {
    bool greedy = true;
    double temperature = 1.0;
    std::size_t top_k = 0;  // 0 → full vocabulary
};

/// Appends up to max_new tokens; stops after EOS or image-end.
TokenSequence generate(const TokenSequence& prompt, const LanguageModel& model,
                       const SamplingConfig& sampling, std::size_t max_new, std::uint64_t seed);

/// Image-decompression sample: T rounds of (user, Ẑ segment as injected
/// embeddings, assistant, segment codes). Only code tokens are targets.
TokenSequence build_decompression_sample(const FeatureMap& aggregated, const CodeMap& codes,
                                         std::size_t segments, const UnifiedVocabulary& vocab);

/// Inverse of build_decompression_sample: reassembles M̂ from the target tokens.
CodeMap extract_decompression_codes(const TokenSequence& seq, std::size_t h, std::size_t w,
                                    std::size_t depth, QuantizerMode mode,
                                    const UnifiedVocabulary& vocab);

struct DecompressResult {
    CodeMap codes;
    std::size_t violations = 0;
};

/// Greedy decoding of ĥ·ŵ·D codes conditioned on Ẑ. Non-visual argmaxes are
/// replaced by the best visual id and counted.
DecompressResult decompress_image(const FeatureMap& aggregated, const LanguageModel& model,
                                  std::size_t depth, QuantizerMode mode, std::size_t segments = 1);

class LmTrainer {
public:
    LmTrainer(LanguageModel& model, AdamConfig adam);

    /// One Adam step on the mean masked NLL of the batch; returns that mean.
    double step(std::span<const TokenSequence> batch);
    /// Visual-id rows receive no update while frozen.
    void set_freeze_visual_rows(bool frozen) { freeze_visual_ = frozen; }

    Adam& optimizer() { return adam_; }
    const Adam& optimizer() const { return adam_; }

private:
    LanguageModel& model_;
    Adam adam_;
    bool freeze_visual_ = false;
};

/// Mean of per-sequence masked NLL, no gradients.
double eval_loss(const LanguageModel& model, std::span<const TokenSequence> samples);

}  // namespace unicb
