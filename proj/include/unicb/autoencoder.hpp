#pragma once

// Patch-MLP visual tokenizer: the encoder maps each non-overlapping patch to a
// feature vector, the decoder maps an aggregated quantized vector back to the
// patch's pixels. Quantization sits between them with a straight-through
// gradient; the codebook itself is only ever changed by the EMA/sync rules.

#include <cstdint>
#include <span>
#include <vector>

#include "unicb/codebook.hpp"
#include "unicb/config.hpp"
#include "unicb/image.hpp"
#include "unicb/quantizer.hpp"
#include "unicb/tensor.hpp"

namespace unicb {

struct AutoencoderParams {
    TensorPtr enc_w1, enc_b1, enc_w2, enc_b2;
    TensorPtr dec_w1, dec_b1, dec_w2, dec_b2;

    std::vector<TensorPtr> all() const {
        return {enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2};
    }
};

class Tokenizer {
public:
    Tokenizer(std::size_t patch, std::size_t code_dim, std::size_t depth, QuantizerMode mode,
              std::size_t hidden, Rng& rng);
    static Tokenizer from_config(const ExperimentConfig& config, Rng& rng);

    std::size_t patch() const { return patch_; }
    std::size_t code_dim() const { return code_dim_; }
    std::size_t depth() const { return depth_; }
    QuantizerMode mode() const { return mode_; }
    /// Per-cell width of encoder output and decoder input.
    std::size_t feature_width() const { return encoder_width(mode_, code_dim_, depth_); }
    std::size_t patch_width() const { return patch_ * patch_ * 3; }

    FeatureMap encode(const Image& image) const;
    Image decode(const FeatureMap& quantized) const;

    /// Differentiable paths over stacked patch rows (cells × patch_width).
    TensorPtr encode_rows(const TensorPtr& patches) const;
    TensorPtr decode_rows(const TensorPtr& features) const;

    const AutoencoderParams& params() const { return params_; }
    std::vector<TensorPtr> parameters() const { return params_.all(); }
    std::uint64_t checksum() const;

private:
    std::size_t patch_, code_dim_, depth_;
    QuantizerMode mode_;
    AutoencoderParams params_;
};

struct TokenizerStepOptions {
    double beta = 0.25;
    double ema_decay = 0.99;
    EmaMode ema_mode = EmaMode::normalized;
    bool update_codebook = true;
    bool update_weights = true;
};

struct TokenizerStepRecord {
    double loss = 0.0;
    double recon_mse = 0.0;
    double commitment = 0.0;
    /// Codes chosen in this step, every layer of every cell.
    std::vector<int> assignments;
};

class TokenizerTrainer {
public:
    TokenizerTrainer(Tokenizer& tokenizer, AdamConfig adam);

    /// One reconstruction step: encode, stacked-quantize, decode through the
    /// straight-through estimator, Adam on encoder/decoder, then EMA on the codebook.
    TokenizerStepRecord step(std::span<const Image> batch, Codebook& codebook, EmaTracker& ema,
                             const TokenizerStepOptions& options);

    Adam& optimizer() { return adam_; }
    const Adam& optimizer() const { return adam_; }

private:
    Tokenizer& tokenizer_;
    Adam adam_;
};

/// Loss pieces for a batch without touching any state. Gradients land in the
/// tokenizer params and in `features_out` when a tape is active.
struct TokenizerLoss {
    TensorPtr loss;
    TensorPtr features;   // encoder output Z0
    TensorPtr quantized;  // aggregated Ẑ (constant)
    TensorPtr passthrough;
    double recon_mse = 0.0;
    double commitment = 0.0;
    std::vector<StackedQuantization> per_image;
};

TokenizerLoss tokenizer_loss(const Tokenizer& tokenizer, std::span<const Image> batch,
                             const Codebook& codebook, double beta);

struct ReconstructionMetrics {
    double mse = 0.0;
    double psnr = 0.0;
    double utilization = 0.0;
    double entropy_bits = 0.0;
};

Image reconstruct(const Tokenizer& tokenizer, const Image& image, const Codebook& codebook);
ReconstructionMetrics reconstruct_eval(const Tokenizer& tokenizer, std::span<const Image> images,
                                       const Codebook& codebook);

}  // namespace unicb
