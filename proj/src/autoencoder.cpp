#include "unicb/autoencoder.hpp"

#include <cmath>
#include <string>

#include "unicb/hash.hpp"

namespace unicb {

namespace {

TensorPtr linear_weight(std::size_t in, std::size_t out, Rng& rng) {
    return randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true);
}

TensorPtr bias(std::size_t n) {
    return zeros({n}, true);
}

}  // namespace

Tokenizer::Tokenizer(std::size_t patch, std::size_t code_dim, std::size_t depth, QuantizerMode mode,
                     std::size_t hidden, Rng& rng)
    : patch_(patch), code_dim_(code_dim), depth_(depth), mode_(mode) {
    if (patch == 0 || code_dim == 0 || hidden == 0) throw ShapeError("tokenizer: zero-sized dimension");
    if (depth == 0) throw std::invalid_argument("tokenizer: depth must be >= 1");
    if (mode == QuantizerMode::vq && depth != 1) {
        throw std::invalid_argument("tokenizer: VQ mode requires depth 1");
    }
    const std::size_t pw = patch_width(), fw = feature_width();
    params_.enc_w1 = linear_weight(pw, hidden, rng);
    params_.enc_b1 = bias(hidden);
    params_.enc_w2 = linear_weight(hidden, fw, rng);
    params_.enc_b2 = bias(fw);
    params_.dec_w1 = linear_weight(fw, hidden, rng);
    params_.dec_b1 = bias(hidden);
    params_.dec_w2 = linear_weight(hidden, pw, rng);
    params_.dec_b2 = bias(pw);
}

Tokenizer Tokenizer::from_config(const ExperimentConfig& config, Rng& rng) {
    return Tokenizer(config.patch, config.code_dim(), config.depth, config.quantizer,
                     config.enc_hidden, rng);
}

TensorPtr Tokenizer::encode_rows(const TensorPtr& patches) const {
    auto h = gelu(add_row(matmul(patches, params_.enc_w1), params_.enc_b1));
    return add_row(matmul(h, params_.enc_w2), params_.enc_b2);
}

TensorPtr Tokenizer::decode_rows(const TensorPtr& features) const {
    auto h = gelu(add_row(matmul(features, params_.dec_w1), params_.dec_b1));
    return sigmoid(add_row(matmul(h, params_.dec_w2), params_.dec_b2));
}

FeatureMap Tokenizer::encode(const Image& image) const {
    NoGradScope no_grad;
    auto patches = patchify(image, patch_);
    const std::size_t gh = image.h / patch_, gw = image.w / patch_;
    auto z = encode_rows(make_tensor({gh * gw, patch_width()}, std::move(patches)));
    return {gh, gw, feature_width(), std::move(z->data)};
}

Image Tokenizer::decode(const FeatureMap& quantized) const {
    if (quantized.dim != feature_width()) {
        throw ShapeError("decode: feature width " + std::to_string(quantized.dim) +
                         " but decoder expects " + std::to_string(feature_width()));
    }
    NoGradScope no_grad;
    auto out = decode_rows(make_tensor({quantized.cells(), feature_width()}, quantized.values));
    return unpatchify(out->data, quantized.h, quantized.w, patch_);
}

std::uint64_t Tokenizer::checksum() const {
    Fnv1a h;
    for (const auto& p : params_.all()) h.f64s(p->data);
    return h.digest();
}

TokenizerLoss tokenizer_loss(const Tokenizer& tokenizer, std::span<const Image> batch,
                             const Codebook& codebook, double beta) {
    if (batch.empty()) throw std::invalid_argument("tokenizer step: empty batch");
    if (codebook.dim() != tokenizer.code_dim()) {
        throw ShapeError("tokenizer step: codebook width " + std::to_string(codebook.dim()) +
                         " but tokenizer uses " + std::to_string(tokenizer.code_dim()));
    }
    const std::size_t p = tokenizer.patch(), pw = tokenizer.patch_width(), fw = tokenizer.feature_width();
    std::vector<double> patches;
    std::vector<std::size_t> offsets;
    for (const auto& img : batch) {
        offsets.push_back(patches.size() / pw);
        auto pt = patchify(img, p);
        patches.insert(patches.end(), pt.begin(), pt.end());
    }
    const std::size_t rows = patches.size() / pw;
    auto target = make_tensor({rows, pw}, std::move(patches));

    TokenizerLoss out;
    out.features = tokenizer.encode_rows(target);
    std::vector<double> zq(rows * fw);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t gh = batch[b].h / p, gw = batch[b].w / p, cells = gh * gw;
        FeatureMap fm{gh, gw, fw,
                      std::vector<double>(out.features->data.begin() + static_cast<long>(offsets[b] * fw),
                                          out.features->data.begin() + static_cast<long>((offsets[b] + cells) * fw))};
        auto sq = quantize_stacked(fm, codebook, tokenizer.depth(), tokenizer.mode());
        std::copy(sq.aggregated.values.begin(), sq.aggregated.values.end(),
                  zq.begin() + static_cast<long>(offsets[b] * fw));
        out.per_image.push_back(std::move(sq));
    }
    out.quantized = make_tensor({rows, fw}, std::move(zq));
    out.passthrough = straight_through(out.features, out.quantized);
    auto recon = tokenizer.decode_rows(out.passthrough);
    auto recon_loss = mse(recon, target);
    auto commit = mse(out.features, stop_gradient(out.quantized));
    out.recon_mse = recon_loss->data[0];
    out.commitment = commit->data[0];
    out.loss = beta == 0.0 ? recon_loss : add(recon_loss, scale(commit, beta));
    return out;
}

TokenizerTrainer::TokenizerTrainer(Tokenizer& tokenizer, AdamConfig adam)
    : tokenizer_(tokenizer), adam_(tokenizer.parameters(), adam) {}

TokenizerStepRecord TokenizerTrainer::step(std::span<const Image> batch, Codebook& codebook,
                                           EmaTracker& ema, const TokenizerStepOptions& options) {
    TokenizerStepRecord rec;
    Tape tape;
    TokenizerLoss loss;
    {
        TapeScope scope(tape);
        loss = tokenizer_loss(tokenizer_, batch, codebook, options.beta);
        rec.loss = loss.loss->data[0];
        rec.recon_mse = loss.recon_mse;
        rec.commitment = loss.commitment;
        if (!std::isfinite(rec.loss)) {
            throw NumericError("tokenizer loss is not finite (" + std::to_string(rec.loss) + ")");
        }
        if (options.update_weights) {
            backward(loss.loss);
        } else {
            tape.clear();
        }
    }
    if (options.update_weights) adam_.step();

    const std::size_t n = codebook.dim();
    std::vector<double> features;
    for (const auto& sq : loss.per_image) {
        for (std::size_t c = 0; c < sq.codes.cells(); ++c) {
            for (std::size_t d = 0; d < sq.codes.depth; ++d) {
                rec.assignments.push_back(sq.codes.indices[c * sq.codes.depth + d]);
                const auto& in = sq.layer_inputs[d];
                features.insert(features.end(), in.begin() + static_cast<long>(c * n),
                                in.begin() + static_cast<long>((c + 1) * n));
            }
        }
    }
    if (options.update_codebook) {
        IndicatorMap indicator(codebook.size(), rec.assignments);
        if (options.ema_mode == EmaMode::normalized) {
            codebook = ema.update(codebook, features, indicator, options.ema_decay);
        } else {
            codebook = ema_update(codebook, features, indicator, options.ema_decay);
            ema.rebase(codebook);
        }
    }
    return rec;
}

Image reconstruct(const Tokenizer& tokenizer, const Image& image, const Codebook& codebook) {
    auto z = tokenizer.encode(image);
    auto sq = quantize_stacked(z, codebook, tokenizer.depth(), tokenizer.mode());
    return tokenizer.decode(sq.aggregated);
}

ReconstructionMetrics reconstruct_eval(const Tokenizer& tokenizer, std::span<const Image> images,
                                       const Codebook& codebook) {
    if (images.empty()) throw std::invalid_argument("reconstruct_eval: empty image set");
    ReconstructionMetrics m;
    std::vector<int> history;
    for (const auto& img : images) {
        auto z = tokenizer.encode(img);
        auto sq = quantize_stacked(z, codebook, tokenizer.depth(), tokenizer.mode());
        history.insert(history.end(), sq.codes.indices.begin(), sq.codes.indices.end());
        const double e = image_mse(tokenizer.decode(sq.aggregated), img);
        m.mse += e;
        m.psnr += psnr_from_mse(e);
    }
    m.mse /= static_cast<double>(images.size());
    m.psnr /= static_cast<double>(images.size());
    auto usage = usage_stats(history, codebook.size());
    m.utilization = usage.utilization;
    m.entropy_bits = usage.entropy_bits;
    return m;
}

}  // namespace unicb
