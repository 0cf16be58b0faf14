#pragma once

// Stacked quantization over the shared codebook. Every layer draws from the
// same table. RQ aggregates layers by summation over running residuals; HQ
// quantizes D independent n-wide slices of a widened feature and concatenates
// them. Plain VQ is the single-layer case.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "unicb/codebook.hpp"

namespace unicb {

enum class QuantizerMode { vq, rq, hq };

std::string_view to_string(QuantizerMode mode);
QuantizerMode parse_quantizer_mode(std::string_view text);

/// ĥ × ŵ × D code indices, flattened with the layer index fastest, then
/// columns, then rows. Token sequences use this order directly.
struct CodeMap {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t depth = 1;
    QuantizerMode mode = QuantizerMode::vq;
    std::vector<int> indices;

    std::size_t cells() const { return h * w; }
    int at(std::size_t i, std::size_t j, std::size_t d) const {
        return indices[(i * w + j) * depth + d];
    }
    /// Throws std::out_of_range unless every index is below `codes` and the layout is consistent.
    void validate(std::size_t codes) const;

    friend bool operator==(const CodeMap&, const CodeMap&) = default;
};

/// Width of the encoder feature a mode consumes per cell.
std::size_t encoder_width(QuantizerMode mode, std::size_t code_dim, std::size_t depth);

struct StackedQuantization {
    CodeMap codes;
    FeatureMap aggregated;
    /// For each layer, the cells × n matrix that layer quantized (residuals
    /// under RQ, slices under HQ). These feed the EMA update.
    std::vector<std::vector<double>> layer_inputs;
};

StackedQuantization quantize_stacked(const FeatureMap& features, const Codebook& codebook,
                                     std::size_t depth, QuantizerMode mode);

CodeMap encode_stacked(const FeatureMap& features, const Codebook& codebook, std::size_t depth,
                       QuantizerMode mode);

FeatureMap aggregate(const CodeMap& codes, const Codebook& codebook);

/// Squared residual norm summed over cells after each RQ layer.
std::vector<double> residual_error(const FeatureMap& features, const CodeMap& codes,
                                   const Codebook& codebook);

}  // namespace unicb
