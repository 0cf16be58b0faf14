#include "unicb/quantizer.hpp"

#include <cmath>
#include <stdexcept>

namespace unicb {

std::string_view to_string(QuantizerMode mode) {
    switch (mode) {
        case QuantizerMode::vq: return "vq";
        case QuantizerMode::rq: return "rq";
        case QuantizerMode::hq: return "hq";
    }
    return "?";
}

QuantizerMode parse_quantizer_mode(std::string_view text) {
    if (text == "vq") return QuantizerMode::vq;
    if (text == "rq") return QuantizerMode::rq;
    if (text == "hq") return QuantizerMode::hq;
    throw std::invalid_argument("unknown quantizer mode '" + std::string(text) + "'");
}

void CodeMap::validate(std::size_t codes) const {
    if (depth < 1) throw std::out_of_range("code map depth must be >= 1");
    if (mode == QuantizerMode::vq && depth != 1) {
        throw std::out_of_range("VQ code map must have depth 1");
    }
    if (indices.size() != h * w * depth) throw std::out_of_range("code map size mismatch");
    for (int k : indices) {
        if (k < 0 || static_cast<std::size_t>(k) >= codes) {
            throw std::out_of_range("code index " + std::to_string(k) + " outside [0, " +
                                    std::to_string(codes) + ")");
        }
    }
}

std::size_t encoder_width(QuantizerMode mode, std::size_t code_dim, std::size_t depth) {
    return mode == QuantizerMode::hq ? code_dim * depth : code_dim;
}

namespace {

void check_mode(const FeatureMap& features, const Codebook& codebook, std::size_t depth,
                QuantizerMode mode) {
    if (depth < 1) throw std::invalid_argument("stacked quantization needs depth >= 1");
    if (mode == QuantizerMode::vq && depth != 1) {
        throw std::invalid_argument("VQ mode requires depth 1, got " + std::to_string(depth));
    }
    const std::size_t need = encoder_width(mode, codebook.dim(), depth);
    if (features.dim != need) {
        throw ShapeError("stacked quantization (" + std::string(to_string(mode)) + ", D=" +
                         std::to_string(depth) + ") needs feature width " + std::to_string(need) +
                         ", got " + std::to_string(features.dim));
    }
}

}  // namespace

StackedQuantization quantize_stacked(const FeatureMap& features, const Codebook& codebook,
                                     std::size_t depth, QuantizerMode mode) {
    check_mode(features, codebook, depth, mode);
    for (double v : features.values) {
        if (!std::isfinite(v)) throw NumericError("stacked quantization: non-finite feature");
    }
    const std::size_t n = codebook.dim(), cells = features.cells();
    StackedQuantization out;
    out.codes = {features.h, features.w, depth, mode, std::vector<int>(cells * depth)};
    out.layer_inputs.assign(depth, std::vector<double>(cells * n));

    if (mode == QuantizerMode::hq) {
        for (std::size_t c = 0; c < cells; ++c) {
            auto cell = features.cell(c);
            for (std::size_t d = 0; d < depth; ++d) {
                auto slice = cell.subspan(d * n, n);
                std::copy(slice.begin(), slice.end(), out.layer_inputs[d].begin() + c * n);
                out.codes.indices[c * depth + d] = quantize(slice, codebook);
            }
        }
    } else {
        std::vector<double> residual(n);
        for (std::size_t c = 0; c < cells; ++c) {
            auto cell = features.cell(c);
            std::copy(cell.begin(), cell.end(), residual.begin());
            for (std::size_t d = 0; d < depth; ++d) {
                std::copy(residual.begin(), residual.end(), out.layer_inputs[d].begin() + c * n);
                const int k = quantize(residual, codebook);
                out.codes.indices[c * depth + d] = k;
                auto e = codebook.entry(static_cast<std::size_t>(k));
                for (std::size_t j = 0; j < n; ++j) residual[j] -= e[j];
            }
        }
    }
    out.aggregated = aggregate(out.codes, codebook);
    return out;
}

CodeMap encode_stacked(const FeatureMap& features, const Codebook& codebook, std::size_t depth,
                       QuantizerMode mode) {
    return quantize_stacked(features, codebook, depth, mode).codes;
}

FeatureMap aggregate(const CodeMap& codes, const Codebook& codebook) {
    codes.validate(codebook.size());
    const std::size_t n = codebook.dim(), cells = codes.cells(), depth = codes.depth;
    const std::size_t width = encoder_width(codes.mode, n, depth);
    FeatureMap out{codes.h, codes.w, width, std::vector<double>(cells * width, 0.0)};
    for (std::size_t c = 0; c < cells; ++c) {
        auto dst = out.cell(c);
        for (std::size_t d = 0; d < depth; ++d) {
            auto e = codebook.entry(static_cast<std::size_t>(codes.indices[c * depth + d]));
            if (codes.mode == QuantizerMode::hq) {
                std::copy(e.begin(), e.end(), dst.begin() + d * n);
            } else {
                for (std::size_t j = 0; j < n; ++j) dst[j] += e[j];
            }
        }
    }
    return out;
}

std::vector<double> residual_error(const FeatureMap& features, const CodeMap& codes,
                                   const Codebook& codebook) {
    if (codes.mode == QuantizerMode::hq) {
        throw std::invalid_argument("residual_error is defined for RQ/VQ code maps only");
    }
    codes.validate(codebook.size());
    const std::size_t n = codebook.dim();
    if (features.dim != n || features.cells() != codes.cells()) {
        throw ShapeError("residual_error: feature map does not match code map");
    }
    std::vector<double> errors(codes.depth, 0.0);
    std::vector<double> residual(n);
    for (std::size_t c = 0; c < codes.cells(); ++c) {
        auto cell = features.cell(c);
        std::copy(cell.begin(), cell.end(), residual.begin());
        for (std::size_t d = 0; d < codes.depth; ++d) {
            auto e = codebook.entry(static_cast<std::size_t>(codes.indices[c * codes.depth + d]));
            double sq = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                residual[j] -= e[j];
                sq += residual[j] * residual[j];
            }
            errors[d] += sq;
        }
    }
    return errors;
}

}  // namespace unicb
