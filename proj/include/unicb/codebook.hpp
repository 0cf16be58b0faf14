#pragma once

// The unified code table and its update rules: nearest-code assignment,
// exponential-moving-average tracking of encoder features, and the
// moving-average pull toward the language model's embedding block.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "unicb/tensor.hpp"

namespace unicb {

class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t codes, std::size_t dim);
    Codebook(std::size_t codes, std::size_t dim, std::vector<double> entries);

    static Codebook random(std::size_t codes, std::size_t dim, Rng& rng, double stddev);

    std::size_t size() const { return codes_; }
    std::size_t dim() const { return dim_; }
    std::span<const double> entry(std::size_t k) const {
        return {entries_.data() + k * dim_, dim_};
    }
    const std::vector<double>& entries() const { return entries_; }
    std::uint64_t version() const { return version_; }

    /// Replaces every entry (K and n stay fixed) and bumps the version.
    void assign(std::span<const double> entries);
    void set_version(std::uint64_t v) { version_ = v; }
    std::uint64_t checksum() const;

    friend bool operator==(const Codebook& a, const Codebook& b) {
        return a.codes_ == b.codes_ && a.dim_ == b.dim_ && a.entries_ == b.entries_;
    }

private:
    std::size_t codes_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> entries_;
    std::uint64_t version_ = 0;
};

/// K × hw assignment indicator, stored as one code per position.
class IndicatorMap {
public:
    IndicatorMap() = default;
    IndicatorMap(std::size_t codes, std::vector<int> assignment);

    std::size_t codes() const { return codes_; }
    std::size_t positions() const { return assignment_.size(); }
    const std::vector<int>& assignment() const { return assignment_; }
    double operator()(std::size_t k, std::size_t p) const {
        return assignment_[p] == static_cast<int>(k) ? 1.0 : 0.0;
    }
    std::vector<std::size_t> row_sums() const;
    /// Row-major K × hw matrix.
    std::vector<double> dense() const;
    /// I · Z for a flattened hw × n feature matrix; row k is the sum of features assigned to k.
    std::vector<double> times(std::span<const double> features, std::size_t dim) const;

private:
    std::size_t codes_ = 0;
    std::vector<int> assignment_;
};

/// Feature grid of h × w cells, each `dim` wide, row-major over cells.
struct FeatureMap {
    std::size_t h = 0;
    std::size_t w = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    std::size_t cells() const { return h * w; }
    std::span<const double> cell(std::size_t c) const { return {values.data() + c * dim, dim}; }
    std::span<double> cell(std::size_t c) { return {values.data() + c * dim, dim}; }
};

struct QuantizeResult {
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<int> indices;
    IndicatorMap indicator;
    FeatureMap quantized;
};

/// Nearest code by squared Euclidean distance; ties resolve to the lowest index.
int quantize(std::span<const double> z, const Codebook& codebook);
QuantizeResult quantize_map(const FeatureMap& features, const Codebook& codebook);

/// Literal decayed update: C' = λ·C + (1 − λ)·I·Z.
Codebook ema_update(const Codebook& codebook, std::span<const double> features,
                    const IndicatorMap& indicator, double decay);

/// C' = λ·C + (1 − λ)·C_L.
Codebook sync_update(const Codebook& codebook, const Codebook& target, double decay);

/// Usage-normalised EMA: each code tracks a decayed sum of its assigned
/// features and a decayed count, and is set to their ratio. Codes unused in an
/// update keep their value.
class EmaTracker {
public:
    EmaTracker() = default;
    explicit EmaTracker(const Codebook& codebook);

    Codebook update(const Codebook& codebook, std::span<const double> features,
                    const IndicatorMap& indicator, double decay);
    /// Re-anchors the running sums after the codebook was changed externally.
    void rebase(const Codebook& codebook);

    const std::vector<double>& counts() const { return counts_; }
    const std::vector<double>& sums() const { return sums_; }
    void restore(std::vector<double> counts, std::vector<double> sums);

private:
    std::vector<double> counts_;
    std::vector<double> sums_;
};

struct UsageStats {
    std::vector<std::size_t> counts;
    double utilization = 0.0;
    double entropy_bits = 0.0;
};

UsageStats usage_stats(std::span<const int> history, std::size_t codes);

double frobenius_distance(const Codebook& a, const Codebook& b);

}  // namespace unicb
