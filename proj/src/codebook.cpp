#include "unicb/codebook.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "unicb/hash.hpp"

namespace unicb {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite codebook entry");
    }
}

void require_decay(double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) {
        throw std::invalid_argument("decay " + std::to_string(decay) + " outside [0, 1]");
    }
}

}  // namespace

Codebook::Codebook(std::size_t codes, std::size_t dim)
    : codes_(codes), dim_(dim), entries_(codes * dim, 0.0) {}

Codebook::Codebook(std::size_t codes, std::size_t dim, std::vector<double> entries)
    : codes_(codes), dim_(dim), entries_(std::move(entries)) {
    if (entries_.size() != codes * dim) {
        throw ShapeError("codebook " + std::to_string(codes) + "x" + std::to_string(dim) +
                         " given " + std::to_string(entries_.size()) + " values");
    }
    require_finite(entries_, "Codebook");
}

Codebook Codebook::random(std::size_t codes, std::size_t dim, Rng& rng, double stddev) {
    std::vector<double> e(codes * dim);
    for (auto& v : e) v = stddev * rng.normal();
    return Codebook(codes, dim, std::move(e));
}

void Codebook::assign(std::span<const double> entries) {
    if (entries.size() != entries_.size()) {
        throw ShapeError("codebook assign: " + std::to_string(entries.size()) + " values for " +
                         std::to_string(codes_) + "x" + std::to_string(dim_));
    }
    require_finite(entries, "Codebook::assign");
    entries_.assign(entries.begin(), entries.end());
    ++version_;
}

std::uint64_t Codebook::checksum() const {
    return checksum_f64(entries_);
}

// ---- IndicatorMap -------------------------------------------------------------

IndicatorMap::IndicatorMap(std::size_t codes, std::vector<int> assignment)
    : codes_(codes), assignment_(std::move(assignment)) {
    for (int a : assignment_) {
        if (a < 0 || static_cast<std::size_t>(a) >= codes_) {
            throw std::out_of_range("indicator assignment " + std::to_string(a) + " outside [0, " +
                                    std::to_string(codes_) + ")");
        }
    }
}

std::vector<std::size_t> IndicatorMap::row_sums() const {
    std::vector<std::size_t> counts(codes_, 0);
    for (int a : assignment_) ++counts[static_cast<std::size_t>(a)];
    return counts;
}

std::vector<double> IndicatorMap::dense() const {
    std::vector<double> m(codes_ * assignment_.size(), 0.0);
    for (std::size_t p = 0; p < assignment_.size(); ++p) {
        m[static_cast<std::size_t>(assignment_[p]) * assignment_.size() + p] = 1.0;
    }
    return m;
}

std::vector<double> IndicatorMap::times(std::span<const double> features, std::size_t dim) const {
    if (features.size() != assignment_.size() * dim) {
        throw ShapeError("I·Z: indicator has " + std::to_string(assignment_.size()) +
                         " positions, features hold " + std::to_string(features.size()) +
                         " values of width " + std::to_string(dim));
    }
    std::vector<double> out(codes_ * dim, 0.0);
    for (std::size_t p = 0; p < assignment_.size(); ++p) {
        double* row = out.data() + static_cast<std::size_t>(assignment_[p]) * dim;
        const double* f = features.data() + p * dim;
        for (std::size_t j = 0; j < dim; ++j) row[j] += f[j];
    }
    return out;
}

// ---- quantization -------------------------------------------------------------

int quantize(std::span<const double> z, const Codebook& codebook) {
    const std::size_t n = codebook.dim();
    if (z.size() != n) {
        throw ShapeError("quantize: vector of length " + std::to_string(z.size()) +
                         " against codebook width " + std::to_string(n));
    }
    if (codebook.size() == 0) throw ShapeError("quantize: empty codebook");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    const double* e = codebook.entries().data();
    for (std::size_t k = 0; k < codebook.size(); ++k, e += n) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double diff = z[j] - e[j];
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

QuantizeResult quantize_map(const FeatureMap& features, const Codebook& codebook) {
    if (features.dim != codebook.dim()) {
        throw ShapeError("quantize_map: feature width " + std::to_string(features.dim) +
                         " against codebook width " + std::to_string(codebook.dim()));
    }
    if (features.values.size() != features.cells() * features.dim) {
        throw ShapeError("quantize_map: feature map holds the wrong number of values");
    }
    for (double v : features.values) {
        if (!std::isfinite(v)) throw NumericError("quantize_map: non-finite feature");
    }
    std::vector<int> idx(features.cells());
    FeatureMap q{features.h, features.w, features.dim, std::vector<double>(features.values.size())};
    for (std::size_t c = 0; c < features.cells(); ++c) {
        idx[c] = quantize(features.cell(c), codebook);
        auto e = codebook.entry(static_cast<std::size_t>(idx[c]));
        std::copy(e.begin(), e.end(), q.cell(c).begin());
    }
    IndicatorMap ind(codebook.size(), idx);
    return {features.h, features.w, std::move(idx), std::move(ind), std::move(q)};
}

// ---- updates --------------------------------------------------------------------

Codebook ema_update(const Codebook& codebook, std::span<const double> features,
                    const IndicatorMap& indicator, double decay) {
    require_decay(decay);
    if (indicator.codes() != codebook.size()) {
        throw ShapeError("ema_update: indicator has " + std::to_string(indicator.codes()) +
                         " rows, codebook has " + std::to_string(codebook.size()));
    }
    const auto iz = indicator.times(features, codebook.dim());
    std::vector<double> next(codebook.entries().size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] = decay * codebook.entries()[i] + (1.0 - decay) * iz[i];
    }
    Codebook out(codebook.size(), codebook.dim(), std::move(next));
    out.set_version(codebook.version() + 1);
    return out;
}

Codebook sync_update(const Codebook& codebook, const Codebook& target, double decay) {
    require_decay(decay);
    if (codebook.size() != target.size() || codebook.dim() != target.dim()) {
        throw ShapeError("sync_update: codebook " + std::to_string(codebook.size()) + "x" +
                         std::to_string(codebook.dim()) + " vs target " +
                         std::to_string(target.size()) + "x" + std::to_string(target.dim()));
    }
    std::vector<double> next(codebook.entries().size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        next[i] = decay * codebook.entries()[i] + (1.0 - decay) * target.entries()[i];
    }
    Codebook out(codebook.size(), codebook.dim(), std::move(next));
    out.set_version(codebook.version() + 1);
    return out;
}

EmaTracker::EmaTracker(const Codebook& codebook)
    : counts_(codebook.size(), 1.0), sums_(codebook.entries()) {}

void EmaTracker::rebase(const Codebook& codebook) {
    if (counts_.size() != codebook.size()) {
        *this = EmaTracker(codebook);
        return;
    }
    const std::size_t n = codebook.dim();
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        for (std::size_t j = 0; j < n; ++j) sums_[k * n + j] = counts_[k] * codebook.entry(k)[j];
    }
}

void EmaTracker::restore(std::vector<double> counts, std::vector<double> sums) {
    if (sums.size() % std::max<std::size_t>(counts.size(), 1) != 0) {
        throw ShapeError("EmaTracker::restore: inconsistent state sizes");
    }
    counts_ = std::move(counts);
    sums_ = std::move(sums);
}

Codebook EmaTracker::update(const Codebook& codebook, std::span<const double> features,
                            const IndicatorMap& indicator, double decay) {
    require_decay(decay);
    if (counts_.size() != codebook.size()) {
        throw ShapeError("EmaTracker: state sized for " + std::to_string(counts_.size()) +
                         " codes, codebook has " + std::to_string(codebook.size()));
    }
    const std::size_t n = codebook.dim();
    const auto usage = indicator.row_sums();
    const auto iz = indicator.times(features, n);
    std::vector<double> next(codebook.entries());
    for (std::size_t k = 0; k < codebook.size(); ++k) {
        counts_[k] = decay * counts_[k] + (1.0 - decay) * static_cast<double>(usage[k]);
        for (std::size_t j = 0; j < n; ++j) {
            sums_[k * n + j] = decay * sums_[k * n + j] + (1.0 - decay) * iz[k * n + j];
        }
        if (usage[k] == 0 || counts_[k] <= 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) next[k * n + j] = sums_[k * n + j] / counts_[k];
    }
    Codebook out(codebook.size(), n, std::move(next));
    out.set_version(codebook.version() + 1);
    return out;
}

// ---- diagnostics ----------------------------------------------------------------

UsageStats usage_stats(std::span<const int> history, std::size_t codes) {
    if (history.empty()) throw std::invalid_argument("usage_stats: empty assignment history");
    if (codes == 0) throw std::invalid_argument("usage_stats: zero codes");
    UsageStats s;
    s.counts.assign(codes, 0);
    for (int a : history) {
        if (a < 0 || static_cast<std::size_t>(a) >= codes) {
            throw std::out_of_range("usage_stats: code " + std::to_string(a) + " outside [0, " +
                                    std::to_string(codes) + ")");
        }
        ++s.counts[static_cast<std::size_t>(a)];
    }
    std::size_t used = 0;
    const double total = static_cast<double>(history.size());
    for (auto c : s.counts) {
        if (c == 0) continue;
        ++used;
        const double p = static_cast<double>(c) / total;
        s.entropy_bits -= p * std::log2(p);
    }
    s.utilization = static_cast<double>(used) / static_cast<double>(codes);
    if (s.entropy_bits < 0.0) s.entropy_bits = 0.0;
    return s;
}

double frobenius_distance(const Codebook& a, const Codebook& b) {
    if (a.size() != b.size() || a.dim() != b.dim()) {
        throw ShapeError("codebook distance: " + std::to_string(a.size()) + "x" +
                         std::to_string(a.dim()) + " vs " + std::to_string(b.size()) + "x" +
                         std::to_string(b.dim()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.entries().size(); ++i) {
        const double d = a.entries()[i] - b.entries()[i];
        total += d * d;
    }
    return std::sqrt(total);
}

}  // namespace unicb
