#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Operations record themselves on the thread's active Tape (see TapeScope)
// whenever at least one input requires a gradient. backward() replays the
// tape in reverse and clears it. Without an active tape every operation is a
// plain forward computation, which is what evaluation and generation use.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unicb {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Tensor {
    Shape shape;
    std::vector<double> data;
    // Empty until a backward pass touches this tensor.
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> values, bool trainable = false);

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;
    bool has_grad() const { return !grad.empty(); }
    void ensure_grad();
    void zero_grad();
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool trainable = false);
TensorPtr zeros(Shape shape, bool trainable = false);
TensorPtr full(Shape shape, double value, bool trainable = false);
TensorPtr scalar(double value);

/// Deterministic generator; bit-identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

TensorPtr randn(Shape shape, Rng& rng, double stddev, bool trainable = false);

class Tape {
public:
    using BackwardFn = std::function<void()>;

    struct Record {
        TensorPtr output;
        std::vector<TensorPtr> inputs;
        BackwardFn backward;
    };

    void push(Record record) { records_.push_back(std::move(record)); }
    std::size_t size() const { return records_.size(); }
    bool contains(const Tensor* t) const;
    void clear() { records_.clear(); }
    const std::vector<Record>& records() const { return records_; }

    static Tape* current();

private:
    friend class TapeScope;
    std::vector<Record> records_;
};

/// Makes a tape active on the calling thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording on the calling thread for the scope's lifetime.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

/// Backpropagates from a scalar loss recorded on the active tape, then clears it.
void backward(const TensorPtr& loss);

// ---- primitives ------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
/// a · bᵀ, used for the weight-tied output projection.
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double s);
/// Adds a length-n bias to every row of an m×n matrix.
TensorPtr add_row(const TensorPtr& a, const TensorPtr& bias);
TensorPtr relu(const TensorPtr& a);
TensorPtr gelu(const TensorPtr& a);
TensorPtr tanh(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& a);
TensorPtr layernorm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                         double eps = 1e-5);
/// Gathers rows of a V×d table.
TensorPtr embedding(const TensorPtr& table, std::span<const int> ids);
/// Copy of base with rows at `positions` replaced by the rows of `rows`.
TensorPtr replace_rows(const TensorPtr& base, std::span<const std::size_t> positions,
                       const TensorPtr& rows);
/// Columns [begin, begin+count) of a matrix.
TensorPtr slice_cols(const TensorPtr& a, std::size_t begin, std::size_t count);
TensorPtr sum(const TensorPtr& a);
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);
/// Mean of -log softmax(logits[r])[targets[r]] over rows whose target is >= 0.
TensorPtr cross_entropy_rows(const TensorPtr& logits, std::span<const int> targets);
/// Multi-head causal self-attention over a packed L×3d [q|k|v] matrix.
TensorPtr causal_attention(const TensorPtr& qkv, std::size_t heads);
/// Forward value of `quantized`, backward routed unchanged into `input`.
TensorPtr straight_through(const TensorPtr& input, const TensorPtr& quantized);
TensorPtr stop_gradient(const TensorPtr& a);

// ---- optimisation ----------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 0.0;
};

struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
};

class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig config);

    /// Applies one update from the accumulated grads and zeroes them.
    /// Throws NumericError (leaving params untouched) on a non-finite gradient.
    void step();
    void zero_grad();

    const std::vector<TensorPtr>& params() const { return params_; }
    std::vector<AdamSlot>& slots() { return slots_; }
    const std::vector<AdamSlot>& slots() const { return slots_; }
    std::int64_t steps() const { return t_; }
    void set_steps(std::int64_t t) { t_ = t; }
    AdamConfig& config() { return config_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<AdamSlot> slots_;
    AdamConfig config_;
    std::int64_t t_ = 0;
};

}  // namespace unicb
