#include "unicb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace unicb {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

Tensor::Tensor(Shape s, std::vector<double> values, bool trainable)
    : shape(std::move(s)), data(std::move(values)), requires_grad(trainable) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
}

std::size_t Tensor::rows() const {
    if (shape.size() == 2) return shape[0];
    return 1;
}

std::size_t Tensor::cols() const {
    if (shape.size() == 2) return shape[1];
    if (shape.size() == 1) return shape[0];
    return 1;
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool trainable) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), trainable);
}

TensorPtr zeros(Shape shape, bool trainable) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), trainable);
}

TensorPtr full(Shape shape, double value, bool trainable) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, value), trainable);
}

TensorPtr scalar(double value) {
    return make_tensor({}, {value});
}

// ---- Rng ---------------------------------------------------------------------

Rng::Rng(std::uint64_t seed) : state_(seed ^ 0x9E3779B97F4A7C15ULL) {}

std::uint64_t Rng::next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

TensorPtr randn(Shape shape, Rng& rng, double stddev, bool trainable) {
    auto t = zeros(std::move(shape), trainable);
    for (auto& v : t->data) v = stddev * rng.normal();
    return t;
}

// ---- Tape --------------------------------------------------------------------

namespace {
thread_local Tape* active_tape = nullptr;
}

Tape* Tape::current() {
    return active_tape;
}

bool Tape::contains(const Tensor* t) const {
    for (const auto& r : records_) {
        if (r.output.get() == t) return true;
    }
    return false;
}

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) {
    active_tape = &tape;
}

TapeScope::~TapeScope() {
    active_tape = previous_;
}

NoGradScope::NoGradScope() : previous_(active_tape) {
    active_tape = nullptr;
}

NoGradScope::~NoGradScope() {
    active_tape = previous_;
}

void backward(const TensorPtr& loss) {
    Tape* tape = Tape::current();
    if (loss->numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
    }
    if (tape == nullptr || !tape->contains(loss.get())) {
        throw std::logic_error("backward: loss is not recorded on the active tape");
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    const auto& records = tape->records();
    for (auto it = records.rbegin(); it != records.rend(); ++it) {
        if (!it->output->has_grad()) continue;
        it->backward();
    }
    tape->clear();
}

// ---- primitive helpers -------------------------------------------------------

namespace {

// Registers `out` on the active tape when gradients are needed. The backward
// closure reads out->grad and accumulates into the inputs' grads.
void record(const TensorPtr& out, std::vector<TensorPtr> inputs, Tape::BackwardFn fn) {
    Tape* tape = Tape::current();
    if (tape == nullptr) return;
    bool needed = false;
    for (const auto& in : inputs) needed = needed || in->requires_grad;
    if (!needed) return;
    out->requires_grad = true;
    tape->push({out, std::move(inputs), std::move(fn)});
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.shape.size() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <class Fwd, class Deriv>
TensorPtr unary(const TensorPtr& a, Fwd fwd, Deriv deriv) {
    auto out = std::make_shared<Tensor>(a->shape, std::vector<double>(a->numel()));
    for (std::size_t i = 0; i < a->numel(); ++i) out->data[i] = fwd(a->data[i]);
    Tensor* o = out.get();
    record(out, {a}, [a, o, deriv] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < a->numel(); ++i) {
            a->grad[i] += o->grad[i] * deriv(a->data[i], o->data[i]);
        }
    });
    return out;
}

}  // namespace

// ---- primitives --------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_matrix(*a, "matmul");
    require_matrix(*b, "matmul");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    auto out = zeros({m, n});
    gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            gemm_nt(o->grad.data(), b->data.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            gemm_tn(a->data.data(), o->grad.data(), b->grad.data(), m, k, n);
        }
    });
    return out;
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    require_matrix(*a, "matmul_nt");
    require_matrix(*b, "matmul_nt");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (b->shape[1] != k) {
        throw ShapeError("matmul_nt: shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    auto out = zeros({m, n});
    gemm_nt(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o, m, k, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            gemm_nn(o->grad.data(), b->data.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            gemm_tn(o->grad.data(), a->data.data(), b->grad.data(), m, n, k);
        }
    });
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same(*a, *b, "add");
    auto out = std::make_shared<Tensor>(a->shape, a->data);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] += b->data[i];
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o] {
        for (const auto& in : {a, b}) {
            if (!in->requires_grad) continue;
            in->ensure_grad();
            for (std::size_t i = 0; i < o->numel(); ++i) in->grad[i] += o->grad[i];
        }
    });
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same(*a, *b, "sub");
    auto out = std::make_shared<Tensor>(a->shape, a->data);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] -= b->data[i];
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < o->numel(); ++i) b->grad[i] -= o->grad[i];
        }
    });
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same(*a, *b, "mul");
    auto out = std::make_shared<Tensor>(a->shape, a->data);
    for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] *= b->data[i];
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < o->numel(); ++i) a->grad[i] += o->grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < o->numel(); ++i) b->grad[i] += o->grad[i] * a->data[i];
        }
    });
    return out;
}

TensorPtr scale(const TensorPtr& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

TensorPtr add_row(const TensorPtr& a, const TensorPtr& bias) {
    require_matrix(*a, "add_row");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (bias->numel() != n) {
        throw ShapeError("add_row: shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(bias->shape));
    }
    auto out = std::make_shared<Tensor>(a->shape, a->data);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] += bias->data[j];
    }
    Tensor* o = out.get();
    record(out, {a, bias}, [a, bias, o, m, n] {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) a->grad[i] += o->grad[i];
        }
        if (bias->requires_grad) {
            bias->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) bias->grad[j] += o->grad[i * n + j];
            }
        }
    });
    return out;
}

TensorPtr relu(const TensorPtr& a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

TensorPtr gelu(const TensorPtr& a) {
    // tanh approximation
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return unary(
        a,
        [](double x) {
            const double u = c * (x + 0.044715 * x * x * x);
            return 0.5 * x * (1.0 + std::tanh(u));
        },
        [](double x, double) {
            const double u = c * (x + 0.044715 * x * x * x);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

TensorPtr tanh(const TensorPtr& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

TensorPtr sigmoid(const TensorPtr& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

TensorPtr softmax_rows(const TensorPtr& a) {
    require_matrix(*a, "softmax_rows");
    const std::size_t m = a->shape[0], n = a->shape[1];
    auto out = zeros(a->shape);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = a->data.data() + i * n;
        double* y = out->data.data() + i * n;
        const double mx = *std::max_element(x, x + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) y[j] /= total;
    }
    Tensor* o = out.get();
    record(out, {a}, [a, o, m, n] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* y = o->data.data() + i * n;
            const double* gy = o->grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
            double* gx = a->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    return out;
}

TensorPtr layernorm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                         double eps) {
    require_matrix(*x, "layernorm_rows");
    const std::size_t m = x->shape[0], n = x->shape[1];
    if (gamma->numel() != n || beta->numel() != n) {
        throw ShapeError("layernorm_rows: shape mismatch " + shape_str(x->shape) + " vs " +
                         shape_str(gamma->shape));
    }
    auto out = zeros(x->shape);
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x->data.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xi[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xi[j] - mean) * is;
            (*xhat)[i * n + j] = h;
            out->data[i * n + j] = h * gamma->data[j] + beta->data[j];
        }
    }
    Tensor* o = out.get();
    record(out, {x, gamma, beta}, [x, gamma, beta, o, xhat, inv_std, m, n] {
        if (gamma->requires_grad) gamma->ensure_grad();
        if (beta->requires_grad) beta->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* gy = o->grad.data() + i * n;
            const double* h = xhat->data() + i * n;
            if (gamma->requires_grad) {
                for (std::size_t j = 0; j < n; ++j) gamma->grad[j] += gy[j] * h[j];
            }
            if (beta->requires_grad) {
                for (std::size_t j = 0; j < n; ++j) beta->grad[j] += gy[j];
            }
            if (x->requires_grad) {
                double mean_g = 0.0, mean_gh = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = gy[j] * gamma->data[j];
                    mean_g += g;
                    mean_gh += g * h[j];
                }
                mean_g /= static_cast<double>(n);
                mean_gh /= static_cast<double>(n);
                double* gx = x->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = gy[j] * gamma->data[j];
                    gx[j] += (*inv_std)[i] * (g - mean_g - h[j] * mean_gh);
                }
            }
        }
    });
    return out;
}

TensorPtr embedding(const TensorPtr& table, std::span<const int> ids) {
    require_matrix(*table, "embedding");
    const std::size_t vocab = table->shape[0], d = table->shape[1];
    auto out = zeros({ids.size(), d});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw ShapeError("embedding: id " + std::to_string(ids[t]) + " outside table " +
                             shape_str(table->shape));
        }
        std::copy_n(table->data.data() + static_cast<std::size_t>(ids[t]) * d, d,
                    out->data.data() + t * d);
    }
    Tensor* o = out.get();
    std::vector<int> saved(ids.begin(), ids.end());
    record(out, {table}, [table, o, saved = std::move(saved), d] {
        if (!table->requires_grad) return;
        table->ensure_grad();
        for (std::size_t t = 0; t < saved.size(); ++t) {
            double* g = table->grad.data() + static_cast<std::size_t>(saved[t]) * d;
            const double* go = o->grad.data() + t * d;
            for (std::size_t j = 0; j < d; ++j) g[j] += go[j];
        }
    });
    return out;
}

TensorPtr replace_rows(const TensorPtr& base, std::span<const std::size_t> positions,
                       const TensorPtr& rows) {
    require_matrix(*base, "replace_rows");
    require_matrix(*rows, "replace_rows");
    const std::size_t m = base->shape[0], d = base->shape[1];
    if (rows->shape[1] != d || rows->shape[0] != positions.size()) {
        throw ShapeError("replace_rows: shape mismatch " + shape_str(base->shape) + " vs " +
                         shape_str(rows->shape));
    }
    std::vector<int> source(m, -1);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        if (positions[r] >= m) throw ShapeError("replace_rows: position out of range");
        source[positions[r]] = static_cast<int>(r);
    }
    auto out = std::make_shared<Tensor>(base->shape, base->data);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        std::copy_n(rows->data.data() + r * d, d, out->data.data() + positions[r] * d);
    }
    Tensor* o = out.get();
    record(out, {base, rows}, [base, rows, o, source = std::move(source), m, d] {
        if (base->requires_grad) base->ensure_grad();
        if (rows->requires_grad) rows->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = o->grad.data() + i * d;
            if (source[i] < 0) {
                if (!base->requires_grad) continue;
                for (std::size_t j = 0; j < d; ++j) base->grad[i * d + j] += g[j];
            } else if (rows->requires_grad) {
                double* gr = rows->grad.data() + static_cast<std::size_t>(source[i]) * d;
                for (std::size_t j = 0; j < d; ++j) gr[j] += g[j];
            }
        }
    });
    return out;
}

TensorPtr slice_cols(const TensorPtr& a, std::size_t begin, std::size_t count) {
    require_matrix(*a, "slice_cols");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (begin + count > n) {
        throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(a->shape));
    }
    auto out = zeros({m, count});
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a->data.data() + i * n + begin, count, out->data.data() + i * count);
    }
    Tensor* o = out.get();
    record(out, {a}, [a, o, m, n, begin, count] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) a->grad[i * n + begin + j] += o->grad[i * count + j];
        }
    });
    return out;
}

TensorPtr sum(const TensorPtr& a) {
    double total = 0.0;
    for (double v : a->data) total += v;
    auto out = scalar(total);
    Tensor* o = out.get();
    record(out, {a}, [a, o] {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (auto& g : a->grad) g += o->grad[0];
    });
    return out;
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    require_same(*a, *b, "mse");
    const std::size_t n = a->numel();
    if (n == 0) throw ShapeError("mse: empty tensors");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a->data[i] - b->data[i];
        total += d * d;
    }
    auto out = scalar(total / static_cast<double>(n));
    Tensor* o = out.get();
    record(out, {a, b}, [a, b, o, n] {
        const double k = 2.0 * o->grad[0] / static_cast<double>(n);
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += k * (a->data[i] - b->data[i]);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] -= k * (a->data[i] - b->data[i]);
        }
    });
    return out;
}

TensorPtr cross_entropy_rows(const TensorPtr& logits, std::span<const int> targets) {
    require_matrix(*logits, "cross_entropy_rows");
    const std::size_t m = logits->shape[0], n = logits->shape[1];
    if (targets.size() != m) {
        throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits->shape));
    }
    std::size_t count = 0;
    for (int t : targets) {
        if (t >= static_cast<int>(n)) throw ShapeError("cross_entropy_rows: target out of range");
        if (t >= 0) ++count;
    }
    if (count == 0) throw std::invalid_argument("cross_entropy_rows: no target rows");
    auto probs = std::make_shared<std::vector<double>>(m * n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (targets[i] < 0) continue;
        const double* x = logits->data.data() + i * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double log_z = mx + std::log(z);
        total += log_z - x[targets[i]];
        for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] = std::exp(x[j] - log_z);
    }
    auto out = scalar(total / static_cast<double>(count));
    Tensor* o = out.get();
    std::vector<int> saved(targets.begin(), targets.end());
    record(out, {logits}, [logits, o, probs, saved = std::move(saved), m, n, count] {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const double k = o->grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < m; ++i) {
            if (saved[i] < 0) continue;
            double* g = logits->grad.data() + i * n;
            const double* p = probs->data() + i * n;
            for (std::size_t j = 0; j < n; ++j) g[j] += k * p[j];
            g[saved[i]] -= k;
        }
    });
    return out;
}

TensorPtr causal_attention(const TensorPtr& qkv, std::size_t heads) {
    require_matrix(*qkv, "causal_attention");
    const std::size_t len = qkv->shape[0], width3 = qkv->shape[1];
    if (heads == 0 || width3 % (3 * heads) != 0) {
        throw ShapeError("causal_attention: packed width " + std::to_string(width3) +
                         " not divisible into 3 x " + std::to_string(heads) + " heads");
    }
    const std::size_t d = width3 / 3, hd = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    auto out = zeros({len, d});
    // probs[h][i][j] for j <= i
    auto probs = std::make_shared<std::vector<double>>(heads * len * len, 0.0);
    const double* src = qkv->data.data();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
        for (std::size_t i = 0; i < len; ++i) {
            double* p = probs->data() + (h * len + i) * len;
            const double* q = src + i * width3 + qo;
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* k = src + j * width3 + ko;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
                p[j] = s * inv_sqrt;
                mx = std::max(mx, p[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                p[j] = std::exp(p[j] - mx);
                z += p[j];
            }
            double* y = out->data.data() + i * d + h * hd;
            for (std::size_t j = 0; j <= i; ++j) {
                p[j] /= z;
                const double* v = src + j * width3 + vo;
                for (std::size_t c = 0; c < hd; ++c) y[c] += p[j] * v[c];
            }
        }
    }
    Tensor* o = out.get();
    record(out, {qkv}, [qkv, o, probs, len, width3, d, hd, heads, inv_sqrt] {
        if (!qkv->requires_grad) return;
        qkv->ensure_grad();
        const double* src = qkv->data.data();
        double* g = qkv->grad.data();
        std::vector<double> dp(len);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
            for (std::size_t i = 0; i < len; ++i) {
                const double* p = probs->data() + (h * len + i) * len;
                const double* gy = o->grad.data() + i * d + h * hd;
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* v = src + j * width3 + vo;
                    double* gv = g + j * width3 + vo;
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) {
                        s += gy[c] * v[c];
                        gv[c] += p[j] * gy[c];
                    }
                    dp[j] = s;
                    dot += p[j] * s;
                }
                const double* q = src + i * width3 + qo;
                double* gq = g + i * width3 + qo;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
                    if (ds == 0.0) continue;
                    const double* k = src + j * width3 + ko;
                    double* gk = g + j * width3 + ko;
                    for (std::size_t c = 0; c < hd; ++c) {
                        gq[c] += ds * k[c];
                        gk[c] += ds * q[c];
                    }
                }
            }
        }
    });
    return out;
}

TensorPtr straight_through(const TensorPtr& input, const TensorPtr& quantized) {
    require_same(*input, *quantized, "straight_through");
    auto out = std::make_shared<Tensor>(quantized->shape, quantized->data);
    Tensor* o = out.get();
    record(out, {input}, [input, o] {
        if (!input->requires_grad) return;
        input->ensure_grad();
        for (std::size_t i = 0; i < o->numel(); ++i) input->grad[i] += o->grad[i];
    });
    return out;
}

TensorPtr stop_gradient(const TensorPtr& a) {
    return std::make_shared<Tensor>(a->shape, a->data);
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<TensorPtr> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    slots_.reserve(params_.size());
    for (const auto& p : params_) {
        slots_.push_back({std::vector<double>(p->numel(), 0.0), std::vector<double>(p->numel(), 0.0)});
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

void Adam::step() {
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (double g : params_[i]->grad) {
            if (!std::isfinite(g)) {
                throw NumericError("Adam: non-finite gradient in parameter " + std::to_string(i) +
                                   " of shape " + shape_str(params_[i]->shape));
            }
            norm_sq += g * g;
        }
    }
    double clip = 1.0;
    if (config_.clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (!p.has_grad()) continue;
        auto& s = slots_[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = p.grad[j] * clip;
            s.m[j] = config_.beta1 * s.m[j] + (1.0 - config_.beta1) * g;
            s.v[j] = config_.beta2 * s.v[j] + (1.0 - config_.beta2) * g * g;
            const double mhat = s.m[j] / bc1;
            const double vhat = s.v[j] / bc2;
            p.data[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
    zero_grad();
}

}  // namespace unicb
