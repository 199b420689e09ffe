#include "rftlab/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rftlab {

namespace {

thread_local Tape* g_active_tape = nullptr;

void round_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

// True when b's shape is a trailing suffix of a's (leading-extent broadcast).
bool suffix_broadcast(const std::vector<int>& a, const std::vector<int>& b) {
    if (b.size() > a.size()) return false;
    const std::size_t off = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (a[off + i] != b[i]) return false;
    }
    return true;
}

void check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
    if (!suffix_broadcast(a.shape(), b.shape())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

std::int64_t shape_size(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(std::vector<int> shape, Precision prec, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->values.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
    impl->shape = std::move(shape);
    impl->prec = prec;
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, Precision prec,
                    bool requires_grad) {
    if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_str(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->prec = prec;
    impl->requires_grad = requires_grad;
    if (prec == Precision::f32) round_f32(impl->values);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, Precision prec) {
    return from({}, {v}, prec);
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(impl_->values.size()); }

Precision Tensor::precision() const { return impl_->prec; }

const std::vector<double>& Tensor::values() const { return impl_->values; }

std::vector<double>& Tensor::values_mut() const { return impl_->values; }

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool rg) const { impl_->requires_grad = rg; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) {
        throw std::logic_error("Tensor::grad: no gradient has been accumulated");
    }
    return impl_->grad;
}

std::vector<double>& Tensor::grad_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() const { impl_->grad.clear(); }

double Tensor::item() const {
    if (impl_->values.size() != 1) {
        throw std::logic_error("Tensor::item: tensor of shape " + shape_str(impl_->shape) +
                               " is not scalar");
    }
    return impl_->values[0];
}

void Tensor::round_to_precision() const {
    if (impl_->prec == Precision::f32) round_f32(impl_->values);
}

// ---- Tape ----

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (consumed_) {
        throw std::logic_error("Tape::backward: tape already walked; rebuild the forward pass");
    }
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("Tape::backward: loss must be a scalar tensor");
    }
    if (loss.impl()->tape != this) {
        throw std::invalid_argument("Tape::backward: loss was not recorded on this tape");
    }
    if (nodes_.empty()) {
        throw std::logic_error("Tape::backward: tape is empty");
    }
    consumed_ = true;
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Precision common_precision(const std::vector<Tensor>& inputs) {
    for (const Tensor& t : inputs) {
        if (t.precision() == Precision::f32) return Precision::f32;
    }
    return Precision::f64;
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

Tensor make_op_output(std::vector<int> shape, Precision prec, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), prec, requires_grad);
    return t;
}

void record_op(const std::vector<Tensor>& inputs, const std::vector<Tensor>& outputs,
               std::function<void()> backward) {
    Tape* tape = Tape::active();
    if (tape == nullptr || !any_requires_grad(inputs)) return;
    for (const Tensor& out : outputs) out.impl()->tape = tape;
    tape->nodes_.push_back({std::move(backward)});
}

// ---- primitive helpers ----

namespace {

// Accumulates g (shaped like the lhs) into the grad of a possibly
// suffix-broadcast rhs, summing over the leading extents.
void accum_broadcast_grad(Tensor& b, const std::vector<double>& g) {
    std::vector<double>& gb = b.grad_mut();
    const std::size_t nb = gb.size();
    for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
}

struct BinaryOutcome {
    Tensor out;
};

template <typename FwdFn>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, FwdFn fwd,
                          std::function<void(const Tensor&, const Tensor&, const Tensor&)> bwd) {
    check_elementwise(name, a, b);
    Tensor out = make_op_output(a.shape(), common_precision({a, b}), any_requires_grad({a, b}));
    const std::vector<double>& va = a.values();
    const std::vector<double>& vb = b.values();
    std::vector<double>& vo = out.values_mut();
    const std::size_t nb = vb.size();
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = fwd(va[i], vb[i % nb]);
    out.round_to_precision();
    record_op({a, b}, {out}, [a, b, out, bwd]() mutable { bwd(a, b, out); });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            if (!out.has_grad()) return;
            const std::vector<double>& g = out.grad();
            auto am = a;
            auto bm = b;
            if (a.requires_grad()) {
                std::vector<double>& ga = am.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) accum_broadcast_grad(bm, g);
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            if (!out.has_grad()) return;
            const std::vector<double>& g = out.grad();
            auto am = a;
            auto bm = b;
            if (a.requires_grad()) {
                std::vector<double>& ga = am.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = bm.grad_mut();
                const std::size_t nb = gb.size();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](const Tensor& a, const Tensor& b, const Tensor& out) {
            if (!out.has_grad()) return;
            const std::vector<double>& g = out.grad();
            const std::vector<double>& va = a.values();
            const std::vector<double>& vb = b.values();
            const std::size_t nb = vb.size();
            auto am = a;
            auto bm = b;
            if (a.requires_grad()) {
                std::vector<double>& ga = am.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i % nb];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = bm.grad_mut();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * va[i];
            }
        });
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_op_output(a.shape(), a.precision(), a.requires_grad());
    const std::vector<double>& va = a.values();
    std::vector<double>& vo = out.values_mut();
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = c * va[i];
    out.round_to_precision();
    record_op({a}, {out}, [a, out, c]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const std::vector<double>& g = out.grad();
        std::vector<double>& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(sa) + " vs " +
                                    shape_str(sb));
    }
    const int m = sa[0], k = sa[1], n = sb[1];
    Tensor out = make_op_output({m, n}, common_precision({a, b}), any_requires_grad({a, b}));
    const double* va = a.values().data();
    const double* vb = b.values().data();
    double* vo = out.values_mut().data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            const double* brow = vb + p * n;
            double* orow = vo + i * n;
            for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    out.round_to_precision();
    record_op({a, b}, {out}, [a, b, out, m, k, n]() mutable {
        if (!out.has_grad()) return;
        const double* g = out.grad().data();
        if (a.requires_grad()) {
            double* ga = a.grad_mut().data();
            const double* vb = b.values().data();
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* grow = g + i * n;
                    const double* brow = vb + p * n;
                    for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                    ga[i * k + p] += s;
                }
            }
        }
        if (b.requires_grad()) {
            double* gb = b.grad_mut().data();
            const double* va = a.values().data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (int p = 0; p < k; ++p) {
                    const double aip = va[i * k + p];
                    double* gbrow = gb + p * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), a.precision(), a.requires_grad());
    const std::vector<double>& va = a.values();
    std::vector<double>& vo = out.values_mut();
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::exp(va[i]);
    out.round_to_precision();
    record_op({a}, {out}, [a, out]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const std::vector<double>& g = out.grad();
        const std::vector<double>& vo = out.values();
        std::vector<double>& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vo[i];
    });
    return out;
}

namespace {

double softplus_val(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid_val(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor softplus(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), a.precision(), a.requires_grad());
    const std::vector<double>& va = a.values();
    std::vector<double>& vo = out.values_mut();
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = softplus_val(va[i]);
    out.round_to_precision();
    record_op({a}, {out}, [a, out]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const std::vector<double>& g = out.grad();
        const std::vector<double>& va = a.values();
        std::vector<double>& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_val(va[i]);
    });
    return out;
}

Tensor rms_normalize(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), a.precision(), a.requires_grad());
    const std::vector<double>& va = a.values();
    const double k = static_cast<double>(va.size());
    double q = 0.0;
    for (double v : va) q += v * v;
    q += 1e-12;
    const double s = std::sqrt(k / q);
    std::vector<double>& vo = out.values_mut();
    for (std::size_t i = 0; i < va.size(); ++i) vo[i] = s * va[i];
    out.round_to_precision();
    record_op({a}, {out}, [a, out, s, q]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const std::vector<double>& g = out.grad();
        const std::vector<double>& va = a.values();
        std::vector<double>& ga = a.grad_mut();
        // y = s(x)·x with s = sqrt(k/(x·x + eps)), so dL/dx = s·(g − x (x·g)/(x·x + eps)).
        double xg = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) xg += va[i] * g[i];
        const double c = xg / q;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * (g[i] - va[i] * c);
    });
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op_output({}, a.precision(), a.requires_grad());
    double s = 0.0;
    for (double v : a.values()) s += v;
    out.values_mut()[0] = s;
    out.round_to_precision();
    record_op({a}, {out}, [a, out]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const double g = out.grad()[0];
        std::vector<double>& ga = a.grad_mut();
        for (double& x : ga) x += g;
    });
    return out;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    const double inv = 1.0 / static_cast<double>(a.size());
    return scale(sum(a), inv);
}

Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
    if (shape_size(new_shape) != a.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(new_shape));
    }
    Tensor out = make_op_output(std::move(new_shape), a.precision(), a.requires_grad());
    out.values_mut() = a.values();
    record_op({a}, {out}, [a, out]() mutable {
        if (!out.has_grad() || !a.requires_grad()) return;
        const std::vector<double>& g = out.grad();
        std::vector<double>& ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, int label) {
    const auto& s = logits.shape();
    if (s.size() != 1) {
        throw std::invalid_argument("cross_entropy: logits must be rank-1, got " + shape_str(s));
    }
    if (label < 0 || label >= s[0]) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(s[0]) + " classes");
    }
    const std::vector<double>& z = logits.values();
    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - zmax);
    lse = zmax + std::log(lse);

    Tensor out = make_op_output({}, logits.precision(), logits.requires_grad());
    out.values_mut()[0] = lse - z[static_cast<std::size_t>(label)];
    out.round_to_precision();
    record_op({logits}, {out}, [logits, out, label, zmax, lse]() mutable {
        if (!out.has_grad() || !logits.requires_grad()) return;
        (void)zmax;
        const double g = out.grad()[0];
        const std::vector<double>& z = logits.values();
        std::vector<double>& gz = logits.grad_mut();
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double p = std::exp(z[i] - lse);
            gz[i] += g * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
        }
    });
    return out;
}

}  // namespace rftlab
