#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rftlab {

// Scalar precision of a tensor. Storage is always double; f32 rounds every
// op result through float so 32-bit training semantics stay well defined
// while the verification path (f64) keeps full accuracy for the oracles.
enum class Precision : std::uint8_t { f32, f64 };

class Tape;

namespace detail {
struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    Precision prec = Precision::f64;
    bool requires_grad = false;
    const Tape* tape = nullptr;  // set when this tensor is an op output
};
}  // namespace detail

std::int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense n-dimensional array with optional gradient buffer. Shared-handle
// semantics: copies alias the same storage. Values are treated as immutable
// once a tensor has entered a recorded computation; only grad accumulates.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, Precision prec = Precision::f64,
                        bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       Precision prec = Precision::f64, bool requires_grad = false);
    static Tensor scalar(double v, Precision prec = Precision::f64);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    std::int64_t size() const;
    Precision precision() const;

    const std::vector<double>& values() const;
    /// Mutable access for initialization and optimizer steps. Do not write
    /// to a tensor that already participates in a recorded computation.
    /// Const because copies are shared handles onto one storage.
    std::vector<double>& values_mut() const;

    bool requires_grad() const;
    void set_requires_grad(bool rg) const;

    bool has_grad() const;
    const std::vector<double>& grad() const;
    /// Grad buffer, allocated (zeroed) on first use.
    std::vector<double>& grad_mut() const;
    void zero_grad() const;

    double item() const;  // scalar tensors only

    /// Rounds in place to this tensor's precision (no-op at f64).
    void round_to_precision() const;

    detail::TensorImpl* impl() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend class Tape;
    friend void record_op(const std::vector<Tensor>&, const std::vector<Tensor>&,
                          std::function<void()>);
    friend Tensor make_op_output(std::vector<int>, Precision, bool);
};

// Ordered record of primitive ops for one forward pass. Constructing a Tape
// makes it the active tape for the current thread (RAII); ops whose inputs
// require grad are recorded on it. A tape is rebuilt per forward pass and
// is single-threaded; independent tapes may live on different threads.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Reverse sweep from a scalar loss recorded on this tape. Populates
    /// grad on every participating tensor. A tape can only be walked once.
    void backward(const Tensor& loss);

    std::size_t num_nodes() const { return nodes_.size(); }

    static Tape* active();

private:
    struct Node {
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
    Tape* prev_ = nullptr;

    friend void record_op(const std::vector<Tensor>&, const std::vector<Tensor>&,
                          std::function<void()>);
};

/// Suspends recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

/// Registers a custom op on the active tape. `backward` must read output
/// grads and accumulate into input grads. No-op when recording is off.
void record_op(const std::vector<Tensor>& inputs, const std::vector<Tensor>& outputs,
               std::function<void()> backward);

/// Result tensor for a custom op: precision is the narrowest input
/// precision, requires_grad the OR over inputs.
Tensor make_op_output(std::vector<int> shape, Precision prec, bool requires_grad);

Precision common_precision(const std::vector<Tensor>& inputs);
bool any_requires_grad(const std::vector<Tensor>& inputs);

// ---- primitives ----
// Elementwise ops accept equal shapes, or a right operand whose shape is a
// trailing suffix of the left's (broadcast over the leading extents).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor exp(const Tensor& a);
Tensor softplus(const Tensor& a);
/// y = x * sqrt(numel / (||x||^2 + 1e-12)): per-component RMS becomes 1.
Tensor rms_normalize(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> new_shape);

/// Cross-entropy of a logit vector against an integer label, with the
/// usual log-sum-exp stabilization.
Tensor cross_entropy(const Tensor& logits, int label);

}  // namespace rftlab
