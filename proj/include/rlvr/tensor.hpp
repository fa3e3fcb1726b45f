#pragma once

// Dense double-precision tensors with a per-thread reverse-mode tape.
//
// A Tape activates itself for the calling thread on construction. Every op
// whose inputs require gradients appends a backward closure to the active
// tape; Tape::backward replays them in reverse order and then frees them.
// Without an active tape ops are pure forward computations.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rlvr {

using Shape = std::vector<std::size_t>;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;  // product of all but the last axis
  std::size_t cols() const;  // last axis

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  // All zeros when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy detached from any tape; keeps requires_grad.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(Shape, std::vector<double>);

  std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor make_tensor(Shape shape, std::vector<double> values);

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tape active on this thread, or nullptr.
  static Tape* current();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded node once in reverse.
  // The tape is empty afterwards; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* previous_ = nullptr;
};

// Suspends recording on this thread for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// ---- linear algebra -------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- elementwise (same shape, or one side a single-element tensor) --------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
// Gradient is 1 strictly inside [lo, hi] and 0 on or outside the bounds.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor clamp(const Tensor& a, std::span<const double> lo, std::span<const double> hi);
// Elementwise ops against constant (non-differentiable) vectors.
Tensor add_const(const Tensor& a, std::span<const double> c);
Tensor mul_const(const Tensor& a, std::span<const double> c);

// ---- reductions -----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// ---- sequence-model building blocks ---------------------------------------
Tensor log_softmax(const Tensor& logits);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor embedding(const Tensor& table, std::span<const int> ids);
// out[i] = x[rows[i], cols[i]]
Tensor pick(const Tensor& x, std::span<const std::size_t> rows, std::span<const int> cols);
// Multi-head causal self-attention over packed sequences: rows of q/k/v are
// the concatenation of sequences with the given lengths.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const std::size_t> seq_lengths, std::size_t n_heads);

double gelu_value(double x);

}  // namespace rlvr
