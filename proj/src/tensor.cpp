#include "rlvr/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rlvr {

namespace {

thread_local Tape* g_active_tape = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw TensorError(std::string("non-finite value produced by ") + op);
  }
}

// Returns the active tape when any input participates in differentiation.
Tape* grad_tape(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return g_active_tape;
  }
  return nullptr;
}

Tensor finish(Tensor out, const char* op, Tape* tape) {
  check_finite(out, op);
  if (tape) out.impl()->requires_grad = true;
  return out;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw TensorError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

// Shape resolution for binary elementwise ops with scalar broadcast.
const Shape& broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Bwd dfdx) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  Tape* tape = grad_tape({&a});
  Tensor result = finish(make_tensor(a.shape(), std::move(out)), op, tape);
  if (tape) {
    tape->record([ai = a.handle(), oi = result.handle(), dfdx] {
      if (oi->grad.empty() || !ai->requires_grad) return;
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * dfdx(ai->data[i], oi->data[i]);
    });
  }
  return result;
}

// Accumulates d(out)/d(input) contributions when the input may be broadcast.
void accumulate_broadcast(detail::TensorImpl& in, std::size_t i, double g) {
  auto& buf = in.grad_buffer();
  buf[in.data.size() == 1 ? 0 : i] += g;
}

template <class Fwd, class Bwd>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd partials) {
  const Shape& shape = broadcast_shape(a, b, op);
  const std::size_t n = shape_size(shape);
  auto x = a.data();
  auto y = b.data();
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
  Tape* tape = grad_tape({&a, &b});
  Tensor result = finish(make_tensor(shape, std::move(out)), op, tape);
  if (tape) {
    tape->record([ai = a.handle(), bi = b.handle(), oi = result.handle(), partials, n] {
      if (oi->grad.empty()) return;
      const bool as = ai->data.size() == 1;
      const bool bs = bi->data.size() == 1;
      for (std::size_t i = 0; i < n; ++i) {
        const double xa = ai->data[as ? 0 : i];
        const double xb = bi->data[bs ? 0 : i];
        auto [da, db] = partials(xa, xb);
        const double g = oi->grad[i];
        if (ai->requires_grad) accumulate_broadcast(*ai, i, g * da);
        if (bi->requires_grad) accumulate_broadcast(*bi, i, g * db);
      }
    });
  }
  return result;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor make_tensor(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw TensorError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                      shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) { return make_tensor(std::move(shape), std::move(values)); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return make_tensor({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return make_tensor({}, {value}); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : size() / c;
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw TensorError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad_buffer(); }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor copy = make_tensor(shape(), impl_->data);
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw TensorError("backward requires a scalar loss");
  if (!loss.requires_grad()) throw TensorError("backward: loss does not depend on any tensor requiring grad");
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// ---------------------------------------------------------------------------
// ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw TensorError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  Tape* tape = grad_tape({&a, &b});
  Tensor result = finish(make_tensor({m, n}, std::move(out)), "matmul", tape);
  if (tape) {
    tape->record([ai = a.handle(), bi = b.handle(), oi = result.handle(), m, k, n] {
      if (oi->grad.empty()) return;
      ConstMap g(oi->grad.data(), m, n);
      if (ai->requires_grad) {
        MutMap(ai->grad_buffer().data(), m, k).noalias() += g * ConstMap(bi->data.data(), k, n).transpose();
      }
      if (bi->requires_grad) {
        MutMap(bi->grad_buffer().data(), k, n).noalias() += ConstMap(ai->data.data(), m, k).transpose() * g;
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to the first argument.
  return binary(a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
                [](double x, double y) { return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw TensorError("log of non-positive value " + std::to_string(v));
  }
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

double gelu_value(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Tensor gelu(const Tensor& a) {
  return unary(a, "gelu", gelu_value, [](double x, double) {
    constexpr double k = 0.7978845608028654;
    const double inner = k * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw TensorError("clamp: lo > hi");
  return unary(a, "clamp", [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, std::span<const double> lo, std::span<const double> hi) {
  if (lo.size() != a.size() || hi.size() != a.size()) throw TensorError("clamp: bound length mismatch");
  std::vector<double> out(a.size());
  std::vector<double> lo_v(lo.begin(), lo.end()), hi_v(hi.begin(), hi.end());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (lo_v[i] > hi_v[i]) throw TensorError("clamp: lo > hi");
    out[i] = std::clamp(x[i], lo_v[i], hi_v[i]);
  }
  Tape* tape = grad_tape({&a});
  Tensor result = finish(make_tensor(a.shape(), std::move(out)), "clamp", tape);
  if (tape) {
    tape->record([ai = a.handle(), oi = result.handle(), lo_v = std::move(lo_v), hi_v = std::move(hi_v)] {
      if (oi->grad.empty()) return;
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        const double x = ai->data[i];
        if (x > lo_v[i] && x < hi_v[i]) ga[i] += oi->grad[i];
      }
    });
  }
  return result;
}

Tensor add_const(const Tensor& a, std::span<const double> c) {
  if (c.size() != a.size()) throw TensorError("add_const: length mismatch");
  return add(a, make_tensor(a.shape(), std::vector<double>(c.begin(), c.end())));
}

Tensor mul_const(const Tensor& a, std::span<const double> c) {
  if (c.size() != a.size()) throw TensorError("mul_const: length mismatch");
  return mul(a, make_tensor(a.shape(), std::vector<double>(c.begin(), c.end())));
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tape* tape = grad_tape({&a});
  Tensor result = finish(Tensor::scalar(total), "sum", tape);
  if (tape) {
    tape->record([ai = a.handle(), oi = result.handle()] {
      if (oi->grad.empty()) return;
      auto& ga = ai->grad_buffer();
      for (double& g : ga) g += oi->grad[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw TensorError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.size()) throw TensorError("weighted_sum: length mismatch");
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  auto x = a.data();
  for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * x[i];
  Tape* tape = grad_tape({&a});
  Tensor result = finish(Tensor::scalar(total), "weighted_sum", tape);
  if (tape) {
    tape->record([ai = a.handle(), oi = result.handle(), w = std::move(w)] {
      if (oi->grad.empty()) return;
      auto& ga = ai->grad_buffer();
      for (std::size_t i = 0; i < w.size(); ++i) ga[i] += oi->grad[0] * w[i];
    });
  }
  return result;
}

Tensor log_softmax(const Tensor& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (cols == 0) throw TensorError("log_softmax over empty axis");
  std::vector<double> out(logits.size());
  auto x = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  Tape* tape = grad_tape({&logits});
  Tensor result = finish(make_tensor(logits.shape(), std::move(out)), "log_softmax", tape);
  if (tape) {
    tape->record([ai = logits.handle(), oi = result.handle(), rows, cols] {
      if (oi->grad.empty()) return;
      auto& ga = ai->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = oi->grad.data() + r * cols;
        const double* y = oi->data.data() + r * cols;
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[c];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] - std::exp(y[c]) * gsum;
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.size() != cols || bias.size() != cols) throw TensorError("layer_norm: gain/bias width mismatch");
  std::vector<double> out(x.size()), xhat(x.size()), rstd(rows);
  auto xd = x.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mu) * rstd[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * g[c] + b[c];
    }
  }
  Tape* tape = grad_tape({&x, &gain, &bias});
  Tensor result = finish(make_tensor(x.shape(), std::move(out)), "layer_norm", tape);
  if (tape) {
    tape->record([xi = x.handle(), gi = gain.handle(), bi = bias.handle(), oi = result.handle(),
                  xhat = std::move(xhat), rstd = std::move(rstd), rows, cols] {
      if (oi->grad.empty()) return;
      const auto& dy = oi->grad;
      if (gi->requires_grad || bi->requires_grad) {
        auto& dg = gi->grad_buffer();
        auto& db = bi->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            dg[c] += dy[r * cols + c] * xhat[r * cols + c];
            db[c] += dy[r * cols + c];
          }
        }
      }
      if (!xi->requires_grad) return;
      auto& dx = xi->grad_buffer();
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dh = dy[r * cols + c] * gi->data[c];
          m1 += dh;
          m2 += dh * xhat[r * cols + c];
        }
        m1 *= inv_n;
        m2 *= inv_n;
        for (std::size_t c = 0; c < cols; ++c) {
          const double dh = dy[r * cols + c] * gi->data[c];
          dx[r * cols + c] += rstd[r] * (dh - m1 - xhat[r * cols + c] * m2);
        }
      }
    });
  }
  return result;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding");
  const std::size_t vocab = table.shape()[0], width = table.shape()[1];
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * width);
  auto t = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw TensorError("embedding: index " + std::to_string(idx[i]) + " out of range " + std::to_string(vocab));
    }
    std::copy_n(t.data() + idx[i] * width, width, out.data() + i * width);
  }
  Tape* tape = grad_tape({&table});
  Tensor result = finish(make_tensor({idx.size(), width}, std::move(out)), "embedding", tape);
  if (tape) {
    tape->record([ti = table.handle(), oi = result.handle(), idx = std::move(idx), width] {
      if (oi->grad.empty()) return;
      auto& gt = ti->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < width; ++c) gt[idx[i] * width + c] += oi->grad[i * width + c];
      }
    });
  }
  return result;
}

Tensor pick(const Tensor& x, std::span<const std::size_t> rows, std::span<const int> cols) {
  if (rows.size() != cols.size()) throw TensorError("pick: rows/cols length mismatch");
  const std::size_t width = x.cols(), nrows = x.rows();
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> out(rows.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= nrows || cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= width) {
      throw TensorError("pick: index out of range");
    }
    flat[i] = rows[i] * width + static_cast<std::size_t>(cols[i]);
    out[i] = xd[flat[i]];
  }
  Tape* tape = grad_tape({&x});
  Tensor result = finish(Tensor::vector(std::move(out)), "pick", tape);
  if (tape) {
    tape->record([xi = x.handle(), oi = result.handle(), flat = std::move(flat)] {
      if (oi->grad.empty()) return;
      auto& gx = xi->grad_buffer();
      for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += oi->grad[i];
    });
  }
  return result;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::size_t> seq_lengths,
                        std::size_t n_heads) {
  require_2d(q, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape()) throw TensorError("causal_attention: q/k/v shape mismatch");
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) throw TensorError("causal_attention: width not divisible by heads");
  std::vector<std::size_t> lengths(seq_lengths.begin(), seq_lengths.end());
  if (std::accumulate(lengths.begin(), lengths.end(), std::size_t{0}) != n) {
    throw TensorError("causal_attention: sequence lengths do not cover all rows");
  }
  const std::size_t hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // Attention weights, stored per (sequence, head) as lower-triangular T x T blocks.
  std::size_t prob_size = 0;
  for (std::size_t t : lengths) prob_size += n_heads * t * t;
  std::vector<double> probs(prob_size, 0.0);
  std::vector<double> out(n * d, 0.0);
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();

  std::size_t row0 = 0, p0 = 0;
  std::vector<double> scores;
  for (std::size_t t_len : lengths) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t c0 = h * hd;
      double* P = probs.data() + p0 + h * t_len * t_len;
      for (std::size_t i = 0; i < t_len; ++i) {
        const double* qi = qd.data() + (row0 + i) * d + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = kd.data() + (row0 + j) * d + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          s *= inv_sqrt;
          P[i * t_len + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * t_len + j] = std::exp(P[i * t_len + j] - mx);
          z += P[i * t_len + j];
        }
        double* oi = out.data() + (row0 + i) * d + c0;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * t_len + j] /= z;
          const double* vj = vd.data() + (row0 + j) * d + c0;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += P[i * t_len + j] * vj[c];
        }
      }
    }
    row0 += t_len;
    p0 += n_heads * t_len * t_len;
  }

  Tape* tape = grad_tape({&q, &k, &v});
  Tensor result = finish(make_tensor({n, d}, std::move(out)), "causal_attention", tape);
  if (tape) {
    tape->record([qi_ = q.handle(), ki_ = k.handle(), vi_ = v.handle(), oi_ = result.handle(),
                  probs = std::move(probs), lengths = std::move(lengths), n_heads, hd, d, inv_sqrt] {
      if (oi_->grad.empty()) return;
      const auto& go = oi_->grad;
      std::vector<double> dq(qi_->data.size(), 0.0), dk(dq.size(), 0.0), dv(dq.size(), 0.0);
      std::vector<double> dp;
      std::size_t row0 = 0, p0 = 0;
      for (std::size_t t_len : lengths) {
        dp.assign(t_len, 0.0);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t c0 = h * hd;
          const double* P = probs.data() + p0 + h * t_len * t_len;
          for (std::size_t i = 0; i < t_len; ++i) {
            const double* gi = go.data() + (row0 + i) * d + c0;
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              const double* vj = vi_->data.data() + (row0 + j) * d + c0;
              double* dvj = dv.data() + (row0 + j) * d + c0;
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) {
                s += gi[c] * vj[c];
                dvj[c] += P[i * t_len + j] * gi[c];
              }
              dp[j] = s;
              dot += P[i * t_len + j] * s;
            }
            const double* qrow = qi_->data.data() + (row0 + i) * d + c0;
            double* dqi = dq.data() + (row0 + i) * d + c0;
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = P[i * t_len + j] * (dp[j] - dot) * inv_sqrt;
              const double* kj = ki_->data.data() + (row0 + j) * d + c0;
              double* dkj = dk.data() + (row0 + j) * d + c0;
              for (std::size_t c = 0; c < hd; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qrow[c];
              }
            }
          }
        }
        row0 += t_len;
        p0 += n_heads * t_len * t_len;
      }
      auto accumulate = [](detail::TensorImpl& t, const std::vector<double>& g) {
        if (!t.requires_grad) return;
        auto& buf = t.grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
      };
      accumulate(*qi_, dq);
      accumulate(*ki_, dk);
      accumulate(*vi_, dv);
    });
  }
  return result;
}

}  // namespace rlvr
