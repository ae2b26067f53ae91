#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Tensor is a shared handle to a row-major matrix with an optional gradient
// buffer. Ops run eagerly; when a Tape is active on the current thread and an
// input requires a gradient, the op appends its backward rule to that tape.
// Tape::backward replays the rules in reverse creation order, which is a
// reverse topological order because every op only sees tensors created
// before it.
//
// Sequences are stored time-major: a batch of B sequences of T steps with C
// channels is a (T*B) x C matrix whose rows [t*B, (t+1)*B) hold step t.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "biasdiff/errors.hpp"

namespace biasdiff::ad {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// NaN/Inf checks after every op. On by default in debug builds.
inline bool& check_finite() {
#ifdef NDEBUG
  static thread_local bool on = false;
#else
  static thread_local bool on = true;
#endif
  return on;
}

template <typename S>
struct TensorData {
  Matrix<S> value;
  Matrix<S> grad;  // empty until something flows into it
  bool requires_grad = false;

  Matrix<S>& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix<S>::Zero(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return grad.size() != 0; }
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Matrix<S> value, bool requires_grad = false) : d_(std::make_shared<TensorData<S>>()) {
    d_->value = std::move(value);
    d_->requires_grad = requires_grad;
  }

  static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false) {
    return Tensor(Matrix<S>::Zero(rows, cols), requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  Eigen::Index rows() const { return d_->value.rows(); }
  Eigen::Index cols() const { return d_->value.cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  Eigen::Index numel() const { return d_->value.size(); }

  const Matrix<S>& value() const { return d_->value; }
  Matrix<S>& mutable_value() { return d_->value; }
  // Zero-filled when no gradient has been accumulated.
  Matrix<S> grad() const { return d_->has_grad() ? d_->grad : Matrix<S>::Zero(rows(), cols()); }
  bool has_grad() const { return d_->has_grad(); }
  void zero_grad() { d_->grad.resize(0, 0); }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  S item() const {
    if (numel() != 1) throw ShapeError("item() on a " + shape_string() + " tensor");
    return d_->value(0, 0);
  }

  std::string shape_string() const {
    return defined() ? "(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")" : "(undefined)";
  }

  const std::shared_ptr<TensorData<S>>& data() const { return d_; }

 private:
  std::shared_ptr<TensorData<S>> d_;
};

// Records backward rules while alive; at most one tape per thread and scalar
// type is active, and constructing one makes it active until destruction.
template <typename S>
class Tape {
 public:
  Tape() : previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const { return rules_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule once, newest
  // first. The rules are released afterwards.
  void backward(const Tensor<S>& loss) {
    if (consumed_) throw GradientError("backward called twice on the same tape");
    if (!loss.defined() || loss.numel() != 1) {
      throw GradientError("backward needs a scalar loss, got " + loss.shape_string());
    }
    if (!loss.requires_grad()) throw GradientError("loss does not depend on any tensor that requires a gradient");
    consumed_ = true;
    loss.data()->grad_buffer().setOnes();
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    rules_.clear();
    rules_.shrink_to_fit();
  }

 private:
  std::vector<std::function<void()>> rules_;
  Tape* previous_;
  bool consumed_ = false;
  static inline thread_local Tape* active_ = nullptr;
};

namespace detail {

template <typename S>
bool tracking(std::initializer_list<const Tensor<S>*> inputs) {
  if (!Tape<S>::active()) return false;
  for (const Tensor<S>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename S>
Tensor<S> result(Matrix<S>&& value, bool requires_grad, const char* op) {
  if (check_finite() && !value.allFinite()) throw std::domain_error(std::string(op) + " produced a non-finite value");
  return Tensor<S>(std::move(value), requires_grad);
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  }
}

template <typename S>
void require_defined(const Tensor<S>& a, const char* op) {
  if (!a.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_defined(a, "matmul");
  detail::require_defined(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_string() + " times " + b.shape_string());
  Matrix<S> v(a.rows(), b.cols());
  v.noalias() = a.value() * b.value();
  const bool track = detail::tracking<S>({&a, &b});
  Tensor<S> out = detail::result(std::move(v), track, "matmul");
  if (track) {
    Tape<S>::active()->record([A = a.data(), B = b.data(), O = out.data()] {
      if (!O->has_grad()) return;
      if (A->requires_grad) A->grad_buffer().noalias() += O->grad * B->value.transpose();
      if (B->requires_grad) B->grad_buffer().noalias() += A->value.transpose() * O->grad;
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  const bool track = detail::tracking<S>({&a, &b});
  Tensor<S> out = detail::result<S>(a.value() + b.value(), track, "add");
  if (track) {
    Tape<S>::active()->record([A = a.data(), B = b.data(), O = out.data()] {
      if (!O->has_grad()) return;
      if (A->requires_grad) A->grad_buffer() += O->grad;
      if (B->requires_grad) B->grad_buffer() += O->grad;
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const bool track = detail::tracking<S>({&a, &b});
  Tensor<S> out = detail::result<S>(a.value() - b.value(), track, "sub");
  if (track) {
    Tape<S>::active()->record([A = a.data(), B = b.data(), O = out.data()] {
      if (!O->has_grad()) return;
      if (A->requires_grad) A->grad_buffer() += O->grad;
      if (B->requires_grad) B->grad_buffer() -= O->grad;
    });
  }
  return out;
}

// Elementwise product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  const bool track = detail::tracking<S>({&a, &b});
  Tensor<S> out = detail::result<S>(a.value().cwiseProduct(b.value()), track, "mul");
  if (track) {
    Tape<S>::active()->record([A = a.data(), B = b.data(), O = out.data()] {
      if (!O->has_grad()) return;
      if (A->requires_grad) A->grad_buffer() += O->grad.cwiseProduct(B->value);
      if (B->requires_grad) B->grad_buffer() += O->grad.cwiseProduct(A->value);
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
  detail::require_defined(a, "scale");
  const bool track = detail::tracking<S>({&a});
  Tensor<S> out = detail::result<S>(a.value() * s, track, "scale");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data(), s] {
      if (O->has_grad()) A->grad_buffer() += O->grad * s;
    });
  }
  return out;
}

// a (N x C) plus a 1 x C row broadcast over rows; the only broadcast supported.
template <typename S>
Tensor<S> add_bias(const Tensor<S>& a, const Tensor<S>& bias) {
  detail::require_defined(a, "add_bias");
  detail::require_defined(bias, "add_bias");
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_bias: bias " + bias.shape_string() + " does not fit " + a.shape_string());
  }
  const bool track = detail::tracking<S>({&a, &bias});
  Matrix<S> v = a.value();
  v.rowwise() += bias.value().row(0);
  Tensor<S> out = detail::result(std::move(v), track, "add_bias");
  if (track) {
    Tape<S>::active()->record([A = a.data(), B = bias.data(), O = out.data()] {
      if (!O->has_grad()) return;
      if (A->requires_grad) A->grad_buffer() += O->grad;
      if (B->requires_grad) B->grad_buffer() += O->grad.colwise().sum();
    });
  }
  return out;
}

// Side-by-side concatenation along columns (feature axis).
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool track = false;
  for (const auto& p : parts) {
    detail::require_defined(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: " + parts[0].shape_string() + " and " + p.shape_string());
    cols += p.cols();
    track = track || detail::tracking<S>({&p});
  }
  Matrix<S> v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  Tensor<S> out = detail::result(std::move(v), track, "concat_cols");
  if (track) {
    std::vector<std::shared_ptr<TensorData<S>>> ins;
    for (const auto& p : parts) ins.push_back(p.data());
    Tape<S>::active()->record([ins = std::move(ins), O = out.data()] {
      if (!O->has_grad()) return;
      Eigen::Index c = 0;
      for (const auto& in : ins) {
        const Eigen::Index w = in->value.cols();
        if (in->requires_grad) in->grad_buffer() += O->grad.middleCols(c, w);
        c += w;
      }
    });
  }
  return out;
}

// Stacking along rows (time / batch axis).
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool track = false;
  for (const auto& p : parts) {
    detail::require_defined(p, "concat_rows");
    if (p.cols() != cols) throw ShapeError("concat_rows: " + parts[0].shape_string() + " and " + p.shape_string());
    rows += p.rows();
    track = track || detail::tracking<S>({&p});
  }
  Matrix<S> v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  Tensor<S> out = detail::result(std::move(v), track, "concat_rows");
  if (track) {
    std::vector<std::shared_ptr<TensorData<S>>> ins;
    for (const auto& p : parts) ins.push_back(p.data());
    Tape<S>::active()->record([ins = std::move(ins), O = out.data()] {
      if (!O->has_grad()) return;
      Eigen::Index r = 0;
      for (const auto& in : ins) {
        const Eigen::Index h = in->value.rows();
        if (in->requires_grad) in->grad_buffer() += O->grad.middleRows(r, h);
        r += h;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& a, Eigen::Index start, Eigen::Index count) {
  detail::require_defined(a, "slice_rows");
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + a.shape_string());
  }
  const bool track = detail::tracking<S>({&a});
  Tensor<S> out = detail::result<S>(a.value().middleRows(start, count), track, "slice_rows");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data(), start, count] {
      if (O->has_grad()) A->grad_buffer().middleRows(start, count) += O->grad;
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, Eigen::Index start, Eigen::Index count) {
  detail::require_defined(a, "slice_cols");
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + a.shape_string());
  }
  const bool track = detail::tracking<S>({&a});
  Tensor<S> out = detail::result<S>(a.value().middleCols(start, count), track, "slice_cols");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data(), start, count] {
      if (O->has_grad()) A->grad_buffer().middleCols(start, count) += O->grad;
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  detail::require_defined(a, "sigmoid");
  const bool track = detail::tracking<S>({&a});
  Matrix<S> v = a.value().unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
  Tensor<S> out = detail::result(std::move(v), track, "sigmoid");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data()] {
      if (!O->has_grad()) return;
      const auto& y = O->value.array();
      A->grad_buffer().array() += O->grad.array() * y * (S(1) - y);
    });
  }
  return out;
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
  detail::require_defined(a, "tanh");
  const bool track = detail::tracking<S>({&a});
  Matrix<S> v = a.value().array().tanh().matrix();
  Tensor<S> out = detail::result(std::move(v), track, "tanh");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data()] {
      if (!O->has_grad()) return;
      const auto& y = O->value.array();
      A->grad_buffer().array() += O->grad.array() * (S(1) - y * y);
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  detail::require_defined(a, "relu");
  const bool track = detail::tracking<S>({&a});
  Tensor<S> out = detail::result<S>(a.value().cwiseMax(S(0)), track, "relu");
  if (track) {
    Tape<S>::active()->record([A = a.data(), O = out.data()] {
      if (!O->has_grad()) return;
      A->grad_buffer().array() += (A->value.array() > S(0)).select(O->grad.array(), S(0));
    });
  }
  return out;
}

// Mean of squared differences over all elements; 1 x 1.
template <typename S>
Tensor<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const bool track = detail::tracking<S>({&pred, &target});
  const S n = static_cast<S>(pred.numel());
  Matrix<S> v(1, 1);
  v(0, 0) = (pred.value() - target.value()).squaredNorm() / n;
  Tensor<S> out = detail::result(std::move(v), track, "mse_loss");
  if (track) {
    Tape<S>::active()->record([P = pred.data(), T = target.data(), O = out.data(), n] {
      if (!O->has_grad()) return;
      const S g = O->grad(0, 0) * S(2) / n;
      if (P->requires_grad) P->grad_buffer() += g * (P->value - T->value);
      if (T->requires_grad) T->grad_buffer() -= g * (P->value - T->value);
    });
  }
  return out;
}

// Causal dilated 1-D convolution over time-major sequences.
//   x: (T*B) x Cin, weight: (K*Cin) x Cout with tap k in rows [k*Cin, (k+1)*Cin),
//   bias: 1 x Cout.
// y[t] = bias + sum_k x[t - (K-1-k)*dilation] W_k, with x = 0 before t = 0, so
// y[t] only depends on x[0..t].
template <typename S>
Tensor<S> causal_conv1d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, int kernel, int dilation,
                        Eigen::Index steps) {
  detail::require_defined(x, "causal_conv1d");
  if (kernel < 1 || dilation < 1 || steps < 1 || x.rows() % steps != 0) {
    throw ShapeError("causal_conv1d: input " + x.shape_string() + " is not " + std::to_string(steps) +
                     " time steps, or kernel/dilation < 1");
  }
  const Eigen::Index cin = x.cols();
  if (weight.rows() != kernel * cin || bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("causal_conv1d: weight " + weight.shape_string() + " / bias " + bias.shape_string() +
                     " do not fit kernel " + std::to_string(kernel) + " over " + x.shape_string());
  }
  const Eigen::Index batch = x.rows() / steps;
  const Eigen::Index cout = weight.cols();
  Matrix<S> v(x.rows(), cout);
  v.rowwise() = bias.value().row(0);
  for (int k = 0; k < kernel; ++k) {
    const Eigen::Index shift = static_cast<Eigen::Index>(kernel - 1 - k) * dilation * batch;
    if (shift >= x.rows()) continue;
    const Eigen::Index n = x.rows() - shift;
    v.bottomRows(n).noalias() += x.value().topRows(n) * weight.value().middleRows(k * cin, cin);
  }
  const bool track = detail::tracking<S>({&x, &weight, &bias});
  Tensor<S> out = detail::result(std::move(v), track, "causal_conv1d");
  if (track) {
    Tape<S>::active()->record(
        [X = x.data(), Wt = weight.data(), Bs = bias.data(), O = out.data(), kernel, dilation, batch, cin] {
          if (!O->has_grad()) return;
          const Eigen::Index rows = X->value.rows();
          for (int k = 0; k < kernel; ++k) {
            const Eigen::Index shift = static_cast<Eigen::Index>(kernel - 1 - k) * dilation * batch;
            if (shift >= rows) continue;
            const Eigen::Index n = rows - shift;
            if (X->requires_grad) {
              X->grad_buffer().topRows(n).noalias() +=
                  O->grad.bottomRows(n) * Wt->value.middleRows(k * cin, cin).transpose();
            }
            if (Wt->requires_grad) {
              Wt->grad_buffer().middleRows(k * cin, cin).noalias() +=
                  X->value.topRows(n).transpose() * O->grad.bottomRows(n);
            }
          }
          if (Bs->requires_grad) Bs->grad_buffer() += O->grad.colwise().sum();
        });
  }
  return out;
}

// (T*B) x C -> B x C, mean over the T steps.
template <typename S>
Tensor<S> time_mean(const Tensor<S>& x, Eigen::Index steps) {
  detail::require_defined(x, "time_mean");
  if (steps < 1 || x.rows() % steps != 0) throw ShapeError("time_mean: " + x.shape_string() + " over " + std::to_string(steps) + " steps");
  const Eigen::Index batch = x.rows() / steps;
  Matrix<S> v = Matrix<S>::Zero(batch, x.cols());
  for (Eigen::Index t = 0; t < steps; ++t) v += x.value().middleRows(t * batch, batch);
  v /= static_cast<S>(steps);
  const bool track = detail::tracking<S>({&x});
  Tensor<S> out = detail::result(std::move(v), track, "time_mean");
  if (track) {
    Tape<S>::active()->record([X = x.data(), O = out.data(), steps, batch] {
      if (!O->has_grad()) return;
      const Matrix<S> g = O->grad / static_cast<S>(steps);
      auto& gx = X->grad_buffer();
      for (Eigen::Index t = 0; t < steps; ++t) gx.middleRows(t * batch, batch) += g;
    });
  }
  return out;
}

// B x C -> (T*B) x C, repeating the rows at every step.
template <typename S>
Tensor<S> time_broadcast(const Tensor<S>& x, Eigen::Index steps) {
  detail::require_defined(x, "time_broadcast");
  if (steps < 1) throw ShapeError("time_broadcast: steps < 1");
  const Eigen::Index batch = x.rows();
  Matrix<S> v(batch * steps, x.cols());
  for (Eigen::Index t = 0; t < steps; ++t) v.middleRows(t * batch, batch) = x.value();
  const bool track = detail::tracking<S>({&x});
  Tensor<S> out = detail::result(std::move(v), track, "time_broadcast");
  if (track) {
    Tape<S>::active()->record([X = x.data(), O = out.data(), steps, batch] {
      if (!O->has_grad()) return;
      auto& gx = X->grad_buffer();
      for (Eigen::Index t = 0; t < steps; ++t) gx += O->grad.middleRows(t * batch, batch);
    });
  }
  return out;
}

// GRU parameters with gate blocks ordered (z, r, n) along the columns.
template <typename S>
struct GruParams {
  Tensor<S> w_input;   // I x 3H
  Tensor<S> w_hidden;  // H x 3H
  Tensor<S> bias;      // 1 x 3H

  Eigen::Index hidden() const { return w_hidden.rows(); }
};

// One GRU step composed from primitives:
//   z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
//   n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * h + z * n.
template <typename S>
Tensor<S> gru_cell(const Tensor<S>& x, const Tensor<S>& h, const GruParams<S>& p) {
  const Eigen::Index H = p.hidden();
  if (p.w_input.cols() != 3 * H || p.w_hidden.cols() != 3 * H || p.bias.cols() != 3 * H || x.cols() != p.w_input.rows() ||
      h.cols() != H || x.rows() != h.rows()) {
    throw ShapeError("gru_cell: x " + x.shape_string() + ", h " + h.shape_string() + ", W_input " +
                     p.w_input.shape_string() + ", W_hidden " + p.w_hidden.shape_string());
  }
  const Tensor<S> ax = add_bias(matmul(x, p.w_input), p.bias);
  const Tensor<S> zr = sigmoid(add(slice_cols(ax, 0, 2 * H), matmul(h, slice_cols(p.w_hidden, 0, 2 * H))));
  const Tensor<S> z = slice_cols(zr, 0, H);
  const Tensor<S> r = slice_cols(zr, H, H);
  const Tensor<S> n = tanh(add(slice_cols(ax, 2 * H, H), matmul(mul(r, h), slice_cols(p.w_hidden, 2 * H, H))));
  return add(h, mul(z, sub(n, h)));
}

// Whole-sequence GRU recurrence from a zero initial state, as one op with a
// hand-written backward-through-time.
//   a: (T*B) x 3H, the input projections x W + b for every step
//   returns (T*B) x H, the hidden state after every step
template <typename S>
Tensor<S> gru_recurrence(const Tensor<S>& a, const Tensor<S>& w_hidden, Eigen::Index steps) {
  detail::require_defined(a, "gru_recurrence");
  detail::require_defined(w_hidden, "gru_recurrence");
  const Eigen::Index H = w_hidden.rows();
  if (w_hidden.cols() != 3 * H || a.cols() != 3 * H || steps < 1 || a.rows() % steps != 0) {
    throw ShapeError("gru_recurrence: projections " + a.shape_string() + " vs W_hidden " + w_hidden.shape_string() +
                     " over " + std::to_string(steps) + " steps");
  }
  const Eigen::Index B = a.rows() / steps;
  const bool track = detail::tracking<S>({&a, &w_hidden});

  Matrix<S> hs(a.rows(), H);
  // Gate activations kept for the backward pass: (T*B) x 3H as (z, r, n).
  auto gates = std::make_shared<Matrix<S>>(track ? a.rows() : 0, 3 * H);
  Matrix<S> h = Matrix<S>::Zero(B, H);
  Matrix<S> pre_zr(B, 2 * H), pre_n(B, H), rh(B, H), zr(B, 2 * H), n(B, H);
  const auto& W = w_hidden.value();
  for (Eigen::Index t = 0; t < steps; ++t) {
    const auto at = a.value().middleRows(t * B, B);
    pre_zr = at.leftCols(2 * H);
    pre_zr.noalias() += h * W.leftCols(2 * H);
    zr = pre_zr.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
    rh = zr.rightCols(H).cwiseProduct(h);
    pre_n = at.rightCols(H);
    pre_n.noalias() += rh * W.rightCols(H);
    n = pre_n.array().tanh().matrix();
    h += zr.leftCols(H).cwiseProduct(n - h);
    hs.middleRows(t * B, B) = h;
    if (track) {
      gates->middleRows(t * B, B).leftCols(2 * H) = zr;
      gates->middleRows(t * B, B).rightCols(H) = n;
    }
  }
  Tensor<S> out = detail::result(std::move(hs), track, "gru_recurrence");
  if (track) {
    Tape<S>::active()->record([A = a.data(), Wt = w_hidden.data(), O = out.data(), gates, steps, B, H] {
      if (!O->has_grad()) return;
      const auto& W = Wt->value;
      Matrix<S> da(A->value.rows(), 3 * H);
      Matrix<S> dh = Matrix<S>::Zero(B, H), dzr(B, 2 * H), dn(B, H), drh(B, H), hprev(B, H), rh(B, H);
      Matrix<S> dW = Matrix<S>::Zero(H, 3 * H);
      for (Eigen::Index t = steps - 1; t >= 0; --t) {
        if (t > 0) {
          hprev = O->value.middleRows((t - 1) * B, B);
        } else {
          hprev.setZero();
        }
        const auto g = gates->middleRows(t * B, B);
        const auto z = g.leftCols(H).array();
        const auto r = g.middleCols(H, H).array();
        const auto nn = g.rightCols(H).array();
        dh += O->grad.middleRows(t * B, B);
        // h' = h + z (n - h)
        dn = (dh.array() * z * (S(1) - nn * nn)).matrix();
        dzr.leftCols(H) = (dh.array() * (nn - hprev.array()) * z * (S(1) - z)).matrix();
        drh.noalias() = dn * W.rightCols(H).transpose();
        dzr.rightCols(H) = (drh.array() * hprev.array() * r * (S(1) - r)).matrix();
        rh = (r * hprev.array()).matrix();
        dW.rightCols(H).noalias() += rh.transpose() * dn;
        dW.leftCols(2 * H).noalias() += hprev.transpose() * dzr;
        Matrix<S> dprev = (dh.array() * (S(1) - z) + drh.array() * r).matrix();
        dprev.noalias() += dzr * W.leftCols(2 * H).transpose();
        da.middleRows(t * B, B).leftCols(2 * H) = dzr;
        da.middleRows(t * B, B).rightCols(H) = dn;
        dh = std::move(dprev);
      }
      if (A->requires_grad) A->grad_buffer() += da;
      if (Wt->requires_grad) Wt->grad_buffer() += dW;
    });
  }
  return out;
}

// Full GRU layer over a time-major sequence, zero initial state.
template <typename S>
Tensor<S> gru_sequence(const Tensor<S>& x, const GruParams<S>& p, Eigen::Index steps) {
  if (x.cols() != p.w_input.rows()) {
    throw ShapeError("gru_sequence: input " + x.shape_string() + " vs W_input " + p.w_input.shape_string());
  }
  return gru_recurrence(add_bias(matmul(x, p.w_input), p.bias), p.w_hidden, steps);
}

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
};

// One bias-corrected Adam update from the parameters' current gradients.
// Parameters without a gradient count as a zero gradient.
template <typename S>
void adam_step(std::span<Tensor<S>> params, AdamState<S>& st) {
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
      st.v.push_back(Matrix<S>::Zero(p.rows(), p.cols()));
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: parameter list changed size");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(st.cfg.beta1), b2 = static_cast<S>(st.cfg.beta2);
  const S step_size = static_cast<S>(st.cfg.lr / c1);
  const S inv_sqrt_c2 = static_cast<S>(1.0 / std::sqrt(c2));
  const S eps = static_cast<S>(st.cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = params[i];
    if (st.m[i].rows() != p.rows() || st.m[i].cols() != p.cols()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
    if (!p.has_grad()) {
      st.m[i] *= b1;
      st.v[i] *= b2;
    } else {
      const Matrix<S>& g = p.data()->grad;
      st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
      st.v[i] = b2 * st.v[i] + (S(1) - b2) * g.cwiseProduct(g);
    }
    p.mutable_value().array() -=
        step_size * st.m[i].array() / ((st.v[i].array().sqrt() * inv_sqrt_c2) + eps);
  }
}

}  // namespace biasdiff::ad
