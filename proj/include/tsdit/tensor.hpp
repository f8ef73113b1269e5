#ifndef TSDIT_TENSOR_HPP_
#define TSDIT_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsdit/common.hpp"

namespace tsdit {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int e : s) {
    if (e < 0) throw ShapeError("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace detail {
struct TensorStorage {
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};
}  // namespace detail

// ---------------------------------------------------------------------------
// Dense row-major tensor of 64-bit floats with reverse-mode gradient
// participation. Copies are shallow views onto shared storage; reshape is a
// metadata change. A Tape (below) records backward closures while active.
// ---------------------------------------------------------------------------
class Tensor {
 public:
  Tensor() : shape_{0}, st_(std::make_shared<detail::TensorStorage>()) {}

  static Tensor zeros(const Shape& shape) {
    Tensor t;
    t.shape_ = shape;
    t.st_->data.assign(shape_numel(shape), 0.0);
    return t;
  }

  static Tensor full(const Shape& shape, double value) {
    Tensor t = zeros(shape);
    for (double& x : t.st_->data) x = value;
    return t;
  }

  static Tensor from(const Shape& shape, std::vector<double> values) {
    if (static_cast<int>(values.size()) != shape_numel(shape)) {
      throw ShapeError("data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = shape;
    t.st_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double value) { return from({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int numel() const { return static_cast<int>(st_->data.size()); }
  int dim(int axis) const { return shape_.at(static_cast<size_t>(axis)); }
  int ndim() const { return static_cast<int>(shape_.size()); }

  std::vector<double>& data() { return st_->data; }
  const std::vector<double>& data() const { return st_->data; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return st_->data[0];
  }

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  std::vector<double>& grad() {
    ensure_grad();
    return st_->grad;
  }
  const std::vector<double>& grad() const {
    if (st_->grad.empty()) throw StateError("gradient not populated");
    return st_->grad;
  }
  void ensure_grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
  }
  void zero_grad() { st_->grad.assign(st_->data.size(), 0.0); }
  void drop_grad() { st_->grad.clear(); }

  // View with the same storage and a new shape (same element count).
  Tensor reshape(const Shape& shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                       " changes element count");
    }
    Tensor t = *this;
    t.shape_ = shape;
    return t;
  }

  std::shared_ptr<detail::TensorStorage> storage() const { return st_; }

 private:
  Shape shape_;
  std::shared_ptr<detail::TensorStorage> st_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape. Constructing a Tape makes it the active recorder for the
// current thread; ops append backward closures while one is active and at
// least one input requires grad. The tape is rebuilt on every forward pass.
// ---------------------------------------------------------------------------
class Tape {
 public:
  Tape() { stack().push_back(this); }
  ~Tape() { stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() {
    if (no_grad_depth() > 0) return nullptr;
    return stack().empty() ? nullptr : stack().back();
  }

  void record(std::function<void()> op) { ops_.push_back(std::move(op)); }

  // Seeds d(loss)/d(loss) = 1 and runs recorded closures in reverse order.
  void backward(Tensor& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    }
    loss.ensure_grad();
    loss.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t size() const { return ops_.size(); }

  struct NoGradGuard {
    NoGradGuard() { ++no_grad_depth(); }
    ~NoGradGuard() { --no_grad_depth(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
  };

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }
  static int& no_grad_depth() {
    thread_local int d = 0;
    return d;
  }
  std::vector<std::function<void()>> ops_;
};

namespace detail {

using StoragePtr = std::shared_ptr<TensorStorage>;

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void accumulate(StoragePtr& st, size_t i, double g) {
  if (st->grad.empty()) st->grad.assign(st->data.size(), 0.0);
  st->grad[i] += g;
}

inline void ensure_grad_buf(StoragePtr& st) {
  if (st->grad.empty()) st->grad.assign(st->data.size(), 0.0);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Rows/cols of a tensor interpreted as a matrix over its last axis.
inline int last_dim(const Tensor& t) {
  if (t.ndim() == 0) throw ShapeError("tensor has no axes");
  return t.shape().back();
}
inline int lead_rows(const Tensor& t) {
  const int d = last_dim(t);
  return d == 0 ? 0 : t.numel() / d;
}

}  // namespace detail

// --------------------------- elementwise ops -------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::active()->record([as, bs, os, ga, gb, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) {
        if (ga) detail::accumulate(as, i, os->grad[i]);
        if (gb) detail::accumulate(bs, i, os->grad[i]);
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::active()->record([as, bs, os, ga, gb, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) {
        if (ga) detail::accumulate(as, i, os->grad[i] * bs->data[i]);
        if (gb) detail::accumulate(bs, i, os->grad[i] * as->data[i]);
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::wants_grad({&a})) {
    out.set_requires_grad(true);
    auto as = a.storage(), os = out.storage();
    Tape::active()->record([as, os, c, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) detail::accumulate(as, i, os->grad[i] * c);
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  if (detail::wants_grad({&a})) {
    out.set_requires_grad(true);
    auto as = a.storage(), os = out.storage();
    Tape::active()->record([as, os, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) {
        if (as->data[i] > 0.0) detail::accumulate(as, i, os->grad[i]);
      }
    });
  }
  return out;
}

inline Tensor silu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) {
    const double x = a.data()[i];
    out.data()[i] = x / (1.0 + std::exp(-x));
  }
  if (detail::wants_grad({&a})) {
    out.set_requires_grad(true);
    auto as = a.storage(), os = out.storage();
    Tape::active()->record([as, os, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) {
        const double x = as->data[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        detail::accumulate(as, i, os->grad[i] * (s + x * s * (1.0 - s)));
      }
    });
  }
  return out;
}

// ------------------------------ matrix ops ---------------------------------

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(a.shape()));
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (detail::wants_grad({&a})) {
    out.set_requires_grad(true);
    auto as = a.storage(), os = out.storage();
    Tape::active()->record([as, os, m, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) detail::accumulate(as, i * n + j, os->grad[j * m + i]);
    });
  }
  return out;
}

namespace detail {

inline void matmul_backward(StoragePtr as, StoragePtr bs, StoragePtr os, bool ga, bool gb, int m,
                            int k, int n) {
  if (os->grad.empty()) return;
  if (ga) {
    ensure_grad_buf(as);
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += os->grad[i * n + j] * bs->data[kk * n + j];
        as->grad[i * k + kk] += acc;
      }
  }
  if (gb) {
    ensure_grad_buf(bs);
    for (int kk = 0; kk < k; ++kk)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += as->data[i * k + kk] * os->grad[i * n + j];
        bs->grad[kk * n + j] += acc;
      }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const double av = a.data()[i * k + kk];
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) out.data()[i * n + j] += av * b.data()[kk * n + j];
    }
  if (detail::wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::active()->record(
        [as, bs, os, ga, gb, m, k, n] { detail::matmul_backward(as, bs, os, ga, gb, m, k, n); });
  }
  return out;
}

// Matmul whose inner sums run in value-sorted order, so the result is
// bitwise invariant to permutations of the contraction axis. Used for the
// attention-weights x values product, where the keys form an unordered set.
inline Tensor matmul_ordersafe(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> terms(static_cast<size_t>(k));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      for (int kk = 0; kk < k; ++kk) terms[kk] = a.data()[i * k + kk] * b.data()[kk * n + j];
      out.data()[i * n + j] = ordered_sum(terms);
    }
  if (detail::wants_grad({&a, &b})) {
    out.set_requires_grad(true);
    auto as = a.storage(), bs = b.storage(), os = out.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    Tape::active()->record(
        [as, bs, os, ga, gb, m, k, n] { detail::matmul_backward(as, bs, os, ga, gb, m, k, n); });
  }
  return out;
}

// Affine map over the last axis: y = x W + b, x:[..., d_in], W:[d_in, d_out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2) throw ShapeError("linear: weight must be rank 2, got " + shape_str(w.shape()));
  const int d_in = w.dim(0), d_out = w.dim(1);
  if (detail::last_dim(x) != d_in) {
    throw ShapeError("linear: input shape " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (b.numel() != d_out) {
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const int rows = detail::lead_rows(x);
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor out = Tensor::zeros(out_shape);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < d_out; ++j) out.data()[r * d_out + j] = b.data()[j];
    for (int i = 0; i < d_in; ++i) {
      const double xv = x.data()[r * d_in + i];
      if (xv == 0.0) continue;
      for (int j = 0; j < d_out; ++j) out.data()[r * d_out + j] += xv * w.data()[i * d_out + j];
    }
  }
  if (detail::wants_grad({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), ws = w.storage(), bs = b.storage(), os = out.storage();
    bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
    Tape::active()->record([xs, ws, bs, os, gx, gw, gb, rows, d_in, d_out]() mutable {
      if (os->grad.empty()) return;
      if (gx) {
        detail::ensure_grad_buf(xs);
        for (int r = 0; r < rows; ++r)
          for (int i = 0; i < d_in; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d_out; ++j)
              acc += os->grad[r * d_out + j] * ws->data[i * d_out + j];
            xs->grad[r * d_in + i] += acc;
          }
      }
      if (gw) {
        detail::ensure_grad_buf(ws);
        for (int i = 0; i < d_in; ++i)
          for (int j = 0; j < d_out; ++j) {
            double acc = 0.0;
            for (int r = 0; r < rows; ++r) acc += xs->data[r * d_in + i] * os->grad[r * d_out + j];
            ws->grad[i * d_out + j] += acc;
          }
      }
      if (gb) {
        detail::ensure_grad_buf(bs);
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < d_out; ++j) bs->grad[j] += os->grad[r * d_out + j];
      }
    });
  }
  return out;
}

// -------------------------- normalization ops ------------------------------

// Softmax over the last axis; max-shifted, with a canonical-order normalizer
// so outputs are invariant to key permutations.
inline Tensor softmax(const Tensor& x) {
  const int d = detail::last_dim(x);
  if (d < 1) throw ShapeError("softmax over empty axis");
  const int rows = detail::lead_rows(x);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> exps(static_cast<size_t>(d));
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + static_cast<size_t>(r) * d;
    double mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    for (int j = 0; j < d; ++j) exps[j] = std::exp(xr[j] - mx);
    std::vector<double> terms = exps;
    const double denom = ordered_sum(terms);
    for (int j = 0; j < d; ++j) out.data()[r * d + j] = exps[j] / denom;
  }
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, rows, d]() mutable {
      if (os->grad.empty()) return;
      detail::ensure_grad_buf(xs);
      for (int r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += os->grad[r * d + j] * os->data[r * d + j];
        for (int j = 0; j < d; ++j)
          xs->grad[r * d + j] += os->data[r * d + j] * (os->grad[r * d + j] - dot);
      }
    });
  }
  return out;
}

namespace detail {

inline Tensor layer_norm_impl(const Tensor& x, const Tensor* gain, const Tensor* bias,
                              double eps) {
  const int d = last_dim(x);
  if (d < 1) throw ShapeError("layer_norm over empty axis");
  const int rows = lead_rows(x);
  if (gain != nullptr && (gain->numel() != d || bias->numel() != d)) {
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(d));
  }
  Tensor out = Tensor::zeros(x.shape());
  // Cache per-row inv-std and normalized values for the backward pass.
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto normed = std::make_shared<std::vector<double>>(x.data().size());
  for (int r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + static_cast<size_t>(r) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int j = 0; j < d; ++j) {
      const double y = (xr[j] - mean) * is;
      (*normed)[r * d + j] = y;
      out.data()[r * d + j] = gain ? y * gain->data()[j] + bias->data()[j] : y;
    }
  }
  const bool track = gain ? wants_grad({&x, gain, bias}) : wants_grad({&x});
  if (track) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    StoragePtr gs = gain ? gain->storage() : nullptr;
    StoragePtr bs = bias ? bias->storage() : nullptr;
    bool gx = x.requires_grad();
    bool gg = gain != nullptr && gain->requires_grad();
    bool gb = bias != nullptr && bias->requires_grad();
    Tape::active()->record([xs, os, gs, bs, gx, gg, gb, inv_std, normed, rows, d]() mutable {
      if (os->grad.empty()) return;
      for (int r = 0; r < rows; ++r) {
        // dL/dy for the pre-affine normalized vector.
        // y_j = normed; out_j = y_j * gain_j + bias_j.
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double go = os->grad[r * d + j];
          const double gy = gs ? go * gs->data[j] : go;
          m1 += gy;
          m2 += gy * (*normed)[r * d + j];
        }
        m1 /= d;
        m2 /= d;
        if (gx) {
          ensure_grad_buf(xs);
          for (int j = 0; j < d; ++j) {
            const double go = os->grad[r * d + j];
            const double gy = gs ? go * gs->data[j] : go;
            xs->grad[r * d + j] += (gy - m1 - (*normed)[r * d + j] * m2) * (*inv_std)[r];
          }
        }
        if (gg) {
          ensure_grad_buf(gs);
          for (int j = 0; j < d; ++j) gs->grad[j] += os->grad[r * d + j] * (*normed)[r * d + j];
        }
        if (gb) {
          ensure_grad_buf(bs);
          for (int j = 0; j < d; ++j) bs->grad[j] += os->grad[r * d + j];
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  return detail::layer_norm_impl(x, &gain, &bias, eps);
}

// Layer norm without learned affine (gain 1, bias 0), as used inside the
// adaptively modulated transformer blocks.
inline Tensor layer_norm_plain(const Tensor& x, double eps = 1e-5) {
  return detail::layer_norm_impl(x, nullptr, nullptr, eps);
}

// ------------------------- assembly / reduction ----------------------------

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  if (x.ndim() != 2) throw ShapeError("slice_rows expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  if (r0 < 0 || r1 > m || r0 > r1) {
    throw IndexError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") out of range for " + std::to_string(m) + " rows");
  }
  Tensor out = Tensor::zeros({r1 - r0, n});
  for (int i = 0; i < (r1 - r0) * n; ++i) out.data()[i] = x.data()[r0 * n + i];
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, r0, r1, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < (r1 - r0) * n; ++i) detail::accumulate(xs, r0 * n + i, os->grad[i]);
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.ndim() != 2) throw ShapeError("slice_cols expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  if (c0 < 0 || c1 > n || c0 > c1) {
    throw IndexError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") out of range for " + std::to_string(n) + " cols");
  }
  const int w = c1 - c0;
  Tensor out = Tensor::zeros({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.data()[i * w + j] = x.data()[i * n + c0 + j];
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, m, n, c0, w]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) detail::accumulate(xs, i * n + c0 + j, os->grad[i * w + j]);
    });
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
  const int n = parts.front().dim(1);
  int m = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != n) {
      throw ShapeError("concat_rows: inconsistent shape " + shape_str(p.shape()));
    }
    m += p.dim(0);
  }
  Tensor out = Tensor::zeros({m, n});
  int row = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    for (int i = 0; i < p.numel(); ++i) out.data()[row * n + i] = p.data()[i];
    row += p.dim(0);
    any_grad = any_grad || p.requires_grad();
  }
  if (Tape::active() != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<detail::StoragePtr> srcs;
    std::vector<int> offsets, counts;
    std::vector<bool> track;
    int off = 0;
    for (const Tensor& p : parts) {
      srcs.push_back(p.storage());
      offsets.push_back(off);
      counts.push_back(p.numel());
      track.push_back(p.requires_grad());
      off += p.numel();
    }
    auto os = out.storage();
    Tape::active()->record([srcs, offsets, counts, track, os]() mutable {
      if (os->grad.empty()) return;
      for (size_t k = 0; k < srcs.size(); ++k) {
        if (!track[k]) continue;
        for (int i = 0; i < counts[k]; ++i) detail::accumulate(srcs[k], i, os->grad[offsets[k] + i]);
      }
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const int m = parts.front().dim(0);
  int n = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != m) {
      throw ShapeError("concat_cols: inconsistent shape " + shape_str(p.shape()));
    }
    n += p.dim(1);
  }
  Tensor out = Tensor::zeros({m, n});
  int col = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out.data()[i * n + col + j] = p.data()[i * w + j];
    col += w;
    any_grad = any_grad || p.requires_grad();
  }
  if (Tape::active() != nullptr && any_grad) {
    out.set_requires_grad(true);
    std::vector<detail::StoragePtr> srcs;
    std::vector<int> offsets, widths;
    std::vector<bool> track;
    int off = 0;
    for (const Tensor& p : parts) {
      srcs.push_back(p.storage());
      offsets.push_back(off);
      widths.push_back(p.dim(1));
      track.push_back(p.requires_grad());
      off += p.dim(1);
    }
    auto os = out.storage();
    Tape::active()->record([srcs, offsets, widths, track, os, m, n]() mutable {
      if (os->grad.empty()) return;
      for (size_t k = 0; k < srcs.size(); ++k) {
        if (!track[k]) continue;
        const int w = widths[k];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            detail::accumulate(srcs[k], i * w + j, os->grad[i * n + offsets[k] + j]);
      }
    });
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) { return concat_cols({a, b}); }

inline Tensor tile_rows(const Tensor& x, int m) {
  if (x.ndim() != 2 || x.dim(0) != 1) {
    throw ShapeError("tile_rows expects shape (1,n), got " + shape_str(x.shape()));
  }
  const int n = x.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[j];
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, m, n]() mutable {
      if (os->grad.empty()) return;
      detail::ensure_grad_buf(xs);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) xs->grad[j] += os->grad[i * n + j];
    });
  }
  return out;
}

inline Tensor mean_rows(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("mean_rows expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  if (m == 0) throw ShapeError("mean_rows over zero rows");
  Tensor out = Tensor::zeros({1, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[j] += x.data()[i * n + j];
  for (int j = 0; j < n; ++j) out.data()[j] /= m;
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, m, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) detail::accumulate(xs, i * n + j, os->grad[j] / m);
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    const int n = x.numel();
    Tape::active()->record([xs, os, n]() mutable {
      if (os->grad.empty()) return;
      for (int i = 0; i < n; ++i) detail::accumulate(xs, i, os->grad[0]);
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all of empty tensor");
  return scale(sum_all(x), 1.0 / x.numel());
}

// Inclusive prefix sum over rows; the exact inverse of first-differencing.
inline Tensor cumsum_rows(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("cumsum_rows expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      acc += x.data()[i * n + j];
      out.data()[i * n + j] = acc;
    }
  }
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, m, n]() mutable {
      if (os->grad.empty()) return;
      detail::ensure_grad_buf(xs);
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = m - 1; i >= 0; --i) {
          acc += os->grad[i * n + j];
          xs->grad[i * n + j] += acc;
        }
      }
    });
  }
  return out;
}

// Euclidean norm of each row: [m,n] -> [m,1]. The backward guards the
// singular point at zero norm with a zero subgradient.
inline Tensor l2norm_rows(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("l2norm_rows expects rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, 1});
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += x.data()[i * n + j] * x.data()[i * n + j];
    out.data()[i] = std::sqrt(acc);
  }
  if (detail::wants_grad({&x})) {
    out.set_requires_grad(true);
    auto xs = x.storage(), os = out.storage();
    Tape::active()->record([xs, os, m, n]() mutable {
      if (os->grad.empty()) return;
      detail::ensure_grad_buf(xs);
      for (int i = 0; i < m; ++i) {
        const double nv = os->data[i];
        if (nv <= 0.0) continue;
        for (int j = 0; j < n; ++j) xs->grad[i * n + j] += os->grad[i] * xs->data[i * n + j] / nv;
      }
    });
  }
  return out;
}

// Mean Huber penalty over all elements of a residual tensor.
inline Tensor huber_mean(const Tensor& r, double delta) {
  if (delta <= 0.0) throw ConfigError("huber: delta must be positive");
  const int n = r.numel();
  if (n == 0) throw ShapeError("huber of empty tensor");
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = r.data()[i];
    const double a = std::fabs(v);
    acc += a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
  }
  out.data()[0] = acc / n;
  if (detail::wants_grad({&r})) {
    out.set_requires_grad(true);
    auto rs = r.storage(), os = out.storage();
    Tape::active()->record([rs, os, delta, n]() mutable {
      if (os->grad.empty()) return;
      detail::ensure_grad_buf(rs);
      for (int i = 0; i < n; ++i) {
        const double v = rs->data[i];
        const double d = std::fabs(v) <= delta ? v : (v > 0.0 ? delta : -delta);
        rs->grad[i] += os->grad[0] * d / n;
      }
    });
  }
  return out;
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

}  // namespace tsdit

#endif  // TSDIT_TENSOR_HPP_
