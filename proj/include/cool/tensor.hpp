#pragma once
// Dense double-precision tensors with a reverse-mode autodiff tape.
//
// Tensors are cheap value handles onto a shared node. Ops are free functions;
// each one that sees a gradient-tracked input records its backward rule on the
// output node. backward() runs one topological sweep from a scalar root.
// Every forward kernel checks its output for NaN/Inf and fails naming itself.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cool/common.hpp"

namespace cool {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Value and tape node in one. Leaves have no parents; interior nodes carry
// the producing op tag and a closure that scatters the node's gradient into
// its parents. Tape order is implied by the DAG; backward() visits each
// reachable node exactly once.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
  std::string op;            // producing op, empty for leaves
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::size_t numel() const { return data.size(); }

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_->data.assign(shape_numel(shape), 0.0);
    t.impl_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
      throw Error("tensor: shape " + shape_str(shape) + " does not match " +
                  std::to_string(data.size()) + " values");
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }

  double value() const {
    if (numel() != 1) throw Error("tensor: value() on non-scalar " + shape_str(shape()));
    return impl_->data[0];
  }

  double at(std::initializer_list<std::size_t> idx) const {
    return impl_->data[flat_index(idx)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (impl_->grad.empty()) throw Error("tensor: gradient not populated");
    return impl_->grad;
  }
  std::vector<double>& grad_buffer() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  const TensorImplPtr& node() const { return impl_; }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw Error("tensor: index rank mismatch");
    std::size_t flat = 0, i = 0;
    for (std::size_t v : idx) {
      flat = flat * s[i] + v;
      ++i;
    }
    return flat;
  }

  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}
  TensorImplPtr impl_;

  friend Tensor make_op(const char*, Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(TensorImpl&)>);
};

// Boolean companion tensor; 1 = kept/valid. Not differentiable.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> on;

  static Mask all(Shape shape, bool value = true) {
    Mask m;
    m.on.assign(shape_numel(shape), value ? 1 : 0);
    m.shape = std::move(shape);
    return m;
  }

  std::uint8_t& at2(std::size_t i, std::size_t j) { return on[i * shape[1] + j]; }
  std::uint8_t at2(std::size_t i, std::size_t j) const { return on[i * shape[1] + j]; }
};

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("op '") + op + "' produced a non-finite value");
    }
  }
}

inline Tensor make_op(const char* op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs, std::function<void(TensorImpl&)> bw) {
  check_finite(op, data);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || t.requires_grad();
  impl->requires_grad = rg;
  if (rg) {
    impl->op = op;
    impl->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) impl->parents.push_back(t.node());
    impl->backward_fn = std::move(bw);
  }
  return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// elementwise ops (binary ops broadcast b over leading dims: numel(b) == 1 or
// b.shape is a suffix of a.shape)
// ---------------------------------------------------------------------------

namespace detail {

inline void require_broadcastable(const char* op, const Tensor& a, const Tensor& b) {
  if (b.numel() == 1) return;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  if (ok) {
    for (std::size_t i = 0; i < sb.size(); ++i) {
      if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i]) ok = false;
    }
  }
  if (!ok) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_broadcastable("add", a, b);
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i % nb];
  auto pa = a.node();
  auto pb = b.node();
  return make_op("add", a.shape(), std::move(out), {a, b}, [pa, pb, nb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_broadcastable("sub", a, b);
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i % nb];
  auto pa = a.node();
  auto pb = b.node();
  return make_op("sub", a.shape(), std::move(out), {a, b}, [pa, pb, nb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_broadcastable("mul", a, b);
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i % nb];
  auto pa = a.node();
  auto pb = b.node();
  return make_op("mul", a.shape(), std::move(out), {a, b}, [pa, pb, nb](TensorImpl& self) {
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        ga[i] += self.grad[i] * pb->data[i % nb];
      }
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        gb[i % nb] += self.grad[i] * pa->data[i];
      }
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto pa = a.node();
  return make_op("scale", a.shape(), std::move(out), {a}, [pa, s](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto pa = a.node();
  return make_op("relu", a.shape(), std::move(out), {a}, [pa](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa->data[i] > 0.0) ga[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// a: [m,k] or [B,m,k] (leading batch dim flattened against a shared b: [k,n]).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || (a.rank() != 2 && a.rank() != 3)) {
    throw Error("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  }
  const std::size_t k = a.shape().back();
  if (k != b.dim(0)) {
    throw Error("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  }
  const std::size_t rows = a.numel() / k;
  const std::size_t n = b.dim(1);
  std::vector<double> out(rows * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), rows, n, k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  auto pa = a.node();
  auto pb = b.node();
  return make_op("matmul", std::move(out_shape), std::move(out), {a, b},
                 [pa, pb, rows, n, k](TensorImpl& self) {
                   if (pa->requires_grad) {
                     detail::gemm_nt(self.grad.data(), pb->data.data(), pa->grad_buffer().data(),
                                     rows, k, n);
                   }
                   if (pb->requires_grad) {
                     detail::gemm_tn(pa->data.data(), self.grad.data(), pb->grad_buffer().data(),
                                     k, n, rows);
                   }
                 });
}

// ---------------------------------------------------------------------------
// softmax along an axis with an optional validity mask
// ---------------------------------------------------------------------------

// Masked entries get exactly zero; unmasked entries are max-stabilized and sum
// to one along the axis. A fully masked slice is an error.
inline Tensor softmax(const Tensor& x, std::size_t axis, const Mask* mask = nullptr) {
  if (axis >= x.rank()) {
    throw Error("softmax: axis " + std::to_string(axis) + " out of range for " +
                shape_str(x.shape()));
  }
  if (mask && mask->shape != x.shape()) {
    throw Error("softmax: mask shape " + shape_str(mask->shape) + " != input " +
                shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  const std::size_t n = s[axis];
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];

  std::vector<double> out(x.numel(), 0.0);
  const auto& xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = base + j * inner;
        if (!mask || mask->on[idx]) mx = std::max(mx, xd[idx]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) {
        throw Error("softmax: fully masked slice along axis " + std::to_string(axis));
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = base + j * inner;
        if (!mask || mask->on[idx]) {
          out[idx] = std::exp(xd[idx] - mx);
          denom += out[idx];
        }
      }
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = base + j * inner;
        if (!mask || mask->on[idx]) out[idx] /= denom;
      }
    }
  }
  auto pa = x.node();
  return make_op("softmax", x.shape(), std::move(out), {x},
                 [pa, n, inner, outer](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   const auto& y = self.data;
                   const auto& gy = self.grad;
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t in = 0; in < inner; ++in) {
                       const std::size_t base = o * n * inner + in;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         const std::size_t idx = base + j * inner;
                         dot += y[idx] * gy[idx];
                       }
                       for (std::size_t j = 0; j < n; ++j) {
                         const std::size_t idx = base + j * inner;
                         ga[idx] += y[idx] * (gy[idx] - dot);
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// window operators: centered unfold/fold (exact adjoints) and valid unfold
// ---------------------------------------------------------------------------

namespace detail {

inline void require_odd_window(const char* op, std::size_t k) {
  if (k < 1 || k % 2 == 0) {
    throw Error(std::string(op) + ": window size must be odd and >= 1, got " + std::to_string(k));
  }
}

// out[i,r,:] = x[i+r-k/2,:] or zeros when out of range. out is [L,K,F].
inline void unfold1d_raw(const double* x, std::size_t L, std::size_t F, std::size_t K,
                         double* out) {
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(K / 2);
  std::fill(out, out + L * K * F, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t r = 0; r < K; ++r) {
      const std::ptrdiff_t src =
          static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(r) - c;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
      const double* row = x + static_cast<std::size_t>(src) * F;
      double* dst = out + (i * K + r) * F;
      std::copy(row, row + F, dst);
    }
  }
}

// out[p,:] = sum over (u,j) with u+j-k/2 == p of y[u,j,:]. y is [L,K,F].
// Reduction order: ascending anchor u, then window row j (deterministic).
inline void fold1d_raw(const double* y, std::size_t L, std::size_t F, std::size_t K, double* out) {
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(K / 2);
  std::fill(out, out + L * F, 0.0);
  for (std::size_t u = 0; u < L; ++u) {
    for (std::size_t j = 0; j < K; ++j) {
      const std::ptrdiff_t p =
          static_cast<std::ptrdiff_t>(u) + static_cast<std::ptrdiff_t>(j) - c;
      if (p < 0 || p >= static_cast<std::ptrdiff_t>(L)) continue;
      const double* src = y + (u * K + j) * F;
      double* dst = out + static_cast<std::size_t>(p) * F;
      for (std::size_t f = 0; f < F; ++f) dst[f] += src[f];
    }
  }
}

}  // namespace detail

// Validity of window slots: on iff the source row i+r-K/2 is inside [0,L).
inline Mask unfold_validity(std::size_t L, std::size_t K) {
  detail::require_odd_window("unfold1d", K);
  Mask m = Mask::all({L, K}, false);
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(K / 2);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t r = 0; r < K; ++r) {
      const std::ptrdiff_t src =
          static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(r) - c;
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(L)) m.at2(i, r) = 1;
    }
  }
  return m;
}

inline Tensor unfold1d(const Tensor& x, std::size_t K) {
  detail::require_odd_window("unfold1d", K);
  if (x.rank() != 2) throw Error("unfold1d: expected [LxF] input, got " + shape_str(x.shape()));
  const std::size_t L = x.dim(0), F = x.dim(1);
  std::vector<double> out(L * K * F);
  detail::unfold1d_raw(x.data().data(), L, F, K, out.data());
  auto pa = x.node();
  return make_op("unfold1d", {L, K, F}, std::move(out), {x}, [pa, L, F, K](TensorImpl& self) {
    // adjoint of unfold is fold
    std::vector<double> gx(L * F);
    detail::fold1d_raw(self.grad.data(), L, F, K, gx.data());
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) ga[i] += gx[i];
  });
}

inline Tensor fold1d(const Tensor& y) {
  if (y.rank() != 3) throw Error("fold1d: expected [LxKxF] input, got " + shape_str(y.shape()));
  const std::size_t L = y.dim(0), K = y.dim(1), F = y.dim(2);
  detail::require_odd_window("fold1d", K);
  std::vector<double> out(L * F);
  detail::fold1d_raw(y.data().data(), L, F, K, out.data());
  auto pa = y.node();
  return make_op("fold1d", {L, F}, std::move(out), {y}, [pa, L, F, K](TensorImpl& self) {
    // adjoint of fold is unfold
    std::vector<double> gy(L * K * F);
    detail::unfold1d_raw(self.grad.data(), L, F, K, gy.data());
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

// Valid-mode sliding windows for the conv block: out[i,r,:] = x[i+r,:],
// i in [0, L-w+1). Any width >= 1 allowed.
inline Tensor unfold_valid(const Tensor& x, std::size_t w) {
  if (x.rank() != 2) {
    throw Error("unfold_valid: expected [LxF] input, got " + shape_str(x.shape()));
  }
  if (w < 1) throw Error("unfold_valid: width must be >= 1");
  const std::size_t L = x.dim(0), F = x.dim(1);
  if (L < w) {
    throw Error("unfold_valid: window of width " + std::to_string(w) +
                " does not fit length " + std::to_string(L));
  }
  const std::size_t Lp = L - w + 1;
  std::vector<double> out(Lp * w * F);
  for (std::size_t i = 0; i < Lp; ++i) {
    for (std::size_t r = 0; r < w; ++r) {
      const double* src = x.data().data() + (i + r) * F;
      std::copy(src, src + F, out.data() + (i * w + r) * F);
    }
  }
  auto pa = x.node();
  return make_op("unfold_valid", {Lp, w, F}, std::move(out), {x},
                 [pa, Lp, w, F](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   for (std::size_t i = 0; i < Lp; ++i) {
                     for (std::size_t r = 0; r < w; ++r) {
                       const double* g = self.grad.data() + (i * w + r) * F;
                       double* dst = ga.data() + (i + r) * F;
                       for (std::size_t f = 0; f < F; ++f) dst[f] += g[f];
                     }
                   }
                 });
}

// Zero padding of a 2-D tensor on both axes.
inline Tensor pad2d(const Tensor& x, std::size_t top, std::size_t bottom, std::size_t left,
                    std::size_t right) {
  if (x.rank() != 2) throw Error("pad2d: expected rank-2 input, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const std::size_t mo = m + top + bottom, no = n + left + right;
  std::vector<double> out(mo * no, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(x.data().data() + i * n, x.data().data() + (i + 1) * n,
              out.data() + (i + top) * no + left);
  }
  auto pa = x.node();
  return make_op("pad2d", {mo, no}, std::move(out), {x},
                 [pa, m, n, no, top, left](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   for (std::size_t i = 0; i < m; ++i) {
                     const double* g = self.grad.data() + (i + top) * no + left;
                     double* dst = ga.data() + i * n;
                     for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
                   }
                 });
}

// ---------------------------------------------------------------------------
// adaptive average pooling over the length axis
// ---------------------------------------------------------------------------

inline Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t l_out) {
  if (x.rank() != 2) {
    throw Error("adaptive_avg_pool1d: expected [LxF] input, got " + shape_str(x.shape()));
  }
  if (l_out < 1) throw Error("adaptive_avg_pool1d: output length must be >= 1");
  const std::size_t l_in = x.dim(0), F = x.dim(1);
  std::vector<double> out(l_out * F, 0.0);
  std::vector<std::pair<std::size_t, std::size_t>> bins(l_out);
  for (std::size_t i = 0; i < l_out; ++i) {
    const std::size_t lo = i * l_in / l_out;
    const std::size_t hi = ((i + 1) * l_in + l_out - 1) / l_out;  // ceil
    bins[i] = {lo, hi};
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t j = lo; j < hi; ++j) {
      for (std::size_t f = 0; f < F; ++f) out[i * F + f] += x.data()[j * F + f] * inv;
    }
  }
  auto pa = x.node();
  return make_op("adaptive_avg_pool1d", {l_out, F}, std::move(out), {x},
                 [pa, bins = std::move(bins), F](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   for (std::size_t i = 0; i < bins.size(); ++i) {
                     const auto [lo, hi] = bins[i];
                     const double inv = 1.0 / static_cast<double>(hi - lo);
                     for (std::size_t j = lo; j < hi; ++j) {
                       for (std::size_t f = 0; f < F; ++f) {
                         ga[j * F + f] += self.grad[i * F + f] * inv;
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw Error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto pa = x.node();
  return make_op("reshape", std::move(shape), x.data(), {x}, [pa](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw Error("transpose2d: expected rank-2 input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
  }
  auto pa = x.node();
  return make_op("transpose2d", {n, m}, std::move(out), {x}, [pa, m, n](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }
  });
}

// Columns [c0, c1) of the trailing axis.
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  if (x.rank() < 1) throw Error("slice_cols: scalar input");
  const std::size_t n = x.shape().back();
  if (c0 >= c1 || c1 > n) {
    throw Error("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                ") invalid for width " + std::to_string(n));
  }
  const std::size_t rows = x.numel() / n;
  const std::size_t w = c1 - c0;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(x.data().data() + r * n + c0, x.data().data() + r * n + c1, out.data() + r * w);
  }
  Shape shape = x.shape();
  shape.back() = w;
  auto pa = x.node();
  return make_op("slice_cols", std::move(shape), std::move(out), {x},
                 [pa, rows, n, c0, w](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < w; ++j) {
                       ga[r * n + c0 + j] += self.grad[r * w + j];
                     }
                   }
                 });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  const std::size_t lead = parts[0].numel() / parts[0].shape().back();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank() || p.numel() / p.shape().back() != lead) {
      throw Error("concat_cols: leading dimensions disagree");
    }
    total += p.shape().back();
  }
  std::vector<double> out(lead * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < lead; ++r) {
      std::copy(p.data().data() + r * w, p.data().data() + (r + 1) * w,
                out.data() + r * total + off);
    }
    off += w;
  }
  Shape shape = parts[0].shape();
  shape.back() = total;
  std::vector<TensorImplPtr> nodes;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape().back());
  }
  return make_op("concat_cols", std::move(shape), std::move(out), parts,
                 [nodes, widths, lead, total](TensorImpl& self) {
                   std::size_t off = 0;
                   for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                     const std::size_t w = widths[pi];
                     if (nodes[pi]->requires_grad) {
                       auto& ga = nodes[pi]->grad_buffer();
                       for (std::size_t r = 0; r < lead; ++r) {
                         for (std::size_t j = 0; j < w; ++j) {
                           ga[r * w + j] += self.grad[r * total + off + j];
                         }
                       }
                     }
                     off += w;
                   }
                 });
}

// Row gather; backward scatter-adds, so repeated indices accumulate.
inline Tensor gather_rows(const Tensor& x, const std::vector<long>& idx) {
  if (x.rank() != 2) throw Error("gather_rows: expected rank-2 input");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(idx.size() * cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= static_cast<long>(rows)) {
      throw Error("gather_rows: index " + std::to_string(idx[i]) + " out of range [0," +
                  std::to_string(rows) + ")");
    }
    std::copy(x.data().data() + static_cast<std::size_t>(idx[i]) * cols,
              x.data().data() + (static_cast<std::size_t>(idx[i]) + 1) * cols,
              out.data() + i * cols);
  }
  auto pa = x.node();
  return make_op("gather_rows", {idx.size(), cols}, std::move(out), {x},
                 [pa, idx, cols](TensorImpl& self) {
                   auto& ga = pa->grad_buffer();
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     double* dst = ga.data() + static_cast<std::size_t>(idx[i]) * cols;
                     const double* g = self.grad.data() + i * cols;
                     for (std::size_t j = 0; j < cols; ++j) dst[j] += g[j];
                   }
                 });
}

// y[i,j,f] = sum_r attn[i,j,r,f] * vals[i,r,f] — the per-window aggregation
// of outlook attention. attn: [L,K,K,F], vals: [L,K,F].
inline Tensor window_weighted_sum(const Tensor& attn, const Tensor& vals) {
  if (attn.rank() != 4 || vals.rank() != 3) {
    throw Error("window_weighted_sum: expected [LxKxKxF] and [LxKxF]");
  }
  const std::size_t L = attn.dim(0), K = attn.dim(1), F = attn.dim(3);
  if (attn.dim(2) != K || vals.dim(0) != L || vals.dim(1) != K || vals.dim(2) != F) {
    throw Error("window_weighted_sum: shape mismatch " + shape_str(attn.shape()) + " vs " +
                shape_str(vals.shape()));
  }
  std::vector<double> out(L * K * F, 0.0);
  const auto& ad = attn.data();
  const auto& vd = vals.data();
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t r = 0; r < K; ++r) {
        const double* a = ad.data() + ((i * K + j) * K + r) * F;
        const double* v = vd.data() + (i * K + r) * F;
        double* y = out.data() + (i * K + j) * F;
        for (std::size_t f = 0; f < F; ++f) y[f] += a[f] * v[f];
      }
    }
  }
  auto pattn = attn.node();
  auto pvals = vals.node();
  return make_op("window_weighted_sum", {L, K, F}, std::move(out), {attn, vals},
                 [pattn, pvals, L, K, F](TensorImpl& self) {
                   for (std::size_t i = 0; i < L; ++i) {
                     for (std::size_t j = 0; j < K; ++j) {
                       const double* gy = self.grad.data() + (i * K + j) * F;
                       for (std::size_t r = 0; r < K; ++r) {
                         const std::size_t aoff = ((i * K + j) * K + r) * F;
                         const std::size_t voff = (i * K + r) * F;
                         if (pattn->requires_grad) {
                           auto& gattn = pattn->grad_buffer();
                           for (std::size_t f = 0; f < F; ++f) {
                             gattn[aoff + f] += gy[f] * pvals->data[voff + f];
                           }
                         }
                         if (pvals->requires_grad) {
                           auto& gvals = pvals->grad_buffer();
                           for (std::size_t f = 0; f < F; ++f) {
                             gvals[voff + f] += gy[f] * pattn->data[aoff + f];
                           }
                         }
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// reductions and losses
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto pa = x.node();
  return make_op("sum_all", {1}, {acc}, {x}, [pa](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (double& g : ga) g += self.grad[0];
  });
}

// Fused normalization: per row over the trailing axis,
// (x - mean) / sqrt(var + eps) * gain + shift, variance with 1/F.
inline Tensor layer_norm_op(const Tensor& x, const Tensor& gain, const Tensor& shift,
                            double eps) {
  if (x.rank() < 1) throw Error("layer_norm: scalar input");
  const std::size_t F = x.shape().back();
  if (gain.numel() != F || shift.numel() != F) {
    throw Error("layer_norm: affine parameters must have " + std::to_string(F) + " features");
  }
  if (eps <= 0.0) throw Error("layer_norm: epsilon must be positive");
  const std::size_t rows = x.numel() / F;
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows), means(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * F;
    double mean = 0.0;
    for (std::size_t f = 0; f < F; ++f) mean += row[f];
    mean /= static_cast<double>(F);
    double var = 0.0;
    for (std::size_t f = 0; f < F; ++f) var += (row[f] - mean) * (row[f] - mean);
    var /= static_cast<double>(F);
    const double inv = 1.0 / std::sqrt(var + eps);
    means[r] = mean;
    inv_std[r] = inv;
    for (std::size_t f = 0; f < F; ++f) {
      out[r * F + f] = (row[f] - mean) * inv * gain.data()[f] + shift.data()[f];
    }
  }
  auto px = x.node();
  auto pg = gain.node();
  auto ps = shift.node();
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, shift},
      [px, pg, ps, rows, F, means = std::move(means),
       inv_std = std::move(inv_std)](TensorImpl& self) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* row = px->data.data() + r * F;
          const double* gy = self.grad.data() + r * F;
          const double mean = means[r], inv = inv_std[r];
          // dgain/dshift
          if (pg->requires_grad || ps->requires_grad) {
            for (std::size_t f = 0; f < F; ++f) {
              const double xhat = (row[f] - mean) * inv;
              if (pg->requires_grad) pg->grad_buffer()[f] += gy[f] * xhat;
              if (ps->requires_grad) ps->grad_buffer()[f] += gy[f];
            }
          }
          if (px->requires_grad) {
            double mean_t = 0.0, mean_tx = 0.0;
            for (std::size_t f = 0; f < F; ++f) {
              const double t = gy[f] * pg->data[f];
              const double xhat = (row[f] - mean) * inv;
              mean_t += t;
              mean_tx += t * xhat;
            }
            mean_t /= static_cast<double>(F);
            mean_tx /= static_cast<double>(F);
            auto& gx = px->grad_buffer();
            for (std::size_t f = 0; f < F; ++f) {
              const double t = gy[f] * pg->data[f];
              const double xhat = (row[f] - mean) * inv;
              gx[r * F + f] += inv * (t - mean_t - xhat * mean_tx);
            }
          }
        }
      });
}

// Mean negative log-likelihood over valid rows of [NxC] logits, computed via
// a stable log-sum-exp. Row i contributes logsumexp(z_i) - z_i[target_i].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<long>& targets,
                            const std::vector<std::uint8_t>& valid = {}) {
  if (logits.rank() != 2) throw Error("cross_entropy: expected [NxC] logits");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  if (targets.size() != N) throw Error("cross_entropy: target count mismatch");
  if (!valid.empty() && valid.size() != N) throw Error("cross_entropy: valid flag count mismatch");
  std::size_t m = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (targets[i] < 0 || targets[i] >= static_cast<long>(C)) {
      throw Error("cross_entropy: label " + std::to_string(targets[i]) + " out of range [0," +
                  std::to_string(C) + ")");
    }
    ++m;
    const double* row = logits.data().data() + i * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
    loss += (mx + std::log(denom)) - row[static_cast<std::size_t>(targets[i])];
  }
  if (m == 0) throw Error("cross_entropy: no valid rows");
  loss /= static_cast<double>(m);
  auto pl = logits.node();
  return make_op("cross_entropy", {1}, {loss}, {logits},
                 [pl, targets, valid, N, C, m](TensorImpl& self) {
                   const double g = self.grad[0] / static_cast<double>(m);
                   auto& gl = pl->grad_buffer();
                   for (std::size_t i = 0; i < N; ++i) {
                     if (!valid.empty() && !valid[i]) continue;
                     const double* row = pl->data.data() + i * C;
                     double mx = row[0];
                     for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
                     double denom = 0.0;
                     for (std::size_t c = 0; c < C; ++c) denom += std::exp(row[c] - mx);
                     for (std::size_t c = 0; c < C; ++c) {
                       double p = std::exp(row[c] - mx) / denom;
                       if (c == static_cast<std::size_t>(targets[i])) p -= 1.0;
                       gl[i * C + c] += g * p;
                     }
                   }
                 });
}

// Inverted dropout with an explicit generator; identity when rate == 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> out(x.numel());
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = rng.uniform() < keep;
    (*mask)[i] = on ? 1 : 0;
    out[i] = on ? x.data()[i] / keep : 0.0;
  }
  auto pa = x.node();
  return make_op("dropout", x.shape(), std::move(out), {x}, [pa, mask, keep](TensorImpl& self) {
    auto& ga = pa->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if ((*mask)[i]) ga[i] += self.grad[i] / keep;
    }
  });
}

// ---------------------------------------------------------------------------
// backward sweep
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and runs one reverse topological sweep. Gradients
// accumulate: call zero_grad on leaves between steps.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw Error("backward: root must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("backward: root is not connected to any gradient-tracked input");
  }
  // iterative post-order DFS over gradient-tracked nodes
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->grad_buffer();  // nodes never reached still get a zero buffer
      node->backward_fn(*node);
    }
  }
}

}  // namespace cool
