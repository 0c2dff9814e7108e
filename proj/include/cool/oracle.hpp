#pragma once
// Independent brute-force references and finite-difference machinery. Used by
// tests and the gradcheck/oracle-diff CLI commands. Everything here is
// written as explicit index loops over raw buffers and shares no kernel code
// with the main path; being slow is fine.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cool/outlook.hpp"
#include "cool/tensor.hpp"

namespace cool::oracle {

struct DiffReport {
  std::string name;
  double max_abs = 0.0;
  double max_rel = 0.0;
  std::size_t worst_index = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Elementwise comparison. Passes iff max_abs <= tol OR max_rel <= tol.
inline DiffReport equivalence_report(const std::string& name, const Tensor& a, const Tensor& b,
                                     double tol) {
  if (a.shape() != b.shape()) {
    throw Error("equivalence_report: shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  DiffReport rep;
  rep.name = name;
  rep.tolerance = tol;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double av = a.data()[i], bv = b.data()[i];
    const double abs_diff = std::fabs(av - bv);
    const double denom = std::max(std::fabs(av), std::fabs(bv));
    const double rel_diff = denom > 0.0 ? abs_diff / denom : 0.0;
    if (abs_diff > rep.max_abs) {
      rep.max_abs = abs_diff;
      rep.worst_index = i;
    }
    rep.max_rel = std::max(rep.max_rel, rel_diff);
  }
  rep.pass = rep.max_abs <= tol || rep.max_rel <= tol;
  return rep;
}

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate of x.
// f must be deterministic; x is restored on return.
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Gradient-check verdict. Per coordinate, the error must stay within
// rel_tol relative to the coordinate's own magnitude or to the largest
// gradient magnitude in the vector (finite-difference truncation lands at a
// roughly uniform absolute size, so near-zero coordinates are judged at the
// gradient's scale), with abs_floor as the floor for all-zero gradients.
inline DiffReport gradient_report(const std::string& name, const std::vector<double>& autodiff,
                                  const std::vector<double>& numeric, double rel_tol = 1e-5,
                                  double abs_floor = 1e-8) {
  if (autodiff.size() != numeric.size()) {
    throw Error("gradient_report: size mismatch for '" + name + "'");
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < autodiff.size(); ++i) {
    scale = std::max(scale, std::max(std::fabs(autodiff[i]), std::fabs(numeric[i])));
  }
  DiffReport rep;
  rep.name = name;
  rep.tolerance = rel_tol;
  rep.pass = true;
  for (std::size_t i = 0; i < autodiff.size(); ++i) {
    const double a = autodiff[i], b = numeric[i];
    const double abs_diff = std::fabs(a - b);
    const double denom = std::max({std::fabs(a), std::fabs(b), scale});
    const double rel_diff = denom > 0.0 ? abs_diff / denom : 0.0;
    if (abs_diff > rep.max_abs) {
      rep.max_abs = abs_diff;
      rep.worst_index = i;
    }
    rep.max_rel = std::max(rep.max_rel, rel_diff);
    if (abs_diff > abs_floor && rel_diff > rel_tol) rep.pass = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// naive outlook reference: literal per-index evaluation of the value/attention
// projections, masked per-window softmax, weighted aggregation, fold-sum,
// residual and MLP. Reads parameter buffers directly.
// ---------------------------------------------------------------------------

namespace detail_naive {

inline std::vector<double> layer_norm_rows(const std::vector<double>& x, std::size_t rows,
                                           std::size_t f, const std::vector<double>& gain,
                                           const std::vector<double>& shift, double eps) {
  std::vector<double> out(rows * f);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < f; ++c) mean += x[r * f + c];
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t c = 0; c < f; ++c) {
      var += (x[r * f + c] - mean) * (x[r * f + c] - mean);
    }
    var /= static_cast<double>(f);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < f; ++c) {
      out[r * f + c] = (x[r * f + c] - mean) * inv * gain[c] + shift[c];
    }
  }
  return out;
}

inline std::vector<double> affine_rows(const std::vector<double>& x, std::size_t rows,
                                       std::size_t in, std::size_t out,
                                       const std::vector<double>& w,
                                       const std::vector<double>& b) {
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + o];
      y[r * out + o] = acc;
    }
  }
  return y;
}

}  // namespace detail_naive

struct NaiveOutlookOptions {
  // When >= 0, that anchor's window is skipped during the fold — used by the
  // pairwise-coverage structural test.
  long skip_anchor = -1;
  // Filled with the normalized weights [L*K*K*F] when non-null.
  std::vector<double>* weights_out = nullptr;
};

// Full layer: pre-norm, value/attention projections, per-window masked
// softmax, weighted aggregation, fold, residual, MLP-norm, MLP, residual.
inline Tensor naive_outlook_reference(const OutlookLayerParams& p, const Tensor& input,
                                      const std::vector<std::uint8_t>& mask,
                                      const NaiveOutlookOptions& opt = {}) {
  const std::size_t L = input.dim(0), F = input.dim(1), K = p.window;
  const std::size_t center = K / 2;
  const auto& x = input.data();

  const auto normed = detail_naive::layer_norm_rows(x, L, F, p.pre_norm.gain.data(),
                                                    p.pre_norm.shift.data(), p.pre_norm.epsilon);
  const auto v =
      detail_naive::affine_rows(normed, L, F, F, p.value_proj.weight.data(),
                                p.value_proj.bias.data());
  const auto a =
      detail_naive::affine_rows(normed, L, F, K * K * F, p.attn_proj.weight.data(),
                                p.attn_proj.bias.data());

  // normalized weights, zero on invalid sources and padded anchors
  std::vector<double> weights(L * K * K * F, 0.0);
  auto logit = [&](std::size_t i, std::size_t j, std::size_t r, std::size_t f) {
    return a[i * (K * K * F) + (j * K + r) * F + f];
  };
  auto src_of = [&](std::size_t i, std::size_t r) {
    return static_cast<long>(i) + static_cast<long>(r) - static_cast<long>(center);
  };
  auto src_valid = [&](std::size_t i, std::size_t r) {
    const long s = src_of(i, r);
    return s >= 0 && s < static_cast<long>(L) && mask[static_cast<std::size_t>(s)] != 0;
  };
  for (std::size_t i = 0; i < L; ++i) {
    if (!mask[i]) continue;  // padded anchors contribute nothing
    for (std::size_t j = 0; j < K; ++j) {
      if (p.scope == SoftmaxScope::per_channel) {
        for (std::size_t f = 0; f < F; ++f) {
          double mx = -1e300;
          for (std::size_t r = 0; r < K; ++r) {
            if (src_valid(i, r)) mx = std::max(mx, logit(i, j, r, f));
          }
          double denom = 0.0;
          for (std::size_t r = 0; r < K; ++r) {
            if (src_valid(i, r)) denom += std::exp(logit(i, j, r, f) - mx);
          }
          for (std::size_t r = 0; r < K; ++r) {
            if (src_valid(i, r)) {
              weights[((i * K + j) * K + r) * F + f] = std::exp(logit(i, j, r, f) - mx) / denom;
            }
          }
        }
      } else {
        double mx = -1e300;
        for (std::size_t r = 0; r < K; ++r) {
          for (std::size_t f = 0; f < F; ++f) {
            if (src_valid(i, r)) mx = std::max(mx, logit(i, j, r, f));
          }
        }
        double denom = 0.0;
        for (std::size_t r = 0; r < K; ++r) {
          for (std::size_t f = 0; f < F; ++f) {
            if (src_valid(i, r)) denom += std::exp(logit(i, j, r, f) - mx);
          }
        }
        for (std::size_t r = 0; r < K; ++r) {
          for (std::size_t f = 0; f < F; ++f) {
            if (src_valid(i, r)) {
              weights[((i * K + j) * K + r) * F + f] = std::exp(logit(i, j, r, f) - mx) / denom;
            }
          }
        }
      }
    }
  }
  if (opt.weights_out) *opt.weights_out = weights;

  // aggregate within windows, then fold overlapping windows onto positions
  std::vector<double> folded(L * F, 0.0);
  for (std::size_t u = 0; u < L; ++u) {
    if (!mask[u]) continue;
    if (opt.skip_anchor >= 0 && static_cast<std::size_t>(opt.skip_anchor) == u) continue;
    for (std::size_t j = 0; j < K; ++j) {
      const long pos = src_of(u, j);
      if (pos < 0 || pos >= static_cast<long>(L)) continue;
      for (std::size_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (std::size_t r = 0; r < K; ++r) {
          const long s = src_of(u, r);
          if (s < 0 || s >= static_cast<long>(L)) continue;
          acc += weights[((u * K + j) * K + r) * F + f] * v[static_cast<std::size_t>(s) * F + f];
        }
        folded[static_cast<std::size_t>(pos) * F + f] += acc;
      }
    }
  }

  // residual + MLP + residual
  std::vector<double> h_f(L * F);
  for (std::size_t i = 0; i < L * F; ++i) h_f[i] = folded[i] + x[i];
  const auto mlp_in = detail_naive::layer_norm_rows(h_f, L, F, p.mlp_norm.gain.data(),
                                                    p.mlp_norm.shift.data(), p.mlp_norm.epsilon);
  const auto mlp_out =
      detail_naive::affine_rows(mlp_in, L, F, F, p.mlp.weight.data(), p.mlp.bias.data());
  std::vector<double> out(L * F);
  for (std::size_t i = 0; i < L * F; ++i) out[i] = mlp_out[i] + h_f[i];
  return Tensor::from({L, F}, std::move(out));
}

}  // namespace cool::oracle
