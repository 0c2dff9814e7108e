#pragma once
// Convolutional local-feature extractor: parallel branches with window
// widths over the sequence, full-width kernels over a 2-padded feature axis,
// ReLU, adaptive pooling back to the input length, channel concatenation.

#include <cstddef>
#include <string>
#include <vector>

#include "cool/nn.hpp"
#include "cool/tensor.hpp"

namespace cool {

struct ConvBranchParams {
  std::size_t width = 3;    // tokens per window
  std::size_t filters = 0;  // output channels
  Tensor kernel;            // [width, H+4, filters]
  Tensor bias;              // [filters]
};

struct ConvBlockParams {
  std::vector<ConvBranchParams> branches;

  std::size_t total_filters() const {
    std::size_t f = 0;
    for (const auto& b : branches) f += b.filters;
    return f;
  }
};

inline ConvBranchParams make_conv_branch(ParameterStore& store, const std::string& prefix,
                                         std::size_t width, std::size_t hidden,
                                         std::size_t filters, Rng& rng) {
  if (width < 1 || filters < 1) throw Error("conv branch: width and filters must be >= 1");
  ConvBranchParams p;
  p.width = width;
  p.filters = filters;
  const std::size_t fan_in = width * (hidden + 4);
  p.kernel = store.add(prefix + ".kernel",
                       glorot_uniform({width, hidden + 4, filters}, fan_in, filters, rng));
  p.bias = store.add(prefix + ".bias", Tensor::zeros({filters}));
  return p;
}

inline ConvBlockParams make_conv_block(ParameterStore& store, const std::string& prefix,
                                       const std::vector<std::size_t>& widths,
                                       const std::vector<std::size_t>& filters,
                                       std::size_t hidden, Rng& rng) {
  if (widths.empty() || widths.size() != filters.size()) {
    throw Error("conv block: widths and filters must be non-empty and aligned");
  }
  ConvBlockParams p;
  for (std::size_t d = 0; d < widths.size(); ++d) {
    p.branches.push_back(make_conv_branch(store, prefix + ".branch" + std::to_string(d),
                                          widths[d], hidden, filters[d], rng));
  }
  return p;
}

// h_g: [L, H]. Both axes are zero-padded by 2, a [w x (H+4)] kernel slides
// over the length axis, ReLU applied. Output [L+5-w, filters].
inline Tensor conv_branch(const ConvBranchParams& p, const Tensor& h_g) {
  if (h_g.rank() != 2) throw Error("conv branch: expected [LxH] input");
  const std::size_t L = h_g.dim(0), H = h_g.dim(1);
  if (H + 4 != p.kernel.dim(1)) {
    throw Error("conv branch: input width " + std::to_string(H) + " incompatible with kernel " +
                shape_str(p.kernel.shape()));
  }
  if (L + 4 < p.width) {
    throw Error("conv branch: sequence of length " + std::to_string(L) +
                " too short for window width " + std::to_string(p.width));
  }
  const Tensor padded = pad2d(h_g, 2, 2, 2, 2);                    // [L+4, H+4]
  const Tensor windows = unfold_valid(padded, p.width);            // [L+5-w, w, H+4]
  const std::size_t l_out = windows.dim(0);
  const Tensor flat = reshape(windows, {l_out, p.width * (H + 4)});
  const Tensor kflat = reshape(p.kernel, {p.width * (H + 4), p.filters});
  return relu(add(matmul(flat, kflat), p.bias));
}

// Each branch output is adaptive-pooled back to L and the results are
// concatenated channel-wise in branch order.
inline Tensor conv_block_forward(const ConvBlockParams& p, const Tensor& h_g) {
  if (p.branches.empty()) throw Error("conv block: no branches");
  const std::size_t L = h_g.dim(0);
  std::vector<Tensor> pooled;
  pooled.reserve(p.branches.size());
  for (const auto& branch : p.branches) {
    pooled.push_back(adaptive_avg_pool1d(conv_branch(branch, h_g), L));
  }
  return pooled.size() == 1 ? pooled[0] : concat_cols(pooled);
}

}  // namespace cool
