#pragma once
// Context outlook attention. Per-anchor local windows of whole-token rows,
// aggregation weights produced by a linear map of the anchor's own features
// (no query-key dot products), masked softmax per window, weighted
// aggregation, and a fold-sum across overlapping windows.

#include <cstddef>
#include <string>
#include <vector>

#include "cool/nn.hpp"
#include "cool/tensor.hpp"

namespace cool {

// Whether window weights normalize per channel (softmax over the K source
// slots of each channel) or jointly over the flattened K*F slice.
enum class SoftmaxScope { per_channel, flattened };

inline SoftmaxScope softmax_scope_from_string(const std::string& s) {
  if (s == "per_channel") return SoftmaxScope::per_channel;
  if (s == "flattened") return SoftmaxScope::flattened;
  throw Error("unknown softmax_scope '" + s + "' (expected per_channel or flattened)");
}

inline const char* to_string(SoftmaxScope s) {
  return s == SoftmaxScope::per_channel ? "per_channel" : "flattened";
}

struct OutlookLayerParams {
  std::size_t window = 3;    // K, odd
  std::size_t channels = 0;  // F
  LayerNormParams pre_norm;
  LinearParams value_proj;  // F -> F
  LinearParams attn_proj;   // F -> K*K*F
  LayerNormParams mlp_norm;
  LinearParams mlp;  // F -> F
  SoftmaxScope scope = SoftmaxScope::per_channel;
};

struct OutlookBlockParams {
  std::vector<OutlookLayerParams> layers;
};

inline OutlookLayerParams make_outlook_layer(ParameterStore& store, const std::string& prefix,
                                             std::size_t window, std::size_t channels,
                                             SoftmaxScope scope, Rng& rng) {
  detail::require_odd_window("outlook layer", window);
  OutlookLayerParams p;
  p.window = window;
  p.channels = channels;
  p.scope = scope;
  p.pre_norm = make_layer_norm(store, prefix + ".pre_norm", channels);
  p.value_proj = make_linear(store, prefix + ".value", channels, channels, rng);
  p.attn_proj = make_linear(store, prefix + ".attn", channels, window * window * channels, rng);
  p.mlp_norm = make_layer_norm(store, prefix + ".mlp_norm", channels);
  p.mlp = make_linear(store, prefix + ".mlp", channels, channels, rng);
  return p;
}

inline OutlookBlockParams make_outlook_block(ParameterStore& store, const std::string& prefix,
                                             std::size_t layers, std::size_t window,
                                             std::size_t channels, SoftmaxScope scope, Rng& rng) {
  OutlookBlockParams p;
  for (std::size_t i = 0; i < layers; ++i) {
    p.layers.push_back(make_outlook_layer(store, prefix + ".layer" + std::to_string(i), window,
                                          channels, scope, rng));
  }
  return p;
}

// Normalized window weights [L,K,K,F], exposed for tests and diagnostics.
struct OutlookTrace {
  Tensor weights;
};

// Aggregation core. v: per-token values [L,F]; attn_logits: [L, K*K*F] from
// the anchor's features; token_mask marks real tokens.
//
// Weight tensor semantics: index j is the output row within a window, r the
// source row, f the channel. Softmax runs over r (per_channel) or jointly
// over (r,f) (flattened). Sources that are out of range or padded carry
// exactly zero weight; windows anchored at padded tokens are dropped
// entirely so pad values can never leak into real positions.
inline Tensor outlook_aggregate(const Tensor& v, const Tensor& attn_logits, std::size_t K,
                                SoftmaxScope scope, const std::vector<std::uint8_t>& token_mask,
                                OutlookTrace* trace = nullptr) {
  detail::require_odd_window("outlook", K);
  const std::size_t L = v.dim(0), F = v.dim(1);
  if (attn_logits.dim(0) != L || attn_logits.dim(1) != K * K * F) {
    throw Error("outlook: attention logits " + shape_str(attn_logits.shape()) +
                " do not match K*K*F = " + std::to_string(K * K * F));
  }
  if (token_mask.size() != L) throw Error("outlook: mask length mismatch");

  const Mask validity = unfold_validity(L, K);
  const std::size_t center = K / 2;

  // Source validity per anchor: in range and a real token. A real anchor
  // always has itself as a valid source; for padded anchors the center slot
  // is kept only so the softmax slice is not degenerate (the whole window is
  // zeroed below).
  Mask softmax_mask = Mask::all({L, K, K, F}, false);
  Tensor anchor_keep = Tensor::zeros({L, K, K, F});
  for (std::size_t i = 0; i < L; ++i) {
    const bool real_anchor = token_mask[i] != 0;
    for (std::size_t r = 0; r < K; ++r) {
      bool src_ok;
      if (real_anchor) {
        const long src = static_cast<long>(i) + static_cast<long>(r) - static_cast<long>(center);
        src_ok = validity.at2(i, r) && token_mask[static_cast<std::size_t>(src)];
      } else {
        src_ok = r == center;
      }
      if (!src_ok) continue;
      for (std::size_t j = 0; j < K; ++j) {
        for (std::size_t f = 0; f < F; ++f) {
          softmax_mask.on[((i * K + j) * K + r) * F + f] = 1;
        }
      }
    }
    if (real_anchor) {
      std::fill(anchor_keep.mutable_data().begin() + static_cast<std::ptrdiff_t>(i * K * K * F),
                anchor_keep.mutable_data().begin() +
                    static_cast<std::ptrdiff_t>((i + 1) * K * K * F),
                1.0);
    }
  }

  const Tensor a4 = reshape(attn_logits, {L, K, K, F});
  Tensor weights;
  if (scope == SoftmaxScope::per_channel) {
    weights = softmax(a4, 2, &softmax_mask);
  } else {
    // joint normalization over the window's K*F slice
    const Tensor a3 = reshape(a4, {L, K, K * F});
    Mask m3;
    m3.shape = {L, K, K * F};
    m3.on = softmax_mask.on;
    weights = reshape(softmax(a3, 2, &m3), {L, K, K, F});
  }
  weights = mul(weights, anchor_keep);
  if (trace) trace->weights = weights;

  const Tensor windows = unfold1d(v, K);                     // [L,K,F]
  const Tensor weighted = window_weighted_sum(weights, windows);
  return fold1d(weighted);                                   // [L,F]
}

// Eq. chain: value/attention projections off the same normalized input, then
// the aggregation core.
inline Tensor outlook_attend(const OutlookLayerParams& p, const Tensor& x,
                             const std::vector<std::uint8_t>& token_mask,
                             OutlookTrace* trace = nullptr) {
  const Tensor normed = layer_norm(p.pre_norm, x);
  const Tensor v = linear(p.value_proj, normed);
  const Tensor a = linear(p.attn_proj, normed);
  return outlook_aggregate(v, a, p.window, p.scope, token_mask, trace);
}

// Residual + MLP wrapper around the attention.
inline Tensor outlook_layer_forward(const OutlookLayerParams& p, const Tensor& x,
                                    const std::vector<std::uint8_t>& token_mask,
                                    OutlookTrace* trace = nullptr) {
  const Tensor h_f = add(outlook_attend(p, x, token_mask, trace), x);
  const Tensor mlp_out = linear(p.mlp, layer_norm(p.mlp_norm, h_f));
  return add(mlp_out, h_f);
}

// Sequential composition; an empty block is the identity.
inline Tensor outlook_block_forward(const OutlookBlockParams& p, const Tensor& x,
                                    const std::vector<std::uint8_t>& token_mask) {
  Tensor h = x;
  for (const auto& layer : p.layers) h = outlook_layer_forward(layer, h, token_mask);
  return h;
}

}  // namespace cool
