#pragma once
// Parameter store and the shared layers: linear, layer norm, embedding,
// and a pre-norm multi-head self-attention encoder block.

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cool/common.hpp"
#include "cool/tensor.hpp"

namespace cool {

// Named parameters in registration order. Registration order is the
// initialization order, so a fixed seed reproduces identical parameters.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw Error("parameter '" + name + "' registered twice");
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return items_[it->second].second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

  std::vector<std::string> sorted_names() const {
    std::vector<std::string> names;
    names.reserve(items_.size());
    for (const auto& [name, t] : items_) names.push_back(name);
    std::sort(names.begin(), names.end());
    return names;
  }

  std::size_t size() const { return items_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Forward-pass context: evaluation by default; training enables dropout.
struct ForwardCtx {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;

  bool drop() const { return training && dropout > 0.0 && rng != nullptr; }
};

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-limit, limit);
  return t;
}

inline LinearParams make_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                                std::size_t out, Rng& rng) {
  LinearParams p;
  p.weight = store.add(prefix + ".weight", glorot_uniform({in, out}, in, out, rng));
  p.bias = store.add(prefix + ".bias", Tensor::zeros({out}));
  return p;
}

inline Tensor linear(const LinearParams& p, const Tensor& x) {
  if (x.shape().back() != p.in()) {
    throw Error("linear: input width " + std::to_string(x.shape().back()) + " != expected " +
                std::to_string(p.in()));
  }
  return add(matmul(x, p.weight), p.bias);
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

struct LayerNormParams {
  Tensor gain;   // [F]
  Tensor shift;  // [F]
  double epsilon = 1e-5;
};

inline LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix,
                                       std::size_t features, double epsilon = 1e-5) {
  if (epsilon <= 0.0) throw Error("layer_norm: epsilon must be positive");
  LayerNormParams p;
  p.gain = store.add(prefix + ".gain", Tensor::full({features}, 1.0));
  p.shift = store.add(prefix + ".shift", Tensor::zeros({features}));
  p.epsilon = epsilon;
  return p;
}

inline Tensor layer_norm(const LayerNormParams& p, const Tensor& x) {
  return layer_norm_op(x, p.gain, p.shift, p.epsilon);
}

// ---------------------------------------------------------------------------
// embedding
// ---------------------------------------------------------------------------

inline Tensor make_embedding_table(std::size_t rows, std::size_t width, Rng& rng) {
  Tensor t = Tensor::zeros({rows, width});
  for (double& v : t.mutable_data()) v = rng.normal(0.0, 0.02);
  return t;
}

// Row gather; gradients scatter-add into the table.
inline Tensor embed(const Tensor& table, const std::vector<long>& ids) {
  return gather_rows(table, ids);
}

// ---------------------------------------------------------------------------
// encoder block (pre-norm multi-head self-attention + feed-forward)
// ---------------------------------------------------------------------------

struct EncoderBlockParams {
  std::size_t heads = 1;
  LinearParams query, key, value, out;  // all [H, H]; heads are column groups
  LinearParams ff1, ff2;                // H -> 4H -> H
  LayerNormParams norm_attn, norm_ff;
};

inline EncoderBlockParams make_encoder_block(ParameterStore& store, const std::string& prefix,
                                             std::size_t hidden, std::size_t heads, Rng& rng) {
  if (heads == 0 || hidden % heads != 0) {
    throw Error("encoder block: hidden " + std::to_string(hidden) + " not divisible by " +
                std::to_string(heads) + " heads");
  }
  EncoderBlockParams p;
  p.heads = heads;
  p.norm_attn = make_layer_norm(store, prefix + ".norm_attn", hidden);
  p.query = make_linear(store, prefix + ".query", hidden, hidden, rng);
  p.key = make_linear(store, prefix + ".key", hidden, hidden, rng);
  p.value = make_linear(store, prefix + ".value", hidden, hidden, rng);
  p.out = make_linear(store, prefix + ".out", hidden, hidden, rng);
  p.norm_ff = make_layer_norm(store, prefix + ".norm_ff", hidden);
  p.ff1 = make_linear(store, prefix + ".ff1", hidden, 4 * hidden, rng);
  p.ff2 = make_linear(store, prefix + ".ff2", 4 * hidden, hidden, rng);
  return p;
}

// x: [L, H]; mask marks real (non-pad) tokens. Padded keys receive exactly
// zero attention from every query.
inline Tensor encoder_block(const EncoderBlockParams& p, const Tensor& x,
                            const std::vector<std::uint8_t>& mask, const ForwardCtx& ctx = {}) {
  const std::size_t L = x.dim(0), H = x.dim(1);
  if (mask.size() != L) throw Error("encoder block: mask length mismatch");
  bool any_real = false;
  for (auto m : mask) any_real = any_real || m;
  if (!any_real) throw Error("encoder block: fully padded input");

  const std::size_t heads = p.heads;
  const std::size_t dh = H / heads;
  const Tensor n1 = layer_norm(p.norm_attn, x);
  const Tensor q = linear(p.query, n1);
  const Tensor k = linear(p.key, n1);
  const Tensor v = linear(p.value, n1);

  Mask key_mask = Mask::all({L, L}, false);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) key_mask.at2(i, j) = mask[j];
  }

  std::vector<Tensor> head_ctx;
  head_ctx.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose2d(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = softmax(scores, 1, &key_mask);
    head_ctx.push_back(matmul(attn, vh));
  }
  Tensor merged = heads == 1 ? head_ctx[0] : concat_cols(head_ctx);
  Tensor attn_out = linear(p.out, merged);
  if (ctx.drop()) attn_out = dropout(attn_out, ctx.dropout, *ctx.rng);
  Tensor x1 = add(x, attn_out);

  Tensor ff = linear(p.ff2, relu(linear(p.ff1, layer_norm(p.norm_ff, x1))));
  if (ctx.drop()) ff = dropout(ff, ctx.dropout, *ctx.rng);
  return add(x1, ff);
}

}  // namespace cool
