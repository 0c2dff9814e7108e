#pragma once
// AdamW with decoupled weight decay, bias correction, per-group learning
// rates resolved by longest-prefix match on the parameter name, and global
// gradient-norm clipping.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cool/nn.hpp"

namespace cool {

struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  // prefix -> learning rate; "" is the default group
  std::map<std::string, double> group_lrs{{"", 1e-4}, {"encoder", 3e-5}};
  std::uint64_t step = 0;
  std::unordered_map<std::string, std::vector<double>> m, v;

  double lr_for(const std::string& name) const {
    std::size_t best_len = 0;
    double lr = 0.0;
    bool found = false;
    for (const auto& [prefix, rate] : group_lrs) {
      if (name.compare(0, prefix.size(), prefix) == 0 &&
          (prefix.size() >= best_len || !found)) {
        if (!found || prefix.size() > best_len) {
          best_len = prefix.size();
          lr = rate;
          found = true;
        }
      }
    }
    if (!found) throw Error("no learning-rate group matches parameter '" + name + "'");
    return lr;
  }
};

// Global-norm clipping over every populated gradient; no-op when clip <= 0.
// Returns the pre-clip norm.
inline double clip_gradients(ParameterStore& store, double clip) {
  double sq = 0.0;
  for (auto& [name, t] : store.items()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double factor = clip / norm;
    for (auto& [name, t] : store.items()) {
      if (!t.has_grad()) continue;
      for (double& g : t.grad_buffer()) g *= factor;
    }
  }
  return norm;
}

// One AdamW step over every parameter, in name order:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
inline void adamw_step(AdamWState& state, ParameterStore& store) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const std::string& name : store.sorted_names()) {
    Tensor& param = store.at(name);
    if (!param.has_grad()) {
      throw Error("adamw: missing gradient for parameter '" + name + "'");
    }
    const double lr = state.lr_for(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(param.numel(), 0.0);
    if (v.empty()) v.assign(param.numel(), 0.0);
    auto& theta = param.mutable_data();
    const auto& grad = param.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      const double prev = theta[i];
      theta[i] = prev - lr * m_hat / (std::sqrt(v_hat) + state.epsilon) -
                 lr * state.weight_decay * prev;
    }
  }
}

}  // namespace cool
