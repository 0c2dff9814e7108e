#pragma once
// Gradient-check and oracle-equivalence runners behind the gradcheck and
// oracle-diff CLI commands. Each runner returns DiffReports; callers decide
// how to render them.

#include <functional>
#include <string>
#include <vector>

#include "cool/model.hpp"
#include "cool/oracle.hpp"
#include "cool/train.hpp"

namespace cool::oracle {

namespace detail_verify {

// FD-vs-autodiff over every parameter of a store for a scalar forward.
// A check that misses tolerance at the default h is re-verified on an
// h-refinement ladder: central-difference truncation shrinks as h^2 and
// passes, while a genuinely wrong gradient is h-independent and still fails.
inline void check_all_params(ParameterStore& store, const std::string& label,
                             const std::function<Tensor()>& forward,
                             std::vector<DiffReport>& out) {
  store.zero_grads();
  backward(forward());
  for (auto& [name, param] : store.items()) {
    auto fd_at = [&](double h) {
      return finite_difference_gradient(
          [&](const std::vector<double>& flat) {
            auto& data = store.at(name).mutable_data();
            const std::vector<double> keep = data;
            data = flat;
            const double value = forward().value();
            data = keep;
            return value;
          },
          param.data(), h);
    };
    DiffReport rep = gradient_report(label + "/" + name, param.grad(), fd_at(1e-5));
    for (double h : {1e-6, 3e-7}) {
      if (rep.pass) break;
      rep = gradient_report(label + "/" + name + "@h=" + std::to_string(h), param.grad(),
                            fd_at(h));
    }
    out.push_back(rep);
  }
}

// Fixed pseudo-random projection to a scalar; the coefficients depend only
// on the salt and shape, so repeated evaluations see the same objective.
inline Tensor probe(const Tensor& x, std::uint64_t salt) {
  Rng rng(salt);
  Tensor coeff = Tensor::zeros(x.shape());
  for (double& v : coeff.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return sum_all(mul(x, coeff));
}

}  // namespace detail_verify

// Gradient checks for every parameterized layer and each integration mode,
// at small shapes (L <= 6, H <= 8, K = 3).
inline std::vector<DiffReport> run_gradchecks(std::uint64_t seed) {
  using detail_verify::check_all_params;
  std::vector<DiffReport> reports;
  Rng rng(seed);
  auto probe = [&](const Tensor& x) {
    return detail_verify::probe(x, seed ^ 0x5555AAAA5555AAAAULL);
  };
  auto rand_mat = [&](Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
    return t;
  };

  {
    ParameterStore store;
    LinearParams p = make_linear(store, "linear", 4, 3, rng);
    const Tensor x = rand_mat({5, 4});
    check_all_params(store, "linear", [&] { return probe(linear(p, x)); }, reports);
  }
  {
    ParameterStore store;
    LayerNormParams p = make_layer_norm(store, "layer_norm", 6);
    const Tensor x = rand_mat({4, 6});
    check_all_params(store, "layer_norm", [&] { return probe(layer_norm(p, x)); }, reports);
  }
  {
    ParameterStore store;
    Tensor table = store.add("embed.table", make_embedding_table(7, 4, rng));
    const std::vector<long> ids{0, 3, 3, 6, 1};
    check_all_params(store, "embed", [&] { return probe(embed(table, ids)); }, reports);
  }
  {
    ParameterStore store;
    ConvBranchParams p = make_conv_branch(store, "conv_branch", 3, 6, 2, rng);
    const Tensor x = rand_mat({5, 6});
    check_all_params(store, "conv_branch", [&] { return probe(conv_branch(p, x)); }, reports);
  }
  {
    ParameterStore store;
    ConvBlockParams p = make_conv_block(store, "conv_block", {3, 4}, {2, 2}, 6, rng);
    const Tensor x = rand_mat({6, 6});
    check_all_params(store, "conv_block", [&] { return probe(conv_block_forward(p, x)); },
                     reports);
  }
  for (SoftmaxScope scope : {SoftmaxScope::per_channel, SoftmaxScope::flattened}) {
    ParameterStore store;
    OutlookLayerParams p = make_outlook_layer(store, "outlook", 3, 4, scope, rng);
    const Tensor x = rand_mat({6, 4});
    std::vector<std::uint8_t> mask(6, 1);
    mask[5] = 0;
    const std::string label = std::string("outlook_layer_") + to_string(scope);
    check_all_params(store, label,
                     [&] { return probe(outlook_layer_forward(p, x, mask)); }, reports);
  }
  {
    ParameterStore store;
    EncoderBlockParams p = make_encoder_block(store, "encoder_block", 8, 2, rng);
    const Tensor x = rand_mat({5, 8});
    std::vector<std::uint8_t> mask{1, 1, 1, 1, 0};
    check_all_params(store, "encoder_block", [&] { return probe(encoder_block(p, x, mask)); },
                     reports);
  }

  // task heads, through their losses on a tiny model
  auto tiny = [&](TaskKind task) {
    ModelConfig cfg;
    cfg.task = task;
    cfg.hidden = 8;
    cfg.encoder_blocks = 1;
    cfg.heads = 2;
    cfg.vocab = 12;
    cfg.max_len = 8;
    cfg.num_outlook_layers = 1;
    cfg.num_labels = 3;
    cfg.seed = seed;
    return cfg;
  };
  const std::vector<long> ids{4, 7, 5, 9, 6};
  const std::vector<long> segs{0, 0, 1, 1, 1};
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 0};

  {
    Model m = assemble_model(tiny(TaskKind::span));
    check_all_params(
        m.store, "head_span",
        [&] { return span_loss(forward_example(m, ids, segs, mask).span, 2, 3); }, reports);
  }
  {
    Model m = assemble_model(tiny(TaskKind::seq_class));
    check_all_params(
        m.store, "head_class",
        [&] {
          return classification_loss(forward_example(m, ids, segs, mask).class_logits, 1);
        },
        reports);
  }
  {
    Model m = assemble_model(tiny(TaskKind::token_tag));
    const std::vector<long> tags{-1, 0, 2, 1, -1};
    check_all_params(
        m.store, "head_tag",
        [&] { return tagging_loss(forward_example(m, ids, segs, mask).tag_logits, tags); },
        reports);
  }
  {
    Model m = assemble_model(tiny(TaskKind::multi_choice));
    const std::vector<long> alt{4, 5, 6, 7, 8};
    check_all_params(
        m.store, "head_choice",
        [&] {
          const Tensor s0 = forward_example(m, ids, segs, mask).choice_score;
          const Tensor s1 = forward_example(m, alt, segs, mask).choice_score;
          return choice_loss({s0, s1}, 1);
        },
        reports);
  }

  // full integration modes, span task
  for (IntegrationMode mode :
       {IntegrationMode::global_to_local, IntegrationMode::local_to_global,
        IntegrationMode::global_and_local}) {
    ModelConfig cfg = tiny(TaskKind::span);
    cfg.mode = mode;
    cfg.use_conv_block = true;
    cfg.conv_widths = {3, 4};
    cfg.conv_filters = {3, 3};
    Model m = assemble_model(cfg);
    check_all_params(
        m.store, std::string("mode_") + to_string(mode),
        [&] { return span_loss(forward_example(m, ids, segs, mask).span, 2, 3); }, reports);
  }
  return reports;
}

// Main-path vs naive-reference outlook comparison over random configurations.
inline std::vector<DiffReport> run_oracle_diff(std::size_t cases, std::uint64_t seed,
                                               double tol = 1e-10) {
  std::vector<DiffReport> reports;
  Rng rng(seed);
  for (std::size_t c = 0; c < cases; ++c) {
    const SoftmaxScope scope =
        c % 2 == 0 ? SoftmaxScope::per_channel : SoftmaxScope::flattened;
    const std::size_t K = 2 * rng.below(3) + 1;
    const std::size_t F = 1 + rng.below(8);
    const std::size_t L = 1 + rng.below(16);
    ParameterStore store;
    OutlookLayerParams p = make_outlook_layer(store, "ol", K, F, scope, rng);
    for (auto& [name, t] : store.items()) {
      if (name.find("norm") != std::string::npos || name.find("bias") != std::string::npos) {
        for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
      }
    }
    std::vector<std::uint8_t> mask(L, 1);
    for (std::size_t i = 1; i < L; ++i) {
      if (rng.uniform() < 0.15) mask[i] = 0;
    }
    Tensor x = Tensor::zeros({L, F});
    for (double& v : x.mutable_data()) v = rng.uniform(-1.5, 1.5);
    const Tensor fast = outlook_layer_forward(p, x, mask);
    const Tensor slow = naive_outlook_reference(p, x, mask);
    const std::string name = "case" + std::to_string(c) + "_L" + std::to_string(L) + "_K" +
                             std::to_string(K) + "_F" + std::to_string(F) + "_" +
                             to_string(scope);
    reports.push_back(equivalence_report(name, fast, slow, tol));
  }
  return reports;
}

inline bool all_pass(const std::vector<DiffReport>& reports) {
  for (const auto& r : reports) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace cool::oracle
