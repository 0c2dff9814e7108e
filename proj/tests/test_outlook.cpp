#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cool/oracle.hpp"
#include "cool/outlook.hpp"
#include "testutil.hpp"

using namespace cool;
using cooltest::all_real;
using cooltest::random_tensor;

namespace {

OutlookLayerParams random_layer(ParameterStore& store, std::size_t K, std::size_t F, Rng& rng,
                                SoftmaxScope scope = SoftmaxScope::per_channel,
                                const std::string& prefix = "ol") {
  OutlookLayerParams p = make_outlook_layer(store, prefix, K, F, scope, rng);
  // non-trivial norms and biases so tests do not ride on defaults
  for (auto& [name, t] : store.items()) {
    if (name.rfind(prefix, 0) == 0 && (name.find("norm") != std::string::npos ||
                                       name.find("bias") != std::string::npos)) {
      for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("aggregation core hand cases") {
  // K=1: weights are identically 1, output equals the values
  {
    Rng rng(1);
    const Tensor v = random_tensor({4, 3}, rng);
    const Tensor logits = random_tensor({4, 3}, rng);  // K*K*F = 3
    OutlookTrace trace;
    const Tensor out =
        outlook_aggregate(v, logits, 1, SoftmaxScope::per_channel, all_real(4), &trace);
    CHECK(out.data() == v.data());
    for (double w : trace.weights.data()) CHECK(w == 1.0);
  }

  // L=1, K=3: only the anchor is a valid source; only the center window row
  // folds back, so the output is exactly the value row
  {
    Rng rng(2);
    const Tensor v = random_tensor({1, 2}, rng);
    const Tensor logits = random_tensor({1, 18}, rng);
    const Tensor out = outlook_aggregate(v, logits, 3, SoftmaxScope::per_channel, all_real(1));
    CHECK(out.shape() == Shape{1, 2});
    CHECK(out.at({0, 0}) == doctest::Approx(v.at({0, 0})).epsilon(1e-12));
    CHECK(out.at({0, 1}) == doctest::Approx(v.at({0, 1})).epsilon(1e-12));
  }

  // L=2, K=3, F=1, zero logits, v=[1,3]: every window row averages {1,3} -> 2,
  // each position is covered by 2 window rows -> [4,4]
  {
    const Tensor v = Tensor::from({2, 1}, {1, 3});
    const Tensor logits = Tensor::zeros({2, 9});
    const Tensor out = outlook_aggregate(v, logits, 3, SoftmaxScope::per_channel, all_real(2));
    CHECK(out.data() == std::vector<double>{4, 4});
    // same under the flattened scope (uniform logits, same valid set per row)
    const Tensor out2 = outlook_aggregate(v, logits, 3, SoftmaxScope::flattened, all_real(2));
    CHECK(out2.data() == std::vector<double>{4, 4});
  }
}

TEST_CASE("layer zero-perturbation identity and shape") {
  Rng rng(3);
  ParameterStore store;
  OutlookLayerParams p = make_outlook_layer(store, "ol", 3, 4, SoftmaxScope::per_channel, rng);
  std::fill(store.at("ol.value.weight").mutable_data().begin(),
            store.at("ol.value.weight").mutable_data().end(), 0.0);
  std::fill(store.at("ol.mlp.weight").mutable_data().begin(),
            store.at("ol.mlp.weight").mutable_data().end(), 0.0);
  const Tensor x = random_tensor({5, 4}, rng);
  CHECK(outlook_layer_forward(p, x, all_real(5)).data() == x.data());

  ParameterStore store2;
  OutlookLayerParams q = random_layer(store2, 3, 6, rng);
  const Tensor y = random_tensor({7, 6}, rng);
  CHECK(outlook_layer_forward(q, y, all_real(7)).shape() == y.shape());
}

TEST_CASE("layer matches the naive reference, both scopes") {
  Rng rng(4);
  for (SoftmaxScope scope : {SoftmaxScope::per_channel, SoftmaxScope::flattened}) {
    for (int c = 0; c < 20; ++c) {
      const std::size_t K = 2 * rng.below(3) + 1;  // 1,3,5
      const std::size_t F = 1 + rng.below(6);
      const std::size_t L = 1 + rng.below(10);
      ParameterStore store;
      OutlookLayerParams p = random_layer(store, K, F, rng, scope);
      std::vector<std::uint8_t> mask(L, 1);
      for (std::size_t i = 1; i < L; ++i) {
        if (rng.uniform() < 0.2) mask[i] = 0;  // padded tail-ish positions
      }
      const Tensor x = random_tensor({L, F}, rng);
      const Tensor fast = outlook_layer_forward(p, x, mask);
      const Tensor slow = oracle::naive_outlook_reference(p, x, mask);
      const auto rep = oracle::equivalence_report("outlook", fast, slow, 1e-10);
      CAPTURE(static_cast<int>(scope));
      CAPTURE(K);
      CAPTURE(F);
      CAPTURE(L);
      CHECK(rep.max_abs <= 1e-10);
    }
  }
}

TEST_CASE("per-window weights sum to one over valid sources") {
  Rng rng(5);
  ParameterStore store;
  OutlookLayerParams p = random_layer(store, 3, 3, rng);
  const std::size_t L = 6;
  std::vector<std::uint8_t> mask(L, 1);
  mask[4] = mask[5] = 0;
  const Tensor x = random_tensor({L, 3}, rng);
  OutlookTrace trace;
  outlook_attend(p, x, mask, &trace);
  const std::size_t K = 3, F = 3;
  const Mask validity = unfold_validity(L, K);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t f = 0; f < F; ++f) {
        double sum = 0.0;
        for (std::size_t r = 0; r < K; ++r) {
          const double w = trace.weights.at({i, j, r, f});
          const long src = static_cast<long>(i) + static_cast<long>(r) - 1;
          const bool valid = validity.at2(i, r) && mask[static_cast<std::size_t>(src)];
          if (!mask[i] || !valid) {
            CHECK(w == 0.0);  // pads and out-of-range sources carry zero weight
          }
          sum += w;
        }
        if (mask[i]) CHECK(std::fabs(sum - 1.0) <= 1e-9);
      }
    }
  }
}

TEST_CASE("weights depend only on the anchor token") {
  Rng rng(6);
  ParameterStore store;
  OutlookLayerParams p = random_layer(store, 3, 2, rng);
  const std::size_t L = 5;
  const Tensor x = random_tensor({L, 2}, rng);
  OutlookTrace base;
  outlook_attend(p, x, all_real(L), &base);

  const std::size_t target = 2;
  Tensor perturbed = Tensor::from(x.shape(), x.data());
  perturbed.mutable_data()[target * 2] += 0.37;
  OutlookTrace moved;
  outlook_attend(p, perturbed, all_real(L), &moved);

  const std::size_t stride = 3 * 3 * 2;
  for (std::size_t i = 0; i < L; ++i) {
    bool changed = false;
    for (std::size_t k = 0; k < stride; ++k) {
      if (base.weights.data()[i * stride + k] != moved.weights.data()[i * stride + k]) {
        changed = true;
      }
    }
    if (i == target) {
      CHECK(changed);
    } else {
      CHECK_FALSE(changed);
    }
  }
}

TEST_CASE("padding independence of real positions") {
  Rng rng(7);
  ParameterStore store;
  OutlookLayerParams p = random_layer(store, 3, 3, rng);
  const std::size_t L = 6;
  std::vector<std::uint8_t> mask(L, 1);
  mask[4] = mask[5] = 0;
  const Tensor a = random_tensor({L, 3}, rng);
  Tensor b = Tensor::from(a.shape(), a.data());
  for (std::size_t j = 0; j < 3; ++j) {
    b.mutable_data()[4 * 3 + j] = 123.0;
    b.mutable_data()[5 * 3 + j] = -7.0;
  }
  const Tensor oa = outlook_layer_forward(p, a, mask);
  const Tensor ob = outlook_layer_forward(p, b, mask);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(oa.at({i, j}) == doctest::Approx(ob.at({i, j})).epsilon(1e-12));
    }
  }
}

TEST_CASE("every window containing a position contributes to it") {
  // zero one anchor's windows in the naive path: the result changes exactly
  // at the positions |i - u| <= K/2 covered by that anchor's window
  Rng rng(8);
  ParameterStore store;
  OutlookLayerParams p = random_layer(store, 5, 2, rng);
  const std::size_t L = 9, K = 5;
  const Tensor x = random_tensor({L, 2}, rng);
  const Tensor base = oracle::naive_outlook_reference(p, x, all_real(L));
  const long u = 4;
  oracle::NaiveOutlookOptions opt;
  opt.skip_anchor = u;
  const Tensor cut = oracle::naive_outlook_reference(p, x, all_real(L), opt);
  for (std::size_t i = 0; i < L; ++i) {
    bool differs = false;
    for (std::size_t f = 0; f < 2; ++f) {
      if (std::fabs(base.at({i, f}) - cut.at({i, f})) > 1e-12) differs = true;
    }
    const bool covered = std::llabs(static_cast<long long>(i) - u) <= static_cast<long long>(K / 2);
    CHECK(differs == covered);
  }
}

TEST_CASE("block composition") {
  Rng rng(9);
  ParameterStore store;
  OutlookBlockParams block =
      make_outlook_block(store, "blk", 2, 3, 4, SoftmaxScope::per_channel, rng);
  const Tensor x = random_tensor({5, 4}, rng);
  const auto mask = all_real(5);

  // empty block is the identity
  OutlookBlockParams empty;
  CHECK(outlook_block_forward(empty, x, mask).data() == x.data());

  // 2-layer block == layer(layer(x))
  const Tensor manual =
      outlook_layer_forward(block.layers[1], outlook_layer_forward(block.layers[0], x, mask), mask);
  CHECK(outlook_block_forward(block, x, mask).data() == manual.data());
}

TEST_CASE("gradient check on a full outlook layer and block") {
  Rng rng(10);
  for (SoftmaxScope scope : {SoftmaxScope::per_channel, SoftmaxScope::flattened}) {
    ParameterStore store;
    OutlookBlockParams block = make_outlook_block(store, "blk", 2, 3, 3, scope, rng);
    const Tensor x = random_tensor({4, 3}, rng);
    std::vector<std::uint8_t> mask{1, 1, 1, 0};

    store.zero_grads();
    backward(cooltest::probe_loss(outlook_block_forward(block, x, mask)));
    for (auto& [name, param] : store.items()) {
      const auto fd = oracle::finite_difference_gradient(
          [&](const std::vector<double>& flat) {
            auto& data = store.at(name).mutable_data();
            const std::vector<double> keep = data;
            data = flat;
            const double out = cooltest::probe_loss(outlook_block_forward(block, x, mask)).value();
            data = keep;
            return out;
          },
          param.data());
      const auto rep = oracle::gradient_report(name, param.grad(), fd);
      CAPTURE(name);
      CAPTURE(rep.max_rel);
      CHECK(rep.pass);
    }
  }
}
