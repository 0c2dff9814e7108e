#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cool/nn.hpp"
#include "cool/oracle.hpp"
#include "testutil.hpp"

using namespace cool;
using cooltest::all_real;
using cooltest::random_tensor;

namespace {

// check the gradient of every parameter in the store against central
// differences; forward must be a deterministic function of the params
void check_store_grads(ParameterStore& store, const std::function<Tensor()>& forward) {
  store.zero_grads();
  backward(forward());
  for (auto& [name, param] : store.items()) {
    const auto fd = oracle::finite_difference_gradient(
        [&](const std::vector<double>& flat) {
          auto& data = store.at(name).mutable_data();
          const std::vector<double> keep = data;
          data = flat;
          const double out = forward().value();
          data = keep;
          return out;
        },
        param.data());
    const auto rep = oracle::gradient_report(name, param.grad(), fd);
    CAPTURE(name);
    CAPTURE(rep.max_abs);
    CAPTURE(rep.max_rel);
    CHECK(rep.pass);
  }
}

}  // namespace

TEST_CASE("linear layer") {
  ParameterStore store;
  Rng rng(1);
  LinearParams p = make_linear(store, "lin", 3, 3, rng);

  // identity weight, zero bias -> unchanged
  auto& w = store.at("lin.weight").mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const Tensor x = random_tensor({4, 3}, rng);
  CHECK(linear(p, x).data() == x.data());

  // zero weight, bias b -> every row equals b
  std::fill(w.begin(), w.end(), 0.0);
  store.at("lin.bias").mutable_data() = {5, 6, 7};
  const Tensor out = linear(p, x);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(out.at({r, 0}) == 5.0);
    CHECK(out.at({r, 1}) == 6.0);
    CHECK(out.at({r, 2}) == 7.0);
  }

  // random case matches naive loops
  ParameterStore store2;
  LinearParams q = make_linear(store2, "q", 4, 2, rng);
  const Tensor y = random_tensor({3, 4}, rng);
  const Tensor got = linear(q, y);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = q.bias.data()[o];
      for (std::size_t i = 0; i < 4; ++i) acc += y.at({r, i}) * q.weight.at({i, o});
      CHECK(got.at({r, o}) == doctest::Approx(acc).epsilon(1e-14));
    }
  }

  CHECK_THROWS_AS(linear(q, random_tensor({3, 5}, rng)), Error);
}

TEST_CASE("layer norm values and properties") {
  ParameterStore store;
  LayerNormParams p = make_layer_norm(store, "ln", 2, 1e-12);
  const Tensor row = Tensor::from({1, 2}, {1, 3});
  const Tensor out = layer_norm(p, row);
  CHECK(out.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(out.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-6));

  // constant row -> zeros, then shift
  store.at("ln.shift").mutable_data() = {2.5, 2.5};
  const Tensor c = layer_norm(p, Tensor::from({1, 2}, {4, 4}));
  CHECK(c.at({0, 0}) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(c.at({0, 1}) == doctest::Approx(2.5).epsilon(1e-12));

  // identity affine: output rows have mean ~0 and variance ~1
  ParameterStore store2;
  LayerNormParams q = make_layer_norm(store2, "ln", 8, 1e-10);
  Rng rng(2);
  const Tensor x = random_tensor({5, 8}, rng, -2, 2);
  const Tensor normed = layer_norm(q, x);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t f = 0; f < 8; ++f) mean += normed.at({r, f});
    mean /= 8;
    for (std::size_t f = 0; f < 8; ++f) {
      var += (normed.at({r, f}) - mean) * (normed.at({r, f}) - mean);
    }
    var /= 8;
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("embedding") {
  Rng rng(3);
  Tensor table = make_embedding_table(5, 4, rng);
  const Tensor two = embed(table, {0, 0});
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(two.at({0, j}) == table.at({0, j}));
    CHECK(two.at({1, j}) == table.at({0, j}));
  }
  // naive indexing on random ids
  const std::vector<long> ids{3, 1, 4, 1};
  const Tensor got = embed(table, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(got.at({i, j}) == table.at({static_cast<std::size_t>(ids[i]), j}));
    }
  }
  CHECK_THROWS_AS(embed(table, {5}), Error);
  CHECK_THROWS_AS(embed(table, {-1}), Error);
}

TEST_CASE("encoder block contract") {
  ParameterStore store;
  Rng rng(4);
  EncoderBlockParams p = make_encoder_block(store, "blk", 8, 2, rng);

  // L=1: single key gets weight 1; output equals residual+FFN path
  const Tensor x1 = random_tensor({1, 8}, rng);
  const Tensor out1 = encoder_block(p, x1, all_real(1));
  CHECK(out1.shape() == Shape{1, 8});

  // attention rows sum to 1 over unmasked keys, pads get zero weight:
  // checked indirectly by padding independence of real positions
  const std::size_t L = 5;
  std::vector<std::uint8_t> mask(L, 1);
  mask[3] = mask[4] = 0;
  Tensor a = random_tensor({L, 8}, rng);
  Tensor b = Tensor::from(a.shape(), a.data());
  for (std::size_t j = 0; j < 8; ++j) {
    b.mutable_data()[3 * 8 + j] = 99.0;
    b.mutable_data()[4 * 8 + j] = -99.0;
  }
  const Tensor oa = encoder_block(p, a, mask);
  const Tensor ob = encoder_block(p, b, mask);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(oa.at({i, j}) == doctest::Approx(ob.at({i, j})).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(encoder_block(p, a, std::vector<std::uint8_t>(L, 0)), Error);
  CHECK_THROWS_AS(make_encoder_block(store, "bad", 6, 4, rng), Error);
}

TEST_CASE("gradient checks for nn layers") {
  Rng rng(6);

  {
    ParameterStore store;
    LinearParams p = make_linear(store, "lin", 4, 3, rng);
    const Tensor x = random_tensor({5, 4}, rng);
    check_store_grads(store, [&] { return cooltest::probe_loss(linear(p, x)); });
  }
  {
    ParameterStore store;
    LayerNormParams p = make_layer_norm(store, "ln", 6);
    const Tensor x = random_tensor({4, 6}, rng);
    check_store_grads(store, [&] { return cooltest::probe_loss(layer_norm(p, x)); });
  }
  {
    ParameterStore store;
    EncoderBlockParams p = make_encoder_block(store, "blk", 8, 2, rng);
    const Tensor x = random_tensor({4, 8}, rng);
    std::vector<std::uint8_t> mask{1, 1, 1, 0};
    check_store_grads(store, [&] { return cooltest::probe_loss(encoder_block(p, x, mask)); });
  }
}
