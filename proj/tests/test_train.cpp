#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cool/train.hpp"
#include "testutil.hpp"

using namespace cool;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.task = TaskKind::span;
  cfg.hidden = 8;
  cfg.encoder_blocks = 1;
  cfg.heads = 2;
  cfg.vocab = 64;
  cfg.max_len = 24;
  cfg.num_outlook_layers = 1;
  cfg.window = 3;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 42;
  return cfg;
}

Dataset toy_dataset(std::size_t count = 8) {
  const std::string path = cooltest::temp_path("cool_train_toy.jsonl");
  cooltest::write_file(path, cooltest::toy_span_jsonl(count));
  return load_span_jsonl(path);
}

}  // namespace

TEST_CASE("adamw closed-form first step") {
  ParameterStore store;
  Tensor theta = store.add("w", Tensor::from({1}, {1.0}));
  theta.grad_buffer()[0] = 0.5;
  AdamWState state;
  state.weight_decay = 0.01;
  state.epsilon = 0.0;
  state.group_lrs = {{"", 0.1}};
  adamw_step(state, store);
  // m_hat/sqrt(v_hat) = sign(g) at step 1: theta' = 1 - 0.1 - 0.1*0.01*1
  CHECK(store.at("w").data()[0] == doctest::Approx(0.899).epsilon(1e-15));
}

TEST_CASE("adamw zero-grad behaviors") {
  // zero grad, zero wd -> theta unchanged
  {
    ParameterStore store;
    Tensor theta = store.add("w", Tensor::from({2}, {1.5, -2.0}));
    theta.grad_buffer();
    AdamWState state;
    state.weight_decay = 0.0;
    adamw_step(state, store);
    CHECK(store.at("w").data() == std::vector<double>{1.5, -2.0});
  }
  // two zero-grad steps from fresh state decay by exactly (1 - lr*wd)^2
  {
    ParameterStore store;
    Tensor theta = store.add("w", Tensor::from({1}, {2.0}));
    AdamWState state;
    state.weight_decay = 0.01;
    state.group_lrs = {{"", 0.1}};
    theta.grad_buffer();
    adamw_step(state, store);
    theta.zero_grad();
    theta.grad_buffer();
    adamw_step(state, store);
    const double expect = 2.0 * (1.0 - 0.1 * 0.01) * (1.0 - 0.1 * 0.01);
    CHECK(store.at("w").data()[0] == doctest::Approx(expect).epsilon(1e-15));
  }
  // missing gradient names the parameter
  {
    ParameterStore store;
    store.add("naked", Tensor::from({1}, {1.0}));
    AdamWState state;
    CHECK_THROWS_WITH_AS(adamw_step(state, store), doctest::Contains("naked"), Error);
  }
}

TEST_CASE("learning-rate groups by longest prefix") {
  AdamWState state;
  state.group_lrs = {{"", 1e-4}, {"encoder", 3e-5}};
  CHECK(state.lr_for("encoder.block0.query.weight") == 3e-5);
  CHECK(state.lr_for("outlook.layer0.value.weight") == 1e-4);
  CHECK(state.lr_for("head.span.bias") == 1e-4);

  // zero-rate group freezes encoder parameters bit for bit
  ModelConfig cfg = toy_config();
  cfg.epochs = 1;
  cfg.lr_encoder = 0.0;
  cfg.lr_other = 1e-3;
  const Dataset ds = toy_dataset();
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);
  Model m = assemble_model(cfg);
  std::vector<std::vector<double>> before;
  std::vector<std::string> names;
  for (const auto& [name, t] : m.store.items()) {
    if (name.rfind("encoder", 0) == 0) {
      names.push_back(name);
      before.push_back(t.data());
    }
  }
  train_model(m, ds, vocab);
  for (std::size_t i = 0; i < names.size(); ++i) {
    CHECK(m.store.at(names[i]).data() == before[i]);
  }
}

TEST_CASE("lr zero leaves all parameters untouched") {
  ModelConfig cfg = toy_config();
  cfg.epochs = 1;
  cfg.lr_encoder = 0.0;
  cfg.lr_other = 0.0;
  cfg.weight_decay = 0.0;
  const Dataset ds = toy_dataset();
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);
  Model m = assemble_model(cfg);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : m.store.items()) before.push_back(t.data());
  train_model(m, ds, vocab);
  std::size_t i = 0;
  for (const auto& [name, t] : m.store.items()) CHECK(t.data() == before[i++]);
}

TEST_CASE("same seed gives bit-identical loss curves") {
  const Dataset ds = toy_dataset();
  ModelConfig cfg = toy_config();
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);

  Model m1 = assemble_model(cfg);
  Model m2 = assemble_model(cfg);
  const TrainResult r1 = train_model(m1, ds, vocab);
  const TrainResult r2 = train_model(m2, ds, vocab);
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].loss == r2.curve[i].loss);  // bitwise
  }
  CHECK(loss_curve_csv(r1.curve) == loss_curve_csv(r2.curve));

  // and a different seed gives a different curve
  ModelConfig other = cfg;
  other.seed = 77;
  Model m3 = assemble_model(other);
  const TrainResult r3 = train_model(m3, ds, vocab);
  bool any_diff = false;
  for (std::size_t i = 0; i < std::min(r1.curve.size(), r3.curve.size()); ++i) {
    any_diff = any_diff || r1.curve[i].loss != r3.curve[i].loss;
  }
  CHECK(any_diff);
}

TEST_CASE("dropout is config-gated and seeded") {
  const Dataset ds = toy_dataset();
  ModelConfig cfg = toy_config();
  cfg.epochs = 1;
  cfg.dropout = 0.1;
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);

  Model m1 = assemble_model(cfg);
  Model m2 = assemble_model(cfg);
  const TrainResult r1 = train_model(m1, ds, vocab);
  const TrainResult r2 = train_model(m2, ds, vocab);
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].loss == r2.curve[i].loss);  // same seed, same masks
  }

  ModelConfig off = cfg;
  off.dropout = 0.0;
  Model m3 = assemble_model(off);
  const TrainResult r3 = train_model(m3, ds, vocab);
  bool any_diff = false;
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    any_diff = any_diff || r1.curve[i].loss != r3.curve[i].loss;
  }
  CHECK(any_diff);

  // evaluation never drops: reports from the two dropout-trained models match
  const EvalReport e1 = evaluate_model(m1, ds, vocab);
  const EvalReport e2 = evaluate_model(m2, ds, vocab);
  CHECK(e1.metrics.at("f1") == e2.metrics.at("f1"));
}

TEST_CASE("metrics: span EM/F1 hand cases") {
  // pred "early 11th century" vs gold "11th century": EM 0, F1 0.8
  const std::vector<std::string> passage{"in", "the", "early", "11th", "century", "the",
                                         "dukes", "began", "a", "programme"};
  SpanOutcome o;
  o.pred_start = 2;
  o.pred_end = 4;
  o.gold_start = 3;
  o.gold_end = 4;
  CHECK_FALSE(span_exact_match(o));
  CHECK(span_token_f1(o, passage) == doctest::Approx(0.8).epsilon(1e-12));

  // identical spans
  SpanOutcome same;
  same.pred_start = same.gold_start = 3;
  same.pred_end = same.gold_end = 4;
  CHECK(span_exact_match(same));
  CHECK(span_token_f1(same, passage) == 1.0);

  // both no-answer
  SpanOutcome nulls;
  nulls.pred_null = nulls.gold_null = true;
  CHECK(span_exact_match(nulls));
  CHECK(span_token_f1(nulls, passage) == 1.0);

  // one-sided no-answer
  SpanOutcome half;
  half.pred_null = true;
  half.gold_start = 3;
  half.gold_end = 4;
  CHECK_FALSE(span_exact_match(half));
  CHECK(span_token_f1(half, passage) == 0.0);
}

TEST_CASE("metrics: accuracy, entity F1, permutation invariance") {
  CHECK(accuracy({1, 0, 1}, {1, 1, 1}) == doctest::Approx(2.0 / 3.0));

  const std::vector<std::vector<std::string>> gold{{"B-PER", "I-PER", "O", "B-LOC"}};
  CHECK(entity_f1(gold, gold).f1 == 1.0);
  const std::vector<std::vector<std::string>> wrong_type{{"B-ORG", "I-ORG", "O", "B-LOC"}};
  const EntityF1 e = entity_f1(wrong_type, gold);
  CHECK(e.precision == doctest::Approx(0.5));
  CHECK(e.recall == doctest::Approx(0.5));

  // BIO decoding: adjacent B- starts split entities
  const auto ents = decode_bio({"B-PER", "B-PER", "I-PER", "O"});
  REQUIRE(ents.size() == 2);
  CHECK(std::get<1>(ents[0]) == 0);
  CHECK(std::get<2>(ents[0]) == 0);
  CHECK(std::get<1>(ents[1]) == 1);
  CHECK(std::get<2>(ents[1]) == 2);

  // permutation invariance of aggregated span metrics
  const std::vector<std::vector<std::string>> passages{{"a", "b", "c"}, {"x", "y"}};
  std::vector<SpanOutcome> outcomes(2);
  outcomes[0].pred_start = outcomes[0].gold_start = 0;
  outcomes[0].pred_end = outcomes[0].gold_end = 1;
  outcomes[1].pred_start = 0;
  outcomes[1].pred_end = 0;
  outcomes[1].gold_start = 0;
  outcomes[1].gold_end = 1;
  const EvalReport fwd = span_eval_report(outcomes, passages, "d", "h", 1);
  std::vector<SpanOutcome> rev{outcomes[1], outcomes[0]};
  const std::vector<std::vector<std::string>> rev_p{passages[1], passages[0]};
  const EvalReport bwd = span_eval_report(rev, rev_p, "d", "h", 1);
  CHECK(fwd.metrics.at("em") == bwd.metrics.at("em"));
  CHECK(fwd.metrics.at("f1") == bwd.metrics.at("f1"));
}

TEST_CASE("checkpoint roundtrip is byte-identical and checksummed") {
  ModelConfig cfg = toy_config();
  cfg.epochs = 1;
  const Dataset ds = toy_dataset();
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);
  Model m = assemble_model(cfg);
  const TrainResult r = train_model(m, ds, vocab);

  const Checkpoint ckpt =
      snapshot_checkpoint(cfg, m.store, vocab, ds.label_names, r.steps, &r.adam);
  const std::string path = cooltest::temp_path("cool_ckpt_test.bin");
  save_checkpoint(path, ckpt);
  const Checkpoint loaded = load_checkpoint(path);
  save_checkpoint(path + ".2", loaded);

  std::ifstream f1(path, std::ios::binary), f2(path + ".2", std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // loaded model produces bit-identical logits
  Model again = assemble_model(loaded.cfg);
  restore_parameters(loaded, again.store);
  const Vocab vocab2 = Vocab::from_tokens(loaded.vocab_tokens);
  const auto batches = batch_examples(ds, {0}, vocab2, cfg.max_len, 1);
  const TaskOutput a = forward_example(m, batches[0].ids[0], batches[0].segments[0],
                                       batches[0].mask[0]);
  const TaskOutput b = forward_example(again, batches[0].ids[0], batches[0].segments[0],
                                       batches[0].mask[0]);
  CHECK(a.span.start.data() == b.span.start.data());
  CHECK(a.span.end.data() == b.span.end.data());

  // flipped byte in the tensor section -> checksum error
  std::string corrupt = b1;
  corrupt[corrupt.size() / 2] = static_cast<char>(corrupt[corrupt.size() / 2] ^ 0x40);
  cooltest::write_file(path + ".bad", corrupt);
  CHECK_THROWS_WITH_AS(load_checkpoint(path + ".bad"), doctest::Contains("checksum"), Error);

  // version bump -> version error (recompute the checksum so it parses)
  std::string vbad = b1;
  vbad[8] = 2;
  const std::uint32_t crc = crc32(vbad.data(), vbad.size() - 4);
  for (int i = 0; i < 4; ++i) {
    vbad[vbad.size() - 4 + static_cast<std::size_t>(i)] =
        static_cast<char>((crc >> (8 * i)) & 0xFF);
  }
  cooltest::write_file(path + ".ver", vbad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path + ".ver"), doctest::Contains("version"), Error);
}

TEST_CASE("train rejects empty or mismatched datasets") {
  ModelConfig cfg = toy_config();
  Model m = assemble_model(cfg);
  Dataset empty;
  empty.task = TaskKind::span;
  empty.id = "empty";
  Vocab v;
  CHECK_THROWS_WITH_AS(train_model(m, empty, v), doctest::Contains("empty"), Error);

  Dataset wrong;
  wrong.task = TaskKind::seq_class;
  wrong.id = "wrong";
  Example ex;
  ex.passage = {"x"};
  ex.label = 0;
  wrong.examples.push_back(ex);
  CHECK_THROWS_WITH_AS(train_model(m, wrong, v), doctest::Contains("task"), Error);
}

TEST_CASE("evaluate on a memorized model reaches perfect metrics") {
  // quick sanity that train -> evaluate wiring works end to end
  ModelConfig cfg = toy_config();
  cfg.epochs = 60;
  cfg.batch_size = 8;
  cfg.lr_encoder = 1e-3;
  cfg.lr_other = 1e-3;
  cfg.weight_decay = 0.0;
  const Dataset ds = toy_dataset(8);
  const Vocab vocab = build_vocab_for(ds, cfg.vocab);
  Model m = assemble_model(cfg);
  const TrainResult r = train_model(m, ds, vocab);
  CHECK(r.curve.back().loss < r.curve.front().loss);
  const EvalReport rep = evaluate_model(m, ds, vocab);
  CHECK(rep.metrics.at("em") >= 99.0);
  CHECK(rep.metrics.at("f1") >= 99.0);
  CHECK_FALSE(rep.to_json_line().empty());
}
