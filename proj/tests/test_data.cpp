#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "cool/data.hpp"
#include "testutil.hpp"

using namespace cool;

TEST_CASE("tokenizer normalization") {
  Vocab v;
  v.add("the");
  v.add("cat");
  v.add("sat");
  CHECK(v.encode(tokenize("the cat sat")) == std::vector<long>{4, 5, 6});

  // unseen word maps to unk
  CHECK(v.encode(tokenize("zebra")) == std::vector<long>{Vocab::kUnk});

  // case folding and punctuation splitting
  CHECK(tokenize("Cat, sat.") == std::vector<std::string>{"cat", ",", "sat", "."});
  CHECK(tokenize("cat , sat .") == std::vector<std::string>{"cat", ",", "sat", "."});
  CHECK(tokenize("11th century") == std::vector<std::string>{"11th", "century"});
}

TEST_CASE("vocab build caps and determinism") {
  const std::vector<std::vector<std::string>> streams{{"b", "a", "a", "c"}, {"a", "b"}};
  const Vocab v = Vocab::build(streams, 6);
  CHECK(v.size() == 6);                 // 4 reserved + 2 most frequent
  CHECK(v.encode_one("a") == 4);        // freq 3
  CHECK(v.encode_one("b") == 5);        // freq 2
  CHECK(v.encode_one("c") == Vocab::kUnk);  // capped out

  const Vocab round = Vocab::from_tokens(v.tokens());
  CHECK(round.encode_one("a") == 4);
}

TEST_CASE("span_jsonl reader") {
  const std::string good = cooltest::temp_path("cool_span_ok.jsonl");
  cooltest::write_file(
      good,
      "{\"id\":\"x\",\"question\":\"where is it\",\"context\":\"in the red box\","
      "\"answer_start_token\":2,\"answer_end_token\":3,\"is_impossible\":false}\n");
  const Dataset ds = load_span_jsonl(good);
  CHECK(ds.examples.size() == 1);
  CHECK(ds.examples[0].passage == std::vector<std::string>{"in", "the", "red", "box"});
  CHECK(ds.examples[0].answer_start == 2);

  const std::string reversed = cooltest::temp_path("cool_span_rev.jsonl");
  cooltest::write_file(reversed,
                       "{\"id\":\"x\",\"question\":\"q\",\"context\":\"a b c\","
                       "\"answer_start_token\":2,\"answer_end_token\":1,\"is_impossible\":false}\n");
  CHECK_THROWS_WITH_AS(load_span_jsonl(reversed), doctest::Contains(":1:"), Error);

  const std::string oob = cooltest::temp_path("cool_span_oob.jsonl");
  cooltest::write_file(oob, "{\"id\":\"x\",\"question\":\"q\",\"context\":\"a b\","
                            "\"answer_start_token\":0,\"answer_end_token\":5,"
                            "\"is_impossible\":false}\n");
  CHECK_THROWS_WITH_AS(load_span_jsonl(oob), doctest::Contains("outside"), Error);

  const std::string mangled = cooltest::temp_path("cool_span_bad.jsonl");
  cooltest::write_file(mangled, "{\"id\": nope}\n");
  CHECK_THROWS_WITH_AS(load_span_jsonl(mangled), doctest::Contains(":1:"), Error);
}

TEST_CASE("conll reader") {
  const std::string path = cooltest::temp_path("cool_conll.txt");
  cooltest::write_file(path,
                       "-DOCSTART- -X- -X- O\n\n"
                       "alice NNP B-NP B-PER\n"
                       "visited VBD B-VP O\n"
                       "paris NNP B-NP B-LOC\n"
                       "\n"
                       "bob NNP B-NP B-PER\n");
  const Dataset ds = load_conll(path);
  CHECK(ds.examples.size() == 2);
  CHECK(ds.examples[0].passage == std::vector<std::string>{"alice", "visited", "paris"});
  CHECK(ds.examples[0].tag_names == std::vector<std::string>{"B-PER", "O", "B-LOC"});
  CHECK(ds.label_names == std::vector<std::string>{"B-LOC", "B-PER", "O"});

  const Dataset pos = load_conll(path, "pos");
  CHECK(pos.examples[0].tag_names == std::vector<std::string>{"NNP", "VBD", "NNP"});

  const std::string short_cols = cooltest::temp_path("cool_conll_bad.txt");
  cooltest::write_file(short_cols, "token only\n");
  CHECK_THROWS_WITH_AS(load_conll(short_cols), doctest::Contains(":1:"), Error);
}

TEST_CASE("tsv reader") {
  const std::string path = cooltest::temp_path("cool_tsv.txt");
  cooltest::write_file(path, "pos\tgreat movie !\nneg\tawful film\npos\tloved it\n");
  const Dataset ds = load_tsv(path);
  CHECK(ds.examples.size() == 3);
  CHECK(ds.label_names == std::vector<std::string>{"neg", "pos"});
  CHECK(ds.examples[0].label == 1);
  CHECK(ds.examples[1].label == 0);

  const std::string bad = cooltest::temp_path("cool_tsv_bad.txt");
  cooltest::write_file(bad, "no tab here\n");
  CHECK_THROWS_WITH_AS(load_tsv(bad), doctest::Contains("label<TAB>text"), Error);
}

TEST_CASE("QA packing layout") {
  // q of 3 tokens, p of 4 -> length 10, answer offset shift 5
  Dataset ds;
  ds.task = TaskKind::span;
  Example ex;
  ex.id = "e";
  ex.question = {"where", "is", "it"};
  ex.passage = {"in", "the", "red", "box"};
  ex.answer_start = 2;
  ex.answer_end = 3;
  ds.examples.push_back(ex);
  Vocab v = Vocab::build({ex.question, ex.passage}, 64);

  const auto batches = batch_examples(ds, {0}, v, 32, 1);
  REQUIRE(batches.size() == 1);
  const Batch& b = batches[0];
  CHECK(b.ids[0].size() == 10);
  CHECK(b.passage_offset[0] == 5);
  CHECK(b.span_start[0] == 7);
  CHECK(b.span_end[0] == 8);
  CHECK(b.ids[0][0] == Vocab::kCls);
  CHECK(b.ids[0][4] == Vocab::kSep);
  CHECK(b.ids[0][9] == Vocab::kSep);
  CHECK(b.segments[0] == std::vector<long>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  // candidates are exactly the passage tokens
  CHECK(b.span_candidates[0] ==
        std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 1, 1, 1, 0});
  // mask all true: no padding in a batch of one
  for (auto m : b.mask[0]) CHECK(m == 1);

  // offset roundtrip: packed label back to passage coords recovers the gold
  const long ps = b.span_start[0] - b.passage_offset[0];
  const long pe = b.span_end[0] - b.passage_offset[0];
  CHECK(ps == ex.answer_start);
  CHECK(pe == ex.answer_end);
  CHECK(ex.passage[static_cast<std::size_t>(ps)] == "red");
  CHECK(ex.passage[static_cast<std::size_t>(pe)] == "box");
}

TEST_CASE("truncation drops passage tail, never the question") {
  Dataset ds;
  ds.task = TaskKind::span;
  Example ex;
  ex.id = "e";
  ex.question = {"what", "is", "this"};
  ex.passage = {"t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7"};
  ex.answer_start = 6;  // beyond the truncation window
  ex.answer_end = 7;
  ds.examples.push_back(ex);
  Vocab v = Vocab::build({ex.question, ex.passage}, 64);

  const auto batches = batch_examples(ds, {0}, v, 10, 1);
  const Batch& b = batches[0];
  CHECK(b.ids[0].size() == 10);   // cls + 3 q + sep + 4 passage + sep
  // question intact
  CHECK(b.ids[0][1] == v.encode_one("what"));
  CHECK(b.ids[0][3] == v.encode_one("this"));
  // cut-off gold span becomes the no-answer label
  CHECK(b.span_start[0] == 0);
  CHECK(b.span_end[0] == 0);

  // question alone exceeding Lmax is an error
  CHECK_THROWS_WITH_AS(batch_examples(ds, {0}, v, 5, 1), doctest::Contains("question"), Error);
}

TEST_CASE("batch padding and mask") {
  Dataset ds;
  ds.task = TaskKind::seq_class;
  ds.label_names = {"a", "b"};
  for (int i = 0; i < 2; ++i) {
    Example ex;
    ex.id = "e" + std::to_string(i);
    ex.passage = i == 0 ? std::vector<std::string>{"one", "two"}
                        : std::vector<std::string>{"one", "two", "three", "four"};
    ex.label = i;
    ds.examples.push_back(ex);
  }
  Vocab v = Vocab::build({{"one", "two", "three", "four"}}, 64);
  const auto batches = batch_examples(ds, {0, 1}, v, 16, 2);
  const Batch& b = batches[0];
  CHECK(b.ids[0].size() == b.ids[1].size());
  CHECK(b.mask[0] == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0});
  CHECK(b.mask[1] == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1});
  CHECK(b.ids[0][4] == Vocab::kPad);

  // equal-length examples: no padding at all
  Dataset eq;
  eq.task = TaskKind::seq_class;
  eq.label_names = {"a"};
  for (int i = 0; i < 2; ++i) {
    Example ex;
    ex.id = "q" + std::to_string(i);
    ex.passage = {"one", "two"};
    ex.label = 0;
    eq.examples.push_back(ex);
  }
  const auto eq_batches = batch_examples(eq, {0, 1}, v, 16, 2);
  for (const auto& row : eq_batches[0].mask) {
    for (auto m : row) CHECK(m == 1);
  }
}
