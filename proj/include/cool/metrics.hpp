#pragma once
// Task metrics: exact match and token-overlap F1 for spans, accuracy for
// classification, entity-level F1 (exact boundary + type over BIO tags) and
// token accuracy for tagging. Reports carry provenance and serialize as one
// JSON object per line.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cool/common.hpp"

namespace cool {

// Harmonic mean of precision/recall over the bags (multisets) of predicted
// vs. gold answer tokens; 1 when both are empty, 0 when exactly one is.
template <typename Token>
double token_overlap_f1(const std::vector<Token>& pred, const std::vector<Token>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<Token, std::size_t> gold_counts;
  for (const Token& t : gold) ++gold_counts[t];
  std::size_t overlap = 0;
  for (const Token& t : pred) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

struct SpanOutcome {
  bool pred_null = false;
  std::size_t pred_start = 0, pred_end = 0;  // inclusive, passage-token coords
  bool gold_null = false;
  std::size_t gold_start = 0, gold_end = 0;
};

inline bool span_exact_match(const SpanOutcome& s) {
  if (s.pred_null || s.gold_null) return s.pred_null == s.gold_null;
  return s.pred_start == s.gold_start && s.pred_end == s.gold_end;
}

// F1 over the token bags of the two spans drawn from the same passage.
template <typename Token>
double span_token_f1(const SpanOutcome& s, const std::vector<Token>& passage) {
  std::vector<Token> pred, gold;
  if (!s.pred_null) {
    pred.assign(passage.begin() + static_cast<std::ptrdiff_t>(s.pred_start),
                passage.begin() + static_cast<std::ptrdiff_t>(s.pred_end) + 1);
  }
  if (!s.gold_null) {
    gold.assign(passage.begin() + static_cast<std::ptrdiff_t>(s.gold_start),
                passage.begin() + static_cast<std::ptrdiff_t>(s.gold_end) + 1);
  }
  return token_overlap_f1(pred, gold);
}

inline double accuracy(const std::vector<long>& pred, const std::vector<long>& gold) {
  if (pred.size() != gold.size()) throw Error("accuracy: prediction/gold length mismatch");
  if (pred.empty()) throw Error("accuracy: empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// (type, start, end) entities decoded from BIO tag names: B-X starts an
// entity, I-X continues one of the same type (or starts one when out of
// sequence), anything else closes.
inline std::vector<std::tuple<std::string, std::size_t, std::size_t>> decode_bio(
    const std::vector<std::string>& tags) {
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> entities;
  std::string open_type;
  std::size_t open_start = 0;
  auto close = [&](std::size_t end) {
    if (!open_type.empty()) entities.emplace_back(open_type, open_start, end);
    open_type.clear();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t.size() > 2 && t[1] == '-' && (t[0] == 'B' || t[0] == 'I')) {
      const std::string type = t.substr(2);
      if (t[0] == 'B' || type != open_type) {
        close(i - 1);
        open_type = type;
        open_start = i;
      }
    } else {
      close(i - 1);
    }
  }
  close(tags.empty() ? 0 : tags.size() - 1);
  return entities;
}

struct EntityF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline EntityF1 entity_f1(const std::vector<std::vector<std::string>>& pred_tags,
                          const std::vector<std::vector<std::string>>& gold_tags) {
  if (pred_tags.size() != gold_tags.size()) throw Error("entity_f1: example count mismatch");
  std::size_t pred_total = 0, gold_total = 0, hits = 0;
  for (std::size_t i = 0; i < pred_tags.size(); ++i) {
    const auto pred = decode_bio(pred_tags[i]);
    const auto gold = decode_bio(gold_tags[i]);
    pred_total += pred.size();
    gold_total += gold.size();
    for (const auto& e : pred) {
      for (const auto& g : gold) {
        if (e == g) {
          ++hits;
          break;
        }
      }
    }
  }
  EntityF1 out;
  out.precision = pred_total ? static_cast<double>(hits) / static_cast<double>(pred_total) : 0.0;
  out.recall = gold_total ? static_cast<double>(hits) / static_cast<double>(gold_total) : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

// Per-task metric record. All metric values are percentages in [0, 100].
struct EvalReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::string dataset_id;
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string to_json_line() const {
    nlohmann::json j;
    j["task"] = task;
    j["metrics"] = metrics;
    j["dataset"] = dataset_id;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    return j.dump();
  }
};

// Aggregates span outcomes into EM / F1 percentages.
template <typename Token>
EvalReport span_eval_report(const std::vector<SpanOutcome>& outcomes,
                            const std::vector<std::vector<Token>>& passages,
                            const std::string& dataset_id, const std::string& config_hash,
                            std::uint64_t seed) {
  if (outcomes.size() != passages.size()) throw Error("span eval: passage count mismatch");
  if (outcomes.empty()) throw Error("span eval: no examples");
  double em = 0.0, f1 = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    em += span_exact_match(outcomes[i]) ? 1.0 : 0.0;
    f1 += span_token_f1(outcomes[i], passages[i]);
  }
  EvalReport rep;
  rep.task = "span";
  rep.metrics["em"] = 100.0 * em / static_cast<double>(outcomes.size());
  rep.metrics["f1"] = 100.0 * f1 / static_cast<double>(outcomes.size());
  rep.dataset_id = dataset_id;
  rep.config_hash = config_hash;
  rep.seed = seed;
  return rep;
}

}  // namespace cool
