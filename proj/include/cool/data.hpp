#pragma once
// Tokenization with a built vocabulary, dataset readers for span_jsonl /
// conll / tsv, and batch construction with padding, masks, and the
// [cls, question, sep, passage, sep] packing for QA.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cool/common.hpp"
#include "cool/config.hpp"

namespace cool {

// Lowercase, split on whitespace and punctuation boundaries; punctuation
// marks become single-character tokens. Bytes >= 0x80 count as word
// characters so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && !std::isalnum(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

class Vocab {
 public:
  static constexpr long kPad = 0;
  static constexpr long kUnk = 1;
  static constexpr long kCls = 2;
  static constexpr long kSep = 3;

  Vocab() {
    tokens_ = {"<pad>", "<unk>", "<cls>", "<sep>"};
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<long>(i);
  }

  // Build from token streams: frequency order (ties by token), capped at
  // `cap` total entries including the four reserved ids.
  static Vocab build(const std::vector<std::vector<std::string>>& streams, std::size_t cap) {
    if (cap < 5) throw Error("vocab: cap must leave room beyond the reserved ids");
    std::map<std::string, std::size_t> counts;
    for (const auto& stream : streams) {
      for (const auto& tok : stream) ++counts[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, count] : ranked) {
      if (v.size() >= cap) break;
      v.add(tok);
    }
    return v;
  }

  long add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const long id = static_cast<long>(tokens_.size());
    tokens_.push_back(token);
    index_[token] = id;
    return id;
  }

  long encode_one(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<long> encode(const std::vector<std::string>& tokens) const {
    std::vector<long> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(encode_one(t));
    return ids;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 4) throw Error("vocab: token list missing reserved entries");
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.index_.clear();
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
      v.index_[v.tokens_[i]] = static_cast<long>(i);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, long> index_;
};

// One raw example; which fields are live depends on the task.
struct Example {
  std::string id;
  std::vector<std::string> question;  // span task
  std::vector<std::string> passage;   // span: context; others: the text
  bool impossible = false;
  long answer_start = 0;  // inclusive token indices into passage
  long answer_end = 0;
  long label = -1;                      // seq_class / multi_choice correct index
  std::vector<std::string> tag_names;  // token_tag, aligned with passage
};

struct Dataset {
  TaskKind task = TaskKind::span;
  std::string id;  // source path
  std::vector<Example> examples;
  std::vector<std::string> label_names;  // seq_class / token_tag
};

enum class DataFormat { span_jsonl, conll, tsv };

inline DataFormat format_from_string(const std::string& s) {
  if (s == "span_jsonl") return DataFormat::span_jsonl;
  if (s == "conll") return DataFormat::conll;
  if (s == "tsv") return DataFormat::tsv;
  throw Error("unknown dataset format '" + s + "' (expected span_jsonl, conll, or tsv)");
}

// ---------------------------------------------------------------------------
// readers
// ---------------------------------------------------------------------------

inline Dataset load_span_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  Dataset ds;
  ds.task = TaskKind::span;
  ds.id = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    Example ex;
    try {
      ex.id = j.at("id").get<std::string>();
      ex.question = tokenize(j.at("question").get<std::string>());
      ex.passage = tokenize(j.at("context").get<std::string>());
      ex.impossible = j.at("is_impossible").get<bool>();
      ex.answer_start = j.at("answer_start_token").get<long>();
      ex.answer_end = j.at("answer_end_token").get<long>();
    } catch (const std::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": missing or bad field: " + e.what());
    }
    if (!ex.impossible) {
      if (ex.answer_end < ex.answer_start) {
        throw Error(path + ":" + std::to_string(line_no) + ": answer_end_token " +
                    std::to_string(ex.answer_end) + " precedes answer_start_token " +
                    std::to_string(ex.answer_start));
      }
      if (ex.answer_start < 0 || ex.answer_end >= static_cast<long>(ex.passage.size())) {
        throw Error(path + ":" + std::to_string(line_no) +
                    ": answer token indices outside the passage (length " +
                    std::to_string(ex.passage.size()) + ")");
      }
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// CoNLL-2003 layout: four whitespace-separated columns (token, pos, chunk,
// ner), blank line between sentences. -DOCSTART- sentinels are skipped.
inline Dataset load_conll(const std::string& path, const std::string& tag_column = "ner") {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  if (tag_column != "ner" && tag_column != "pos") {
    throw Error("conll: tag column must be ner or pos");
  }
  Dataset ds;
  ds.task = TaskKind::token_tag;
  ds.id = path;
  std::map<std::string, bool> seen_tags;
  Example ex;
  std::string line;
  std::size_t line_no = 0, sentence_no = 0;
  auto flush = [&] {
    if (!ex.passage.empty()) {
      ex.id = "s" + std::to_string(sentence_no++);
      ds.examples.push_back(std::move(ex));
      ex = Example{};
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    std::istringstream cols(line);
    std::string token, pos, chunk, ner;
    if (!(cols >> token >> pos >> chunk >> ner)) {
      throw Error(path + ":" + std::to_string(line_no) +
                  ": expected 4 whitespace-separated columns, got '" + line + "'");
    }
    if (token == "-DOCSTART-") continue;
    std::string lowered;
    for (unsigned char c : token) {
      lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
    ex.passage.push_back(lowered);
    const std::string tag = tag_column == "ner" ? ner : pos;
    ex.tag_names.push_back(tag);
    seen_tags[tag] = true;
  }
  flush();
  for (const auto& [tag, unused] : seen_tags) ds.label_names.push_back(tag);
  return ds;
}

// label<TAB>text, one example per line, UTF-8.
inline Dataset load_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  Dataset ds;
  ds.task = TaskKind::seq_class;
  ds.id = path;
  std::map<std::string, bool> seen_labels;
  std::vector<std::string> raw_labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(path + ":" + std::to_string(line_no) + ": expected label<TAB>text");
    }
    Example ex;
    ex.id = "l" + std::to_string(line_no);
    ex.passage = tokenize(line.substr(tab + 1));
    if (ex.passage.empty()) {
      throw Error(path + ":" + std::to_string(line_no) + ": empty text");
    }
    raw_labels.push_back(line.substr(0, tab));
    seen_labels[raw_labels.back()] = true;
    ds.examples.push_back(std::move(ex));
  }
  for (const auto& [label, unused] : seen_labels) ds.label_names.push_back(label);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto it = std::find(ds.label_names.begin(), ds.label_names.end(), raw_labels[i]);
    ds.examples[i].label = static_cast<long>(it - ds.label_names.begin());
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, DataFormat format,
                            const std::string& tag_column = "ner") {
  switch (format) {
    case DataFormat::span_jsonl: return load_span_jsonl(path);
    case DataFormat::conll: return load_conll(path, tag_column);
    default: return load_tsv(path);
  }
}

// Re-keys a dataset's label ids onto a canonical label list (the training
// run's), so evaluation against a checkpoint uses consistent ids.
inline void align_labels(Dataset& ds, const std::vector<std::string>& canonical) {
  if (canonical.empty()) return;
  for (Example& ex : ds.examples) {
    if (ex.label >= 0) {
      const std::string& name = ds.label_names.at(static_cast<std::size_t>(ex.label));
      const auto it = std::find(canonical.begin(), canonical.end(), name);
      if (it == canonical.end()) {
        throw Error("label '" + name + "' from '" + ds.id +
                    "' does not appear in the checkpoint's label set");
      }
      ex.label = static_cast<long>(it - canonical.begin());
    }
    for (const std::string& tag : ex.tag_names) {
      if (std::find(canonical.begin(), canonical.end(), tag) == canonical.end()) {
        throw Error("tag '" + tag + "' from '" + ds.id +
                    "' does not appear in the checkpoint's label set");
      }
    }
  }
  ds.label_names = canonical;
}

// Vocabulary from a training split's token streams, capped at the config V.
inline Vocab build_vocab_for(const Dataset& ds, std::size_t cap) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& ex : ds.examples) {
    if (!ex.question.empty()) streams.push_back(ex.question);
    streams.push_back(ex.passage);
  }
  return Vocab::build(streams, cap);
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

// Padded id/segment/mask matrices plus task labels and the per-example
// bookkeeping needed to map predictions back onto passage tokens.
struct Batch {
  TaskKind task = TaskKind::span;
  std::vector<std::vector<long>> ids;
  std::vector<std::vector<long>> segments;
  std::vector<std::vector<std::uint8_t>> mask;

  std::vector<long> span_start, span_end;  // packed coords; (0,0) = no answer
  std::vector<std::vector<std::uint8_t>> span_candidates;  // passage positions
  std::vector<long> passage_offset;  // packed index of the first passage token

  std::vector<long> labels;                    // seq_class
  std::vector<std::vector<long>> tag_labels;   // token_tag, -1 = ignore
  std::vector<std::size_t> example_index;      // into the source dataset

  std::size_t size() const { return ids.size(); }
};

// QA packing: [cls, q..., sep, p..., sep]; segments 0 through the first sep,
// 1 for passage and final sep. The passage is truncated first; gold spans
// that fall outside the window become no-answer labels.
inline void pack_span_example(const Example& ex, const Vocab& vocab, std::size_t max_len,
                              Batch& batch) {
  const std::vector<long> q = vocab.encode(ex.question);
  const std::vector<long> p = vocab.encode(ex.passage);
  if (q.size() + 3 > max_len) {
    throw Error("example '" + ex.id + "': question alone exceeds Lmax " +
                std::to_string(max_len));
  }
  const std::size_t passage_budget = max_len - q.size() - 3;
  const std::size_t p_keep = std::min(p.size(), passage_budget);

  std::vector<long> ids;
  std::vector<long> segments;
  ids.push_back(Vocab::kCls);
  segments.push_back(0);
  for (long id : q) {
    ids.push_back(id);
    segments.push_back(0);
  }
  ids.push_back(Vocab::kSep);
  segments.push_back(0);
  const long offset = static_cast<long>(ids.size());
  for (std::size_t i = 0; i < p_keep; ++i) {
    ids.push_back(p[i]);
    segments.push_back(1);
  }
  ids.push_back(Vocab::kSep);
  segments.push_back(1);

  std::vector<std::uint8_t> candidates(ids.size(), 0);
  for (std::size_t i = 0; i < p_keep; ++i) candidates[static_cast<std::size_t>(offset) + i] = 1;

  long start = 0, end = 0;
  if (!ex.impossible && ex.answer_end < static_cast<long>(p_keep)) {
    start = offset + ex.answer_start;
    end = offset + ex.answer_end;
  }
  batch.ids.push_back(std::move(ids));
  batch.segments.push_back(std::move(segments));
  batch.span_start.push_back(start);
  batch.span_end.push_back(end);
  batch.span_candidates.push_back(std::move(candidates));
  batch.passage_offset.push_back(offset);
}

// Single-segment packing for classification/tagging: [cls, tokens..., sep].
inline void pack_plain_example(const Example& ex, const Vocab& vocab, std::size_t max_len,
                               Batch& batch) {
  const std::vector<long> p = vocab.encode(ex.passage);
  const std::size_t keep = std::min(p.size(), max_len - 2);
  std::vector<long> ids;
  ids.push_back(Vocab::kCls);
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(p[i]);
  ids.push_back(Vocab::kSep);
  batch.ids.push_back(ids);
  batch.segments.emplace_back(ids.size(), 0);
  batch.passage_offset.push_back(1);
  if (batch.task == TaskKind::token_tag) {
    std::vector<long> tags(ids.size(), -1);
    for (std::size_t i = 0; i < keep; ++i) {
      // tag ids resolved by the caller against dataset label names
      tags[i + 1] = -2;  // placeholder marking a real token
    }
    batch.tag_labels.push_back(std::move(tags));
  }
}

// Deterministic batches in the given example order, padded per batch to the
// longest member. mask is true exactly on real (non-pad) positions.
inline std::vector<Batch> batch_examples(const Dataset& ds, const std::vector<std::size_t>& order,
                                         const Vocab& vocab, std::size_t max_len,
                                         std::size_t batch_size) {
  if (ds.examples.empty()) throw Error("batching: dataset '" + ds.id + "' is empty");
  std::vector<Batch> batches;
  for (std::size_t at = 0; at < order.size(); at += batch_size) {
    Batch b;
    b.task = ds.task;
    const std::size_t stop = std::min(order.size(), at + batch_size);
    for (std::size_t i = at; i < stop; ++i) {
      const Example& ex = ds.examples[order[i]];
      b.example_index.push_back(order[i]);
      if (ds.task == TaskKind::span) {
        pack_span_example(ex, vocab, max_len, b);
      } else {
        pack_plain_example(ex, vocab, max_len, b);
        if (ds.task == TaskKind::seq_class) b.labels.push_back(ex.label);
        if (ds.task == TaskKind::token_tag) {
          auto& tags = b.tag_labels.back();
          for (std::size_t t = 0; t < tags.size(); ++t) {
            if (tags[t] == -2) {
              const std::string& name = ex.tag_names[t - 1];
              const auto it = std::find(ds.label_names.begin(), ds.label_names.end(), name);
              if (it == ds.label_names.end()) {
                throw Error("tag '" + name + "' missing from dataset label set");
              }
              tags[t] = static_cast<long>(it - ds.label_names.begin());
            }
          }
        }
      }
    }
    // pad to the longest sequence in the batch
    std::size_t widest = 0;
    for (const auto& ids : b.ids) widest = std::max(widest, ids.size());
    for (std::size_t i = 0; i < b.ids.size(); ++i) {
      const std::size_t real = b.ids[i].size();
      b.mask.emplace_back(real, 1);
      b.mask[i].resize(widest, 0);
      b.ids[i].resize(widest, Vocab::kPad);
      b.segments[i].resize(widest, 0);
      if (ds.task == TaskKind::span) b.span_candidates[i].resize(widest, 0);
      if (ds.task == TaskKind::token_tag) b.tag_labels[i].resize(widest, -1);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace cool
