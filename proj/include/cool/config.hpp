#pragma once
// Model/training configuration. Flat key=value text files ('#' comments),
// applied overrides, canonicalization, and the FNV-1a config hash that
// stamps checkpoints and reports.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cool/common.hpp"
#include "cool/outlook.hpp"

namespace cool {

enum class IntegrationMode { global_to_local, local_to_global, global_and_local };
enum class TaskKind { span, seq_class, token_tag, multi_choice };

inline IntegrationMode mode_from_string(const std::string& s) {
  if (s == "GlobalToLocal") return IntegrationMode::global_to_local;
  if (s == "LocalToGlobal") return IntegrationMode::local_to_global;
  if (s == "GlobalAndLocal") return IntegrationMode::global_and_local;
  throw Error("unknown mode '" + s +
              "' (expected GlobalToLocal, LocalToGlobal, or GlobalAndLocal)");
}

inline const char* to_string(IntegrationMode m) {
  switch (m) {
    case IntegrationMode::global_to_local: return "GlobalToLocal";
    case IntegrationMode::local_to_global: return "LocalToGlobal";
    default: return "GlobalAndLocal";
  }
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "span") return TaskKind::span;
  if (s == "seq_class") return TaskKind::seq_class;
  if (s == "token_tag") return TaskKind::token_tag;
  if (s == "multi_choice") return TaskKind::multi_choice;
  throw Error("unknown task '" + s +
              "' (expected span, seq_class, token_tag, or multi_choice)");
}

inline const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::span: return "span";
    case TaskKind::seq_class: return "seq_class";
    case TaskKind::token_tag: return "token_tag";
    default: return "multi_choice";
  }
}

struct ModelConfig {
  IntegrationMode mode = IntegrationMode::global_to_local;
  TaskKind task = TaskKind::span;
  bool use_conv_block = false;
  long num_outlook_layers = -1;  // -1 = auto: 2 with conv block, 3 without
  std::size_t window = 3;       // K
  SoftmaxScope softmax_scope = SoftmaxScope::per_channel;

  std::size_t hidden = 32;          // H
  std::size_t encoder_blocks = 2;
  std::size_t heads = 4;
  std::size_t vocab = 512;          // V, cap for the built vocabulary
  std::size_t max_len = 64;         // Lmax
  std::vector<std::size_t> conv_widths{3, 4, 5};
  std::vector<std::size_t> conv_filters{100, 100, 100};

  std::size_t num_labels = 2;
  std::size_t num_choices = 4;
  std::string tag_column = "ner";  // conll column for token_tag: ner or pos

  std::uint64_t seed = 0;
  double dropout = 0.0;

  std::size_t epochs = 5;
  std::size_t batch_size = 8;
  double lr_encoder = 3e-5;
  double lr_other = 1e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // <= 0 disables
  std::size_t max_answer_len = 30;
  double null_threshold = 0.0;

  // channel count after local encoding: sum of conv filters, else H
  std::size_t channels() const {
    if (!use_conv_block) return hidden;
    std::size_t f = 0;
    for (std::size_t v : conv_filters) f += v;
    return f;
  }

  std::size_t outlook_layers() const {
    if (num_outlook_layers >= 0) return static_cast<std::size_t>(num_outlook_layers);
    return use_conv_block ? 2 : 3;
  }

  void validate() const {
    if (window % 2 == 0 || window == 0) {
      throw Error("config: K must be odd and >= 1, got " + std::to_string(window));
    }
    if (use_conv_block &&
        (conv_widths.empty() || conv_widths.size() != conv_filters.size())) {
      throw Error("config: conv_widths and conv_filters must align");
    }
    if (hidden == 0 || heads == 0 || hidden % heads != 0) {
      throw Error("config: hidden must be divisible by heads");
    }
    if (vocab < 5) throw Error("config: vocab must be at least 5");
    if (max_len < 4) throw Error("config: Lmax must be at least 4");
    if (batch_size == 0) throw Error("config: batch_size must be >= 1");
  }
};

namespace detail_cfg {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (...) {
      throw Error("config: bad value '" + item + "' in list for key '" + key + "'");
    }
  }
  if (out.empty()) throw Error("config: empty list for key '" + key + "'");
  return out;
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(std::stod(v));
    } else if constexpr (std::is_signed_v<T>) {
      return static_cast<T>(std::stoll(v));
    } else {
      return static_cast<T>(std::stoull(v));
    }
  } catch (...) {
    throw Error("config: bad numeric value '" + v + "' for key '" + key + "'");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config: bad boolean '" + v + "' for key '" + key + "'");
}

}  // namespace detail_cfg

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "mode",           "task",          "use_conv_block", "num_outlook_layers",
      "K",              "softmax_scope", "H",              "encoder_blocks",
      "heads",          "V",             "Lmax",           "conv_widths",
      "conv_filters",   "num_labels",    "num_choices",    "tag_column",
      "seed",           "dropout",       "epochs",         "batch_size",
      "lr_encoder",     "lr_other",      "weight_decay",   "grad_clip",
      "max_answer_len", "null_threshold"};
  return keys;
}

inline void config_set(ModelConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail_cfg;
  if (key == "mode") cfg.mode = mode_from_string(value);
  else if (key == "task") cfg.task = task_from_string(value);
  else if (key == "use_conv_block") cfg.use_conv_block = parse_bool(value, key);
  else if (key == "num_outlook_layers") cfg.num_outlook_layers = parse_num<long>(value, key);
  else if (key == "K") cfg.window = parse_num<std::size_t>(value, key);
  else if (key == "softmax_scope") cfg.softmax_scope = softmax_scope_from_string(value);
  else if (key == "H") cfg.hidden = parse_num<std::size_t>(value, key);
  else if (key == "encoder_blocks") cfg.encoder_blocks = parse_num<std::size_t>(value, key);
  else if (key == "heads") cfg.heads = parse_num<std::size_t>(value, key);
  else if (key == "V") cfg.vocab = parse_num<std::size_t>(value, key);
  else if (key == "Lmax") cfg.max_len = parse_num<std::size_t>(value, key);
  else if (key == "conv_widths") cfg.conv_widths = parse_size_list(value, key);
  else if (key == "conv_filters") cfg.conv_filters = parse_size_list(value, key);
  else if (key == "num_labels") cfg.num_labels = parse_num<std::size_t>(value, key);
  else if (key == "num_choices") cfg.num_choices = parse_num<std::size_t>(value, key);
  else if (key == "tag_column") {
    if (value != "ner" && value != "pos") throw Error("config: tag_column must be ner or pos");
    cfg.tag_column = value;
  } else if (key == "seed") cfg.seed = parse_num<std::uint64_t>(value, key);
  else if (key == "dropout") cfg.dropout = parse_num<double>(value, key);
  else if (key == "epochs") cfg.epochs = parse_num<std::size_t>(value, key);
  else if (key == "batch_size") cfg.batch_size = parse_num<std::size_t>(value, key);
  else if (key == "lr_encoder") cfg.lr_encoder = parse_num<double>(value, key);
  else if (key == "lr_other") cfg.lr_other = parse_num<double>(value, key);
  else if (key == "weight_decay") cfg.weight_decay = parse_num<double>(value, key);
  else if (key == "grad_clip") cfg.grad_clip = parse_num<double>(value, key);
  else if (key == "max_answer_len") cfg.max_answer_len = parse_num<std::size_t>(value, key);
  else if (key == "null_threshold") cfg.null_threshold = parse_num<double>(value, key);
  else {
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw Error("config: unknown key '" + key + "' (valid keys: " + valid + ")");
  }
}

// All effective key=value pairs, sorted by key — the canonical form hashed
// into the config hash.
inline std::string config_canonical_text(const ModelConfig& cfg) {
  using namespace detail_cfg;
  std::map<std::string, std::string> kv;
  kv["mode"] = to_string(cfg.mode);
  kv["task"] = to_string(cfg.task);
  kv["use_conv_block"] = cfg.use_conv_block ? "true" : "false";
  kv["num_outlook_layers"] = std::to_string(cfg.outlook_layers());
  kv["K"] = std::to_string(cfg.window);
  kv["softmax_scope"] = to_string(cfg.softmax_scope);
  kv["H"] = std::to_string(cfg.hidden);
  kv["encoder_blocks"] = std::to_string(cfg.encoder_blocks);
  kv["heads"] = std::to_string(cfg.heads);
  kv["V"] = std::to_string(cfg.vocab);
  kv["Lmax"] = std::to_string(cfg.max_len);
  kv["conv_widths"] = fmt_size_list(cfg.conv_widths);
  kv["conv_filters"] = fmt_size_list(cfg.conv_filters);
  kv["num_labels"] = std::to_string(cfg.num_labels);
  kv["num_choices"] = std::to_string(cfg.num_choices);
  kv["tag_column"] = cfg.tag_column;
  kv["seed"] = std::to_string(cfg.seed);
  kv["dropout"] = fmt_double(cfg.dropout);
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["lr_encoder"] = fmt_double(cfg.lr_encoder);
  kv["lr_other"] = fmt_double(cfg.lr_other);
  kv["weight_decay"] = fmt_double(cfg.weight_decay);
  kv["grad_clip"] = fmt_double(cfg.grad_clip);
  kv["max_answer_len"] = std::to_string(cfg.max_answer_len);
  kv["null_threshold"] = fmt_double(cfg.null_threshold);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

// Hex of a 64-bit FNV-1a over the canonicalized file.
inline std::string config_hash(const ModelConfig& cfg) {
  return to_hex(fnv1a64(config_canonical_text(cfg)));
}

inline void apply_config_line(ModelConfig& cfg, const std::string& raw, std::size_t line_no) {
  std::string line = raw;
  const auto hash_pos = line.find('#');
  if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
  const auto first = line.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return;  // blank or comment-only
  const auto last = line.find_last_not_of(" \t\r\n");
  line = line.substr(first, last - first + 1);
  const auto eq = line.find('=');
  if (eq == std::string::npos) {
    throw Error("config: line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
  }
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  config_set(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

inline ModelConfig parse_config_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) apply_config_line(cfg, line, ++line_no);
  return cfg;
}

inline ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// Repeatable key=value overrides, applied after the file parse; last wins.
inline void apply_overrides(ModelConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("override '" + kv + "' is not key=value");
    config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

}  // namespace cool
