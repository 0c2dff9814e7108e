// cool — train / eval / predict / gradcheck / oracle-diff over config files.
//
// Exit codes: 0 success, 1 validation error (bad config, missing files,
// malformed data), 2 numeric failure (NaN loss, failed gradient check or
// oracle mismatch).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cool/checkpoint.hpp"
#include "cool/config.hpp"
#include "cool/data.hpp"
#include "cool/model.hpp"
#include "cool/train.hpp"
#include "cool/verify.hpp"

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "cool_out";
};

cool::ModelConfig resolve_config(const CommonOpts& opts) {
  cool::ModelConfig cfg;
  if (!opts.config_path.empty()) cfg = cool::load_config_file(opts.config_path);
  cool::apply_overrides(cfg, opts.overrides);
  cfg.validate();
  return cfg;
}

cool::DataFormat default_format(cool::TaskKind task) {
  switch (task) {
    case cool::TaskKind::span: return cool::DataFormat::span_jsonl;
    case cool::TaskKind::seq_class: return cool::DataFormat::tsv;
    case cool::TaskKind::token_tag: return cool::DataFormat::conll;
    default:
      throw cool::Error(
          "task multi_choice has no file dataset format (span_jsonl/conll/tsv); "
          "drive it through the library API");
  }
}

cool::Dataset load_for(const cool::ModelConfig& cfg, const std::string& path,
                       const std::string& format_override) {
  if (!fs::exists(path)) throw cool::Error("dataset path '" + path + "' does not exist");
  const cool::DataFormat format = format_override.empty()
                                      ? default_format(cfg.task)
                                      : cool::format_from_string(format_override);
  cool::Dataset ds = cool::load_dataset(path, format, cfg.tag_column);
  if (ds.task != cfg.task) {
    throw cool::Error("dataset format provides task " + std::string(to_string(ds.task)) +
                      " but the config says " + to_string(cfg.task));
  }
  return ds;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cool::Error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw cool::Error("write failed for '" + path.string() + "'");
}

void print_reports(const std::vector<cool::oracle::DiffReport>& reports, bool as_json) {
  if (as_json) {
    for (const auto& r : reports) {
      nlohmann::json j;
      j["name"] = r.name;
      j["max_abs"] = r.max_abs;
      j["max_rel"] = r.max_rel;
      j["worst_index"] = r.worst_index;
      j["tolerance"] = r.tolerance;
      j["pass"] = r.pass;
      std::cout << j.dump() << "\n";
    }
    return;
  }
  std::size_t widest = 4;
  for (const auto& r : reports) widest = std::max(widest, r.name.size());
  std::printf("%-*s  %12s  %12s  %10s  %s\n", static_cast<int>(widest), "name", "max_abs",
              "max_rel", "worst_idx", "verdict");
  for (const auto& r : reports) {
    std::printf("%-*s  %12.3e  %12.3e  %10zu  %s\n", static_cast<int>(widest), r.name.c_str(),
                r.max_abs, r.max_rel, r.worst_index, r.pass ? "pass" : "FAIL");
  }
}

int cmd_train(const CommonOpts& opts, const std::string& data_path,
              const std::string& eval_path, const std::string& format_override,
              std::size_t checkpoint_every) {
  cool::ModelConfig cfg = resolve_config(opts);
  cool::Dataset ds = load_for(cfg, data_path, format_override);
  if ((cfg.task == cool::TaskKind::seq_class || cfg.task == cool::TaskKind::token_tag) &&
      !ds.label_names.empty() && cfg.num_labels != ds.label_names.size()) {
    std::cerr << "note: num_labels set to " << ds.label_names.size() << " from '" << ds.id
              << "'\n";
    cfg.num_labels = ds.label_names.size();
  }
  const cool::Vocab vocab = cool::build_vocab_for(ds, cfg.vocab);

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);

  cool::Model model = cool::assemble_model(cfg);
  cool::TrainHooks hooks;
  hooks.checkpoint_every = checkpoint_every;
  hooks.on_checkpoint = [&](std::uint64_t step, const cool::AdamWState& adam) {
    const cool::Checkpoint ckpt =
        cool::snapshot_checkpoint(cfg, model.store, vocab, ds.label_names, step, &adam);
    cool::save_checkpoint((out / "checkpoint.coolckpt").string(), ckpt);
    if (checkpoint_every > 0 && step % checkpoint_every == 0) {
      cool::save_checkpoint((out / ("checkpoint_step" + std::to_string(step) + ".coolckpt"))
                                .string(),
                            ckpt);
    }
  };
  const cool::TrainResult result = cool::train_model(model, ds, vocab, hooks);

  write_text(out / "loss_curve.csv", cool::loss_curve_csv(result.curve));
  write_text(out / "config.cfg", cool::config_canonical_text(cfg));

  std::string report_lines;
  const cool::EvalReport train_rep = cool::evaluate_model(model, ds, vocab);
  report_lines += train_rep.to_json_line() + "\n";
  if (!eval_path.empty()) {
    cool::Dataset eval_ds = load_for(cfg, eval_path, format_override);
    cool::align_labels(eval_ds, ds.label_names);
    report_lines += cool::evaluate_model(model, eval_ds, vocab).to_json_line() + "\n";
  }
  write_text(out / "eval_report.jsonl", report_lines);
  std::cout << report_lines;
  return 0;
}

struct LoadedCheckpoint {
  cool::Checkpoint ckpt;
  cool::Model model;
  cool::Vocab vocab;
};

LoadedCheckpoint restore_model(const std::string& ckpt_path) {
  LoadedCheckpoint out{cool::load_checkpoint(ckpt_path), cool::Model{}, cool::Vocab{}};
  out.model = cool::assemble_model(out.ckpt.cfg);
  cool::restore_parameters(out.ckpt, out.model.store);
  out.vocab = cool::Vocab::from_tokens(out.ckpt.vocab_tokens);
  return out;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data_path,
             const std::string& format_override) {
  LoadedCheckpoint loaded = restore_model(ckpt_path);
  cool::Dataset ds = load_for(loaded.ckpt.cfg, data_path, format_override);
  cool::align_labels(ds, loaded.ckpt.label_names);
  const cool::EvalReport rep = cool::evaluate_model(loaded.model, ds, loaded.vocab);
  std::cout << rep.to_json_line() << "\n";
  if (!opts.out_dir.empty() && opts.out_dir != "-") {
    fs::create_directories(opts.out_dir);
    write_text(fs::path(opts.out_dir) / "eval_report.jsonl", rep.to_json_line() + "\n");
  }
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_path,
                const std::string& format_override, const std::string& out_file) {
  LoadedCheckpoint loaded = restore_model(ckpt_path);
  cool::Dataset ds = load_for(loaded.ckpt.cfg, data_path, format_override);
  cool::align_labels(ds, loaded.ckpt.label_names);
  const cool::Predictions preds = cool::predict_dataset(loaded.model, ds, loaded.vocab);

  std::string lines;
  switch (preds.task) {
    case cool::TaskKind::span:
      for (const auto& p : preds.spans) {
        nlohmann::json j;
        j["id"] = p.id;
        j["no_answer"] = p.no_answer;
        j["answer_start_token"] = p.start;
        j["answer_end_token"] = p.end;
        j["score"] = p.score;
        lines += j.dump() + "\n";
      }
      break;
    case cool::TaskKind::seq_class:
      for (const auto& p : preds.classes) {
        nlohmann::json j;
        j["id"] = p.id;
        j["label"] = ds.label_names.at(static_cast<std::size_t>(p.label));
        lines += j.dump() + "\n";
      }
      break;
    default:
      for (const auto& p : preds.tags) {
        nlohmann::json j;
        j["id"] = p.id;
        j["tags"] = p.tags;
        lines += j.dump() + "\n";
      }
      break;
  }
  if (out_file.empty() || out_file == "-") {
    std::cout << lines;
  } else {
    write_text(out_file, lines);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool as_json) {
  const auto reports = cool::oracle::run_gradchecks(seed);
  print_reports(reports, as_json);
  if (!cool::oracle::all_pass(reports)) {
    std::cerr << "gradcheck: FAILED\n";
    return 2;
  }
  std::cerr << "gradcheck: all " << reports.size() << " checks passed\n";
  return 0;
}

int cmd_oracle_diff(std::size_t cases, std::uint64_t seed, bool as_json) {
  const auto reports = cool::oracle::run_oracle_diff(cases, seed);
  print_reports(reports, as_json);
  if (!cool::oracle::all_pass(reports)) {
    std::cerr << "oracle-diff: FAILED\n";
    return 2;
  }
  std::cerr << "oracle-diff: all " << reports.size() << " cases within tolerance\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"COOL context outlooker: training, evaluation, and verification"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string data_path, eval_path, ckpt_path, format_override, predict_out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t cases = 200;
  std::size_t checkpoint_every = 0;
  bool as_json = false;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("-c,--config", opts.config_path, "config file (key=value lines)");
      sub->add_option("--set", opts.overrides, "override key=value (repeatable, last wins)");
    }
    sub->add_option("-o,--out", opts.out_dir, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, true);
  train->add_option("--data", data_path, "training dataset")->required();
  train->add_option("--eval-data", eval_path, "optional held-out dataset");
  train->add_option("--format", format_override, "span_jsonl | conll | tsv");
  train->add_option("--checkpoint-every", checkpoint_every,
                    "also write checkpoint_step<N>.coolckpt every N steps");
  train->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_set = true;
  });

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval, false);
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset")->required();
  eval->add_option("--format", format_override, "span_jsonl | conll | tsv");

  CLI::App* predict = app.add_subcommand("predict", "write JSON-lines predictions");
  predict->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  predict->add_option("--data", data_path, "dataset")->required();
  predict->add_option("--format", format_override, "span_jsonl | conll | tsv");
  predict->add_option("-o,--out", predict_out, "output file ('-' = stdout)");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference checks over all layer types");
  gradcheck->add_option("--seed", seed, "rng seed");
  gradcheck->add_flag("--json", as_json, "emit JSON lines instead of a table");

  CLI::App* oracle_diff =
      app.add_subcommand("oracle-diff", "outlook main path vs naive reference");
  oracle_diff->add_option("--cases", cases, "number of random cases");
  oracle_diff->add_option("--seed", seed, "rng seed");
  oracle_diff->add_flag("--json", as_json, "emit JSON lines instead of a table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      if (seed_set) opts.overrides.push_back("seed=" + std::to_string(seed));
      return cmd_train(opts, data_path, eval_path, format_override, checkpoint_every);
    }
    if (eval->parsed()) return cmd_eval(opts, ckpt_path, data_path, format_override);
    if (predict->parsed()) {
      return cmd_predict(ckpt_path, data_path, format_override, predict_out);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(seed, as_json);
    if (oracle_diff->parsed()) return cmd_oracle_diff(cases, seed, as_json);
  } catch (const cool::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const cool::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
