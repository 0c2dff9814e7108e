#pragma once
// Deterministic training loop (seeded batch order, AdamW, optional global
// clipping), batch losses per task, and checkpoint/metric evaluation over
// datasets.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cool/checkpoint.hpp"
#include "cool/data.hpp"
#include "cool/metrics.hpp"
#include "cool/model.hpp"
#include "cool/optim.hpp"

namespace cool {

// Mean loss over the batch; tagging averages over all unpadded target tokens
// in the batch (per-example means weighted by their target counts).
inline Tensor batch_loss(const Model& m, const Batch& batch, const ForwardCtx& ctx = {}) {
  if (batch.size() == 0) throw Error("batch_loss: empty batch");
  Tensor total;
  bool first = true;
  auto accumulate = [&](const Tensor& t) {
    total = first ? t : add(total, t);
    first = false;
  };
  switch (batch.task) {
    case TaskKind::span: {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TaskOutput out =
            forward_example(m, batch.ids[i], batch.segments[i], batch.mask[i], ctx);
        accumulate(span_loss(out.span, batch.span_start[i], batch.span_end[i]));
      }
      return scale(total, 1.0 / static_cast<double>(batch.size()));
    }
    case TaskKind::seq_class: {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const TaskOutput out =
            forward_example(m, batch.ids[i], batch.segments[i], batch.mask[i], ctx);
        accumulate(classification_loss(out.class_logits, batch.labels[i]));
      }
      return scale(total, 1.0 / static_cast<double>(batch.size()));
    }
    case TaskKind::token_tag: {
      std::vector<std::size_t> counts(batch.size(), 0);
      std::size_t grand = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        for (long t : batch.tag_labels[i]) {
          if (t >= 0) ++counts[i];
        }
        grand += counts[i];
      }
      if (grand == 0) throw Error("batch_loss: tagging batch has no labeled tokens");
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (counts[i] == 0) continue;
        const TaskOutput out =
            forward_example(m, batch.ids[i], batch.segments[i], batch.mask[i], ctx);
        const double weight =
            static_cast<double>(counts[i]) / static_cast<double>(grand);
        accumulate(scale(tagging_loss(out.tag_logits, batch.tag_labels[i]), weight));
      }
      return total;
    }
    default:
      throw Error("batch_loss: multi_choice batches are built in memory, not from files");
  }
}

struct LossCurveRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr_encoder = 0.0;
  double lr_other = 0.0;
};

struct TrainResult {
  std::vector<LossCurveRow> curve;
  AdamWState adam;
  std::uint64_t steps = 0;
};

struct TrainHooks {
  // called every `checkpoint_every` steps (0 = never) and once at the end
  std::size_t checkpoint_every = 0;
  std::function<void(std::uint64_t step, const AdamWState& adam)> on_checkpoint;
};

// Per-step: forward, loss, backward, optional global-norm clip, AdamW step,
// gradient reset. Batch order is a seeded shuffle per epoch; a NaN loss
// aborts naming the step.
inline TrainResult train_model(Model& m, const Dataset& ds, const Vocab& vocab,
                               const TrainHooks& hooks = {}) {
  if (ds.examples.empty()) throw Error("train: dataset '" + ds.id + "' is empty");
  if (ds.task != m.cfg.task) {
    throw Error("train: dataset task " + std::string(to_string(ds.task)) +
                " does not match config task " + to_string(m.cfg.task));
  }
  const ModelConfig& cfg = m.cfg;
  TrainResult result;
  result.adam.weight_decay = cfg.weight_decay;
  result.adam.group_lrs = {{"", cfg.lr_other}, {"encoder", cfg.lr_encoder}};

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  ForwardCtx ctx;
  ctx.training = true;
  ctx.dropout = cfg.dropout;
  ctx.rng = &dropout_rng;

  std::vector<std::size_t> order(ds.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    const std::vector<Batch> batches =
        batch_examples(ds, order, vocab, cfg.max_len, cfg.batch_size);
    for (const Batch& batch : batches) {
      m.store.zero_grads();
      const Tensor loss = batch_loss(m, batch, ctx);
      const double loss_value = loss.value();
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: loss is not finite at step " +
                           std::to_string(result.steps + 1));
      }
      backward(loss);
      clip_gradients(m.store, cfg.grad_clip);
      adamw_step(result.adam, m.store);
      ++result.steps;
      result.curve.push_back(
          {result.steps, epoch + 1, loss_value, cfg.lr_encoder, cfg.lr_other});
      if (hooks.on_checkpoint && hooks.checkpoint_every > 0 &&
          result.steps % hooks.checkpoint_every == 0) {
        hooks.on_checkpoint(result.steps, result.adam);
      }
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(result.steps, result.adam);
  return result;
}

inline std::string loss_curve_csv(const std::vector<LossCurveRow>& curve) {
  std::string out = "step,epoch,loss,lr_encoder,lr_other\n";
  char buf[160];
  for (const auto& row : curve) {
    std::snprintf(buf, sizeof(buf), "%llu,%zu,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(row.step), row.epoch, row.loss, row.lr_encoder,
                  row.lr_other);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// prediction and evaluation
// ---------------------------------------------------------------------------

struct SpanRecord {
  std::string id;
  bool no_answer = false;
  long start = 0;  // passage-token coords
  long end = 0;
  double score = 0.0;
};

struct ClassRecord {
  std::string id;
  long label = -1;
};

struct TagRecord {
  std::string id;
  std::vector<std::string> tags;
};

struct Predictions {
  TaskKind task = TaskKind::span;
  std::vector<SpanRecord> spans;
  std::vector<ClassRecord> classes;
  std::vector<TagRecord> tags;
};

inline Predictions predict_dataset(const Model& m, const Dataset& ds, const Vocab& vocab) {
  Predictions preds;
  preds.task = ds.task;
  std::vector<std::size_t> order(ds.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::vector<Batch> batches = batch_examples(ds, order, vocab, m.cfg.max_len, 1);
  for (const Batch& batch : batches) {
    const std::size_t i = 0;  // batch size 1
    const Example& ex = ds.examples[batch.example_index[i]];
    const TaskOutput out = forward_example(m, batch.ids[i], batch.segments[i], batch.mask[i]);
    switch (ds.task) {
      case TaskKind::span: {
        const SpanPrediction sp =
            span_predict(out.span.start.data(), out.span.end.data(), batch.span_candidates[i],
                         m.cfg.max_answer_len, m.cfg.null_threshold);
        SpanRecord rec;
        rec.id = ex.id;
        rec.no_answer = sp.no_answer;
        if (!sp.no_answer) {
          rec.start = static_cast<long>(sp.start) - batch.passage_offset[i];
          rec.end = static_cast<long>(sp.end) - batch.passage_offset[i];
        }
        rec.score = sp.no_answer ? sp.null_score : sp.score;
        preds.spans.push_back(std::move(rec));
        break;
      }
      case TaskKind::seq_class: {
        const auto& logits = out.class_logits.data();
        long best = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
          if (logits[c] > logits[static_cast<std::size_t>(best)]) best = static_cast<long>(c);
        }
        preds.classes.push_back({ex.id, best});
        break;
      }
      case TaskKind::token_tag: {
        TagRecord rec;
        rec.id = ex.id;
        const auto& logits = out.tag_logits.data();
        const std::size_t C = out.tag_logits.dim(1);
        for (std::size_t t = 0; t < batch.tag_labels[i].size(); ++t) {
          if (batch.tag_labels[i][t] < 0) continue;  // cls/sep/pad
          std::size_t best = 0;
          for (std::size_t c = 1; c < C; ++c) {
            if (logits[t * C + c] > logits[t * C + best]) best = c;
          }
          rec.tags.push_back(ds.label_names[best]);
        }
        preds.tags.push_back(std::move(rec));
        break;
      }
      default:
        throw Error("predict: unsupported task");
    }
  }
  return preds;
}

// Metrics against the dataset's gold labels, in passage-token coordinates.
// Golds are taken as stored: a span truncated out of the packed window still
// counts against the model.
inline EvalReport evaluate_model(const Model& m, const Dataset& ds, const Vocab& vocab) {
  const Predictions preds = predict_dataset(m, ds, vocab);
  EvalReport rep;
  rep.task = to_string(ds.task);
  rep.dataset_id = ds.id;
  rep.config_hash = config_hash(m.cfg);
  rep.seed = m.cfg.seed;
  switch (ds.task) {
    case TaskKind::span: {
      std::vector<SpanOutcome> outcomes;
      std::vector<std::vector<std::string>> passages;
      for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const Example& ex = ds.examples[i];
        const SpanRecord& pred = preds.spans[i];
        SpanOutcome o;
        o.pred_null = pred.no_answer;
        if (!pred.no_answer) {
          o.pred_start = static_cast<std::size_t>(pred.start);
          o.pred_end = static_cast<std::size_t>(pred.end);
        }
        o.gold_null = ex.impossible;
        if (!ex.impossible) {
          o.gold_start = static_cast<std::size_t>(ex.answer_start);
          o.gold_end = static_cast<std::size_t>(ex.answer_end);
        }
        outcomes.push_back(o);
        passages.push_back(ex.passage);
      }
      return span_eval_report(outcomes, passages, ds.id, rep.config_hash, rep.seed);
    }
    case TaskKind::seq_class: {
      std::vector<long> pred, gold;
      for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        pred.push_back(preds.classes[i].label);
        gold.push_back(ds.examples[i].label);
      }
      rep.metrics["accuracy"] = 100.0 * accuracy(pred, gold);
      return rep;
    }
    case TaskKind::token_tag: {
      std::vector<std::vector<std::string>> pred_tags, gold_tags;
      std::size_t token_hits = 0, token_total = 0;
      for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& pred = preds.tags[i].tags;
        std::vector<std::string> gold(ds.examples[i].tag_names.begin(),
                                      ds.examples[i].tag_names.begin() +
                                          static_cast<std::ptrdiff_t>(pred.size()));
        for (std::size_t t = 0; t < pred.size(); ++t) {
          token_total += 1;
          token_hits += pred[t] == gold[t];
        }
        pred_tags.push_back(pred);
        gold_tags.push_back(std::move(gold));
      }
      const EntityF1 ent = entity_f1(pred_tags, gold_tags);
      rep.metrics["entity_f1"] = 100.0 * ent.f1;
      rep.metrics["token_accuracy"] =
          token_total ? 100.0 * static_cast<double>(token_hits) / static_cast<double>(token_total)
                      : 0.0;
      return rep;
    }
    default:
      throw Error("evaluate: unsupported task");
  }
}

}  // namespace cool
