#pragma once
// Model assembly: global encoder, optional conv block, and outlook block
// composed under one of the three integration modes, plus task heads,
// task losses, and span decoding.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cool/config.hpp"
#include "cool/conv.hpp"
#include "cool/encoder.hpp"
#include "cool/nn.hpp"
#include "cool/outlook.hpp"

namespace cool {

struct Model {
  ModelConfig cfg;
  ParameterStore store;
  GlobalEncoderParams encoder;
  std::optional<ConvBlockParams> conv;
  OutlookBlockParams outlook;
  std::optional<LinearParams> local_proj;    // LocalToGlobal: F -> H before the encoder
  std::optional<LinearParams> fuse1, fuse2;  // GlobalAndLocal: (H+F) -> H -> F
  LinearParams head;                         // exactly the head for cfg.task

  std::size_t head_dim() const {
    if (cfg.mode == IntegrationMode::local_to_global) return cfg.hidden;
    return cfg.channels();
  }
};

inline std::size_t head_out_dim(const ModelConfig& cfg) {
  switch (cfg.task) {
    case TaskKind::span: return 2;
    case TaskKind::seq_class: return cfg.num_labels;
    case TaskKind::token_tag: return cfg.num_labels;
    default: return 1;  // per-choice score
  }
}

// Parameter creation order is fixed (encoder, conv, outlook, glue, head) so
// that a seed fully determines every initial value.
inline Model assemble_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  m.encoder = make_global_encoder(m.store, "encoder", cfg.vocab, cfg.hidden, cfg.max_len,
                                  cfg.encoder_blocks, cfg.heads, rng);
  const std::size_t channels = cfg.channels();
  if (cfg.use_conv_block) {
    m.conv = make_conv_block(m.store, "conv", cfg.conv_widths, cfg.conv_filters, cfg.hidden, rng);
  }
  m.outlook = make_outlook_block(m.store, "outlook", cfg.outlook_layers(), cfg.window, channels,
                                 cfg.softmax_scope, rng);
  if (cfg.mode == IntegrationMode::local_to_global) {
    m.local_proj = make_linear(m.store, "local_proj", channels, cfg.hidden, rng);
  } else if (cfg.mode == IntegrationMode::global_and_local) {
    m.fuse1 = make_linear(m.store, "fuse.first", cfg.hidden + channels, cfg.hidden, rng);
    m.fuse2 = make_linear(m.store, "fuse.second", cfg.hidden, channels, rng);
  }
  m.head = make_linear(m.store, "head." + std::string(to_string(cfg.task)), m.head_dim(),
                       head_out_dim(cfg), rng);
  return m;
}

// The plain encoder+head baseline the degenerate configuration must match
// bit for bit: same creation order (encoder then head), no local machinery.
struct BaselineModel {
  ModelConfig cfg;
  ParameterStore store;
  GlobalEncoderParams encoder;
  LinearParams head;
};

inline BaselineModel assemble_baseline(const ModelConfig& cfg) {
  cfg.validate();
  BaselineModel m;
  m.cfg = cfg;
  Rng rng(cfg.seed);
  m.encoder = make_global_encoder(m.store, "encoder", cfg.vocab, cfg.hidden, cfg.max_len,
                                  cfg.encoder_blocks, cfg.heads, rng);
  m.head = make_linear(m.store, "head." + std::string(to_string(cfg.task)), cfg.hidden,
                       head_out_dim(cfg), rng);
  return m;
}

// Shared representation pipeline, [L, head_dim].
inline Tensor model_representation(const Model& m, const std::vector<long>& ids,
                                   const std::vector<long>& segments,
                                   const std::vector<std::uint8_t>& mask,
                                   const ForwardCtx& ctx = {}) {
  switch (m.cfg.mode) {
    case IntegrationMode::global_to_local: {
      Tensor h = encode_sequence(m.encoder, ids, segments, mask, ctx);
      if (m.conv) h = conv_block_forward(*m.conv, h);
      return outlook_block_forward(m.outlook, h, mask);
    }
    case IntegrationMode::local_to_global: {
      Tensor h = encoder_embed(m.encoder, ids, segments);
      if (m.conv) h = conv_block_forward(*m.conv, h);
      h = outlook_block_forward(m.outlook, h, mask);
      return encoder_run(m.encoder, linear(*m.local_proj, h), mask, ctx);
    }
    default: {
      const Tensor global = encode_sequence(m.encoder, ids, segments, mask, ctx);
      Tensor local = encoder_embed(m.encoder, ids, segments);
      if (m.conv) local = conv_block_forward(*m.conv, local);
      local = outlook_block_forward(m.outlook, local, mask);
      const Tensor fused = concat_cols({global, local});
      return linear(*m.fuse2, relu(linear(*m.fuse1, fused)));
    }
  }
}

// As model_representation, but replaying an externally produced h_g through
// the Global-to-Local pipeline instead of running the encoder.
inline Tensor model_representation_from_embeddings(const Model& m, const Tensor& h_g,
                                                   const std::vector<std::uint8_t>& mask) {
  if (m.cfg.mode != IntegrationMode::global_to_local) {
    throw Error("imported embeddings replace the encoder output; only GlobalToLocal supports them");
  }
  if (h_g.rank() != 2 || h_g.dim(1) != m.cfg.hidden) {
    throw Error("imported embeddings " + shape_str(h_g.shape()) + " do not match H = " +
                std::to_string(m.cfg.hidden));
  }
  Tensor h = h_g;
  if (m.conv) h = conv_block_forward(*m.conv, h);
  return outlook_block_forward(m.outlook, h, mask);
}

// Large-but-finite logit offset that removes padded positions from softmax
// and argmax without producing non-finite values.
inline constexpr double kMaskedLogit = -1e30;

struct SpanLogits {
  Tensor start;  // [L], padded positions at kMaskedLogit
  Tensor end;    // [L]
};

inline SpanLogits span_logits_from_rep(const Tensor& rep, const LinearParams& head,
                                       const std::vector<std::uint8_t>& mask) {
  const std::size_t L = rep.dim(0);
  const Tensor both = linear(head, rep);  // [L, 2]
  Tensor offset = Tensor::zeros({L});
  for (std::size_t i = 0; i < L; ++i) {
    if (!mask[i]) offset.mutable_data()[i] = kMaskedLogit;
  }
  SpanLogits out;
  out.start = add(reshape(slice_cols(both, 0, 1), {L}), offset);
  out.end = add(reshape(slice_cols(both, 1, 2), {L}), offset);
  return out;
}

// Per-example forward to task logits.
struct TaskOutput {
  SpanLogits span;      // task == span
  Tensor class_logits;  // [num_labels] (seq_class) — from the position-0 token
  Tensor tag_logits;    // [L, num_labels] (token_tag)
  Tensor choice_score;  // [1] (multi_choice) — score of one choice sequence
};

inline TaskOutput forward_example(const Model& m, const std::vector<long>& ids,
                                  const std::vector<long>& segments,
                                  const std::vector<std::uint8_t>& mask,
                                  const ForwardCtx& ctx = {}) {
  const Tensor rep = model_representation(m, ids, segments, mask, ctx);
  TaskOutput out;
  switch (m.cfg.task) {
    case TaskKind::span:
      out.span = span_logits_from_rep(rep, m.head, mask);
      break;
    case TaskKind::seq_class:
      out.class_logits = reshape(linear(m.head, gather_rows(rep, {0})), {m.cfg.num_labels});
      break;
    case TaskKind::token_tag:
      out.tag_logits = linear(m.head, rep);
      break;
    case TaskKind::multi_choice:
      out.choice_score = reshape(linear(m.head, gather_rows(rep, {0})), {1});
      break;
  }
  return out;
}

// Scores for one multi-choice group: each choice is its own packed sequence;
// the result is the [num_choices] score vector of Eq.-14-style logits.
struct ChoiceSequence {
  std::vector<long> ids;
  std::vector<long> segments;
  std::vector<std::uint8_t> mask;
};

inline Tensor forward_multi_choice(const Model& m, const std::vector<ChoiceSequence>& choices,
                                   const ForwardCtx& ctx = {}) {
  if (m.cfg.task != TaskKind::multi_choice) {
    throw Error("forward_multi_choice: model task is " + std::string(to_string(m.cfg.task)));
  }
  if (choices.empty()) throw Error("forward_multi_choice: no choices");
  std::vector<Tensor> scores;
  scores.reserve(choices.size());
  for (const auto& c : choices) {
    scores.push_back(forward_example(m, c.ids, c.segments, c.mask, ctx).choice_score);
  }
  return reshape(concat_cols(scores), {choices.size()});
}

// ---------------------------------------------------------------------------
// task losses (per example; batching averages these)
// ---------------------------------------------------------------------------

// -log y_s[a_s] - log y_e[a_e] with y the masked softmax over positions.
inline Tensor span_loss(const SpanLogits& logits, long start, long end) {
  const std::size_t L = logits.start.numel();
  if (start < 0 || end < 0 || start > end || end >= static_cast<long>(L)) {
    throw Error("span labels (" + std::to_string(start) + "," + std::to_string(end) +
                ") invalid for length " + std::to_string(L));
  }
  const Tensor s = cross_entropy(reshape(logits.start, {1, L}), {start});
  const Tensor e = cross_entropy(reshape(logits.end, {1, L}), {end});
  return add(s, e);
}

inline Tensor classification_loss(const Tensor& class_logits, long label) {
  const std::size_t C = class_logits.numel();
  return cross_entropy(reshape(class_logits, {1, C}), {label});
}

// Mean over real (label >= 0) positions.
inline Tensor tagging_loss(const Tensor& tag_logits, const std::vector<long>& labels) {
  const std::size_t L = tag_logits.dim(0);
  if (labels.size() != L) throw Error("tagging: label count mismatch");
  std::vector<std::uint8_t> valid(L, 0);
  std::vector<long> targets(L, 0);
  for (std::size_t i = 0; i < L; ++i) {
    if (labels[i] >= 0) {
      valid[i] = 1;
      targets[i] = labels[i];
    }
  }
  return cross_entropy(tag_logits, targets, valid);
}

inline Tensor choice_loss(const Tensor& scores, long correct) {
  const std::size_t C = scores.numel();
  if (correct < 0 || correct >= static_cast<long>(C)) {
    throw Error("multi_choice: correct index out of range");
  }
  return cross_entropy(reshape(scores, {1, C}), {correct});
}

inline Tensor choice_loss(const std::vector<Tensor>& choice_scores, long correct) {
  return choice_loss(reshape(concat_cols(choice_scores), {choice_scores.size()}), correct);
}

// ---------------------------------------------------------------------------
// span decoding
// ---------------------------------------------------------------------------

struct SpanPrediction {
  bool no_answer = false;
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;       // best legal span score
  double null_score = 0.0;  // start[0] + end[0]
};

// Best (s,e) with s <= e <= s + max_answer_len over candidate positions,
// maximizing start[s] + end[e]. Emits no-answer when the threshold-boosted
// null score beats the best span score (SQuAD2.0 convention): larger
// thresholds mean more no-answer predictions, +inf means always.
inline SpanPrediction span_predict(const std::vector<double>& start_logits,
                                   const std::vector<double>& end_logits,
                                   const std::vector<std::uint8_t>& candidates,
                                   std::size_t max_answer_len, double null_threshold = 0.0) {
  const std::size_t L = start_logits.size();
  if (end_logits.size() != L || candidates.size() != L) {
    throw Error("span_predict: length mismatch");
  }
  SpanPrediction best;
  best.no_answer = true;
  best.score = -std::numeric_limits<double>::infinity();
  best.null_score = L > 0 ? start_logits[0] + end_logits[0] : 0.0;
  for (std::size_t s = 0; s < L; ++s) {
    if (!candidates[s]) continue;
    const std::size_t hi = std::min(L - 1, s + max_answer_len);
    for (std::size_t e = s; e <= hi; ++e) {
      if (!candidates[e]) continue;
      const double score = start_logits[s] + end_logits[e];
      if (score > best.score) {
        best.score = score;
        best.start = s;
        best.end = e;
        best.no_answer = false;
      }
    }
  }
  if (!std::isfinite(best.score)) {
    best.no_answer = true;  // no legal candidate pair at all
    return best;
  }
  if (best.null_score + null_threshold > best.score) best.no_answer = true;
  return best;
}

}  // namespace cool
