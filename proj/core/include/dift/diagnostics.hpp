#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dift/model.hpp"
#include "dift/quant.hpp"
#include "dift/task.hpp"

namespace dift {

/// Half-open column range [begin, end).
struct ColumnSpan {
  std::size_t begin = 0, end = 0;
  std::size_t width() const { return end - begin; }
};

/// One captured net-attention row (query position) for a given layer/head.
struct AttnRow {
  int layer = 0;
  int head = 0;
  std::vector<double> weights;
};

struct AllocationResult {
  double attn_to_answer = 0.0;
  double attn_noise = 0.0;
  double attn_other = 0.0;
  // signed span sums before clamping, for transparency about negative mass
  double raw_answer = 0.0;
  double raw_noise = 0.0;
  struct LayerBreakdown {
    int layer = 0;
    double attn_to_answer = 0.0, attn_noise = 0.0, attn_other = 0.0;
    std::size_t rows = 0;
  };
  std::vector<LayerBreakdown> per_layer;
  std::size_t rows = 0;
};

/// Mass allocated to answer vs. noise columns, averaged over the given rows.
/// Net differential scores can be negative, so each row is clamped at zero
/// and renormalized to sum 1 before the spans are aggregated; the raw signed
/// sums are reported alongside. Components sum to 1 for partitioning spans.
AllocationResult attention_allocation(const std::vector<AttnRow>& rows,
                                      const std::vector<ColumnSpan>& answer_span,
                                      const std::vector<ColumnSpan>& noise_span);

struct OutlierStats {
  std::string kind;  // "attention_logits" or "hidden_states"
  std::vector<std::pair<int, double>> top;  // (k, k-th largest magnitude), ascending k
  double median = 0.0;
  std::size_t count = 0;
};

/// k-th largest magnitudes and the median magnitude of an activation stream.
OutlierStats activation_stats(std::vector<double> values,
                              const std::vector<int>& ks = {1, 2, 3, 10, 100});

// ---------------------------------------------------------------------------
// model-facing capture and evaluation helpers
// ---------------------------------------------------------------------------

/// Runs a forward pass capturing the net attention rows at the given query
/// positions, for every layer and head.
template <typename T>
std::vector<AttnRow> capture_attention_rows(Model<T>& m, std::span<const int> tokens,
                                            const std::vector<std::size_t>& query_positions) {
  std::vector<AttnRow> rows;
  ModelHooks<T> hooks;
  hooks.on_map = [&](int layer, int head, const Tensor<T>& map) {
    for (std::size_t q : query_positions) {
      AttnRow r;
      r.layer = layer;
      r.head = head;
      r.weights.resize(map.cols());
      for (std::size_t j = 0; j < map.cols(); ++j)
        r.weights[j] = static_cast<double>(map.at(q, j));
      rows.push_back(std::move(r));
    }
  };
  (void)lm_forward(m, tokens, nullptr, &hooks);
  return rows;
}

/// Streams of attention logits and hidden-state values from running the
/// model over the given sequences.
template <typename T>
struct ActivationStreams {
  std::vector<double> attention_logits;
  std::vector<double> hidden_states;
};

template <typename T>
ActivationStreams<T> collect_activations(Model<T>& m,
                                         const std::vector<std::vector<int>>& sequences) {
  ActivationStreams<T> s;
  ModelHooks<T> hooks;
  hooks.on_logits = [&](int, int, const Tensor<T>& z1, const Tensor<T>& z2) {
    for (std::size_t i = 0; i < z1.size(); ++i)
      s.attention_logits.push_back(static_cast<double>(z1.at(i)));
    if (z2.defined())
      for (std::size_t i = 0; i < z2.size(); ++i)
        s.attention_logits.push_back(static_cast<double>(z2.at(i)));
  };
  hooks.on_hidden = [&](int, const Tensor<T>& h) {
    for (std::size_t i = 0; i < h.size(); ++i)
      s.hidden_states.push_back(static_cast<double>(h.at(i)));
  };
  for (const auto& seq : sequences) (void)lm_forward(m, seq, nullptr, &hooks);
  return s;
}

/// Task accuracy with attention logits quantized (pre-softmax) at the given
/// width. bits = 16 reproduces the unquantized accuracy exactly.
template <typename T>
double eval_task_accuracy_quantized(Model<T>& m, const TaskSpec& spec, std::uint64_t seed,
                                    std::size_t n_samples, const QuantSpec* quant) {
  ModelHooks<T> hooks;
  hooks.logit_quant = quant;
  const ModelHooks<T>* hp = quant ? &hooks : nullptr;

  std::size_t correct = 0, total = 0;
  if (spec.kind == TaskKind::needle) {
    const std::size_t per_depth =
        std::max<std::size_t>(1, n_samples / spec.answer_depths.size());
    for (const auto& smp : gen_needle(spec, seed, per_depth)) {
      LmOutput<T> out = lm_forward(m, smp.tokens, nullptr, hp);
      for (std::size_t qi = 0; qi < smp.answer_positions.size(); ++qi) {
        const std::size_t pos = smp.answer_positions[qi];
        std::size_t best = 0;
        for (std::size_t v = 1; v < out.logits.cols(); ++v)
          if (out.logits.at(pos - 1, v) > out.logits.at(pos - 1, best)) best = v;
        correct += (static_cast<int>(best) == smp.answer_values[qi]);
        ++total;
      }
    }
  } else {
    for (const auto& smp : gen_assoc_recall(spec, seed, n_samples)) {
      LmOutput<T> out = lm_forward(m, smp.tokens, nullptr, hp);
      for (std::size_t t = 1; t < smp.tokens.size(); ++t) {
        if (!smp.ar_hit[t]) continue;
        std::size_t best = 0;
        for (std::size_t v = 1; v < out.logits.cols(); ++v)
          if (out.logits.at(t - 1, v) > out.logits.at(t - 1, best)) best = v;
        correct += (static_cast<int>(best) == smp.tokens[t]);
        ++total;
      }
    }
  }
  require(total > 0, "eval_task_accuracy_quantized: no scored positions");
  return static_cast<double>(correct) / static_cast<double>(total);
}

struct QuantSweepCell {
  int bits = 16;
  double accuracy = 0.0;
};

/// Re-runs the task evaluation at each bit width. The 16-bit row is the
/// unquantized baseline.
template <typename T>
std::vector<QuantSweepCell> quant_sweep_eval(Model<T>& m, const TaskSpec& spec,
                                             const std::vector<int>& bits_list,
                                             std::uint64_t seed, std::size_t n_samples) {
  std::vector<QuantSweepCell> cells;
  for (int bits : bits_list) {
    QuantSpec q{bits};
    q.validate();
    QuantSweepCell cell;
    cell.bits = bits;
    cell.accuracy = eval_task_accuracy_quantized(m, spec, seed, n_samples,
                                                 q.passthrough() ? nullptr : &q);
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace dift
