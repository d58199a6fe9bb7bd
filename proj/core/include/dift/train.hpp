#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dift/checkpoint.hpp"
#include "dift/config.hpp"
#include "dift/model.hpp"
#include "dift/task.hpp"
#include "dift/train_config.hpp"

namespace dift {

/// Mean cross entropy split into AR-Hit and Others slices. An empty slice is
/// reported absent, not as zero.
struct SliceLoss {
  std::optional<double> ar_hit_loss;
  std::optional<double> others_loss;
  std::size_t ar_hit_tokens = 0;
  std::size_t others_tokens = 0;
};

struct MetricsRow {
  int step = 0;
  double loss = 0.0;
  std::optional<double> ar_hit_loss, others_loss;
  double lr = 0.0;
  std::vector<double> lambdas;  // one per layer (0 for standard attention)
};

/// step,loss,ar_hit_loss,others_loss,lr,lambda_layer_1..L
std::string metrics_csv_header(int n_layers);
std::string metrics_csv_row(const MetricsRow& row);

/// Reproducibility record written next to the checkpoint: config echo, the
/// actual lambda realized by each layer's init, and the weight-init scheme.
std::string run_meta_json(const HarnessConfig& cfg, const std::vector<double>& initial_lambdas);

/// Rebuilds a model from a checkpoint and its config sidecar (path + ".json").
template <typename T>
Model<T> load_model(const std::string& checkpoint_path) {
  HarnessConfig cfg = load_config_file(checkpoint_path + ".json");
  Model<T> m = init_model<T>(cfg.model, 0);
  load_checkpoint(m, checkpoint_path);
  return m;
}

/// AdamW with decoupled weight decay. Moment state is kept in double in both
/// precision modes so the update path is identical.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, const TrainConfig& cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].size(), 0.0);
      v_[i].assign(params_[i].size(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients scaled by grad_scale.
  void step(double lr, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i];
      if (!p.grad_allocated()) p.grad();  // zero gradient still decays weights
      const auto& g = p.grad();
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]) * grad_scale;
        m_[i][j] = cfg_.adam_beta1 * m_[i][j] + (1.0 - cfg_.adam_beta1) * gj;
        v_[i][j] = cfg_.adam_beta2 * v_[i][j] + (1.0 - cfg_.adam_beta2) * gj * gj;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        const double upd = mhat / (std::sqrt(vhat) + kEps) +
                           cfg_.weight_decay * static_cast<double>(p.at(j));
        p.at(j) = static_cast<T>(static_cast<double>(p.at(j)) - lr * upd);
      }
    }
  }

 private:
  static constexpr double kEps = 1e-8;
  std::vector<Tensor<T>> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

namespace detail {

/// token_losses[i] scores the prediction of token i+1; slice by the mask of
/// the target position.
template <typename T>
void accumulate_slices(const Tensor<T>& token_losses, const std::vector<std::uint8_t>& mask,
                       double& hit_sum, std::size_t& hit_n, double& other_sum,
                       std::size_t& other_n) {
  for (std::size_t i = 0; i < token_losses.size(); ++i) {
    const double v = static_cast<double>(token_losses.at(i));
    if (mask[i + 1]) {
      hit_sum += v;
      ++hit_n;
    } else {
      other_sum += v;
      ++other_n;
    }
  }
}

}  // namespace detail

/// Mean CE over AR-Hit target positions and over everything else, separately.
template <typename T>
SliceLoss fine_grained_loss(Model<T>& m, const std::vector<ArSample>& samples) {
  require(!samples.empty(), "fine_grained_loss: no samples");
  double hit_sum = 0, other_sum = 0;
  std::size_t hit_n = 0, other_n = 0;
  for (const auto& s : samples) {
    LmOutput<T> out = lm_forward(m, s.tokens);
    detail::accumulate_slices(out.token_losses, s.ar_hit, hit_sum, hit_n, other_sum, other_n);
  }
  SliceLoss sl;
  sl.ar_hit_tokens = hit_n;
  sl.others_tokens = other_n;
  if (hit_n > 0) sl.ar_hit_loss = hit_sum / static_cast<double>(hit_n);
  if (other_n > 0) sl.others_loss = other_sum / static_cast<double>(other_n);
  return sl;
}

/// Fraction of AR-Hit target positions whose argmax prediction is exact.
template <typename T>
double ar_hit_accuracy(Model<T>& m, const std::vector<ArSample>& samples) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : samples) {
    LmOutput<T> out = lm_forward(m, s.tokens);
    for (std::size_t t = 1; t < s.tokens.size(); ++t) {
      if (!s.ar_hit[t]) continue;
      std::size_t best = 0;
      for (std::size_t v = 1; v < out.logits.cols(); ++v)
        if (out.logits.at(t - 1, v) > out.logits.at(t - 1, best)) best = v;
      correct += (static_cast<int>(best) == s.tokens[t]);
      ++total;
    }
  }
  require(total > 0, "ar_hit_accuracy: no AR-Hit positions in the sample set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

struct RetrievalCell {
  double depth = 0.0;
  std::size_t correct = 0, total = 0;
  double accuracy = 0.0;
};

/// Exact-match accuracy of greedy answer decoding per answer depth.
template <typename T>
std::vector<RetrievalCell> eval_retrieval(Model<T>& m, const TaskSpec& spec, std::uint64_t seed,
                                          std::size_t samples_per_depth = 50) {
  require(spec.kind == TaskKind::needle, "eval_retrieval: needle task required");
  std::vector<RetrievalCell> cells;
  for (double d : spec.answer_depths) {
    RetrievalCell c;
    c.depth = d;
    cells.push_back(c);
  }
  const auto samples = gen_needle(spec, seed, samples_per_depth);
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const auto& smp = samples[si];
    RetrievalCell& cell = cells[si / samples_per_depth];
    LmOutput<T> out = lm_forward(m, smp.tokens);
    for (std::size_t qi = 0; qi < smp.answer_positions.size(); ++qi) {
      const std::size_t pos = smp.answer_positions[qi];
      std::size_t best = 0;
      for (std::size_t v = 1; v < out.logits.cols(); ++v)
        if (out.logits.at(pos - 1, v) > out.logits.at(pos - 1, best)) best = v;
      cell.correct += (static_cast<int>(best) == smp.answer_values[qi]);
      ++cell.total;
    }
  }
  for (auto& c : cells)
    c.accuracy = c.total ? static_cast<double>(c.correct) / static_cast<double>(c.total) : 0.0;
  return cells;
}

template <typename T>
struct TrainResult {
  Model<T> model;
  std::vector<MetricsRow> metrics;
  std::string checkpoint_path;  // empty when no out_dir was given
  std::string metrics_path;
};

/// Next-token training over freshly generated task batches. Deterministic at
/// fixed seed: the data stream, init, and update path are all pinned.
/// Divergence (non-finite loss) aborts with a diagnostic.
template <typename T>
TrainResult<T> train(const ModelConfig& mc, const TaskSpec& task, const TrainConfig& tc,
                     const std::string& out_dir = "",
                     const std::function<bool(const MetricsRow&, Model<T>&)>& on_step = {}) {
  mc.validate();
  task.validate();
  tc.validate();
  require(task.vocab_size <= mc.vocab_size,
          "train: task vocabulary does not fit the model vocabulary");
  require(task.seq_len <= mc.max_seq_len, "train: task seq_len exceeds max_seq_len");

  TrainResult<T> res;
  res.model = init_model<T>(mc, tc.seed);
  Model<T>& model = res.model;

  std::vector<Tensor<T>> params;
  for_each_param<T>(model, [&](const std::string&, Tensor<T>& t) { params.push_back(t); });
  AdamW<T> opt(params, tc);

  std::vector<double> initial_lambdas;
  for (auto& layer : model.layers)
    if (auto* diff = std::get_if<MultiHeadParams<T>>(&layer.attn))
      initial_lambdas.push_back(static_cast<double>(compute_lambda(diff->lambda).item()));

  std::ofstream metrics_out;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    res.metrics_path = out_dir + "/metrics.csv";
    res.checkpoint_path = out_dir + "/checkpoint.dftc";
    metrics_out.open(res.metrics_path, std::ios::trunc);
    require(static_cast<bool>(metrics_out), "train: cannot write " + res.metrics_path);
    metrics_out << metrics_csv_header(mc.n_layers) << "\n";
    save_config_file(res.checkpoint_path + ".json", HarnessConfig{mc, tc, task});
    std::ofstream meta(out_dir + "/run_meta.json", std::ios::trunc);
    meta << run_meta_json(HarnessConfig{mc, tc, task}, initial_lambdas) << "\n";
  }

  const std::size_t n_seq =
      std::max<std::size_t>(1, static_cast<std::size_t>(tc.batch_tokens / task.seq_len));

  for (int step = 0; step < tc.total_steps; ++step) {
    // fresh deterministic batch for this step
    std::vector<std::vector<int>> seqs;
    std::vector<std::vector<std::uint8_t>> masks;
    const std::uint64_t step_seed = Rng::split(task.seed, static_cast<std::uint64_t>(step));
    if (task.kind == TaskKind::assoc_recall) {
      for (auto& s : gen_assoc_recall(task, step_seed, n_seq)) {
        seqs.push_back(std::move(s.tokens));
        masks.push_back(std::move(s.ar_hit));
      }
    } else {
      const std::size_t per_depth =
          (n_seq + task.answer_depths.size() - 1) / task.answer_depths.size();
      auto all = gen_needle(task, step_seed, per_depth);
      for (std::size_t i = 0; i < n_seq && i < all.size(); ++i) {
        std::vector<std::uint8_t> mask(all[i].tokens.size(), 0);
        for (std::size_t p : all[i].answer_positions) mask[p] = 1;
        seqs.push_back(std::move(all[i].tokens));
        masks.push_back(std::move(mask));
      }
    }

    for (auto& p : params) p.zero_grad();
    double loss_sum = 0;
    double hit_sum = 0, other_sum = 0;
    std::size_t hit_n = 0, other_n = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      Graph<T> tape;
      LmOutput<T> out = lm_forward(model, seqs[i], &tape);
      const double l = static_cast<double>(out.loss.item());
      if (!finite(l))
        throw NumericError("train: loss diverged (non-finite) at step " + std::to_string(step));
      loss_sum += l;
      detail::accumulate_slices(out.token_losses, masks[i], hit_sum, hit_n, other_sum, other_n);
      tape.backward(out.loss);
    }

    opt.step(lr_schedule(tc, step), 1.0 / static_cast<double>(seqs.size()));

    MetricsRow row;
    row.step = step;
    row.loss = loss_sum / static_cast<double>(seqs.size());
    if (hit_n > 0) row.ar_hit_loss = hit_sum / static_cast<double>(hit_n);
    if (other_n > 0) row.others_loss = other_sum / static_cast<double>(other_n);
    row.lr = lr_schedule(tc, step);
    for (auto& layer : model.layers) {
      if (auto* diff = std::get_if<MultiHeadParams<T>>(&layer.attn))
        row.lambdas.push_back(static_cast<double>(compute_lambda(diff->lambda).item()));
      else
        row.lambdas.push_back(0.0);
    }
    if (metrics_out.is_open()) metrics_out << metrics_csv_row(row) << "\n";
    res.metrics.push_back(row);

    if (!out_dir.empty() && (step + 1) % tc.eval_every == 0)
      save_checkpoint(model, res.checkpoint_path);

    if (on_step && !on_step(row, model)) break;
  }

  if (!out_dir.empty()) {
    save_checkpoint(model, res.checkpoint_path);
    metrics_out.close();
  }
  return res;
}

}  // namespace dift
