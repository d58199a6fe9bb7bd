#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "dift/attention.hpp"
#include "dift/common.hpp"

namespace dift {

enum class AttnMode { diff, standard };
enum class LambdaInitMode { exponential, constant };

/// Architecture hyperparameters. head_dim is d: a differential layer gets
/// d_model / 2d heads, a standard layer d_model / d heads, which keeps the
/// attention parameter counts identical.
struct ModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int head_dim = 16;
  AttnMode attn_mode = AttnMode::diff;
  LambdaInitMode lambda_init_mode = LambdaInitMode::exponential;
  double lambda_init_constant = 0.8;
  double rope_theta = 10000.0;
  int ffn_dim = 0;  // 0 derives round_even(8/3 * d_model)
  int vocab_size = 64;
  int max_seq_len = 512;
  Precision precision = Precision::single_prec;
  bool use_group_norm = true;

  int n_heads() const {
    return attn_mode == AttnMode::diff ? d_model / (2 * head_dim) : d_model / head_dim;
  }

  int ffn_dim_effective() const {
    if (ffn_dim > 0) return ffn_dim;
    // 8/3 * d_model rounded to the nearest even integer
    return static_cast<int>(std::llround(8.0 * d_model / 6.0) * 2);
  }

  double lambda_init_for_layer(int layer_index_1based) const;

  void validate() const {
    require(d_model > 0 && head_dim > 0 && n_layers >= 1, "ModelConfig: dimensions must be positive");
    require(vocab_size >= 2, "ModelConfig: vocab_size must be at least 2");
    require(max_seq_len >= 2, "ModelConfig: max_seq_len must be at least 2");
    require(rope_theta > 0.0, "ModelConfig: rope_theta must be positive");
    if (attn_mode == AttnMode::diff)
      require(d_model % (2 * head_dim) == 0,
              "ModelConfig: d_model must be divisible by 2 * head_dim in diff mode");
    else
      require(d_model % head_dim == 0,
              "ModelConfig: d_model must be divisible by head_dim in standard mode");
    if (lambda_init_mode == LambdaInitMode::constant)
      require(lambda_init_constant > 0.0 && lambda_init_constant < 1.0,
              "ModelConfig: constant lambda_init must lie in (0,1)");
    require(ffn_dim >= 0, "ModelConfig: ffn_dim must be nonnegative");
  }
};

/// One pre-norm decoder layer: attention sublayer then SwiGLU sublayer, both
/// residual, both preceded by RMSNorm with a learnable gain.
template <typename T>
struct DecoderLayerParams {
  std::variant<MultiHeadParams<T>, StdMultiHeadParams<T>> attn;
  Tensor<T> pre_attn_norm_gain, pre_ffn_norm_gain;  // d_model vectors
  Tensor<T> wg, w1;                                 // d_model x ffn_dim
  Tensor<T> w2;                                     // ffn_dim x d_model
};

template <typename T>
struct Model {
  ModelConfig config;
  Tensor<T> embedding;    // vocab x d_model
  Tensor<T> unembedding;  // d_model x vocab (untied)
  std::vector<DecoderLayerParams<T>> layers;
  Tensor<T> final_norm_gain;
};

inline constexpr double kNormEps = 1e-5;

/// Weight init: projections N(0, d_model^-1/2), embeddings N(0, 0.02),
/// norm gains 1, lambda vectors N(0, 0.1). No bias terms anywhere.
template <typename T>
Model<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model<T> m;
  m.config = cfg;
  const std::size_t dm = static_cast<std::size_t>(cfg.d_model);
  const std::size_t d = static_cast<std::size_t>(cfg.head_dim);
  const std::size_t vocab = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t ffn = static_cast<std::size_t>(cfg.ffn_dim_effective());
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));

  m.embedding = randn<T>(rng, {vocab, dm}, 0.02);
  m.embedding.set_requires_grad();
  m.unembedding = randn<T>(rng, {dm, vocab}, proj_std);
  m.unembedding.set_requires_grad();

  for (int l = 1; l <= cfg.n_layers; ++l) {
    DecoderLayerParams<T> layer;
    if (cfg.attn_mode == AttnMode::diff) {
      const T li = static_cast<T>(cfg.lambda_init_for_layer(l));
      layer.attn = MultiHeadParams<T>::init(rng, dm, d, li, proj_std, T(kNormEps),
                                            cfg.use_group_norm);
    } else {
      layer.attn = StdMultiHeadParams<T>::init(rng, dm, d, proj_std);
    }
    layer.pre_attn_norm_gain = Tensor<T>::full({dm}, T(1)).set_requires_grad();
    layer.pre_ffn_norm_gain = Tensor<T>::full({dm}, T(1)).set_requires_grad();
    layer.wg = randn<T>(rng, {dm, ffn}, proj_std).set_requires_grad();
    layer.w1 = randn<T>(rng, {dm, ffn}, proj_std).set_requires_grad();
    layer.w2 = randn<T>(rng, {ffn, dm}, proj_std).set_requires_grad();
    m.layers.push_back(std::move(layer));
  }
  m.final_norm_gain = Tensor<T>::full({dm}, T(1)).set_requires_grad();
  return m;
}

/// Visits every learnable tensor in a fixed order shared by the optimizer,
/// the checkpoint format, and the gradient-check sweeps.
template <typename T>
void for_each_param(Model<T>& m, const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn("embedding", m.embedding);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const std::string base = "layers." + std::to_string(i) + ".";
    auto& layer = m.layers[i];
    fn(base + "pre_attn_norm_gain", layer.pre_attn_norm_gain);
    std::visit(
        [&](auto& attn) {
          using A = std::decay_t<decltype(attn)>;
          for (std::size_t h = 0; h < attn.heads.size(); ++h) {
            const std::string hb = base + "attn.heads." + std::to_string(h) + ".";
            fn(hb + "wq", attn.heads[h].wq);
            fn(hb + "wk", attn.heads[h].wk);
            fn(hb + "wv", attn.heads[h].wv);
          }
          fn(base + "attn.wo", attn.wo);
          if constexpr (std::is_same_v<A, MultiHeadParams<T>>) {
            fn(base + "attn.lambda.lq1", attn.lambda.lq1);
            fn(base + "attn.lambda.lk1", attn.lambda.lk1);
            fn(base + "attn.lambda.lq2", attn.lambda.lq2);
            fn(base + "attn.lambda.lk2", attn.lambda.lk2);
          }
        },
        layer.attn);
    fn(base + "pre_ffn_norm_gain", layer.pre_ffn_norm_gain);
    fn(base + "wg", layer.wg);
    fn(base + "w1", layer.w1);
    fn(base + "w2", layer.w2);
  }
  fn("final_norm_gain", m.final_norm_gain);
  fn("unembedding", m.unembedding);
}

template <typename T>
std::size_t total_param_count(Model<T>& m) {
  std::size_t n = 0;
  for_each_param<T>(m, [&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

/// Model-level instrumentation, fanned out to every layer's attention heads.
template <typename T>
struct ModelHooks {
  const QuantSpec* logit_quant = nullptr;
  std::function<void(int layer, int head, const Tensor<T>&, const Tensor<T>&)> on_logits;
  std::function<void(int layer, int head, const Tensor<T>&)> on_map;
  std::function<void(int layer, const Tensor<T>&)> on_hidden;
};

/// SwiGLU(X) = (swish(X W^G) (Hadamard) X W1) W2
template <typename T>
Tensor<T> swiglu(const Tensor<T>& x, const Tensor<T>& wg, const Tensor<T>& w1,
                 const Tensor<T>& w2, Graph<T>* tape = nullptr) {
  Tensor<T> gate = silu(matmul(x, wg, tape), tape);
  return matmul(mul(gate, matmul(x, w1, tape), tape), w2, tape);
}

/// Y = MultiHead(LN(X)) + X ; out = SwiGLU(LN(Y)) + Y. Causal by contract:
/// this is a decoder layer.
template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& x, const DecoderLayerParams<T>& p,
                        const RopeContext* rope = nullptr, Graph<T>* tape = nullptr,
                        const ModelHooks<T>* hooks = nullptr, int layer_index = 0) {
  MultiHeadHooks<T> mh;
  if (hooks) {
    mh.logit_quant = hooks->logit_quant;
    if (hooks->on_logits)
      mh.on_logits = [hooks, layer_index](int head, const Tensor<T>& a, const Tensor<T>& b) {
        hooks->on_logits(layer_index, head, a, b);
      };
    if (hooks->on_map)
      mh.on_map = [hooks, layer_index](int head, const Tensor<T>& m) {
        hooks->on_map(layer_index, head, m);
      };
  }
  const MultiHeadHooks<T>* mhp = hooks ? &mh : nullptr;

  Tensor<T> attn_in = rms_norm(x, T(kNormEps), p.pre_attn_norm_gain, tape);
  Tensor<T> attn_out = std::visit(
      [&](const auto& attn) {
        using A = std::decay_t<decltype(attn)>;
        if constexpr (std::is_same_v<A, MultiHeadParams<T>>)
          return multi_head_diff_attn(attn_in, attn, /*causal=*/true, rope, tape, mhp);
        else
          return multi_head_std_attn(attn_in, attn, /*causal=*/true, rope, tape, mhp);
      },
      p.attn);
  Tensor<T> y = add(x, attn_out, tape);

  Tensor<T> ffn_in = rms_norm(y, T(kNormEps), p.pre_ffn_norm_gain, tape);
  Tensor<T> out = add(y, swiglu(ffn_in, p.wg, p.w1, p.w2, tape), tape);
  if (hooks && hooks->on_hidden) hooks->on_hidden(layer_index, out);
  return out;
}

template <typename T>
struct LmOutput {
  Tensor<T> logits;        // N x vocab
  Tensor<T> loss;          // scalar, mean next-token cross entropy (undefined when N == 1)
  Tensor<T> token_losses;  // N-1 per-position cross entropies (undefined when N == 1)
};

/// Embed, run L decoder layers with rotary positions, final RMSNorm, unembed.
/// Loss is the mean next-token cross entropy over the N-1 predicted positions.
template <typename T>
LmOutput<T> lm_forward(Model<T>& m, std::span<const int> tokens, Graph<T>* tape = nullptr,
                       const ModelHooks<T>* hooks = nullptr) {
  const std::size_t n = tokens.size();
  require(n >= 1, "lm_forward: empty token sequence");
  require(n <= static_cast<std::size_t>(m.config.max_seq_len),
          "lm_forward: sequence exceeds max_seq_len");
  for (int t : tokens)
    require(t >= 0 && t < m.config.vocab_size,
            "lm_forward: token id " + std::to_string(t) + " out of vocab range");

  RopeContext rope;
  rope.theta = m.config.rope_theta;
  rope.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) rope.positions[i] = static_cast<int>(i);

  Tensor<T> x = gather_rows(m.embedding, tokens, tape);
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    x = decoder_layer(x, m.layers[l], &rope, tape, hooks, static_cast<int>(l));
  Tensor<T> h = rms_norm(x, T(kNormEps), m.final_norm_gain, tape);

  LmOutput<T> out;
  out.logits = matmul(h, m.unembedding, tape);
  if (n >= 2) {
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    Tensor<T> pred = slice_rows(out.logits, 0, n - 1, tape);
    out.token_losses = cross_entropy_rows(pred, targets, tape);
    out.loss = mean(out.token_losses, tape);
  }
  return out;
}

}  // namespace dift
