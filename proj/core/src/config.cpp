#include "dift/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dift {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const char* section,
                    std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    require(ok, "config: unknown key '" + it.key() + "' in section '" + section + "'");
  }
}

template <typename U>
void get_if_present(const json& obj, const char* key, U& out) {
  if (obj.contains(key)) out = obj.at(key).get<U>();
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j, "model",
                 {"d_model", "n_layers", "head_dim", "attn_mode", "lambda_init_mode",
                  "lambda_init_constant", "rope_theta", "ffn_dim", "vocab_size", "max_seq_len",
                  "precision", "use_group_norm"});
  get_if_present(j, "d_model", m.d_model);
  get_if_present(j, "n_layers", m.n_layers);
  get_if_present(j, "head_dim", m.head_dim);
  if (j.contains("attn_mode")) {
    const std::string v = j.at("attn_mode").get<std::string>();
    if (v == "diff")
      m.attn_mode = AttnMode::diff;
    else if (v == "standard")
      m.attn_mode = AttnMode::standard;
    else
      throw ContractError("config: attn_mode must be 'diff' or 'standard'");
  }
  if (j.contains("lambda_init_mode")) {
    const std::string v = j.at("lambda_init_mode").get<std::string>();
    if (v == "exponential")
      m.lambda_init_mode = LambdaInitMode::exponential;
    else if (v == "constant")
      m.lambda_init_mode = LambdaInitMode::constant;
    else
      throw ContractError("config: lambda_init_mode must be 'exponential' or 'constant'");
  }
  get_if_present(j, "lambda_init_constant", m.lambda_init_constant);
  get_if_present(j, "rope_theta", m.rope_theta);
  get_if_present(j, "ffn_dim", m.ffn_dim);
  get_if_present(j, "vocab_size", m.vocab_size);
  get_if_present(j, "max_seq_len", m.max_seq_len);
  if (j.contains("precision")) {
    const std::string v = j.at("precision").get<std::string>();
    if (v == "single")
      m.precision = Precision::single_prec;
    else if (v == "double")
      m.precision = Precision::double_prec;
    else
      throw ContractError("config: precision must be 'single' or 'double'");
  }
  get_if_present(j, "use_group_norm", m.use_group_norm);
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, "train",
                 {"lr", "adam_betas", "warmup_steps", "weight_decay", "batch_tokens",
                  "total_steps", "seed", "eval_every"});
  get_if_present(j, "lr", t.lr);
  if (j.contains("adam_betas")) {
    const auto& b = j.at("adam_betas");
    require(b.is_array() && b.size() == 2, "config: adam_betas must be a [beta1, beta2] pair");
    t.adam_beta1 = b[0].get<double>();
    t.adam_beta2 = b[1].get<double>();
  }
  get_if_present(j, "warmup_steps", t.warmup_steps);
  get_if_present(j, "weight_decay", t.weight_decay);
  get_if_present(j, "batch_tokens", t.batch_tokens);
  get_if_present(j, "total_steps", t.total_steps);
  get_if_present(j, "seed", t.seed);
  get_if_present(j, "eval_every", t.eval_every);
}

void parse_task(const json& j, TaskSpec& t) {
  reject_unknown(j, "task",
                 {"kind", "vocab_size", "seq_len", "n_pairs", "n_queries", "answer_depths",
                  "seed", "ngram"});
  if (j.contains("kind")) {
    const std::string v = j.at("kind").get<std::string>();
    if (v == "assoc_recall")
      t.kind = TaskKind::assoc_recall;
    else if (v == "needle")
      t.kind = TaskKind::needle;
    else
      throw ContractError("config: task kind must be 'assoc_recall' or 'needle'");
  }
  get_if_present(j, "vocab_size", t.vocab_size);
  get_if_present(j, "seq_len", t.seq_len);
  get_if_present(j, "n_pairs", t.n_pairs);
  get_if_present(j, "n_queries", t.n_queries);
  if (j.contains("answer_depths")) t.answer_depths = j.at("answer_depths").get<std::vector<double>>();
  get_if_present(j, "seed", t.seed);
  get_if_present(j, "ngram", t.ngram);
}

}  // namespace

const char* to_string(AttnMode m) { return m == AttnMode::diff ? "diff" : "standard"; }
const char* to_string(LambdaInitMode m) {
  return m == LambdaInitMode::exponential ? "exponential" : "constant";
}
const char* to_string(TaskKind k) { return k == TaskKind::assoc_recall ? "assoc_recall" : "needle"; }

HarnessConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("config: malformed JSON: ") + e.what());
  }
  require(j.is_object(), "config: top level must be an object");
  reject_unknown(j, "top-level", {"model", "train", "task"});
  HarnessConfig cfg;
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("task")) parse_task(j.at("task"), cfg.task);
  cfg.model.validate();
  cfg.train.validate();
  cfg.task.validate();
  return cfg;
}

HarnessConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_json(ss.str());
}

std::string to_json_string(const HarnessConfig& cfg) {
  json j;
  j["model"] = {{"d_model", cfg.model.d_model},
                {"n_layers", cfg.model.n_layers},
                {"head_dim", cfg.model.head_dim},
                {"attn_mode", to_string(cfg.model.attn_mode)},
                {"lambda_init_mode", to_string(cfg.model.lambda_init_mode)},
                {"lambda_init_constant", cfg.model.lambda_init_constant},
                {"rope_theta", cfg.model.rope_theta},
                {"ffn_dim", cfg.model.ffn_dim},
                {"vocab_size", cfg.model.vocab_size},
                {"max_seq_len", cfg.model.max_seq_len},
                {"precision", to_string(cfg.model.precision)},
                {"use_group_norm", cfg.model.use_group_norm}};
  j["train"] = {{"lr", cfg.train.lr},
                {"adam_betas", {cfg.train.adam_beta1, cfg.train.adam_beta2}},
                {"warmup_steps", cfg.train.warmup_steps},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_tokens", cfg.train.batch_tokens},
                {"total_steps", cfg.train.total_steps},
                {"seed", cfg.train.seed},
                {"eval_every", cfg.train.eval_every}};
  j["task"] = {{"kind", to_string(cfg.task.kind)},
               {"vocab_size", cfg.task.vocab_size},
               {"seq_len", cfg.task.seq_len},
               {"n_pairs", cfg.task.n_pairs},
               {"n_queries", cfg.task.n_queries},
               {"answer_depths", cfg.task.answer_depths},
               {"seed", cfg.task.seed},
               {"ngram", cfg.task.ngram}};
  return j.dump(2);
}

void save_config_file(const std::string& path, const HarnessConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), "config: cannot write " + path);
  os << to_json_string(cfg) << "\n";
}

}  // namespace dift
