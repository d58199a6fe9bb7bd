#include "dift/train.hpp"

#include <cstdio>

#include <json.hpp>

namespace dift {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_header(int n_layers) {
  std::string h = "step,loss,ar_hit_loss,others_loss,lr";
  for (int l = 1; l <= n_layers; ++l) h += ",lambda_layer_" + std::to_string(l);
  return h;
}

std::string metrics_csv_row(const MetricsRow& row) {
  std::string s = std::to_string(row.step) + "," + fmt(row.loss) + ",";
  if (row.ar_hit_loss) s += fmt(*row.ar_hit_loss);
  s += ",";
  if (row.others_loss) s += fmt(*row.others_loss);
  s += "," + fmt(row.lr);
  for (double l : row.lambdas) s += "," + fmt(l);
  return s;
}

std::string run_meta_json(const HarnessConfig& cfg, const std::vector<double>& initial_lambdas) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(to_json_string(cfg));
  j["initial_lambda_per_layer"] = initial_lambdas;
  std::vector<double> scheduled;
  for (int l = 1; l <= cfg.model.n_layers; ++l)
    scheduled.push_back(cfg.model.lambda_init_for_layer(l));
  j["lambda_init_per_layer"] = scheduled;
  j["weight_init"] = "projections N(0, d_model^-1/2), embeddings N(0, 0.02), "
                     "lambda vectors N(0, 0.1), norm gains 1, no biases";
  j["precision"] = to_string(cfg.model.precision);
  return j.dump(2);
}

}  // namespace dift
