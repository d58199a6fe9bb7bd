#include "dift/lambda.hpp"

#include <cmath>

#include "dift/common.hpp"
#include "dift/model.hpp"

namespace dift {

double lambda_init_schedule(int layer_index) {
  require(layer_index >= 1, "lambda_init_schedule: layer index is 1-based");
  return 0.8 - 0.6 * std::exp(-0.3 * static_cast<double>(layer_index - 1));
}

double ModelConfig::lambda_init_for_layer(int layer_index_1based) const {
  if (lambda_init_mode == LambdaInitMode::constant) return lambda_init_constant;
  return lambda_init_schedule(layer_index_1based);
}

}  // namespace dift
