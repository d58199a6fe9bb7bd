#pragma once

#include <string>

#include "dift/model.hpp"
#include "dift/task.hpp"
#include "dift/train_config.hpp"

namespace dift {

/// The three config sections as read from one structured-text (JSON) file:
/// { "model": {...}, "train": {...}, "task": {...} }. Keys match the struct
/// field names exactly; unknown keys are errors. Missing keys keep defaults.
struct HarnessConfig {
  ModelConfig model;
  TrainConfig train;
  TaskSpec task;
};

HarnessConfig parse_config_json(const std::string& text);
HarnessConfig load_config_file(const std::string& path);
std::string to_json_string(const HarnessConfig& cfg);
void save_config_file(const std::string& path, const HarnessConfig& cfg);

const char* to_string(AttnMode m);
const char* to_string(LambdaInitMode m);
const char* to_string(TaskKind k);

}  // namespace dift
