// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ta2n/engine.hpp"
#include "ta2n/synthetic.hpp"

namespace ta2n::cli {

// Everything a command can be configured with. Keys are flat and dotted
// ("train.learning_rate"); YAML files may nest them or write them flat.
struct RunConfig {
  std::uint64_t seed = 0;
  GeneratorOptions data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

enum class ValueKind { kUnsigned, kReal, kBool, kText };

struct ConfigEntry {
  std::string key;
  ValueKind kind;
  std::string value;  // canonical text form
};

const std::vector<std::string>& config_keys();

// Throws kConfig for an unknown key or a value that does not parse.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);
std::vector<ConfigEntry> resolved_entries(const RunConfig& config);

void apply_yaml(RunConfig& config, const std::string& yaml_text);
void apply_override(RunConfig& config, const std::string& assignment);  // key=value

// Copies the global seed into every component and the data dims into the model.
RunConfig finalized(RunConfig config);

}  // namespace ta2n::cli
