// Copyright 2026 The GoCE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// JSON (de)serialization of configs and checkpoints. Doubles are written in
// shortest round-trip form, so save -> load is bit-exact.

#include <cstdint>
#include <string>

#include "goce/evolution_gate.hpp"
#include "goce/model.hpp"
#include "json.hpp"

namespace goce::io {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::ordered_json to_json(const model::ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
model::ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const evolution::GateConfig& cfg);
evolution::GateConfig gate_config_from_json(const nlohmann::json& j);

/// The run configuration file: {"model": {...}, "evolution": {...}}.
struct RunConfig {
  model::ModelConfig model;
  evolution::GateConfig evolution;
};
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

struct Checkpoint {
  model::ModelConfig config;
  model::GoceParams params;
  model::AdamState adam;
  std::uint64_t rng_seed = 0;  // root seed of every stream
  std::size_t rng_step = 0;    // optimizer steps consumed
};

nlohmann::ordered_json to_json(const Checkpoint& ckpt);
/// Throws DimensionError when parameter shapes disagree with the config.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Writes `j` followed by a newline; throws DataError when the path is unwritable.
void write_json_file(const std::string& path, const nlohmann::ordered_json& j);

}  // namespace goce::io
