/*
 * Copyright 2026 The Flare Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FLARE_CHECKPOINT_H_
#define FLARE_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "flare/netkernel.h"

namespace flare {

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  int epoch = 0;
  double selection_f1 = 0.0;
};

struct Checkpoint {
  NetworkParams params;
  CheckpointMetadata metadata;
};

// {"spec": {...}, "layers": [{"weight": [[...]], "bias": [...]}],
//  "metadata": {"seed", "epoch", "selection_f1"}}. Weights are row-major,
// one inner array per output unit.
nlohmann::json SpecToJson(const NetworkSpec& spec);
NetworkSpec SpecFromJson(const nlohmann::json& json);
nlohmann::json ParamsToJson(const NetworkParams& params);
NetworkParams ParamsFromJson(const nlohmann::json& json);
nlohmann::json CheckpointToJson(const Checkpoint& checkpoint);
Checkpoint CheckpointFromJson(const nlohmann::json& json);

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Reads and parses a JSON document, rethrowing parse failures as
// ValidationError.
nlohmann::json ReadJsonFile(const std::filesystem::path& path);
void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& json);

}  // namespace flare

#endif  // FLARE_CHECKPOINT_H_
