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

#ifndef FLARE_PRETRAIN_H_
#define FLARE_PRETRAIN_H_

// Base pretraining: mini-batch Adam on the composite reconstruction /
// cross-entropy / gated-Fisher objective, keeping the parameters of the
// epoch with the best selection macro-F1.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/checkpoint.h"
#include "flare/data.h"
#include "flare/losses.h"

namespace flare {

enum class PretrainMode {
  kBenign,       // plain cross-entropy (alpha = beta = 1)
  kBptWoFisher,  // reconstruction + cross-entropy (beta = 1)
  kBptWFisher,   // the configured weights
};

enum class SelectionSplit { kVal, kTest };

std::string ToString(PretrainMode mode);
PretrainMode ParsePretrainMode(const std::string& name);

struct PretrainConfig {
  LossWeights loss_weights;
  PretrainMode mode = PretrainMode::kBptWFisher;
  double learning_rate = 3e-3;
  int epochs = 200;
  int batch_size = 32;
  std::uint64_t seed = 0;
  SelectionSplit selection_split = SelectionSplit::kVal;
  // Fraction of train persons carved out for selection when
  // selection_split = val.
  double val_fraction = 0.2;
  int patience = 20;
  double min_improvement = 1e-4;

  void Validate() const;
  // Weights after the mode overrides.
  LossWeights EffectiveWeights() const;
};

nlohmann::json PretrainConfigToJson(const PretrainConfig& cfg);
PretrainConfig PretrainConfigFromJson(const nlohmann::json& json);

struct EpochRecord {
  int epoch = 0;
  double recon = 0.0;
  double ce = 0.0;
  double fisher = 0.0;  // mean Fisher proxy over correctly classified samples
  double selection_f1 = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  TrainingHistory history;
};

// Throws ValidationError on empty sets and NumericError if the loss
// diverges.
PretrainResult RunPretraining(const TrainingView& train, const TrainingView& selection,
                              const NetworkSpec& spec, const PretrainConfig& cfg);

// epoch,recon,ce,fisher,f1
void SaveHistoryCsv(const std::filesystem::path& path, const TrainingHistory& history);

}  // namespace flare

#endif  // FLARE_PRETRAIN_H_
