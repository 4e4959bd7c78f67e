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

#ifndef FLARE_STRATIFIER_H_
#define FLARE_STRATIFIER_H_

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/data.h"
#include "flare/descriptors.h"
#include "flare/gmm.h"
#include "flare/reducer.h"

namespace flare {

struct StratifierConfig {
  ReducerVariant variant = ReducerVariant::kUmapCore;
  int c_init = 3;
  ReducerOptions reducer;
  // 0 selects max(10, 1% of the fit rows).
  std::size_t min_cluster_size = 0;
  FisherVariant fisher_variant = FisherVariant::kLastLayer;
  GmmOptions gmm;
  std::uint64_t seed = 0;

  void Validate() const;
};

nlohmann::json StratifierConfigToJson(const StratifierConfig& cfg);
StratifierConfig StratifierConfigFromJson(const nlohmann::json& json);

struct StratifierModel {
  StandardizationStats stats;
  ReducerModel reducer;
  GmmModel gmm;
  FisherVariant fisher_variant = FisherVariant::kLastLayer;

  int num_clusters() const { return gmm.components; }
};

struct StratifierFit {
  StratifierModel model;
  // Positions (into the training view) of the correctly classified rows the
  // reducer and mixture were fit on.
  std::vector<std::size_t> fit_positions;
  // Assignment of every training row, from true-label descriptors.
  ClusterAssignment train_assignment;
};

// Descriptors of the correctly classified training rows under `theta` are
// standardized, reduced and clustered; every training row is then assigned.
// Throws ValidationError with fewer than 2 correctly classified rows.
StratifierFit FitStratifier(const NetworkParams& theta, const TrainingView& train,
                            const StratifierConfig& cfg);

ClusterAssignment AssignDescriptors(const StratifierModel& model, const DescriptorSet& descriptors);

// Inference routing: pseudo-label descriptors under `theta`, then assignment.
ClusterAssignment Route(const StratifierModel& model, const NetworkParams& theta,
                        const Matrix& features);

nlohmann::json StratifierToJson(const StratifierModel& model);
StratifierModel StratifierFromJson(const nlohmann::json& json);

// sample_index,cluster_id,posterior_0..posterior_{C-1}
void SaveAssignmentsCsv(const std::filesystem::path& path, const ClusterAssignment& assignment);

}  // namespace flare

#endif  // FLARE_STRATIFIER_H_
