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

#ifndef FLARE_ADAPT_H_
#define FLARE_ADAPT_H_

// Per-cluster fine-tuning from the pretrained checkpoint with the
// do-no-harm loss, periodic running-mean aggregation with conditional
// adoption, and best-checkpoint reload.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/data.h"
#include "flare/gmm.h"
#include "flare/losses.h"
#include "flare/stratifier.h"

namespace flare {

struct AdaptConfig {
  // Number of leading encoder layers kept frozen; -1 selects half the
  // encoder (rounded down).
  int freeze_depth = -1;
  double alpha = 0.5;
  double lambda_dnh = 1.0;
  FisherVariant fisher_variant = FisherVariant::kLastLayer;
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 32;
  int agg_interval = 5;
  int patience = 10;
  double min_improvement = 1e-4;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  // Worker threads for the per-cluster epochs; results do not depend on it.
  int threads = 1;

  void Validate() const;
  int EffectiveFreezeDepth(const NetworkSpec& spec) const;
  LossWeights Weights() const;
};

nlohmann::json AdaptConfigToJson(const AdaptConfig& cfg);
AdaptConfig AdaptConfigFromJson(const nlohmann::json& json);

// Positions into the split that was assigned, grouped per cluster.
struct ClusterData {
  int num_clusters = 0;
  std::vector<std::vector<std::size_t>> train2;
  std::vector<std::vector<std::size_t>> val;
  std::vector<std::vector<std::size_t>> test;
};

// Per cluster, round(val_fraction * n) samples (at least 1 when n >= 2) go to
// validation, allocated across labels by largest remainder when both labels
// are present.
ClusterData SplitClusterData(const ClusterAssignment& assignment, std::span<const int> labels,
                             double val_fraction, std::uint64_t seed);

// Positions of each cluster, ascending.
std::vector<std::vector<std::size_t>> GroupByCluster(const ClusterAssignment& assignment);

struct AdoptionEvent {
  int epoch = 0;
  int cluster = 0;
  bool adopted = false;
  double f1_before = 0.0;
  double f1_after = 0.0;
};

struct ClusterModel {
  NetworkParams params;  // live parameters
  NetworkParams best;    // best validation checkpoint (starts at theta*)
  double base_val_f1 = 0.0;
  double best_val_f1 = 0.0;
  int best_epoch = 0;
  // No train2 or no validation samples: the cluster keeps theta*.
  bool skipped = false;
  // Best validation F1 after each epoch.
  std::vector<double> best_f1_history;
};

struct ClusterModelSet {
  std::vector<ClusterModel> clusters;
  std::vector<char> trainable;  // per layer
  std::vector<AdoptionEvent> adoptions;
  // Mean validation F1 over the non-skipped clusters after each epoch.
  std::vector<double> mean_val_f1;
  int epochs_run = 0;

  int num_clusters() const { return static_cast<int>(clusters.size()); }
};

// `holdout` is the labeled split the cluster positions refer to. Throws
// NumericError if a loss diverges.
ClusterModelSet RunAdaptation(const NetworkParams& theta_star, const TrainingView& holdout,
                              const ClusterData& clusters, const AdaptConfig& cfg);

struct RoutedPredictions {
  std::vector<int> predictions;
  std::vector<int> cluster_ids;
};

// Pseudo-label routing under theta*, then an eval-mode forward under the
// routed cluster's best checkpoint.
RoutedPredictions RouteAndPredict(const NetworkParams& theta_star, const StratifierModel& stratifier,
                                  const ClusterModelSet& models, const Matrix& features);

// epoch,cluster,adopted,f1_before,f1_after
void SaveAdoptionLogCsv(const std::filesystem::path& path, const ClusterModelSet& models);

}  // namespace flare

#endif  // FLARE_ADAPT_H_
