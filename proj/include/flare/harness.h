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

#ifndef FLARE_HARNESS_H_
#define FLARE_HARNESS_H_

// End-to-end experiment orchestration: folds x seeds x modes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/adapt.h"
#include "flare/data.h"
#include "flare/landscape.h"
#include "flare/metrics.h"
#include "flare/pretrain.h"
#include "flare/stratifier.h"

namespace flare {

enum class RunMode { kBenign, kBptWoFisher, kBptWFisher, kCaaWoFisher, kFlare };

std::string ToString(RunMode mode);
RunMode ParseRunMode(const std::string& name);
// Pretraining recipe behind a mode.
PretrainMode PretrainModeFor(RunMode mode);
bool UsesAdaptation(RunMode mode);

// Either an explicit spec or widths from which an autoencoder spec is built
// once the input dim is known.
struct NetworkTemplate {
  std::optional<NetworkSpec> spec;
  std::vector<int> encoder_widths = {16, 8};
  std::vector<int> classifier_widths = {8};
  Activation activation = Activation::kTanh;
  Activation classifier_activation = Activation::kTanh;
  double encoder_dropout = 0.0;
  double classifier_dropout = 0.0;

  NetworkSpec Build(int input_dim) const;
};

struct RunConfig {
  std::filesystem::path csv_path;  // used when synth is empty
  std::optional<SynthConfig> synth;
  std::uint64_t data_seed = 0;
  int folds = 4;
  double holdout_fraction = 0.2;
  NetworkTemplate network;
  PretrainConfig pretrain;
  StratifierConfig stratifier;
  AdaptConfig adapt;
  std::vector<RunMode> modes = {RunMode::kBenign, RunMode::kFlare};
  std::vector<std::uint64_t> seeds = {0};
  F1Kind f1 = F1Kind::kMacro;
  // Mode written to bhe.csv; empty selects flare when present, otherwise the
  // last non-benign mode.
  std::string candidate_name;
  bool landscape = true;
  LandscapeOptions landscape_options;
  int landscape_max_rows = 256;
  std::filesystem::path out_dir = "out";

  void Validate() const;
  // Modes in canonical order with benign always included.
  std::vector<RunMode> EffectiveModes() const;
  std::optional<RunMode> Candidate() const;
};

nlohmann::json RunConfigToJson(const RunConfig& cfg);
RunConfig RunConfigFromJson(const nlohmann::json& json);
RunConfig LoadRunConfig(const std::filesystem::path& path);

// Seeds of every stochastic stage of one (seed, fold) job.
struct FoldSeeds {
  std::uint64_t split = 0;
  std::uint64_t pretrain = 0;
  std::uint64_t stratifier = 0;
  std::uint64_t adapt = 0;
  std::uint64_t clusters = 0;
};
std::uint64_t FoldPlanSeed(std::uint64_t seed);
FoldSeeds DeriveFoldSeeds(std::uint64_t seed, int fold);

// Per-fold inputs derived from a fold plan entry.
struct FoldSplits {
  TrainingView pretrain_train;
  TrainingView selection;
  TrainingView holdout;
  TrainingView test;
};

// Splits train persons into pretraining-train and validation persons when
// the pretrain selection split is val.
FoldSplits MakeFoldSplits(const Dataset& dataset, const Fold& fold, const PretrainConfig& pretrain,
                          std::uint64_t seed);

struct PooledPrediction {
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kBenign;
  std::size_t row = 0;  // dataset row
  int cluster_id = -1;  // -1 without adaptation
  PredictionRecord record;
};

struct ClusterDelta {
  std::uint64_t seed = 0;
  int fold = 0;
  RunMode mode = RunMode::kFlare;
  int cluster = 0;
  std::size_t n_train2 = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  double val_f1_base = 0.0;
  double val_f1_adapted = 0.0;
  // NaN when no test sample was routed to the cluster.
  double test_f1_base = 0.0;
  double test_f1_adapted = 0.0;
};

struct FoldMetric {
  std::uint64_t seed = 0;
  int fold = 0;
  RunMode mode = RunMode::kBenign;
  double macro_f1 = 0.0;
  int num_clusters = 0;
  int pretrain_best_epoch = 0;
  int adapt_epochs = 0;
};

struct FoldFailure {
  std::uint64_t seed = 0;
  int fold = 0;
  std::string phase;
  std::string message;
};

struct AttributeAudit {
  std::string attribute;
  SubgroupScores scores;
  std::optional<OddsGaps> odds;
  RelativeDisparity disparity;
  // Against benign; absent for benign itself.
  std::optional<BheReport> bhe;
};

struct ModeSummary {
  std::uint64_t seed = 0;
  RunMode mode = RunMode::kBenign;
  std::size_t records = 0;
  double macro_f1 = 0.0;
  double user_f1_mean = 0.0;
  double user_f1_std = 0.0;
  std::vector<AttributeAudit> attributes;
};

struct LandscapeResult {
  RunMode mode = RunMode::kBenign;
  LossGrid grid;
};

struct PhaseTiming {
  std::string phase;
  double seconds = 0.0;
};

struct RunReport {
  RunConfig config;
  std::vector<PooledPrediction> predictions;
  std::vector<FoldMetric> fold_metrics;
  std::vector<ClusterDelta> cluster_deltas;
  std::vector<ModeSummary> summaries;
  std::vector<FoldFailure> failures;
  std::vector<LandscapeResult> landscapes;
  std::vector<PhaseTiming> timings;

  const ModeSummary* Find(std::uint64_t seed, RunMode mode) const;
};

RunReport RunExperiment(const RunConfig& cfg, const Dataset& dataset);
// Loads or generates the dataset named by the config.
RunReport RunExperiment(const RunConfig& cfg);
Dataset LoadDataset(const RunConfig& cfg);

// Deterministic content: no timings.
nlohmann::json ReportToJson(const RunReport& report);

// report.json, timing.json, bhe.csv, bhe_<mode>.csv, fold_cluster_delta.csv,
// landscape_<mode>.csv, predictions.csv and manifest.json.
void EmitReports(const RunReport& report, const std::filesystem::path& out_dir);

// Subgroup,B_base,H_base,E_base,B_cand,H_cand,E_cand,dB,dH,dE in percent.
void SaveBheCsv(const std::filesystem::path& path, const std::vector<BheReport>& rows);

// Seed-averaged BHE rows of `mode` against benign, one per attribute.
std::vector<BheReport> AverageBhe(const RunReport& report, RunMode mode);

std::string Sha256File(const std::filesystem::path& path);
// manifest.json listing every other regular file under `dir` with its
// size and SHA-256.
void WriteManifest(const std::filesystem::path& dir);

}  // namespace flare

#endif  // FLARE_HARNESS_H_
