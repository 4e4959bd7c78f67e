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

#ifndef FLARE_DATA_H_
#define FLARE_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/netkernel.h"

namespace flare {

struct Sample {
  std::string person_id;
  std::vector<double> features;
  int label = 0;
  // Evaluation-only metadata (e.g. demographic proxies).
  std::map<std::string, std::string> attributes;

  bool operator==(const Sample&) const = default;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(int feature_dim, std::vector<std::string> attribute_names);

  // Throws ValidationError on a wrong feature count, a non-binary label or
  // a missing attribute.
  void Add(Sample sample);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  int feature_dim() const { return feature_dim_; }
  const std::vector<std::string>& attribute_names() const { return attribute_names_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  // Distinct person ids, sorted.
  std::vector<std::string> Persons() const;
  // Row indices (ascending) belonging to any of `persons`.
  std::vector<std::size_t> RowsForPersons(std::span<const std::string> persons) const;

  bool operator==(const Dataset&) const = default;

 private:
  int feature_dim_ = 0;
  std::vector<std::string> attribute_names_;
  std::vector<Sample> samples_;
};

// The only view of a dataset that training code receives: features, labels
// and person ids for a subset of rows. It holds copies, so attributes cannot
// be reached through it.
class TrainingView {
 public:
  TrainingView() = default;
  TrainingView(const Dataset& dataset, std::vector<std::size_t> rows);

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  int feature_dim() const { return static_cast<int>(features_.cols()); }
  const Matrix& features() const { return features_; }
  std::span<const int> labels() const { return labels_; }
  const std::vector<std::string>& person_ids() const { return person_ids_; }
  // Dataset row of each view row.
  const std::vector<std::size_t>& rows() const { return rows_; }

  // View over a subset of this view's rows (positions into this view).
  TrainingView Subset(std::span<const std::size_t> positions) const;
  Matrix GatherFeatures(std::span<const std::size_t> positions) const;
  std::vector<int> GatherLabels(std::span<const std::size_t> positions) const;

 private:
  Matrix features_;
  std::vector<int> labels_;
  std::vector<std::string> person_ids_;
  std::vector<std::size_t> rows_;
};

// Header: person_id,label,attr:<name>...,x0..x{d-1}
Dataset LoadCsv(const std::filesystem::path& path);
void SaveCsv(const std::filesystem::path& path, const Dataset& dataset);

struct Fold {
  std::vector<std::string> test_persons;
  std::vector<std::string> train_persons;
  std::vector<std::string> holdout_persons;
};

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

// Persons are shuffled by `seed` and dealt round-robin into K test sets.
// The remaining persons of each fold are shuffled again and split into
// train / holdout-train with round(holdout_fraction * n) holdout persons.
FoldPlan MakeFolds(const Dataset& dataset, int k, double holdout_fraction,
                   std::uint64_t seed);

nlohmann::json FoldPlanToJson(const FoldPlan& plan);
FoldPlan FoldPlanFromJson(const nlohmann::json& json);

struct SynthConfig {
  int persons = 60;
  int samples_per_person = 30;
  int feature_dim = 8;
  int groups = 3;
  // Pairwise distance between group centroids.
  double separation = 4.0;
  // Standard deviation of each person's offset from the group centroid.
  double person_shift = 0.5;
  // Per-group label flip rate, in [0, 0.5).
  std::vector<double> noise_rates = {0.0, 0.0, 0.25};
  // Per-group rotation of the linear label rule, degrees.
  std::vector<double> rotation_degrees = {0.0, 0.0, 25.0};
  // Probability that noisy_proxy reports the true group.
  double proxy_agreement = 0.7;

  void Validate() const;
};

nlohmann::json SynthConfigToJson(const SynthConfig& cfg);
SynthConfig SynthConfigFromJson(const nlohmann::json& json);

// Persons are spread evenly over the groups (shuffled). Features are
// Gaussian around the person's group centroid plus a per-person offset; the
// label is the sign of the group's rotated linear rule on the offset from
// the centroid, flipped with the group's noise rate. Each sample carries
// attributes `group_proxy` (the planted group, "g<k>") and `noisy_proxy`.
Dataset SynthGenerate(const SynthConfig& cfg, std::uint64_t seed);

struct DatasetSummary {
  std::size_t persons = 0;
  std::size_t samples = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::map<std::string, std::map<std::string, std::size_t>> category_counts;
};

DatasetSummary Summarize(const Dataset& dataset);
nlohmann::json SummaryToJson(const DatasetSummary& summary);

}  // namespace flare

#endif  // FLARE_DATA_H_
