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

#ifndef FLARE_METRICS_H_
#define FLARE_METRICS_H_

// Utility and fairness measurements over pooled prediction records.
//
// Subgroup scores feed the benefit / harm-avoidance / equity (BHE) report:
//   B = mean_s F1_s,  H = min_s F1_s,  E = population std_s F1_s
// and for a candidate against a base model
//   dB = B_cand - B_base
//   dH = min_s (F1_s^cand - F1_s^base)   (a minimum of differences)
//   dE = E_base - E_cand
// so larger deltas are better on all three axes.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flare {

enum class F1Kind { kMacro, kPositive };

F1Kind ParseF1Kind(const std::string& name);
std::string ToString(F1Kind kind);

// Unweighted mean of the per-class F1 over binary classes. A class that is
// absent from both the truth and the predictions is left out of the mean.
// Throws ValidationError on empty or mismatched input, or labels outside
// {0, 1}.
double MacroF1(std::span<const int> y_true, std::span<const int> y_pred);

// F1 of class 1 alone (0 when class 1 never occurs in truth or prediction).
double PositiveF1(std::span<const int> y_true, std::span<const int> y_pred);

double F1Score(std::span<const int> y_true, std::span<const int> y_pred, F1Kind kind);

struct PredictionRecord {
  std::string person_id;
  int fold = 0;
  int y_true = 0;
  int y_pred = 0;
  std::map<std::string, std::string> attributes;

  bool operator==(const PredictionRecord&) const = default;
};

double MacroF1(std::span<const PredictionRecord> records);

struct SubgroupScores {
  std::string attribute;
  // Sorted by category name.
  std::vector<std::pair<std::string, double>> scores;

  std::vector<double> values() const;
};

// F1 restricted to each category of `attribute`. Every record must carry the
// attribute.
SubgroupScores SubgroupF1(std::span<const PredictionRecord> records,
                          const std::string& attribute, F1Kind kind = F1Kind::kMacro);

struct BheTriple {
  double benefit = 0.0;
  double harm = 0.0;
  double equity = 0.0;
};

// (mean, min, population std) of a score set.
BheTriple SummarizeScores(std::span<const double> scores);

struct BheReport {
  std::string attribute;
  BheTriple base;
  BheTriple candidate;
  BheTriple delta;
};

// Throws ValidationError when the category sets differ.
BheReport Bhe(const SubgroupScores& base, const SubgroupScores& candidate);

struct OddsGaps {
  double eod = 0.0;  // max pairwise |TPR_i - TPR_j|
  double aod = 0.0;  // max pairwise (|dTPR| + |dFPR|) / 2
};

// Categories without positives drop out of the TPR comparisons and those
// without negatives out of the FPR comparisons. Throws ValidationError with
// fewer than two usable categories.
OddsGaps EodAod(std::span<const PredictionRecord> records, const std::string& attribute);

struct RelativeDisparity {
  double ratio = 1.0;  // best / worst; +inf when the worst score is 0
  bool acceptable = true;  // ratio < 1.25
};

RelativeDisparity ComputeRelativeDisparity(const SubgroupScores& scores);

struct UserSlices {
  SubgroupScores per_person;
  double mean = 0.0;
  double std = 0.0;  // population
};

UserSlices ComputeUserSlices(std::span<const PredictionRecord> records,
                             F1Kind kind = F1Kind::kMacro);

// Prediction CSV: person_id,fold,y_true,y_pred,attr:<name>...
std::vector<PredictionRecord> LoadPredictionCsv(const std::filesystem::path& path);
void SavePredictionCsv(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records);

// Attribute names present on every record, sorted.
std::vector<std::string> CommonAttributes(std::span<const PredictionRecord> records);

}  // namespace flare

#endif  // FLARE_METRICS_H_
