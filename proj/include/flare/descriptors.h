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

#ifndef FLARE_DESCRIPTORS_H_
#define FLARE_DESCRIPTORS_H_

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/netkernel.h"

namespace flare {

enum class LabelSource {
  kTrueLabel,    // ce and fisher against the given labels
  kPseudoLabel,  // ce and fisher against the model's own prediction
};

// Per-sample behavioral descriptors [z, ce, fisher] under a fixed model.
struct DescriptorSet {
  Matrix z;
  std::vector<double> ce;
  std::vector<double> fisher;
  std::vector<int> predictions;
  LabelSource label_source = LabelSource::kTrueLabel;

  std::size_t size() const { return ce.size(); }
  // Rows [z | ce | fisher].
  Matrix Stacked() const;
};

// Eval-mode forward under `params`. `labels` is ignored (and may be empty)
// for kPseudoLabel.
DescriptorSet ExtractDescriptors(const NetworkParams& params, const Matrix& features,
                                 std::span<const int> labels, LabelSource source,
                                 FisherVariant variant = FisherVariant::kLastLayer);

inline constexpr double kStdFloor = 1e-9;

struct StandardizationStats {
  Vector mean;
  Vector stddev;  // population std, floored at kStdFloor

  Matrix Apply(const Matrix& rows) const;
};

struct Standardized {
  Matrix values;
  StandardizationStats stats;
};

// Column z-scores. Throws ValidationError with fewer than 2 rows.
Standardized Standardize(const Matrix& rows);

nlohmann::json StatsToJson(const StandardizationStats& stats);
StandardizationStats StatsFromJson(const nlohmann::json& json);

}  // namespace flare

#endif  // FLARE_DESCRIPTORS_H_
