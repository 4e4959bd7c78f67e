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

#include "flare/descriptors.h"

#include <algorithm>
#include <cmath>

#include "flare/errors.h"
#include "json_util.h"

namespace flare {

Matrix DescriptorSet::Stacked() const {
  const Eigen::Index n = static_cast<Eigen::Index>(size());
  Matrix out(n, z.cols() + 2);
  out.leftCols(z.cols()) = z;
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, z.cols()) = ce[i];
    out(i, z.cols() + 1) = fisher[i];
  }
  return out;
}

DescriptorSet ExtractDescriptors(const NetworkParams& params, const Matrix& features,
                                 std::span<const int> labels, LabelSource source,
                                 FisherVariant variant) {
  Require(features.cols() == params.spec.input_dim(),
          "descriptors: feature dim does not match the checkpoint");
  const ForwardTrace trace = Forward(params, features, ForwardMode::kEval);
  DescriptorSet out;
  out.label_source = source;
  out.z = trace.z;
  out.predictions = trace.Predictions();
  std::vector<int> targets;
  if (source == LabelSource::kTrueLabel) {
    Require(labels.size() == static_cast<std::size_t>(features.rows()),
            "descriptors: label count does not match the rows");
    targets.assign(labels.begin(), labels.end());
  } else {
    targets = out.predictions;
  }
  out.ce = CrossEntropy(trace.probs, targets);
  out.fisher.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Eigen::Index r = static_cast<Eigen::Index>(i);
    out.fisher[i] = FisherProxy(trace.probs.row(r), trace.h_penult.row(r), targets[i], variant);
  }
  return out;
}

Matrix StandardizationStats::Apply(const Matrix& rows) const {
  Require(rows.cols() == mean.size(), "standardize: column count does not match the stats");
  Matrix out = rows;
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    out.col(c) = (rows.col(c).array() - mean(c)) / stddev(c);
  }
  return out;
}

Standardized Standardize(const Matrix& rows) {
  Require(rows.rows() >= 2, "standardize: need at least 2 rows");
  Standardized out;
  const double n = static_cast<double>(rows.rows());
  out.stats.mean = rows.colwise().mean().transpose();
  out.stats.stddev.resize(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - out.stats.mean(c)).square().sum() / n;
    out.stats.stddev(c) = std::max(std::sqrt(var), kStdFloor);
  }
  out.values = out.stats.Apply(rows);
  return out;
}

nlohmann::json StatsToJson(const StandardizationStats& stats) {
  return {{"mean", json_util::VectorToJson(stats.mean)},
          {"std", json_util::VectorToJson(stats.stddev)}};
}

StandardizationStats StatsFromJson(const nlohmann::json& in) {
  StandardizationStats stats;
  stats.mean = json_util::VectorFromJson(in.at("mean"));
  stats.stddev = json_util::VectorFromJson(in.at("std"));
  Require(stats.mean.size() == stats.stddev.size(), "standardization stats: size mismatch");
  Require((stats.stddev.array() >= kStdFloor).all(), "standardization stats: std below floor");
  return stats;
}

}  // namespace flare
