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

#ifndef FLARE_REDUCER_H_
#define FLARE_REDUCER_H_

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/netkernel.h"

namespace flare {

enum class ReducerVariant { kUmapCore, kPca };

std::string ToString(ReducerVariant variant);
ReducerVariant ParseReducerVariant(const std::string& name);

struct ReducerOptions {
  int n_neighbors = 15;
  int target_dim = 2;
  int epochs = 200;
  double min_dist = 0.1;
  double spread = 1.0;
  int negative_sample_rate = 5;
  double learning_rate = 1.0;
};

// Parameters of the low-dimensional similarity curve 1 / (1 + a d^(2b)).
struct CurveParams {
  double a = 0.0;
  double b = 0.0;
};

// Least-squares fit of the curve to the offset exponential that is 1 below
// min_dist and exp(-(d - min_dist) / spread) above it.
CurveParams FitCurveParams(double min_dist, double spread);

struct ReducerModel {
  ReducerVariant variant = ReducerVariant::kPca;
  int input_dim = 0;
  int output_dim = 0;
  // Embedding of the fit rows.
  Matrix embedding;

  // pca
  Vector mean;
  Matrix components;  // output_dim x input_dim, orthonormal rows
  Vector explained_variance;
  Vector explained_variance_ratio;

  // umap_core
  Matrix train_data;
  int n_neighbors = 0;
  std::vector<double> rho;
  std::vector<double> sigma;
  CurveParams curve;
};

// Throws ValidationError if there are too few rows (umap_core needs more
// rows than n_neighbors, pca at least 2) or target_dim exceeds the input dim.
ReducerModel FitReducer(const Matrix& data, ReducerVariant variant, const ReducerOptions& options,
                        std::uint64_t seed);

// pca projects exactly; umap_core returns the membership-weighted mean of
// the embeddings of the n_neighbors nearest fit rows.
Matrix Transform(const ReducerModel& model, const Matrix& rows);

// Exact Euclidean k nearest neighbors of each query among `reference`,
// sorted by distance then index. `exclude_self` skips the reference row
// with the same index as the query (for fit-time graphs).
struct KnnResult {
  std::vector<std::vector<int>> indices;
  std::vector<std::vector<double>> distances;
};
KnnResult ExactKnn(const Matrix& reference, const Matrix& queries, int k, bool exclude_self);

nlohmann::json ReducerToJson(const ReducerModel& model);
ReducerModel ReducerFromJson(const nlohmann::json& json);

}  // namespace flare

#endif  // FLARE_REDUCER_H_
