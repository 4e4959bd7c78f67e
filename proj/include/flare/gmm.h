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

#ifndef FLARE_GMM_H_
#define FLARE_GMM_H_

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "flare/netkernel.h"

namespace flare {

struct GmmOptions {
  int max_iter = 500;
  double tol = 1e-7;
  double variance_floor = 1e-6;
};

// Diagonal-covariance Gaussian mixture.
struct GmmModel {
  int components = 0;
  Vector weights;      // C
  Matrix means;        // C x D
  Matrix variances;    // C x D, every entry >= variance floor
  // Mean per-row log-likelihood of the fit data, one entry per E-step.
  std::vector<double> log_likelihood_trace;
  int iterations = 0;
  bool converged = false;

  int dim() const { return static_cast<int>(means.cols()); }
};

// EM from a seeded k-means++ seeding (hard assignment to the seeds, then an
// M-step). Stops when the per-row log-likelihood gain drops below tol.
// Throws ValidationError when rows < C.
GmmModel FitGmm(const Matrix& data, int components, std::uint64_t seed,
                const GmmOptions& options = {});

// Mean per-row log-likelihood.
double MeanLogLikelihood(const GmmModel& model, const Matrix& data);

struct ClusterAssignment {
  int num_clusters = 0;
  std::vector<int> ids;  // argmax posterior, ties to the lowest id
  Matrix posteriors;     // rows x C, rows sum to 1

  std::size_t size() const { return ids.size(); }
  std::vector<std::size_t> Counts() const;
};

ClusterAssignment Assign(const GmmModel& model, const Matrix& data);

struct ChooseCResult {
  int components = 1;
  GmmModel model;
};

// Fits at c_init and refits with one component fewer while any hard
// cluster of the fit data has fewer than min_cluster_size members.
ChooseCResult ChooseC(const Matrix& data, int c_init, std::size_t min_cluster_size,
                      std::uint64_t seed, const GmmOptions& options = {});

nlohmann::json GmmToJson(const GmmModel& model);
GmmModel GmmFromJson(const nlohmann::json& json);

}  // namespace flare

#endif  // FLARE_GMM_H_
