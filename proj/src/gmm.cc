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

#include "flare/gmm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "flare/errors.h"
#include "flare/rng.h"
#include "json_util.h"

namespace flare {
namespace {

using nlohmann::json;

// Per-row, per-component log(w_c N(x | mu_c, var_c)).
Matrix WeightedLogDensities(const GmmModel& model, const Matrix& data) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  Matrix out(n, model.components);
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  for (int c = 0; c < model.components; ++c) {
    const double log_w = model.weights(c) > 0.0 ? std::log(model.weights(c))
                                                : -std::numeric_limits<double>::infinity();
    const double log_det = model.variances.row(c).array().log().sum();
    const double constant = log_w - 0.5 * (static_cast<double>(d) * log_2pi + log_det);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double maha =
          ((data.row(i) - model.means.row(c)).array().square() / model.variances.row(c).array())
              .sum();
      out(i, c) = constant - 0.5 * maha;
    }
  }
  return out;
}

double LogSumExp(const Eigen::Ref<const RowVector>& row) {
  const double peak = row.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((row.array() - peak).exp().sum());
}

// E-step. Returns the mean log-likelihood and fills responsibilities.
double EStep(const GmmModel& model, const Matrix& data, Matrix& resp) {
  resp = WeightedLogDensities(model, data);
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double lse = LogSumExp(resp.row(i));
    total += lse;
    resp.row(i) = (resp.row(i).array() - lse).exp();
  }
  return total / static_cast<double>(data.rows());
}

void MStep(const Matrix& data, const Matrix& resp, double floor, GmmModel& model) {
  const double n = static_cast<double>(data.rows());
  for (int c = 0; c < model.components; ++c) {
    const double nk = resp.col(c).sum();
    model.weights(c) = nk / n;
    if (nk <= std::numeric_limits<double>::min()) continue;  // keep the previous mean/variance
    const RowVector mean = (resp.col(c).transpose() * data) / nk;
    model.means.row(c) = mean;
    const Matrix centered = data.rowwise() - mean;
    const RowVector var = (resp.col(c).transpose() * centered.array().square().matrix()) / nk;
    model.variances.row(c) = var.cwiseMax(floor);
  }
  model.weights /= model.weights.sum();
}

std::vector<Eigen::Index> KMeansPlusPlus(const Matrix& data, int k, Rng& rng) {
  const Eigen::Index n = data.rows();
  std::vector<Eigen::Index> centers;
  centers.push_back(static_cast<Eigen::Index>(rng.UniformIndex(static_cast<std::size_t>(n))));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (data.row(i) - data.row(centers[0])).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    const double total = d2.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = rng.Uniform() * total;
      double cumulative = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        cumulative += d2(i);
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.UniformIndex(static_cast<std::size_t>(n)));
    }
    centers.push_back(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = std::min(d2(i), (data.row(i) - data.row(pick)).squaredNorm());
    }
  }
  return centers;
}

GmmModel Initialize(const Matrix& data, int k, Rng& rng, double floor) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  const std::vector<Eigen::Index> centers = KMeansPlusPlus(data, k, rng);
  Matrix resp = Matrix::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double dist = (data.row(i) - data.row(centers[c])).squaredNorm();
      if (dist < best_d2) {
        best_d2 = dist;
        best = c;
      }
    }
    resp(i, best) = 1.0;
  }
  GmmModel model;
  model.components = k;
  model.weights = Vector::Zero(k);
  model.means.resize(k, d);
  model.variances.resize(k, d);
  const RowVector global_mean = data.colwise().mean();
  const RowVector global_var =
      ((data.rowwise() - global_mean).array().square().colwise().sum() / static_cast<double>(n))
          .matrix()
          .cwiseMax(floor);
  for (int c = 0; c < k; ++c) {
    model.means.row(c) = data.row(centers[c]);
    model.variances.row(c) = global_var;
  }
  MStep(data, resp, floor, model);
  return model;
}

}  // namespace

std::vector<std::size_t> ClusterAssignment::Counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_clusters), 0);
  for (int id : ids) ++counts[static_cast<std::size_t>(id)];
  return counts;
}

GmmModel FitGmm(const Matrix& data, int components, std::uint64_t seed,
                const GmmOptions& options) {
  Require(components >= 1, "gmm: need at least one component");
  Require(data.rows() >= components, "gmm: fewer rows than components");
  Require(data.cols() >= 1 && data.allFinite(), "gmm: data must be finite and non-empty");
  Require(options.max_iter >= 1 && options.variance_floor > 0.0, "gmm: invalid options");
  Rng rng(seed);
  GmmModel model = Initialize(data, components, rng, options.variance_floor);
  Matrix resp;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    const double ll = EStep(model, data, resp);
    Require(std::isfinite(ll), "gmm: log-likelihood is not finite");
    model.log_likelihood_trace.push_back(ll);
    const std::size_t t = model.log_likelihood_trace.size();
    if (t >= 2 && ll - model.log_likelihood_trace[t - 2] < options.tol) {
      model.converged = true;
      break;
    }
    MStep(data, resp, options.variance_floor, model);
    model.iterations = iter + 1;
  }
  return model;
}

double MeanLogLikelihood(const GmmModel& model, const Matrix& data) {
  Require(data.cols() == model.dim(), "gmm: dimension mismatch");
  Matrix resp;
  return EStep(model, data, resp);
}

ClusterAssignment Assign(const GmmModel& model, const Matrix& data) {
  Require(data.cols() == model.dim(), "gmm: dimension mismatch");
  ClusterAssignment out;
  out.num_clusters = model.components;
  EStep(model, data, out.posteriors);
  out.ids.resize(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < model.components; ++c) {
      if (out.posteriors(i, c) > out.posteriors(i, best)) best = c;
    }
    out.ids[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

ChooseCResult ChooseC(const Matrix& data, int c_init, std::size_t min_cluster_size,
                      std::uint64_t seed, const GmmOptions& options) {
  Require(c_init >= 1, "choose_c: c_init must be at least 1");
  int c = std::min<Eigen::Index>(c_init, data.rows());
  while (true) {
    GmmModel model = FitGmm(data, c, seed, options);
    const std::vector<std::size_t> counts = Assign(model, data).Counts();
    const bool degenerate = std::any_of(counts.begin(), counts.end(),
                                        [&](std::size_t n) { return n < min_cluster_size; });
    if (!degenerate || c == 1) return {c, std::move(model)};
    --c;
  }
}

json GmmToJson(const GmmModel& model) {
  return {{"components", model.components},
          {"weights", json_util::VectorToJson(model.weights)},
          {"means", json_util::MatrixToJson(model.means)},
          {"variances", json_util::MatrixToJson(model.variances)},
          {"log_likelihood_trace", model.log_likelihood_trace},
          {"iterations", model.iterations},
          {"converged", model.converged}};
}

GmmModel GmmFromJson(const json& in) {
  GmmModel model;
  model.components = in.at("components").get<int>();
  model.weights = json_util::VectorFromJson(in.at("weights"));
  model.means = json_util::MatrixFromJson(in.at("means"));
  model.variances = json_util::MatrixFromJson(in.at("variances"));
  model.log_likelihood_trace = in.value("log_likelihood_trace", std::vector<double>{});
  model.iterations = in.value("iterations", 0);
  model.converged = in.value("converged", false);
  Require(model.components >= 1 && model.weights.size() == model.components &&
              model.means.rows() == model.components && model.variances.rows() == model.components &&
              model.means.cols() == model.variances.cols(),
          "gmm model: shape mismatch");
  Require(std::abs(model.weights.sum() - 1.0) <= 1e-9 && (model.weights.array() >= 0.0).all(),
          "gmm model: weights must be non-negative and sum to 1");
  Require((model.variances.array() > 0.0).all(), "gmm model: variances must be positive");
  return model;
}

}  // namespace flare
