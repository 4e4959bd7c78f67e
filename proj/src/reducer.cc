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

#include "flare/reducer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <utility>

#include <Eigen/Eigenvalues>

#include "flare/errors.h"
#include "flare/rng.h"
#include "json_util.h"

namespace flare {
namespace {

using nlohmann::json;

constexpr double kBandwidthTolerance = 1e-5;
constexpr int kBandwidthIterations = 64;
constexpr double kMinDistScale = 1e-3;
constexpr double kGradientClip = 4.0;

Matrix Project(const Matrix& rows, const Vector& mean, const Matrix& components) {
  return (rows.rowwise() - mean.transpose()) * components.transpose();
}

void FitPca(const Matrix& data, int target_dim, ReducerModel& model) {
  const double n = static_cast<double>(data.rows());
  model.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - model.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / n;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  Require(solver.info() == Eigen::Success, "pca: eigendecomposition failed");
  const Vector eigenvalues = solver.eigenvalues().cwiseMax(0.0);
  const double total = eigenvalues.sum();
  const Eigen::Index d = data.cols();

  model.components.resize(target_dim, d);
  model.explained_variance.resize(target_dim);
  model.explained_variance_ratio.resize(target_dim);
  for (int k = 0; k < target_dim; ++k) {
    const Eigen::Index src = d - 1 - k;
    Vector v = solver.eigenvectors().col(src);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;
    model.components.row(k) = v.transpose();
    model.explained_variance(k) = eigenvalues(src);
    model.explained_variance_ratio(k) = total > 0.0 ? eigenvalues(src) / total : 0.0;
  }
  model.embedding = Project(data, model.mean, model.components);
}

// Per-point (rho, sigma) such that the memberships of the k neighbors sum
// to log2(k).
void SmoothKnn(const KnnResult& knn, std::vector<double>& rho, std::vector<double>& sigma) {
  const std::size_t n = knn.distances.size();
  rho.assign(n, 0.0);
  sigma.assign(n, 1.0);
  double global_sum = 0.0;
  std::size_t global_count = 0;
  for (const auto& row : knn.distances) {
    for (double d : row) global_sum += d;
    global_count += row.size();
  }
  const double global_mean = global_count == 0 ? 0.0 : global_sum / global_count;

  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& dist = knn.distances[i];
    const double target = std::log2(static_cast<double>(dist.size()));
    for (double d : dist) {
      if (d > 0.0) {
        rho[i] = d;
        break;
      }
    }
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double mid = 1.0;
    for (int iter = 0; iter < kBandwidthIterations; ++iter) {
      double psum = 0.0;
      for (double d : dist) {
        const double gap = d - rho[i];
        psum += gap > 0.0 ? std::exp(-gap / mid) : 1.0;
      }
      if (std::abs(psum - target) < kBandwidthTolerance) break;
      if (psum > target) {
        hi = mid;
        mid = (lo + hi) / 2.0;
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
      }
    }
    const double local_mean =
        dist.empty() ? 0.0 : std::accumulate(dist.begin(), dist.end(), 0.0) / dist.size();
    const double floor = kMinDistScale * (rho[i] > 0.0 ? local_mean : global_mean);
    sigma[i] = std::max({mid, floor, std::numeric_limits<double>::min()});
  }
}

double Membership(double distance, double rho, double sigma) {
  return std::exp(-std::max(0.0, distance - rho) / sigma);
}

struct Edge {
  int head = 0;
  int tail = 0;
  double weight = 0.0;
};

// Fuzzy union w = a + b - ab of the directed membership graph; both
// directions of each undirected pair are emitted, ordered by (head, tail).
std::vector<Edge> FuzzyUnion(const KnnResult& knn, const std::vector<double>& rho,
                             const std::vector<double>& sigma) {
  std::map<std::pair<int, int>, std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < knn.indices.size(); ++i) {
    for (std::size_t k = 0; k < knn.indices[i].size(); ++k) {
      const int a = static_cast<int>(i);
      const int b = knn.indices[i][k];
      const double w = Membership(knn.distances[i][k], rho[i], sigma[i]);
      if (a < b) {
        pairs[{a, b}].first = w;
      } else {
        pairs[{b, a}].second = w;
      }
    }
  }
  std::vector<Edge> edges;
  for (const auto& [key, w] : pairs) {
    const double combined = w.first + w.second - w.first * w.second;
    if (combined <= 0.0) continue;
    edges.push_back({key.first, key.second, combined});
    edges.push_back({key.second, key.first, combined});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::pair(x.head, x.tail) < std::pair(y.head, y.tail);
  });
  return edges;
}

double Clip(double value) { return std::clamp(value, -kGradientClip, kGradientClip); }

void LayoutSgd(const std::vector<Edge>& edges, const ReducerOptions& options, CurveParams curve,
               Rng& rng, Matrix& embedding) {
  if (edges.empty()) return;
  const int epochs = options.epochs;
  double max_weight = 0.0;
  for (const Edge& e : edges) max_weight = std::max(max_weight, e.weight);

  std::vector<const Edge*> active;
  std::vector<double> epochs_per_sample;
  for (const Edge& e : edges) {
    if (e.weight < max_weight / epochs) continue;
    active.push_back(&e);
    epochs_per_sample.push_back(max_weight / e.weight);
  }
  const double neg_rate = static_cast<double>(options.negative_sample_rate);
  std::vector<double> next_sample = epochs_per_sample;
  std::vector<double> epochs_per_negative(epochs_per_sample.size());
  for (std::size_t i = 0; i < epochs_per_sample.size(); ++i) {
    epochs_per_negative[i] = epochs_per_sample[i] / neg_rate;
  }
  std::vector<double> next_negative = epochs_per_negative;

  const Eigen::Index dim = embedding.cols();
  const std::size_t n = static_cast<std::size_t>(embedding.rows());
  const double a = curve.a;
  const double b = curve.b;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double alpha = options.learning_rate * (1.0 - static_cast<double>(epoch) / epochs);
    for (std::size_t e = 0; e < active.size(); ++e) {
      if (next_sample[e] > epoch) continue;
      const int j = active[e]->head;
      const int k = active[e]->tail;
      double dist_sq = (embedding.row(j) - embedding.row(k)).squaredNorm();
      double coeff = 0.0;
      if (dist_sq > 0.0) {
        coeff = -2.0 * a * b * std::pow(dist_sq, b - 1.0) / (a * std::pow(dist_sq, b) + 1.0);
      }
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double grad = Clip(coeff * (embedding(j, d) - embedding(k, d)));
        embedding(j, d) += grad * alpha;
        embedding(k, d) -= grad * alpha;
      }
      next_sample[e] += epochs_per_sample[e];

      const int n_neg = static_cast<int>((epoch - next_negative[e]) / epochs_per_negative[e]);
      for (int p = 0; p < n_neg; ++p) {
        const int other = static_cast<int>(rng.UniformIndex(n));
        if (other == j) continue;
        dist_sq = (embedding.row(j) - embedding.row(other)).squaredNorm();
        coeff = 0.0;
        if (dist_sq > 0.0) {
          coeff = 2.0 * b / ((0.001 + dist_sq) * (a * std::pow(dist_sq, b) + 1.0));
        }
        for (Eigen::Index d = 0; d < dim; ++d) {
          const double grad =
              coeff > 0.0 ? Clip(coeff * (embedding(j, d) - embedding(other, d))) : kGradientClip;
          embedding(j, d) += grad * alpha;
        }
      }
      next_negative[e] += n_neg * epochs_per_negative[e];
    }
  }
}

void FitUmap(const Matrix& data, const ReducerOptions& options, std::uint64_t seed,
             ReducerModel& model) {
  Require(options.epochs >= 1, "umap_core: epochs must be at least 1");
  Require(options.negative_sample_rate >= 1, "umap_core: negative sample rate must be >= 1");
  model.train_data = data;
  model.n_neighbors = options.n_neighbors;
  model.curve = FitCurveParams(options.min_dist, options.spread);
  const KnnResult knn = ExactKnn(data, data, options.n_neighbors, /*exclude_self=*/true);
  SmoothKnn(knn, model.rho, model.sigma);
  const std::vector<Edge> edges = FuzzyUnion(knn, model.rho, model.sigma);

  Rng root(seed);
  ReducerModel init;
  FitPca(data, options.target_dim, init);
  Matrix embedding = init.embedding;
  Rng noise = root.Split({0});
  for (Eigen::Index r = 0; r < embedding.rows(); ++r) {
    for (Eigen::Index c = 0; c < embedding.cols(); ++c) embedding(r, c) += 1e-4 * noise.Normal();
  }
  for (Eigen::Index c = 0; c < embedding.cols(); ++c) {
    const double lo = embedding.col(c).minCoeff();
    const double range = embedding.col(c).maxCoeff() - lo;
    if (range > 0.0) embedding.col(c) = 10.0 * (embedding.col(c).array() - lo) / range;
  }
  Rng layout = root.Split({1});
  LayoutSgd(edges, options, model.curve, layout, embedding);
  Require(embedding.allFinite(), "umap_core: layout produced non-finite coordinates");
  model.embedding = std::move(embedding);
}

}  // namespace

std::string ToString(ReducerVariant variant) {
  return variant == ReducerVariant::kUmapCore ? "umap_core" : "pca";
}

ReducerVariant ParseReducerVariant(const std::string& name) {
  if (name == "umap_core") return ReducerVariant::kUmapCore;
  if (name == "pca") return ReducerVariant::kPca;
  throw ValidationError("unknown reducer variant '" + name + "'");
}

CurveParams FitCurveParams(double min_dist, double spread) {
  Require(spread > 0.0 && min_dist >= 0.0, "curve fit: need spread > 0 and min_dist >= 0");
  constexpr int kPoints = 300;
  std::vector<double> xs(kPoints), ys(kPoints);
  for (int i = 0; i < kPoints; ++i) {
    xs[i] = 3.0 * spread * i / (kPoints - 1);
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto sse = [&](double a, double b) {
    double total = 0.0;
    for (int i = 0; i < kPoints; ++i) {
      const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b)) - ys[i];
      total += r * r;
    }
    return total;
  };

  // Levenberg-Marquardt from (1, 1).
  double a = 1.0, b = 1.0, mu = 1e-3;
  double current = sse(a, b);
  for (int iter = 0; iter < 1000; ++iter) {
    Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
    Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
    for (int i = 0; i < kPoints; ++i) {
      const double x = xs[i];
      const double p = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
      const double denom = 1.0 + a * p;
      const double r = 1.0 / denom - ys[i];
      Eigen::Vector2d g;
      g(0) = -p / (denom * denom);
      g(1) = x > 0.0 ? -a * p * 2.0 * std::log(x) / (denom * denom) : 0.0;
      jtj += g * g.transpose();
      jtr += g * r;
    }
    bool accepted = false;
    while (mu < 1e12) {
      Eigen::Matrix2d damped = jtj;
      damped.diagonal() *= 1.0 + mu;
      const Eigen::Vector2d step = damped.ldlt().solve(-jtr);
      const double na = a + step(0), nb = b + step(1);
      const double candidate = na > 0.0 && nb > 0.0 ? sse(na, nb) : current + 1.0;
      if (candidate < current) {
        const double gain = current - candidate;
        a = na;
        b = nb;
        current = candidate;
        mu = std::max(mu / 10.0, 1e-12);
        accepted = true;
        if (gain < 1e-15 * std::max(1.0, current)) return {a, b};
        break;
      }
      mu *= 10.0;
    }
    if (!accepted) break;
  }
  return {a, b};
}

KnnResult ExactKnn(const Matrix& reference, const Matrix& queries, int k, bool exclude_self) {
  Require(reference.cols() == queries.cols(), "knn: dimension mismatch");
  const Eigen::Index n_ref = reference.rows();
  const Eigen::Index available = exclude_self ? n_ref - 1 : n_ref;
  Require(k >= 1 && k <= available, "knn: k exceeds the number of reference rows");
  KnnResult out;
  out.indices.resize(static_cast<std::size_t>(queries.rows()));
  out.distances.resize(static_cast<std::size_t>(queries.rows()));
  std::vector<std::pair<double, int>> scratch;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    scratch.clear();
    for (Eigen::Index r = 0; r < n_ref; ++r) {
      if (exclude_self && r == q) continue;
      scratch.emplace_back((reference.row(r) - queries.row(q)).squaredNorm(), static_cast<int>(r));
    }
    std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
    auto& idx = out.indices[static_cast<std::size_t>(q)];
    auto& dist = out.distances[static_cast<std::size_t>(q)];
    for (int i = 0; i < k; ++i) {
      idx.push_back(scratch[i].second);
      dist.push_back(std::sqrt(scratch[i].first));
    }
  }
  return out;
}

ReducerModel FitReducer(const Matrix& data, ReducerVariant variant, const ReducerOptions& options,
                        std::uint64_t seed) {
  Require(data.allFinite(), "reducer: input contains non-finite values");
  Require(options.target_dim >= 1 && options.target_dim <= data.cols(),
          "reducer: target_dim must lie in [1, input dim]");
  ReducerModel model;
  model.variant = variant;
  model.input_dim = static_cast<int>(data.cols());
  model.output_dim = options.target_dim;
  if (variant == ReducerVariant::kPca) {
    Require(data.rows() >= 2, "pca: need at least 2 rows");
    FitPca(data, options.target_dim, model);
  } else {
    Require(options.n_neighbors >= 1, "umap_core: n_neighbors must be at least 1");
    Require(data.rows() > options.n_neighbors, "umap_core: need more rows than n_neighbors");
    FitUmap(data, options, seed, model);
  }
  return model;
}

Matrix Transform(const ReducerModel& model, const Matrix& rows) {
  Require(rows.cols() == model.input_dim, "reducer transform: dimension mismatch");
  if (model.variant == ReducerVariant::kPca) return Project(rows, model.mean, model.components);

  const KnnResult knn = ExactKnn(model.train_data, rows, model.n_neighbors, false);
  Matrix out = Matrix::Zero(rows.rows(), model.output_dim);
  for (Eigen::Index q = 0; q < rows.rows(); ++q) {
    const auto& idx = knn.indices[static_cast<std::size_t>(q)];
    const auto& dist = knn.distances[static_cast<std::size_t>(q)];
    std::vector<double> w(idx.size());
    double total = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      w[i] = Membership(dist[i], model.rho[idx[i]], model.sigma[idx[i]]);
      total += w[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      std::fill(w.begin(), w.end(), 1.0);
      total = static_cast<double>(w.size());
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.row(q) += (w[i] / total) * model.embedding.row(idx[i]);
    }
  }
  return out;
}

json ReducerToJson(const ReducerModel& model) {
  json out = {{"variant", ToString(model.variant)},
              {"input_dim", model.input_dim},
              {"output_dim", model.output_dim},
              {"embedding", json_util::MatrixToJson(model.embedding)}};
  if (model.variant == ReducerVariant::kPca) {
    out["mean"] = json_util::VectorToJson(model.mean);
    out["components"] = json_util::MatrixToJson(model.components);
    out["explained_variance"] = json_util::VectorToJson(model.explained_variance);
    out["explained_variance_ratio"] = json_util::VectorToJson(model.explained_variance_ratio);
  } else {
    out["train_data"] = json_util::MatrixToJson(model.train_data);
    out["n_neighbors"] = model.n_neighbors;
    out["rho"] = model.rho;
    out["sigma"] = model.sigma;
    out["a"] = model.curve.a;
    out["b"] = model.curve.b;
  }
  return out;
}

ReducerModel ReducerFromJson(const json& in) {
  ReducerModel model;
  model.variant = ParseReducerVariant(in.at("variant").get<std::string>());
  model.input_dim = in.at("input_dim").get<int>();
  model.output_dim = in.at("output_dim").get<int>();
  model.embedding = json_util::MatrixFromJson(in.at("embedding"), model.output_dim);
  if (model.variant == ReducerVariant::kPca) {
    model.mean = json_util::VectorFromJson(in.at("mean"));
    model.components = json_util::MatrixFromJson(in.at("components"), model.input_dim);
    model.explained_variance = json_util::VectorFromJson(in.at("explained_variance"));
    model.explained_variance_ratio = json_util::VectorFromJson(in.at("explained_variance_ratio"));
    Require(model.mean.size() == model.input_dim &&
                model.components.rows() == model.output_dim &&
                model.components.cols() == model.input_dim,
            "pca model: shape mismatch");
  } else {
    model.train_data = json_util::MatrixFromJson(in.at("train_data"), model.input_dim);
    model.n_neighbors = in.at("n_neighbors").get<int>();
    model.rho = in.at("rho").get<std::vector<double>>();
    model.sigma = in.at("sigma").get<std::vector<double>>();
    model.curve = {in.at("a").get<double>(), in.at("b").get<double>()};
    const std::size_t n = static_cast<std::size_t>(model.train_data.rows());
    Require(model.train_data.cols() == model.input_dim && model.rho.size() == n &&
                model.sigma.size() == n && model.embedding.rows() == model.train_data.rows() &&
                model.n_neighbors >= 1 && static_cast<std::size_t>(model.n_neighbors) <= n,
            "umap_core model: shape mismatch");
  }
  return model;
}

}  // namespace flare
