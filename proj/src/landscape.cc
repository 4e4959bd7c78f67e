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

#include "flare/landscape.h"

#include <cmath>
#include <fstream>

#include "csv_util.h"
#include "flare/errors.h"
#include "flare/rng.h"

namespace flare {
namespace {

// Gaussian weight blocks, zero biases.
std::vector<Layer> RandomDirection(const NetworkParams& params, Rng& rng) {
  std::vector<Layer> dir;
  for (const Layer& layer : params.layers) {
    Layer d{Matrix(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size())};
    for (Eigen::Index r = 0; r < d.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = rng.Normal();
    }
    dir.push_back(std::move(d));
  }
  return dir;
}

void MatchNorm(Matrix& block, double target) {
  const double current = block.norm();
  if (current > 0.0) block *= target / current;
}

void Axpy(double alpha, const std::vector<Layer>& x, std::vector<Layer>& y) {
  for (std::size_t l = 0; l < x.size(); ++l) {
    y[l].weight += alpha * x[l].weight;
    y[l].bias += alpha * x[l].bias;
  }
}

}  // namespace

double Dot(const std::vector<Layer>& x, const std::vector<Layer>& y) {
  Require(x.size() == y.size(), "dot: layer count mismatch");
  double total = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    total += x[l].weight.cwiseProduct(y[l].weight).sum() + x[l].bias.dot(y[l].bias);
  }
  return total;
}

LandscapeDirections MakeDirections(const NetworkParams& params, std::uint64_t seed) {
  const Rng root(seed);
  Rng r1 = root.Split({1});
  Rng r2 = root.Split({2});
  LandscapeDirections dirs;
  dirs.d1 = RandomDirection(params, r1);
  dirs.d2 = RandomDirection(params, r2);
  // Orthogonal per layer, hence orthogonal overall.
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const double target = params.layers[l].weight.norm();
    Matrix& w1 = dirs.d1[l].weight;
    Matrix& w2 = dirs.d2[l].weight;
    MatchNorm(w1, target);
    const double d1_sq = w1.squaredNorm();
    if (d1_sq > 0.0) w2 -= (w1.cwiseProduct(w2).sum() / d1_sq) * w1;
    MatchNorm(w2, target);
  }
  return dirs;
}

NetworkParams Perturb(const NetworkParams& params, const LandscapeDirections& dirs, double a,
                      double b) {
  NetworkParams out = params;
  if (a != 0.0) Axpy(a, dirs.d1, out.layers);
  if (b != 0.0) Axpy(b, dirs.d2, out.layers);
  return out;
}

LossGrid LossSurfaceGrid(const NetworkParams& params, const Matrix& batch,
                         std::span<const int> labels, const LossSpec& spec,
                         const LandscapeOptions& options) {
  Require(options.grid_n >= 1 && options.grid_n % 2 == 1, "landscape: grid_n must be odd");
  Require(options.radius > 0.0, "landscape: radius must be positive");
  const LandscapeDirections dirs = MakeDirections(params, options.seed);
  const int n = options.grid_n;
  const int half = n / 2;
  LossGrid grid;
  grid.coords.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    grid.coords[static_cast<std::size_t>(i)] =
        half == 0 ? 0.0 : options.radius * static_cast<double>(i - half) / half;
  }
  grid.loss.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const NetworkParams probe = Perturb(params, dirs, grid.coords[static_cast<std::size_t>(i)],
                                          grid.coords[static_cast<std::size_t>(j)]);
      grid.loss(i, j) = BatchLoss(probe, batch, labels, spec);
    }
  }
  grid.center = grid.loss(half, half);
  return grid;
}

void SaveLandscapeCsv(const std::filesystem::path& path, const LossGrid& grid) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "a,b,loss\n";
  for (std::size_t i = 0; i < grid.coords.size(); ++i) {
    for (std::size_t j = 0; j < grid.coords.size(); ++j) {
      out << csv::FormatDouble(grid.coords[i]) << ',' << csv::FormatDouble(grid.coords[j]) << ','
          << csv::FormatDouble(grid.loss(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))
          << '\n';
    }
  }
}

}  // namespace flare
