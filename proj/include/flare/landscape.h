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

#ifndef FLARE_LANDSCAPE_H_
#define FLARE_LANDSCAPE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "flare/losses.h"

namespace flare {

struct LandscapeOptions {
  int grid_n = 41;  // odd, so the center is the unperturbed model
  double radius = 1.0;
  std::uint64_t seed = 0;
};

struct LandscapeDirections {
  std::vector<Layer> d1;
  std::vector<Layer> d2;
};

// Two Gaussian directions shaped like `params` with zero bias blocks. Each
// weight block of d1 is rescaled to the Frobenius norm of the layer's
// weights; each block of d2 is first made orthogonal to the matching d1
// block, then rescaled the same way. Zero-norm layers get zero blocks.
LandscapeDirections MakeDirections(const NetworkParams& params, std::uint64_t seed);

double Dot(const std::vector<Layer>& x, const std::vector<Layer>& y);

// params + a * d1 + b * d2
NetworkParams Perturb(const NetworkParams& params, const LandscapeDirections& dirs, double a,
                      double b);

struct LossGrid {
  std::vector<double> coords;  // grid_n values spanning [-radius, radius]
  Matrix loss;                 // loss(i, j) at (a = coords[i], b = coords[j])
  double center = 0.0;
};

// Eval-mode batch loss over the grid. Throws ValidationError for an even or
// non-positive grid_n.
LossGrid LossSurfaceGrid(const NetworkParams& params, const Matrix& batch,
                         std::span<const int> labels, const LossSpec& spec,
                         const LandscapeOptions& options);

// a,b,loss
void SaveLandscapeCsv(const std::filesystem::path& path, const LossGrid& grid);

}  // namespace flare

#endif  // FLARE_LANDSCAPE_H_
