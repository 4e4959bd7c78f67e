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

#ifndef FLARE_LOSSES_H_
#define FLARE_LOSSES_H_

// Composite training objectives and their gradients.
//
//   pretraining:  (1-a) ||x - x_recon||^2 + a (b CE + (1-b) F 1{correct})
//   adaptation:   a CE + (1-a) F 1{correct} + lambda max(CE - CE_base, 0)
//
// where F is the Fisher proxy, the correctness indicator uses the argmax
// prediction and is held constant when differentiating, and CE_base is the
// per-sample cross-entropy of the frozen pretrained model.

#include <span>
#include <variant>
#include <vector>

#include "flare/netkernel.h"

namespace flare {

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.5;
  double lambda_dnh = 1.0;
  FisherVariant fisher_variant = FisherVariant::kLastLayer;

  void Validate() const;
};

struct PretrainLossSpec {
  LossWeights weights;
};

struct AdaptLossSpec {
  LossWeights weights;  // beta is unused
  // CE of the frozen baseline on the same batch, one entry per row.
  std::vector<double> baseline_ce;
};

using LossSpec = std::variant<PretrainLossSpec, AdaptLossSpec>;

// Per-sample pieces of a composite loss. Terms a loss does not use stay zero.
struct LossComponents {
  std::vector<double> recon;
  std::vector<double> ce;
  std::vector<double> fisher;  // ungated proxy value
  std::vector<char> correct;
  std::vector<double> hinge;
  std::vector<double> total;
  double mean = 0.0;

  double MeanFisherOnCorrect() const;
};

struct LossEvaluation {
  LossComponents components;
  OutputGradients output_grads;  // gradients of the batch mean
};

LossEvaluation PretrainLoss(const ForwardTrace& trace, const Matrix& batch,
                            std::span<const int> labels, const LossWeights& weights);

LossEvaluation AdaptLoss(const ForwardTrace& trace, std::span<const double> baseline_ce,
                         std::span<const int> labels, const LossWeights& weights);

// Same as above, with the baseline taken from a trace of the frozen model.
LossEvaluation AdaptLoss(const ForwardTrace& trace, const ForwardTrace& baseline_trace,
                         std::span<const int> labels, const LossWeights& weights);

LossEvaluation EvaluateLoss(const ForwardTrace& trace, const Matrix& batch,
                            std::span<const int> labels, const LossSpec& spec);

struct GradientResult {
  GradientSet grads;
  LossComponents components;
};

// Forward, loss and exact reverse-mode gradients of the batch-mean loss.
// Throws NumericError when the loss is not finite.
GradientResult ComputeGradients(const NetworkParams& params, const Matrix& batch,
                                std::span<const int> labels, const LossSpec& spec,
                                ForwardMode mode = ForwardMode::kEval, Rng* rng = nullptr);

// Scalar batch-mean loss only.
double BatchLoss(const NetworkParams& params, const Matrix& batch,
                 std::span<const int> labels, const LossSpec& spec,
                 ForwardMode mode = ForwardMode::kEval, Rng* rng = nullptr);

}  // namespace flare

#endif  // FLARE_LOSSES_H_
