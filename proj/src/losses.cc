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

#include "flare/losses.h"

#include <cmath>

#include "flare/errors.h"

namespace flare {
namespace {

// Shared CE / Fisher bookkeeping for one row. Fills the row of `d_logits`
// and `d_penult` with ce_scale * dCE/dlogits + fisher_scale * dF/d(.).
struct RowHead {
  double ce = 0.0;
  double fisher = 0.0;
  bool correct = false;
};

RowHead EvaluateRow(const ForwardTrace& trace, Eigen::Index row, int label,
                    FisherVariant variant) {
  RowHead head;
  const RowVector p = trace.probs.row(row);
  head.ce = -std::log(std::max(p(label), kProbabilityFloor));
  head.fisher = FisherProxy(p, trace.h_penult.row(row), label, variant);
  Eigen::Index predicted = 0;
  for (Eigen::Index c = 1; c < p.size(); ++c) {
    if (p(c) > p(predicted)) predicted = c;
  }
  head.correct = predicted == label;
  return head;
}

void AccumulateCeGradient(const ForwardTrace& trace, Eigen::Index row, int label,
                          double scale, Matrix& d_logits) {
  if (scale == 0.0) return;
  // The floor clamps the loss to a constant below 1e-12.
  if (trace.probs(row, label) < kProbabilityFloor) return;
  RowVector g = trace.probs.row(row);
  g(label) -= 1.0;
  d_logits.row(row) += scale * g;
}

void AccumulateFisherGradient(const ForwardTrace& trace, Eigen::Index row, int label,
                              FisherVariant variant, double scale, Matrix& d_logits,
                              Matrix& d_penult) {
  if (scale == 0.0) return;
  const RowVector p = trace.probs.row(row);
  const RowVector h = trace.h_penult.row(row);
  RowVector residual = p;
  residual(label) -= 1.0;
  const double h_factor =
      variant == FisherVariant::kLastLayer ? h.squaredNorm() + 1.0 : 1.0;
  // dF/dp, then through the softmax Jacobian.
  const RowVector d_p = 2.0 * h_factor * residual;
  const double inner = p.dot(d_p);
  d_logits.row(row) += scale * (p.array() * (d_p.array() - inner)).matrix();
  if (variant == FisherVariant::kLastLayer) {
    d_penult.row(row) += scale * 2.0 * residual.squaredNorm() * h;
  }
}

void Finalize(LossComponents& components) {
  double sum = 0.0;
  for (double value : components.total) sum += value;
  components.mean = components.total.empty() ? 0.0 : sum / components.total.size();
  if (!std::isfinite(components.mean)) {
    throw NumericError("loss is not finite");
  }
}

void ResizeComponents(LossComponents& components, std::size_t n) {
  components.recon.assign(n, 0.0);
  components.ce.assign(n, 0.0);
  components.fisher.assign(n, 0.0);
  components.correct.assign(n, 0);
  components.hinge.assign(n, 0.0);
  components.total.assign(n, 0.0);
}

}  // namespace

void LossWeights::Validate() const {
  Require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  Require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  Require(lambda_dnh >= 0.0, "lambda must be non-negative");
}

double LossComponents::MeanFisherOnCorrect() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < fisher.size(); ++i) {
    if (correct[i]) {
      sum += fisher[i];
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

LossEvaluation PretrainLoss(const ForwardTrace& trace, const Matrix& batch,
                            std::span<const int> labels, const LossWeights& weights) {
  weights.Validate();
  const auto n = static_cast<std::size_t>(batch.rows());
  Require(labels.size() == n, "PretrainLoss: label count does not match batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double alpha = weights.alpha;
  const double beta = weights.beta;

  LossEvaluation eval;
  LossComponents& comp = eval.components;
  ResizeComponents(comp, n);
  OutputGradients& out = eval.output_grads;
  out.d_logits = Matrix::Zero(trace.logits.rows(), trace.logits.cols());
  out.d_penult = Matrix::Zero(trace.h_penult.rows(), trace.h_penult.cols());
  out.d_recon = Matrix::Zero(batch.rows(), batch.cols());

  const double recon_scale = 2.0 * (1.0 - alpha) * inv_n / static_cast<double>(batch.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const RowHead head = EvaluateRow(trace, row, labels[i], weights.fisher_variant);
    comp.recon[i] = (batch.row(row) - trace.x_recon.row(row)).squaredNorm() /
                    static_cast<double>(batch.cols());
    comp.ce[i] = head.ce;
    comp.fisher[i] = head.fisher;
    comp.correct[i] = head.correct;
    const double gate = head.correct ? 1.0 : 0.0;
    comp.total[i] = (1.0 - alpha) * comp.recon[i] +
                    alpha * (beta * head.ce + (1.0 - beta) * head.fisher * gate);

    out.d_recon.row(row) = recon_scale * (trace.x_recon.row(row) - batch.row(row));
    AccumulateCeGradient(trace, row, labels[i], alpha * beta * inv_n, out.d_logits);
    AccumulateFisherGradient(trace, row, labels[i], weights.fisher_variant,
                             alpha * (1.0 - beta) * gate * inv_n, out.d_logits,
                             out.d_penult);
  }
  Finalize(comp);
  return eval;
}

LossEvaluation AdaptLoss(const ForwardTrace& trace, std::span<const double> baseline_ce,
                         std::span<const int> labels, const LossWeights& weights) {
  weights.Validate();
  const auto n = static_cast<std::size_t>(trace.probs.rows());
  Require(labels.size() == n && baseline_ce.size() == n,
          "AdaptLoss: labels and baseline must match the batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double alpha = weights.alpha;
  const double lambda = weights.lambda_dnh;

  LossEvaluation eval;
  LossComponents& comp = eval.components;
  ResizeComponents(comp, n);
  OutputGradients& out = eval.output_grads;
  out.d_logits = Matrix::Zero(trace.logits.rows(), trace.logits.cols());
  out.d_penult = Matrix::Zero(trace.h_penult.rows(), trace.h_penult.cols());

  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const RowHead head = EvaluateRow(trace, row, labels[i], weights.fisher_variant);
    const double gap = head.ce - baseline_ce[i];
    const bool harm = gap > 0.0;
    comp.ce[i] = head.ce;
    comp.fisher[i] = head.fisher;
    comp.correct[i] = head.correct;
    comp.hinge[i] = harm ? gap : 0.0;
    const double gate = head.correct ? 1.0 : 0.0;
    comp.total[i] =
        alpha * head.ce + (1.0 - alpha) * head.fisher * gate + lambda * comp.hinge[i];

    AccumulateCeGradient(trace, row, labels[i], (alpha + (harm ? lambda : 0.0)) * inv_n,
                         out.d_logits);
    AccumulateFisherGradient(trace, row, labels[i], weights.fisher_variant,
                             (1.0 - alpha) * gate * inv_n, out.d_logits, out.d_penult);
  }
  Finalize(comp);
  return eval;
}

LossEvaluation AdaptLoss(const ForwardTrace& trace, const ForwardTrace& baseline_trace,
                         std::span<const int> labels, const LossWeights& weights) {
  const std::vector<double> baseline = CrossEntropy(baseline_trace.probs, labels);
  return AdaptLoss(trace, baseline, labels, weights);
}

LossEvaluation EvaluateLoss(const ForwardTrace& trace, const Matrix& batch,
                            std::span<const int> labels, const LossSpec& spec) {
  if (const auto* pre = std::get_if<PretrainLossSpec>(&spec)) {
    return PretrainLoss(trace, batch, labels, pre->weights);
  }
  const auto& adapt = std::get<AdaptLossSpec>(spec);
  return AdaptLoss(trace, adapt.baseline_ce, labels, adapt.weights);
}

GradientResult ComputeGradients(const NetworkParams& params, const Matrix& batch,
                                std::span<const int> labels, const LossSpec& spec,
                                ForwardMode mode, Rng* rng) {
  const ForwardTrace trace = Forward(params, batch, mode, rng);
  LossEvaluation eval = EvaluateLoss(trace, batch, labels, spec);
  GradientResult result{Backward(params, trace, eval.output_grads),
                        std::move(eval.components)};
  return result;
}

double BatchLoss(const NetworkParams& params, const Matrix& batch,
                 std::span<const int> labels, const LossSpec& spec, ForwardMode mode,
                 Rng* rng) {
  const ForwardTrace trace = Forward(params, batch, mode, rng);
  return EvaluateLoss(trace, batch, labels, spec).components.mean;
}

}  // namespace flare
