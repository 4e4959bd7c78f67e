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

#include "flare/netkernel.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "flare/errors.h"
#include "flare/metrics.h"

namespace flare {
namespace {

void ValidateChain(const std::vector<LayerSpec>& layers, const char* name) {
  Require(!layers.empty(), std::string(name) + " must have at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    std::ostringstream where;
    where << name << " layer " << i;
    Require(layer.in_dim > 0 && layer.out_dim > 0,
            where.str() + ": dims must be positive");
    Require(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0,
            where.str() + ": dropout_rate must lie in [0, 1)");
    if (i > 0) {
      Require(layers[i - 1].out_dim == layer.in_dim,
              where.str() + ": in_dim does not match previous out_dim");
    }
  }
  Require(layers.back().dropout_rate == 0.0,
          std::string(name) + " output layer must not use dropout");
}

void ApplyActivation(Activation activation, Matrix& values) {
  switch (activation) {
    case Activation::kTanh:
      values = values.array().tanh().matrix();
      break;
    case Activation::kRelu:
      values = values.cwiseMax(0.0);
      break;
    case Activation::kIdentity:
      break;
  }
}

// d activation / d pre, expressed through the cached pre/activated values.
Matrix ActivationDerivative(Activation activation, const LayerCache& cache) {
  switch (activation) {
    case Activation::kTanh:
      return (1.0 - cache.activated.array().square()).matrix();
    case Activation::kRelu:
      return (cache.pre.array() > 0.0).cast<double>().matrix();
    case Activation::kIdentity:
      break;
  }
  return Matrix::Ones(cache.pre.rows(), cache.pre.cols());
}

Matrix RunChain(const NetworkParams& params, std::size_t begin, std::size_t end,
                Matrix input, ForwardMode mode, Rng* rng,
                std::vector<LayerCache>& caches) {
  for (std::size_t i = begin; i < end; ++i) {
    const LayerSpec& spec = params.spec.layer(i);
    const Layer& layer = params.layers[i];
    LayerCache& cache = caches[i];
    cache.input = std::move(input);
    cache.pre = cache.input * layer.weight.transpose();
    cache.pre.rowwise() += layer.bias.transpose();
    cache.activated = cache.pre;
    ApplyActivation(spec.activation, cache.activated);
    Matrix output = cache.activated;
    if (mode == ForwardMode::kTrain && spec.dropout_rate > 0.0) {
      Require(rng != nullptr, "train-mode forward with dropout needs an rng");
      const double keep = 1.0 - spec.dropout_rate;
      cache.mask.resize(output.rows(), output.cols());
      for (Eigen::Index r = 0; r < output.rows(); ++r) {
        for (Eigen::Index c = 0; c < output.cols(); ++c) {
          cache.mask(r, c) = rng->Bernoulli(keep) ? 1.0 / keep : 0.0;
        }
      }
      output = output.cwiseProduct(cache.mask);
    } else {
      cache.mask.resize(0, 0);
    }
    input = std::move(output);
  }
  return input;
}

// Walks layers [begin, end) backwards. `d_output` is the gradient with
// respect to the output of layer end-1; returns the gradient with respect to
// the input of layer `begin`. `extra_at_last_input` is added to the gradient
// of the input of layer end-1 (used for the penultimate activations).
Matrix BackwardChain(const NetworkParams& params, const ForwardTrace& trace,
                     std::size_t begin, std::size_t end, Matrix d_output,
                     const Matrix* extra_at_last_input, GradientSet& grads) {
  for (std::size_t i = end; i-- > begin;) {
    const LayerSpec& spec = params.spec.layer(i);
    const LayerCache& cache = trace.caches[i];
    if (cache.mask.size() > 0) d_output = d_output.cwiseProduct(cache.mask);
    Matrix d_pre = d_output.cwiseProduct(ActivationDerivative(spec.activation, cache));
    grads.layers[i].weight.noalias() += d_pre.transpose() * cache.input;
    grads.layers[i].bias.noalias() += d_pre.colwise().sum().transpose();
    d_output = d_pre * params.layers[i].weight;
    if (i + 1 == end && extra_at_last_input != nullptr) {
      d_output += *extra_at_last_input;
    }
  }
  return d_output;
}

}  // namespace

std::string ToString(Activation activation) {
  switch (activation) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kIdentity:
      return "identity";
  }
  return "identity";
}

Activation ParseActivation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ValidationError("unknown activation '" + name + "'");
}

std::string ToString(FisherVariant variant) {
  return variant == FisherVariant::kLastLayer ? "last_layer" : "logit_only";
}

FisherVariant ParseFisherVariant(const std::string& name) {
  if (name == "last_layer") return FisherVariant::kLastLayer;
  if (name == "logit_only") return FisherVariant::kLogitOnly;
  throw ValidationError("unknown fisher variant '" + name + "'");
}

void NetworkSpec::Validate() const {
  ValidateChain(encoder, "encoder");
  ValidateChain(decoder, "decoder");
  ValidateChain(classifier, "classifier");
  Require(decoder.front().in_dim == latent_dim(),
          "decoder input dim must equal the latent dim");
  Require(decoder.back().out_dim == input_dim(),
          "decoder output dim must equal the encoder input dim");
  Require(classifier.front().in_dim == latent_dim(),
          "classifier input dim must equal the latent dim");
  Require(num_classes() >= 2, "classifier must output at least two classes");
}

const LayerSpec& NetworkSpec::layer(std::size_t index) const {
  if (index < encoder.size()) return encoder[index];
  index -= encoder.size();
  if (index < decoder.size()) return decoder[index];
  index -= decoder.size();
  return classifier.at(index);
}

NetworkSpec NetworkSpec::Autoencoder(int input_dim,
                                     const std::vector<int>& encoder_widths,
                                     const std::vector<int>& classifier_widths,
                                     Activation encoder_activation,
                                     Activation classifier_activation,
                                     double encoder_dropout,
                                     double classifier_dropout,
                                     int num_classes) {
  Require(!encoder_widths.empty(), "encoder needs at least one width");
  NetworkSpec spec;
  int prev = input_dim;
  for (std::size_t i = 0; i < encoder_widths.size(); ++i) {
    const bool last = i + 1 == encoder_widths.size();
    spec.encoder.push_back({prev, encoder_widths[i], encoder_activation,
                            last ? 0.0 : encoder_dropout});
    prev = encoder_widths[i];
  }
  for (std::size_t i = encoder_widths.size(); i-- > 0;) {
    const int out = i == 0 ? input_dim : encoder_widths[i - 1];
    const bool last = i == 0;
    spec.decoder.push_back({prev, out, last ? Activation::kIdentity : encoder_activation,
                            last ? 0.0 : encoder_dropout});
    prev = out;
  }
  prev = encoder_widths.back();
  for (int width : classifier_widths) {
    spec.classifier.push_back({prev, width, classifier_activation, classifier_dropout});
    prev = width;
  }
  spec.classifier.push_back({prev, num_classes, Activation::kIdentity, 0.0});
  spec.Validate();
  return spec;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t count = 0;
  for (const Layer& layer : layers) count += layer.weight.size() + layer.bias.size();
  return count;
}

bool NetworkParams::AllFinite() const {
  return std::all_of(layers.begin(), layers.end(), [](const Layer& layer) {
    return layer.weight.allFinite() && layer.bias.allFinite();
  });
}

bool NetworkParams::SameShape(const NetworkParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

GradientSet GradientSet::ZerosLike(const NetworkParams& params) {
  GradientSet grads;
  grads.layers.reserve(params.layers.size());
  for (const Layer& layer : params.layers) {
    grads.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                            Vector::Zero(layer.bias.size())});
  }
  return grads;
}

double GradientSet::SquaredNorm() const {
  double total = 0.0;
  for (const Layer& layer : layers) {
    total += layer.weight.squaredNorm() + layer.bias.squaredNorm();
  }
  return total;
}

std::vector<int> ForwardTrace::Predictions() const {
  std::vector<int> predictions(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    predictions[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return predictions;
}

NetworkParams InitNetwork(const NetworkSpec& spec, std::uint64_t seed) {
  spec.Validate();
  NetworkParams params;
  params.spec = spec;
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    const LayerSpec& layer_spec = spec.layer(i);
    const double bound = std::sqrt(6.0 / (layer_spec.in_dim + layer_spec.out_dim));
    Layer layer{Matrix(layer_spec.out_dim, layer_spec.in_dim),
                Vector::Zero(layer_spec.out_dim)};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = (2.0 * rng.Uniform() - 1.0) * bound;
      }
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

ForwardTrace Forward(const NetworkParams& params, const Matrix& batch,
                     ForwardMode mode, Rng* rng) {
  const NetworkSpec& spec = params.spec;
  Require(batch.cols() == spec.input_dim(),
          "batch has " + std::to_string(batch.cols()) + " columns, network expects " +
              std::to_string(spec.input_dim()));
  if (!batch.allFinite()) throw NumericError("forward: non-finite input");

  ForwardTrace trace;
  trace.caches.resize(spec.num_layers());
  trace.z = RunChain(params, 0, spec.decoder_offset(), batch, mode, rng, trace.caches);
  trace.x_recon = RunChain(params, spec.decoder_offset(), spec.classifier_offset(),
                           trace.z, mode, rng, trace.caches);
  trace.logits = RunChain(params, spec.classifier_offset(), spec.num_layers(), trace.z,
                          mode, rng, trace.caches);
  trace.h_penult = trace.caches.back().input;

  trace.probs.resize(trace.logits.rows(), trace.logits.cols());
  for (Eigen::Index r = 0; r < trace.logits.rows(); ++r) {
    const double shift = trace.logits.row(r).maxCoeff();
    RowVector e = (trace.logits.row(r).array() - shift).exp().matrix();
    trace.probs.row(r) = e / e.sum();
  }
  return trace;
}

std::vector<double> CrossEntropy(const Matrix& probs, std::span<const int> labels) {
  Require(static_cast<std::size_t>(probs.rows()) == labels.size(),
          "CrossEntropy: label count does not match rows");
  std::vector<double> losses(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probs(static_cast<Eigen::Index>(i), labels[i]);
    losses[i] = -std::log(std::max(p, kProbabilityFloor));
  }
  return losses;
}

std::vector<double> ReconstructionError(const Matrix& x, const Matrix& x_recon) {
  Require(x.rows() == x_recon.rows() && x.cols() == x_recon.cols(),
          "ReconstructionError: shape mismatch");
  std::vector<double> errors(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    errors[static_cast<std::size_t>(r)] = (x.row(r) - x_recon.row(r)).squaredNorm() /
                                          static_cast<double>(x.cols());
  }
  return errors;
}

double FisherProxy(const RowVector& probs, const RowVector& h_penult, int label,
                   FisherVariant variant) {
  RowVector residual = probs;
  residual(label) -= 1.0;
  const double logit_part = residual.squaredNorm();
  if (variant == FisherVariant::kLogitOnly) return logit_part;
  return logit_part * (h_penult.squaredNorm() + 1.0);
}

GradientSet Backward(const NetworkParams& params, const ForwardTrace& trace,
                     const OutputGradients& output_grads) {
  const NetworkSpec& spec = params.spec;
  GradientSet grads = GradientSet::ZerosLike(params);
  const Matrix* penult = output_grads.d_penult.size() > 0 ? &output_grads.d_penult : nullptr;
  Matrix d_z = BackwardChain(params, trace, spec.classifier_offset(), spec.num_layers(),
                             output_grads.d_logits, penult, grads);
  if (output_grads.d_recon.size() > 0) {
    d_z += BackwardChain(params, trace, spec.decoder_offset(), spec.classifier_offset(),
                         output_grads.d_recon, nullptr, grads);
  }
  BackwardChain(params, trace, 0, spec.decoder_offset(), std::move(d_z), nullptr, grads);
  return grads;
}

AdamState AdamState::ZerosLike(const NetworkParams& params) {
  AdamState state;
  GradientSet zeros = GradientSet::ZerosLike(params);
  state.first_moment = zeros.layers;
  state.second_moment = std::move(zeros.layers);
  return state;
}

void AdamStep(NetworkParams& params, const GradientSet& grads, AdamState& state,
              double learning_rate, std::span<const char> trainable) {
  Require(grads.layers.size() == params.layers.size() &&
              state.first_moment.size() == params.layers.size(),
          "AdamStep: shape mismatch");
  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * grad;
    v = state.beta2 * v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
    param.array() -= learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + state.epsilon);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (!trainable.empty() && !trainable[i]) continue;
    update(params.layers[i].weight, grads.layers[i].weight,
           state.first_moment[i].weight, state.second_moment[i].weight);
    update(params.layers[i].bias, grads.layers[i].bias, state.first_moment[i].bias,
           state.second_moment[i].bias);
  }
}

NetworkParams AverageParams(std::span<const NetworkParams> models) {
  Require(!models.empty(), "AverageParams: empty model list");
  for (const NetworkParams& model : models) {
    Require(model.SameShape(models.front()), "AverageParams: shape mismatch");
  }
  NetworkParams mean = models.front();
  if (models.size() == 1) return mean;

  // Each entry is reduced over its sorted values so the result does not
  // depend on model order, and identical entries come back unchanged.
  std::vector<double> values(models.size());
  const double count = static_cast<double>(models.size());
  auto reduce = [&](auto&& entry_of) {
    for (std::size_t m = 0; m < models.size(); ++m) values[m] = entry_of(models[m]);
    std::sort(values.begin(), values.end());
    if (values.front() == values.back()) return values.front();
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / count;
  };
  for (std::size_t i = 0; i < mean.layers.size(); ++i) {
    Layer& layer = mean.layers[i];
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) =
            reduce([&](const NetworkParams& p) { return p.layers[i].weight(r, c); });
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      layer.bias(r) = reduce([&](const NetworkParams& p) { return p.layers[i].bias(r); });
    }
  }
  return mean;
}

double MacroF1Forward(const NetworkParams& params, const Matrix& batch,
                      std::span<const int> labels) {
  const ForwardTrace trace = Forward(params, batch, ForwardMode::kEval);
  const std::vector<int> predictions = trace.Predictions();
  return MacroF1(labels, predictions);
}

}  // namespace flare
