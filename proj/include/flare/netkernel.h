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

#ifndef FLARE_NETKERNEL_H_
#define FLARE_NETKERNEL_H_

// Dense encoder-decoder-classifier networks with hand-written reverse mode.
//
// The three subnetworks are fixed: the encoder maps x to the latent code z,
// the decoder maps z back to a reconstruction of x, and the classifier maps z
// to class logits. All arithmetic is in double precision.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flare/rng.h"

namespace flare {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { kTanh, kRelu, kIdentity };
enum class FisherVariant { kLastLayer, kLogitOnly };
enum class ForwardMode { kTrain, kEval };

std::string ToString(Activation activation);
Activation ParseActivation(const std::string& name);
std::string ToString(FisherVariant variant);
FisherVariant ParseFisherVariant(const std::string& name);

struct LayerSpec {
  int in_dim = 0;
  int out_dim = 0;
  Activation activation = Activation::kIdentity;
  // Inverted dropout applied to this layer's output in train mode.
  double dropout_rate = 0.0;

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;
  std::vector<LayerSpec> classifier;

  // Throws ValidationError when dims do not chain, the decoder does not
  // return to the input dim, a dropout rate is outside [0, 1), or the output
  // layer of any subnetwork carries dropout.
  void Validate() const;

  int input_dim() const { return encoder.front().in_dim; }
  int latent_dim() const { return encoder.back().out_dim; }
  int num_classes() const { return classifier.back().out_dim; }

  // Layers are stored flat: encoder, then decoder, then classifier.
  std::size_t num_layers() const {
    return encoder.size() + decoder.size() + classifier.size();
  }
  std::size_t decoder_offset() const { return encoder.size(); }
  std::size_t classifier_offset() const {
    return encoder.size() + decoder.size();
  }
  const LayerSpec& layer(std::size_t index) const;

  // Encoder with the given widths, mirrored decoder and a classifier head.
  // `classifier_widths` lists the hidden widths after the latent layer; the
  // final 2-way output layer is appended.
  static NetworkSpec Autoencoder(int input_dim,
                                 const std::vector<int>& encoder_widths,
                                 const std::vector<int>& classifier_widths,
                                 Activation encoder_activation,
                                 Activation classifier_activation,
                                 double encoder_dropout = 0.0,
                                 double classifier_dropout = 0.0,
                                 int num_classes = 2);

  bool operator==(const NetworkSpec&) const = default;
};

struct Layer {
  Matrix weight;  // out_dim x in_dim
  Vector bias;    // out_dim
};

struct NetworkParams {
  NetworkSpec spec;
  std::vector<Layer> layers;

  std::size_t parameter_count() const;
  bool AllFinite() const;
  bool SameShape(const NetworkParams& other) const;
};

// Gradients share the layer layout of the parameters they belong to.
struct GradientSet {
  std::vector<Layer> layers;

  static GradientSet ZerosLike(const NetworkParams& params);
  double SquaredNorm() const;
};

struct LayerCache {
  Matrix input;      // post-dropout activations of the previous layer
  Matrix pre;        // input * W^T + b
  Matrix activated;  // activation(pre), before dropout
  Matrix mask;       // dropout scale factors; empty when no dropout applied
};

struct ForwardTrace {
  Matrix z;
  Matrix x_recon;
  Matrix logits;
  Matrix probs;
  Matrix h_penult;  // input of the last classifier layer
  std::vector<LayerCache> caches;

  // Row-wise argmax of probs, ties to the lowest class.
  std::vector<int> Predictions() const;
};

NetworkParams InitNetwork(const NetworkSpec& spec, std::uint64_t seed);

// `rng` may be null in eval mode. Throws NumericError on non-finite input.
ForwardTrace Forward(const NetworkParams& params, const Matrix& batch,
                     ForwardMode mode, Rng* rng = nullptr);

inline constexpr double kProbabilityFloor = 1e-12;

// -log max(p[label], 1e-12) per row.
std::vector<double> CrossEntropy(const Matrix& probs, std::span<const int> labels);
// Mean squared difference per row.
std::vector<double> ReconstructionError(const Matrix& x, const Matrix& x_recon);

// Closed-form per-sample Fisher proxy. kLastLayer is the squared norm of the
// gradient of log p(y|x) with respect to the last layer's weights and bias,
// ||p - e_y||^2 (||h||^2 + 1); kLogitOnly drops the (||h||^2 + 1) factor.
double FisherProxy(const RowVector& probs, const RowVector& h_penult, int label,
                   FisherVariant variant);

// Gradients of the scalar loss with respect to the three network outputs
// that losses read: the reconstruction, the logits and the penultimate
// classifier activations.
struct OutputGradients {
  Matrix d_recon;
  Matrix d_logits;
  Matrix d_penult;
};

GradientSet Backward(const NetworkParams& params, const ForwardTrace& trace,
                     const OutputGradients& output_grads);

struct AdamState {
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState ZerosLike(const NetworkParams& params);
};

// In-place Adam update with bias correction. Layers whose `trainable` entry
// is false are left untouched (parameters and moments); an empty span means
// every layer trains.
void AdamStep(NetworkParams& params, const GradientSet& grads, AdamState& state,
              double learning_rate, std::span<const char> trainable = {});

// Elementwise mean. Throws on an empty list or mismatched shapes.
NetworkParams AverageParams(std::span<const NetworkParams> models);

// Eval-mode forward followed by MacroF1 against `labels`.
double MacroF1Forward(const NetworkParams& params, const Matrix& batch,
                      std::span<const int> labels);

}  // namespace flare

#endif  // FLARE_NETKERNEL_H_
