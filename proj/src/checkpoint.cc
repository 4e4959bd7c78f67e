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

#include "flare/checkpoint.h"

#include <fstream>

#include "flare/errors.h"

namespace flare {
namespace {

using nlohmann::json;

json LayersToJson(const std::vector<LayerSpec>& layers) {
  json out = json::array();
  for (const LayerSpec& layer : layers) {
    out.push_back({{"in_dim", layer.in_dim},
                   {"out_dim", layer.out_dim},
                   {"activation", ToString(layer.activation)},
                   {"dropout_rate", layer.dropout_rate}});
  }
  return out;
}

std::vector<LayerSpec> LayersFromJson(const json& in) {
  Require(in.is_array(), "layer list must be an array");
  std::vector<LayerSpec> layers;
  for (const json& item : in) {
    LayerSpec layer;
    layer.in_dim = item.at("in_dim").get<int>();
    layer.out_dim = item.at("out_dim").get<int>();
    layer.activation = ParseActivation(item.at("activation").get<std::string>());
    layer.dropout_rate = item.value("dropout_rate", 0.0);
    layers.push_back(layer);
  }
  return layers;
}

}  // namespace

json SpecToJson(const NetworkSpec& spec) {
  return {{"encoder", LayersToJson(spec.encoder)},
          {"decoder", LayersToJson(spec.decoder)},
          {"classifier", LayersToJson(spec.classifier)}};
}

NetworkSpec SpecFromJson(const json& in) {
  NetworkSpec spec;
  try {
    spec.encoder = LayersFromJson(in.at("encoder"));
    spec.decoder = LayersFromJson(in.at("decoder"));
    spec.classifier = LayersFromJson(in.at("classifier"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("network spec: ") + e.what());
  }
  spec.Validate();
  return spec;
}

json ParamsToJson(const NetworkParams& params) {
  json layers = json::array();
  for (const Layer& layer : params.layers) {
    json weight = json::array();
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) row.push_back(layer.weight(r, c));
      weight.push_back(std::move(row));
    }
    json bias = json::array();
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) bias.push_back(layer.bias(r));
    layers.push_back({{"weight", std::move(weight)}, {"bias", std::move(bias)}});
  }
  return {{"spec", SpecToJson(params.spec)}, {"layers", std::move(layers)}};
}

NetworkParams ParamsFromJson(const json& in) {
  NetworkParams params;
  params.spec = SpecFromJson(in.at("spec"));
  const json& layers = in.at("layers");
  Require(layers.is_array() && layers.size() == params.spec.num_layers(),
          "checkpoint layer count does not match its spec");
  try {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& spec = params.spec.layer(i);
      const json& weight = layers[i].at("weight");
      const json& bias = layers[i].at("bias");
      Require(weight.size() == static_cast<std::size_t>(spec.out_dim) &&
                  bias.size() == static_cast<std::size_t>(spec.out_dim),
              "checkpoint layer " + std::to_string(i) + " has the wrong shape");
      Layer layer{Matrix(spec.out_dim, spec.in_dim), Vector(spec.out_dim)};
      for (int r = 0; r < spec.out_dim; ++r) {
        Require(weight[r].size() == static_cast<std::size_t>(spec.in_dim),
                "checkpoint layer " + std::to_string(i) + " has a ragged weight row");
        for (int c = 0; c < spec.in_dim; ++c) layer.weight(r, c) = weight[r][c].get<double>();
        layer.bias(r) = bias[r].get<double>();
      }
      params.layers.push_back(std::move(layer));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint parameters: ") + e.what());
  }
  Require(params.AllFinite(), "checkpoint contains non-finite parameters");
  return params;
}

json CheckpointToJson(const Checkpoint& checkpoint) {
  json out = ParamsToJson(checkpoint.params);
  out["metadata"] = {{"seed", checkpoint.metadata.seed},
                     {"epoch", checkpoint.metadata.epoch},
                     {"selection_f1", checkpoint.metadata.selection_f1}};
  return out;
}

Checkpoint CheckpointFromJson(const json& in) {
  Checkpoint checkpoint;
  checkpoint.params = ParamsFromJson(in);
  if (in.contains("metadata")) {
    const json& meta = in.at("metadata");
    checkpoint.metadata.seed = meta.value("seed", std::uint64_t{0});
    checkpoint.metadata.epoch = meta.value("epoch", 0);
    checkpoint.metadata.selection_f1 = meta.value("selection_f1", 0.0);
  }
  return checkpoint;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  WriteJsonFile(path, CheckpointToJson(checkpoint));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  return CheckpointFromJson(ReadJsonFile(path));
}

json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void WriteJsonFile(const std::filesystem::path& path, const json& value) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << value.dump(2) << '\n';
}

}  // namespace flare
