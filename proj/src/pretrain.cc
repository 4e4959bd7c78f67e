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

#include "flare/pretrain.h"

#include <fstream>
#include <numeric>

#include "csv_util.h"
#include "flare/errors.h"

namespace flare {

using nlohmann::json;

std::string ToString(PretrainMode mode) {
  switch (mode) {
    case PretrainMode::kBenign:
      return "benign";
    case PretrainMode::kBptWoFisher:
      return "bpt_wo_fisher";
    case PretrainMode::kBptWFisher:
      return "bpt_w_fisher";
  }
  return "bpt_w_fisher";
}

PretrainMode ParsePretrainMode(const std::string& name) {
  if (name == "benign") return PretrainMode::kBenign;
  if (name == "bpt_wo_fisher") return PretrainMode::kBptWoFisher;
  if (name == "bpt_w_fisher") return PretrainMode::kBptWFisher;
  throw ValidationError("unknown pretraining mode '" + name + "'");
}

void PretrainConfig::Validate() const {
  loss_weights.Validate();
  Require(epochs >= 1, "pretrain: epochs must be at least 1");
  Require(batch_size >= 1, "pretrain: batch_size must be at least 1");
  Require(learning_rate > 0.0, "pretrain: learning rate must be positive");
  Require(patience >= 1, "pretrain: patience must be at least 1");
  Require(val_fraction > 0.0 && val_fraction < 1.0, "pretrain: val_fraction must lie in (0, 1)");
}

LossWeights PretrainConfig::EffectiveWeights() const {
  LossWeights w = loss_weights;
  switch (mode) {
    case PretrainMode::kBenign:
      w.alpha = 1.0;
      w.beta = 1.0;
      break;
    case PretrainMode::kBptWoFisher:
      w.beta = 1.0;
      break;
    case PretrainMode::kBptWFisher:
      break;
  }
  return w;
}

json PretrainConfigToJson(const PretrainConfig& cfg) {
  return {{"alpha", cfg.loss_weights.alpha},
          {"beta", cfg.loss_weights.beta},
          {"fisher_variant", ToString(cfg.loss_weights.fisher_variant)},
          {"mode", ToString(cfg.mode)},
          {"lr", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"selection_split", cfg.selection_split == SelectionSplit::kVal ? "val" : "test"},
          {"val_fraction", cfg.val_fraction},
          {"patience", cfg.patience},
          {"min_improvement", cfg.min_improvement}};
}

PretrainConfig PretrainConfigFromJson(const json& in) {
  PretrainConfig cfg;
  try {
    cfg.loss_weights.alpha = in.value("alpha", cfg.loss_weights.alpha);
    cfg.loss_weights.beta = in.value("beta", cfg.loss_weights.beta);
    cfg.loss_weights.fisher_variant =
        ParseFisherVariant(in.value("fisher_variant", std::string("last_layer")));
    cfg.mode = ParsePretrainMode(in.value("mode", ToString(cfg.mode)));
    cfg.learning_rate = in.value("lr", cfg.learning_rate);
    cfg.epochs = in.value("epochs", cfg.epochs);
    cfg.batch_size = in.value("batch_size", cfg.batch_size);
    cfg.seed = in.value("seed", cfg.seed);
    const std::string split = in.value("selection_split", std::string("val"));
    Require(split == "val" || split == "test", "selection_split must be val or test");
    cfg.selection_split = split == "val" ? SelectionSplit::kVal : SelectionSplit::kTest;
    cfg.val_fraction = in.value("val_fraction", cfg.val_fraction);
    cfg.patience = in.value("patience", cfg.patience);
    cfg.min_improvement = in.value("min_improvement", cfg.min_improvement);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pretrain config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

PretrainResult RunPretraining(const TrainingView& train, const TrainingView& selection,
                              const NetworkSpec& spec, const PretrainConfig& cfg) {
  cfg.Validate();
  spec.Validate();
  Require(!train.empty(), "pretrain: empty training set");
  Require(!selection.empty(), "pretrain: empty selection set");
  Require(train.feature_dim() == spec.input_dim(),
          "pretrain: feature dim does not match the network input");

  const LossSpec loss = PretrainLossSpec{cfg.EffectiveWeights()};
  const Rng root(cfg.seed);
  NetworkParams params = InitNetwork(spec, MixSeed(cfg.seed));
  AdamState adam = AdamState::ZerosLike(params);

  PretrainResult result;
  result.checkpoint.params = params;
  result.checkpoint.metadata.seed = cfg.seed;
  double best_f1 = -1.0;
  double plateau_reference = -1.0;
  int stale_epochs = 0;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.Split({1, static_cast<std::uint64_t>(epoch)});
    Rng dropout = root.Split({2, static_cast<std::uint64_t>(epoch)});
    shuffle.Shuffle(order);

    double recon_sum = 0.0, ce_sum = 0.0, fisher_sum = 0.0;
    std::size_t fisher_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> positions(order.data() + start, end - start);
      const Matrix x = train.GatherFeatures(positions);
      const std::vector<int> y = train.GatherLabels(positions);
      GradientResult step;
      try {
        step = ComputeGradients(params, x, y, loss, ForwardMode::kTrain, &dropout);
      } catch (const NumericError& e) {
        throw NumericError("pretrain epoch " + std::to_string(epoch) + ": " + e.what());
      }
      AdamStep(params, step.grads, adam, cfg.learning_rate);
      const LossComponents& c = step.components;
      for (std::size_t i = 0; i < c.total.size(); ++i) {
        recon_sum += c.recon[i];
        ce_sum += c.ce[i];
        if (c.correct[i]) {
          fisher_sum += c.fisher[i];
          ++fisher_count;
        }
      }
    }
    if (!params.AllFinite()) {
      throw NumericError("pretrain epoch " + std::to_string(epoch) + ": parameters diverged");
    }

    EpochRecord record;
    record.epoch = epoch;
    record.recon = recon_sum / static_cast<double>(train.size());
    record.ce = ce_sum / static_cast<double>(train.size());
    record.fisher = fisher_count == 0 ? 0.0 : fisher_sum / static_cast<double>(fisher_count);
    record.selection_f1 = MacroF1Forward(params, selection.features(), selection.labels());
    result.history.epochs.push_back(record);

    if (record.selection_f1 > best_f1) {
      best_f1 = record.selection_f1;
      result.checkpoint.params = params;
      result.checkpoint.metadata.epoch = epoch;
      result.checkpoint.metadata.selection_f1 = best_f1;
      result.history.best_epoch = epoch;
    }
    if (record.selection_f1 > plateau_reference + cfg.min_improvement) {
      plateau_reference = record.selection_f1;
      stale_epochs = 0;
    } else if (++stale_epochs >= cfg.patience) {
      break;
    }
  }
  return result;
}

void SaveHistoryCsv(const std::filesystem::path& path, const TrainingHistory& history) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "epoch,recon,ce,fisher,f1\n";
  for (const EpochRecord& r : history.epochs) {
    out << r.epoch << ',' << csv::FormatDouble(r.recon) << ',' << csv::FormatDouble(r.ce) << ','
        << csv::FormatDouble(r.fisher) << ',' << csv::FormatDouble(r.selection_f1) << '\n';
  }
}

}  // namespace flare
