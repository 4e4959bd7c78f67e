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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "flare/errors.h"
#include "flare/pretrain.h"
#include "oracles.h"

using namespace flare;

namespace {

// Two-feature set labeled by x0 + x1 > 0, with a margin band removed.
TrainingView SeparableSet(std::uint64_t seed, int n, Dataset& storage) {
  Rng rng(seed);
  storage = Dataset(2, {});
  while (static_cast<int>(storage.size()) < n) {
    const double a = 2.0 * rng.Normal(), b = 2.0 * rng.Normal();
    if (std::abs(a + b) < 0.5) continue;
    storage.Add(Sample{"p" + std::to_string(storage.size() % 10), {a, b}, a + b > 0 ? 1 : 0, {}});
  }
  std::vector<std::size_t> rows(storage.size());
  std::iota(rows.begin(), rows.end(), 0);
  return TrainingView(storage, rows);
}

// Logistic regression by plain gradient descent; returns training accuracy.
double LogisticAccuracy(const TrainingView& v) {
  double w0 = 0, w1 = 0, b = 0;
  const Matrix& x = v.features();
  for (int it = 0; it < 5000; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-(w0 * x(i, 0) + w1 * x(i, 1) + b)));
      const double e = p - v.labels()[static_cast<std::size_t>(i)];
      g0 += e * x(i, 0);
      g1 += e * x(i, 1);
      gb += e;
    }
    w0 -= 0.1 * g0 / x.rows();
    w1 -= 0.1 * g1 / x.rows();
    b -= 0.1 * gb / x.rows();
  }
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    hits += ((w0 * x(i, 0) + w1 * x(i, 1) + b) > 0) == (v.labels()[static_cast<std::size_t>(i)] == 1);
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

const NetworkSpec kSpec =
    NetworkSpec::Autoencoder(2, {4, 2}, {}, Activation::kTanh, Activation::kTanh);

}  // namespace

TEST_CASE("benign pretraining separates a linearly separable set") {
  Dataset train_data, select_data;
  const TrainingView train = SeparableSet(1, 200, train_data);
  const TrainingView select = SeparableSet(2, 100, select_data);
  REQUIRE(LogisticAccuracy(select) == 1.0);
  PretrainConfig cfg;
  cfg.mode = PretrainMode::kBenign;
  cfg.epochs = 200;
  cfg.patience = 200;
  cfg.seed = 3;
  const PretrainResult r = RunPretraining(train, select, kSpec, cfg);
  CHECK(r.history.epochs.back().selection_f1 == 1.0);
  CHECK(r.checkpoint.metadata.selection_f1 == 1.0);
}

TEST_CASE("one epoch keeps the epoch-one parameters") {
  Dataset d;
  const TrainingView train = SeparableSet(4, 50, d);
  PretrainConfig cfg;
  cfg.epochs = 1;
  const PretrainResult r = RunPretraining(train, train, kSpec, cfg);
  REQUIRE(r.history.epochs.size() == 1);
  CHECK(r.history.best_epoch == 1);
  CHECK(r.checkpoint.metadata.epoch == 1);
  CHECK(MacroF1Forward(r.checkpoint.params, train.features(), train.labels()) ==
        r.history.epochs[0].selection_f1);
}

TEST_CASE("pretraining is deterministic and never regresses the checkpoint") {
  Dataset d, s;
  const TrainingView train = SeparableSet(5, 120, d);
  const TrainingView select = SeparableSet(6, 60, s);
  PretrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 8;
  const PretrainResult a = RunPretraining(train, select, kSpec, cfg);
  const PretrainResult b = RunPretraining(train, select, kSpec, cfg);
  for (std::size_t l = 0; l < a.checkpoint.params.layers.size(); ++l) {
    CHECK(a.checkpoint.params.layers[l].weight == b.checkpoint.params.layers[l].weight);
    CHECK(a.checkpoint.params.layers[l].bias == b.checkpoint.params.layers[l].bias);
  }
  double best = -1.0;
  int first_best = 0;
  for (const EpochRecord& e : a.history.epochs) {
    if (e.selection_f1 > best) {
      best = e.selection_f1;
      first_best = e.epoch;
    }
  }
  CHECK(a.checkpoint.metadata.selection_f1 == best);
  CHECK(a.history.best_epoch == first_best);
}

TEST_CASE("early stopping") {
  Dataset d;
  const TrainingView train = SeparableSet(9, 100, d);
  PretrainConfig cfg;
  cfg.epochs = 500;
  cfg.patience = 5;
  cfg.mode = PretrainMode::kBenign;
  const PretrainResult r = RunPretraining(train, train, kSpec, cfg);
  CHECK(r.history.epochs.size() < 500);
}

TEST_CASE("mode weight overrides") {
  PretrainConfig cfg;
  cfg.loss_weights = {0.3, 0.4};
  cfg.mode = PretrainMode::kBenign;
  CHECK(cfg.EffectiveWeights().alpha == 1.0);
  CHECK(cfg.EffectiveWeights().beta == 1.0);
  cfg.mode = PretrainMode::kBptWoFisher;
  CHECK(cfg.EffectiveWeights().alpha == 0.3);
  CHECK(cfg.EffectiveWeights().beta == 1.0);
  cfg.mode = PretrainMode::kBptWFisher;
  CHECK(cfg.EffectiveWeights().alpha == 0.3);
  CHECK(cfg.EffectiveWeights().beta == 0.4);
  CHECK(ParsePretrainMode(ToString(PretrainMode::kBptWoFisher)) == PretrainMode::kBptWoFisher);
  CHECK_THROWS_AS(ParsePretrainMode("fisher"), ValidationError);
}

TEST_CASE("benign and fisher modes share the initial cross-entropy") {
  Dataset d;
  const TrainingView train = SeparableSet(10, 40, d);
  PretrainConfig cfg;
  cfg.seed = 12;
  const NetworkParams init = InitNetwork(kSpec, MixSeed(cfg.seed));
  const LossWeights benign{1.0, 1.0};
  const LossWeights fisher{0.5, 0.5};
  const ForwardTrace t = Forward(init, train.features(), ForwardMode::kEval);
  const LossEvaluation a = PretrainLoss(t, train.features(), train.labels(), benign);
  const LossEvaluation b = PretrainLoss(t, train.features(), train.labels(), fisher);
  CHECK(a.components.ce == b.components.ce);
}

TEST_CASE("config validation and json") {
  PretrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
  cfg = PretrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);

  cfg = PretrainConfig{};
  cfg.learning_rate = 0.01;
  cfg.selection_split = SelectionSplit::kTest;
  const PretrainConfig back = PretrainConfigFromJson(PretrainConfigToJson(cfg));
  CHECK(back.learning_rate == 0.01);
  CHECK(back.selection_split == SelectionSplit::kTest);
  CHECK_THROWS_AS(PretrainConfigFromJson(nlohmann::json{{"epochs", "many"}}), ValidationError);

  Dataset d;
  const TrainingView train = SeparableSet(1, 10, d);
  CHECK_THROWS_AS(RunPretraining(TrainingView(), train, kSpec, PretrainConfig{}), ValidationError);
}
