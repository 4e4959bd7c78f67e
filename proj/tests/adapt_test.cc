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

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "flare/adapt.h"
#include "flare/errors.h"
#include "flare/pretrain.h"
#include "oracles.h"

using namespace flare;

namespace {

ClusterAssignment MakeAssignment(const std::vector<int>& ids, int c) {
  ClusterAssignment a;
  a.num_clusters = c;
  a.ids = ids;
  a.posteriors = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), c);
  for (std::size_t i = 0; i < ids.size(); ++i) a.posteriors(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
  return a;
}

// Two groups whose labels follow opposite features, so a shared model is
// imperfect and per-cluster models can do better.
struct Fixture {
  Dataset data{3, {}};
  TrainingView view;
  std::vector<int> group;
  NetworkParams theta;

  explicit Fixture(std::uint64_t seed, int n = 160) {
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      const int g = i % 2;
      const double a = rng.Normal(), b = rng.Normal();
      const int label = (g == 0 ? a : b) > 0 ? 1 : 0;
      data.Add(Sample{"p" + std::to_string(i % 16), {a, b, g == 0 ? 2.0 : -2.0}, label, {}});
      group.push_back(g);
    }
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), 0);
    view = TrainingView(data, rows);
    const NetworkSpec spec =
        NetworkSpec::Autoencoder(3, {6, 4}, {4}, Activation::kTanh, Activation::kTanh);
    PretrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = seed;
    theta = RunPretraining(view, view, spec, cfg).checkpoint.params;
  }
};

AdaptConfig SmallConfig() {
  AdaptConfig cfg;
  cfg.epochs = 20;
  cfg.agg_interval = 5;
  cfg.patience = 20;
  cfg.batch_size = 16;
  cfg.learning_rate = 5e-3;
  cfg.seed = 4;
  return cfg;
}

bool SameParams(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cluster data split sizes and partition") {
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  const ClusterAssignment one = MakeAssignment(std::vector<int>(10, 0), 1);
  const ClusterData d = SplitClusterData(one, labels, 0.2, 5);
  CHECK(d.val[0].size() == 2);
  CHECK(d.train2[0].size() == 8);
  // Both labels present: one of each goes to validation.
  CHECK(labels[d.val[0][0]] != labels[d.val[0][1]]);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + static_cast<int>(rng.UniformIndex(4));
    const std::size_t n = 1 + rng.UniformIndex(60);
    std::vector<int> ids(n);
    for (int& id : ids) id = static_cast<int>(rng.UniformIndex(static_cast<std::size_t>(c)));
    const std::vector<int> y = oracle::RandomLabels(rng, n);
    const ClusterAssignment a = MakeAssignment(ids, c);
    const ClusterData s = SplitClusterData(a, y, 0.25, trial);
    const ClusterData again = SplitClusterData(a, y, 0.25, trial);
    std::multiset<std::size_t> seen;
    for (int k = 0; k < c; ++k) {
      CHECK(s.val[k] == again.val[k]);
      CHECK(s.train2[k] == again.train2[k]);
      const std::size_t members = static_cast<std::size_t>(std::count(ids.begin(), ids.end(), k));
      CHECK(s.val[k].size() + s.train2[k].size() == members);
      if (members >= 2) {
        CHECK(s.val[k].size() >= 1);
        CHECK(s.train2[k].size() >= 1);
      }
      for (std::size_t p : s.val[k]) CHECK(ids[p] == k);
      for (std::size_t p : s.train2[k]) CHECK(ids[p] == k);
      seen.insert(s.val[k].begin(), s.val[k].end());
      seen.insert(s.train2[k].begin(), s.train2[k].end());
    }
    CHECK(seen.size() == n);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == n);
  }
  CHECK_THROWS_AS(SplitClusterData(one, std::vector<int>(3, 0), 0.2, 0), ValidationError);
}

TEST_CASE("adaptation keeps frozen layers and never loses the base score") {
  Fixture f(21);
  const ClusterAssignment a = MakeAssignment(f.group, 2);
  const ClusterData d = SplitClusterData(a, f.view.labels(), 0.3, 1);
  AdaptConfig cfg = SmallConfig();
  cfg.freeze_depth = 1;
  const ClusterModelSet set = RunAdaptation(f.theta, f.view, d, cfg);
  CHECK(set.trainable == std::vector<char>{0, 1, 1, 1, 1, 1});
  for (const ClusterModel& m : set.clusters) {
    CHECK_FALSE(m.skipped);
    CHECK(m.params.layers[0].weight == f.theta.layers[0].weight);
    CHECK(m.best.layers[0].weight == f.theta.layers[0].weight);
    CHECK(m.best.layers[0].bias == f.theta.layers[0].bias);
    CHECK(m.best_val_f1 >= m.base_val_f1);
    CHECK(m.best_f1_history.size() == static_cast<std::size_t>(set.epochs_run));
    for (std::size_t e = 1; e < m.best_f1_history.size(); ++e) {
      CHECK(m.best_f1_history[e] >= m.best_f1_history[e - 1]);
    }
  }
  // The opposed groups leave room to improve.
  CHECK(set.clusters[0].best_val_f1 + set.clusters[1].best_val_f1 >
        set.clusters[0].base_val_f1 + set.clusters[1].base_val_f1);
  // Aggregation happens every agg_interval epochs, once per cluster.
  CHECK(set.adoptions.size() == 2 * static_cast<std::size_t>(set.epochs_run / cfg.agg_interval));
  for (const AdoptionEvent& e : set.adoptions) {
    CHECK(e.epoch % cfg.agg_interval == 0);
    if (e.adopted) {
      CHECK(e.f1_after > e.f1_before);
    } else {
      CHECK(e.f1_after == e.f1_before);
    }
  }
}

TEST_CASE("a single cluster never adopts its own average") {
  Fixture f(22);
  const ClusterAssignment a = MakeAssignment(std::vector<int>(f.view.size(), 0), 1);
  const ClusterData d = SplitClusterData(a, f.view.labels(), 0.2, 1);
  AdaptConfig cfg = SmallConfig();
  cfg.agg_interval = 1;
  const ClusterModelSet set = RunAdaptation(f.theta, f.view, d, cfg);
  REQUIRE_FALSE(set.adoptions.empty());
  for (const AdoptionEvent& e : set.adoptions) CHECK_FALSE(e.adopted);
}

TEST_CASE("results do not depend on the thread count") {
  Fixture f(23);
  const ClusterAssignment a = MakeAssignment(f.group, 2);
  const ClusterData d = SplitClusterData(a, f.view.labels(), 0.3, 1);
  AdaptConfig cfg = SmallConfig();
  const ClusterModelSet one = RunAdaptation(f.theta, f.view, d, cfg);
  cfg.threads = 2;
  const ClusterModelSet two = RunAdaptation(f.theta, f.view, d, cfg);
  REQUIRE(one.epochs_run == two.epochs_run);
  CHECK(one.mean_val_f1 == two.mean_val_f1);
  for (int c = 0; c < 2; ++c) {
    CHECK(SameParams(one.clusters[c].best, two.clusters[c].best));
    CHECK(SameParams(one.clusters[c].params, two.clusters[c].params));
  }
}

TEST_CASE("empty clusters are skipped and keep theta*") {
  Fixture f(24, 40);
  // Cluster 1 holds a single row: no validation split is possible.
  std::vector<int> ids(f.view.size(), 0);
  ids[0] = 1;
  const ClusterData d = SplitClusterData(MakeAssignment(ids, 3), f.view.labels(), 0.2, 1);
  const ClusterModelSet set = RunAdaptation(f.theta, f.view, d, SmallConfig());
  CHECK_FALSE(set.clusters[0].skipped);
  CHECK(set.clusters[1].skipped);
  CHECK(set.clusters[2].skipped);
  CHECK(SameParams(set.clusters[1].best, f.theta));
  CHECK(SameParams(set.clusters[2].best, f.theta));
}

TEST_CASE("routing with one cluster reproduces theta*") {
  Fixture f(25);
  StratifierConfig scfg;
  scfg.variant = ReducerVariant::kPca;
  scfg.c_init = 1;
  const StratifierFit fit = FitStratifier(f.theta, f.view, scfg);
  REQUIRE(fit.model.num_clusters() == 1);
  ClusterModelSet models;
  models.clusters.resize(1);
  models.clusters[0].best = f.theta;
  const RoutedPredictions r = RouteAndPredict(f.theta, fit.model, models, f.view.features());
  CHECK(r.predictions == Forward(f.theta, f.view.features(), ForwardMode::kEval).Predictions());
  CHECK(r.cluster_ids == std::vector<int>(f.view.size(), 0));
  models.clusters.resize(2);
  CHECK_THROWS_AS(RouteAndPredict(f.theta, fit.model, models, f.view.features()), ValidationError);
}

TEST_CASE("adoption log and config") {
  Fixture f(26, 60);
  const ClusterData d =
      SplitClusterData(MakeAssignment(f.group, 2), f.view.labels(), 0.3, 1);
  const ClusterModelSet set = RunAdaptation(f.theta, f.view, d, SmallConfig());
  const auto path = std::filesystem::temp_directory_path() / "flare_adoptions.csv";
  SaveAdoptionLogCsv(path, set);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,cluster,adopted,f1_before,f1_after");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == set.adoptions.size());
  std::filesystem::remove(path);

  AdaptConfig cfg;
  cfg.agg_interval = 100;
  CHECK_THROWS_AS(cfg.Validate(), ValidationError);
  cfg = AdaptConfig{};
  cfg.freeze_depth = 3;
  CHECK_THROWS_AS(cfg.EffectiveFreezeDepth(f.theta.spec), ValidationError);
  CHECK(AdaptConfig{}.EffectiveFreezeDepth(f.theta.spec) == 1);
  cfg = AdaptConfig{};
  cfg.lambda_dnh = 2.5;
  CHECK(AdaptConfigFromJson(AdaptConfigToJson(cfg)).lambda_dnh == 2.5);
  CHECK(cfg.Weights().beta == 1.0);
}
