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

#include "flare/adapt.h"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "csv_util.h"
#include "flare/errors.h"

namespace flare {

using nlohmann::json;

void AdaptConfig::Validate() const {
  Require(freeze_depth >= -1, "adapt: freeze_depth must be >= 0 (or -1 for the default)");
  Require(alpha >= 0.0 && alpha <= 1.0, "adapt: alpha must lie in [0, 1]");
  Require(lambda_dnh >= 0.0, "adapt: lambda_dnh must be non-negative");
  Require(learning_rate > 0.0, "adapt: learning rate must be positive");
  Require(epochs >= 1, "adapt: epochs must be at least 1");
  Require(batch_size >= 1, "adapt: batch_size must be at least 1");
  Require(agg_interval >= 1 && agg_interval <= epochs,
          "adapt: agg_interval must lie in [1, epochs]");
  Require(patience >= 1, "adapt: patience must be at least 1");
  Require(val_fraction > 0.0 && val_fraction < 1.0, "adapt: val_fraction must lie in (0, 1)");
  Require(threads >= 1, "adapt: threads must be at least 1");
}

int AdaptConfig::EffectiveFreezeDepth(const NetworkSpec& spec) const {
  const int encoder_layers = static_cast<int>(spec.encoder.size());
  const int depth = freeze_depth < 0 ? encoder_layers / 2 : freeze_depth;
  Require(depth <= encoder_layers, "adapt: freeze_depth exceeds the encoder depth");
  return depth;
}

LossWeights AdaptConfig::Weights() const {
  LossWeights w;
  w.alpha = alpha;
  w.beta = 1.0;
  w.lambda_dnh = lambda_dnh;
  w.fisher_variant = fisher_variant;
  return w;
}

json AdaptConfigToJson(const AdaptConfig& cfg) {
  return {{"freeze_depth", cfg.freeze_depth},
          {"alpha", cfg.alpha},
          {"lambda_dnh", cfg.lambda_dnh},
          {"fisher_variant", ToString(cfg.fisher_variant)},
          {"lr", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"agg_interval", cfg.agg_interval},
          {"patience", cfg.patience},
          {"min_improvement", cfg.min_improvement},
          {"val_fraction", cfg.val_fraction},
          {"seed", cfg.seed},
          {"threads", cfg.threads}};
}

AdaptConfig AdaptConfigFromJson(const json& in) {
  AdaptConfig cfg;
  try {
    cfg.freeze_depth = in.value("freeze_depth", cfg.freeze_depth);
    cfg.alpha = in.value("alpha", cfg.alpha);
    cfg.lambda_dnh = in.value("lambda_dnh", cfg.lambda_dnh);
    cfg.fisher_variant = ParseFisherVariant(in.value("fisher_variant", ToString(cfg.fisher_variant)));
    cfg.learning_rate = in.value("lr", cfg.learning_rate);
    cfg.epochs = in.value("epochs", cfg.epochs);
    cfg.batch_size = in.value("batch_size", cfg.batch_size);
    cfg.agg_interval = in.value("agg_interval", cfg.agg_interval);
    cfg.patience = in.value("patience", cfg.patience);
    cfg.min_improvement = in.value("min_improvement", cfg.min_improvement);
    cfg.val_fraction = in.value("val_fraction", cfg.val_fraction);
    cfg.seed = in.value("seed", cfg.seed);
    cfg.threads = in.value("threads", cfg.threads);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("adapt config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

std::vector<std::vector<std::size_t>> GroupByCluster(const ClusterAssignment& assignment) {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(assignment.num_clusters));
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int id = assignment.ids[i];
    Require(id >= 0 && id < assignment.num_clusters, "cluster id out of range");
    groups[static_cast<std::size_t>(id)].push_back(i);
  }
  return groups;
}

ClusterData SplitClusterData(const ClusterAssignment& assignment, std::span<const int> labels,
                             double val_fraction, std::uint64_t seed) {
  Require(labels.size() == assignment.size(), "split: label count does not match assignment");
  Require(val_fraction > 0.0 && val_fraction < 1.0, "split: val_fraction must lie in (0, 1)");
  ClusterData out;
  out.num_clusters = assignment.num_clusters;
  out.train2.resize(static_cast<std::size_t>(out.num_clusters));
  out.val.resize(static_cast<std::size_t>(out.num_clusters));
  out.test.resize(static_cast<std::size_t>(out.num_clusters));
  const Rng root(seed);
  const auto groups = GroupByCluster(assignment);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const std::vector<std::size_t>& members = groups[c];
    const std::size_t n = members.size();
    if (n == 0) continue;
    std::size_t n_val = 0;
    if (n >= 2) {
      n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(val_fraction * n)));
      n_val = std::min(n_val, n - 1);
    }
    std::vector<std::vector<std::size_t>> by_label(2);
    for (std::size_t pos : members) by_label[labels[pos] == 1 ? 1 : 0].push_back(pos);

    // Largest-remainder allocation of n_val over the labels.
    std::array<std::size_t, 2> quota{0, 0};
    std::array<double, 2> remainder{0.0, 0.0};
    std::size_t assigned = 0;
    for (int l = 0; l < 2; ++l) {
      const double exact = static_cast<double>(n_val) * by_label[l].size() / static_cast<double>(n);
      quota[l] = static_cast<std::size_t>(std::floor(exact));
      remainder[l] = exact - static_cast<double>(quota[l]);
      assigned += quota[l];
    }
    while (assigned < n_val) {
      const int l = remainder[1] > remainder[0] ? 1 : 0;
      const int pick = quota[l] < by_label[l].size() ? l : 1 - l;
      ++quota[pick];
      remainder[pick] = -1.0;
      ++assigned;
    }

    Rng rng = root.Split({static_cast<std::uint64_t>(c)});
    for (int l = 0; l < 2; ++l) {
      std::vector<std::size_t>& pool = by_label[l];
      rng.Shuffle(pool);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        (i < quota[l] ? out.val[c] : out.train2[c]).push_back(pool[i]);
      }
    }
    std::sort(out.val[c].begin(), out.val[c].end());
    std::sort(out.train2[c].begin(), out.train2[c].end());
  }
  return out;
}

namespace {

struct ClusterWork {
  TrainingView train2;
  TrainingView val;
  std::vector<double> baseline_ce;  // per train2 row, under theta*
  AdamState adam;
};

void TrainOneEpoch(ClusterModel& model, ClusterWork& work, const std::vector<char>& trainable,
                   const AdaptConfig& cfg, int cluster, int epoch) {
  const Rng root(cfg.seed);
  Rng shuffle = root.Split({static_cast<std::uint64_t>(cluster), static_cast<std::uint64_t>(epoch), 0});
  Rng dropout = root.Split({static_cast<std::uint64_t>(cluster), static_cast<std::uint64_t>(epoch), 1});
  std::vector<std::size_t> order(work.train2.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle.Shuffle(order);
  const LossWeights weights = cfg.Weights();
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    const std::span<const std::size_t> positions(order.data() + start, end - start);
    AdaptLossSpec spec{weights, {}};
    for (std::size_t p : positions) spec.baseline_ce.push_back(work.baseline_ce[p]);
    const Matrix x = work.train2.GatherFeatures(positions);
    const std::vector<int> y = work.train2.GatherLabels(positions);
    GradientResult step;
    try {
      step = ComputeGradients(model.params, x, y, spec, ForwardMode::kTrain, &dropout);
    } catch (const NumericError& e) {
      throw NumericError("adapt cluster " + std::to_string(cluster) + " epoch " +
                         std::to_string(epoch) + ": " + e.what());
    }
    AdamStep(model.params, step.grads, work.adam, cfg.learning_rate, trainable);
  }
  if (!model.params.AllFinite()) {
    throw NumericError("adapt cluster " + std::to_string(cluster) + ": parameters diverged");
  }
}

template <typename Fn>
void ForEachCluster(int count, int threads, Fn&& fn) {
  if (threads <= 1 || count <= 1) {
    for (int c = 0; c < count; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(threads, count); ++t) {
    pool.emplace_back([&] {
      for (int c = next++; c < count; c = next++) {
        try {
          fn(c);
        } catch (...) {
          errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ClusterModelSet RunAdaptation(const NetworkParams& theta_star, const TrainingView& holdout,
                              const ClusterData& clusters, const AdaptConfig& cfg) {
  cfg.Validate();
  Require(clusters.num_clusters >= 1, "adapt: need at least one cluster");
  Require(holdout.feature_dim() == theta_star.spec.input_dim() || holdout.empty(),
          "adapt: feature dim does not match the checkpoint");
  const int freeze = cfg.EffectiveFreezeDepth(theta_star.spec);
  const int count = clusters.num_clusters;

  ClusterModelSet set;
  set.trainable.assign(theta_star.layers.size(), 1);
  for (int l = 0; l < freeze; ++l) set.trainable[static_cast<std::size_t>(l)] = 0;

  std::vector<ClusterWork> work(static_cast<std::size_t>(count));
  set.clusters.resize(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    ClusterModel& model = set.clusters[static_cast<std::size_t>(c)];
    ClusterWork& w = work[static_cast<std::size_t>(c)];
    w.train2 = holdout.Subset(clusters.train2[static_cast<std::size_t>(c)]);
    w.val = holdout.Subset(clusters.val[static_cast<std::size_t>(c)]);
    model.params = theta_star;
    model.best = theta_star;
    model.skipped = w.train2.empty() || w.val.empty();
    if (!w.val.empty()) {
      model.base_val_f1 = MacroF1Forward(theta_star, w.val.features(), w.val.labels());
    }
    model.best_val_f1 = model.base_val_f1;
    if (!model.skipped) {
      const ForwardTrace base = Forward(theta_star, w.train2.features(), ForwardMode::kEval);
      w.baseline_ce = CrossEntropy(base.probs, w.train2.labels());
      w.adam = AdamState::ZerosLike(theta_star);
    }
  }

  auto mean_val = [&](const std::vector<double>& f1) {
    double total = 0.0;
    int n = 0;
    for (int c = 0; c < count; ++c) {
      if (set.clusters[static_cast<std::size_t>(c)].skipped) continue;
      total += f1[static_cast<std::size_t>(c)];
      ++n;
    }
    return n == 0 ? 0.0 : total / n;
  };

  std::vector<double> current_f1(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) current_f1[c] = set.clusters[c].base_val_f1;
  double plateau_reference = mean_val(current_f1);
  int stale = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    ForEachCluster(count, cfg.threads, [&](int c) {
      ClusterModel& model = set.clusters[static_cast<std::size_t>(c)];
      if (model.skipped) return;
      ClusterWork& w = work[static_cast<std::size_t>(c)];
      TrainOneEpoch(model, w, set.trainable, cfg, c, epoch);
      const double f1 = MacroF1Forward(model.params, w.val.features(), w.val.labels());
      current_f1[static_cast<std::size_t>(c)] = f1;
      if (f1 > model.best_val_f1) {
        model.best_val_f1 = f1;
        model.best = model.params;
        model.best_epoch = epoch;
      }
    });

    if (epoch % cfg.agg_interval == 0) {
      std::vector<NetworkParams> live;
      for (const ClusterModel& m : set.clusters) live.push_back(m.params);
      NetworkParams mean = AverageParams(live);
      for (std::size_t l = 0; l < mean.layers.size(); ++l) {
        if (!set.trainable[l]) mean.layers[l] = theta_star.layers[l];
      }
      for (int c = 0; c < count; ++c) {
        ClusterModel& model = set.clusters[static_cast<std::size_t>(c)];
        if (model.skipped) continue;
        const ClusterWork& w = work[static_cast<std::size_t>(c)];
        const double before = current_f1[static_cast<std::size_t>(c)];
        const double offered = MacroF1Forward(mean, w.val.features(), w.val.labels());
        AdoptionEvent event{epoch, c, offered > before, before, before};
        if (event.adopted) {
          model.params = mean;
          event.f1_after = offered;
          current_f1[static_cast<std::size_t>(c)] = offered;
          if (offered > model.best_val_f1) {
            model.best_val_f1 = offered;
            model.best = mean;
            model.best_epoch = epoch;
          }
        }
        set.adoptions.push_back(event);
      }
    }

    for (ClusterModel& model : set.clusters) model.best_f1_history.push_back(model.best_val_f1);
    const double mean_f1 = mean_val(current_f1);
    set.mean_val_f1.push_back(mean_f1);
    set.epochs_run = epoch;
    if (mean_f1 > plateau_reference + cfg.min_improvement) {
      plateau_reference = mean_f1;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return set;
}

RoutedPredictions RouteAndPredict(const NetworkParams& theta_star, const StratifierModel& stratifier,
                                  const ClusterModelSet& models, const Matrix& features) {
  Require(models.num_clusters() == stratifier.num_clusters(),
          "route: cluster model count does not match the stratifier");
  RoutedPredictions out;
  const ClusterAssignment routed = Route(stratifier, theta_star, features);
  out.cluster_ids = routed.ids;
  out.predictions.assign(routed.size(), 0);
  const auto groups = GroupByCluster(routed);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].empty()) continue;
    Matrix x(static_cast<Eigen::Index>(groups[c].size()), features.cols());
    for (std::size_t i = 0; i < groups[c].size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(groups[c][i]));
    }
    const std::vector<int> pred = Forward(models.clusters[c].best, x, ForwardMode::kEval).Predictions();
    for (std::size_t i = 0; i < groups[c].size(); ++i) out.predictions[groups[c][i]] = pred[i];
  }
  return out;
}

void SaveAdoptionLogCsv(const std::filesystem::path& path, const ClusterModelSet& models) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "epoch,cluster,adopted,f1_before,f1_after\n";
  for (const AdoptionEvent& e : models.adoptions) {
    out << e.epoch << ',' << e.cluster << ',' << (e.adopted ? "yes" : "no") << ','
        << csv::FormatDouble(e.f1_before) << ',' << csv::FormatDouble(e.f1_after) << '\n';
  }
}

}  // namespace flare
