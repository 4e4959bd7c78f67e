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

#include "flare/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include "flare/checkpoint.h"
#include "flare/errors.h"
#include "flare/rng.h"

namespace flare {

using nlohmann::json;

namespace {

constexpr RunMode kAllModes[] = {RunMode::kBenign, RunMode::kBptWoFisher, RunMode::kBptWFisher,
                                 RunMode::kCaaWoFisher, RunMode::kFlare};

class PhaseClock {
 public:
  explicit PhaseClock(std::map<std::string, double>& sink, std::string phase)
      : sink_(sink), phase_(std::move(phase)), start_(std::chrono::steady_clock::now()) {}
  ~PhaseClock() {
    sink_[phase_] +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::map<std::string, double>& sink_;
  std::string phase_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<std::size_t> Iota(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

// Leading rows of a view, at most `max_rows`.
TrainingView Head(const TrainingView& view, int max_rows) {
  const std::size_t n = std::min(view.size(), static_cast<std::size_t>(std::max(1, max_rows)));
  return view.Subset(Iota(n));
}

double NaN() { return std::numeric_limits<double>::quiet_NaN(); }

json NetworkTemplateToJson(const NetworkTemplate& t) {
  if (t.spec) return {{"spec", SpecToJson(*t.spec)}};
  return {{"encoder_widths", t.encoder_widths},
          {"classifier_widths", t.classifier_widths},
          {"activation", ToString(t.activation)},
          {"classifier_activation", ToString(t.classifier_activation)},
          {"encoder_dropout", t.encoder_dropout},
          {"classifier_dropout", t.classifier_dropout}};
}

NetworkTemplate NetworkTemplateFromJson(const json& in) {
  NetworkTemplate t;
  if (in.contains("spec")) {
    t.spec = SpecFromJson(in.at("spec"));
    return t;
  }
  t.encoder_widths = in.value("encoder_widths", t.encoder_widths);
  t.classifier_widths = in.value("classifier_widths", t.classifier_widths);
  t.activation = ParseActivation(in.value("activation", ToString(t.activation)));
  t.classifier_activation =
      ParseActivation(in.value("classifier_activation", ToString(t.classifier_activation)));
  t.encoder_dropout = in.value("encoder_dropout", t.encoder_dropout);
  t.classifier_dropout = in.value("classifier_dropout", t.classifier_dropout);
  return t;
}

struct FoldOutcome {
  std::vector<PooledPrediction> predictions;
  std::vector<FoldMetric> metrics;
  std::vector<ClusterDelta> deltas;
  std::vector<LandscapeResult> landscapes;
};

std::vector<PooledPrediction> MakeRecords(const Dataset& dataset, const TrainingView& test,
                                          std::uint64_t seed, int fold, RunMode mode,
                                          const std::vector<int>& predictions,
                                          const std::vector<int>& clusters) {
  std::vector<PooledPrediction> out;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Sample& sample = dataset[test.rows()[i]];
    PooledPrediction p;
    p.seed = seed;
    p.mode = mode;
    p.row = test.rows()[i];
    p.cluster_id = clusters.empty() ? -1 : clusters[i];
    p.record = {sample.person_id, fold, sample.label, predictions[i], sample.attributes};
    out.push_back(std::move(p));
  }
  return out;
}

LandscapeResult PretrainLandscape(RunMode mode, const NetworkParams& theta,
                                  const TrainingView& train, const RunConfig& cfg) {
  PretrainConfig pc = cfg.pretrain;
  pc.mode = PretrainModeFor(mode);
  const TrainingView batch = Head(train, cfg.landscape_max_rows);
  return {mode, LossSurfaceGrid(theta, batch.features(), batch.labels(),
                                PretrainLossSpec{pc.EffectiveWeights()}, cfg.landscape_options)};
}

LandscapeResult AdaptLandscape(RunMode mode, const NetworkParams& theta_star,
                               const ClusterModelSet& models, const ClusterData& clusters,
                               const TrainingView& holdout, const RunConfig& cfg) {
  // The largest adapted cluster stands in for the final model.
  int chosen = -1;
  for (int c = 0; c < models.num_clusters(); ++c) {
    if (models.clusters[c].skipped) continue;
    if (chosen < 0 || clusters.train2[c].size() > clusters.train2[chosen].size()) chosen = c;
  }
  const NetworkParams& params = chosen < 0 ? theta_star : models.clusters[chosen].best;
  const TrainingView source = chosen < 0 ? holdout : holdout.Subset(clusters.train2[chosen]);
  const TrainingView batch = Head(source, cfg.landscape_max_rows);
  AdaptLossSpec spec{cfg.adapt.Weights(), {}};
  spec.baseline_ce =
      CrossEntropy(Forward(theta_star, batch.features(), ForwardMode::kEval).probs, batch.labels());
  return {mode, LossSurfaceGrid(params, batch.features(), batch.labels(), spec,
                                cfg.landscape_options)};
}

FoldOutcome RunFold(const RunConfig& cfg, const Dataset& dataset, const NetworkSpec& spec,
                    const Fold& fold, int fold_index, std::uint64_t seed, bool with_landscape,
                    std::map<std::string, double>& timing, std::string& phase) {
  const FoldSeeds seeds = DeriveFoldSeeds(seed, fold_index);
  phase = "split";
  const FoldSplits splits = MakeFoldSplits(dataset, fold, cfg.pretrain, seeds.split);
  Require(!splits.pretrain_train.empty() && !splits.test.empty(), "fold has an empty split");

  FoldOutcome out;
  std::map<PretrainMode, PretrainResult> pretrained;
  auto base_model = [&](RunMode mode) -> const PretrainResult& {
    const PretrainMode pm = PretrainModeFor(mode);
    auto it = pretrained.find(pm);
    if (it == pretrained.end()) {
      phase = "pretrain:" + ToString(pm);
      PhaseClock clock(timing, "pretrain");
      PretrainConfig pc = cfg.pretrain;
      pc.mode = pm;
      pc.seed = seeds.pretrain;
      it = pretrained.emplace(pm, RunPretraining(splits.pretrain_train, splits.selection, spec, pc))
               .first;
    }
    return it->second;
  };

  for (RunMode mode : cfg.EffectiveModes()) {
    const PretrainResult& base = base_model(mode);
    const NetworkParams& theta = base.checkpoint.params;
    FoldMetric metric{seed, fold_index, mode, 0.0, 0, base.history.best_epoch, 0};
    std::vector<int> predictions;
    std::vector<int> routed;

    if (!UsesAdaptation(mode)) {
      phase = "evaluate:" + ToString(mode);
      PhaseClock clock(timing, "evaluate");
      predictions = Forward(theta, splits.test.features(), ForwardMode::kEval).Predictions();
      if (with_landscape) {
        PhaseClock lclock(timing, "landscape");
        out.landscapes.push_back(PretrainLandscape(mode, theta, splits.pretrain_train, cfg));
      }
    } else {
      StratifierModel stratifier;
      ClusterData clusters;
      {
        phase = "stratify:" + ToString(mode);
        PhaseClock clock(timing, "stratify");
        StratifierConfig sc = cfg.stratifier;
        sc.seed = seeds.stratifier;
        stratifier = FitStratifier(theta, splits.pretrain_train, sc).model;
        const ClusterAssignment holdout_assignment =
            Route(stratifier, theta, splits.holdout.features());
        clusters = SplitClusterData(holdout_assignment, splits.holdout.labels(),
                                    cfg.adapt.val_fraction, seeds.clusters);
      }
      ClusterModelSet models;
      {
        phase = "adapt:" + ToString(mode);
        PhaseClock clock(timing, "adapt");
        AdaptConfig ac = cfg.adapt;
        ac.seed = seeds.adapt;
        models = RunAdaptation(theta, splits.holdout, clusters, ac);
      }
      {
        phase = "evaluate:" + ToString(mode);
        PhaseClock clock(timing, "evaluate");
        const RoutedPredictions rp =
            RouteAndPredict(theta, stratifier, models, splits.test.features());
        predictions = rp.predictions;
        routed = rp.cluster_ids;
        const std::vector<int> base_pred =
            Forward(theta, splits.test.features(), ForwardMode::kEval).Predictions();
        const auto test_groups = GroupByCluster({stratifier.num_clusters(), routed, Matrix()});
        for (int c = 0; c < models.num_clusters(); ++c) {
          const ClusterModel& m = models.clusters[c];
          ClusterDelta d;
          d.seed = seed;
          d.fold = fold_index;
          d.mode = mode;
          d.cluster = c;
          d.n_train2 = clusters.train2[c].size();
          d.n_val = clusters.val[c].size();
          d.n_test = test_groups[c].size();
          d.val_f1_base = m.base_val_f1;
          d.val_f1_adapted = m.best_val_f1;
          d.test_f1_base = NaN();
          d.test_f1_adapted = NaN();
          if (!test_groups[c].empty()) {
            std::vector<int> truth, b, a;
            for (std::size_t pos : test_groups[c]) {
              truth.push_back(splits.test.labels()[pos]);
              b.push_back(base_pred[pos]);
              a.push_back(predictions[pos]);
            }
            d.test_f1_base = F1Score(truth, b, cfg.f1);
            d.test_f1_adapted = F1Score(truth, a, cfg.f1);
          }
          out.deltas.push_back(d);
        }
        metric.num_clusters = models.num_clusters();
        metric.adapt_epochs = models.epochs_run;
      }
      if (with_landscape) {
        PhaseClock lclock(timing, "landscape");
        out.landscapes.push_back(
            AdaptLandscape(mode, theta, models, clusters, splits.holdout, cfg));
      }
    }
    metric.macro_f1 = F1Score(splits.test.labels(), predictions, cfg.f1);
    out.metrics.push_back(metric);
    auto records = MakeRecords(dataset, splits.test, seed, fold_index, mode, predictions, routed);
    out.predictions.insert(out.predictions.end(), records.begin(), records.end());
  }
  return out;
}

ModeSummary Summarize(const RunConfig& cfg, std::uint64_t seed, RunMode mode,
                      const std::vector<PredictionRecord>& records,
                      const std::vector<PredictionRecord>* benign) {
  ModeSummary s;
  s.seed = seed;
  s.mode = mode;
  s.records = records.size();
  std::vector<int> truth, pred;
  for (const PredictionRecord& r : records) {
    truth.push_back(r.y_true);
    pred.push_back(r.y_pred);
  }
  s.macro_f1 = F1Score(truth, pred, cfg.f1);
  const UserSlices users = ComputeUserSlices(records, cfg.f1);
  s.user_f1_mean = users.mean;
  s.user_f1_std = users.std;
  for (const std::string& attribute : CommonAttributes(records)) {
    AttributeAudit audit;
    audit.attribute = attribute;
    audit.scores = SubgroupF1(records, attribute, cfg.f1);
    audit.disparity = ComputeRelativeDisparity(audit.scores);
    try {
      audit.odds = EodAod(records, attribute);
    } catch (const ValidationError&) {
      audit.odds.reset();
    }
    if (benign != nullptr) {
      audit.bhe = Bhe(SubgroupF1(*benign, attribute, cfg.f1), audit.scores);
    }
    s.attributes.push_back(std::move(audit));
  }
  return s;
}

}  // namespace

std::string ToString(RunMode mode) {
  switch (mode) {
    case RunMode::kBenign:
      return "benign";
    case RunMode::kBptWoFisher:
      return "bpt_wo_fisher";
    case RunMode::kBptWFisher:
      return "bpt_w_fisher";
    case RunMode::kCaaWoFisher:
      return "caa_wo_fisher";
    case RunMode::kFlare:
      return "flare";
  }
  return "flare";
}

RunMode ParseRunMode(const std::string& name) {
  for (RunMode mode : kAllModes) {
    if (ToString(mode) == name) return mode;
  }
  throw ValidationError("unknown mode '" + name + "'");
}

PretrainMode PretrainModeFor(RunMode mode) {
  switch (mode) {
    case RunMode::kBenign:
      return PretrainMode::kBenign;
    case RunMode::kBptWoFisher:
    case RunMode::kCaaWoFisher:
      return PretrainMode::kBptWoFisher;
    case RunMode::kBptWFisher:
    case RunMode::kFlare:
      return PretrainMode::kBptWFisher;
  }
  return PretrainMode::kBptWFisher;
}

bool UsesAdaptation(RunMode mode) {
  return mode == RunMode::kCaaWoFisher || mode == RunMode::kFlare;
}

NetworkSpec NetworkTemplate::Build(int input_dim) const {
  if (spec) {
    Require(spec->input_dim() == input_dim, "network spec input dim does not match the dataset");
    return *spec;
  }
  return NetworkSpec::Autoencoder(input_dim, encoder_widths, classifier_widths, activation,
                                  classifier_activation, encoder_dropout, classifier_dropout);
}

void RunConfig::Validate() const {
  Require(folds >= 2, "run: folds must be at least 2");
  Require(holdout_fraction > 0.0 && holdout_fraction < 1.0,
          "run: holdout_fraction must lie in (0, 1)");
  Require(!seeds.empty(), "run: need at least one seed");
  Require(!modes.empty(), "run: need at least one mode");
  Require(synth.has_value() || !csv_path.empty(), "run: dataset needs a csv path or a synth config");
  if (synth) synth->Validate();
  pretrain.Validate();
  stratifier.Validate();
  adapt.Validate();
  Require(landscape_options.grid_n >= 1 && landscape_options.grid_n % 2 == 1,
          "run: landscape grid_n must be odd");
  if (!candidate_name.empty()) {
    const RunMode c = ParseRunMode(candidate_name);
    Require(std::find(modes.begin(), modes.end(), c) != modes.end(),
            "run: candidate_name must be one of the configured modes");
  }
}

std::vector<RunMode> RunConfig::EffectiveModes() const {
  std::vector<RunMode> out;
  for (RunMode mode : kAllModes) {
    if (mode == RunMode::kBenign || std::find(modes.begin(), modes.end(), mode) != modes.end()) {
      out.push_back(mode);
    }
  }
  return out;
}

std::optional<RunMode> RunConfig::Candidate() const {
  if (!candidate_name.empty()) return ParseRunMode(candidate_name);
  const std::vector<RunMode> effective = EffectiveModes();
  if (std::find(effective.begin(), effective.end(), RunMode::kFlare) != effective.end()) {
    return RunMode::kFlare;
  }
  if (effective.back() != RunMode::kBenign) return effective.back();
  return std::nullopt;
}

json RunConfigToJson(const RunConfig& cfg) {
  json dataset;
  if (cfg.synth) {
    dataset = {{"synth", SynthConfigToJson(*cfg.synth)}, {"seed", cfg.data_seed}};
  } else {
    dataset = {{"csv", cfg.csv_path.string()}};
  }
  json modes = json::array();
  for (RunMode m : cfg.modes) modes.push_back(ToString(m));
  return {{"dataset", dataset},
          {"folds", cfg.folds},
          {"holdout_fraction", cfg.holdout_fraction},
          {"network", NetworkTemplateToJson(cfg.network)},
          {"pretrain", PretrainConfigToJson(cfg.pretrain)},
          {"stratifier", StratifierConfigToJson(cfg.stratifier)},
          {"adapt", AdaptConfigToJson(cfg.adapt)},
          {"modes", modes},
          {"seeds", cfg.seeds},
          {"f1", ToString(cfg.f1)},
          {"candidate_name", cfg.candidate_name},
          {"landscape",
           {{"enabled", cfg.landscape},
            {"grid_n", cfg.landscape_options.grid_n},
            {"radius", cfg.landscape_options.radius},
            {"seed", cfg.landscape_options.seed},
            {"max_rows", cfg.landscape_max_rows}}},
          {"out", cfg.out_dir.string()}};
}

RunConfig RunConfigFromJson(const json& in) {
  RunConfig cfg;
  try {
    if (in.contains("dataset")) {
      const json& ds = in.at("dataset");
      if (ds.contains("synth")) {
        cfg.synth = SynthConfigFromJson(ds.at("synth"));
        cfg.data_seed = ds.value("seed", cfg.data_seed);
      } else {
        cfg.csv_path = ds.at("csv").get<std::string>();
      }
    } else {
      cfg.synth = SynthConfig{};
    }
    cfg.folds = in.value("folds", cfg.folds);
    cfg.holdout_fraction = in.value("holdout_fraction", cfg.holdout_fraction);
    if (in.contains("network")) cfg.network = NetworkTemplateFromJson(in.at("network"));
    if (in.contains("pretrain")) cfg.pretrain = PretrainConfigFromJson(in.at("pretrain"));
    if (in.contains("stratifier")) cfg.stratifier = StratifierConfigFromJson(in.at("stratifier"));
    if (in.contains("adapt")) cfg.adapt = AdaptConfigFromJson(in.at("adapt"));
    if (in.contains("modes")) {
      cfg.modes.clear();
      for (const json& m : in.at("modes")) cfg.modes.push_back(ParseRunMode(m.get<std::string>()));
    }
    cfg.seeds = in.value("seeds", cfg.seeds);
    cfg.f1 = ParseF1Kind(in.value("f1", ToString(cfg.f1)));
    cfg.candidate_name = in.value("candidate_name", cfg.candidate_name);
    if (in.contains("landscape")) {
      const json& l = in.at("landscape");
      cfg.landscape = l.value("enabled", cfg.landscape);
      cfg.landscape_options.grid_n = l.value("grid_n", cfg.landscape_options.grid_n);
      cfg.landscape_options.radius = l.value("radius", cfg.landscape_options.radius);
      cfg.landscape_options.seed = l.value("seed", cfg.landscape_options.seed);
      cfg.landscape_max_rows = l.value("max_rows", cfg.landscape_max_rows);
    }
    cfg.out_dir = in.value("out", cfg.out_dir.string());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

RunConfig LoadRunConfig(const std::filesystem::path& path) {
  return RunConfigFromJson(ReadJsonFile(path));
}

std::uint64_t FoldPlanSeed(std::uint64_t seed) { return Rng(seed).Split({0}).NextU64(); }

FoldSeeds DeriveFoldSeeds(std::uint64_t seed, int fold) {
  const Rng root(seed);
  const std::uint64_t f = static_cast<std::uint64_t>(fold);
  return {root.Split({1, f}).NextU64(), root.Split({2, f}).NextU64(),
          root.Split({3, f}).NextU64(), root.Split({4, f}).NextU64(),
          root.Split({5, f}).NextU64()};
}

FoldSplits MakeFoldSplits(const Dataset& dataset, const Fold& fold, const PretrainConfig& pretrain,
                          std::uint64_t seed) {
  FoldSplits out;
  out.test = TrainingView(dataset, dataset.RowsForPersons(fold.test_persons));
  out.holdout = TrainingView(dataset, dataset.RowsForPersons(fold.holdout_persons));
  if (pretrain.selection_split == SelectionSplit::kTest) {
    out.pretrain_train = TrainingView(dataset, dataset.RowsForPersons(fold.train_persons));
    out.selection = out.test;
    return out;
  }
  std::vector<std::string> persons = fold.train_persons;
  Require(persons.size() >= 2, "fold: need at least 2 train persons for a validation carve-out");
  Rng rng(seed);
  rng.Shuffle(persons);
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(pretrain.val_fraction * persons.size())), 1,
      persons.size() - 1);
  std::vector<std::string> val(persons.begin(), persons.begin() + n_val);
  std::vector<std::string> train(persons.begin() + n_val, persons.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  out.selection = TrainingView(dataset, dataset.RowsForPersons(val));
  out.pretrain_train = TrainingView(dataset, dataset.RowsForPersons(train));
  return out;
}

const ModeSummary* RunReport::Find(std::uint64_t seed, RunMode mode) const {
  for (const ModeSummary& s : summaries) {
    if (s.seed == seed && s.mode == mode) return &s;
  }
  return nullptr;
}

Dataset LoadDataset(const RunConfig& cfg) {
  if (cfg.synth) return SynthGenerate(*cfg.synth, cfg.data_seed);
  return LoadCsv(cfg.csv_path);
}

RunReport RunExperiment(const RunConfig& cfg) { return RunExperiment(cfg, LoadDataset(cfg)); }

RunReport RunExperiment(const RunConfig& cfg, const Dataset& dataset) {
  cfg.Validate();
  Require(!dataset.empty(), "run: empty dataset");
  const NetworkSpec spec = cfg.network.Build(dataset.feature_dim());
  RunReport report;
  report.config = cfg;
  std::map<std::string, double> timing;

  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    const std::uint64_t seed = cfg.seeds[s];
    const FoldPlan plan =
        MakeFolds(dataset, cfg.folds, cfg.holdout_fraction, FoldPlanSeed(seed));
    for (int f = 0; f < cfg.folds; ++f) {
      std::string phase = "start";
      try {
        FoldOutcome outcome = RunFold(cfg, dataset, spec, plan.folds[f], f, seed,
                                      cfg.landscape && s == 0 && f == 0, timing, phase);
        std::move(outcome.predictions.begin(), outcome.predictions.end(),
                  std::back_inserter(report.predictions));
        report.fold_metrics.insert(report.fold_metrics.end(), outcome.metrics.begin(),
                                   outcome.metrics.end());
        report.cluster_deltas.insert(report.cluster_deltas.end(), outcome.deltas.begin(),
                                     outcome.deltas.end());
        std::move(outcome.landscapes.begin(), outcome.landscapes.end(),
                  std::back_inserter(report.landscapes));
      } catch (const std::exception& e) {
        report.failures.push_back({seed, f, phase, e.what()});
      }
    }

    PhaseClock clock(timing, "metrics");
    std::map<RunMode, std::vector<PredictionRecord>> by_mode;
    for (const PooledPrediction& p : report.predictions) {
      if (p.seed == seed) by_mode[p.mode].push_back(p.record);
    }
    const auto benign = by_mode.find(RunMode::kBenign);
    for (RunMode mode : cfg.EffectiveModes()) {
      const auto it = by_mode.find(mode);
      if (it == by_mode.end() || it->second.empty()) continue;
      const std::vector<PredictionRecord>* base =
          mode == RunMode::kBenign || benign == by_mode.end() ? nullptr : &benign->second;
      report.summaries.push_back(Summarize(cfg, seed, mode, it->second, base));
    }
  }
  for (const auto& [phase, seconds] : timing) report.timings.push_back({phase, seconds});
  return report;
}

}  // namespace flare
