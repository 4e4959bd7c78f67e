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

// flare: command-line entry point.
//
//   flare synth      --out data.csv [--config synth.json] [--seed N]
//   flare pretrain   --config run.json --out DIR [--data data.csv] [--fold K] [--seed N] [--mode M]
//   flare cluster    --config run.json --checkpoint ckpt.json --out DIR [--fold K] [--seed N]
//   flare adapt      --config run.json --checkpoint ckpt.json --stratifier strat.json --out DIR
//   flare eval       --config run.json --checkpoint ckpt.json --out preds.csv [--stratifier S --clusters DIR]
//   flare bhe        --base base.csv --cand cand.csv --out DIR
//   flare landscape  --config run.json --checkpoint ckpt.json --out grid.csv [--mode M]
//   flare run        --config run.json --out DIR [--seed N] [--mode M]
//
// Exit codes: 0 success, 1 validation error, 2 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flare/adapt.h"
#include "flare/checkpoint.h"
#include "flare/data.h"
#include "flare/errors.h"
#include "flare/harness.h"
#include "flare/landscape.h"
#include "flare/metrics.h"
#include "flare/pretrain.h"
#include "flare/stratifier.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string stratifier;
  std::string clusters;
  std::string base;
  std::string cand;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  int fold = 0;
};

flare::RunConfig LoadConfig(const Options& o) {
  flare::RunConfig cfg =
      o.config.empty() ? flare::RunConfigFromJson(json::object()) : flare::LoadRunConfig(o.config);
  if (!o.data.empty()) {
    cfg.csv_path = o.data;
    cfg.synth.reset();
  }
  if (o.seed) cfg.seeds = {*o.seed};
  return cfg;
}

struct FoldContext {
  flare::RunConfig cfg;
  flare::Dataset dataset;
  std::uint64_t seed = 0;
  flare::FoldSeeds seeds;
  flare::FoldSplits splits;
};

FoldContext LoadFold(const Options& o) {
  FoldContext ctx;
  ctx.cfg = LoadConfig(o);
  ctx.dataset = flare::LoadDataset(ctx.cfg);
  ctx.seed = ctx.cfg.seeds.front();
  flare::Require(o.fold >= 0 && o.fold < ctx.cfg.folds, "--fold out of range");
  const flare::FoldPlan plan = flare::MakeFolds(ctx.dataset, ctx.cfg.folds,
                                                ctx.cfg.holdout_fraction,
                                                flare::FoldPlanSeed(ctx.seed));
  ctx.seeds = flare::DeriveFoldSeeds(ctx.seed, o.fold);
  ctx.splits = flare::MakeFoldSplits(ctx.dataset, plan.folds[o.fold], ctx.cfg.pretrain,
                                     ctx.seeds.split);
  return ctx;
}

flare::RunMode ModeOr(const Options& o, flare::RunMode fallback) {
  return o.mode ? flare::ParseRunMode(*o.mode) : fallback;
}

int Synth(const Options& o) {
  flare::SynthConfig cfg;
  if (!o.config.empty()) {
    const json in = flare::ReadJsonFile(o.config);
    cfg = flare::SynthConfigFromJson(in.contains("dataset") ? in["dataset"].value("synth", json::object())
                                                           : in);
  }
  const flare::Dataset dataset = flare::SynthGenerate(cfg, o.seed.value_or(0));
  flare::SaveCsv(o.out, dataset);
  std::cout << flare::SummaryToJson(flare::Summarize(dataset)).dump(2) << '\n';
  return 0;
}

int Pretrain(const Options& o) {
  const FoldContext ctx = LoadFold(o);
  flare::PretrainConfig pc = ctx.cfg.pretrain;
  pc.mode = flare::PretrainModeFor(ModeOr(o, flare::RunMode::kFlare));
  pc.seed = ctx.seeds.pretrain;
  const flare::NetworkSpec spec = ctx.cfg.network.Build(ctx.dataset.feature_dim());
  const flare::PretrainResult result =
      flare::RunPretraining(ctx.splits.pretrain_train, ctx.splits.selection, spec, pc);
  fs::create_directories(o.out);
  flare::SaveCheckpoint(fs::path(o.out) / "checkpoint.json", result.checkpoint);
  flare::SaveHistoryCsv(fs::path(o.out) / "history.csv", result.history);
  std::cout << "best epoch " << result.history.best_epoch << ", selection macro-F1 "
            << result.checkpoint.metadata.selection_f1 << '\n';
  return 0;
}

int Cluster(const Options& o) {
  const FoldContext ctx = LoadFold(o);
  const flare::Checkpoint ckpt = flare::LoadCheckpoint(o.checkpoint);
  flare::StratifierConfig sc = ctx.cfg.stratifier;
  sc.seed = ctx.seeds.stratifier;
  const flare::StratifierFit fit = flare::FitStratifier(ckpt.params, ctx.splits.pretrain_train, sc);
  fs::create_directories(o.out);
  flare::WriteJsonFile(fs::path(o.out) / "stratifier.json", flare::StratifierToJson(fit.model));
  flare::SaveAssignmentsCsv(fs::path(o.out) / "assignments.csv", fit.train_assignment);
  std::cout << "clusters " << fit.model.num_clusters() << ", fit rows " << fit.fit_positions.size()
            << '\n';
  return 0;
}

int Adapt(const Options& o) {
  const FoldContext ctx = LoadFold(o);
  const flare::Checkpoint ckpt = flare::LoadCheckpoint(o.checkpoint);
  const flare::StratifierModel strat =
      flare::StratifierFromJson(flare::ReadJsonFile(o.stratifier));
  const flare::ClusterAssignment holdout =
      flare::Route(strat, ckpt.params, ctx.splits.holdout.features());
  const flare::ClusterData clusters = flare::SplitClusterData(
      holdout, ctx.splits.holdout.labels(), ctx.cfg.adapt.val_fraction, ctx.seeds.clusters);
  flare::AdaptConfig ac = ctx.cfg.adapt;
  ac.seed = ctx.seeds.adapt;
  const flare::ClusterModelSet models =
      flare::RunAdaptation(ckpt.params, ctx.splits.holdout, clusters, ac);
  fs::create_directories(o.out);
  for (int c = 0; c < models.num_clusters(); ++c) {
    const flare::ClusterModel& m = models.clusters[c];
    flare::Checkpoint out{m.best, {ac.seed, m.best_epoch, m.best_val_f1}};
    flare::SaveCheckpoint(fs::path(o.out) / ("cluster_" + std::to_string(c) + ".json"), out);
    std::cout << "cluster " << c << ": val macro-F1 " << m.base_val_f1 << " -> " << m.best_val_f1
              << (m.skipped ? " (skipped)" : "") << '\n';
  }
  flare::SaveAdoptionLogCsv(fs::path(o.out) / "adoption_log.csv", models);
  return 0;
}

int Eval(const Options& o) {
  const FoldContext ctx = LoadFold(o);
  const flare::Checkpoint ckpt = flare::LoadCheckpoint(o.checkpoint);
  const flare::TrainingView& test = ctx.splits.test;
  std::vector<int> predictions;
  if (!o.stratifier.empty()) {
    flare::Require(!o.clusters.empty(), "--stratifier needs --clusters");
    const flare::StratifierModel strat =
        flare::StratifierFromJson(flare::ReadJsonFile(o.stratifier));
    flare::ClusterModelSet models;
    for (int c = 0; c < strat.num_clusters(); ++c) {
      flare::ClusterModel m;
      m.best = flare::LoadCheckpoint(fs::path(o.clusters) / ("cluster_" + std::to_string(c) + ".json"))
                   .params;
      models.clusters.push_back(std::move(m));
    }
    predictions = flare::RouteAndPredict(ckpt.params, strat, models, test.features()).predictions;
  } else {
    predictions = flare::Forward(ckpt.params, test.features(), flare::ForwardMode::kEval).Predictions();
  }
  std::vector<flare::PredictionRecord> records;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const flare::Sample& s = ctx.dataset[test.rows()[i]];
    records.push_back({s.person_id, o.fold, s.label, predictions[i], s.attributes});
  }
  flare::SavePredictionCsv(o.out, records);
  std::cout << "macro-F1 " << flare::MacroF1(records) << '\n';
  return 0;
}

int Bhe(const Options& o) {
  const auto base = flare::LoadPredictionCsv(o.base);
  const auto cand = flare::LoadPredictionCsv(o.cand);
  std::vector<flare::BheReport> rows;
  json audit = json::array();
  for (const std::string& attribute : flare::CommonAttributes(base)) {
    const flare::BheReport row = flare::Bhe(flare::SubgroupF1(base, attribute),
                                            flare::SubgroupF1(cand, attribute));
    rows.push_back(row);
    json item = {{"attribute", attribute},
                 {"dB", row.delta.benefit},
                 {"dH", row.delta.harm},
                 {"dE", row.delta.equity}};
    try {
      const flare::OddsGaps gaps = flare::EodAod(cand, attribute);
      item["candidate_eod"] = gaps.eod;
      item["candidate_aod"] = gaps.aod;
    } catch (const flare::ValidationError&) {
    }
    audit.push_back(std::move(item));
  }
  fs::create_directories(o.out);
  flare::SaveBheCsv(fs::path(o.out) / "bhe.csv", rows);
  flare::WriteJsonFile(fs::path(o.out) / "bhe.json", audit);
  std::cout << audit.dump(2) << '\n';
  return 0;
}

int Landscape(const Options& o) {
  const FoldContext ctx = LoadFold(o);
  const flare::Checkpoint ckpt = flare::LoadCheckpoint(o.checkpoint);
  flare::PretrainConfig pc = ctx.cfg.pretrain;
  pc.mode = flare::PretrainModeFor(ModeOr(o, flare::RunMode::kFlare));
  std::vector<std::size_t> head;
  for (std::size_t i = 0; i < ctx.splits.pretrain_train.size() &&
                          i < static_cast<std::size_t>(ctx.cfg.landscape_max_rows);
       ++i) {
    head.push_back(i);
  }
  const flare::TrainingView batch = ctx.splits.pretrain_train.Subset(head);
  const flare::LossGrid grid =
      flare::LossSurfaceGrid(ckpt.params, batch.features(), batch.labels(),
                             flare::PretrainLossSpec{pc.EffectiveWeights()},
                             ctx.cfg.landscape_options);
  flare::SaveLandscapeCsv(o.out, grid);
  std::cout << "center loss " << grid.center << ", grid min " << grid.loss.minCoeff() << '\n';
  return 0;
}

int Run(const Options& o) {
  flare::RunConfig cfg = LoadConfig(o);
  if (o.mode) cfg.modes = {flare::ParseRunMode(*o.mode)};
  if (!o.out.empty()) cfg.out_dir = o.out;
  const flare::RunReport report = flare::RunExperiment(cfg);
  flare::EmitReports(report, cfg.out_dir);
  for (const flare::ModeSummary& s : report.summaries) {
    std::cout << "seed " << s.seed << "  " << flare::ToString(s.mode) << "  macro-F1 "
              << s.macro_f1 << '\n';
  }
  for (const flare::FoldFailure& f : report.failures) {
    std::cerr << "seed " << f.seed << " fold " << f.fold << " failed in " << f.phase << ": "
              << f.message << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher-guided latent-subgroup learning with do-no-harm regularization"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON config");
    cmd->add_option("--seed", o.seed, "Seed (overrides the config seeds)");
    cmd->add_option("--mode", o.mode, "benign|bpt_wo_fisher|bpt_w_fisher|caa_wo_fisher|flare");
  };
  auto add_fold = [&](CLI::App* cmd) {
    cmd->add_option("--data", o.data, "Dataset CSV (overrides the config dataset)");
    cmd->add_option("--fold", o.fold, "Fold index");
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset CSV");
  add_common(synth);
  synth->add_option("--out", o.out, "Output CSV")->required();

  CLI::App* pretrain = app.add_subcommand("pretrain", "Pretrain a base checkpoint on one fold");
  add_common(pretrain);
  add_fold(pretrain);
  pretrain->add_option("--out", o.out, "Output directory")->required();

  CLI::App* cluster = app.add_subcommand("cluster", "Fit the stratifier on one fold");
  add_common(cluster);
  add_fold(cluster);
  cluster->add_option("--checkpoint", o.checkpoint, "Base checkpoint")->required();
  cluster->add_option("--out", o.out, "Output directory")->required();

  CLI::App* adapt = app.add_subcommand("adapt", "Adapt per-cluster models on one fold");
  add_common(adapt);
  add_fold(adapt);
  adapt->add_option("--checkpoint", o.checkpoint, "Base checkpoint")->required();
  adapt->add_option("--stratifier", o.stratifier, "Stratifier JSON")->required();
  adapt->add_option("--out", o.out, "Output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Predict the test split of one fold");
  add_common(eval);
  add_fold(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Base checkpoint")->required();
  eval->add_option("--stratifier", o.stratifier, "Stratifier JSON (routed prediction)");
  eval->add_option("--clusters", o.clusters, "Directory of cluster_<c>.json checkpoints");
  eval->add_option("--out", o.out, "Prediction CSV")->required();

  CLI::App* bhe = app.add_subcommand("bhe", "Compare two prediction files");
  bhe->add_option("--base", o.base, "Base prediction CSV")->required();
  bhe->add_option("--cand", o.cand, "Candidate prediction CSV")->required();
  bhe->add_option("--out", o.out, "Output directory")->required();

  CLI::App* landscape = app.add_subcommand("landscape", "Loss-surface grid around a checkpoint");
  add_common(landscape);
  add_fold(landscape);
  landscape->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  landscape->add_option("--out", o.out, "Output CSV")->required();

  CLI::App* run = app.add_subcommand("run", "End-to-end experiment");
  add_common(run);
  run->add_option("--data", o.data, "Dataset CSV (overrides the config dataset)");
  run->add_option("--out", o.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return Synth(o);
    if (*pretrain) return Pretrain(o);
    if (*cluster) return Cluster(o);
    if (*adapt) return Adapt(o);
    if (*eval) return Eval(o);
    if (*bhe) return Bhe(o);
    if (*landscape) return Landscape(o);
    if (*run) return Run(o);
  } catch (const flare::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
