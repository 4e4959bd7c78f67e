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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flare/checkpoint.h"
#include "flare/errors.h"
#include "flare/harness.h"

using namespace flare;
namespace fs = std::filesystem;

namespace {

RunConfig SmallConfig() {
  RunConfig cfg;
  SynthConfig synth;
  synth.persons = 12;
  synth.samples_per_person = 12;
  synth.feature_dim = 5;
  cfg.synth = synth;
  cfg.data_seed = 3;
  cfg.folds = 2;
  cfg.network.encoder_widths = {6, 4};
  cfg.network.classifier_widths = {4};
  cfg.pretrain.epochs = 8;
  cfg.adapt.epochs = 5;
  cfg.adapt.agg_interval = 5;
  cfg.stratifier.variant = ReducerVariant::kPca;
  cfg.modes = {RunMode::kBenign, RunMode::kFlare};
  cfg.seeds = {1, 2};
  cfg.landscape_options.grid_n = 3;
  return cfg;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int RunCli(const std::string& args) {
  const std::string cmd = std::string(FLARE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run config json round trip") {
  RunConfig cfg = SmallConfig();
  cfg.candidate_name = "flare";
  const nlohmann::json j = RunConfigToJson(cfg);
  const RunConfig back = RunConfigFromJson(j);
  CHECK(RunConfigToJson(back) == j);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.synth.has_value());
  CHECK(back.synth->persons == 12);

  CHECK(SmallConfig().EffectiveModes().front() == RunMode::kBenign);
  RunConfig only_flare = SmallConfig();
  only_flare.modes = {RunMode::kFlare};
  CHECK(only_flare.EffectiveModes() == std::vector<RunMode>{RunMode::kBenign, RunMode::kFlare});
  CHECK(only_flare.Candidate() == RunMode::kFlare);

  for (RunMode m : {RunMode::kBenign, RunMode::kBptWoFisher, RunMode::kBptWFisher,
                    RunMode::kCaaWoFisher, RunMode::kFlare}) {
    CHECK(ParseRunMode(ToString(m)) == m);
  }
  CHECK(UsesAdaptation(RunMode::kCaaWoFisher));
  CHECK_FALSE(UsesAdaptation(RunMode::kBptWFisher));
  CHECK(PretrainModeFor(RunMode::kCaaWoFisher) == PretrainMode::kBptWoFisher);
  CHECK(PretrainModeFor(RunMode::kFlare) == PretrainMode::kBptWFisher);
  CHECK_THROWS_AS(ParseRunMode("fair"), ValidationError);
  CHECK_THROWS_AS(RunConfigFromJson(nlohmann::json{{"folds", 1}}), ValidationError);
}

TEST_CASE("fold splits are person disjoint") {
  const RunConfig cfg = SmallConfig();
  const Dataset ds = LoadDataset(cfg);
  const FoldPlan plan = MakeFolds(ds, cfg.folds, cfg.holdout_fraction, FoldPlanSeed(1));
  for (int f = 0; f < cfg.folds; ++f) {
    const FoldSplits s = MakeFoldSplits(ds, plan.folds[f], cfg.pretrain, DeriveFoldSeeds(1, f).split);
    std::vector<std::set<std::string>> persons;
    for (const TrainingView* v : {&s.pretrain_train, &s.selection, &s.holdout, &s.test}) {
      CHECK_FALSE(v->empty());
      persons.emplace_back(v->person_ids().begin(), v->person_ids().end());
    }
    for (std::size_t a = 0; a < persons.size(); ++a) {
      for (std::size_t b = a + 1; b < persons.size(); ++b) {
        for (const std::string& p : persons[a]) CHECK(persons[b].count(p) == 0);
      }
    }
    std::size_t total = 0;
    for (const auto& p : persons) total += p.size();
    CHECK(total == 12);
  }
  CHECK(DeriveFoldSeeds(1, 0).pretrain != DeriveFoldSeeds(1, 1).pretrain);
  CHECK(DeriveFoldSeeds(1, 0).pretrain != DeriveFoldSeeds(2, 0).pretrain);
}

TEST_CASE("end-to-end run emits every report and is reproducible") {
  const RunConfig cfg = SmallConfig();
  const RunReport report = RunExperiment(cfg);
  CHECK(report.failures.empty());
  // Each test row is predicted exactly once per seed and mode.
  for (std::uint64_t seed : cfg.seeds) {
    for (RunMode mode : cfg.EffectiveModes()) {
      std::set<std::size_t> rows;
      std::size_t count = 0;
      for (const PooledPrediction& p : report.predictions) {
        if (p.seed != seed || p.mode != mode) continue;
        rows.insert(p.row);
        ++count;
        CHECK((mode == RunMode::kBenign) == (p.cluster_id == -1));
      }
      CHECK(count == 144);
      CHECK(rows.size() == 144);
      REQUIRE(report.Find(seed, mode) != nullptr);
    }
  }
  const ModeSummary* flare = report.Find(1, RunMode::kFlare);
  REQUIRE(flare != nullptr);
  bool has_bhe = false;
  for (const AttributeAudit& a : flare->attributes) has_bhe = has_bhe || a.bhe.has_value();
  CHECK(has_bhe);
  for (const ClusterDelta& d : report.cluster_deltas) CHECK(d.val_f1_adapted >= d.val_f1_base);
  REQUIRE(report.landscapes.size() == 2);

  const fs::path out = TempDir("flare_harness_a");
  EmitReports(report, out);
  for (const char* name : {"report.json", "timing.json", "bhe.csv", "bhe_flare.csv",
                           "fold_cluster_delta.csv", "landscape_benign.csv", "landscape_flare.csv",
                           "predictions.csv", "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(out / name), name);
  }
  const nlohmann::json manifest = ReadJsonFile(out / "manifest.json");
  CHECK(manifest["files"].size() == 8);
  for (const auto& f : manifest["files"]) {
    CHECK(f["sha256"] == Sha256File(out / f["path"].get<std::string>()));
  }
  CHECK(ReportToJson(report).contains("cluster_deltas"));

  const fs::path again = TempDir("flare_harness_b");
  EmitReports(RunExperiment(cfg), again);
  CHECK(Slurp(out / "report.json") == Slurp(again / "report.json"));
  CHECK(Slurp(out / "predictions.csv") == Slurp(again / "predictions.csv"));
  fs::remove_all(out);
  fs::remove_all(again);
}

TEST_CASE("sha256 of a known string") {
  const fs::path path = fs::temp_directory_path() / "flare_sha.txt";
  std::ofstream(path) << "abc";
  CHECK(Sha256File(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove(path);
}

TEST_CASE("cli verbs and exit codes") {
  const fs::path dir = TempDir("flare_cli");
  fs::create_directories(dir);
  RunConfig cfg = SmallConfig();
  cfg.seeds = {1};
  cfg.landscape = false;
  WriteJsonFile(dir / "config.json", RunConfigToJson(cfg));
  const std::string config = "--config " + (dir / "config.json").string();

  CHECK(RunCli("synth " + config + " --out " + (dir / "data.csv").string()) == 0);
  CHECK(fs::exists(dir / "data.csv"));
  CHECK(RunCli("pretrain " + config + " --out " + (dir / "pre").string()) == 0);
  CHECK(fs::exists(dir / "pre" / "checkpoint.json"));
  const std::string ckpt = " --checkpoint " + (dir / "pre" / "checkpoint.json").string();
  CHECK(RunCli("cluster " + config + ckpt + " --out " + (dir / "clu").string()) == 0);
  const std::string strat = " --stratifier " + (dir / "clu" / "stratifier.json").string();
  CHECK(RunCli("adapt " + config + ckpt + strat + " --out " + (dir / "ada").string()) == 0);
  CHECK(RunCli("eval " + config + ckpt + " --out " + (dir / "base.csv").string()) == 0);
  CHECK(RunCli("eval " + config + ckpt + strat + " --clusters " + (dir / "ada").string() +
               " --out " + (dir / "cand.csv").string()) == 0);
  CHECK(RunCli("bhe --base " + (dir / "base.csv").string() + " --cand " +
               (dir / "cand.csv").string() + " --out " + (dir / "bhe").string()) == 0);
  CHECK(fs::exists(dir / "bhe" / "bhe.csv"));
  CHECK(RunCli("landscape " + config + ckpt + " --out " + (dir / "grid.csv").string()) == 0);
  CHECK(RunCli("run " + config + " --out " + (dir / "run").string()) == 0);
  CHECK(fs::exists(dir / "run" / "report.json"));

  // Validation failures exit with 1.
  CHECK(RunCli("run --config " + (dir / "missing.json").string()) == 1);
  CHECK(RunCli("pretrain " + config + " --fold 9 --out " + (dir / "x").string()) == 1);
  CHECK(RunCli("frobnicate") == 1);
  std::ofstream(dir / "bad.json") << R"({"pretrain": {"lr": -1}})";
  CHECK(RunCli("run --config " + (dir / "bad.json").string()) == 1);
  // A diverging run exits with 2.
  RunConfig wild = cfg;
  wild.modes = {RunMode::kBenign};
  wild.pretrain.learning_rate = 1e300;
  WriteJsonFile(dir / "wild.json", RunConfigToJson(wild));
  CHECK(RunCli("pretrain --config " + (dir / "wild.json").string() + " --out " +
               (dir / "w").string()) == 2);
  fs::remove_all(dir);
}
