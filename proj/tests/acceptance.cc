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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flare/gmm.h"
#include "flare/harness.h"
#include "flare/landscape.h"
#include "flare/losses.h"
#include "flare/metrics.h"
#include "flare/reducer.h"
#include "oracles.h"

using namespace flare;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2e", v);
  return buf;
}

std::string Fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

Outcome GradientOracle() {
  double worst = 0.0;
  int checks = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(1000 + seed);
    const NetworkParams params = InitNetwork(oracle::TinySpec(rng), rng.NextU64());
    const Matrix x = oracle::RandomMatrix(rng, 7, params.spec.input_dim());
    const std::vector<int> y = oracle::RandomLabels(rng, 7);
    for (double alpha : {0.0, 1.0}) {
      for (double beta : {0.0, 1.0}) {
        worst = std::max(worst, oracle::MaxGradientError(params, x, y,
                                                         PretrainLossSpec{{alpha, beta}}));
        ++checks;
      }
    }
    const ForwardTrace trace = Forward(params, x, ForwardMode::kEval);
    const std::vector<double> ce = CrossEntropy(trace.probs, y);
    std::vector<double> active(ce), idle(ce);
    for (std::size_t i = 0; i < ce.size(); ++i) {
      active[i] -= 0.5;  // every sample above its baseline
      idle[i] += 0.5;
    }
    for (const auto& base : {active, idle}) {
      worst = std::max(worst, oracle::MaxGradientError(params, x, y,
                                                       AdaptLossSpec{{0.5, 1.0, 2.0}, base}));
      ++checks;
    }
  }
  return {worst <= 1e-5, "max rel err " + Sci(worst) + " over " + std::to_string(checks) +
                             " loss variants (tol 1e-5)"};
}

Outcome FisherOracle() {
  Rng rng(2000);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int hidden = 1 + static_cast<int>(rng.UniformIndex(6));
    const Matrix w = oracle::RandomMatrix(rng, 2, hidden);
    const Vector b = oracle::RandomMatrix(rng, 2, 1).col(0);
    const Vector h = oracle::RandomMatrix(rng, hidden, 1).col(0);
    const int y = static_cast<int>(rng.UniformIndex(2));
    const Vector logits = w * h + b;
    RowVector p = (logits.array() - logits.maxCoeff()).exp().transpose();
    p /= p.sum();
    const double value = FisherProxy(p, h.transpose(), y, FisherVariant::kLastLayer);
    const double reference = oracle::FisherByDifferences(w, b, h, y);
    worst = std::max(worst, std::abs(value - reference) / reference);
  }
  return {worst <= 1e-6, "max rel err " + Sci(worst) + " on 100 triples (tol 1e-6)"};
}

Outcome EmMonotone() {
  double worst_drop = 0.0, worst_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(3000 + seed);
    const int dim = 1 + static_cast<int>(rng.UniformIndex(3));
    const int c = 1 + static_cast<int>(rng.UniformIndex(4));
    const Matrix x = oracle::RandomMatrix(rng, 60 + static_cast<int>(rng.UniformIndex(140)), dim);
    const GmmModel m = FitGmm(x, c, seed);
    for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
      worst_drop = std::max(worst_drop, m.log_likelihood_trace[i - 1] - m.log_likelihood_trace[i]);
    }
    const ClusterAssignment a = Assign(m, x);
    for (Eigen::Index r = 0; r < a.posteriors.rows(); ++r) {
      worst_sum = std::max(worst_sum, std::abs(a.posteriors.row(r).sum() - 1.0));
    }
  }
  return {worst_drop <= 1e-9 && worst_sum <= 1e-9,
          "max LL drop " + Sci(worst_drop) + ", max |row sum - 1| " + Sci(worst_sum) +
              " on 20 datasets (tol 1e-9)"};
}

Outcome StratifierRecovery() {
  Rng rng(4000);
  const oracle::Blobs blobs = oracle::MakeBlobs(rng, 600, 5, 8.0);
  const Standardized s = Standardize(blobs.x);
  bool pass = true;
  std::string detail;
  for (ReducerVariant v : {ReducerVariant::kUmapCore, ReducerVariant::kPca}) {
    const ReducerModel r = FitReducer(s.values, v, ReducerOptions{}, 3);
    const ChooseCResult chosen = ChooseC(r.embedding, 3, 10, 4);
    const ClusterAssignment a = Assign(chosen.model, Transform(r, s.values));
    const double agreement = oracle::BestPermutationAgreement(a.ids, blobs.group, 3);
    pass = pass && agreement >= 0.98;
    detail += ToString(v) + " " + Fixed(agreement) + " (C=" + std::to_string(chosen.components) +
              "), ";
  }
  return {pass, detail + "tol >= 0.98"};
}

// The synthetic benchmark shared by the do-no-harm and fairness criteria.
const RunReport& Benchmark() {
  static const RunReport report = [] {
    RunConfig cfg = RunConfigFromJson(nlohmann::json::object());
    cfg.modes = {RunMode::kBenign, RunMode::kFlare};
    cfg.seeds = {0, 1, 2, 3, 4};
    cfg.landscape = false;
    return RunExperiment(cfg);
  }();
  return report;
}

Outcome DoNoHarm() {
  const RunReport& report = Benchmark();
  int violations = 0;
  double worst = 0.0;
  for (const ClusterDelta& d : report.cluster_deltas) {
    if (d.mode != RunMode::kFlare) continue;
    if (d.val_f1_adapted < d.val_f1_base) ++violations;
    worst = std::min(worst, d.val_f1_adapted - d.val_f1_base);
  }
  const bool complete = report.failures.empty() && !report.cluster_deltas.empty();
  return {complete && violations == 0,
          std::to_string(violations) + " violations over " +
              std::to_string(report.cluster_deltas.size()) + " (seed, fold, cluster) cells, " +
              std::to_string(report.failures.size()) + " failed folds, min delta " +
              Fixed(worst)};
}

Outcome Fairness() {
  const RunReport& report = Benchmark();
  int good_seeds = 0;
  bool f1_guard = true;
  std::string per_seed;
  for (std::uint64_t seed : report.config.seeds) {
    const ModeSummary* base = report.Find(seed, RunMode::kBenign);
    const ModeSummary* cand = report.Find(seed, RunMode::kFlare);
    if (base == nullptr || cand == nullptr) return {false, "missing summaries"};
    const AttributeAudit* audit = nullptr;
    for (const AttributeAudit& a : cand->attributes) {
      if (a.attribute == "group_proxy") audit = &a;
    }
    if (audit == nullptr || !audit->bhe) return {false, "missing group_proxy audit"};
    const double dh = audit->bhe->delta.harm, de = audit->bhe->delta.equity;
    good_seeds += dh >= 0.0 && de > 0.0;
    f1_guard = f1_guard && cand->macro_f1 >= base->macro_f1 - 0.01;
    per_seed += " s" + std::to_string(seed) + "(dH " + Fixed(100 * dh, 2) + " dE " +
                Fixed(100 * de, 2) + " dF1 " + Fixed(100 * (cand->macro_f1 - base->macro_f1), 2) +
                ")";
  }
  return {good_seeds >= 4 && f1_guard,
          std::to_string(good_seeds) + "/5 seeds with dH >= 0 and dE > 0 (need 4), F1 guard " +
              (f1_guard ? "held" : "broken") + ";" + per_seed + " [pp]"};
}

std::vector<PredictionRecord> RandomRecords(Rng& rng, int n, int categories) {
  std::vector<PredictionRecord> out;
  for (int i = 0; i < n; ++i) {
    PredictionRecord r;
    r.person_id = "u" + std::to_string(i % 7);
    r.y_true = static_cast<int>(rng.UniformIndex(2));
    r.y_pred = rng.Bernoulli(0.7) ? r.y_true : 1 - r.y_true;
    r.attributes["group"] = "g" + std::to_string(rng.UniformIndex(static_cast<std::size_t>(categories)));
    out.push_back(r);
  }
  return out;
}

Outcome BheOracle() {
  Rng rng(7000);
  double worst = 0.0;
  bool ordered = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 40 + static_cast<int>(rng.UniformIndex(100));
    const std::vector<PredictionRecord> base = RandomRecords(rng, n, 3);
    std::vector<PredictionRecord> cand = base;
    for (PredictionRecord& r : cand) {
      if (rng.Bernoulli(0.3)) r.y_pred = 1 - r.y_pred;
    }
    const BheReport got = Bhe(SubgroupF1(base, "group"), SubgroupF1(cand, "group"));
    const oracle::BruteBheResult want = oracle::BruteBhe(base, cand, "group");
    for (double diff : {got.base.benefit - want.b_base, got.base.harm - want.h_base,
                        got.base.equity - want.e_base, got.candidate.benefit - want.b_cand,
                        got.candidate.harm - want.h_cand, got.candidate.equity - want.e_cand,
                        got.delta.benefit - want.db, got.delta.harm - want.dh,
                        got.delta.equity - want.de}) {
      worst = std::max(worst, std::abs(diff));
    }
    ordered = ordered && got.delta.harm <= got.delta.benefit;
  }
  return {worst <= 1e-12 && ordered, "max abs diff " + Sci(worst) + " on 50 instances (tol 1e-12), dH <= dB " +
                                         (ordered ? "in all" : "violated")};
}

Outcome OddsOracle() {
  Rng rng(8000);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PredictionRecord> records;
    for (int c = 0; c < 4; ++c) {
      const int tp = 1 + static_cast<int>(rng.UniformIndex(8));
      const int fn = static_cast<int>(rng.UniformIndex(8));
      const int fp = static_cast<int>(rng.UniformIndex(8));
      const int tn = 1 + static_cast<int>(rng.UniformIndex(8));
      const auto add = [&](int count, int truth, int pred) {
        for (int i = 0; i < count; ++i) {
          PredictionRecord r;
          r.person_id = "u";
          r.y_true = truth;
          r.y_pred = pred;
          r.attributes["group"] = "c" + std::to_string(c);
          records.push_back(r);
        }
      };
      add(tp, 1, 1);
      add(fn, 1, 0);
      add(fp, 0, 1);
      add(tn, 0, 0);
    }
    const OddsGaps got = EodAod(records, "group");
    const auto [eod, aod] = oracle::BrutePairwiseOdds(records, "group");
    mismatches += got.eod != eod || got.aod != aod;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches on 50 instances (exact)"};
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome Determinism() {
  RunConfig cfg = RunConfigFromJson(nlohmann::json::object());
  cfg.stratifier.variant = ReducerVariant::kPca;
  cfg.seeds = {0, 1};
  const fs::path root = fs::temp_directory_path() / "flare_acceptance_determinism";
  fs::remove_all(root);
  for (const char* name : {"a", "b"}) EmitReports(RunExperiment(cfg), root / name);
  const std::string a = Slurp(root / "a" / "report.json");
  const std::string b = Slurp(root / "b" / "report.json");
  const bool same = !a.empty() && a == b;
  const std::string detail = "report.json " + std::to_string(a.size()) + " bytes, sha256 " +
                             Sha256File(root / "a" / "report.json").substr(0, 12) +
                             (same ? " identical" : " differs");
  fs::remove_all(root);
  return {same, detail};
}

Outcome LandscapeContract() {
  Rng rng(10000);
  double worst_center = 0.0, worst_dot = 0.0, worst_norm = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkParams params = InitNetwork(oracle::TinySpec(rng), rng.NextU64());
    const Matrix x = oracle::RandomMatrix(rng, 16, params.spec.input_dim());
    const std::vector<int> y = oracle::RandomLabels(rng, 16);
    const LossSpec spec = PretrainLossSpec{{0.5, 0.5}};
    LandscapeOptions opt;
    opt.grid_n = 5;
    opt.seed = static_cast<std::uint64_t>(trial);
    const LossGrid grid = LossSurfaceGrid(params, x, y, spec, opt);
    worst_center = std::max(worst_center, std::abs(grid.center - BatchLoss(params, x, y, spec)));
    const LandscapeDirections d = MakeDirections(params, opt.seed);
    worst_dot = std::max(worst_dot, std::abs(Dot(d.d1, d.d2)));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      const double target = params.layers[l].weight.norm();
      worst_norm = std::max({worst_norm, std::abs(d.d1[l].weight.norm() - target),
                             std::abs(d.d2[l].weight.norm() - target)});
    }
  }
  return {worst_center == 0.0 && worst_dot <= 1e-9 && worst_norm <= 1e-9,
          "center diff " + Sci(worst_center) + " (exact), |<d1,d2>| " + Sci(worst_dot) +
              ", norm diff " + Sci(worst_norm) + " (tol 1e-9)"};
}

struct Criterion {
  const char* id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"C1", "gradient oracle", 10, GradientOracle},
      {"C2", "fisher proxy oracle", 5, FisherOracle},
      {"C3", "em monotonicity", 10, EmMonotone},
      {"C4", "stratifier recovery", 60, StratifierRecovery},
      {"C5", "do-no-harm guarantee", 300, DoNoHarm},
      {"C6", "fairness on planted disparity", 300, Fairness},
      {"C7", "bhe oracle", 60, BheOracle},
      {"C8", "eod/aod pairwise oracle", 60, OddsOracle},
      {"C9", "end-to-end determinism", 600, Determinism},
      {"C10", "landscape contract", 60, LandscapeContract},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds < c.budget_seconds;
    const bool pass = out.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << c.id << ' ' << c.name << ": " << out.detail
              << "; " << Fixed(seconds, 1) << " s (budget " << c.budget_seconds << " s"
              << (in_time ? "" : ", exceeded") << ")" << std::endl;
  }
  std::cout << (criteria.size() - failed) << '/' << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
