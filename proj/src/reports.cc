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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <openssl/evp.h>

#include "csv_util.h"
#include "flare/checkpoint.h"
#include "flare/errors.h"
#include "flare/harness.h"

namespace flare {

using nlohmann::json;

namespace {

json TripleToJson(const BheTriple& t) {
  return {{"B", t.benefit}, {"H", t.harm}, {"E", t.equity}};
}

json ScoresToJson(const SubgroupScores& scores) {
  json out = json::object();
  for (const auto& [category, score] : scores.scores) out[category] = score;
  return out;
}

json SummaryToJson(const ModeSummary& s) {
  json attributes = json::array();
  for (const AttributeAudit& a : s.attributes) {
    json item = {{"attribute", a.attribute},
                 {"subgroup_f1", ScoresToJson(a.scores)},
                 {"relative_disparity",
                  {{"ratio", std::isfinite(a.disparity.ratio) ? json(a.disparity.ratio)
                                                              : json("inf")},
                   {"acceptable", a.disparity.acceptable}}}};
    if (a.odds) item["odds"] = {{"eod", a.odds->eod}, {"aod", a.odds->aod}};
    if (a.bhe) {
      item["bhe"] = {{"base", TripleToJson(a.bhe->base)},
                     {"candidate", TripleToJson(a.bhe->candidate)},
                     {"delta",
                      {{"dB", a.bhe->delta.benefit},
                       {"dH", a.bhe->delta.harm},
                       {"dE", a.bhe->delta.equity}}}};
    }
    attributes.push_back(std::move(item));
  }
  return {{"seed", s.seed},
          {"mode", ToString(s.mode)},
          {"records", s.records},
          {"macro_f1", s.macro_f1},
          {"user_f1_mean", s.user_f1_mean},
          {"user_f1_std", s.user_f1_std},
          {"attributes", std::move(attributes)}};
}

std::string Percent(double value) { return csv::FormatFixed(100.0 * value, 2); }

std::string Number(double value) {
  return std::isfinite(value) ? csv::FormatDouble(value) : std::string("nan");
}

}  // namespace

json ReportToJson(const RunReport& report) {
  json summaries = json::array();
  for (const ModeSummary& s : report.summaries) summaries.push_back(SummaryToJson(s));
  json folds = json::array();
  for (const FoldMetric& m : report.fold_metrics) {
    folds.push_back({{"seed", m.seed},
                     {"fold", m.fold},
                     {"mode", ToString(m.mode)},
                     {"macro_f1", m.macro_f1},
                     {"num_clusters", m.num_clusters},
                     {"pretrain_best_epoch", m.pretrain_best_epoch},
                     {"adapt_epochs", m.adapt_epochs}});
  }
  json clusters = json::array();
  for (const ClusterDelta& d : report.cluster_deltas) {
    clusters.push_back({{"seed", d.seed},
                        {"fold", d.fold},
                        {"mode", ToString(d.mode)},
                        {"cluster", d.cluster},
                        {"n_train2", d.n_train2},
                        {"n_val", d.n_val},
                        {"n_test", d.n_test},
                        {"val_f1_base", d.val_f1_base},
                        {"val_f1_adapted", d.val_f1_adapted},
                        {"test_f1_base", d.test_f1_base},
                        {"test_f1_adapted", d.test_f1_adapted}});
  }
  json failures = json::array();
  for (const FoldFailure& f : report.failures) {
    failures.push_back(
        {{"seed", f.seed}, {"fold", f.fold}, {"phase", f.phase}, {"message", f.message}});
  }
  json landscapes = json::array();
  for (const LandscapeResult& l : report.landscapes) {
    const double lowest = l.grid.loss.minCoeff();
    landscapes.push_back({{"mode", ToString(l.mode)},
                          {"center", l.grid.center},
                          {"min", lowest},
                          {"center_is_min", l.grid.center <= lowest}});
  }
  const std::optional<RunMode> candidate = report.config.Candidate();
  json out = {{"config", RunConfigToJson(report.config)},
              {"candidate_name", candidate ? ToString(*candidate) : std::string()},
              {"summaries", std::move(summaries)},
              {"folds", std::move(folds)},
              {"failures", std::move(failures)},
              {"landscapes", std::move(landscapes)}};
  if (!report.cluster_deltas.empty()) out["cluster_deltas"] = std::move(clusters);
  return out;
}

std::vector<BheReport> AverageBhe(const RunReport& report, RunMode mode) {
  std::map<std::string, std::pair<BheReport, int>> sums;
  std::vector<std::string> order;
  for (const ModeSummary& s : report.summaries) {
    if (s.mode != mode) continue;
    for (const AttributeAudit& a : s.attributes) {
      if (!a.bhe) continue;
      auto [it, inserted] = sums.try_emplace(a.attribute, BheReport{a.attribute, {}, {}, {}}, 0);
      if (inserted) order.push_back(a.attribute);
      BheReport& acc = it->second.first;
      for (auto [dst, src] : {std::pair{&acc.base, &a.bhe->base},
                              std::pair{&acc.candidate, &a.bhe->candidate},
                              std::pair{&acc.delta, &a.bhe->delta}}) {
        dst->benefit += src->benefit;
        dst->harm += src->harm;
        dst->equity += src->equity;
      }
      ++it->second.second;
    }
  }
  std::vector<BheReport> out;
  for (const std::string& name : order) {
    auto [acc, n] = sums.at(name);
    for (BheTriple* t : {&acc.base, &acc.candidate, &acc.delta}) {
      t->benefit /= n;
      t->harm /= n;
      t->equity /= n;
    }
    out.push_back(acc);
  }
  return out;
}

void SaveBheCsv(const std::filesystem::path& path, const std::vector<BheReport>& rows) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "Subgroup,B_base,H_base,E_base,B_cand,H_cand,E_cand,dB,dH,dE\n";
  for (const BheReport& r : rows) {
    out << r.attribute << ',' << Percent(r.base.benefit) << ',' << Percent(r.base.harm) << ','
        << Percent(r.base.equity) << ',' << Percent(r.candidate.benefit) << ','
        << Percent(r.candidate.harm) << ',' << Percent(r.candidate.equity) << ','
        << Percent(r.delta.benefit) << ',' << Percent(r.delta.harm) << ','
        << Percent(r.delta.equity) << '\n';
  }
}

std::string Sha256File(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  Require(ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1,
          "sha256: digest init failed");
  char buffer[1 << 14];
  while (in) {
    in.read(buffer, sizeof(buffer));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buffer, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest, &length);
  EVP_MD_CTX_free(ctx);
  static const char* kHex = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 0xf];
  }
  return hex;
}

void WriteManifest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::filesystem::path rel = std::filesystem::relative(entry.path(), dir);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& rel : files) {
    list.push_back({{"path", rel.generic_string()},
                    {"bytes", std::filesystem::file_size(dir / rel)},
                    {"sha256", Sha256File(dir / rel)}});
  }
  WriteJsonFile(dir / "manifest.json", {{"files", std::move(list)}});
}

void EmitReports(const RunReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  WriteJsonFile(out_dir / "report.json", ReportToJson(report));

  json timing = json::object();
  for (const PhaseTiming& t : report.timings) timing[t.phase] = t.seconds;
  WriteJsonFile(out_dir / "timing.json", timing);

  const std::optional<RunMode> candidate = report.config.Candidate();
  SaveBheCsv(out_dir / "bhe.csv",
             candidate ? AverageBhe(report, *candidate) : std::vector<BheReport>{});
  for (RunMode mode : report.config.EffectiveModes()) {
    if (mode == RunMode::kBenign) continue;
    SaveBheCsv(out_dir / ("bhe_" + ToString(mode) + ".csv"), AverageBhe(report, mode));
  }

  {
    std::ofstream out(out_dir / "fold_cluster_delta.csv");
    Require(out.good(), "cannot write fold_cluster_delta.csv");
    out << "seed,fold,mode,cluster,n_train2,n_val,n_test,val_f1_base,val_f1_adapted,delta_val,"
           "test_f1_base,test_f1_adapted,delta_test\n";
    for (const ClusterDelta& d : report.cluster_deltas) {
      out << d.seed << ',' << d.fold << ',' << ToString(d.mode) << ',' << d.cluster << ','
          << d.n_train2 << ',' << d.n_val << ',' << d.n_test << ',' << Number(d.val_f1_base) << ','
          << Number(d.val_f1_adapted) << ',' << Number(d.val_f1_adapted - d.val_f1_base) << ','
          << Number(d.test_f1_base) << ',' << Number(d.test_f1_adapted) << ','
          << Number(d.test_f1_adapted - d.test_f1_base) << '\n';
    }
  }

  for (const LandscapeResult& l : report.landscapes) {
    SaveLandscapeCsv(out_dir / ("landscape_" + ToString(l.mode) + ".csv"), l.grid);
  }

  {
    std::set<std::string> names;
    for (const PooledPrediction& p : report.predictions) {
      for (const auto& [name, value] : p.record.attributes) names.insert(name);
    }
    std::ofstream out(out_dir / "predictions.csv");
    Require(out.good(), "cannot write predictions.csv");
    out << "seed,mode,person_id,fold,y_true,y_pred,cluster_id";
    for (const std::string& name : names) out << ",attr:" << name;
    out << '\n';
    for (const PooledPrediction& p : report.predictions) {
      out << p.seed << ',' << ToString(p.mode) << ',' << p.record.person_id << ','
          << p.record.fold << ',' << p.record.y_true << ',' << p.record.y_pred << ','
          << p.cluster_id;
      for (const std::string& name : names) {
        const auto it = p.record.attributes.find(name);
        out << ',' << (it == p.record.attributes.end() ? std::string() : it->second);
      }
      out << '\n';
    }
  }
  WriteManifest(out_dir);
}

}  // namespace flare
