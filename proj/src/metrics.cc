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

#include "flare/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "csv_util.h"
#include "flare/errors.h"

namespace flare {
namespace {

struct ClassCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  bool present() const { return tp + fp + fn > 0; }
  double f1() const {
    const long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
};

std::array<ClassCounts, 2> CountClasses(std::span<const int> y_true,
                                        std::span<const int> y_pred) {
  Require(!y_true.empty(), "F1: empty input");
  Require(y_true.size() == y_pred.size(), "F1: truth and prediction lengths differ");
  std::array<ClassCounts, 2> counts{};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    Require((t == 0 || t == 1) && (p == 0 || p == 1), "F1: labels must be 0 or 1");
    for (int k = 0; k < 2; ++k) {
      if (t == k && p == k) ++counts[k].tp;
      if (t != k && p == k) ++counts[k].fp;
      if (t == k && p != k) ++counts[k].fn;
    }
  }
  return counts;
}

double PopulationStd(std::span<const double> values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

void SplitByCategory(std::span<const PredictionRecord> records, const std::string& attribute,
                     std::map<std::string, std::vector<const PredictionRecord*>>& groups) {
  for (const PredictionRecord& record : records) {
    const auto it = record.attributes.find(attribute);
    Require(it != record.attributes.end(),
            "record for person '" + record.person_id + "' lacks attribute '" + attribute + "'");
    groups[it->second].push_back(&record);
  }
}

}  // namespace

F1Kind ParseF1Kind(const std::string& name) {
  if (name == "macro") return F1Kind::kMacro;
  if (name == "positive") return F1Kind::kPositive;
  throw ValidationError("unknown f1 kind '" + name + "'");
}

std::string ToString(F1Kind kind) { return kind == F1Kind::kMacro ? "macro" : "positive"; }

double MacroF1(std::span<const int> y_true, std::span<const int> y_pred) {
  const auto counts = CountClasses(y_true, y_pred);
  double sum = 0.0;
  int included = 0;
  for (const ClassCounts& c : counts) {
    if (!c.present()) continue;
    sum += c.f1();
    ++included;
  }
  return sum / included;
}

double PositiveF1(std::span<const int> y_true, std::span<const int> y_pred) {
  return CountClasses(y_true, y_pred)[1].f1();
}

double F1Score(std::span<const int> y_true, std::span<const int> y_pred, F1Kind kind) {
  return kind == F1Kind::kMacro ? MacroF1(y_true, y_pred) : PositiveF1(y_true, y_pred);
}

double MacroF1(std::span<const PredictionRecord> records) {
  std::vector<int> t, p;
  t.reserve(records.size());
  p.reserve(records.size());
  for (const PredictionRecord& r : records) {
    t.push_back(r.y_true);
    p.push_back(r.y_pred);
  }
  return MacroF1(t, p);
}

std::vector<double> SubgroupScores::values() const {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& [category, score] : scores) out.push_back(score);
  return out;
}

SubgroupScores SubgroupF1(std::span<const PredictionRecord> records,
                          const std::string& attribute, F1Kind kind) {
  std::map<std::string, std::vector<const PredictionRecord*>> groups;
  SplitByCategory(records, attribute, groups);
  SubgroupScores result;
  result.attribute = attribute;
  for (const auto& [category, members] : groups) {
    std::vector<int> t, p;
    for (const PredictionRecord* r : members) {
      t.push_back(r->y_true);
      p.push_back(r->y_pred);
    }
    result.scores.emplace_back(category, F1Score(t, p, kind));
  }
  Require(!result.scores.empty(), "SubgroupF1: no records");
  return result;
}

BheTriple SummarizeScores(std::span<const double> scores) {
  Require(!scores.empty(), "SummarizeScores: empty score set");
  BheTriple triple;
  double sum = 0.0;
  for (double s : scores) sum += s;
  triple.benefit = sum / static_cast<double>(scores.size());
  triple.harm = *std::min_element(scores.begin(), scores.end());
  triple.equity = PopulationStd(scores);
  return triple;
}

BheReport Bhe(const SubgroupScores& base, const SubgroupScores& candidate) {
  Require(base.scores.size() == candidate.scores.size(),
          "Bhe: base and candidate have different category sets");
  for (std::size_t i = 0; i < base.scores.size(); ++i) {
    Require(base.scores[i].first == candidate.scores[i].first,
            "Bhe: category '" + base.scores[i].first + "' has no candidate counterpart");
  }
  const std::vector<double> b = base.values();
  const std::vector<double> c = candidate.values();
  BheReport report;
  report.attribute = base.attribute;
  report.base = SummarizeScores(b);
  report.candidate = SummarizeScores(c);
  report.delta.benefit = report.candidate.benefit - report.base.benefit;
  report.delta.equity = report.base.equity - report.candidate.equity;
  double min_diff = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < b.size(); ++i) min_diff = std::min(min_diff, c[i] - b[i]);
  report.delta.harm = min_diff;
  return report;
}

OddsGaps EodAod(std::span<const PredictionRecord> records, const std::string& attribute) {
  std::map<std::string, std::vector<const PredictionRecord*>> groups;
  SplitByCategory(records, attribute, groups);
  struct Rates {
    double tpr = 0.0, fpr = 0.0;
    bool has_pos = false, has_neg = false;
  };
  std::vector<Rates> rates;
  for (const auto& [category, members] : groups) {
    long tp = 0, pos = 0, fp = 0, neg = 0;
    for (const PredictionRecord* r : members) {
      if (r->y_true == 1) {
        ++pos;
        tp += r->y_pred == 1;
      } else {
        ++neg;
        fp += r->y_pred == 1;
      }
    }
    Rates rate;
    rate.has_pos = pos > 0;
    rate.has_neg = neg > 0;
    if (rate.has_pos) rate.tpr = static_cast<double>(tp) / static_cast<double>(pos);
    if (rate.has_neg) rate.fpr = static_cast<double>(fp) / static_cast<double>(neg);
    rates.push_back(rate);
  }

  OddsGaps gaps;
  int eod_pairs = 0, aod_pairs = 0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    for (std::size_t j = i + 1; j < rates.size(); ++j) {
      if (rates[i].has_pos && rates[j].has_pos) {
        gaps.eod = std::max(gaps.eod, std::abs(rates[i].tpr - rates[j].tpr));
        ++eod_pairs;
      }
      if (rates[i].has_pos && rates[j].has_pos && rates[i].has_neg && rates[j].has_neg) {
        gaps.aod = std::max(gaps.aod, 0.5 * (std::abs(rates[i].tpr - rates[j].tpr) +
                                             std::abs(rates[i].fpr - rates[j].fpr)));
        ++aod_pairs;
      }
    }
  }
  Require(eod_pairs > 0 && aod_pairs > 0,
          "EodAod: attribute '" + attribute + "' has fewer than two usable categories");
  return gaps;
}

RelativeDisparity ComputeRelativeDisparity(const SubgroupScores& scores) {
  const std::vector<double> values = scores.values();
  Require(!values.empty(), "RelativeDisparity: empty score set");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  RelativeDisparity rd;
  if (*lo <= 0.0) {
    rd.ratio = std::numeric_limits<double>::infinity();
    rd.acceptable = false;
    return rd;
  }
  rd.ratio = *hi / *lo;
  rd.acceptable = rd.ratio < 1.25;
  return rd;
}

UserSlices ComputeUserSlices(std::span<const PredictionRecord> records, F1Kind kind) {
  Require(!records.empty(), "UserSlices: empty input");
  std::vector<PredictionRecord> keyed(records.begin(), records.end());
  for (PredictionRecord& r : keyed) r.attributes["person_id"] = r.person_id;
  UserSlices slices;
  slices.per_person = SubgroupF1(keyed, "person_id", kind);
  const std::vector<double> values = slices.per_person.values();
  const BheTriple summary = SummarizeScores(values);
  slices.mean = summary.benefit;
  slices.std = summary.equity;
  return slices;
}

std::vector<std::string> CommonAttributes(std::span<const PredictionRecord> records) {
  if (records.empty()) return {};
  std::vector<std::string> names;
  for (const auto& [name, value] : records.front().attributes) {
    const bool everywhere = std::all_of(records.begin(), records.end(),
                                        [&](const PredictionRecord& r) {
                                          return r.attributes.count(name) > 0;
                                        });
    if (everywhere) names.push_back(name);
  }
  return names;
}

std::vector<PredictionRecord> LoadPredictionCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), "cannot open prediction file " + path.string());
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)), "prediction file is empty");
  const std::vector<std::string> header = csv::SplitLine(line);
  Require(header.size() >= 4 && header[0] == "person_id" && header[1] == "fold" &&
              header[2] == "y_true" && header[3] == "y_pred",
          "prediction header must start with person_id,fold,y_true,y_pred");
  std::vector<std::string> attributes;
  for (std::size_t i = 4; i < header.size(); ++i) {
    Require(header[i].rfind("attr:", 0) == 0,
            "unexpected prediction column '" + header[i] + "'");
    attributes.push_back(header[i].substr(5));
  }
  std::vector<PredictionRecord> records;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = csv::SplitLine(line);
    const std::string where = "prediction row " + std::to_string(row);
    Require(fields.size() == header.size(), where + ": wrong number of fields");
    PredictionRecord record;
    record.person_id = fields[0];
    const auto fold = csv::ParseInt(fields[1]);
    const auto y_true = csv::ParseInt(fields[2]);
    const auto y_pred = csv::ParseInt(fields[3]);
    Require(fold.has_value(), where + ": fold is not an integer");
    Require(y_true && (*y_true == 0 || *y_true == 1), where + ": y_true must be 0 or 1");
    Require(y_pred && (*y_pred == 0 || *y_pred == 1), where + ": y_pred must be 0 or 1");
    record.fold = static_cast<int>(*fold);
    record.y_true = static_cast<int>(*y_true);
    record.y_pred = static_cast<int>(*y_pred);
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      record.attributes[attributes[a]] = fields[4 + a];
    }
    records.push_back(std::move(record));
  }
  return records;
}

void SavePredictionCsv(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  const std::vector<std::string> attributes = CommonAttributes(records);
  out << "person_id,fold,y_true,y_pred";
  for (const std::string& name : attributes) out << ",attr:" << name;
  out << '\n';
  for (const PredictionRecord& r : records) {
    out << r.person_id << ',' << r.fold << ',' << r.y_true << ',' << r.y_pred;
    for (const std::string& name : attributes) out << ',' << r.attributes.at(name);
    out << '\n';
  }
}

}  // namespace flare
