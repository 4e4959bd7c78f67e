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

#include "flare/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "csv_util.h"
#include "flare/errors.h"
#include "flare/rng.h"

namespace flare {

using nlohmann::json;

Dataset::Dataset(int feature_dim, std::vector<std::string> attribute_names)
    : feature_dim_(feature_dim), attribute_names_(std::move(attribute_names)) {
  Require(feature_dim > 0, "dataset feature dim must be positive");
}

void Dataset::Add(Sample sample) {
  Require(static_cast<int>(sample.features.size()) == feature_dim_,
          "sample has " + std::to_string(sample.features.size()) + " features, expected " +
              std::to_string(feature_dim_));
  Require(sample.label == 0 || sample.label == 1, "sample label must be 0 or 1");
  for (const std::string& name : attribute_names_) {
    Require(sample.attributes.count(name) > 0, "sample lacks attribute '" + name + "'");
  }
  samples_.push_back(std::move(sample));
}

std::vector<std::string> Dataset::Persons() const {
  std::set<std::string> ids;
  for (const Sample& s : samples_) ids.insert(s.person_id);
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> Dataset::RowsForPersons(std::span<const std::string> persons) const {
  const std::set<std::string> wanted(persons.begin(), persons.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (wanted.count(samples_[i].person_id)) rows.push_back(i);
  }
  return rows;
}

TrainingView::TrainingView(const Dataset& dataset, std::vector<std::size_t> rows)
    : rows_(std::move(rows)) {
  features_.resize(static_cast<Eigen::Index>(rows_.size()), dataset.feature_dim());
  labels_.reserve(rows_.size());
  person_ids_.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Sample& s = dataset[rows_[i]];
    for (int c = 0; c < dataset.feature_dim(); ++c) {
      features_(static_cast<Eigen::Index>(i), c) = s.features[static_cast<std::size_t>(c)];
    }
    labels_.push_back(s.label);
    person_ids_.push_back(s.person_id);
  }
}

TrainingView TrainingView::Subset(std::span<const std::size_t> positions) const {
  TrainingView view;
  view.features_ = GatherFeatures(positions);
  view.labels_ = GatherLabels(positions);
  for (std::size_t p : positions) {
    view.person_ids_.push_back(person_ids_.at(p));
    view.rows_.push_back(rows_.at(p));
  }
  return view;
}

Matrix TrainingView::GatherFeatures(std::span<const std::size_t> positions) const {
  Matrix out(static_cast<Eigen::Index>(positions.size()), features_.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(positions[i]));
  }
  return out;
}

std::vector<int> TrainingView::GatherLabels(std::span<const std::size_t> positions) const {
  std::vector<int> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(labels_.at(p));
  return out;
}

Dataset LoadCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  Require(in.good(), "cannot open dataset " + path.string());
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)), path.string() + ": empty file");
  const std::vector<std::string> header = csv::SplitLine(line);
  Require(header.size() >= 3, path.string() + ": header needs person_id, label and features");
  Require(header[0] == "person_id", path.string() + ": missing column person_id");
  Require(header[1] == "label", path.string() + ": missing column label");
  std::vector<std::string> attributes;
  std::size_t col = 2;
  while (col < header.size() && header[col].rfind("attr:", 0) == 0) {
    attributes.push_back(header[col].substr(5));
    ++col;
  }
  const std::size_t first_feature = col;
  const int dim = static_cast<int>(header.size() - first_feature);
  Require(dim > 0, path.string() + ": missing feature columns x0..");
  for (int j = 0; j < dim; ++j) {
    Require(header[first_feature + static_cast<std::size_t>(j)] == "x" + std::to_string(j),
            path.string() + ": missing column x" + std::to_string(j));
  }

  Dataset dataset(dim, attributes);
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = csv::SplitLine(line);
    const std::string where = path.string() + " row " + std::to_string(row);
    Require(fields.size() == header.size(),
            where + ": ragged row (" + std::to_string(fields.size()) + " fields, expected " +
                std::to_string(header.size()) + ")");
    Sample sample;
    sample.person_id = fields[0];
    Require(!sample.person_id.empty(), where + ": empty person_id");
    const auto label = csv::ParseInt(fields[1]);
    Require(label && (*label == 0 || *label == 1),
            where + ": label '" + fields[1] + "' is not 0 or 1");
    sample.label = static_cast<int>(*label);
    for (std::size_t a = 0; a < attributes.size(); ++a) {
      sample.attributes[attributes[a]] = fields[2 + a];
    }
    for (int j = 0; j < dim; ++j) {
      const std::string& text = fields[first_feature + static_cast<std::size_t>(j)];
      const auto value = csv::ParseDouble(text);
      Require(value && std::isfinite(*value),
              where + ": feature x" + std::to_string(j) + " '" + text + "' is not a finite number");
      sample.features.push_back(*value);
    }
    dataset.Add(std::move(sample));
  }
  return dataset;
}

void SaveCsv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "person_id,label";
  for (const std::string& name : dataset.attribute_names()) out << ",attr:" << name;
  for (int j = 0; j < dataset.feature_dim(); ++j) out << ",x" << j;
  out << '\n';
  for (const Sample& s : dataset.samples()) {
    out << s.person_id << ',' << s.label;
    for (const std::string& name : dataset.attribute_names()) out << ',' << s.attributes.at(name);
    for (double v : s.features) out << ',' << csv::FormatDouble(v);
    out << '\n';
  }
}

FoldPlan MakeFolds(const Dataset& dataset, int k, double holdout_fraction,
                   std::uint64_t seed) {
  std::vector<std::string> persons = dataset.Persons();
  Require(k >= 1, "fold count must be at least 1");
  Require(static_cast<std::size_t>(k) <= persons.size(),
          "fold count " + std::to_string(k) + " exceeds person count " +
              std::to_string(persons.size()));
  Require(holdout_fraction >= 0.0 && holdout_fraction < 1.0,
          "holdout fraction must lie in [0, 1)");
  const Rng root(seed);
  Rng deal = root.Split({0});
  deal.Shuffle(persons);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < persons.size(); ++i) {
    plan.folds[i % static_cast<std::size_t>(k)].test_persons.push_back(persons[i]);
  }
  for (int f = 0; f < k; ++f) {
    Fold& fold = plan.folds[static_cast<std::size_t>(f)];
    const std::set<std::string> test(fold.test_persons.begin(), fold.test_persons.end());
    std::vector<std::string> rest;
    for (const std::string& p : persons) {
      if (!test.count(p)) rest.push_back(p);
    }
    Rng split = root.Split({1, static_cast<std::uint64_t>(f)});
    split.Shuffle(rest);
    const auto holdout =
        static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(rest.size())));
    fold.holdout_persons.assign(rest.begin(), rest.begin() + static_cast<long>(holdout));
    fold.train_persons.assign(rest.begin() + static_cast<long>(holdout), rest.end());
    std::sort(fold.test_persons.begin(), fold.test_persons.end());
    std::sort(fold.holdout_persons.begin(), fold.holdout_persons.end());
    std::sort(fold.train_persons.begin(), fold.train_persons.end());
  }
  return plan;
}

json FoldPlanToJson(const FoldPlan& plan) {
  json folds = json::array();
  for (const Fold& fold : plan.folds) {
    folds.push_back({{"test", fold.test_persons},
                     {"train", fold.train_persons},
                     {"holdout_train", fold.holdout_persons}});
  }
  return {{"k", plan.k}, {"seed", plan.seed}, {"folds", std::move(folds)}};
}

FoldPlan FoldPlanFromJson(const json& in) {
  FoldPlan plan;
  try {
    plan.k = in.at("k").get<int>();
    plan.seed = in.value("seed", std::uint64_t{0});
    for (const json& f : in.at("folds")) {
      Fold fold;
      fold.test_persons = f.at("test").get<std::vector<std::string>>();
      fold.train_persons = f.at("train").get<std::vector<std::string>>();
      fold.holdout_persons = f.at("holdout_train").get<std::vector<std::string>>();
      plan.folds.push_back(std::move(fold));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("fold plan: ") + e.what());
  }
  Require(static_cast<int>(plan.folds.size()) == plan.k, "fold plan: k does not match folds");
  return plan;
}

void SynthConfig::Validate() const {
  Require(persons >= 1 && samples_per_person >= 1, "synth: persons and samples must be positive");
  Require(groups >= 2, "synth: need at least two groups");
  Require(feature_dim >= groups + 2,
          "synth: feature_dim must be at least groups + 2 (centroid and rule dims)");
  Require(static_cast<int>(noise_rates.size()) == groups,
          "synth: noise_rates needs one entry per group");
  Require(static_cast<int>(rotation_degrees.size()) == groups,
          "synth: rotation_degrees needs one entry per group");
  for (double r : noise_rates) Require(r >= 0.0 && r < 0.5, "synth: noise rates must lie in [0, 0.5)");
  Require(separation >= 0.0 && person_shift >= 0.0, "synth: scales must be non-negative");
  Require(proxy_agreement >= 0.0 && proxy_agreement <= 1.0,
          "synth: proxy_agreement must lie in [0, 1]");
}

json SynthConfigToJson(const SynthConfig& cfg) {
  return {{"persons", cfg.persons},
          {"samples_per_person", cfg.samples_per_person},
          {"feature_dim", cfg.feature_dim},
          {"groups", cfg.groups},
          {"separation", cfg.separation},
          {"person_shift", cfg.person_shift},
          {"noise_rates", cfg.noise_rates},
          {"rotation_degrees", cfg.rotation_degrees},
          {"proxy_agreement", cfg.proxy_agreement}};
}

SynthConfig SynthConfigFromJson(const json& in) {
  SynthConfig cfg;
  try {
    cfg.persons = in.value("persons", cfg.persons);
    cfg.samples_per_person = in.value("samples_per_person", cfg.samples_per_person);
    cfg.feature_dim = in.value("feature_dim", cfg.feature_dim);
    cfg.groups = in.value("groups", cfg.groups);
    cfg.separation = in.value("separation", cfg.separation);
    cfg.person_shift = in.value("person_shift", cfg.person_shift);
    cfg.noise_rates = in.value("noise_rates", cfg.noise_rates);
    cfg.rotation_degrees = in.value("rotation_degrees", cfg.rotation_degrees);
    cfg.proxy_agreement = in.value("proxy_agreement", cfg.proxy_agreement);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

Dataset SynthGenerate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  const int d = cfg.feature_dim;
  const Rng root(seed);

  // Centroids on scaled unit axes are pairwise `separation` apart.
  const double axis = cfg.separation / std::numbers::sqrt2;
  const int rule_a = cfg.groups;
  const int rule_b = cfg.groups + 1;

  std::vector<int> person_group(static_cast<std::size_t>(cfg.persons));
  for (int p = 0; p < cfg.persons; ++p) person_group[static_cast<std::size_t>(p)] = p % cfg.groups;
  Rng assign = root.Split({0});
  assign.Shuffle(person_group);

  const int width = static_cast<int>(std::to_string(cfg.persons - 1).size());
  Dataset dataset(d, {"group_proxy", "noisy_proxy"});
  for (int p = 0; p < cfg.persons; ++p) {
    Rng rng = root.Split({1, static_cast<std::uint64_t>(p)});
    const int group = person_group[static_cast<std::size_t>(p)];
    std::string id = std::to_string(p);
    id = "p" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;

    int proxy = group;
    if (!rng.Bernoulli(cfg.proxy_agreement)) {
      proxy = (group + 1 + static_cast<int>(rng.UniformIndex(
                               static_cast<std::size_t>(cfg.groups - 1)))) %
              cfg.groups;
    }
    std::vector<double> offset(static_cast<std::size_t>(d));
    for (double& o : offset) o = cfg.person_shift * rng.Normal();

    const double theta = cfg.rotation_degrees[static_cast<std::size_t>(group)] *
                         std::numbers::pi / 180.0;
    const double noise = cfg.noise_rates[static_cast<std::size_t>(group)];
    for (int s = 0; s < cfg.samples_per_person; ++s) {
      Sample sample;
      sample.person_id = id;
      sample.features.resize(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        const double center = j == group ? axis : 0.0;
        sample.features[static_cast<std::size_t>(j)] =
            center + offset[static_cast<std::size_t>(j)] + rng.Normal();
      }
      const double score =
          std::cos(theta) * sample.features[static_cast<std::size_t>(rule_a)] +
          std::sin(theta) * sample.features[static_cast<std::size_t>(rule_b)];
      int label = score > 0.0 ? 1 : 0;
      if (rng.Bernoulli(noise)) label = 1 - label;
      sample.label = label;
      sample.attributes["group_proxy"] = "g" + std::to_string(group);
      sample.attributes["noisy_proxy"] = "g" + std::to_string(proxy);
      dataset.Add(std::move(sample));
    }
  }
  return dataset;
}

DatasetSummary Summarize(const Dataset& dataset) {
  DatasetSummary summary;
  summary.persons = dataset.Persons().size();
  summary.samples = dataset.size();
  for (const Sample& s : dataset.samples()) {
    (s.label == 1 ? summary.positives : summary.negatives) += 1;
    for (const auto& [name, value] : s.attributes) ++summary.category_counts[name][value];
  }
  return summary;
}

json SummaryToJson(const DatasetSummary& summary) {
  return {{"persons", summary.persons},
          {"samples", summary.samples},
          {"positives", summary.positives},
          {"negatives", summary.negatives},
          {"category_counts", summary.category_counts}};
}

}  // namespace flare
