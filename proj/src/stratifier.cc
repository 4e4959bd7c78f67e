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

#include "flare/stratifier.h"

#include <algorithm>
#include <fstream>

#include "csv_util.h"
#include "flare/errors.h"

namespace flare {

using nlohmann::json;

void StratifierConfig::Validate() const {
  Require(c_init >= 1, "stratifier: c_init must be at least 1");
  Require(reducer.n_neighbors >= 1, "stratifier: n_neighbors must be at least 1");
  Require(reducer.target_dim >= 1, "stratifier: target_dim must be at least 1");
  Require(reducer.epochs >= 1, "stratifier: layout epochs must be at least 1");
  Require(gmm.max_iter >= 1 && gmm.tol >= 0.0 && gmm.variance_floor > 0.0,
          "stratifier: invalid mixture options");
}

json StratifierConfigToJson(const StratifierConfig& cfg) {
  return {{"variant", ToString(cfg.variant)},
          {"c_init", cfg.c_init},
          {"n_neighbors", cfg.reducer.n_neighbors},
          {"target_dim", cfg.reducer.target_dim},
          {"layout_epochs", cfg.reducer.epochs},
          {"min_dist", cfg.reducer.min_dist},
          {"min_cluster_size", cfg.min_cluster_size},
          {"fisher_variant", ToString(cfg.fisher_variant)},
          {"gmm_max_iter", cfg.gmm.max_iter},
          {"gmm_tol", cfg.gmm.tol},
          {"seed", cfg.seed}};
}

StratifierConfig StratifierConfigFromJson(const json& in) {
  StratifierConfig cfg;
  try {
    cfg.variant = ParseReducerVariant(in.value("variant", ToString(cfg.variant)));
    cfg.c_init = in.value("c_init", cfg.c_init);
    cfg.reducer.n_neighbors = in.value("n_neighbors", cfg.reducer.n_neighbors);
    cfg.reducer.target_dim = in.value("target_dim", cfg.reducer.target_dim);
    cfg.reducer.epochs = in.value("layout_epochs", cfg.reducer.epochs);
    cfg.reducer.min_dist = in.value("min_dist", cfg.reducer.min_dist);
    cfg.min_cluster_size = in.value("min_cluster_size", cfg.min_cluster_size);
    cfg.fisher_variant = ParseFisherVariant(in.value("fisher_variant", ToString(cfg.fisher_variant)));
    cfg.gmm.max_iter = in.value("gmm_max_iter", cfg.gmm.max_iter);
    cfg.gmm.tol = in.value("gmm_tol", cfg.gmm.tol);
    cfg.seed = in.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("stratifier config: ") + e.what());
  }
  cfg.Validate();
  return cfg;
}

namespace {

int DistinctRows(const Matrix& rows) {
  std::vector<std::vector<double>> all;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    all.emplace_back(rows.row(r).data(), rows.row(r).data() + rows.cols());
  }
  std::sort(all.begin(), all.end());
  return static_cast<int>(std::unique(all.begin(), all.end()) - all.begin());
}

}  // namespace

StratifierFit FitStratifier(const NetworkParams& theta, const TrainingView& train,
                            const StratifierConfig& cfg) {
  cfg.Validate();
  Require(!train.empty(), "stratifier: empty training set");
  const DescriptorSet all = ExtractDescriptors(theta, train.features(), train.labels(),
                                               LabelSource::kTrueLabel, cfg.fisher_variant);
  StratifierFit fit;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.predictions[i] == train.labels()[i]) fit.fit_positions.push_back(i);
  }
  Require(fit.fit_positions.size() >= 2,
          "stratifier: need at least 2 correctly classified training samples");

  const Matrix stacked = all.Stacked();
  Matrix fit_rows(static_cast<Eigen::Index>(fit.fit_positions.size()), stacked.cols());
  for (std::size_t i = 0; i < fit.fit_positions.size(); ++i) {
    fit_rows.row(static_cast<Eigen::Index>(i)) =
        stacked.row(static_cast<Eigen::Index>(fit.fit_positions[i]));
  }
  const Standardized standardized = Standardize(fit_rows);

  ReducerOptions reducer_options = cfg.reducer;
  reducer_options.target_dim = std::min<int>(reducer_options.target_dim,
                                             static_cast<int>(fit_rows.cols()));
  reducer_options.n_neighbors =
      std::min<int>(reducer_options.n_neighbors, static_cast<int>(fit_rows.rows()) - 1);
  const Rng root(cfg.seed);
  StratifierModel& model = fit.model;
  model.fisher_variant = cfg.fisher_variant;
  model.stats = standardized.stats;
  model.reducer =
      FitReducer(standardized.values, cfg.variant, reducer_options, root.Split({0}).NextU64());

  const std::size_t min_size =
      cfg.min_cluster_size > 0
          ? cfg.min_cluster_size
          : std::max<std::size_t>(10, fit.fit_positions.size() / 100);
  // More components than distinct descriptors would only split copies.
  const int c_init = std::min<int>(cfg.c_init, DistinctRows(standardized.values));
  model.gmm =
      ChooseC(model.reducer.embedding, c_init, min_size, root.Split({1}).NextU64(), cfg.gmm).model;
  fit.train_assignment = AssignDescriptors(model, all);
  return fit;
}

ClusterAssignment AssignDescriptors(const StratifierModel& model,
                                    const DescriptorSet& descriptors) {
  const Matrix standardized = model.stats.Apply(descriptors.Stacked());
  return Assign(model.gmm, Transform(model.reducer, standardized));
}

ClusterAssignment Route(const StratifierModel& model, const NetworkParams& theta,
                        const Matrix& features) {
  return AssignDescriptors(model, ExtractDescriptors(theta, features, {}, LabelSource::kPseudoLabel,
                                                     model.fisher_variant));
}

json StratifierToJson(const StratifierModel& model) {
  return {{"stats", StatsToJson(model.stats)},
          {"reducer", ReducerToJson(model.reducer)},
          {"gmm", GmmToJson(model.gmm)},
          {"fisher_variant", ToString(model.fisher_variant)}};
}

StratifierModel StratifierFromJson(const json& in) {
  StratifierModel model;
  try {
    model.stats = StatsFromJson(in.at("stats"));
    model.reducer = ReducerFromJson(in.at("reducer"));
    model.gmm = GmmFromJson(in.at("gmm"));
    model.fisher_variant = ParseFisherVariant(in.value("fisher_variant", std::string("last_layer")));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("stratifier model: ") + e.what());
  }
  Require(model.stats.mean.size() == model.reducer.input_dim &&
              model.reducer.output_dim == model.gmm.dim(),
          "stratifier model: stage dimensions do not chain");
  return model;
}

void SaveAssignmentsCsv(const std::filesystem::path& path, const ClusterAssignment& assignment) {
  std::ofstream out(path);
  Require(out.good(), "cannot write " + path.string());
  out << "sample_index,cluster_id";
  for (int c = 0; c < assignment.num_clusters; ++c) out << ",posterior_" << c;
  out << '\n';
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    out << i << ',' << assignment.ids[i];
    for (int c = 0; c < assignment.num_clusters; ++c) {
      out << ',' << csv::FormatDouble(assignment.posteriors(static_cast<Eigen::Index>(i), c));
    }
    out << '\n';
  }
}

}  // namespace flare
