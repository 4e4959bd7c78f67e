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

#include <cmath>
#include <filesystem>
#include <limits>

#include "flare/errors.h"
#include "flare/metrics.h"
#include "oracles.h"

using namespace flare;

namespace {

SubgroupScores Scores(std::vector<std::pair<std::string, double>> values) {
  SubgroupScores s;
  s.attribute = "a";
  s.scores = std::move(values);
  return s;
}

PredictionRecord Record(std::string person, int t, int p, std::string category) {
  PredictionRecord r;
  r.person_id = std::move(person);
  r.y_true = t;
  r.y_pred = p;
  r.attributes["group"] = std::move(category);
  return r;
}

// Appends records of one category with the given confusion counts.
void AddConfusion(std::vector<PredictionRecord>& out, const std::string& category, int tp, int fn,
                  int fp, int tn) {
  for (int i = 0; i < tp; ++i) out.push_back(Record("p", 1, 1, category));
  for (int i = 0; i < fn; ++i) out.push_back(Record("p", 1, 0, category));
  for (int i = 0; i < fp; ++i) out.push_back(Record("p", 0, 1, category));
  for (int i = 0; i < tn; ++i) out.push_back(Record("p", 0, 0, category));
}

std::vector<PredictionRecord> RandomRecords(Rng& rng, int n, int categories, double accuracy) {
  std::vector<PredictionRecord> out;
  for (int i = 0; i < n; ++i) {
    const int t = static_cast<int>(rng.UniformIndex(2));
    const int p = rng.Bernoulli(accuracy) ? t : 1 - t;
    const int c = static_cast<int>(rng.UniformIndex(static_cast<std::size_t>(categories)));
    out.push_back(Record("u" + std::to_string(rng.UniformIndex(6)), t, p,
                         "c" + std::to_string(c)));
  }
  return out;
}

}  // namespace

TEST_CASE("macro f1 values") {
  CHECK(MacroF1(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 1, 1, 0}) == 1.0);
  CHECK(MacroF1(std::vector<int>{0, 1, 0, 1}, std::vector<int>{1, 1, 1, 1}) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(MacroF1(std::vector<int>{1, 1, 1}, std::vector<int>{1, 1, 1}) == 1.0);
  CHECK(PositiveF1(std::vector<int>{0, 1, 0, 1}, std::vector<int>{1, 1, 1, 1}) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(MacroF1(std::vector<int>{}, std::vector<int>{}), ValidationError);
  CHECK_THROWS_AS(MacroF1(std::vector<int>{0, 2}, std::vector<int>{0, 1}), ValidationError);
  CHECK_THROWS_AS(MacroF1(std::vector<int>{0}, std::vector<int>{0, 1}), ValidationError);
}

TEST_CASE("macro f1 agrees with a brute-force count") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.UniformIndex(30));
    const std::vector<int> t = oracle::RandomLabels(rng, n);
    const std::vector<int> p = oracle::RandomLabels(rng, n);
    CHECK(MacroF1(t, p) == doctest::Approx(oracle::BruteMacroF1(t, p)).epsilon(1e-15));
  }
}

TEST_CASE("subgroup f1") {
  std::vector<PredictionRecord> one;
  AddConfusion(one, "x", 3, 1, 2, 4);
  const SubgroupScores single = SubgroupF1(one, "group");
  REQUIRE(single.scores.size() == 1);
  CHECK(single.scores[0].second == MacroF1(one));

  std::vector<PredictionRecord> two;
  AddConfusion(two, "x", 3, 1, 2, 4);
  AddConfusion(two, "y", 3, 1, 2, 4);
  const SubgroupScores twin = SubgroupF1(two, "group");
  CHECK(twin.scores[0].second == twin.scores[1].second);
  CHECK_THROWS_AS(SubgroupF1(two, "missing"), ValidationError);
}

TEST_CASE("bhe worked values") {
  const BheReport r = Bhe(Scores({{"a", 0.60}, {"b", 0.40}}), Scores({{"a", 0.65}, {"b", 0.55}}));
  CHECK(r.delta.benefit == doctest::Approx(0.10).epsilon(1e-12));
  CHECK(r.delta.harm == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(r.delta.equity == doctest::Approx(0.05).epsilon(1e-12));

  const BheReport same = Bhe(Scores({{"a", 0.3}, {"b", 0.7}}), Scores({{"a", 0.3}, {"b", 0.7}}));
  CHECK(same.delta.benefit == 0.0);
  CHECK(same.delta.harm == 0.0);
  CHECK(same.delta.equity == 0.0);

  const BheReport spread = Bhe(Scores({{"a", 0.5}, {"b", 0.5}}), Scores({{"a", 0.9}, {"b", 0.1}}));
  CHECK(spread.delta.benefit == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(spread.delta.harm == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(spread.delta.equity == doctest::Approx(-0.4).epsilon(1e-12));

  CHECK_THROWS_AS(Bhe(Scores({{"a", 0.5}}), Scores({{"b", 0.5}})), ValidationError);
  CHECK_THROWS_AS(Bhe(Scores({{"a", 0.5}}), Scores({{"a", 0.5}, {"b", 0.5}})), ValidationError);
}

TEST_CASE("bhe antisymmetry") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<std::string, double>> x, y;
    for (int k = 0; k < 4; ++k) {
      x.emplace_back("s" + std::to_string(k), rng.Uniform());
      y.emplace_back("s" + std::to_string(k), rng.Uniform());
    }
    const BheReport xy = Bhe(Scores(x), Scores(y));
    const BheReport yx = Bhe(Scores(y), Scores(x));
    CHECK(xy.delta.benefit == doctest::Approx(-yx.delta.benefit).epsilon(1e-12));
    CHECK(xy.delta.equity == doctest::Approx(-yx.delta.equity).epsilon(1e-12));
    double max_back = -1.0;
    for (int k = 0; k < 4; ++k) max_back = std::max(max_back, x[k].second - y[k].second);
    CHECK(xy.delta.harm == doctest::Approx(-max_back).epsilon(1e-12));
  }
}

TEST_CASE("bhe equals a brute-force recomputation from records") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 40 + static_cast<int>(rng.UniformIndex(80));
    const std::vector<PredictionRecord> base = RandomRecords(rng, n, 3, 0.7);
    std::vector<PredictionRecord> cand = base;
    for (PredictionRecord& r : cand) {
      if (rng.Bernoulli(0.3)) r.y_pred = 1 - r.y_pred;
    }
    const BheReport got = Bhe(SubgroupF1(base, "group"), SubgroupF1(cand, "group"));
    const oracle::BruteBheResult want = oracle::BruteBhe(base, cand, "group");
    CHECK(std::abs(got.delta.benefit - want.db) <= 1e-12);
    CHECK(std::abs(got.delta.harm - want.dh) <= 1e-12);
    CHECK(std::abs(got.delta.equity - want.de) <= 1e-12);
    CHECK(got.delta.harm <= got.delta.benefit + 1e-12);
  }
}

TEST_CASE("eod and aod") {
  std::vector<PredictionRecord> same;
  AddConfusion(same, "x", 4, 1, 1, 4);
  AddConfusion(same, "y", 4, 1, 1, 4);
  const OddsGaps zero = EodAod(same, "group");
  CHECK(zero.eod == 0.0);
  CHECK(zero.aod == 0.0);

  std::vector<PredictionRecord> gap;
  AddConfusion(gap, "x", 5, 0, 1, 4);  // TPR 1.0, FPR 0.2
  AddConfusion(gap, "y", 3, 2, 1, 4);  // TPR 0.6, FPR 0.2
  const OddsGaps g = EodAod(gap, "group");
  CHECK(g.eod == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(g.aod == doctest::Approx(0.2).epsilon(1e-12));

  std::vector<PredictionRecord> lone;
  AddConfusion(lone, "x", 5, 0, 1, 4);
  CHECK_THROWS_AS(EodAod(lone, "group"), ValidationError);
}

TEST_CASE("eod and aod equal exhaustive pairwise enumeration") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PredictionRecord> records;
    for (int c = 0; c < 4; ++c) {
      const auto draw = [&] { return static_cast<int>(rng.UniformIndex(8)); };
      // At least one positive and one negative per category.
      AddConfusion(records, "c" + std::to_string(c), 1 + draw(), draw(), draw(), 1 + draw());
    }
    const OddsGaps got = EodAod(records, "group");
    const auto [eod, aod] = oracle::BrutePairwiseOdds(records, "group");
    CHECK(got.eod == eod);
    CHECK(got.aod == aod);
  }
}

TEST_CASE("relative disparity") {
  const RelativeDisparity equal = ComputeRelativeDisparity(Scores({{"a", 0.7}, {"b", 0.7}}));
  CHECK(equal.ratio == 1.0);
  CHECK(equal.acceptable);
  const RelativeDisparity wide = ComputeRelativeDisparity(Scores({{"a", 0.8}, {"b", 0.5}}));
  CHECK(wide.ratio == doctest::Approx(1.6));
  CHECK_FALSE(wide.acceptable);
  const RelativeDisparity narrow = ComputeRelativeDisparity(Scores({{"a", 0.6}, {"b", 0.5}}));
  CHECK(narrow.ratio == doctest::Approx(1.2));
  CHECK(narrow.acceptable);
  const RelativeDisparity dead = ComputeRelativeDisparity(Scores({{"a", 0.6}, {"b", 0.0}}));
  CHECK(std::isinf(dead.ratio));
  CHECK_FALSE(dead.acceptable);
}

TEST_CASE("user slices") {
  std::vector<PredictionRecord> one = {Record("u1", 1, 1, "x"), Record("u1", 0, 1, "x")};
  CHECK(ComputeUserSlices(one).std == 0.0);

  std::vector<PredictionRecord> two = {Record("u1", 1, 1, "x"), Record("u1", 0, 0, "x"),
                                       Record("u2", 1, 0, "x"), Record("u2", 0, 1, "x")};
  const UserSlices s = ComputeUserSlices(two);
  CHECK(s.mean == doctest::Approx(0.5));
  CHECK(s.std == doctest::Approx(0.5));

  Rng rng(2);
  std::vector<PredictionRecord> many = RandomRecords(rng, 200, 2, 0.6);
  for (PredictionRecord& r : many) r.attributes["person"] = r.person_id;
  const UserSlices u = ComputeUserSlices(many);
  const SubgroupScores by_attr = SubgroupF1(many, "person");
  CHECK(u.per_person.values() == by_attr.values());
}

TEST_CASE("prediction csv round trip") {
  Rng rng(4);
  std::vector<PredictionRecord> records = RandomRecords(rng, 30, 3, 0.5);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].fold = static_cast<int>(i % 4);
    records[i].attributes["site"] = i % 2 == 0 ? "north" : "south";
  }
  const auto path = std::filesystem::temp_directory_path() / "flare_metrics_roundtrip.csv";
  SavePredictionCsv(path, records);
  CHECK(LoadPredictionCsv(path) == records);
  CHECK(CommonAttributes(records) == std::vector<std::string>{"group", "site"});
  std::filesystem::remove(path);
}
