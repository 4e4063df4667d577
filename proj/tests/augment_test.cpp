// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "mocdt/augment.hpp"
#include "test_support.hpp"

namespace mocdt {
namespace {

std::vector<ItemId> ids(const RatedItems& xs) {
  std::vector<ItemId> out;
  for (const auto& [item, rating] : xs) out.push_back(item);
  return out;
}

TEST(TogoRatingTest, Examples) {
  enum : ItemId { A, B, C, D, E };
  const RatedItems record{{A, 5}, {B, 3}, {C, 4}, {D, 2}, {E, 1}};
  const std::vector<ItemId> history{B};
  const auto out = togo_rating(record, history, 2);
  ASSERT_TRUE(out);
  EXPECT_EQ(ids(*out), (std::vector<ItemId>{A, C, D, E}));

  const RatedItems flat{{7, 3}, {2, 3}, {9, 3}, {4, 3}};
  EXPECT_EQ(ids(*togo_rating(flat, {}, 2)), (std::vector<ItemId>{2, 4, 7, 9}));

  const std::vector<ItemId> top{A};
  const auto without_top = togo_rating(record, top, 2);
  ASSERT_TRUE(without_top);
  const auto got = ids(*without_top);
  EXPECT_EQ(std::count(got.begin(), got.end(), A), 0);
}

TEST(TogoRatingTest, SkipsWhenRecordTooSmall) {
  const RatedItems record{{0, 5}, {1, 4}, {2, 3}};
  EXPECT_FALSE(togo_rating(record, {}, 2));
  EXPECT_FALSE(togo_diversity(record, {}, Catalog(1, {{0}, {0}, {0}}), 2));
  Rng rng(1);
  EXPECT_FALSE(togo_random(record, {}, 2, rng));
}

TEST(TogoRatingTest, RatingsAreNonIncreasing) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    RatedItems record;
    for (ItemId i = 0; i < 12; ++i) record.push_back({i, std::round(uniform(rng, 1.0, 5.0))});
    const auto out = togo_rating(record, {}, 3);
    ASSERT_TRUE(out);
    for (std::size_t k = 1; k < out->size(); ++k) EXPECT_GE((*out)[k - 1].second, (*out)[k].second);
  }
}

TEST(TogoRatingTest, FirstHBeatsEveryEligibleSubset) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + uniform_index(rng, 5);  // records of 4..8 items
    RatedItems record;
    for (ItemId i = 0; i < static_cast<ItemId>(n); ++i) record.push_back({i, std::round(uniform(rng, 1.0, 5.0))});
    const std::size_t h = 2;
    const auto out = togo_rating(record, {}, h);
    ASSERT_TRUE(out);
    const double best = (*out)[0].second + (*out)[1].second;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) EXPECT_GE(best, record[a].second + record[b].second);
  }
}

TEST(TogoDiversityTest, Examples) {
  enum : ItemId { A, B, C, D };
  const Catalog catalog(4, {{1}, {2}, {1, 2}, {3}});
  const RatedItems record{{A, 3}, {B, 3}, {C, 3}, {D, 3}};
  const std::vector<ItemId> history{A};
  const auto out = togo_diversity(record, history, catalog, 1);
  ASSERT_TRUE(out);
  EXPECT_EQ(ids(*out), (std::vector<ItemId>{B, D}));
}

TEST(TogoDiversityTest, SingleCategoryResetsAfterEachPick) {
  const Catalog catalog(1, std::vector<CategorySet>(5, CategorySet{0}));
  const RatedItems record{{4, 1}, {2, 5}, {0, 2}, {3, 4}, {1, 3}};
  const auto out = togo_diversity(record, {}, catalog, 2);
  ASSERT_TRUE(out);
  EXPECT_EQ(ids(*out), (std::vector<ItemId>{0, 1, 2, 3}));
}

TEST(TogoDiversityTest, IdenticalCategorySetsGiveAscendingIds) {
  const Catalog catalog(5, std::vector<CategorySet>(6, CategorySet{1, 3}));
  const RatedItems record{{5, 1}, {0, 5}, {3, 2}, {1, 4}, {4, 3}, {2, 2}};
  const std::vector<ItemId> history{1};
  EXPECT_EQ(ids(*togo_diversity(record, history, catalog, 2)), (std::vector<ItemId>{0, 2, 3, 4}));
}

TEST(TogoDiversityTest, DisjointCatalogYieldsFullDiversityWindows) {
  // Items carry pairwise-disjoint category sets, so a perfect packing exists
  // and every first-H window reaches diversity 1.
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t items = 12, h = 4;
    std::vector<CategoryId> cats(24);
    for (int c = 0; c < 24; ++c) cats[c] = c;
    shuffle(std::span(cats), rng);
    std::vector<CategorySet> sets(items);
    for (std::size_t i = 0; i < items; ++i) sets[i] = {cats[2 * i], cats[2 * i + 1]};
    const Catalog catalog(24, sets);
    RatedItems record;
    for (ItemId i = 0; i < static_cast<ItemId>(items); ++i) record.push_back({i, 3.0});
    const std::vector<ItemId> history{static_cast<ItemId>(uniform_index(rng, items))};
    const auto out = togo_diversity(record, history, catalog, h);
    ASSERT_TRUE(out);
    const auto got = ids(*out);
    EXPECT_EQ(diversity(std::span(got).first(h), catalog), 1.0);
  }
}

TEST(TogoRandomTest, ExactlyTwoHIsAPermutation) {
  const RatedItems record{{3, 1}, {8, 2}, {5, 3}, {1, 4}, {6, 5}};
  const std::vector<ItemId> history{5};
  Rng rng(2);
  auto got = ids(*togo_random(record, history, 2, rng));
  std::sort(got.begin(), got.end());
  EXPECT_EQ(got, (std::vector<ItemId>{1, 3, 6, 8}));
}

TEST(TogoRandomTest, SameSeedSameOutput) {
  RatedItems record;
  for (ItemId i = 0; i < 30; ++i) record.push_back({i, 3.0});
  Rng a(42), b(42);
  EXPECT_EQ(togo_random(record, {}, 5, a), togo_random(record, {}, 5, b));
}

TEST(TogoRandomTest, UnorderedPairsAreUniform) {
  const RatedItems record{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  std::map<std::pair<ItemId, ItemId>, int> counts;
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(k)));
    const auto out = *togo_random(record, {}, 1, rng);
    counts[{std::min(out[0].first, out[1].first), std::max(out[0].first, out[1].first)}]++;
  }
  ASSERT_EQ(counts.size(), 6u);
  for (const auto& [pair, c] : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / 6.0, 0.02);
}

TEST(TogoAllStrategiesTest, NoRepeatsAndNoHistoryItems) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CategorySet> sets(20);
    for (auto& s : sets) s = {static_cast<CategoryId>(uniform_index(rng, 5))};
    const Catalog catalog(5, sets);
    RatedItems record;
    for (ItemId i = 0; i < 20; ++i)
      if (uniform01(rng) < 0.8) record.push_back({i, std::round(uniform(rng, 1.0, 5.0))});
    std::vector<ItemId> history;
    for (const auto& [i, r] : record)
      if (uniform01(rng) < 0.25) history.push_back(i);
    const std::set<ItemId> hist(history.begin(), history.end());
    Rng sub(derive_seed(1, static_cast<std::uint64_t>(trial)));
    for (const auto& out : {togo_rating(record, history, 3), togo_diversity(record, history, catalog, 3),
                            togo_random(record, history, 3, sub)}) {
      if (!out) continue;
      const auto got = ids(*out);
      EXPECT_EQ(got.size(), 6u);
      EXPECT_EQ(std::set<ItemId>(got.begin(), got.end()).size(), got.size());
      for (ItemId i : got) EXPECT_EQ(hist.count(i), 0u);
    }
  }
}

Dataset ten_trajectories() {
  SynthSpec spec;
  spec.num_users = 10;
  spec.num_items = 40;
  spec.num_categories = 6;
  spec.traj_len = 12;
  spec.seed = 31;
  return synth_dataset(spec).dataset;
}

TEST(AugmentDatasetTest, ZeroRateIsIdentityWithWarning) {
  const auto ds = ten_trajectories();
  const auto out = augment_dataset(ds, {AugmentStrategy::kRating, 0.0, 1}, 3);
  EXPECT_EQ(out.dataset, ds);
  EXPECT_EQ(out.synthetic, 0u);
  EXPECT_FALSE(out.warnings.empty());
}

TEST(AugmentDatasetTest, UnitRateDoublesAndPreservesOriginals) {
  const auto ds = ten_trajectories();
  for (auto strategy : {AugmentStrategy::kRating, AugmentStrategy::kDiversity, AugmentStrategy::kRandom}) {
    const std::size_t h = 3;
    const auto out = augment_dataset(ds, {strategy, 1.0, 5}, h);
    ASSERT_EQ(out.dataset.trajectories.size(), 20u);
    EXPECT_EQ(out.synthetic, 10u);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(out.dataset.trajectories[k], ds.trajectories[k]);
    for (std::size_t k = 10; k < 20; ++k) {
      const auto& t = out.dataset.trajectories[k];
      EXPECT_EQ(t.origin, origin_of(strategy));
      const auto& base = ds.trajectories[static_cast<std::size_t>(t.user)];
      const std::size_t prefix = t.size() - 2 * h;
      std::map<ItemId, double> recorded;
      for (const auto& s : base.steps) recorded[s.item] = s.rating;
      std::set<ItemId> seen;
      for (std::size_t s = 0; s < t.size(); ++s) {
        if (s < prefix) EXPECT_EQ(t.steps[s], base.steps[s]);
        EXPECT_TRUE(seen.insert(t.steps[s].item).second) << "repeated item";
        EXPECT_EQ(t.steps[s].rating, recorded.at(t.steps[s].item));
        if (s > 0) EXPECT_LT(t.steps[s - 1].timestamp, t.steps[s].timestamp);
      }
    }
    out.dataset.validate();
  }
}

TEST(AugmentDatasetTest, RateCountsAgainstAllTrajectories) {
  const auto ds = ten_trajectories();
  EXPECT_EQ(augment_dataset(ds, {AugmentStrategy::kRandom, 0.25, 1}, 2).synthetic, 3u);  // ceil(2.5)
  EXPECT_EQ(augment_dataset(ds, {AugmentStrategy::kRandom, 2.0, 1}, 2).synthetic, 20u);
}

TEST(AugmentDatasetTest, DeterministicInSeed) {
  const auto ds = ten_trajectories();
  for (auto strategy : {AugmentStrategy::kRating, AugmentStrategy::kDiversity, AugmentStrategy::kRandom}) {
    EXPECT_EQ(augment_dataset(ds, {strategy, 1.5, 9}, 3).dataset, augment_dataset(ds, {strategy, 1.5, 9}, 3).dataset);
  }
  EXPECT_NE(augment_dataset(ds, {AugmentStrategy::kRandom, 1.0, 9}, 3).dataset,
            augment_dataset(ds, {AugmentStrategy::kRandom, 1.0, 10}, 3).dataset);
}

TEST(AugmentDatasetTest, TooShortRecordsAreSkippedWithWarning) {
  const auto ds = testing::make_dataset({{0}, {0}, {0}}, 1, {{{0, 3.0}, {1, 4.0}, {2, 5.0}}});
  const auto out = augment_dataset(ds, {AugmentStrategy::kRating, 1.0, 1}, 2);
  EXPECT_EQ(out.dataset, ds);
  EXPECT_FALSE(out.warnings.empty());
  EXPECT_THROW(augment_dataset(ds, {AugmentStrategy::kRating, 1.0, 1}, 1), DomainError);
  EXPECT_THROW(augment_dataset(ds, {AugmentStrategy::kRating, -1.0, 1}, 2), DomainError);
}

TEST(AugmentSpecTest, StrategyNamesRoundTrip) {
  for (auto s : {AugmentStrategy::kRating, AugmentStrategy::kDiversity, AugmentStrategy::kRandom}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_strategy("greedy"), DomainError);
}

}  // namespace
}  // namespace mocdt
