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
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"

namespace mocdt {
namespace {

// Independent reference: explicit std::set union/intersection per step.
double reference_diversity(const std::vector<std::set<int>>& sets) {
  std::set<int> prior = sets[0];
  double total = 0.0;
  for (std::size_t k = 1; k < sets.size(); ++k) {
    std::set<int> inter, uni;
    std::set_intersection(prior.begin(), prior.end(), sets[k].begin(), sets[k].end(),
                          std::inserter(inter, inter.begin()));
    std::set_union(prior.begin(), prior.end(), sets[k].begin(), sets[k].end(), std::inserter(uni, uni.begin()));
    total += 1.0 - static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    prior.insert(sets[k].begin(), sets[k].end());
  }
  return total / static_cast<double>(sets.size() - 1);
}

Catalog random_catalog(Rng& rng, std::size_t items, std::size_t cats) {
  std::vector<CategorySet> sets(items);
  for (auto& s : sets) {
    const std::size_t n = 1 + uniform_index(rng, 3);
    while (s.size() < n) {
      const auto c = static_cast<CategoryId>(uniform_index(rng, cats));
      if (std::find(s.begin(), s.end(), c) == s.end()) s.push_back(c);
    }
  }
  return Catalog(cats, sets);
}

TEST(CumulativeRatingTest, Examples) {
  EXPECT_EQ(cumulative_rating(std::vector<double>{1.0, 2.0, 3.0}), 6.0);
  EXPECT_EQ(cumulative_rating(std::vector<double>(5, 0.0)), 0.0);
  const std::vector<double> reference_list{4.61, 4.13, 4.33, 4.20, 4.40, 4.21, 4.13, 4.12, 4.04, 4.66};
  EXPECT_NEAR(cumulative_rating(reference_list), 42.83, 0.05);
}

TEST(CumulativeRatingTest, IsLinear) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(10), scaled(10);
    const double lambda = uniform(rng, -3.0, 3.0);
    for (std::size_t k = 0; k < r.size(); ++k) {
      r[k] = uniform(rng, 1.0, 5.0);
      scaled[k] = lambda * r[k];
    }
    EXPECT_NEAR(cumulative_rating(scaled), lambda * cumulative_rating(r), 1e-12);
  }
}

TEST(DiversityTest, Examples) {
  const Catalog same(10, std::vector<CategorySet>(10, CategorySet{8}));
  std::vector<ItemId> ten(10);
  for (int k = 0; k < 10; ++k) ten[k] = k;
  EXPECT_EQ(diversity(ten, same), 0.0);

  const Catalog two(3, {{1}, {2}});
  EXPECT_EQ(diversity(std::vector<ItemId>{0, 1}, two), 1.0);

  const Catalog three(3, {{1}, {1, 2}, {2}});
  EXPECT_DOUBLE_EQ(diversity(std::vector<ItemId>{0, 1, 2}, three), 0.5);
  EXPECT_DOUBLE_EQ(reference_diversity({{1}, {1, 2}, {2}}), 0.5);
}

TEST(DiversityTest, FullyDisjointTenItemsScoreOne) {
  std::vector<CategorySet> sets;
  for (int k = 0; k < 10; ++k) sets.push_back({k});
  const Catalog disjoint(10, sets);
  std::vector<ItemId> items(10);
  for (int k = 0; k < 10; ++k) items[k] = k;
  EXPECT_EQ(diversity(items, disjoint), 1.0);
}

TEST(DiversityTest, RejectsShortWindows) {
  const Catalog c(1, {{0}});
  EXPECT_THROW(diversity(std::vector<ItemId>{0}, c), DomainError);
  EXPECT_THROW(FutureWindow({0}, {1.0}), DomainError);
  EXPECT_THROW(FutureWindow({0, 0}, {1.0}), DomainError);
}

TEST(DiversityTest, MatchesSetReferenceAndStaysBounded) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto catalog = random_catalog(rng, 30, 6);
    const std::size_t h = 2 + uniform_index(rng, 10);
    std::vector<ItemId> items(h);
    std::vector<std::set<int>> sets;
    for (auto& i : items) {
      i = static_cast<ItemId>(uniform_index(rng, 30));
      const auto& cs = catalog.categories(i);
      sets.emplace_back(cs.begin(), cs.end());
    }
    const double d = diversity(items, catalog);
    EXPECT_NEAR(d, reference_diversity(sets), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(DiversityTest, InvariantUnderCategoryRelabeling) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto catalog = random_catalog(rng, 20, 7);
    std::vector<CategoryId> perm(7);
    for (int c = 0; c < 7; ++c) perm[c] = c;
    shuffle(std::span(perm), rng);
    std::vector<CategorySet> relabeled;
    for (const auto& s : catalog.all()) {
      CategorySet r;
      for (auto c : s) r.push_back(perm[static_cast<std::size_t>(c)]);
      relabeled.push_back(r);
    }
    const Catalog other(7, relabeled);
    std::vector<ItemId> items(8);
    for (auto& i : items) i = static_cast<ItemId>(uniform_index(rng, 20));
    EXPECT_DOUBLE_EQ(diversity(items, catalog), diversity(items, other));
  }
}

TEST(DiversityTest, ZeroExactlyWhenEveryStepRepeatsTheUnion) {
  // {1,2} then subsets equal to the running union give J = 1 at each step.
  const Catalog c(3, {{1, 2}, {1, 2}, {1, 2}});
  EXPECT_EQ(diversity(std::vector<ItemId>{0, 1, 2}, c), 0.0);
  // A proper subset of the union has J < 1, so the score is positive.
  const Catalog sub(3, {{1, 2}, {1}});
  EXPECT_GT(diversity(std::vector<ItemId>{0, 1}, sub), 0.0);
}

TEST(DiversityTest, EmptyPriorConventionToggle) {
  // J(empty, C_1) counts as 1 and the sum is averaged over H terms, so the
  // maximum is (H - 1) / H.
  const Catalog disjoint(4, {{0}, {1}, {2}, {3}});
  const std::vector<ItemId> items{0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(diversity(items, disjoint, DiversityConvention::kEmptyPriorOverH), 0.75);
  EXPECT_EQ(diversity(items, disjoint, DiversityConvention::kSkipFirst), 1.0);
}

TEST(NormalizeTest, Examples) {
  EXPECT_NEAR(normalize(42.83, 0.0, 10, 5.0).o_rate, 0.8566, 1e-12);
  EXPECT_EQ(normalize(50.0, 0.0, 10, 5.0).o_rate, 1.0);
  EXPECT_EQ(normalize(60.0, 1.5, 10, 5.0), ObjectivePoint(1.0, 1.0));
  EXPECT_EQ(normalize(0.0, 0.5, 10, 5.0).o_div, 0.5);
  EXPECT_THROW(normalize(std::numeric_limits<double>::quiet_NaN(), 0.5, 10, 5.0), DomainError);
  EXPECT_THROW(normalize(1.0, std::numeric_limits<double>::infinity(), 10, 5.0), DomainError);
  EXPECT_THROW(normalize(1.0, 0.5, 1, 5.0), DomainError);
}

TEST(NormalizeTest, MonotoneInEachArgument) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double r1 = uniform(rng, -10.0, 60.0), r2 = r1 + uniform(rng, 0.0, 10.0);
    const double d1 = uniform(rng, -0.5, 1.5), d2 = d1 + uniform(rng, 0.0, 0.5);
    EXPECT_LE(normalize(r1, d1, 10, 5.0).o_rate, normalize(r2, d1, 10, 5.0).o_rate);
    EXPECT_LE(normalize(r1, d1, 10, 5.0).o_div, normalize(r1, d2, 10, 5.0).o_div);
  }
}

TEST(ObjectivePointTest, RejectsOutOfRange) {
  EXPECT_THROW(ObjectivePoint(1.1, 0.0), DomainError);
  EXPECT_THROW(ObjectivePoint(0.0, -0.1), DomainError);
}

TEST(GridTest, NinePointsRowMajorFromRatingFocus) {
  const auto g = grid_points();
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), ObjectivePoint(1.0, 0.0));
  auto has = [&](double r, double d) { return std::find(g.begin(), g.end(), ObjectivePoint(r, d)) != g.end(); };
  EXPECT_TRUE(has(0.0, 1.0));
  EXPECT_TRUE(has(0.5, 0.5));
  for (double r : {0.0, 0.5, 1.0})
    for (double d : {0.0, 0.5, 1.0}) EXPECT_TRUE(has(r, d));
}

}  // namespace
}  // namespace mocdt
