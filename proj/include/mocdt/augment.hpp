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

#pragma once

// Synthetic to-go sequences built from a user's own interaction record, and
// their splicing onto trajectory prefixes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mocdt/corpus.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"

namespace mocdt {

using RatedItems = std::vector<std::pair<ItemId, double>>;

enum class AugmentStrategy { kRating, kDiversity, kRandom };

inline std::string_view to_string(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::kRating: return "rating";
    case AugmentStrategy::kDiversity: return "diversity";
    case AugmentStrategy::kRandom: return "random";
  }
  return "rating";
}

inline AugmentStrategy parse_strategy(std::string_view s) {
  if (s == "rating") return AugmentStrategy::kRating;
  if (s == "diversity") return AugmentStrategy::kDiversity;
  if (s == "random") return AugmentStrategy::kRandom;
  throw DomainError("unknown augmentation strategy '" + std::string(s) + "'");
}

inline Origin origin_of(AugmentStrategy s) {
  switch (s) {
    case AugmentStrategy::kRating: return Origin::kRating;
    case AugmentStrategy::kDiversity: return Origin::kDiversity;
    case AugmentStrategy::kRandom: return Origin::kRandom;
  }
  return Origin::kRandom;
}

/// Split points are drawn uniformly over the valid positions of a uniformly
/// drawn trajectory.
struct AugmentSpec {
  AugmentStrategy strategy = AugmentStrategy::kRating;
  double rate = 1.0;  // synthetic trajectories per original trajectory
  std::uint64_t seed = 0;
};

namespace detail {

/// Record items not in `history`, ascending by id. A repeated item keeps its
/// most recent rating.
inline RatedItems eligible_items(const RatedItems& record, std::span<const ItemId> history) {
  std::map<ItemId, double> latest;
  for (const auto& [item, rating] : record) latest[item] = rating;
  for (ItemId h : history) latest.erase(h);
  return RatedItems(latest.begin(), latest.end());
}

}  // namespace detail

/// Highest-rated item not yet in the list, repeatedly; ties to the smaller id.
/// nullopt when fewer than 2H items are eligible.
inline std::optional<RatedItems> togo_rating(const RatedItems& record, std::span<const ItemId> history,
                                             std::size_t horizon) {
  auto pool = detail::eligible_items(record, history);
  const std::size_t want = 2 * horizon;
  if (pool.size() < want) return std::nullopt;
  // Selecting the max one at a time from a static pool is a sort.
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  pool.resize(want);
  return pool;
}

/// Least category overlap with the current list, repeatedly. When the list
/// already covers every category in the catalog, the overlap reference is
/// cleared; chosen items stay ineligible.
inline std::optional<RatedItems> togo_diversity(const RatedItems& record, std::span<const ItemId> history,
                                                const Catalog& catalog, std::size_t horizon) {
  auto pool = detail::eligible_items(record, history);
  const std::size_t want = 2 * horizon;
  if (pool.size() < want) return std::nullopt;
  const std::size_t all_categories = catalog.used_categories().size();

  CategorySet reference;
  for (ItemId h : history) merge_into(reference, catalog.categories(h));

  RatedItems out;
  std::vector<bool> taken(pool.size(), false);
  while (out.size() < want) {
    if (reference.size() >= all_categories) reference.clear();
    std::size_t best = pool.size();
    std::size_t best_overlap = 0;
    for (std::size_t k = 0; k < pool.size(); ++k) {
      if (taken[k]) continue;
      const auto overlap = overlap_counts(reference, catalog.categories(pool[k].first)).first;
      if (best == pool.size() || overlap < best_overlap) {
        best = k;
        best_overlap = overlap;
      }
    }
    taken[best] = true;
    out.push_back(pool[best]);
    merge_into(reference, catalog.categories(pool[best].first));
  }
  return out;
}

/// Uniform sample of 2H eligible items without replacement.
inline std::optional<RatedItems> togo_random(const RatedItems& record, std::span<const ItemId> history,
                                             std::size_t horizon, Rng& rng) {
  auto pool = detail::eligible_items(record, history);
  const std::size_t want = 2 * horizon;
  if (pool.size() < want) return std::nullopt;
  for (std::size_t k = 0; k < want; ++k) {
    std::swap(pool[k], pool[k + uniform_index(rng, pool.size() - k)]);
  }
  pool.resize(want);
  return pool;
}

struct AugmentResult {
  Dataset dataset;
  std::size_t synthetic = 0;
  std::vector<std::string> warnings;
};

/// Appends ceil(rate * |original trajectories|) synthetic trajectories
/// <prefix tau_{1:t-1}, to-go> to a copy of the dataset.
inline AugmentResult augment_dataset(const Dataset& ds, const AugmentSpec& spec, std::size_t horizon) {
  if (horizon < 2) throw DomainError("augment_dataset: horizon must be >= 2");
  if (!(spec.rate >= 0.0) || !std::isfinite(spec.rate)) throw DomainError("augmentation rate must be >= 0");
  AugmentResult result;
  result.dataset = ds;
  const auto originals = static_cast<std::size_t>(std::count_if(
      ds.trajectories.begin(), ds.trajectories.end(), [](const Trajectory& t) { return t.origin == Origin::kOriginal; }));
  const auto count = static_cast<std::size_t>(std::ceil(spec.rate * static_cast<double>(originals)));
  if (count == 0) {
    result.warnings.push_back("augmentation rate yields zero synthetic trajectories; dataset unchanged");
    return result;
  }

  std::map<UserId, RatedItems> records;
  struct Candidate {
    std::size_t trajectory;
    std::vector<std::size_t> splits;  // t, 1-based: history is steps [0, t-1)
  };
  std::vector<Candidate> pool;
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const auto& traj = ds.trajectories[j];
    if (traj.origin != Origin::kOriginal) continue;
    auto it = records.find(traj.user);
    if (it == records.end()) it = records.emplace(traj.user, user_items(ds, traj.user)).first;
    const auto items = traj.items();
    Candidate cand{j, {}};
    for (std::size_t t = 1; t <= traj.size(); ++t) {
      const auto eligible = detail::eligible_items(it->second, std::span(items).first(t - 1)).size();
      if (eligible >= 2 * horizon) cand.splits.push_back(t);
    }
    if (!cand.splits.empty()) pool.push_back(std::move(cand));
  }
  if (pool.empty()) {
    result.warnings.push_back("no trajectory has " + std::to_string(2 * horizon) +
                              " eligible items for a to-go sequence; dataset unchanged");
    return result;
  }

  Rng rng(spec.seed);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& cand = pool[uniform_index(rng, pool.size())];
    const std::size_t t = cand.splits[uniform_index(rng, cand.splits.size())];
    const auto& base = ds.trajectories[cand.trajectory];
    const auto items = base.items();
    const auto history = std::span(items).first(t - 1);
    const auto& record = records.at(base.user);

    std::optional<RatedItems> togo;
    switch (spec.strategy) {
      case AugmentStrategy::kRating: togo = togo_rating(record, history, horizon); break;
      case AugmentStrategy::kDiversity: togo = togo_diversity(record, history, ds.catalog, horizon); break;
      case AugmentStrategy::kRandom: {
        Rng sub(derive_seed(spec.seed, base.user, t));
        togo = togo_random(record, history, horizon, sub);
        break;
      }
    }
    if (!togo) continue;

    Trajectory synth;
    synth.user = base.user;
    synth.origin = origin_of(spec.strategy);
    synth.steps.assign(base.steps.begin(), base.steps.begin() + static_cast<std::ptrdiff_t>(t - 1));
    std::int64_t ts = synth.steps.empty() ? 0 : synth.steps.back().timestamp + 1;
    for (const auto& [item, rating] : *togo) synth.steps.push_back({base.user, item, rating, ts++});
    result.dataset.trajectories.push_back(std::move(synth));
    ++result.synthetic;
  }
  return result;
}

}  // namespace mocdt
