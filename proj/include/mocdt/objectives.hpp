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

// Objective values measured on an H-step future window: cumulative rating
// and category diversity, plus the normalized objective point.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mocdt/corpus.hpp"
#include "mocdt/error.hpp"

namespace mocdt {

struct ObjectivePoint {
  double o_rate = 0.0;
  double o_div = 0.0;

  ObjectivePoint() = default;
  ObjectivePoint(double rate, double div) : o_rate(rate), o_div(div) {
    if (!(rate >= 0.0 && rate <= 1.0 && div >= 0.0 && div <= 1.0)) {
      throw DomainError("objective point components must lie in [0, 1]");
    }
  }
  bool operator==(const ObjectivePoint&) const = default;
};

/// Items and their ratings over an H-step future window.
struct FutureWindow {
  std::vector<ItemId> items;
  std::vector<double> ratings;

  FutureWindow(std::vector<ItemId> i, std::vector<double> r) : items(std::move(i)), ratings(std::move(r)) {
    if (items.size() != ratings.size()) throw DomainError("future window items/ratings length mismatch");
    if (items.size() < 2) throw DomainError("future window needs H >= 2");
  }
  std::size_t horizon() const { return items.size(); }
};

/// Handling of the first window position, whose prior category set is empty.
enum class DiversityConvention {
  // Sum from the second item, average over H - 1 terms. Reaches 1.0.
  kSkipFirst,
  // First term uses J(empty, C) = 1, average over H terms. Max is (H-1)/H.
  kEmptyPriorOverH,
};

inline double cumulative_rating(std::span<const double> ratings) {
  double sum = 0.0;
  for (double r : ratings) sum += r;
  return sum;
}

/// |a ∩ b| and |a ∪ b| of sorted sets.
inline std::pair<std::size_t, std::size_t> overlap_counts(const CategorySet& a, const CategorySet& b) {
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return {inter, a.size() + b.size() - inter};
}

inline double jaccard(const CategorySet& a, const CategorySet& b) {
  auto [inter, uni] = overlap_counts(a, b);
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline void merge_into(CategorySet& acc, const CategorySet& add) {
  CategorySet merged;
  merged.reserve(acc.size() + add.size());
  std::set_union(acc.begin(), acc.end(), add.begin(), add.end(), std::back_inserter(merged));
  acc.swap(merged);
}

/// Mean novelty 1 - J(C_{1:k-1}, C_k) of each item against the union of the
/// categories of all items before it.
inline double diversity(std::span<const ItemId> items, const Catalog& catalog,
                        DiversityConvention convention = DiversityConvention::kSkipFirst) {
  const std::size_t h = items.size();
  if (h < 2) throw DomainError("diversity needs a window of at least 2 items, got " + std::to_string(h));
  CategorySet prior = catalog.categories(items[0]);
  double sum = 0.0;
  for (std::size_t k = 1; k < h; ++k) {
    const auto& current = catalog.categories(items[k]);
    sum += 1.0 - jaccard(prior, current);
    merge_into(prior, current);
  }
  if (convention == DiversityConvention::kSkipFirst) return sum / static_cast<double>(h - 1);
  return sum / static_cast<double>(h);
}

inline double cumulative_rating(const FutureWindow& window) { return cumulative_rating(window.ratings); }

inline double diversity(const FutureWindow& window, const Catalog& catalog,
                        DiversityConvention convention = DiversityConvention::kSkipFirst) {
  return diversity(window.items, catalog, convention);
}

inline ObjectivePoint normalize(double raw_rate, double raw_div, std::size_t horizon, double r_max) {
  if (!std::isfinite(raw_rate) || !std::isfinite(raw_div) || !std::isfinite(r_max)) {
    throw DomainError("normalize: non-finite input");
  }
  if (horizon < 2) throw DomainError("normalize: horizon must be >= 2");
  if (!(r_max > 0.0)) throw DomainError("normalize: r_max must be positive");
  return ObjectivePoint(std::clamp(raw_rate / (static_cast<double>(horizon) * r_max), 0.0, 1.0),
                        std::clamp(raw_div, 0.0, 1.0));
}

/// The 3x3 grid over {1.0, 0.5, 0.0} x {0.0, 0.5, 1.0}, row-major with the
/// rating-only point (1.0, 0.0) first.
inline std::vector<ObjectivePoint> grid_points() {
  std::vector<ObjectivePoint> out;
  for (double rate : {1.0, 0.5, 0.0})
    for (double div : {0.0, 0.5, 1.0}) out.emplace_back(rate, div);
  return out;
}

}  // namespace mocdt
