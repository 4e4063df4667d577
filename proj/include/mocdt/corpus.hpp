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

// Data model, CSV ingestion and emission, synthetic data generation and
// matrix completion for the rating oracle.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mocdt/error.hpp"
#include "mocdt/random.hpp"

namespace mocdt {

using UserId = std::int32_t;
using ItemId = std::int32_t;
using CategoryId = std::int32_t;
using CategorySet = std::vector<CategoryId>;  // sorted, unique

struct Scale {
  double r_min = 1.0;
  double r_max = 5.0;
  bool operator==(const Scale&) const = default;
};

class Catalog {
 public:
  Catalog() = default;
  Catalog(std::size_t num_categories, std::vector<CategorySet> categories)
      : num_categories_(num_categories), categories_(std::move(categories)) {
    for (auto& set : categories_) {
      std::sort(set.begin(), set.end());
      set.erase(std::unique(set.begin(), set.end()), set.end());
    }
    validate();
  }

  std::size_t num_items() const { return categories_.size(); }
  std::size_t num_categories() const { return num_categories_; }
  const CategorySet& categories(ItemId item) const {
    if (item < 0 || static_cast<std::size_t>(item) >= categories_.size()) {
      throw LookupError("unknown item id " + std::to_string(item));
    }
    return categories_[static_cast<std::size_t>(item)];
  }
  const std::vector<CategorySet>& all() const { return categories_; }

  /// Categories referenced by at least one item, ascending.
  CategorySet used_categories() const {
    std::vector<bool> seen(num_categories_, false);
    for (const auto& set : categories_)
      for (CategoryId c : set) seen[static_cast<std::size_t>(c)] = true;
    CategorySet out;
    for (std::size_t c = 0; c < seen.size(); ++c)
      if (seen[c]) out.push_back(static_cast<CategoryId>(c));
    return out;
  }

  void validate() const {
    for (std::size_t i = 0; i < categories_.size(); ++i) {
      if (categories_[i].empty()) {
        throw ValidationError("item " + std::to_string(i) + " has no category");
      }
      for (CategoryId c : categories_[i]) {
        if (c < 0 || static_cast<std::size_t>(c) >= num_categories_) {
          throw ValidationError("item " + std::to_string(i) + " references category " +
                                std::to_string(c) + " outside [0, " +
                                std::to_string(num_categories_) + ")");
        }
      }
    }
  }

  bool operator==(const Catalog&) const = default;

 private:
  std::size_t num_categories_ = 0;
  std::vector<CategorySet> categories_;
};

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  bool operator==(const Interaction&) const = default;
};

enum class Origin { kOriginal, kRating, kDiversity, kRandom };

inline std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kOriginal: return "original";
    case Origin::kRating: return "rating";
    case Origin::kDiversity: return "diversity";
    case Origin::kRandom: return "random";
  }
  return "original";
}

inline Origin parse_origin(std::string_view s) {
  if (s == "original") return Origin::kOriginal;
  if (s == "rating") return Origin::kRating;
  if (s == "diversity") return Origin::kDiversity;
  if (s == "random") return Origin::kRandom;
  throw ParseError("unknown trajectory origin '" + std::string(s) + "'");
}

struct Trajectory {
  UserId user = 0;
  std::vector<Interaction> steps;
  Origin origin = Origin::kOriginal;

  std::size_t size() const { return steps.size(); }
  std::vector<ItemId> items() const {
    std::vector<ItemId> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.item);
    return out;
  }
  bool operator==(const Trajectory&) const = default;
};

/// Dense re-indexing of external ids. external[k] is the id that internal
/// index k came from; external ids are kept sorted ascending.
struct IdMap {
  std::vector<std::int64_t> external;

  static IdMap identity(std::size_t n) {
    IdMap m;
    m.external.resize(n);
    std::iota(m.external.begin(), m.external.end(), 0);
    return m;
  }
  std::int32_t internal(std::int64_t ext) const {
    auto it = std::lower_bound(external.begin(), external.end(), ext);
    if (it == external.end() || *it != ext) {
      throw LookupError("unknown external id " + std::to_string(ext));
    }
    return static_cast<std::int32_t>(it - external.begin());
  }
  std::int64_t to_external(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= external.size()) {
      throw LookupError("unknown internal id " + std::to_string(id));
    }
    return external[static_cast<std::size_t>(id)];
  }
  bool operator==(const IdMap&) const = default;
};

struct Dataset {
  Catalog catalog;
  std::vector<Trajectory> trajectories;
  Scale scale;
  std::size_t num_users = 0;
  IdMap user_ids;
  IdMap item_ids;

  double r_min() const { return scale.r_min; }
  double r_max() const { return scale.r_max; }

  void validate() const {
    if (!(scale.r_min < scale.r_max)) {
      throw ValidationError("rating scale requires r_min < r_max");
    }
    catalog.validate();
    for (const auto& traj : trajectories) {
      if (traj.user < 0 || static_cast<std::size_t>(traj.user) >= num_users) {
        throw ValidationError("trajectory user " + std::to_string(traj.user) + " out of range");
      }
      for (std::size_t k = 0; k < traj.steps.size(); ++k) {
        const auto& s = traj.steps[k];
        if (s.user != traj.user) throw ValidationError("interaction user differs from trajectory user");
        if (s.item < 0 || static_cast<std::size_t>(s.item) >= catalog.num_items()) {
          throw ValidationError("item " + std::to_string(s.item) + " not in catalog");
        }
        if (!(s.rating >= scale.r_min && s.rating <= scale.r_max)) {
          throw ValidationError("rating " + std::to_string(s.rating) + " outside scale");
        }
        if (k > 0 && !(traj.steps[k - 1].timestamp < s.timestamp)) {
          throw ValidationError("timestamps not strictly increasing for user " +
                                std::to_string(traj.user));
        }
      }
    }
  }

  bool operator==(const Dataset&) const = default;
};

/// Fully observed user x item ratings, row-major.
struct RatingOracle {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  Scale scale;
  std::vector<double> ratings;

  double at(UserId user, ItemId item) const {
    if (user < 0 || static_cast<std::size_t>(user) >= num_users || item < 0 ||
        static_cast<std::size_t>(item) >= num_items) {
      throw LookupError("oracle lookup (" + std::to_string(user) + ", " + std::to_string(item) +
                        ") out of range");
    }
    return ratings[static_cast<std::size_t>(user) * num_items + static_cast<std::size_t>(item)];
  }
  bool operator==(const RatingOracle&) const = default;
};

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ingestion

/// Reads `user,item,rating,timestamp` (optionally followed by
/// `,trajectory,origin` for augmented datasets) and `item,categories`.
inline Dataset ingest_csv(std::istream& interactions, std::istream& categories, Scale scale) {
  if (!(scale.r_min < scale.r_max)) throw ValidationError("rating scale requires r_min < r_max");
  using detail::parse_number;
  std::string line;

  // Categories first: they define the item universe.
  std::vector<std::pair<std::int64_t, CategorySet>> raw_items;
  if (!detail::read_line(categories, line) || line != "item,categories") {
    throw ParseError("categories line 1: expected header 'item,categories'");
  }
  std::size_t lineno = 1;
  CategoryId max_cat = -1;
  while (detail::read_line(categories, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split(line, ',');
    auto item = fields.size() == 2 ? parse_number<std::int64_t>(fields[0]) : std::nullopt;
    if (!item) throw ParseError("categories line " + std::to_string(lineno) + ": malformed row");
    CategorySet set;
    if (!fields[1].empty()) {
      for (auto tok : detail::split(fields[1], '|')) {
        auto c = parse_number<CategoryId>(tok);
        if (!c || *c < 0) {
          throw ParseError("categories line " + std::to_string(lineno) + ": bad category '" +
                           std::string(tok) + "'");
        }
        set.push_back(*c);
        max_cat = std::max(max_cat, *c);
      }
    }
    if (set.empty()) {
      throw ValidationError("categories line " + std::to_string(lineno) + ": item " +
                            std::to_string(*item) + " has no category");
    }
    raw_items.emplace_back(*item, std::move(set));
  }
  std::sort(raw_items.begin(), raw_items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t k = 1; k < raw_items.size(); ++k) {
    if (raw_items[k].first == raw_items[k - 1].first) {
      throw ValidationError("duplicate item " + std::to_string(raw_items[k].first) +
                            " in categories file");
    }
  }
  Dataset ds;
  ds.scale = scale;
  std::vector<CategorySet> sets;
  for (auto& [ext, set] : raw_items) {
    ds.item_ids.external.push_back(ext);
    sets.push_back(std::move(set));
  }
  ds.catalog = Catalog(static_cast<std::size_t>(max_cat + 1), std::move(sets));

  struct Row {
    std::int64_t user, item;
    double rating;
    std::int64_t timestamp;
    std::int64_t trajectory;
    Origin origin;
    std::size_t line;
  };
  std::vector<Row> rows;
  if (!detail::read_line(interactions, line)) {
    throw ParseError("interactions line 1: missing header");
  }
  bool extended = false;
  if (line == "user,item,rating,timestamp,trajectory,origin") {
    extended = true;
  } else if (line != "user,item,rating,timestamp") {
    throw ParseError("interactions line 1: expected header 'user,item,rating,timestamp'");
  }
  // Data lines are numbered from 1 after the header.
  lineno = 0;
  while (detail::read_line(interactions, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    const std::size_t want = extended ? 6 : 4;
    std::optional<std::int64_t> u, i, ts, tr;
    std::optional<double> r;
    if (f.size() == want) {
      u = parse_number<std::int64_t>(f[0]);
      i = parse_number<std::int64_t>(f[1]);
      r = parse_number<double>(f[2]);
      ts = parse_number<std::int64_t>(f[3]);
      tr = extended ? parse_number<std::int64_t>(f[4]) : u;
    }
    if (!u || !i || !r || !ts || !tr) {
      throw ParseError("interactions line " + std::to_string(lineno) + ": malformed row '" + line +
                       "'");
    }
    if (!(*r >= scale.r_min && *r <= scale.r_max)) {
      throw ValidationError("interactions line " + std::to_string(lineno) + ": rating " +
                            std::string(f[2]) + " outside scale [" +
                            detail::format_double(scale.r_min) + ", " +
                            detail::format_double(scale.r_max) + "]");
    }
    Origin origin = extended ? parse_origin(f[5]) : Origin::kOriginal;
    rows.push_back({*u, *i, *r, *ts, *tr, origin, lineno});
  }

  std::vector<std::int64_t> users;
  for (const auto& row : rows) users.push_back(row.user);
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  ds.user_ids.external = users;
  ds.num_users = users.size();

  std::map<std::int64_t, Trajectory> grouped;
  for (const auto& row : rows) {
    Interaction in;
    in.user = ds.user_ids.internal(row.user);
    try {
      in.item = ds.item_ids.internal(row.item);
    } catch (const LookupError&) {
      throw ValidationError("interactions line " + std::to_string(row.line) + ": item " +
                            std::to_string(row.item) + " has no category entry");
    }
    in.rating = row.rating;
    in.timestamp = row.timestamp;
    auto [it, fresh] = grouped.try_emplace(row.trajectory);
    if (fresh) {
      it->second.user = in.user;
      it->second.origin = row.origin;
    } else if (it->second.user != in.user) {
      throw ValidationError("interactions line " + std::to_string(row.line) +
                            ": trajectory mixes users");
    }
    it->second.steps.push_back(in);
  }
  for (auto& [key, traj] : grouped) {
    std::stable_sort(traj.steps.begin(), traj.steps.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    for (std::size_t k = 1; k < traj.steps.size(); ++k) {
      if (traj.steps[k].timestamp == traj.steps[k - 1].timestamp) {
        throw ValidationError("user " + std::to_string(ds.user_ids.to_external(traj.user)) +
                              ": duplicate timestamp " + std::to_string(traj.steps[k].timestamp));
      }
    }
    ds.trajectories.push_back(std::move(traj));
  }
  ds.validate();
  return ds;
}

inline Dataset ingest_csv(const std::string& interactions_path, const std::string& categories_path,
                          Scale scale) {
  auto inter = detail::open_input(interactions_path);
  auto cats = detail::open_input(categories_path);
  return ingest_csv(inter, cats, scale);
}

/// True when any trajectory is synthetic or a user owns several trajectories;
/// such datasets need the extended interactions format.
inline bool needs_extended_format(const Dataset& ds) {
  std::vector<bool> seen(ds.num_users, false);
  for (const auto& t : ds.trajectories) {
    if (t.origin != Origin::kOriginal || seen[static_cast<std::size_t>(t.user)]) return true;
    seen[static_cast<std::size_t>(t.user)] = true;
  }
  return false;
}

/// Writes the dataset under its external ids, so that ingest_csv returns an
/// identical Dataset.
inline void write_csv(const Dataset& ds, std::ostream& interactions, std::ostream& categories) {
  const bool extended = needs_extended_format(ds);
  interactions << (extended ? "user,item,rating,timestamp,trajectory,origin\n"
                            : "user,item,rating,timestamp\n");
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
    const auto& traj = ds.trajectories[t];
    for (const auto& s : traj.steps) {
      interactions << ds.user_ids.to_external(s.user) << ',' << ds.item_ids.to_external(s.item)
                   << ',' << detail::format_double(s.rating) << ',' << s.timestamp;
      if (extended) interactions << ',' << t << ',' << to_string(traj.origin);
      interactions << '\n';
    }
  }
  categories << "item,categories\n";
  for (std::size_t i = 0; i < ds.catalog.num_items(); ++i) {
    categories << ds.item_ids.to_external(static_cast<ItemId>(i)) << ',';
    const auto& set = ds.catalog.categories(static_cast<ItemId>(i));
    for (std::size_t k = 0; k < set.size(); ++k) categories << (k ? "|" : "") << set[k];
    categories << '\n';
  }
}

inline void write_csv(const Dataset& ds, const std::string& interactions_path,
                      const std::string& categories_path) {
  auto inter = detail::open_output(interactions_path);
  auto cats = detail::open_output(categories_path);
  write_csv(ds, inter, cats);
}

/// All interactions of `user` from its original trajectories, in timestamp order.
inline std::vector<std::pair<ItemId, double>> user_items(const Dataset& ds, UserId user) {
  if (user < 0 || static_cast<std::size_t>(user) >= ds.num_users) {
    throw LookupError("unknown user " + std::to_string(user));
  }
  std::vector<Interaction> steps;
  for (const auto& t : ds.trajectories) {
    if (t.user == user && t.origin == Origin::kOriginal) {
      steps.insert(steps.end(), t.steps.begin(), t.steps.end());
    }
  }
  if (steps.empty()) throw LookupError("user " + std::to_string(user) + " has no interactions");
  std::stable_sort(steps.begin(), steps.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::vector<std::pair<ItemId, double>> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.emplace_back(s.item, s.rating);
  return out;
}

/// Keeps the first floor(fraction * |tau|) steps of every original trajectory.
/// Synthetic trajectories pass through untouched.
inline Dataset holdout_prefix(const Dataset& ds, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DomainError("holdout fraction must be in (0, 1]");
  Dataset out = ds;
  for (auto& t : out.trajectories) {
    if (t.origin != Origin::kOriginal) continue;
    const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(t.size())));
    t.steps.resize(keep);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracle files

enum class OracleFormat { kTriplets, kDense };

inline void write_oracle_csv(const RatingOracle& oracle, std::ostream& out, OracleFormat format) {
  if (format == OracleFormat::kTriplets) {
    out << "user,item,rating\n";
    for (std::size_t u = 0; u < oracle.num_users; ++u)
      for (std::size_t i = 0; i < oracle.num_items; ++i)
        out << u << ',' << i << ',' << detail::format_double(oracle.ratings[u * oracle.num_items + i])
            << '\n';
    return;
  }
  out << "user";
  for (std::size_t i = 0; i < oracle.num_items; ++i) out << ',' << i;
  out << '\n';
  for (std::size_t u = 0; u < oracle.num_users; ++u) {
    out << u;
    for (std::size_t i = 0; i < oracle.num_items; ++i)
      out << ',' << detail::format_double(oracle.ratings[u * oracle.num_items + i]);
    out << '\n';
  }
}

/// Reads either oracle layout; the header decides which.
inline RatingOracle read_oracle_csv(std::istream& in, Scale scale) {
  using detail::parse_number;
  std::string line;
  if (!detail::read_line(in, line)) throw ParseError("oracle line 1: missing header");
  RatingOracle oracle;
  oracle.scale = scale;
  std::size_t lineno = 1;
  auto bad = [&]() { return ParseError("oracle line " + std::to_string(lineno) + ": malformed row"); };
  auto check = [&](double r) {
    if (!(r >= scale.r_min && r <= scale.r_max)) {
      throw ValidationError("oracle line " + std::to_string(lineno) + ": rating outside scale");
    }
    return r;
  };
  if (line == "user,item,rating") {
    std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
    while (detail::read_line(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = detail::split(line, ',');
      if (f.size() != 3) throw bad();
      auto u = parse_number<std::size_t>(f[0]);
      auto i = parse_number<std::size_t>(f[1]);
      auto r = parse_number<double>(f[2]);
      if (!u || !i || !r) throw bad();
      cells.emplace_back(*u, *i, check(*r));
      oracle.num_users = std::max(oracle.num_users, *u + 1);
      oracle.num_items = std::max(oracle.num_items, *i + 1);
    }
    if (cells.size() != oracle.num_users * oracle.num_items) {
      throw ValidationError("oracle triplets do not cover the full user x item matrix");
    }
    oracle.ratings.assign(cells.size(), scale.r_min);
    for (auto [u, i, r] : cells) oracle.ratings[u * oracle.num_items + i] = r;
    return oracle;
  }
  auto header = detail::split(line, ',');
  if (header.empty() || header[0] != "user") throw ParseError("oracle line 1: unknown header");
  oracle.num_items = header.size() - 1;
  while (detail::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != oracle.num_items + 1) throw bad();
    for (std::size_t k = 1; k < f.size(); ++k) {
      auto r = parse_number<double>(f[k]);
      if (!r) throw bad();
      oracle.ratings.push_back(check(*r));
    }
    ++oracle.num_users;
  }
  return oracle;
}

inline void write_oracle_csv(const RatingOracle& oracle, const std::string& path, OracleFormat format) {
  auto out = detail::open_output(path);
  write_oracle_csv(oracle, out, format);
}

inline RatingOracle read_oracle_csv(const std::string& path, Scale scale) {
  auto in = detail::open_input(path);
  return read_oracle_csv(in, scale);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  std::size_t num_users = 200;
  std::size_t num_items = 300;
  std::size_t num_categories = 12;
  std::size_t traj_len = 30;
  std::size_t latent_rank = 4;
  std::uint64_t seed = 0;
  // Behavior policy: each user picks greedily by true rating with a
  // per-user probability drawn uniformly from [greedy_min, greedy_max],
  // otherwise uniformly among unseen items.
  double greedy_min = 0.2;
  double greedy_max = 0.8;
  // Item factor = category prototype mixture + item_noise * uniform(-1, 1).
  double item_noise = 0.3;
  // User factors are uniform(-user_scale, user_scale) / sqrt(rank); larger
  // values spread the oracle over the full rating scale.
  double user_scale = 1.5;
  Scale scale{1.0, 5.0};
};

struct SynthResult {
  Dataset dataset;
  RatingOracle oracle;
};

/// R = clip(mid + half_range * U V^T) with mid/half_range taken from the scale.
/// `users` is num_users x rank and `items` num_items x rank, row-major.
inline RatingOracle oracle_from_factors(const std::vector<double>& users, const std::vector<double>& items,
                                        std::size_t rank, Scale scale) {
  if (rank == 0) throw DomainError("latent rank must be >= 1");
  RatingOracle oracle;
  oracle.num_users = users.size() / rank;
  oracle.num_items = items.size() / rank;
  oracle.scale = scale;
  oracle.ratings.resize(oracle.num_users * oracle.num_items);
  const double mid = 0.5 * (scale.r_min + scale.r_max);
  const double half = 0.5 * (scale.r_max - scale.r_min);
  for (std::size_t u = 0; u < oracle.num_users; ++u) {
    for (std::size_t i = 0; i < oracle.num_items; ++i) {
      double dot = 0.0;
      for (std::size_t k = 0; k < rank; ++k) dot += users[u * rank + k] * items[i * rank + k];
      oracle.ratings[u * oracle.num_items + i] = std::clamp(mid + half * dot, scale.r_min, scale.r_max);
    }
  }
  return oracle;
}

inline SynthResult synth_dataset(const SynthSpec& spec) {
  if (spec.latent_rank < 1) throw DomainError("latent_rank must be >= 1");
  if (spec.num_users == 0 || spec.num_items == 0 || spec.num_categories == 0) {
    throw DomainError("synth_dataset requires users, items and categories");
  }
  if (spec.traj_len > spec.num_items) {
    throw DomainError("traj_len " + std::to_string(spec.traj_len) + " exceeds num_items " +
                      std::to_string(spec.num_items) + " (trajectories sample without replacement)");
  }
  const std::size_t rank = spec.latent_rank;
  Rng rng(spec.seed);

  // Category prototypes in latent space; items inherit a mixture of their
  // categories' prototypes so ratings correlate with categories.
  std::vector<double> proto(spec.num_categories * rank);
  for (auto& v : proto) v = uniform(rng, -1.0, 1.0);

  std::vector<CategorySet> cats(spec.num_items);
  std::vector<double> item_f(spec.num_items * rank);
  const double inv_sqrt_rank = 1.0 / std::sqrt(static_cast<double>(rank));
  for (std::size_t i = 0; i < spec.num_items; ++i) {
    const auto primary = static_cast<CategoryId>(uniform_index(rng, spec.num_categories));
    CategorySet set{primary};
    const std::size_t extra = std::min(uniform_index(rng, 3), spec.num_categories - 1);
    while (set.size() < 1 + extra) {
      const auto c = static_cast<CategoryId>(uniform_index(rng, spec.num_categories));
      if (std::find(set.begin(), set.end(), c) == set.end()) set.push_back(c);
    }
    // Primary category weighs twice as much as each secondary one.
    const double total = 2.0 + static_cast<double>(set.size() - 1);
    for (std::size_t k = 0; k < rank; ++k) {
      double v = 2.0 * proto[static_cast<std::size_t>(primary) * rank + k];
      for (std::size_t j = 1; j < set.size(); ++j) v += proto[static_cast<std::size_t>(set[j]) * rank + k];
      item_f[i * rank + k] = (v / total + spec.item_noise * uniform(rng, -1.0, 1.0)) * inv_sqrt_rank;
    }
    std::sort(set.begin(), set.end());
    cats[i] = std::move(set);
  }
  std::vector<double> user_f(spec.num_users * rank);
  for (auto& v : user_f) v = uniform(rng, -1.0, 1.0) * spec.user_scale * inv_sqrt_rank;

  SynthResult out;
  out.oracle = oracle_from_factors(user_f, item_f, rank, spec.scale);
  Dataset& ds = out.dataset;
  ds.catalog = Catalog(spec.num_categories, std::move(cats));
  ds.scale = spec.scale;
  ds.num_users = spec.num_users;
  ds.user_ids = IdMap::identity(spec.num_users);
  ds.item_ids = IdMap::identity(spec.num_items);

  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const double greedy = uniform(rng, spec.greedy_min, spec.greedy_max);
    const double* row = &out.oracle.ratings[u * spec.num_items];
    // Items by descending true rating, ties by id; greedy picks walk it.
    std::vector<ItemId> by_rating(spec.num_items);
    std::iota(by_rating.begin(), by_rating.end(), 0);
    std::stable_sort(by_rating.begin(), by_rating.end(),
                     [&](ItemId a, ItemId b) { return row[a] > row[b]; });
    std::vector<bool> used(spec.num_items, false);
    std::size_t cursor = 0;
    Trajectory traj;
    traj.user = static_cast<UserId>(u);
    for (std::size_t step = 0; step < spec.traj_len; ++step) {
      ItemId pick;
      if (uniform01(rng) < greedy) {
        while (used[static_cast<std::size_t>(by_rating[cursor])]) ++cursor;
        pick = by_rating[cursor];
      } else {
        std::size_t k = uniform_index(rng, spec.num_items - step);
        pick = 0;
        for (std::size_t i = 0;; ++i) {
          if (used[i]) continue;
          if (k-- == 0) {
            pick = static_cast<ItemId>(i);
            break;
          }
        }
      }
      used[static_cast<std::size_t>(pick)] = true;
      traj.steps.push_back({static_cast<UserId>(u), pick, row[pick], static_cast<std::int64_t>(step)});
    }
    ds.trajectories.push_back(std::move(traj));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix completion

struct CompletionConfig {
  std::size_t rank = 8;
  std::size_t epochs = 60;
  double lr = 0.01;
  double reg = 0.02;
  std::uint64_t seed = 0;
};

struct Completion {
  RatingOracle oracle;
  double train_mae = 0.0;
};

/// Biased matrix factorization mu + b_u + b_i + p_u . q_i fit by SGD on
/// squared error with L2 regularization, then materialized and clipped.
inline Completion complete_matrix(const Dataset& ds, const CompletionConfig& cfg) {
  struct Obs {
    std::size_t user, item;
    double rating;
  };
  std::vector<Obs> obs;
  for (const auto& t : ds.trajectories) {
    if (t.origin != Origin::kOriginal) continue;
    for (const auto& s : t.steps) {
      obs.push_back({static_cast<std::size_t>(s.user), static_cast<std::size_t>(s.item), s.rating});
    }
  }
  if (obs.empty()) throw DomainError("complete_matrix needs at least one observed rating");
  if (cfg.rank == 0) throw DomainError("completion rank must be >= 1");
  const std::size_t nu = ds.num_users, ni = ds.catalog.num_items(), k = cfg.rank;

  double mu = 0.0;
  for (const auto& o : obs) mu += o.rating;
  mu /= static_cast<double>(obs.size());

  Rng rng(cfg.seed);
  std::vector<double> bu(nu, 0.0), bi(ni, 0.0), p(nu * k), q(ni * k);
  for (auto& v : p) v = uniform(rng, -0.1, 0.1);
  for (auto& v : q) v = uniform(rng, -0.1, 0.1);

  auto predict = [&](std::size_t u, std::size_t i) {
    double r = mu + bu[u] + bi[i];
    for (std::size_t f = 0; f < k; ++f) r += p[u * k + f] * q[i * k + f];
    return r;
  };

  std::vector<std::size_t> order(obs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span(order), rng);
    double sq = 0.0;
    for (std::size_t idx : order) {
      const auto& o = obs[idx];
      const double err = o.rating - predict(o.user, o.item);
      sq += err * err;
      bu[o.user] += cfg.lr * (err - cfg.reg * bu[o.user]);
      bi[o.item] += cfg.lr * (err - cfg.reg * bi[o.item]);
      for (std::size_t f = 0; f < k; ++f) {
        const double pu = p[o.user * k + f], qi = q[o.item * k + f];
        p[o.user * k + f] += cfg.lr * (err * qi - cfg.reg * pu);
        q[o.item * k + f] += cfg.lr * (err * pu - cfg.reg * qi);
      }
    }
    if (!std::isfinite(sq)) {
      throw DivergenceError("matrix factorization diverged at epoch " + std::to_string(epoch) +
                            "; try a smaller learning rate (lr=" + detail::format_double(cfg.lr) + ")");
    }
  }

  Completion out;
  out.oracle.num_users = nu;
  out.oracle.num_items = ni;
  out.oracle.scale = ds.scale;
  out.oracle.ratings.resize(nu * ni);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t i = 0; i < ni; ++i)
      out.oracle.ratings[u * ni + i] = std::clamp(predict(u, i), ds.scale.r_min, ds.scale.r_max);
  double mae = 0.0;
  for (const auto& o : obs) mae += std::abs(out.oracle.ratings[o.user * ni + o.item] - o.rating);
  out.train_mae = mae / static_cast<double>(obs.size());
  return out;
}

}  // namespace mocdt
