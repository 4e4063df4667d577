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

// Controllability protocol: generate H items per (checkpoint, user, point),
// score them with the oracle, and aggregate per point.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "mocdt/augment.hpp"
#include "mocdt/checkpoint.hpp"
#include "mocdt/corpus.hpp"
#include "mocdt/infer.hpp"
#include "mocdt/model.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/train.hpp"

namespace mocdt {

struct EvalConfig {
  std::vector<ObjectivePoint> points = grid_points();
  std::optional<std::size_t> sample_users;  // nullopt: every user
  std::uint64_t user_seed = 0;
  std::size_t horizon = 10;
  double cut = 0.8;  // history ends at floor(cut * |tau|)
  std::size_t max_hist = 50;
  bool exclude_history = false;
  std::size_t threads = 1;

  void validate() const {
    if (points.empty()) throw ConfigError("eval.points must not be empty");
    if (horizon < 2) throw ConfigError("eval.horizon must be >= 2");
    if (!(cut > 0.0 && cut <= 1.0)) throw ConfigError("eval.cut must lie in (0, 1]");
  }
};

struct EvalRow {
  std::size_t epoch = 0;
  ObjectivePoint point;
  double mean_rating = 0.0;
  double std_rating = 0.0;
  double mean_diversity = 0.0;
  double std_diversity = 0.0;
  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // epoch-major, points in config order
  // Per-user raw (rating, diversity) behind each row, same order as rows.
  std::vector<std::vector<std::pair<double, double>>> samples;
  // orderings[m][i][j]: fraction of epochs where point i beats point j on
  // metric m (0 rating, 1 diversity).
  std::vector<std::vector<std::vector<double>>> orderings;

  std::vector<std::size_t> epochs() const {
    std::vector<std::size_t> out;
    for (const auto& r : rows)
      if (out.empty() || out.back() != r.epoch) out.push_back(r.epoch);
    return out;
  }
  std::size_t num_points() const {
    const auto e = epochs();
    return e.empty() ? 0 : rows.size() / e.size();
  }
};

struct EvalUser {
  UserId user;
  std::vector<ItemId> history;
};

/// Users under test with their history: the last max_hist items before the
/// cut of the user's first original trajectory.
inline std::vector<EvalUser> eval_users(const Dataset& ds, const EvalConfig& cfg) {
  std::vector<EvalUser> out;
  std::vector<bool> seen(ds.num_users, false);
  for (const auto& traj : ds.trajectories) {
    if (traj.origin != Origin::kOriginal || seen[static_cast<std::size_t>(traj.user)]) continue;
    seen[static_cast<std::size_t>(traj.user)] = true;
    const auto cut = static_cast<std::size_t>(std::floor(cfg.cut * static_cast<double>(traj.size())));
    const auto items = traj.items();
    const std::size_t begin = cut > cfg.max_hist ? cut - cfg.max_hist : 0;
    out.push_back({traj.user, std::vector<ItemId>(items.begin() + static_cast<std::ptrdiff_t>(begin),
                                                  items.begin() + static_cast<std::ptrdiff_t>(cut))});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.user < b.user; });
  if (cfg.sample_users && *cfg.sample_users < out.size()) {
    Rng rng(cfg.user_seed);
    shuffle(std::span(out), rng);
    out.resize(*cfg.sample_users);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.user < b.user; });
  }
  return out;
}

/// Mean and population standard deviation, two-pass.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

/// Appends one row per point for a single checkpoint.
template <class T>
void evaluate_epoch(EvalReport& report, const Model<T>& model, std::size_t epoch, const RatingOracle& oracle,
                    const Dataset& ds, const EvalConfig& cfg) {
  cfg.validate();
  const auto users = eval_users(ds, cfg);
  for (const auto& u : users) {
    if (static_cast<std::size_t>(u.user) >= oracle.num_users) {
      throw LookupError("oracle has no row for user " + std::to_string(u.user));
    }
  }
  const std::size_t np = cfg.points.size();
  // scores[p][u]
  std::vector<std::vector<std::pair<double, double>>> scores(np, std::vector<std::pair<double, double>>(users.size()));
  auto run = [&](std::size_t job) {
    const std::size_t p = job / users.size(), u = job % users.size();
    GenRequest req;
    req.user = users[u].user;
    req.history = users[u].history;
    req.point = cfg.points[p];
    req.horizon = cfg.horizon;
    req.exclude_history = cfg.exclude_history;
    scores[p][u] = score_sequence(oracle, ds.catalog, req.user, generate(model, req).items);
  };
  const std::size_t jobs = np * users.size();
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, jobs));
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs; ++j) run(j);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j = w; j < jobs; j += threads) run(j);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  for (std::size_t p = 0; p < np; ++p) {
    std::vector<double> r, d;
    for (const auto& [rating, div] : scores[p]) {
      r.push_back(rating);
      d.push_back(div);
    }
    EvalRow row;
    row.epoch = epoch;
    row.point = cfg.points[p];
    std::tie(row.mean_rating, row.std_rating) = mean_std(r);
    std::tie(row.mean_diversity, row.std_diversity) = mean_std(d);
    report.rows.push_back(row);
    report.samples.push_back(std::move(scores[p]));
  }
}

/// Recomputes the pairwise ordering matrices from the rows.
inline void compute_orderings(EvalReport& report) {
  const auto epochs = report.epochs();
  const std::size_t np = report.num_points();
  report.orderings.assign(2, std::vector<std::vector<double>>(np, std::vector<double>(np, 0.0)));
  if (epochs.empty()) return;
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < np; ++j) {
        const auto& a = report.rows[e * np + i];
        const auto& b = report.rows[e * np + j];
        if (a.mean_rating > b.mean_rating) report.orderings[0][i][j] += 1.0;
        if (a.mean_diversity > b.mean_diversity) report.orderings[1][i][j] += 1.0;
      }
    }
  }
  for (auto& m : report.orderings)
    for (auto& row : m)
      for (auto& v : row) v /= static_cast<double>(epochs.size());
}

/// Evaluates checkpoints `epochs` read from `dir` (files epoch_NNN.ckpt).
template <class T>
EvalReport evaluate(const std::string& dir, const std::vector<std::size_t>& epochs, const RatingOracle& oracle,
                    const Dataset& ds, const EvalConfig& cfg) {
  EvalReport report;
  for (std::size_t epoch : epochs) {
    const auto path = std::filesystem::path(dir) / checkpoint_name(epoch);
    if (!std::filesystem::exists(path)) {
      throw IoError("missing checkpoint for epoch " + std::to_string(epoch) + ": " + path.string());
    }
    const auto model = load_checkpoint<T>(path.string());
    evaluate_epoch(report, model, epoch, oracle, ds, cfg);
  }
  compute_orderings(report);
  return report;
}

/// Single in-memory model, reported under `epoch`.
template <class T>
EvalReport evaluate(const Model<T>& model, std::size_t epoch, const RatingOracle& oracle, const Dataset& ds,
                    const EvalConfig& cfg) {
  EvalReport report;
  evaluate_epoch(report, model, epoch, oracle, ds, cfg);
  compute_orderings(report);
  return report;
}

// ---------------------------------------------------------------------------
// Report files

inline void write_report_csv(const EvalReport& report, std::ostream& out) {
  using detail::format_double;
  out << "epoch,o_rate,o_div,mean_rating,std_rating,mean_diversity,std_diversity\n";
  for (const auto& r : report.rows) {
    out << r.epoch << ',' << format_double(r.point.o_rate) << ',' << format_double(r.point.o_div) << ','
        << format_double(r.mean_rating) << ',' << format_double(r.std_rating) << ','
        << format_double(r.mean_diversity) << ',' << format_double(r.std_diversity) << '\n';
  }
}

inline EvalReport read_report_csv(std::istream& in) {
  using detail::parse_number;
  std::string line;
  if (!detail::read_line(in, line) || line != "epoch,o_rate,o_div,mean_rating,std_rating,mean_diversity,std_diversity") {
    throw ParseError("report line 1: unexpected header");
  }
  EvalReport report;
  std::size_t lineno = 1;
  while (detail::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 7) throw ParseError("report line " + std::to_string(lineno) + ": expected 7 fields");
    auto epoch = parse_number<std::size_t>(f[0]);
    std::vector<double> v;
    for (std::size_t k = 1; k < 7; ++k) {
      auto x = parse_number<double>(f[k]);
      if (!x) throw ParseError("report line " + std::to_string(lineno) + ": bad number '" + std::string(f[k]) + "'");
      v.push_back(*x);
    }
    if (!epoch) throw ParseError("report line " + std::to_string(lineno) + ": bad epoch");
    EvalRow row;
    row.epoch = *epoch;
    row.point = ObjectivePoint(v[0], v[1]);
    row.mean_rating = v[2];
    row.std_rating = v[3];
    row.mean_diversity = v[4];
    row.std_diversity = v[5];
    report.rows.push_back(row);
  }
  // Rows must form complete epoch blocks over the same point list.
  const auto epochs = report.epochs();
  if (!epochs.empty() && report.rows.size() % epochs.size() != 0) {
    throw ValidationError("report rows do not form one block per epoch");
  }
  const std::size_t np = report.num_points();
  for (std::size_t k = 0; k < report.rows.size(); ++k) {
    if (report.rows[k].epoch != epochs[k / np] || !(report.rows[k].point == report.rows[k % np].point)) {
      throw ValidationError("report line " + std::to_string(k + 2) + ": epoch/point layout is inconsistent");
    }
  }
  compute_orderings(report);
  return report;
}

// ---------------------------------------------------------------------------
// Controllability statistics

struct ControllabilityStats {
  double spearman_rate = 0.0;
  double spearman_div = 0.0;
  double order_stability = 0.0;
  double order_stability_rate = 0.0;
  double order_stability_div = 0.0;
  // Raised when some checkpoint had all-equal values for a metric, which
  // leaves its correlation undefined (reported as 0).
  bool degenerate_rate = false;
  bool degenerate_div = false;
};

/// Average ranks (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> idx(xs.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman correlation; nullopt when either side is constant.
inline std::optional<double> spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const auto [mx, sx] = mean_std(rx);
  const auto [my, sy] = mean_std(ry);
  if (sx == 0.0 || sy == 0.0) return std::nullopt;
  double cov = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) cov += (rx[k] - mx) * (ry[k] - my);
  cov /= static_cast<double>(rx.size());
  return cov / (sx * sy);
}

/// Restricts a report to its last `count` checkpoints.
inline EvalReport last_epochs(const EvalReport& report, std::size_t count) {
  const auto epochs = report.epochs();
  const std::size_t np = report.num_points();
  const std::size_t skip = epochs.size() > count ? epochs.size() - count : 0;
  EvalReport out;
  out.rows.assign(report.rows.begin() + static_cast<std::ptrdiff_t>(skip * np), report.rows.end());
  if (report.samples.size() == report.rows.size()) {
    out.samples.assign(report.samples.begin() + static_cast<std::ptrdiff_t>(skip * np), report.samples.end());
  }
  compute_orderings(out);
  return out;
}

inline ControllabilityStats controllability_stats(const EvalReport& report) {
  const auto epochs = report.epochs();
  const std::size_t np = report.num_points();
  if (epochs.size() < 2 || np < 3) {
    throw DomainError("controllability_stats needs >= 2 checkpoints and >= 3 points (got " +
                      std::to_string(epochs.size()) + " and " + std::to_string(np) + ")");
  }
  ControllabilityStats stats;
  std::vector<int> sign_rate(np * np, 2), sign_div(np * np, 2);
  std::vector<bool> stable_rate(np * np, true), stable_div(np * np, true);
  auto sign = [](double a, double b) { return a > b ? 1 : (a < b ? -1 : 0); };
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    std::vector<double> cond_r, cond_d, real_r, real_d;
    for (std::size_t p = 0; p < np; ++p) {
      const auto& row = report.rows[e * np + p];
      cond_r.push_back(row.point.o_rate);
      cond_d.push_back(row.point.o_div);
      real_r.push_back(row.mean_rating);
      real_d.push_back(row.mean_diversity);
    }
    const auto sr = spearman(cond_r, real_r);
    const auto sd = spearman(cond_d, real_d);
    stats.degenerate_rate = stats.degenerate_rate || !sr;
    stats.degenerate_div = stats.degenerate_div || !sd;
    stats.spearman_rate += sr.value_or(0.0);
    stats.spearman_div += sd.value_or(0.0);
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = i + 1; j < np; ++j) {
        const int a = sign(real_r[i], real_r[j]), b = sign(real_d[i], real_d[j]);
        auto& s1 = sign_rate[i * np + j];
        auto& s2 = sign_div[i * np + j];
        if (s1 != 2 && s1 != a) stable_rate[i * np + j] = false;
        if (s2 != 2 && s2 != b) stable_div[i * np + j] = false;
        s1 = a;
        s2 = b;
      }
    }
  }
  stats.spearman_rate /= static_cast<double>(epochs.size());
  stats.spearman_div /= static_cast<double>(epochs.size());
  std::size_t pairs = 0, ok_r = 0, ok_d = 0;
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = i + 1; j < np; ++j) {
      ++pairs;
      ok_r += stable_rate[i * np + j];
      ok_d += stable_div[i * np + j];
    }
  }
  stats.order_stability_rate = static_cast<double>(ok_r) / static_cast<double>(pairs);
  stats.order_stability_div = static_cast<double>(ok_d) / static_cast<double>(pairs);
  stats.order_stability = 0.5 * (stats.order_stability_rate + stats.order_stability_div);
  return stats;
}

// ---------------------------------------------------------------------------
// Ablation

enum class AblationAxis { kLayers, kHorizon };

/// Everything needed to train and evaluate one configuration from a raw
/// dataset: holdout cut, augmentation, model and optimizer settings.
struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::vector<AugmentSpec> augment;
};

/// Holdout prefix, augmentation and windows for horizon `horizon`.
inline Dataset training_dataset(const Dataset& full, const PipelineConfig& cfg, std::size_t horizon) {
  Dataset train = holdout_prefix(full, cfg.eval.cut);
  const Dataset base = train;
  for (const auto& spec : cfg.augment) {
    auto aug = augment_dataset(base, spec, horizon);
    for (std::size_t k = base.trajectories.size(); k < aug.dataset.trajectories.size(); ++k) {
      train.trajectories.push_back(std::move(aug.dataset.trajectories[k]));
    }
  }
  return train;
}

struct AblationRow {
  std::size_t value = 0;
  double rating = 0.0;
  double rating_per_h = 0.0;
  double diversity = 0.0;
};

/// Trains one model per axis value from the same seed and evaluates the
/// final model at the point (1.0, 1.0).
template <class T>
std::vector<AblationRow> ablation_sweep(const Dataset& full, const RatingOracle& oracle, AblationAxis axis,
                                        const std::vector<std::size_t>& values, const PipelineConfig& base,
                                        const std::function<void(const std::string&)>& log = {}) {
  std::vector<AblationRow> rows;
  for (std::size_t value : values) {
    PipelineConfig cfg = base;
    if (axis == AblationAxis::kLayers) {
      if (value < 1) throw ConfigError("ablation: layer count must be >= 1");
      cfg.model.layers = value;
    } else {
      if (value < 2) throw ConfigError("ablation: horizon must be >= 2");
      cfg.model.horizon = value;
    }
    cfg.eval.horizon = cfg.model.horizon;
    cfg.eval.max_hist = cfg.model.max_hist;
    cfg.eval.points = {ObjectivePoint(1.0, 1.0)};
    cfg.train.checkpoint_dir.clear();
    const Dataset train_ds = training_dataset(full, cfg, cfg.model.horizon);
    Model<T> model(cfg.model);
    auto windows = make_windows(train_ds, cfg.model.horizon, cfg.model.max_hist);
    if (log) log("ablation value " + std::to_string(value) + ": " + std::to_string(windows.size()) + " windows");
    train(model, std::move(windows), cfg.train);
    const auto report = evaluate(model, cfg.train.epochs - 1, oracle, full, cfg.eval);
    const auto& r = report.rows.front();
    rows.push_back({value, r.mean_rating, r.mean_rating / static_cast<double>(cfg.model.horizon), r.mean_diversity});
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, AblationAxis axis, std::ostream& out) {
  using detail::format_double;
  out << (axis == AblationAxis::kLayers ? "layers" : "horizon") << ",rating,rating_per_h,diversity\n";
  for (const auto& r : rows) {
    out << r.value << ',' << format_double(r.rating) << ',' << format_double(r.rating_per_h) << ','
        << format_double(r.diversity) << '\n';
  }
}

/// Transposed layout: one column per axis value, rows Rating, Rating/H, Diversity.
inline void write_ablation_table(const std::vector<AblationRow>& rows, AblationAxis axis, std::ostream& out) {
  auto fixed3 = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return std::string(buf);
  };
  out << '|' << (axis == AblationAxis::kLayers ? " # Layer " : " H ") << '|';
  for (const auto& r : rows) out << ' ' << r.value << " |";
  out << "\n|---|";
  for (std::size_t k = 0; k < rows.size(); ++k) out << "---|";
  out << "\n| Rating |";
  for (const auto& r : rows) out << ' ' << fixed3(r.rating) << " |";
  // Rating/H only varies independently of Rating along the horizon axis.
  if (axis == AblationAxis::kHorizon) {
    out << "\n| Rating/H |";
    for (const auto& r : rows) out << ' ' << fixed3(r.rating_per_h) << " |";
  }
  out << "\n| Diversity |";
  for (const auto& r : rows) out << ' ' << fixed3(r.diversity) << " |";
  out << '\n';
}

}  // namespace mocdt
