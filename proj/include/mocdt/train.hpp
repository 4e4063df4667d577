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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <vector>

#include "mocdt/checkpoint.hpp"
#include "mocdt/corpus.hpp"
#include "mocdt/diff/adam.hpp"
#include "mocdt/diff/tape.hpp"
#include "mocdt/model.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"

namespace mocdt {

/// One window per trajectory and split t in [1, |tau| - H]: history is items
/// 1..t (last max_hist kept), targets are items t+1..t+H, and the point is
/// what those targets realized.
inline std::vector<TrainingWindow> make_windows(const Dataset& ds, std::size_t horizon, std::size_t max_hist) {
  if (horizon < 2) throw DomainError("make_windows: horizon must be >= 2");
  std::vector<TrainingWindow> out;
  for (const auto& traj : ds.trajectories) {
    if (traj.size() < horizon + 1) continue;
    const auto items = traj.items();
    std::vector<double> ratings;
    for (const auto& s : traj.steps) ratings.push_back(s.rating);
    for (std::size_t t = 1; t + horizon <= traj.size(); ++t) {
      TrainingWindow w;
      w.user = traj.user;
      const std::size_t begin = t > max_hist ? t - max_hist : 0;
      w.history.assign(items.begin() + static_cast<std::ptrdiff_t>(begin), items.begin() + static_cast<std::ptrdiff_t>(t));
      w.targets.assign(items.begin() + static_cast<std::ptrdiff_t>(t),
                       items.begin() + static_cast<std::ptrdiff_t>(t + horizon));
      const std::span<const double> target_ratings(ratings.data() + t, horizon);
      w.point = normalize(cumulative_rating(target_ratings), diversity(w.targets, ds.catalog), horizon, ds.r_max());
      out.push_back(std::move(w));
    }
  }
  return out;
}

/// Optimizer and loop settings. The learning rate, batch size and optimizer
/// are project defaults chosen for desk-scale runs.
struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  std::size_t threads = 1;
  bool checked = false;
  std::string checkpoint_dir;  // empty: no checkpoints written

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  }
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean window loss per epoch
  std::vector<std::string> checkpoints;
};

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03zu.ckpt", epoch);
  return buf;
}

/// Deterministic order independent of how trajectories were stored.
inline void sort_windows(std::vector<TrainingWindow>& windows) {
  std::sort(windows.begin(), windows.end(), [](const TrainingWindow& a, const TrainingWindow& b) {
    return std::tie(a.user, a.history, a.targets) < std::tie(b.user, b.history, b.targets);
  });
}

/// Seeded permutation of [0, n) for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  Rng rng(derive_seed(seed, 0x5f, epoch));
  shuffle(std::span(order), rng);
  return order;
}

namespace detail {

template <class T>
struct WindowPass {
  std::unique_ptr<diff::Tape<T>> tape;
  std::unique_ptr<Session<T>> session;
  double loss = 0.0;
};

template <class T>
WindowPass<T> window_pass(const Model<T>& model, const TrainingWindow& w, T weight, bool checked) {
  WindowPass<T> pass;
  pass.tape = std::make_unique<diff::Tape<T>>(checked);
  pass.session = std::make_unique<Session<T>>(model, *pass.tape);
  auto loss = pass.session->nll_loss(w);
  pass.loss = static_cast<double>(loss.value()[0]);
  pass.tape->backward(diff::scale(loss, weight));
  return pass;
}

}  // namespace detail

/// Mean gradient of the batch loss. Window gradients are summed in batch
/// order whatever the thread count, so results do not depend on it.
template <class T>
std::vector<diff::Array<T>> batch_gradients(const Model<T>& model, std::span<const TrainingWindow* const> batch,
                                            std::size_t threads, bool checked, double* mean_loss = nullptr) {
  std::vector<diff::Array<T>> grads;
  for (const auto& p : model.params()) grads.push_back(diff::Array<T>::like(p));
  const T weight = T(1.0 / static_cast<double>(batch.size()));
  threads = std::max<std::size_t>(1, std::min(threads, batch.size()));
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < batch.size(); start += threads) {
    const std::size_t end = std::min(batch.size(), start + threads);
    std::vector<detail::WindowPass<T>> passes(end - start);
    if (end - start == 1) {
      passes[0] = detail::window_pass(model, *batch[start], weight, checked);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(end - start);
      for (std::size_t b = start; b < end; ++b) {
        pool.emplace_back([&, b] {
          try {
            passes[b - start] = detail::window_pass(model, *batch[b], weight, checked);
          } catch (...) {
            errors[b - start] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (auto& pass : passes) {
      loss_sum += pass.loss;
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto var = pass.session->param(k);
        if (!pass.tape->has_grad(var)) continue;
        const auto& g = pass.tape->grad(var);
        for (std::size_t i = 0; i < g.size(); ++i) grads[k][i] += g[i];
      }
    }
  }
  if (mean_loss) *mean_loss = loss_sum / static_cast<double>(batch.size());
  return grads;
}

template <class T>
using EpochHook = std::function<void(std::size_t epoch, const Model<T>& model, double mean_loss)>;

/// Mini-batch Adam on the mean window NLL with global-norm clipping.
/// Epochs are numbered from 0; `on_epoch` runs after each one.
template <class T>
TrainResult train(Model<T>& model, std::vector<TrainingWindow> windows, const TrainConfig& cfg,
                  const std::type_identity_t<EpochHook<T>>& on_epoch = {}) {
  cfg.validate();
  if (windows.empty()) throw DomainError("train: no training windows");
  sort_windows(windows);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  diff::AdamHyper hyper;
  hyper.lr = cfg.lr;
  hyper.checked = cfg.checked;
  diff::AdamState<T> state;
  TrainResult result;
  std::vector<const TrainingWindow*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(windows.size(), cfg.seed, epoch);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(&windows[order[k]]);
      }
      double batch_loss = 0.0;
      auto grads = batch_gradients<T>(model, batch, cfg.threads, cfg.checked, &batch_loss);
      const double norm = diff::clip_by_global_norm<T>(grads, cfg.grad_clip);
      if (!std::isfinite(batch_loss) || !std::isfinite(norm)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + " (loss " + detail::format_double(batch_loss) + ")");
      }
      diff::adam_step<T>(model.params(), grads, state, hyper);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(windows.size()));
    if (!cfg.checkpoint_dir.empty()) {
      auto path = (std::filesystem::path(cfg.checkpoint_dir) / checkpoint_name(epoch)).string();
      save_checkpoint(model, path);
      result.checkpoints.push_back(path);
    }
    if (on_epoch) on_epoch(epoch, model, result.loss_curve.back());
  }
  return result;
}

inline void write_loss_curve(const std::vector<double>& curve, std::ostream& out) {
  out << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) out << e << ',' << detail::format_double(curve[e]) << '\n';
}

}  // namespace mocdt
