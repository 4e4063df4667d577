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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mocdt/corpus.hpp"
#include "mocdt/diff/tape.hpp"
#include "mocdt/model.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"

namespace mocdt {

enum class DecodeMode { kGreedy, kSample };

struct GenRequest {
  UserId user = 0;
  std::vector<ItemId> history;
  ObjectivePoint point;
  std::size_t horizon = 10;
  DecodeMode mode = DecodeMode::kGreedy;
  double temperature = 1.0;  // sampling only
  std::uint64_t seed = 0;
  bool forbid_repeats = true;
  bool exclude_history = false;
};

struct GenResult {
  std::vector<ItemId> items;
  std::vector<double> logprobs;  // log-probability of each chosen item
  std::optional<std::pair<double, double>> realized;  // (raw rating, raw diversity)
};

/// Raw cumulative rating under the oracle and diversity of the sequence.
inline std::pair<double, double> score_sequence(const RatingOracle& oracle, const Catalog& catalog, UserId user,
                                                std::span<const ItemId> items) {
  if (items.empty()) throw DomainError("score_sequence: empty item list");
  double rating = 0.0;
  for (ItemId item : items) rating += oracle.at(user, item);
  const double div = items.size() >= 2 ? diversity(items, catalog) : 0.0;
  return {rating, div};
}

/// Index of the largest allowed logit; ties go to the smaller index.
template <class T>
std::size_t pick_greedy(std::span<const T> logits, const std::vector<bool>& banned) {
  std::size_t best = logits.size();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (banned[i]) continue;
    if (best == logits.size() || logits[i] > logits[best]) best = i;
  }
  return best;
}

/// Log-softmax of the allowed logits divided by `temperature`.
template <class T>
std::vector<double> masked_log_probs(std::span<const T> logits, const std::vector<bool>& banned, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!banned[i]) mx = std::max(mx, static_cast<double>(logits[i]) / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!banned[i]) sum += std::exp(static_cast<double>(logits[i]) / temperature - mx);
  const double log_z = mx + std::log(sum);
  std::vector<double> out(logits.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!banned[i]) out[i] = static_cast<double>(logits[i]) / temperature - log_z;
  return out;
}

/// Autoregressive generation of `horizon` items. The control signal and
/// initial state are computed once and held for the whole sequence.
template <class T>
GenResult generate(const Model<T>& model, const GenRequest& req, const RatingOracle* oracle = nullptr,
                   const Catalog* catalog = nullptr) {
  const auto& cfg = model.config();
  if (req.horizon < 1) throw DomainError("generate: horizon must be >= 1");
  if (req.horizon > cfg.horizon) {
    throw DomainError("generate: horizon " + std::to_string(req.horizon) + " exceeds model horizon " +
                      std::to_string(cfg.horizon));
  }
  if (req.mode == DecodeMode::kSample && !(req.temperature > 0.0)) {
    throw DomainError("generate: sampling temperature must be positive");
  }
  std::vector<bool> banned(cfg.vocab, false);
  if (req.exclude_history) {
    for (ItemId h : req.history) {
      if (h >= 0 && static_cast<std::size_t>(h) < cfg.vocab) banned[static_cast<std::size_t>(h)] = true;
    }
  }
  const auto allowed = static_cast<std::size_t>(std::count(banned.begin(), banned.end(), false));
  if (req.forbid_repeats && allowed < req.horizon) {
    throw DomainError("generate: only " + std::to_string(allowed) + " items available for a horizon of " +
                      std::to_string(req.horizon) + " without repeats");
  }
  if (allowed == 0) throw DomainError("generate: every item is excluded");

  std::span<const ItemId> history(req.history);
  if (history.size() > cfg.max_hist) history = history.last(cfg.max_hist);

  diff::Tape<T> tape(/*checked=*/false, /*grad_enabled=*/false);
  Session<T> session(model, tape);
  auto [control, state] = session.condition(req.user, history, req.point);

  Rng rng(req.seed);
  GenResult result;
  for (std::size_t step = 0; step < req.horizon; ++step) {
    auto logits_var = session.sequence_logits(control, state, result.items, /*last_only=*/true);
    std::span<const T> logits(logits_var.value().data(), cfg.vocab);
    std::size_t pick;
    if (req.mode == DecodeMode::kGreedy) {
      pick = pick_greedy(logits, banned);
      result.logprobs.push_back(masked_log_probs(logits, banned, 1.0)[pick]);
    } else {
      const auto logp = masked_log_probs(logits, banned, req.temperature);
      const double u = uniform01(rng);
      double acc = 0.0;
      pick = pick_greedy(logits, banned);  // fallback for rounding at the tail
      for (std::size_t i = 0; i < logp.size(); ++i) {
        if (banned[i]) continue;
        acc += std::exp(logp[i]);
        if (u < acc) {
          pick = i;
          break;
        }
      }
      result.logprobs.push_back(logp[pick]);
    }
    result.items.push_back(static_cast<ItemId>(pick));
    if (req.forbid_repeats) banned[pick] = true;
  }
  if (oracle && catalog) result.realized = score_sequence(*oracle, *catalog, req.user, result.items);
  return result;
}

}  // namespace mocdt
