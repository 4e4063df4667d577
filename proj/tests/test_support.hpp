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


// Shared fixtures for the unit tests: tiny catalogs and datasets, and a
// central finite-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mocdt/mocdt.hpp"

namespace mocdt::testing {

using Arr = diff::Array<double>;
using Var = diff::Var<double>;
using Tape = diff::Tape<double>;

/// Builds a dataset with one original trajectory per user from
/// (item, rating) lists; timestamps are 0, 1, 2, ...
inline Dataset make_dataset(std::vector<CategorySet> categories, std::size_t num_categories,
                            const std::vector<std::vector<std::pair<ItemId, double>>>& per_user,
                            Scale scale = {1.0, 5.0}) {
  Dataset ds;
  ds.catalog = Catalog(num_categories, std::move(categories));
  ds.scale = scale;
  ds.num_users = per_user.size();
  ds.user_ids = IdMap::identity(per_user.size());
  ds.item_ids = IdMap::identity(ds.catalog.num_items());
  for (std::size_t u = 0; u < per_user.size(); ++u) {
    Trajectory t;
    t.user = static_cast<UserId>(u);
    std::int64_t ts = 0;
    for (const auto& [item, rating] : per_user[u]) t.steps.push_back({t.user, item, rating, ts++});
    ds.trajectories.push_back(std::move(t));
  }
  ds.validate();
  return ds;
}

/// Relative error with a denominator floor: |a - n| / max(|a|, |n|, floor).
/// The floor keeps gradients near zero, whose finite-difference estimate is
/// dominated by round-off, from reporting spurious relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "array[index]: analytic vs numeric"
};

/// Builds a scalar loss on a fresh tape; returns the loss and the tape
/// handles of the arrays in `params` (same order).
using LossBuilder = std::function<std::pair<Var, std::vector<Var>>(Tape&)>;

/// Compares reverse-mode gradients with central differences for every
/// element of every array in `params`. `params` must be the storage the
/// builder reads, so perturbing it changes the loss.
inline GradCheck check_gradients(std::vector<Arr*> params, const LossBuilder& build, double step = 1e-5) {
  std::vector<Arr> analytic;
  {
    Tape tape(/*checked=*/true);
    auto [loss, vars] = build(tape);
    tape.backward(loss);
    for (auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&] {
    Tape tape(/*checked=*/true, /*grad_enabled=*/false);
    return build(tape).first.value()[0];
  };
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Arr& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = eval();
      p[i] = saved - step;
      const double down = eval();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[k][i], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = std::to_string(k) + "[" + std::to_string(i) + "]: " + std::to_string(analytic[k][i]) +
                    " vs " + std::to_string(numeric);
      }
    }
  }
  return out;
}

/// Redraws every parameter of a model so that no gradient path is blocked by
/// zero initialization (decoder weights, biases) and gains differ from one.
inline void randomize(Model<double>& model, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    const bool gain = model.names()[k].ends_with(".gain");
    for (auto& v : model.params()[k].values()) v = (gain ? 1.0 : 0.0) + uniform(rng, -scale, scale);
  }
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.horizon = 3;
  c.vocab = 20;
  c.num_users = 4;
  c.max_hist = 5;
  c.seed = 1;
  return c;
}

}  // namespace mocdt::testing
