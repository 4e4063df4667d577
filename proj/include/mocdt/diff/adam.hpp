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

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mocdt/diff/array.hpp"
#include "mocdt/error.hpp"

namespace mocdt::diff {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool checked = true;
};

template <class T>
struct AdamState {
  std::vector<Array<T>> m;
  std::vector<Array<T>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update, applied to `params` in place.
template <class T>
void adam_step(std::span<Array<T>> params, std::span<const Array<T>> grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Array<T>::like(p));
      state.v.push_back(Array<T>::like(p));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match params");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k]) || !params[k].same_shape(state.m[k])) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(k) + ": " +
                       params[k].shape_string() + " vs " + grads[k].shape_string());
    }
    if (hyper.checked && !grads[k].all_finite()) {
      throw DivergenceError("adam_step: non-finite gradient at parameter " + std::to_string(k));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const T b1 = T(hyper.beta1), b2 = T(hyper.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params[k].data();
    const T* g = grads[k].data();
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      p[i] -= T(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

template <class T>
double global_norm(std::span<const Array<T>> grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_by_global_norm(std::span<Array<T>> grads, double max_norm) {
  const double norm = global_norm(std::span<const Array<T>>(grads.data(), grads.size()));
  if (norm > max_norm && norm > 0.0) {
    const T factor = T(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.values()) v *= factor;
  }
  return norm;
}

}  // namespace mocdt::diff
