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

// Multi-objective controllable decision transformer.
//
// Data flow for one window starting after step t:
//
//   user id ─► user_table ───────────┐
//   o_rate  ─► objective encoder 0 ──┤
//   o_div   ─► objective encoder 1 ──┼─► step transformer (L layers, no mask)
//   history ─► GRU ─► e_h ───────────┘        │
//                      │                      ▼
//                      │            control MLP over the 4 concatenated
//                      │            outputs ─► c_t
//                      ▼
//                 state MLP ─► s_t
//
//   sequence transformer (L causal layers, learned positions) over
//   [c_t, s_t, item(a_{t+1}), ..., item(a_{t+H-1})]; positions 1..H are
//   decoded into item logits for a_{t+1}..a_{t+H}.
//
// Items enter the sequence only as teacher-forced inputs; the history lives
// in the GRU state alone.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mocdt/corpus.hpp"
#include "mocdt/diff/array.hpp"
#include "mocdt/diff/ops.hpp"
#include "mocdt/diff/tape.hpp"
#include "mocdt/objectives.hpp"
#include "mocdt/random.hpp"

namespace mocdt {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t layers = 1;  // shared by both transformers
  std::size_t heads = 2;
  std::size_t horizon = 10;
  std::size_t vocab = 0;  // number of items
  std::size_t num_users = 0;
  std::size_t max_hist = 50;
  std::size_t num_objectives = 2;
  // Step-transformer layer whose outputs feed the control MLP, 1-based;
  // 0 selects the final layer.
  std::size_t control_layer = 0;
  std::uint64_t seed = 0;

  std::size_t control_tap() const { return control_layer == 0 ? layers : control_layer; }

  void validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) {
      throw ConfigError("model.d_model must be a positive multiple of model.heads");
    }
    if (horizon < 2) throw ConfigError("model.horizon must be >= 2");
    if (layers < 1) throw ConfigError("model.layers must be >= 1");
    if (vocab == 0) throw ConfigError("model.vocab must be >= 1");
    if (num_users == 0) throw ConfigError("model.num_users must be >= 1");
    if (num_objectives != 2) throw ConfigError("model.num_objectives is fixed at 2");
    if (control_layer > layers) throw ConfigError("model.control_layer exceeds model.layers");
  }
  bool operator==(const ModelConfig&) const = default;
};

/// One supervised window: history up to step t, the H items after it, and
/// the objective point those H items realized.
struct TrainingWindow {
  UserId user = 0;
  std::vector<ItemId> history;  // most recent last, at most max_hist
  std::vector<ItemId> targets;  // length H
  ObjectivePoint point;
  bool operator==(const TrainingWindow&) const = default;
};

template <class T>
class Model {
 public:
  using Array = diff::Array<T>;

  struct LayerParams {
    std::size_t ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Layout {
    std::size_t user_table, item_table;
    std::vector<std::size_t> obj_w, obj_b;
    std::size_t gru_wx, gru_bx, gru_uzr, gru_un;
    std::vector<LayerParams> step;
    std::size_t ctrl_w1, ctrl_b1, ctrl_w2, ctrl_b2;
    std::size_t state_w1, state_b1, state_w2, state_b2;
    std::size_t pos;
    std::vector<LayerParams> seq;
    std::size_t lnf_g, lnf_b;
    std::size_t dec_w, dec_b;
  };

  /// Seeded initialization: tables and affine weights uniform in
  /// ±1/sqrt(d_model); biases and decoder weights zero; layer-norm gains one.
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const std::size_t d = cfg_.d_model, v = cfg_.vocab;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    auto weight = [&](std::string name, std::size_t rows, std::size_t cols) {
      Array a = Array::matrix(rows, cols);
      for (auto& x : a.values()) x = T(uniform(rng, -bound, bound));
      return add(std::move(name), std::move(a));
    };
    auto zeros = [&](std::string name, std::size_t n) { return add(std::move(name), Array::vector(n)); };
    auto ones = [&](std::string name, std::size_t n) { return add(std::move(name), Array::vector(n, T(1))); };
    auto layer = [&](const std::string& prefix) {
      LayerParams p{};
      p.ln1_g = ones(prefix + ".ln1.gain", d);
      p.ln1_b = zeros(prefix + ".ln1.bias", d);
      p.wqkv = weight(prefix + ".attn.wqkv", d, 3 * d);
      p.bqkv = zeros(prefix + ".attn.bqkv", 3 * d);
      p.wo = weight(prefix + ".attn.wo", d, d);
      p.bo = zeros(prefix + ".attn.bo", d);
      p.ln2_g = ones(prefix + ".ln2.gain", d);
      p.ln2_b = zeros(prefix + ".ln2.bias", d);
      p.w1 = weight(prefix + ".ffn.w1", d, 4 * d);
      p.b1 = zeros(prefix + ".ffn.b1", 4 * d);
      p.w2 = weight(prefix + ".ffn.w2", 4 * d, d);
      p.b2 = zeros(prefix + ".ffn.b2", d);
      return p;
    };

    layout_.user_table = weight("user_table", cfg_.num_users, d);
    layout_.item_table = weight("item_table", v, d);
    for (std::size_t k = 0; k < cfg_.num_objectives; ++k) {
      layout_.obj_w.push_back(weight("objective." + std::to_string(k) + ".w", 1, d));
      layout_.obj_b.push_back(zeros("objective." + std::to_string(k) + ".b", d));
    }
    layout_.gru_wx = weight("gru.wx", d, 3 * d);
    layout_.gru_bx = zeros("gru.bx", 3 * d);
    layout_.gru_uzr = weight("gru.uzr", d, 2 * d);
    layout_.gru_un = weight("gru.un", d, d);
    for (std::size_t l = 0; l < cfg_.layers; ++l) layout_.step.push_back(layer("step." + std::to_string(l)));
    layout_.ctrl_w1 = weight("ctrl.w1", (cfg_.num_objectives + 2) * d, d);
    layout_.ctrl_b1 = zeros("ctrl.b1", d);
    layout_.ctrl_w2 = weight("ctrl.w2", d, d);
    layout_.ctrl_b2 = zeros("ctrl.b2", d);
    layout_.state_w1 = weight("state.w1", d, d);
    layout_.state_b1 = zeros("state.b1", d);
    layout_.state_w2 = weight("state.w2", d, d);
    layout_.state_b2 = zeros("state.b2", d);
    layout_.pos = weight("seq.pos", cfg_.horizon + 2, d);
    for (std::size_t l = 0; l < cfg_.layers; ++l) layout_.seq.push_back(layer("seq." + std::to_string(l)));
    layout_.lnf_g = ones("seq.lnf.gain", d);
    layout_.lnf_b = zeros("seq.lnf.bias", d);
    layout_.dec_w = add("decoder.w", Array::matrix(d, v));
    layout_.dec_b = zeros("decoder.b", v);
  }

  /// Closed-form parameter count for a configuration.
  static std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.d_model, v = c.vocab, l = c.layers;
    const std::size_t per_layer = 12 * d * d + 13 * d;
    return c.num_users * d + v * d + c.num_objectives * 2 * d  // tables, objective encoders
           + 6 * d * d + 3 * d                                   // GRU
           + l * per_layer                                       // step transformer
           + (c.num_objectives + 2) * d * d + d + d * d + d      // control MLP
           + 2 * d * d + 2 * d                                   // state MLP
           + (c.horizon + 2) * d + l * per_layer + 2 * d         // sequence transformer
           + d * v + v;                                          // decoder
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  const ModelConfig& config() const { return cfg_; }
  const Layout& layout() const { return layout_; }
  std::vector<Array>& params() { return params_; }
  const std::vector<Array>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  Array& param(std::size_t index) { return params_[index]; }
  const Array& param(std::size_t index) const { return params_[index]; }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t k = 0; k < names_.size(); ++k)
      if (names_[k] == name) return k;
    throw LookupError("no parameter named '" + name + "'");
  }

  /// Overwrites parameters from named arrays (checkpoint loading).
  void assign(const std::string& name, Array value) {
    Array& dst = params_[index_of(name)];
    if (!dst.same_shape(value)) {
      throw ShapeError("parameter '" + name + "' expects " + dst.shape_string() + ", got " + value.shape_string());
    }
    dst = std::move(value);
  }

 private:
  std::size_t add(std::string name, Array value) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(value));
    return params_.size() - 1;
  }

  ModelConfig cfg_;
  Layout layout_;
  std::vector<Array> params_;
  std::vector<std::string> names_;
};

/// A model bound to a tape: every forward helper records onto that tape.
template <class T>
class Session {
 public:
  using V = diff::Var<T>;
  using Array = diff::Array<T>;

  Session(const Model<T>& model, diff::Tape<T>& tape) : model_(model), tape_(tape) {
    vars_.reserve(model.params().size());
    for (const auto& p : model.params()) vars_.push_back(tape.param(p));
  }

  const Model<T>& model() const { return model_; }
  diff::Tape<T>& tape() { return tape_; }
  /// Tape handle of parameter `index`, for reading its gradient.
  V param(std::size_t index) const { return vars_[index]; }

  V embed_items(std::span<const ItemId> items) {
    return diff::row_select(p(L().item_table), std::vector<std::int32_t>(items.begin(), items.end()));
  }

  /// One GRU step from state h [1,d] on input x [1,d].
  V gru_step(V h, V x) {
    return gru_update(h, diff::add(diff::matmul(x, p(L().gru_wx)), p(L().gru_bx)));
  }

  /// Final GRU state over the item embeddings, left to right; zeros when empty.
  V encode_history(std::span<const ItemId> items) {
    const std::size_t d = cfg().d_model;
    V h = tape_.constant(Array::matrix(1, d));
    if (items.empty()) return h;
    // Input projections for all steps in one product.
    V proj = diff::add(diff::matmul(embed_items(items), p(L().gru_wx)), p(L().gru_bx));
    for (std::size_t k = 0; k < items.size(); ++k) {
      h = gru_update(h, diff::row_select(proj, {static_cast<std::int32_t>(k)}));
    }
    return h;
  }

  V objective_embedding(std::size_t k, double value) {
    return diff::tanh(diff::add(diff::scale(p(L().obj_w[k]), T(value)), p(L().obj_b[k])));
  }

  /// Outputs of every step-transformer layer over [e_u, e_O1, e_O2, e_h];
  /// element 0 holds the inputs, element l the output of layer l.
  std::vector<V> step_transform(UserId user, const ObjectivePoint& point, V hist) {
    if (user < 0 || static_cast<std::size_t>(user) >= cfg().num_users) {
      throw LookupError("unknown user " + std::to_string(user));
    }
    V x = diff::stack_rows<T>({diff::row_select(p(L().user_table), {user}), objective_embedding(0, point.o_rate),
                               objective_embedding(1, point.o_div), hist});
    std::vector<V> outs{x};
    for (const auto& layer : L().step) {
      x = transformer_layer(x, layer, /*causal=*/false);
      outs.push_back(x);
    }
    return outs;
  }

  /// MLP over the concatenated step-transformer outputs [4,d] -> c_t [1,d].
  V control_signal(V step_out) {
    const auto& sv = step_out.value();
    if (sv.rows() != cfg().num_objectives + 2 || sv.cols() != cfg().d_model) {
      throw ShapeError("control_signal: expected " + std::to_string(cfg().num_objectives + 2) + " x " +
                       std::to_string(cfg().d_model) + " step outputs, got " + sv.shape_string());
    }
    std::vector<V> rows;
    for (std::int32_t r = 0; r < static_cast<std::int32_t>(sv.rows()); ++r) rows.push_back(diff::row_select(step_out, {r}));
    V flat = diff::concat(rows);
    V hidden = diff::tanh(diff::add(diff::matmul(flat, p(L().ctrl_w1)), p(L().ctrl_b1)));
    return diff::add(diff::matmul(hidden, p(L().ctrl_w2)), p(L().ctrl_b2));
  }

  V init_state(V hist) {
    if (hist.value().cols() != cfg().d_model) throw ShapeError("init_state: width " + hist.value().shape_string());
    V hidden = diff::tanh(diff::add(diff::matmul(hist, p(L().state_w1)), p(L().state_b1)));
    return diff::add(diff::matmul(hidden, p(L().state_w2)), p(L().state_b2));
  }

  /// (c_t, s_t) for a user, history and objective point.
  std::pair<V, V> condition(UserId user, std::span<const ItemId> history, const ObjectivePoint& point) {
    V hist = encode_history(history);
    auto outs = step_transform(user, point, hist);
    return {control_signal(outs[cfg().control_tap()]), init_state(hist)};
  }

  /// Runs the sequence transformer over [c, s, items...] and decodes
  /// positions 1..|items|+1, or only the last one.
  V sequence_logits(V control, V state, std::span<const ItemId> items, bool last_only = false) {
    const std::size_t n = items.size() + 2;
    if (n > cfg().horizon + 2) {
      throw ShapeError("sequence of " + std::to_string(n) + " tokens exceeds positional table of " +
                       std::to_string(cfg().horizon + 2));
    }
    std::vector<V> tokens{control, state};
    if (!items.empty()) tokens.push_back(embed_items(items));
    std::vector<std::int32_t> positions(n);
    for (std::size_t k = 0; k < n; ++k) positions[k] = static_cast<std::int32_t>(k);
    V x = diff::add(diff::stack_rows(tokens), diff::row_select(p(L().pos), positions));
    for (const auto& layer : L().seq) x = transformer_layer(x, layer, /*causal=*/true);
    std::vector<std::int32_t> rows;
    for (std::size_t k = last_only ? n - 1 : 1; k < n; ++k) rows.push_back(static_cast<std::int32_t>(k));
    V h = diff::layer_norm(diff::row_select(x, rows), p(L().lnf_g), p(L().lnf_b));
    return diff::add(diff::matmul(h, p(L().dec_w)), p(L().dec_b));
  }

  /// Teacher-forced logits H x vocab for the H targets.
  V forward_window(UserId user, std::span<const ItemId> history, const ObjectivePoint& point,
                   std::span<const ItemId> targets) {
    if (targets.size() != cfg().horizon) {
      throw ShapeError("forward_window: " + std::to_string(targets.size()) + " targets for horizon " +
                       std::to_string(cfg().horizon));
    }
    auto [control, state] = condition(user, history, point);
    return sequence_logits(control, state, targets.first(targets.size() - 1));
  }

  /// Mean negative log-likelihood of the window's targets.
  V nll_loss(const TrainingWindow& w) {
    V logits = forward_window(w.user, w.history, w.point, w.targets);
    return diff::cross_entropy_logits(logits, std::vector<std::int32_t>(w.targets.begin(), w.targets.end()));
  }

 private:
  const ModelConfig& cfg() const { return model_.config(); }
  const typename Model<T>::Layout& L() const { return model_.layout(); }
  V p(std::size_t index) const { return vars_[index]; }

  // h' = h + z * (n - h), with z, r = sigmoid(xz + h Uzr), n = tanh(xn + (r*h) Un).
  V gru_update(V h, V xproj) {
    const std::size_t d = cfg().d_model;
    V zr = diff::sigmoid(diff::add(diff::slice_cols(xproj, 0, 2 * d), diff::matmul(h, p(L().gru_uzr))));
    V z = diff::slice_cols(zr, 0, d);
    V r = diff::slice_cols(zr, d, 2 * d);
    V cand = diff::tanh(diff::add(diff::slice_cols(xproj, 2 * d, 3 * d), diff::matmul(diff::mul(r, h), p(L().gru_un))));
    return diff::add(h, diff::mul(z, diff::sub(cand, h)));
  }

  V transformer_layer(V x, const typename Model<T>::LayerParams& lp, bool causal) {
    const std::size_t d = cfg().d_model, heads = cfg().heads, dh = d / heads;
    const std::size_t n = x.value().rows();
    V h = diff::layer_norm(x, p(lp.ln1_g), p(lp.ln1_b));
    V qkv = diff::add(diff::matmul(h, p(lp.wqkv)), p(lp.bqkv));
    std::optional<V> mask;
    if (causal && n > 1) {
      Array m = Array::matrix(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = T(-1e9);
      mask = tape_.constant(std::move(m));
    }
    const T inv_sqrt = T(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<V> outs;
    for (std::size_t k = 0; k < heads; ++k) {
      V q = diff::slice_cols(qkv, k * dh, (k + 1) * dh);
      V kk = diff::slice_cols(qkv, d + k * dh, d + (k + 1) * dh);
      V v = diff::slice_cols(qkv, 2 * d + k * dh, 2 * d + (k + 1) * dh);
      V scores = diff::scale(diff::matmul(q, diff::transpose(kk)), inv_sqrt);
      if (mask) scores = diff::add(scores, *mask);
      outs.push_back(diff::matmul(diff::softmax(scores), v));
    }
    V attn = diff::add(diff::matmul(heads == 1 ? outs[0] : diff::concat(outs), p(lp.wo)), p(lp.bo));
    x = diff::add(x, attn);
    V h2 = diff::layer_norm(x, p(lp.ln2_g), p(lp.ln2_b));
    V ff = diff::add(diff::matmul(diff::tanh(diff::add(diff::matmul(h2, p(lp.w1)), p(lp.b1))), p(lp.w2)), p(lp.b2));
    return diff::add(x, ff);
  }

  const Model<T>& model_;
  diff::Tape<T>& tape_;
  std::vector<V> vars_;
};

}  // namespace mocdt
