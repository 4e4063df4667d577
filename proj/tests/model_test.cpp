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

#include <cmath>
#include <sstream>
#include <vector>

#include "mocdt/checkpoint.hpp"
#include "mocdt/model.hpp"
#include "test_support.hpp"

namespace mocdt {
namespace {

using testing::Arr;
using testing::randomize;
using testing::Tape;
using testing::tiny_config;

void expect_near(const Arr& a, const Arr& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "element " << i;
}

Arr row_of(const Arr& m, std::size_t r) {
  Arr out = Arr::matrix(1, m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) out[c] = m.at(r, c);
  return out;
}

TEST(ConfigTest, ValidatesInvariants) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.horizon = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.control_layer = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ParameterCountTest, ClosedFormMatchesAllocation) {
  for (std::size_t d : {8u, 16u, 32u})
    for (std::size_t layers : {1u, 2u, 3u})
      for (std::size_t h : {2u, 5u, 10u}) {
        auto c = tiny_config();
        c.d_model = d;
        c.layers = layers;
        c.horizon = h;
        c.vocab = 37;
        c.num_users = 11;
        const Model<double> m(c);
        EXPECT_EQ(m.parameter_count(), Model<double>::parameter_count(c));
      }
}

TEST(InitTest, SeededAndBitReproducible) {
  const auto c = tiny_config();
  const Model<double> a(c), b(c);
  EXPECT_EQ(a.params(), b.params());
  auto c2 = c;
  c2.seed = 2;
  EXPECT_NE(Model<double>(c2).params(), a.params());

  const double bound = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  for (std::size_t k = 0; k < a.params().size(); ++k) {
    const auto& name = a.names()[k];
    for (double v : a.params()[k].values()) {
      if (name.ends_with(".gain")) {
        EXPECT_EQ(v, 1.0) << name;
      } else if (name == "decoder.w" || name.ends_with(".b") || name.ends_with("bias") || name.ends_with(".bx") ||
                 name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".bo") || name.ends_with(".bqkv")) {
        EXPECT_EQ(v, 0.0) << name;
      } else {
        EXPECT_LE(std::abs(v), bound) << name;
      }
    }
  }
}

TEST(EncodeHistoryTest, EmptySingleAndPrefix) {
  Model<double> model(tiny_config());
  randomize(model, 3);
  const std::size_t d = model.config().d_model;
  Tape tape;
  Session<double> s(model, tape);
  EXPECT_EQ(s.encode_history({}).value(), Arr::matrix(1, d));

  const std::vector<ItemId> one{7};
  const auto zero = tape.constant(Arr::matrix(1, d));
  expect_near(s.encode_history(one).value(), s.gru_step(zero, s.embed_items(one)).value(), 1e-14);

  const std::vector<ItemId> ab{7, 12}, b{12};
  const auto incremental = s.gru_step(s.encode_history(one), s.embed_items(b));
  expect_near(s.encode_history(ab).value(), incremental.value(), 1e-14);

  EXPECT_THROW(s.encode_history(std::vector<ItemId>{20}), LookupError);
}

TEST(StepTransformTest, ShapeAndResidualIdentity) {
  Model<double> model(tiny_config());
  randomize(model, 4);
  {
    Tape tape;
    Session<double> s(model, tape);
    const auto outs = s.step_transform(1, {0.3, 0.9}, s.encode_history(std::vector<ItemId>{1, 2}));
    EXPECT_EQ(outs.back().value().rows(), 4u);
    EXPECT_EQ(outs.back().value().cols(), model.config().d_model);
  }
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    const auto& name = model.names()[k];
    if (name.starts_with("step.") && (name.find(".attn.") != std::string::npos || name.find(".ffn.") != std::string::npos)) {
      model.params()[k].fill(0.0);
    }
  }
  Tape tape;
  Session<double> s(model, tape);
  const auto outs = s.step_transform(1, {0.3, 0.9}, s.encode_history(std::vector<ItemId>{1, 2}));
  EXPECT_EQ(outs.back().value(), outs.front().value());
  EXPECT_THROW(s.step_transform(4, {0.3, 0.9}, s.encode_history({})), LookupError);
}

TEST(StepTransformTest, SwappingObjectiveTokensPermutesOutputs) {
  Model<double> a(tiny_config());
  randomize(a, 5);
  Model<double> b = a;
  for (const char* part : {"w", "b"}) {
    const auto i = a.index_of(std::string("objective.0.") + part);
    const auto j = a.index_of(std::string("objective.1.") + part);
    std::swap(b.params()[i], b.params()[j]);
  }
  Tape ta, tb;
  Session<double> sa(a, ta), sb(b, tb);
  const std::vector<ItemId> hist{3, 9, 4};
  const auto oa = sa.step_transform(2, {0.2, 0.7}, sa.encode_history(hist)).back().value();
  const auto ob = sb.step_transform(2, {0.7, 0.2}, sb.encode_history(hist)).back().value();
  expect_near(row_of(ob, 0), row_of(oa, 0), 1e-12);
  expect_near(row_of(ob, 1), row_of(oa, 2), 1e-12);
  expect_near(row_of(ob, 2), row_of(oa, 1), 1e-12);
  expect_near(row_of(ob, 3), row_of(oa, 3), 1e-12);
}

TEST(ControlSignalTest, WidthAndSensitivityToPoint) {
  Model<double> model(tiny_config());
  randomize(model, 6);
  Tape tape;
  Session<double> s(model, tape);
  const std::vector<ItemId> hist{1, 5};
  const auto c1 = s.condition(0, hist, {1.0, 0.0}).first.value();
  const auto c2 = s.condition(0, hist, {0.0, 1.0}).first.value();
  EXPECT_EQ(c1.cols(), model.config().d_model);
  double dist = 0.0;
  for (std::size_t i = 0; i < c1.size(); ++i) dist += (c1[i] - c2[i]) * (c1[i] - c2[i]);
  EXPECT_GT(std::sqrt(dist), 0.0);
  EXPECT_THROW(s.control_signal(tape.constant(Arr::matrix(3, model.config().d_model))), ShapeError);
}

TEST(ControlSignalTest, LossGradientReachesObjectiveEncoders) {
  Model<double> model(tiny_config());
  randomize(model, 7);
  Tape tape;
  Session<double> s(model, tape);
  TrainingWindow w{1, {2, 3}, {4, 5, 6}, {0.6, 0.4}};
  tape.backward(s.nll_loss(w));
  for (const char* name : {"objective.0.w", "objective.1.w", "objective.0.b", "objective.1.b"}) {
    double norm = 0.0;
    for (double g : tape.grad(s.param(model.index_of(name))).values()) norm += g * g;
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(ControlSignalTest, TapLayerToggle) {
  auto c = tiny_config();
  c.layers = 2;
  Model<double> final_tap(c);
  c.control_layer = 1;
  Model<double> first_tap(c);
  randomize(final_tap, 8);
  first_tap.params() = final_tap.params();
  Tape t1, t2;
  Session<double> s1(final_tap, t1), s2(first_tap, t2);
  const std::vector<ItemId> hist{1};
  const auto outs = s2.step_transform(0, {0.5, 0.5}, s2.encode_history(hist));
  // Copies: value() refers into tape storage that grows with every op.
  const Arr tapped = s2.control_signal(outs[1]).value();
  const Arr first = s2.condition(0, hist, {0.5, 0.5}).first.value();
  const Arr last = s1.condition(0, hist, {0.5, 0.5}).first.value();
  EXPECT_EQ(first, tapped);
  EXPECT_NE(last, first);
}

TEST(InitStateTest, DeterministicAndBiasImageAtZero) {
  Model<double> model(tiny_config());
  randomize(model, 9);
  const std::size_t d = model.config().d_model;
  Tape tape;
  Session<double> s(model, tape);
  const auto zero = tape.constant(Arr::matrix(1, d));
  const auto out = s.init_state(zero).value();
  EXPECT_EQ(out, s.init_state(zero).value());
  // tanh(b1) W2 + b2 computed by hand.
  const auto& b1 = model.param(model.index_of("state.b1"));
  const auto& w2 = model.param(model.index_of("state.w2"));
  const auto& b2 = model.param(model.index_of("state.b2"));
  for (std::size_t j = 0; j < d; ++j) {
    double v = b2[j];
    for (std::size_t i = 0; i < d; ++i) v += std::tanh(b1[i]) * w2.at(i, j);
    EXPECT_NEAR(out[j], v, 1e-14);
  }
}

TEST(ForwardWindowTest, ShapeAndDecoderBiasDegenerateCase) {
  Model<double> model(tiny_config());
  randomize(model, 10);
  const auto& cfg = model.config();
  model.params()[model.index_of("decoder.w")].fill(0.0);
  const auto& bias = model.param(model.index_of("decoder.b"));
  Tape tape;
  Session<double> s(model, tape);
  const std::vector<ItemId> targets{3, 1, 4};
  const auto logits = s.forward_window(0, std::vector<ItemId>{2}, {0.5, 0.5}, targets).value();
  ASSERT_EQ(logits.rows(), cfg.horizon);
  ASSERT_EQ(logits.cols(), cfg.vocab);
  for (std::size_t r = 0; r < logits.rows(); ++r)
    for (std::size_t c = 0; c < logits.cols(); ++c) EXPECT_EQ(logits.at(r, c), bias[c]);
  EXPECT_THROW(s.forward_window(0, {}, {0.5, 0.5}, std::vector<ItemId>{1, 2}), ShapeError);
}

TEST(ForwardWindowTest, CausalForEveryLayerCount) {
  for (std::size_t layers = 1; layers <= 5; ++layers) {
    auto c = tiny_config();
    c.layers = layers;
    c.horizon = 6;
    Model<double> model(c);
    randomize(model, 100 + layers);
    const std::vector<ItemId> hist{0, 5};
    const std::vector<ItemId> base{1, 2, 3, 4, 5, 6};
    Tape tape;
    Session<double> s(model, tape);
    const auto ref = s.forward_window(1, hist, {0.4, 0.8}, base).value();
    // Changing target k (0-based) changes the input at position k + 2, which
    // feeds logits k + 1 onward; logits 0..k must be bitwise unchanged.
    for (std::size_t k = 0; k + 1 < base.size(); ++k) {
      auto perturbed = base;
      perturbed[k] = 17;
      const auto got = s.forward_window(1, hist, {0.4, 0.8}, perturbed).value();
      for (std::size_t r = 0; r <= k; ++r)
        for (std::size_t col = 0; col < c.vocab; ++col)
          ASSERT_EQ(got.at(r, col), ref.at(r, col)) << "layers " << layers << " target " << k << " row " << r;
      bool later_changed = false;
      for (std::size_t col = 0; col < c.vocab; ++col) later_changed |= got.at(k + 1, col) != ref.at(k + 1, col);
      EXPECT_TRUE(later_changed) << "layers " << layers << " target " << k;
    }
  }
}

TEST(NllLossTest, UntrainedIsLogVocabAndNonNegative) {
  const Model<double> model(tiny_config());
  Tape tape;
  Session<double> s(model, tape);
  TrainingWindow w{2, {1, 2, 3}, {4, 5, 6}, {0.5, 0.5}};
  EXPECT_NEAR(s.nll_loss(w).value()[0], std::log(20.0), 1e-12);

  Model<double> trained(tiny_config());
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    randomize(trained, 200 + static_cast<std::uint64_t>(trial), 2.0);
    Tape t2;
    Session<double> s2(trained, t2);
    TrainingWindow r{static_cast<UserId>(uniform_index(rng, 4)),
                     {static_cast<ItemId>(uniform_index(rng, 20))},
                     {static_cast<ItemId>(uniform_index(rng, 20)), static_cast<ItemId>(uniform_index(rng, 20)),
                      static_cast<ItemId>(uniform_index(rng, 20))},
                     {uniform01(rng), uniform01(rng)}};
    EXPECT_GE(s2.nll_loss(r).value()[0], 0.0);
  }
}

TEST(NllLossTest, GradientMatchesFiniteDifferences) {
  for (std::uint64_t draw = 0; draw < 3; ++draw) {
    Model<double> model(tiny_config());
    randomize(model, 300 + draw);
    TrainingWindow w{1, {3, 8, 2}, {5, 11, 0}, {0.7, 0.35}};
    std::vector<Arr*> ptrs;
    for (auto& p : model.params()) ptrs.push_back(&p);
    const auto result = testing::check_gradients(ptrs, [&](Tape& tape) {
      Session<double> s(model, tape);
      auto loss = s.nll_loss(w);
      std::vector<diff::Var<double>> vars;
      for (std::size_t k = 0; k < model.params().size(); ++k) vars.push_back(s.param(k));
      return std::make_pair(loss, vars);
    });
    EXPECT_LT(result.max_rel_error, 1e-4) << "draw " << draw << " worst " << result.worst;
  }
}

TEST(CheckpointTest, RoundTripIsExact) {
  auto c = tiny_config();
  c.layers = 2;
  c.control_layer = 1;
  Model<double> model(c);
  randomize(model, 11);
  std::stringstream buf;
  save_checkpoint(model, buf);
  const auto loaded = load_checkpoint<double>(buf);
  EXPECT_EQ(loaded.config(), model.config());
  EXPECT_EQ(loaded.names(), model.names());
  EXPECT_EQ(loaded.params(), model.params());
}

TEST(CheckpointTest, RejectsCorruptInput) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(load_checkpoint<double>(bad), ParseError);

  Model<double> model(tiny_config());
  std::stringstream buf;
  save_checkpoint(model, buf);
  const std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint<double>(truncated), Error);
}

}  // namespace
}  // namespace mocdt
