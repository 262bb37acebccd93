// Copyright 2026 The streamlat Authors.
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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "streamlat/gradcheck.hpp"
#include "streamlat/model.hpp"
#include "streamlat/synth.hpp"

namespace streamlat::model {
namespace {

ModelConfig Tiny(StreamingKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 5;
  cfg.feature_dim = 3;
  cfg.model_dim = 8;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 2;
  cfg.ffn_dim = 12;
  cfg.heads = 2;
  cfg.stream_heads = 2;
  cfg.kind = kind;
  cfg.chunk_width = 2;
  cfg.subsample = 2;
  cfg.selector_bias_init = 0.0;
  return cfg;
}

synth::SyntheticUtterance Sample(const ModelConfig& cfg, std::uint64_t seed) {
  synth::TaskSpec spec;
  spec.vocab_size = cfg.vocab_size;
  spec.feature_dim = cfg.feature_dim;
  spec.min_tokens = 3;
  spec.max_tokens = 4;
  spec.seed = seed;
  return synth::generate(spec, 1).front();
}

double LossAt(const ModelConfig& cfg, const ParamSet& params, const synth::SyntheticUtterance& u,
              std::optional<std::span<const int>> bounds) {
  Tape tape;
  const auto bound = Bind(tape, params, false);
  const auto enc = encode(cfg, bound, tape, u.frames);
  const auto out = decode_train(cfg, bound, enc, u.tokens, bounds, {});
  return loss(out.logits, Targets(cfg, u.tokens), cfg.label_smoothing).values()[0];
}

class WholeModel : public ::testing::TestWithParam<StreamingKind> {};

TEST_P(WholeModel, LossGradientMatchesFiniteDifferences) {
  const auto cfg = Tiny(GetParam());
  const auto params = InitParams(cfg, 3);
  const auto u = Sample(cfg, 4);
  const std::vector<int> bounds(u.tokens.size(), 2);
  const auto flat = params.Flatten();
  for (const bool masked : {false, true}) {
    const auto f = [&](Tape& t, const DiffArray& x) {
      (void)t;
      const auto bound = BindFlat(x, params);
      const auto enc = encode(cfg, bound, t, u.frames);
      std::optional<std::span<const int>> mb;
      if (masked) mb = bounds;
      const auto out = decode_train(cfg, bound, enc, u.tokens, mb, {});
      return loss(out.logits, Targets(cfg, u.tokens), cfg.label_smoothing);
    };
    const auto r = diff::grad_check_detailed(f, {flat.size()}, flat, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-3) << "masked=" << masked << " worst " << params.total_size() << " idx "
                                     << r.worst_index << " a=" << r.analytic << " n=" << r.numeric;
  }
}

TEST_P(WholeModel, FlatGradMatchesFlatBinding) {
  const auto cfg = Tiny(GetParam());
  const auto params = InitParams(cfg, 5);
  const auto u = Sample(cfg, 6);
  Tape a;
  const auto bound = Bind(a, params, true);
  const auto enc = encode(cfg, bound, a, u.frames);
  a.backward(loss(decode_train(cfg, bound, enc, u.tokens, std::nullopt, {}).logits, Targets(cfg, u.tokens)));
  const auto g1 = bound.FlatGrad(params);

  Tape b;
  const auto x = b.variable({params.total_size()}, params.Flatten());
  const auto fb = BindFlat(x, params);
  const auto enc2 = encode(cfg, fb, b, u.frames);
  b.backward(loss(decode_train(cfg, fb, enc2, u.tokens, std::nullopt, {}).logits, Targets(cfg, u.tokens)));
  ASSERT_EQ(g1.size(), x.grad().size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], x.grad()[i], 1e-12);
}

TEST_P(WholeModel, VacuousBoundsReproduceUnmaskedLogits) {
  const auto cfg = Tiny(GetParam());
  const auto params = InitParams(cfg, 7);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto u = Sample(cfg, 100 + s);
    const int frames = (u.num_frames() + cfg.subsample - 1) / cfg.subsample;
    const std::vector<int> vacuous(u.tokens.size(), frames);
    Tape t1, t2;
    const auto b1 = Bind(t1, params, false);
    const auto b2 = Bind(t2, params, false);
    const auto l1 = decode_train(cfg, b1, encode(cfg, b1, t1, u.frames), u.tokens, std::nullopt, {}).logits;
    const auto l2 =
        decode_train(cfg, b2, encode(cfg, b2, t2, u.frames), u.tokens, std::span<const int>(vacuous), {}).logits;
    ASSERT_EQ(l1.size(), l2.size());
    for (std::size_t i = 0; i < l1.size(); ++i) ASSERT_EQ(l1.values()[i], l2.values()[i]);
  }
}

TEST_P(WholeModel, MaskZeroesAlignmentBeyondBound) {
  if (GetParam() == StreamingKind::kGlobal) GTEST_SKIP();
  const auto cfg = Tiny(GetParam());
  const auto params = InitParams(cfg, 9);
  const auto u = Sample(cfg, 10);
  std::vector<int> bounds(u.tokens.size());
  for (std::size_t i = 0; i < bounds.size(); ++i) bounds[i] = 1 + static_cast<int>(i % 3);
  Tape t;
  const auto b = Bind(t, params, false);
  const auto enc = encode(cfg, b, t, u.frames);
  const auto out = decode_train(cfg, b, enc, u.tokens, std::span<const int>(bounds), {});
  for (const auto& alpha : out.trace.alpha) {
    for (std::size_t i = 0; i < bounds.size(); ++i) {
      for (std::size_t j = static_cast<std::size_t>(bounds[i]); j < alpha.frames; ++j) EXPECT_EQ(alpha(i, j), 0.0);
    }
  }
}

TEST_P(WholeModel, InferenceTriggersAreMonotoneAndInRange) {
  const auto cfg = Tiny(GetParam());
  for (std::uint64_t s = 0; s < 8; ++s) {
    const auto params = InitParams(cfg, 20 + s);
    const auto u = Sample(cfg, 40 + s);
    const auto r = decode_infer(cfg, params, u.frames, 12);
    ASSERT_EQ(r.tokens.size(), r.triggers.size());
    ASSERT_LE(r.tokens.size(), 12u);
    for (std::size_t i = 0; i < r.triggers.size(); ++i) {
      EXPECT_GE(r.triggers[i], 1);
      EXPECT_LE(r.triggers[i], u.num_frames());
      if (i > 0) {
        EXPECT_GE(r.triggers[i], r.triggers[i - 1]);
      }
      EXPECT_NE(r.tokens[i], cfg.eos());
    }
  }
}

TEST_P(WholeModel, ImmediateEndOfSequenceGivesEmptyOutput) {
  const auto cfg = Tiny(GetParam());
  auto params = InitParams(cfg, 11);
  auto& bias = params.Get("out.b");
  for (std::size_t i = 0; i < bias.size(); ++i) bias.values[i] = (static_cast<int>(i) == cfg.eos()) ? 1e3 : 0.0;
  const auto u = Sample(cfg, 12);
  const auto r = decode_infer(cfg, params, u.frames, 10);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_TRUE(r.triggers.empty());
}

TEST_P(WholeModel, DeterministicAcrossRuns) {
  const auto cfg = Tiny(GetParam());
  const auto u = Sample(cfg, 13);
  EXPECT_EQ(InitParams(cfg, 14), InitParams(cfg, 14));
  EXPECT_FALSE(InitParams(cfg, 14) == InitParams(cfg, 15));
  EXPECT_EQ(LossAt(cfg, InitParams(cfg, 14), u, std::nullopt), LossAt(cfg, InitParams(cfg, 14), u, std::nullopt));
  const auto a = decode_infer(cfg, InitParams(cfg, 14), u.frames, 10);
  const auto b = decode_infer(cfg, InitParams(cfg, 14), u.frames, 10);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.triggers, b.triggers);
}

INSTANTIATE_TEST_SUITE_P(Kinds, WholeModel,
                         ::testing::Values(StreamingKind::kCa, StreamingKind::kMocha, StreamingKind::kGlobal),
                         [](const auto& info) { return std::string(ToString(info.param)); });

TEST(MeanPool, AveragesBlocksAndMapsIndices) {
  Tensor frames({5, 1}, {1, 2, 3, 4, 5});
  std::vector<int> map;
  const auto pooled = MeanPool(frames, 2, &map);
  ASSERT_EQ(pooled.rows(), 3u);
  EXPECT_EQ(pooled.values[0], 1.5);
  EXPECT_EQ(pooled.values[1], 3.5);
  EXPECT_EQ(pooled.values[2], 5.0);
  EXPECT_EQ(map, (std::vector<int>{2, 4, 5}));
  const auto same = MeanPool(frames, 1, &map);
  EXPECT_EQ(map, (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(same.values[3], 4.0);
}

TEST(MeanPool, FactorFourRoundsUp) {
  Tensor frames({17, 2}, std::vector<double>(34, 1.0));
  std::vector<int> map;
  EXPECT_EQ(MeanPool(frames, 4, &map).rows(), 5u);
  EXPECT_EQ(map, (std::vector<int>{4, 8, 12, 16, 17}));
}

TEST(ModelConfig, RejectsInconsistentDimensions) {
  auto cfg = Tiny(StreamingKind::kCa);
  cfg.heads = 3;
  EXPECT_ANY_THROW(cfg.Validate());
  cfg = Tiny(StreamingKind::kCa);
  cfg.subsample = 0;
  EXPECT_ANY_THROW(cfg.Validate());
}

TEST(Loss, SmoothedCrossEntropyMatchesDirectFormula) {
  Tape t;
  const std::vector<double> z{0.3, -1.2, 2.0, 0.1, 0.5, -0.4};
  const auto logits = t.constant({2, 3}, z);
  const std::vector<int> targets{2, 0};
  const double eps = 0.1;
  double expect = 0.0;
  for (int r = 0; r < 2; ++r) {
    double mx = -1e300, zsum = 0.0;
    for (int c = 0; c < 3; ++c) mx = std::max(mx, z[r * 3 + c]);
    for (int c = 0; c < 3; ++c) zsum += std::exp(z[r * 3 + c] - mx);
    for (int c = 0; c < 3; ++c) {
      const double logp = z[r * 3 + c] - mx - std::log(zsum);
      const double q = (c == targets[r] ? 1.0 - eps : 0.0) + eps / 3.0;
      expect -= q * logp;
    }
  }
  EXPECT_NEAR(loss(logits, targets, eps).values()[0], expect / 2.0, 1e-12);
}

}  // namespace
}  // namespace streamlat::model
