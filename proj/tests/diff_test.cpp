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
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "streamlat/diff.hpp"
#include "streamlat/gradcheck.hpp"

namespace streamlat::diff {
namespace {

std::vector<double> RandomValues(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Weighted sum with fixed irregular weights so no gradient is symmetric by accident.
DiffArray Project(Tape& tape, const DiffArray& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * std::sin(1.3 * static_cast<double>(i) + 0.2);
  return sum(mul(y, tape.constant(y.shape(), w)));
}

TEST(Tensor, ShapeBookkeeping) {
  EXPECT_EQ(NumElements({}), 1u);
  EXPECT_EQ(NumElements({2, 3, 4}), 24u);
  EXPECT_EQ(ShapeString({2, 3}), "[2,3]");
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Matmul, HandExamples) {
  Tape tape;
  const auto eye = tape.constant({2, 2}, {1, 0, 0, 1});
  const auto r = matmul(eye, eye);
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), (std::vector<double>{1, 0, 0, 1}));
  const auto a = tape.constant({2, 2}, {1, 2, 3, 4});
  const auto b = tape.constant({2, 1}, {1, 1});
  const auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.values()[0], 3.0);
  EXPECT_EQ(c.values()[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  const auto a = tape.constant({2, 3}, std::vector<double>(6, 1.0));
  const auto b = tape.constant({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(a, b);
    FAIL() << "expected a dimension error";
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2,3]"), std::string::npos);
    EXPECT_NE(what.find("[2,2]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumIsColumnSums) {
  std::mt19937_64 rng(11);
  const auto bv = RandomValues(rng, 12);
  Tape tape;
  const auto a = tape.variable({2, 3}, RandomValues(rng, 6));
  const auto b = tape.constant({3, 4}, bv);
  tape.backward(sum(matmul(a, b)));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < 3; ++k) {
      const double row_sum = bv[k * 4] + bv[k * 4 + 1] + bv[k * 4 + 2] + bv[k * 4 + 3];
      EXPECT_NEAR(a.grad()[r * 3 + k], row_sum, 1e-14);
    }
  }
  const double err = grad_check(
      [&](Tape& t, const DiffArray& x) { return sum(matmul(x, t.constant({3, 4}, bv))); }, {2, 3},
      RandomValues(rng, 6));
  EXPECT_LT(err, 1e-6);
}

TEST(Elementwise, SigmoidValues) {
  EXPECT_EQ(Sigmoid(0.0), 0.5);
  const double tiny = Sigmoid(-745.0);
  EXPECT_GT(tiny, 0.0);
  EXPECT_LE(tiny, 1e-300);
  // Extended-precision reference for a moderately negative input.
  const long double ref = 1.0L / (1.0L + std::exp(700.0L));
  EXPECT_NEAR(Sigmoid(-700.0) / static_cast<double>(ref), 1.0, 1e-12);
  EXPECT_EQ(Sigmoid(800.0), 1.0);
}

TEST(Elementwise, SigmoidDerivativeAtZero) {
  const std::vector<double> x{0.0};
  const auto f = [](Tape&, const DiffArray& v) { return sum(sigmoid(v)); };
  Tape tape;
  const auto v = tape.variable({1}, x);
  tape.backward(f(tape, v));
  EXPECT_NEAR(v.grad()[0], 0.25, 1e-15);
  EXPECT_LT(grad_check(f, {1}, x), 1e-6);
}

TEST(Elementwise, TrailingBroadcast) {
  Tape tape;
  const auto m = tape.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto row = tape.constant({3}, {10, 20, 30});
  const auto s = add(m, row);
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  const auto s2 = add(row, m);
  EXPECT_EQ(s2.shape(), (Shape{2, 3}));
  const auto bad = tape.constant({2}, {1, 2});
  EXPECT_THROW(add(m, bad), DimensionError);
  EXPECT_THROW(sub(row, m), DimensionError);
}

TEST(Elementwise, ClampMinPassesGradientOnlyAboveFloor) {
  Tape tape;
  const auto x = tape.variable({3}, {1e-12, 0.5, 2.0});
  const auto y = clamp_min(x, 1e-10);
  EXPECT_EQ(y.values()[0], 1e-10);
  tape.backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, EveryPrimitivePassesGradCheckOverSeeds) {
  struct Case {
    const char* name;
    std::function<DiffArray(Tape&, const DiffArray&, const std::vector<double>&)> fn;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return add(x, t.constant({3, 4}, o)); }},
      {"add-broadcast",
       [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
         return add(t.constant({3, 4}, o), slice_flat(x, 0, {4}));
       }},
      {"sub", [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return sub(t.constant({3, 4}, o), x); }},
      {"mul", [](Tape& t, const DiffArray& x, const std::vector<double>& o) { return mul(x, t.constant({3, 4}, o)); }},
      {"mul-self", [](Tape&, const DiffArray& x, const std::vector<double>&) { return mul(x, x); }},
      {"sigmoid", [](Tape&, const DiffArray& x, const std::vector<double>&) { return sigmoid(x); }},
      {"exp", [](Tape&, const DiffArray& x, const std::vector<double>&) { return exp(x); }},
      {"scale", [](Tape&, const DiffArray& x, const std::vector<double>&) { return scale(x, -1.7); }},
      {"clamp-min", [](Tape&, const DiffArray& x, const std::vector<double>&) { return clamp_min(x, -0.25); }},
      {"relu", [](Tape&, const DiffArray& x, const std::vector<double>&) { return relu(x); }},
      {"softmax-rows", [](Tape&, const DiffArray& x, const std::vector<double>&) { return softmax(x); }},
      {"softmax-cols", [](Tape&, const DiffArray& x, const std::vector<double>&) { return softmax(x, 0); }},
      {"transpose", [](Tape&, const DiffArray& x, const std::vector<double>&) { return transpose(x); }},
      {"matmul-left",
       [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
         return matmul(x, t.constant({4, 3}, std::vector<double>(o.begin(), o.begin() + 12)));
       }},
      {"matmul-right",
       [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
         return matmul(t.constant({4, 3}, std::vector<double>(o.begin(), o.begin() + 12)), x);
       }},
      {"reshape", [](Tape&, const DiffArray& x, const std::vector<double>&) { return reshape(x, {2, 6}); }},
      {"slices",
       [](Tape&, const DiffArray& x, const std::vector<double>&) {
         return mul(slice_cols(x, 1, 3), slice_rows(slice_cols(x, 2, 4), 0, 3));
       }},
      {"concat",
       [](Tape&, const DiffArray& x, const std::vector<double>&) {
         const DiffArray parts[] = {slice_cols(x, 0, 1), sigmoid(x), slice_cols(x, 3, 4)};
         return concat_cols(parts);
       }},
      {"gather",
       [](Tape&, const DiffArray& x, const std::vector<double>&) {
         const int idx[] = {2, 0, 2, 1};
         return gather_rows(x, idx);
       }},
      {"layer-norm",
       [](Tape& t, const DiffArray& x, const std::vector<double>& o) {
         return layer_norm(x, t.constant({4}, std::vector<double>(o.begin(), o.begin() + 4)),
                           t.constant({4}, std::vector<double>(o.begin() + 4, o.begin() + 8)));
       }},
      {"mean", [](Tape&, const DiffArray& x, const std::vector<double>&) { return scale(mean(mul(x, x)), 3.0); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      const auto other = RandomValues(rng, 12, 0.5, 1.5);
      const auto point = RandomValues(rng, 12);
      const double err = grad_check(
          [&](Tape& t, const DiffArray& x) { return Project(t, c.fn(t, x, other)); }, {3, 4}, point);
      worst = std::max(worst, err);
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(Elementwise, GainAndBiasGradientsOfLayerNorm) {
  std::mt19937_64 rng(5);
  const auto x = RandomValues(rng, 12);
  const double err = grad_check(
      [&](Tape& t, const DiffArray& gb) {
        return Project(t, layer_norm(t.constant({3, 4}, x), slice_flat(gb, 0, {4}), slice_flat(gb, 4, {4})));
      },
      {8}, RandomValues(rng, 8, 0.5, 1.5));
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, UniformAndStabilised) {
  Tape tape;
  const auto u = softmax(tape.constant({3}, {0, 0, 0}));
  for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto big = softmax(tape.constant({2}, {1000, 0}));
  EXPECT_EQ(big.values()[0], 1.0);
  EXPECT_GE(big.values()[1], 0.0);
  EXPECT_LT(big.values()[1], 1e-300);
  EXPECT_THROW(softmax(tape.scalar(1.0)), DimensionError);
}

TEST(Softmax, RowsSumToOneForWildInputs) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const auto s = softmax(tape.constant({4, 7}, RandomValues(rng, 28, -300.0, 300.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      const auto row = s.view().row(r);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Softmax, JacobianVectorProduct) {
  std::mt19937_64 rng(9);
  const auto point = RandomValues(rng, 6, -2.0, 2.0);
  EXPECT_LT(grad_check([](Tape& t, const DiffArray& x) { return Project(t, softmax(x)); }, {2, 3}, point), 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  for (double smoothing : {0.0, 0.1, 0.5}) {
    Tape tape;
    const int targets[] = {0, 3, 2};
    const auto l = smoothed_cross_entropy(tape.constant({3, 4}, std::vector<double>(12, 0.7)), targets, smoothing);
    EXPECT_NEAR(l.item(), std::log(4.0), 1e-12);
  }
}

TEST(CrossEntropy, SmoothingFloorIsReachedAtTargetDistribution) {
  // The minimum over logits equals the entropy of the smoothed target, and
  // it is attained when softmax(logits) equals that target.
  const double s = 0.1;
  const int c = 5;
  const double on = 1.0 - s + s / c, off = s / c;
  const double floor = -(on * std::log(on) + (c - 1) * off * std::log(off));
  std::vector<double> logits(static_cast<std::size_t>(c), std::log(off));
  logits[2] = std::log(on);
  Tape tape;
  const int targets[] = {2};
  EXPECT_NEAR(smoothed_cross_entropy(tape.constant({1, 5}, logits), targets, s).item(), floor, 1e-12);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = smoothed_cross_entropy(tape.constant({1, 5}, RandomValues(rng, 5, -10, 10)), targets, s);
    EXPECT_GE(l.item(), floor - 1e-12);
  }
}

TEST(CrossEntropy, GradientAndLengthCheck) {
  std::mt19937_64 rng(21);
  const int targets[] = {1, 0, 3};
  EXPECT_LT(grad_check([&](Tape&, const DiffArray& x) { return smoothed_cross_entropy(x, targets, 0.1); }, {3, 4},
                       RandomValues(rng, 12, -2, 2)),
            1e-6);
  Tape tape;
  const int two[] = {1, 0};
  EXPECT_THROW(smoothed_cross_entropy(tape.constant({3, 4}, std::vector<double>(12, 0.0)), two, 0.1), DimensionError);
}

TEST(Tape, BackwardIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(77);
    Tape tape;
    const auto x = tape.variable({4, 4}, RandomValues(rng, 16));
    const auto w = tape.variable({4, 4}, RandomValues(rng, 16));
    const auto y = softmax(matmul(sigmoid(x), w));
    tape.backward(Project(tape, layer_norm(y, tape.constant({4}, {1, 1, 1, 1}), tape.constant({4}, {0, 0, 0, 0}))));
    std::vector<double> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  const auto c = tape.constant({2}, {1, 2});
  const auto v = tape.variable({2}, {3, 4});
  tape.backward(sum(mul(c, v)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(v.grad()[0], 1.0);
  EXPECT_EQ(v.grad()[1], 2.0);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Tape tape;
  const auto x = tape.variable({1}, {3.0});
  const auto y = mul(x, x);
  tape.backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(GradCheck, QuadraticIsExact) {
  const std::vector<double> x{3.0};
  EXPECT_LT(grad_check([](Tape&, const DiffArray& v) { return sum(mul(v, v)); }, {1}, x, 1e-5), 1e-9);
}

TEST(GradCheck, NonFiniteProbeThrows) {
  const std::vector<double> x{1.0};
  EXPECT_THROW(grad_check([](Tape&, const DiffArray& v) { return sum(scale(exp(v), 1e308)); }, {1}, x), ProbeError);
}

TEST(GradCheck, DetailedReportsWorstCoordinate) {
  // A deliberately wrong backward on coordinate 1.
  const std::vector<double> x{0.3, -0.8};
  const auto f = [](Tape& t, const DiffArray& v) {
    const auto vals = v.values();
    std::vector<double> out{vals[0] * vals[0] + vals[1] * vals[1]};
    return t.record({}, out, {v}, [id = v.id()](Tape& tp, std::size_t self) {
      const double g = tp.grad_of(self)[0];
      const auto in = tp.values_of(id);
      tp.grad_of(id)[0] += g * 2.0 * in[0];
      tp.grad_of(id)[1] += g * 3.0 * in[1];
    });
  };
  const auto r = grad_check_detailed(f, {2}, x, 1e-5);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_NEAR(r.analytic, -2.4, 1e-12);
  EXPECT_NEAR(r.numeric, -1.6, 1e-8);
}

}  // namespace
}  // namespace streamlat::diff
