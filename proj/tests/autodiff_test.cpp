#include <gtest/gtest.h>

#include "grad_cases.hpp"
#include "jcae/autodiff.hpp"
#include "jcae/grad_check.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace {

using jcae::Shape;
using jcae::Tape;
using jcae::Tensor;
using jcae::Var;
namespace ops = jcae::ops;
using jcae::testing::random_tensor;

TEST(Conv2d, MatchesDirectConvolution) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    jcae::Rng rng(seed);
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(5), o = 1 + rng.below(9);
    const std::size_t h = 3 + rng.below(10), w = 3 + rng.below(10);
    const auto x = random_tensor<float>({n, c, h, w}, seed * 3 + 1);
    const auto k = random_tensor<float>({o, c, 3, 3}, seed * 3 + 2);
    const auto b = random_tensor<float>({o}, seed * 3 + 3);
    Tape<float> tape;
    const Tensor<float> y = ops::conv2d(tape.constant(x), tape.constant(k), tape.constant(b)).value();
    const auto expected = jcae::oracle::conv3x3(x, k, b);
    ASSERT_EQ(y.shape(), (Shape{n, o, h, w}));
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], expected[i], 1e-5) << "seed " << seed;
  }
}

TEST(Conv2d, ShapeErrorNamesBothOperands) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>(Shape{1, 3, 8, 8}));
  auto k = tape.constant(Tensor<float>(Shape{64, 4, 3, 3}));
  auto b = tape.constant(Tensor<float>(Shape{64}));
  try {
    ops::conv2d(x, k, b);
    FAIL() << "expected ShapeError";
  } catch (const jcae::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,3,8,8)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(64,4,3,3)"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor<float>(Shape{1, 3, 2, 8})),
                           tape.constant(Tensor<float>(Shape{2, 3, 3, 3})), tape.constant(Tensor<float>(Shape{2}))),
               jcae::ShapeError);
}

TEST(Relu, ZeroMapsToZeroWithZeroSubgradient) {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{4}, {-1.0, 0.0, 2.0, -0.0}));
  auto y = ops::relu(x);
  EXPECT_EQ(y.value(), Tensor<double>(Shape{4}, {0.0, 0.0, 2.0, 0.0}));
  tape.backward(ops::sum(y));
  const auto g = tape.grad(x);
  EXPECT_EQ(std::vector<double>(g.begin(), g.end()), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Sigmoid, StableAtExtremes) {
  Tape<float> tape;
  auto y = ops::sigmoid(tape.constant(Tensor<float>(Shape{3}, {-100.f, 0.f, 100.f}))).value();
  EXPECT_GE(y[0], 0.f);
  EXPECT_LT(y[0], 1e-40f);
  EXPECT_EQ(y[1], 0.5f);
  EXPECT_EQ(y[2], 1.f);
  EXPECT_TRUE(y.all_finite());
}

TEST(MaxPool, MatchesSlidingWindowAndSelectsFirstOnTies) {
  // Sliding-window oracle over the replicate-padded input.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    jcae::Rng rng(seed);
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
    Tensor<float> x(Shape{1, 2, h, w});
    for (float& v : x.data()) v = static_cast<float>(rng.below(4));  // many ties
    Tape<float> tape;
    const auto pooled = ops::maxpool2(tape.constant(x));
    const auto& out = pooled.out.value();
    ASSERT_EQ(out.shape(), (Shape{1, 2, (h + 1) / 2, (w + 1) / 2}));
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < (h + 1) / 2; ++y)
        for (std::size_t xx = 0; xx < (w + 1) / 2; ++xx) {
          float best = -1.f;
          std::size_t best_index = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t sy = std::min(2 * y + dy, h - 1), sx = std::min(2 * xx + dx, w - 1);
              const float v = x.at(0, c, sy, sx);
              if (v > best) {
                best = v;
                best_index = (c * h + sy) * w + sx;
              }
            }
          const std::size_t oi = (c * ((h + 1) / 2) + y) * ((w + 1) / 2) + xx;
          ASSERT_EQ(out[oi], best);
          ASSERT_EQ((*pooled.argmax)[oi], best_index);
        }
  }
}

TEST(MaxPool, GradientRoutesToTheSelectedElementOnly) {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{1, 1, 2, 2}, {3.0, 3.0, 3.0, 3.0}));
  tape.backward(ops::sum(ops::maxpool2(x).out));
  const auto g = tape.grad(x);
  EXPECT_EQ(std::vector<double>(g.begin(), g.end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Upsample, NearestNeighbourWithOddCrop) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(ops::upsample_nearest2(x).value(),
            Tensor<float>(Shape{1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  EXPECT_EQ(ops::upsample_nearest2(x, 3, 4).value(),
            Tensor<float>(Shape{1, 1, 3, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4}));
  EXPECT_THROW(ops::upsample_nearest2(x, 5, 4), jcae::ShapeError);
}

TEST(Concat, OrdersChannelsAndChecksShapes) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>(Shape{1, 1, 1, 2}, {1, 2}));
  auto b = tape.constant(Tensor<float>(Shape{1, 2, 1, 2}, {3, 4, 5, 6}));
  EXPECT_EQ(ops::concat_channels(a, b).value(), Tensor<float>(Shape{1, 3, 1, 2}, {1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(ops::concat_channels(a, tape.constant(Tensor<float>(Shape{1, 1, 2, 2}))), jcae::ShapeError);
}

TEST(Tape, ParameterUsedTwiceAccumulatesBothPaths) {
  Tensor<double> p(Shape{2}, {1.5, -2.0});
  Tape<double> tape;
  auto v1 = tape.parameter(p);
  auto v2 = tape.parameter(p);
  tape.backward(ops::sum(ops::add(ops::scale(v1, 3.0), v2)));
  ASSERT_TRUE(p.has_grad());
  EXPECT_EQ(p.grad()[0], 4.0);
  EXPECT_EQ(p.grad()[1], 4.0);
}

TEST(Tape, FrozenLeavesReceiveNoGradient) {
  Tensor<double> p(Shape{2}, {1.0, 2.0});
  Tape<double> tape;
  tape.backward(ops::sum(tape.frozen(p)));
  EXPECT_FALSE(p.has_grad());
}

TEST(Tape, BackwardRequiresScalar) {
  Tape<double> tape;
  auto x = tape.input(Tensor<double>(Shape{2}));
  EXPECT_THROW(tape.backward(x), jcae::ShapeError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  jcae::ScalarFn<double> broken = [](Tape<double>& tape, Var<double> x) {
    Tensor<double> y(Shape{1}, x.value()[0] * x.value()[0]);
    return tape.push(std::move(y), true, [x](Tape<double>& t, const Tensor<double>&, std::span<const double> g) {
      t.grad_buffer(x)[0] += g[0] * 3.0 * t.value(x)[0];
    });
  };
  const auto r = jcae::grad_check<double>(broken, Tensor<double>(Shape{1}, 2.0));
  EXPECT_GT(r.max_rel_error, 0.3);
}

TEST(GradCheck, RefinesTheStepAcrossAKink) {
  // relu probed 3e-6 from its kink: a 1e-5 step straddles it.
  jcae::ScalarFn<double> fn = [](Tape<double>&, Var<double> x) { return ops::sum(ops::relu(x)); };
  const Tensor<double> point(Shape{1}, 3e-6);
  jcae::GradCheckOptions coarse;
  coarse.step = 1e-5;
  coarse.max_refinements = 0;
  EXPECT_GT(jcae::grad_check<double>(fn, point, coarse).max_rel_error, 0.3);
  jcae::GradCheckOptions refined = coarse;
  refined.max_refinements = 3;
  EXPECT_LT(jcae::grad_check<double>(fn, point, refined).max_rel_error, 1e-9);
}

TEST(GradCheck, DoublePrecisionOpsAreTight) {
  jcae::ScalarFn<double> fn = [](Tape<double>& tape, Var<double> x) {
    (void)tape;
    return ops::sum(ops::sigmoid(ops::scale(ops::upsample_nearest2(x), 0.7)));
  };
  jcae::GradCheckOptions o;
  o.step = 1e-6;
  const auto r = jcae::grad_check<double>(fn, random_tensor<double>({1, 2, 3, 5}, 8), o);
  EXPECT_LT(r.max_rel_error, 1e-7);
}

class GradientCase : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCase, SinglePrecisionGradientMatchesDoubleDifferences) {
  const auto cases = jcae::testing::gradient_cases();
  const auto& c = cases.at(GetParam());
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = c.run(seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << c.name << " seed " << seed << " index " << r.worst_index << " analytic "
                                     << r.analytic << " numeric " << r.numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCase,
                         ::testing::Range<std::size_t>(0, jcae::testing::gradient_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           std::string name = jcae::testing::gradient_cases()[info.param].name;
                           for (char& ch : name)
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           return name;
                         });

}  // namespace
