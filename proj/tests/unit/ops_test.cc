#include <gtest/gtest.h>

#include <cmath>

#include "cdnz/errors.h"
#include "cdnz/ops.h"
#include "oracles.h"

namespace cdnz {
namespace {

using cdnz_test::GradCheck;
using cdnz_test::MaxAbsDiff;
using cdnz_test::RandomTensor;

TEST(Conv2dTest, MatchesBruteForce) {
  Rng rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const int64_t n = rng.UniformInt(1, 2), cin = rng.UniformInt(1, 4), cout = rng.UniformInt(1, 4);
    const int k = static_cast<int>(rng.UniformInt(1, 3)) * 2 - 1;
    const int stride = static_cast<int>(rng.UniformInt(1, 2)), pad = static_cast<int>(rng.UniformInt(0, 2));
    const int64_t h = rng.UniformInt(k, 9), w = rng.UniformInt(k, 9);
    const auto x = RandomTensor({n, cin, h, w}, rng);
    const auto wt = RandomTensor({cout, cin, k, k}, rng);
    const auto b = RandomTensor({cout}, rng);
    Tape<double> tape(false);
    const auto y = Conv2d(tape.Constant(x), tape.Constant(wt), tape.Constant(b), stride, pad);
    EXPECT_LE(MaxAbsDiff(y.value(), cdnz_test::BruteConv2d(x, wt, b, stride, pad)), 1e-12) << "trial " << trial;
  }
}

TEST(Conv2dTest, FloatMatchesDoubleReference) {
  Rng rng(5);
  const auto x = RandomTensor({2, 3, 7, 6}, rng);
  const auto wt = RandomTensor({4, 3, 3, 3}, rng);
  const auto b = RandomTensor({4}, rng);
  Tape<float> tape(false);
  const auto y = Conv2d(tape.Constant(x.Cast<float>()), tape.Constant(wt.Cast<float>()),
                        tape.Constant(b.Cast<float>()), 1, 1);
  EXPECT_LE(MaxAbsDiff(y.value(), cdnz_test::BruteConv2d(x, wt, b, 1, 1)), 1e-5);
}

TEST(Conv2dTest, ShapeErrorsNameTheMismatch) {
  Tape<double> tape;
  auto x = tape.Constant(Tensor<double>({1, 3, 5, 5}));
  auto w = tape.Constant(Tensor<double>({2, 4, 3, 3}));
  auto b = tape.Constant(Tensor<double>({2}));
  try {
    Conv2d(x, w, b, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("3 channels"), std::string::npos) << e.what();
  }
  EXPECT_THROW(Conv2d(x, tape.Constant(Tensor<double>({2, 3, 3, 3})), tape.Constant(Tensor<double>({3})), 1, 1),
               ShapeError);
  EXPECT_THROW(Conv2d(x, tape.Constant(Tensor<double>({2, 3, 7, 7})), b, 1, 0), ShapeError);
}

TEST(ConvTranspose2dTest, MatchesBruteForceAndDoublesSize) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int64_t n = rng.UniformInt(1, 2), cin = rng.UniformInt(1, 3), cout = rng.UniformInt(1, 3);
    const int64_t h = rng.UniformInt(1, 6), w = rng.UniformInt(1, 6);
    const auto x = RandomTensor({n, cin, h, w}, rng);
    const auto wt = RandomTensor({cin, cout, 4, 4}, rng);
    const auto b = RandomTensor({cout}, rng);
    Tape<double> tape(false);
    const auto y = ConvTranspose2d(tape.Constant(x), tape.Constant(wt), tape.Constant(b), 2, 1);
    EXPECT_EQ(y.shape(), (Shape{n, cout, 2 * h, 2 * w}));
    EXPECT_LE(MaxAbsDiff(y.value(), cdnz_test::BruteConvTranspose2d(x, wt, b, 2, 1)), 1e-12);
  }
}

// <conv(x), y> == <x, conv_transpose(y)> with shared weights and no bias.
TEST(ConvTranspose2dTest, IsAdjointOfStridedConv) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t cin = rng.UniformInt(1, 3), cout = rng.UniformInt(1, 3), h = 2 * rng.UniformInt(1, 5),
                  w = 2 * rng.UniformInt(1, 5);
    const auto x = RandomTensor({1, cin, h, w}, rng);
    const auto wt = RandomTensor({cout, cin, 4, 4}, rng);
    Tape<double> tape(false);
    const auto cx = Conv2d(tape.Constant(x), tape.Constant(wt), tape.Constant(Tensor<double>({cout})), 2, 1);
    const auto y = RandomTensor(cx.shape(), rng);
    const auto ty = ConvTranspose2d(tape.Constant(y), tape.Constant(wt), tape.Constant(Tensor<double>({cin})), 2, 1);
    ASSERT_EQ(ty.shape(), x.shape());
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < y.size(); ++i) lhs += cx.value()[i] * y[i];
    for (int64_t i = 0; i < x.size(); ++i) rhs += x[i] * ty.value()[i];
    EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(MaxPool2Test, MatchesBruteForceAndRejectsOddExtents) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = RandomTensor({2, 3, 2 * rng.UniformInt(1, 4), 2 * rng.UniformInt(1, 4)}, rng);
    Tape<double> tape(false);
    EXPECT_EQ(MaxAbsDiff(MaxPool2(tape.Constant(x)).value(), cdnz_test::BruteMaxPool2(x)), 0.0);
  }
  Tape<double> tape;
  EXPECT_THROW(MaxPool2(tape.Constant(Tensor<double>({1, 1, 3, 4}))), ShapeError);
}

TEST(MaxPool2Test, TiesRouteGradientToFirstInRowMajorOrder) {
  Tape<double> tape;
  auto x = tape.Input(Tensor<double>({1, 1, 2, 2}, {1.0, 5.0, 5.0, 5.0}));
  tape.Backward(Sum(MaxPool2(x)));
  EXPECT_EQ(tape.grad(x).data()[1], 1.0);
  EXPECT_EQ(tape.grad(x).data()[2], 0.0);
  EXPECT_EQ(tape.grad(x).data()[3], 0.0);
}

TEST(BatchNormTest, TrainModeNormalizesAndUpdatesRunningStats) {
  Rng rng(11);
  const auto x = RandomTensor({4, 2, 3, 3}, rng, 2.0);
  Tensor<double> rm = Tensor<double>::Zeros({2}), rv = Tensor<double>::Ones({2});
  Tape<double> tape(false);
  const auto y = BatchNorm(tape.Constant(x), tape.Constant(Tensor<double>::Ones({2})),
                           tape.Constant(Tensor<double>::Zeros({2})), rm, rv, Mode::kTrain);
  for (int64_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, xm = 0, xv = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) {
        const double v = y.value().at(n, c, i / 3, i % 3);
        mean += v;
        sq += v * v;
        xm += x.at(n, c, i / 3, i % 3);
      }
    mean /= 36;
    xm /= 36;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) xv += std::pow(x.at(n, c, i / 3, i % 3) - xm, 2);
    xv /= 36;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, xv / (xv + 1e-5), 1e-10);
    EXPECT_NEAR(rm[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * xv, 1e-12);
  }
}

TEST(BatchNormTest, EvalModeUsesRunningStatsAndLeavesThemAlone) {
  Tensor<double> rm({1}, 2.0), rv({1}, 4.0);
  Tape<double> tape(false);
  const auto y = BatchNorm(tape.Constant(Tensor<double>({1, 1, 1, 2}, {2.0, 6.0})),
                           tape.Constant(Tensor<double>({1}, 3.0)), tape.Constant(Tensor<double>({1}, 1.0)), rm, rv,
                           Mode::kEval);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 1.0 + 3.0 * 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(rm[0], 2.0);
  EXPECT_EQ(rv[0], 4.0);
}

TEST(CrossEntropyTest, MatchesClosedFormAndHandlesIgnore) {
  Tape<double> tape;
  auto logits = tape.Input(Tensor<double>({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0}));
  const std::vector<int> labels = {2, 1};
  const auto loss = CrossEntropyLoss(logits, labels);
  const double expected = (-(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))) + std::log(3.0)) / 2;
  EXPECT_NEAR(loss.value().item(), expected, 1e-12);

  const std::vector<int> ignored = {255, 255};
  const auto zero = CrossEntropyLoss(logits, ignored, 255);
  EXPECT_EQ(zero.value().item(), 0.0);
  tape.Backward(zero);
  for (double g : tape.grad(logits).data()) EXPECT_EQ(g, 0.0);

  const std::vector<int> bad = {3, 0};
  EXPECT_THROW(CrossEntropyLoss(logits, bad), InvalidArgument);
}

TEST(CrossEntropyTest, StableForLargeLogits) {
  Tape<double> tape(false);
  const std::vector<int> labels = {0};
  const auto loss = CrossEntropyLoss(tape.Constant(Tensor<double>({1, 2}, {1000.0, 0.0})), labels);
  EXPECT_TRUE(std::isfinite(loss.value().item()));
  EXPECT_NEAR(loss.value().item(), 0.0, 1e-12);
}

TEST(PadCropTest, ReflectPadMirrorsWithoutEdgeAndCropInverts) {
  Tape<double> tape(false);
  const auto x = tape.Constant(Tensor<double>({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto p = ReflectPad(x, 1, 2);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 3, 5}));
  const std::vector<double> expected = {1, 2, 3, 2, 1, 4, 5, 6, 5, 4, 1, 2, 3, 2, 1};
  EXPECT_EQ(std::vector<double>(p.value().data().begin(), p.value().data().end()), expected);
  EXPECT_EQ(Crop(p, 0, 0, 2, 3).value(), x.value());
}

TEST(AutogradTest, RejectsNonScalarLossAndAccumulatesParameterGrads) {
  Parameter<double> p{"p", Tensor<double>({2}, {1.0, 2.0})};
  for (int round = 0; round < 2; ++round) {
    Tape<double> tape;
    auto v = tape.Param(p);
    EXPECT_THROW(tape.Backward(Mul(v, v)), ShapeError);
    tape.Backward(Sum(Mul(v, v)));
  }
  EXPECT_EQ(p.grad[0], 4.0);
  EXPECT_EQ(p.grad[1], 8.0);
  p.trainable = false;
  p.ZeroGrad();
  Tape<double> tape;
  auto x = tape.Input(Tensor<double>({2}, 1.0));
  tape.Backward(Sum(Mul(tape.Param(p), x)));
  EXPECT_FALSE(p.has_grad());
  EXPECT_EQ(tape.grad(x)[0], 1.0);
}

TEST(AutogradTest, ReplayIsBitIdentical) {
  auto run = [] {
    Rng rng(21);
    const auto x = RandomTensor<float>({2, 3, 8, 8}, rng);
    const auto w = RandomTensor<float>({4, 3, 3, 3}, rng);
    Tape<float> tape;
    auto wv = tape.Input(w);
    auto loss = Sum(Relu(Conv2d(tape.Constant(x), wv, tape.Constant(Tensor<float>({4})), 1, 1)));
    tape.Backward(loss);
    return std::make_pair(loss.value(), tape.grad(wv));
  };
  EXPECT_EQ(run(), run());
}

// Finite-difference checks at 64-bit on random inputs.
class GradCheckTest : public ::testing::Test {
 protected:
  Rng rng_{1234};
  void Expect(const cdnz_test::GradFn& f, std::vector<Tensor<double>> inputs) {
    EXPECT_LE(GradCheck(f, std::move(inputs), rng_), 1e-6);
  }
};

TEST_F(GradCheckTest, Conv2d) {
  Expect([](auto&, auto& v) { return Conv2d(v[0], v[1], v[2], 2, 1); },
         {RandomTensor({2, 2, 5, 6}, rng_), RandomTensor({3, 2, 3, 3}, rng_), RandomTensor({3}, rng_)});
}

TEST_F(GradCheckTest, ConvTranspose2d) {
  Expect([](auto&, auto& v) { return ConvTranspose2d(v[0], v[1], v[2], 2, 1); },
         {RandomTensor({2, 2, 3, 4}, rng_), RandomTensor({2, 3, 4, 4}, rng_), RandomTensor({3}, rng_)});
}

TEST_F(GradCheckTest, BatchNormTrainAndEval) {
  Tensor<double> rm = Tensor<double>::Zeros({3}), rv = Tensor<double>::Ones({3});
  Expect([&](auto&, auto& v) { return BatchNorm(v[0], v[1], v[2], rm, rv, Mode::kTrain); },
         {RandomTensor({3, 3, 2, 2}, rng_), RandomTensor({3}, rng_), RandomTensor({3}, rng_)});
  Expect([&](auto&, auto& v) { return BatchNorm(v[0], v[1], v[2], rm, rv, Mode::kEval); },
         {RandomTensor({3, 3, 2, 2}, rng_), RandomTensor({3}, rng_), RandomTensor({3}, rng_)});
}

TEST_F(GradCheckTest, ElementwiseAndStructural) {
  Expect([](auto&, auto& v) { return Relu(v[0]); }, {RandomTensor({2, 3, 4, 4}, rng_)});
  Expect([](auto&, auto& v) { return MaxPool2(v[0]); }, {RandomTensor({2, 3, 4, 6}, rng_)});
  Expect([](auto&, auto& v) { return Add(v[0], v[1]); }, {RandomTensor({2, 5}, rng_), RandomTensor({2, 5}, rng_)});
  Expect([](auto&, auto& v) { return Mul(v[0], v[1]); }, {RandomTensor({2, 5}, rng_), RandomTensor({2, 5}, rng_)});
  Expect([](auto&, auto& v) { return Scale(v[0], 0.37); }, {RandomTensor({7}, rng_)});
  Expect([](auto&, auto& v) { return ConcatChannels(v[0], v[1]); },
         {RandomTensor({2, 2, 3, 3}, rng_), RandomTensor({2, 1, 3, 3}, rng_)});
  Expect([](auto&, auto& v) { return GlobalAvgPool(v[0]); }, {RandomTensor({2, 3, 4, 5}, rng_)});
  Expect([](auto&, auto& v) { return Linear(v[0], v[1], v[2]); },
         {RandomTensor({3, 4}, rng_), RandomTensor({2, 4}, rng_), RandomTensor({2}, rng_)});
  const std::vector<double> offsets = {0.5, -1.0};
  Expect([&](auto&, auto& v) { return ShiftChannels(v[0], std::span<const double>(offsets)); },
         {RandomTensor({1, 2, 3, 3}, rng_)});
  Expect([](auto&, auto& v) { return ReflectPad(v[0], 3, 2); }, {RandomTensor({1, 2, 4, 3}, rng_)});
  Expect([](auto&, auto& v) { return Crop(v[0], 1, 2, 3, 2); }, {RandomTensor({2, 1, 5, 5}, rng_)});
}

TEST_F(GradCheckTest, Losses) {
  Expect([](auto&, auto& v) { return MseLoss(v[0], v[1]); },
         {RandomTensor({2, 3, 2, 2}, rng_), RandomTensor({2, 3, 2, 2}, rng_)});
  const std::vector<int> labels = {0, 2, 1};
  Expect([&](auto&, auto& v) { return CrossEntropyLoss(v[0], labels); }, {RandomTensor({3, 3}, rng_)});
  const std::vector<int> pixels = {0, 1, 255, 2, 1, 0, 0, 255};
  Expect([&](auto&, auto& v) { return CrossEntropyLoss(v[0], pixels, 255); }, {RandomTensor({2, 3, 2, 2}, rng_)});
}

}  // namespace
}  // namespace cdnz
