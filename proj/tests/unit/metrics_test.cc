#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cdnz/metrics.h"
#include "oracles.h"

namespace cdnz {
namespace {

TEST(PsnrTest, Examples) {
  const std::vector<float> a(100, 0.3f);
  EXPECT_EQ(Psnr(a, a), 99.0);
  const std::vector<float> zeros(64, 0.0f), halves(64, 0.5f);
  EXPECT_NEAR(Psnr(zeros, halves), 6.020599913279624, 1e-12);
  // MSE 1e-3 -> 30 dB: a constant offset of sqrt(1e-3).
  std::vector<double> base(50, 0.25);
  std::vector<float> x(50), y(50);
  for (size_t i = 0; i < 50; ++i) {
    x[i] = static_cast<float>(base[i]);
    y[i] = x[i] + static_cast<float>(std::sqrt(1e-3));
  }
  EXPECT_NEAR(Psnr(x, y), 30.0, 1e-5);
  EXPECT_NEAR(Psnr(zeros, halves, 255.0), 6.020599913279624 + 20 * std::log10(255.0), 1e-9);
}

TEST(PsnrTest, QuantizedVariantClampsAndRounds) {
  Image ref(2, 2, 3, 0.5f), est(2, 2, 3, 0.5f);
  est.values[0] = 1.7f;  // clamps to 1
  const Image q = Quantize8(est);
  EXPECT_EQ(q.values[0], 1.0f);
  EXPECT_EQ(q.values[1], 128 / 255.0f);
  EXPECT_EQ(QuantizedPsnr(est, ref), Psnr(Quantize8(est), ref));
}

TEST(PsnrTest, MatchesOracleOnRandomInstances) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = static_cast<size_t>(rng.UniformInt(1, 300));
    std::vector<float> a(n), b(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.Uniform());
      b[i] = a[i] + static_cast<float>(rng.Normal(0, rng.Uniform(1e-4, 0.3)));
    }
    const double peak = trial % 2 ? 1.0 : 255.0;
    EXPECT_NEAR(Psnr(a, b, peak), cdnz_test::BrutePsnr(a, b, peak), 1e-9) << trial;
  }
}

TEST(TopKTest, Examples) {
  Tensor<float> onehot({3, 4});
  const std::vector<int> labels = {2, 0, 3};
  for (int i = 0; i < 3; ++i) onehot[i * 4 + labels[static_cast<size_t>(i)]] = 1;
  for (int k = 1; k <= 4; ++k) EXPECT_EQ(TopKAccuracy(onehot, labels, k), 1.0);

  Rng rng(2);
  Tensor<float> random({5, 4});
  for (float& v : random.data()) v = static_cast<float>(rng.Normal());
  const std::vector<int> any = {0, 1, 2, 3, 1};
  EXPECT_EQ(TopKAccuracy(random, any, 4), 1.0);

  // Row 0 is right at top-1; rows 1-3 rank their label 2nd, 3rd and 5th.
  Tensor<float> hand({4, 6});
  const float rows[4][6] = {{9, 1, 2, 3, 4, 5}, {9, 8, 1, 2, 3, 4}, {9, 8, 7, 1, 2, 3}, {9, 8, 7, 6, 5, 1}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) hand[i * 6 + j] = rows[i][j];
  const std::vector<int> hand_labels = {0, 1, 2, 4};
  EXPECT_EQ(TopKAccuracy(hand, hand_labels, 1), 0.25);
  EXPECT_EQ(TopKAccuracy(hand, hand_labels, 5), 1.0);
}

TEST(TopKTest, TiesFavorLowerIndex) {
  Tensor<float> tied({1, 3}, 0.5f);
  EXPECT_EQ(TopKAccuracy(tied, std::vector<int>{0}, 1), 1.0);
  EXPECT_EQ(TopKAccuracy(tied, std::vector<int>{1}, 1), 0.0);
  EXPECT_EQ(TopKAccuracy(tied, std::vector<int>{2}, 2), 0.0);
  EXPECT_EQ(ArgmaxClasses(tied), std::vector<int>{0});
}

TEST(TopKTest, MatchesOracleOnRandomInstances) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = rng.UniformInt(1, 20), classes = rng.UniformInt(2, 8);
    Tensor<double> logits({n, classes});
    // Coarse values so ties occur.
    for (double& v : logits.data()) v = static_cast<double>(rng.UniformInt(0, 4));
    std::vector<int> labels(static_cast<size_t>(n));
    for (int& l : labels) l = static_cast<int>(rng.UniformInt(0, classes - 1));
    const int k = static_cast<int>(rng.UniformInt(1, classes));
    EXPECT_NEAR(TopKAccuracy(logits, labels, k), cdnz_test::BruteTopK(logits, labels, k), 1e-9) << trial;
  }
}

TEST(MeanIouTest, Examples) {
  const std::vector<int> gt = {0, 0, 1, 1}, pred = {0, 1, 1, 1};
  EXPECT_NEAR(MeanIou(pred, gt, 2), 7.0 / 12.0, 1e-15);
  EXPECT_EQ(MeanIou(gt, gt, 2), 1.0);
  const std::vector<int> zeros = {0, 0, 0}, ones = {1, 1, 1};
  EXPECT_EQ(MeanIou(zeros, ones, 2), 0.0);
  const std::vector<int> ignored = {255, 255, 255};
  EXPECT_EQ(MeanIou(zeros, ignored, 2), 1.0);
}

TEST(MeanIouTest, MatchesOracleOnRandomInstances) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = static_cast<int>(rng.UniformInt(2, 5));
    const size_t n = static_cast<size_t>(rng.UniformInt(1, 200));
    std::vector<int> gt(n), pred(n);
    for (size_t i = 0; i < n; ++i) {
      gt[i] = rng.Uniform() < 0.1 ? 255 : static_cast<int>(rng.UniformInt(0, classes - 1));
      pred[i] = static_cast<int>(rng.UniformInt(0, classes - 1));
    }
    EXPECT_NEAR(MeanIou(pred, gt, classes), cdnz_test::BruteMeanIou(pred, gt, classes, 255), 1e-9) << trial;
  }
}

TEST(ArgmaxTest, PerPixelClasses) {
  Tensor<float> logits({1, 2, 1, 3});
  logits.at(0, 1, 0, 0) = 1;
  logits.at(0, 0, 0, 1) = 1;
  EXPECT_EQ(ArgmaxClasses(logits), (std::vector<int>{1, 0, 0}));
}

}  // namespace
}  // namespace cdnz
