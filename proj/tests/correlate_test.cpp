#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "xview/correlate.hpp"

namespace xview {
namespace {

FeatureMap<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return FeatureMap<double>(1, n, 1, std::move(v));
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double relative_error(const CorrelationProfile& a, const CorrelationProfile& b) {
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.scores[i] - b.scores[i]));
  const double scale = max_abs(b.scores);
  return scale > 0.0 ? diff / scale : diff;
}

TEST(CorrelateNaive, HandExample) {
  const auto p = correlate_naive(row({1, 2, 3, 4}), row({3, 4}));
  EXPECT_EQ(p.scores, (std::vector<double>{11, 18, 25, 16}));
  const auto o = estimate_orientation(p);
  EXPECT_EQ(o.best_shift, 2u);
  EXPECT_DOUBLE_EQ(o.degrees, 180.0);
}

TEST(CorrelateNaive, ZeroGround) {
  std::mt19937_64 rng(1);
  const auto fs = testing::random_tensor<double>(4, 16, 3, rng);
  const auto p = correlate_naive(fs, FeatureMap<double>(4, 5, 3, 0.0));
  for (double s : p.scores) EXPECT_EQ(s, 0.0);
}

TEST(CorrelateNaive, SelfCorrelationPeaksAtZero) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto f = testing::random_tensor<double>(3, 12, 4, rng);
    EXPECT_EQ(estimate_orientation(correlate_naive(f, f)).best_shift, 0u);
  }
}

TEST(CorrelateNaive, ShapeErrors) {
  FeatureMap<double> fs(4, 16, 8);
  EXPECT_THROW(correlate_naive(fs, FeatureMap<double>(3, 8, 8)), ShapeError);
  EXPECT_THROW(correlate_naive(fs, FeatureMap<double>(4, 8, 7)), ShapeError);
  EXPECT_THROW(correlate_naive(fs, FeatureMap<double>(4, 17, 8)), ShapeError);
  EXPECT_THROW(correlate_fft(fs, FeatureMap<double>(4, 17, 8)), ShapeError);
}

TEST(CorrelateFft, MatchesNaiveOnExamples) {
  const auto a = row({1, 2, 3, 4});
  const auto g = row({3, 4});
  EXPECT_LT(relative_error(correlate_fft(a, g), correlate_naive(a, g)), 1e-5);
  const auto z = correlate_fft(a, row({0, 0}));
  for (double s : z.scores) EXPECT_NEAR(s, 0.0, 1e-12);
  std::mt19937_64 rng(3);
  const auto f = testing::random_tensor<double>(2, 9, 3, rng);
  EXPECT_LT(relative_error(correlate_fft(f, f), correlate_naive(f, f)), 1e-5);
  EXPECT_EQ(estimate_orientation(correlate_fft(f, f)).best_shift, 0u);
}

TEST(CorrelateFft, RandomDefaultShapes) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto fs = testing::random_tensor<float>(4, 64, 16, rng);
    const auto fg = testing::random_tensor<float>(4, 13, 16, rng);
    EXPECT_LT(relative_error(correlate_fft(fs, fg), correlate_naive(fs, fg)), 1e-5);
  }
}

TEST(CorrelateFft, Impulse) {
  for (std::size_t k = 0; k < 16; ++k) {
    FeatureMap<double> fs(1, 16, 1, 0.0);
    fs(0, k, 0) = 1.0;
    FeatureMap<double> fg(1, 5, 1, 0.0);
    fg(0, 0, 0) = 1.0;
    const auto p = correlate_fft(fs, fg);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(p.scores[i], i == k ? 1.0 : 0.0, 1e-12);
  }
}

TEST(CorrelateFft, ShiftEquivariance) {
  std::mt19937_64 rng(5);
  const auto fs = testing::random_tensor<double>(2, 20, 3, rng);
  const auto fg = testing::random_tensor<double>(2, 7, 3, rng);
  const auto base = correlate_fft(fs, fg);
  for (std::size_t k = 0; k < 20; ++k) {
    // roll_columns(fs, k)(w) = fs(w + k), so the profile index moves back by k.
    const auto rolled = correlate_fft(roll_columns(fs, k), fg);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(rolled.scores[i], base.scores[(i + k) % 20], 1e-9);
    EXPECT_EQ(estimate_orientation(rolled).best_shift, (estimate_orientation(base).best_shift + 20 - k) % 20);
  }
}

TEST(EstimateOrientation, TieBreakAndDegrees) {
  const auto c = estimate_orientation(CorrelationProfile{std::vector<double>(7, 3.0)});
  EXPECT_EQ(c.best_shift, 0u);
  EXPECT_EQ(c.degrees, 0.0);
  std::vector<double> s(64, 0.0);
  s[16] = 5.0;
  EXPECT_DOUBLE_EQ(estimate_orientation(CorrelationProfile{s}).degrees, 90.0);
  std::vector<double> two(8, 0.0);
  two[3] = two[6] = 1.0;
  EXPECT_EQ(estimate_orientation(CorrelationProfile{two}).best_shift, 3u);
  EXPECT_THROW(estimate_orientation(CorrelationProfile{}), ShapeError);
}

TEST(AlignedDistance, IdentityAndAntipode) {
  std::mt19937_64 rng(6);
  const auto fs = testing::random_tensor<double>(4, 32, 6, rng);
  const auto crop = circular_column_crop(fs, 7, 10);
  EXPECT_NEAR(aligned_distance(fs, crop, 7), 0.0, 1e-12);
  auto neg = crop;
  for (auto& v : neg.storage()) v = -v;
  EXPECT_NEAR(aligned_distance(fs, neg, 7), 2.0, 1e-12);
}

TEST(AlignedDistance, LawOfCosines) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const auto fs = testing::random_tensor<double>(3, 16, 4, rng);
    const auto fg = testing::random_tensor<double>(3, 9, 4, rng);
    const std::size_t shift = static_cast<std::size_t>(t) % 16;
    const auto crop = circular_column_crop(fs, shift, 9);
    double aa = 0, gg = 0, ag = 0;
    for (std::size_t i = 0; i < crop.size(); ++i) {
      aa += crop.storage()[i] * crop.storage()[i];
      gg += fg.storage()[i] * fg.storage()[i];
      ag += crop.storage()[i] * fg.storage()[i];
    }
    const double cos_theta = ag / std::sqrt(aa * gg);
    const double d = aligned_distance(fs, fg, shift);
    EXPECT_NEAR(d, std::sqrt(2.0 - 2.0 * cos_theta), 1e-6);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(AlignedDistance, ZeroNormIsDegenerate) {
  FeatureMap<double> fs(1, 8, 1, 1.0);
  EXPECT_THROW(aligned_distance(fs, FeatureMap<double>(1, 4, 1, 0.0), 0), DegenerateFeatureError);
  EXPECT_THROW(aligned_distance(FeatureMap<double>(1, 8, 1, 0.0), FeatureMap<double>(1, 4, 1, 1.0), 0),
               DegenerateFeatureError);
  EXPECT_THROW(aligned_distance(fs, FeatureMap<double>(1, 4, 1, 1.0), 8), ShapeError);
}

TEST(MatchPair, RecoversPlantedShift) {
  std::mt19937_64 rng(8);
  const auto fs = testing::random_tensor<float>(4, 64, 16, rng);
  const auto m = match_pair(fs, circular_column_crop(fs, 10, 16));
  EXPECT_EQ(m.best_shift, 10u);
  EXPECT_NEAR(m.orientation_deg, 10 * 360.0 / 64, 1e-12);
  EXPECT_LT(m.distance, 1e-6);
}

TEST(MatchPair, HandExampleAndZeroGround) {
  const auto m = match_pair(row({1, 2, 3, 4}), row({3, 4}));
  EXPECT_EQ(m.best_shift, 2u);
  EXPECT_DOUBLE_EQ(m.orientation_deg, 180.0);
  EXPECT_NEAR(m.distance, 0.0, 1e-12);  // crop at 2 is [3, 4], identical to F_g
  EXPECT_NEAR(m.score, 25.0, 1e-9);
  EXPECT_THROW(match_pair(row({1, 2, 3, 4}), row({0, 0})), DegenerateFeatureError);
}

TEST(MatchPair, ScaleInvariance) {
  std::mt19937_64 rng(9);
  const auto fs = testing::random_tensor<double>(2, 24, 5, rng);
  const auto fg = testing::random_tensor<double>(2, 11, 5, rng);
  const auto base = match_pair(fs, fg);
  const auto p = correlate_naive(fs, fg);
  for (double lambda : {0.01, 0.5, 3.0, 1000.0}) {
    auto scaled = fg;
    for (auto& v : scaled.storage()) v *= lambda;
    const auto m = match_pair(fs, scaled);
    EXPECT_EQ(m.best_shift, base.best_shift);
    EXPECT_NEAR(m.distance, base.distance, 1e-9);
    const auto ps = correlate_naive(fs, scaled);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(ps.scores[i], lambda * p.scores[i], 1e-9 * lambda * 100);
  }
}

}  // namespace
}  // namespace xview
