#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cfcg/metrics.hpp"
#include "oracles.hpp"

using namespace cfcg;
namespace m = cfcg::metrics;

namespace {

Tensor<double> smooth_image(std::size_t n, std::uint64_t seed) {
  auto t = oracle::random_tensor(Shape{1, 1, n, n}, seed, 0.05);
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] += 0.3 * std::sin(0.3 * i) * std::cos(0.2 * j);
  return t;
}

}  // namespace

TEST(Psnr, MatchesDirectFormulaAndIsSymmetric) {
  auto x = smooth_image(16, 1), y = smooth_image(16, 2);
  const std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  EXPECT_NEAR(m::psnr(x, y), oracle::psnr(a, b, 2.0), 1e-12);
  EXPECT_NEAR(m::psnr(x, y, 2000.0), oracle::psnr(a, b, 2000.0), 1e-12);
  EXPECT_EQ(m::psnr(x, y), m::psnr(y, x));
}

TEST(Psnr, KnownValueAndIdenticalSentinel) {
  Tensor<double> x(Shape{1, 1, 2, 2}, 0.0), y(Shape{1, 1, 2, 2}, 0.02);
  // RMSE 0.02 with MAX 2 -> 20 log10(100) = 40 dB.
  EXPECT_NEAR(m::psnr(x, y), 40.0, 1e-12);
  EXPECT_TRUE(std::isinf(m::psnr(x, x)));
  EXPECT_THROW(m::psnr(x, Tensor<double>(Shape{1, 1, 2, 3})), ShapeError);
}

TEST(Ssim, IdenticalIsOne) {
  auto x = smooth_image(24, 3);
  EXPECT_NEAR(m::ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(m::ssim_global(x, x), 1.0, 1e-12);
}

TEST(Ssim, ConstantShiftMatchesAnalyticWindowFormula) {
  auto x = smooth_image(20, 4);
  const double c = 0.1;
  const auto y = add_scalar(x, c);
  // Per window: structure/contrast term is exactly 1, luminance term is
  // (2 mx (mx + c) + c1) / (mx^2 + (mx + c)^2 + c1).
  const auto g = m::gaussian_window();
  const double c1 = std::pow(0.01 * 2.0, 2);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + 11 <= 20; ++i)
    for (std::size_t j = 0; j + 11 <= 20; ++j) {
      double mx = 0;
      for (std::size_t u = 0; u < 11; ++u)
        for (std::size_t v = 0; v < 11; ++v) mx += g[u * 11 + v] * x(0, 0, i + u, j + v);
      total += (2 * mx * (mx + c) + c1) / (mx * mx + (mx + c) * (mx + c) + c1);
      ++count;
    }
  const double s = m::ssim(x, y);
  EXPECT_LT(s, 1.0);
  EXPECT_NEAR(s, total / count, 1e-10);
}

TEST(Ssim, GaussianWindowIsNormalizedAndSymmetric) {
  const auto g = m::gaussian_window();
  double sum = 0;
  for (double v : g) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-14);
  EXPECT_NEAR(g[0], g[120], 1e-18);
  EXPECT_NEAR(g[5 * 11 + 5] / g[5 * 11 + 6], std::exp(1.0 / (2 * 1.5 * 1.5)), 1e-12);
}

TEST(Ssim, AnticorrelatedIsNegative) {
  // Checkerboard: every window mean is ~0, so only the structure term flips.
  Tensor<double> x(Shape{1, 1, 16, 16});
  auto d = x.mutable_data();
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) d[i * 16 + j] = (i + j) % 2 ? 0.3 : -0.3;
  EXPECT_LT(m::ssim(x, scale(x, -1.0)), -0.9);
}

TEST(Ssim, SymmetricAndStableUnderAffineMaps) {
  // Local variances and covariances well above c2 = 3.6e-3 even at a = 0.5,
  // and means far from zero, so only the constants' relative size changes.
  const auto x = add_scalar(oracle::random_tensor(Shape{1, 1, 24, 24}, 6, 0.5), 2.0);
  const auto y = add(x, oracle::random_tensor(Shape{1, 1, 24, 24}, 7, 0.3));
  EXPECT_NEAR(m::ssim(x, y), m::ssim(y, x), 1e-14);
  for (double a : {0.5, 1.0, 2.0}) {
    const double b = 0.1;
    EXPECT_NEAR(m::ssim(add_scalar(scale(x, a), b), add_scalar(scale(y, a), b)), m::ssim(x, y), 0.02) << a;
  }
  EXPECT_THROW(m::ssim(Tensor<double>(Shape{1, 1, 8, 8}), Tensor<double>(Shape{1, 1, 8, 8})), ShapeError);
}

TEST(Report, CsvLayout) {
  m::MetricReport r;
  r.add("a", 30.0, 0.8);
  r.add("b", 32.0, 0.9);
  std::ostringstream os;
  r.write_csv(os);
  EXPECT_EQ(os.str(), "image_id,psnr_db,ssim\na,30,0.8\nb,32,0.9\nmean,31,0.85\nstd,1,0.05\n");
}
