#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cfcg/tensor.hpp"

namespace cfcg::metrics {

// Fixed MAX / dynamic-range constants. HU scores use the width of the
// (-1000, 1000) HU display window; normalized scores use the width of the
// normalized data range [-1, 1].
inline constexpr double kRangeHu = 2000.0;
inline constexpr double kRangeNormalized = 2.0;

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

template <class T>
void check_same(const Tensor<T>& x, const Tensor<T>& y, const char* what) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError(std::string(what) + ": shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  }
}

// 20 log10(MAX / RMSE). Identical images give +infinity.
template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double max_value = kRangeNormalized) {
  check_same(x, y, "psnr");
  auto a = x.data(), b = y.data();
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double rmse = std::sqrt(se / static_cast<double>(a.size()));
  return 20.0 * std::log10(max_value / rmse);
}

inline std::vector<double> gaussian_window(std::size_t size = kSsimWindow, double sigma = kSsimSigma) {
  std::vector<double> g(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
      g[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      total += g[i * size + j];
    }
  for (auto& v : g) v /= total;
  return g;
}

// SSIM of one window's statistics.
inline double ssim_from_stats(double mx, double my, double vx, double vy, double cov, double range) {
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);
  return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

// Mean SSIM over all positions where an 11x11 Gaussian (sigma 1.5) window
// fits entirely inside the image. Operates on the first image/channel plane
// of each tensor set; shapes must match.
template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, double range = kRangeNormalized) {
  check_same(x, y, "ssim");
  const Shape s = x.shape();
  const std::size_t win = kSsimWindow;
  if (s.h < win || s.w < win) throw ShapeError("ssim: image smaller than the 11x11 window");
  static const std::vector<double> g = gaussian_window();
  const std::size_t planes = s.n * s.c;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* a = x.data().data() + p * s.plane();
    const T* b = y.data().data() + p * s.plane();
    for (std::size_t i = 0; i + win <= s.h; ++i)
      for (std::size_t j = 0; j + win <= s.w; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (std::size_t u = 0; u < win; ++u)
          for (std::size_t v = 0; v < win; ++v) {
            const double wgt = g[u * win + v];
            const double av = static_cast<double>(a[(i + u) * s.w + j + v]);
            const double bv = static_cast<double>(b[(i + u) * s.w + j + v]);
            mx += wgt * av;
            my += wgt * bv;
            xx += wgt * av * av;
            yy += wgt * bv * bv;
            xy += wgt * av * bv;
          }
        total += ssim_from_stats(mx, my, xx - mx * mx, yy - my * my, xy - mx * my, range);
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

// Single-window SSIM with whole-image statistics.
template <class T>
double ssim_global(const Tensor<T>& x, const Tensor<T>& y, double range = kRangeNormalized) {
  check_same(x, y, "ssim_global");
  auto a = x.data(), b = y.data();
  const double n = static_cast<double>(a.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mx += static_cast<double>(a[i]);
    my += static_cast<double>(b[i]);
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = static_cast<double>(a[i]) - mx, dy = static_cast<double>(b[i]) - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  return ssim_from_stats(mx, my, vx / n, vy / n, cov / n, range);
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (!std::isfinite(s.mean)) return s;
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

struct MetricReport {
  std::vector<std::string> ids;
  std::vector<double> psnr_db;
  std::vector<double> ssim;

  void add(std::string id, double p, double s) {
    ids.push_back(std::move(id));
    psnr_db.push_back(p);
    ssim.push_back(s);
  }
  std::size_t count() const { return ids.size(); }
  Summary psnr_summary() const { return summarize(psnr_db); }
  Summary ssim_summary() const { return summarize(ssim); }

  // image_id,psnr_db,ssim rows, then mean and std summary rows.
  void write_csv(std::ostream& os) const {
    os << "image_id,psnr_db,ssim\n";
    os.precision(10);
    for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << "," << psnr_db[i] << "," << ssim[i] << "\n";
    const auto p = psnr_summary(), s = ssim_summary();
    os << "mean," << p.mean << "," << s.mean << "\n";
    os << "std," << p.stddev << "," << s.stddev << "\n";
  }
};

}  // namespace cfcg::metrics
