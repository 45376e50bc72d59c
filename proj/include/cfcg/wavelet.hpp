#pragma once

// 2-D multilevel orthogonal DWT (Daubechies-3, periodic boundary) and the
// LL-nulled wavelet residual used as the network's working domain.
//
// Runs outside the gradient tape: the transform is preprocessing.

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfcg/tensor.hpp"

namespace cfcg::wavelet {

// Daubechies-3 scaling (lowpass analysis) filter, 6 taps. Values from the
// closed form h = [1+a+b, 5+a+3b, 10-2a+2b, 10-2a-2b, 5+a-3b, 1+a-b] / (16*sqrt(2))
// with a = sqrt(10), b = sqrt(5 + 2*sqrt(10)); agrees with the standard db3
// table (Daubechies, "Ten Lectures on Wavelets", Table 6.1).
inline constexpr std::array<double, 6> kDb3Lowpass = {
    0.33267055295008262, 0.80689150931109258, 0.45987750211849157,
    -0.13501102001025459, -0.085441273882026662, 0.035226291885709537,
};

// Quadrature-mirror highpass: g[n] = (-1)^n h[L-1-n].
inline constexpr std::array<double, 6> kDb3Highpass = {
    kDb3Lowpass[5], -kDb3Lowpass[4], kDb3Lowpass[3], -kDb3Lowpass[2], kDb3Lowpass[1], -kDb3Lowpass[0],
};

enum class Boundary { periodic };

template <class T>
struct Plane {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> v;

  Plane() = default;
  Plane(std::size_t rows, std::size_t cols) : h(rows), w(cols), v(rows * cols, T(0)) {}
  T& at(std::size_t r, std::size_t c) { return v[r * w + c]; }
  T at(std::size_t r, std::size_t c) const { return v[r * w + c]; }
};

template <class T>
struct DetailBands {
  Plane<T> lh;  // lowpass along rows (width), highpass along columns (height)
  Plane<T> hl;  // highpass along width, lowpass along height
  Plane<T> hh;
};

template <class T>
struct WaveletPyramid {
  std::size_t levels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Boundary boundary = Boundary::periodic;
  std::vector<DetailBands<T>> details;  // details[j] is level j+1 (finest first)
  Plane<T> ll;                          // coarsest approximation LL_J

  std::size_t coefficient_count() const {
    std::size_t n = ll.v.size();
    for (const auto& d : details) n += d.lh.v.size() + d.hl.v.size() + d.hh.v.size();
    return n;
  }
};

inline void check_divisible(std::size_t h, std::size_t w, std::size_t levels) {
  if (levels < 1) throw std::invalid_argument("wavelet: decomposition level must be >= 1");
  const std::size_t q = std::size_t{1} << levels;
  if (h == 0 || w == 0 || h % q != 0 || w % q != 0) {
    throw ShapeError("wavelet: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " must have both sides divisible by 2^" + std::to_string(levels) + " = " + std::to_string(q));
  }
}

namespace detail {

// Single-level periodic analysis of a strided 1-D signal of even length n.
template <class T>
void analyze_1d(const T* x, std::size_t n, std::size_t stride, T* lo, T* hi, std::size_t out_stride) {
  const std::size_t half = n / 2;
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t t = 0; t < kDb3Lowpass.size(); ++t) {
      const double xv = static_cast<double>(x[((2 * k + t) % n) * stride]);
      a += kDb3Lowpass[t] * xv;
      d += kDb3Highpass[t] * xv;
    }
    lo[k * out_stride] = static_cast<T>(a);
    hi[k * out_stride] = static_cast<T>(d);
  }
}

// Transpose of analyze_1d (exact inverse for the orthogonal filter pair).
template <class T>
void synthesize_1d(const T* lo, const T* hi, std::size_t half, std::size_t in_stride, T* x, std::size_t stride) {
  const std::size_t n = 2 * half;
  std::vector<double> acc(n, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double a = static_cast<double>(lo[k * in_stride]);
    const double d = static_cast<double>(hi[k * in_stride]);
    for (std::size_t t = 0; t < kDb3Lowpass.size(); ++t) {
      acc[(2 * k + t) % n] += kDb3Lowpass[t] * a + kDb3Highpass[t] * d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) x[i * stride] = static_cast<T>(acc[i]);
}

// One 2-D analysis level: returns (ll, bands).
template <class T>
std::pair<Plane<T>, DetailBands<T>> analyze_2d(const Plane<T>& img) {
  const std::size_t H = img.h, W = img.w, h2 = H / 2, w2 = W / 2;
  Plane<T> lo_w(H, w2), hi_w(H, w2);
  for (std::size_t r = 0; r < H; ++r) {
    analyze_1d(img.v.data() + r * W, W, 1, lo_w.v.data() + r * w2, hi_w.v.data() + r * w2, 1);
  }
  Plane<T> ll(h2, w2);
  DetailBands<T> bands{Plane<T>(h2, w2), Plane<T>(h2, w2), Plane<T>(h2, w2)};
  for (std::size_t c = 0; c < w2; ++c) {
    analyze_1d(lo_w.v.data() + c, H, w2, ll.v.data() + c, bands.lh.v.data() + c, w2);
    analyze_1d(hi_w.v.data() + c, H, w2, bands.hl.v.data() + c, bands.hh.v.data() + c, w2);
  }
  return {std::move(ll), std::move(bands)};
}

template <class T>
Plane<T> synthesize_2d(const Plane<T>& ll, const DetailBands<T>& bands) {
  const std::size_t h2 = ll.h, w2 = ll.w, H = 2 * h2, W = 2 * w2;
  Plane<T> lo_w(H, w2), hi_w(H, w2);
  for (std::size_t c = 0; c < w2; ++c) {
    synthesize_1d(ll.v.data() + c, bands.lh.v.data() + c, h2, w2, lo_w.v.data() + c, w2);
    synthesize_1d(bands.hl.v.data() + c, bands.hh.v.data() + c, h2, w2, hi_w.v.data() + c, w2);
  }
  Plane<T> img(H, W);
  for (std::size_t r = 0; r < H; ++r) {
    synthesize_1d(lo_w.v.data() + r * w2, hi_w.v.data() + r * w2, w2, 1, img.v.data() + r * W, 1);
  }
  return img;
}

}  // namespace detail

template <class T>
Plane<T> plane_of(const Tensor<T>& image, std::size_t index = 0) {
  const Shape s = image.shape();
  if (s.c != 1) throw ShapeError("wavelet: expected single-channel images, got " + s.str());
  Plane<T> p(s.h, s.w);
  auto src = image.data().subspan(index * s.plane(), s.plane());
  std::copy(src.begin(), src.end(), p.v.begin());
  return p;
}

template <class T>
WaveletPyramid<T> dwt2_plane(const Plane<T>& image, std::size_t levels) {
  check_divisible(image.h, image.w, levels);
  WaveletPyramid<T> pyr;
  pyr.levels = levels;
  pyr.height = image.h;
  pyr.width = image.w;
  Plane<T> current = image;
  for (std::size_t j = 0; j < levels; ++j) {
    auto [ll, bands] = detail::analyze_2d(current);
    pyr.details.push_back(std::move(bands));
    current = std::move(ll);
  }
  pyr.ll = std::move(current);
  return pyr;
}

// Analysis of a (1,1,H,W) image into `levels` levels.
template <class T>
WaveletPyramid<T> dwt2(const Tensor<T>& image, std::size_t levels) {
  if (image.shape().n != 1 || image.shape().c != 1) {
    throw ShapeError("dwt2: expected a (1,1,H,W) image, got " + image.shape().str());
  }
  return dwt2_plane(plane_of(image), levels);
}

template <class T>
Plane<T> idwt2_plane(const WaveletPyramid<T>& pyr) {
  if (pyr.levels < 1 || pyr.details.size() != pyr.levels) {
    throw ShapeError("idwt2: pyramid declares " + std::to_string(pyr.levels) + " levels but holds " +
                     std::to_string(pyr.details.size()));
  }
  check_divisible(pyr.height, pyr.width, pyr.levels);
  for (std::size_t j = 0; j < pyr.levels; ++j) {
    const std::size_t eh = pyr.height >> (j + 1), ew = pyr.width >> (j + 1);
    const auto& b = pyr.details[j];
    for (const Plane<T>* p : {&b.lh, &b.hl, &b.hh}) {
      if (p->h != eh || p->w != ew || p->v.size() != eh * ew) {
        throw ShapeError("idwt2: level " + std::to_string(j + 1) + " subband is " + std::to_string(p->h) + "x" +
                         std::to_string(p->w) + ", expected " + std::to_string(eh) + "x" + std::to_string(ew));
      }
    }
  }
  const std::size_t lh = pyr.height >> pyr.levels, lw = pyr.width >> pyr.levels;
  if (pyr.ll.h != lh || pyr.ll.w != lw || pyr.ll.v.size() != lh * lw) {
    throw ShapeError("idwt2: LL band is " + std::to_string(pyr.ll.h) + "x" + std::to_string(pyr.ll.w) +
                     ", expected " + std::to_string(lh) + "x" + std::to_string(lw));
  }
  Plane<T> current = pyr.ll;
  for (std::size_t j = pyr.levels; j-- > 0;) current = detail::synthesize_2d(current, pyr.details[j]);
  return current;
}

template <class T>
Tensor<T> idwt2(const WaveletPyramid<T>& pyr) {
  Plane<T> img = idwt2_plane(pyr);
  return Tensor<T>(Shape{1, 1, img.h, img.w}, std::move(img.v));
}

template <class T>
struct ResidualSplit {
  Tensor<T> residual;  // high-frequency content (LL_J nulled)
  Tensor<T> lowband;   // image - residual
};

// Residual = synthesis of the pyramid with LL_J zeroed; lowband = image -
// residual, so residual + lowband reproduces the image. Accepts (N,1,H,W).
template <class T>
ResidualSplit<T> wavelet_residual(const Tensor<T>& images, std::size_t levels) {
  const Shape s = images.shape();
  if (s.c != 1) throw ShapeError("wavelet_residual: expected single-channel images, got " + s.str());
  check_divisible(s.h, s.w, levels);
  std::vector<T> res(s.numel()), low(s.numel());
  auto src = images.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto pyr = dwt2_plane(plane_of(images, n), levels);
    std::fill(pyr.ll.v.begin(), pyr.ll.v.end(), T(0));
    Plane<T> r = idwt2_plane(pyr);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const std::size_t k = n * s.plane() + i;
      res[k] = r.v[i];
      low[k] = src[k] - r.v[i];
    }
  }
  return {Tensor<T>(s, std::move(res)), Tensor<T>(s, std::move(low))};
}

}  // namespace cfcg::wavelet
