#pragma once

// Invariant battery behind `cfcg verify`: round trip, cycle probe, mixing
// determinants, log-determinant against a dense Jacobian, spectral-norm range
// and wavelet reconstruction.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cfcg/invgen.hpp"
#include "cfcg/train.hpp"
#include "cfcg/wavelet.hpp"

namespace cfcg {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

template <class T>
struct CheckTolerances {
  double round_trip = std::is_same_v<T, float> ? 1e-4 : 1e-10;
  double cycle = std::is_same_v<T, float> ? 1e-4 : 1e-8;
  double logdet = 1e-6;
  double sigma_lo = 0.95;
  double sigma_hi = 1.05;
  double wavelet = 1e-10;
};

namespace detail {

inline std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

// log|det dG/dr| at r from a central-difference Jacobian, in double.
inline double dense_jacobian_logdet(GeneratorParams<double>& g, const Tensor<double>& r, double h = 1e-6) {
  const std::size_t n = r.numel();
  Eigen::MatrixXd jac(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    auto plus = r.clone(), minus = r.clone();
    plus.mutable_data()[k] += h;
    minus.mutable_data()[k] -= h;
    const auto fp = generator_forward(plus, g), fm = generator_forward(minus, g);
    for (std::size_t i = 0; i < n; ++i) jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
        (fp.data()[i] - fm.data()[i]) / (2.0 * h);
  }
  return std::log(std::abs(jac.partialPivLu().determinant()));
}

}  // namespace detail

template <class T>
std::vector<CheckResult> run_invariant_battery(GeneratorParams<T>& g, std::uint64_t seed, std::size_t side = 64,
                                               const CheckTolerances<T>& tol = {}) {
  NoGradGuard<T> off;
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);

  CheckResult det{"mixing_determinant", true, 0.0, kMinAbsDeterminant, ""};
  double min_det = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.blocks.size(); ++i) {
    const double d = std::abs(g.blocks[i].mix.determinant());
    min_det = std::min(min_det, d);
    det.detail += (i ? " " : "|det W| = ") + detail::sci(d);
  }
  det.value = min_det;
  det.pass = min_det >= kMinAbsDeterminant;
  out.push_back(det);

  const auto r = Tensor<T>::randn(Shape{1, 1, side, side}, rng, T(1));
  const auto s = Tensor<T>::randn(Shape{1, 1, side, side}, rng, T(1));
  auto guarded = [&](const char* name, double tolerance, auto&& fn) {
    CheckResult c{name, false, 0.0, tolerance, ""};
    try {
      c.value = fn();
      c.pass = std::isfinite(c.value) && c.value <= tolerance;
      c.detail = detail::sci(c.value) + " (tolerance " + detail::sci(tolerance) + ")";
    } catch (const std::exception& e) {
      c.value = std::numeric_limits<double>::infinity();
      c.detail = e.what();
    }
    out.push_back(c);
  };

  guarded("round_trip", tol.round_trip, [&] {
    return std::max(detail::max_abs_diff(generator_inverse(generator_forward(r, g), g), r),
                    detail::max_abs_diff(generator_forward(generator_inverse(s, g), g), s));
  });
  guarded("cycle_loss_probe", tol.cycle, [&] { return cycle_loss_probe(r, s, g); });
  guarded("logdet_vs_dense_jacobian", tol.logdet, [&] {
    auto gd = g.template cast<double>();
    const auto toy = Tensor<double>::randn(Shape{1, 1, 4, 4}, rng, 1.0);
    return std::abs(detail::dense_jacobian_logdet(gd, toy) - generator_logdet(gd, 4, 4));
  });

  {
    CheckResult c{"spectral_norm_range", true, 1.0, tol.sigma_hi, ""};
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& b : g.blocks)
      for (const auto& net : b.nets) {
        for (auto [w, st] : {std::pair{&net.w1, &net.sn1}, std::pair{&net.w2, &net.sn2}}) {
          const Shape ws = w->shape();
          const double top = linalg::top_singular_value<T>(w->data(), ws.n, ws.c * ws.h * ws.w);
          const double ratio = top / spectral_estimate(*w, *st);
          lo = std::min(lo, ratio);
          hi = std::max(hi, ratio);
        }
      }
    c.pass = lo >= tol.sigma_lo && hi <= tol.sigma_hi;
    c.value = hi;
    c.detail = "normalized sigma in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
    out.push_back(c);
  }

  guarded("wavelet_reconstruction", tol.wavelet, [&] {
    const auto img = Tensor<double>::randn(Shape{1, 1, side, side}, rng, 1.0);
    const std::size_t levels = g.config.wavelet_levels;
    const auto rec = wavelet::idwt2(wavelet::dwt2(img, levels));
    const auto split = wavelet::wavelet_residual(img, levels);
    return std::max(detail::max_abs_diff(rec, img), detail::max_abs_diff(add(split.residual, split.lowband), img));
  });
  return out;
}

inline nlohmann::json to_json(const std::vector<CheckResult>& checks) {
  auto arr = nlohmann::json::array();
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name},
                   {"pass", c.pass},
                   {"value", std::isfinite(c.value) ? nlohmann::json(c.value) : nlohmann::json(nullptr)},
                   {"tolerance", c.tolerance},
                   {"detail", c.detail}});
  }
  return arr;
}

}  // namespace cfcg
