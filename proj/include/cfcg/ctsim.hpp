#pragma once

// Synthetic CT data: random ellipse phantoms, parallel-beam projection,
// Poisson dose-reduction noise and filtered backprojection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "cfcg/parallel.hpp"
#include "cfcg/seed.hpp"
#include "cfcg/serialize.hpp"
#include "cfcg/tensor.hpp"

namespace cfcg::ctsim {

inline constexpr double kAirHu = -1000.0;
inline constexpr double kMaxHu = 3000.0;
inline constexpr double kHuScale = 4000.0;

// HU -> normalized units: truncate below air, divide by 4000.
inline double normalize_hu(double hu) { return std::max(hu, kAirHu) / kHuScale; }

using cfcg::derive_seed;

struct Ellipse {
  double cx = 0.0;  // center, normalized to [-1, 1] across the grid
  double cy = 0.0;
  double a = 0.5;  // semi-axes in the same units
  double b = 0.5;
  double angle = 0.0;  // radians
  double hu = 0.0;
};

struct Phantom {
  std::size_t grid = 64;
  std::vector<Ellipse> ellipses;  // painted in order; later ellipses overwrite
};

// HU image at pixel centers; background is air.
inline Tensor<double> rasterize_hu(const Phantom& ph) {
  const std::size_t g = ph.grid;
  std::vector<double> img(g * g, kAirHu);
  for (const auto& e : ph.ellipses) {
    if (!(e.a > 0.0) || !(e.b > 0.0)) throw std::invalid_argument("ellipse with non-positive semi-axis");
    const double ca = std::cos(e.angle), sa = std::sin(e.angle);
    const double hu = std::clamp(e.hu, kAirHu, kMaxHu);
    for (std::size_t i = 0; i < g; ++i) {
      const double y = 1.0 - (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(g);
      for (std::size_t j = 0; j < g; ++j) {
        const double x = (static_cast<double>(j) + 0.5) * 2.0 / static_cast<double>(g) - 1.0;
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
        if ((u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0) img[i * g + j] = hu;
      }
    }
  }
  return Tensor<double>(Shape{1, 1, g, g}, std::move(img));
}

inline Tensor<double> normalize_image(const Tensor<double>& hu) {
  std::vector<double> v(hu.numel());
  auto d = hu.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalize_hu(d[i]);
  return Tensor<double>(hu.shape(), std::move(v));
}

struct PhantomImage {
  Phantom phantom;
  Tensor<double> hu;
  Tensor<double> normalized;
};

// A body ellipse of soft tissue followed by internal structures (lung, fat,
// organs, bone). Deterministic in `seed`.
inline PhantomImage make_phantom(std::uint64_t seed, std::size_t grid, std::size_t min_ellipses,
                                 std::size_t max_ellipses) {
  if (min_ellipses > max_ellipses) throw std::invalid_argument("make_phantom: empty ellipse-count range");
  std::mt19937_64 rng(seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const auto count = std::uniform_int_distribution<std::size_t>(min_ellipses, max_ellipses)(rng);
  Phantom ph;
  ph.grid = grid;
  if (count > 0) {
    const double a = uni(0.6, 0.85), b = uni(0.5, 0.75);
    ph.ellipses.push_back({uni(-0.05, 0.05), uni(-0.05, 0.05), a, b, uni(-0.3, 0.3), uni(-20.0, 60.0)});
  }
  static constexpr double kTissues[][2] = {{-900.0, -700.0}, {-120.0, -60.0}, {20.0, 80.0}, {100.0, 250.0},
                                           {400.0, 1200.0}};
  for (std::size_t k = 1; k < count; ++k) {
    const auto& t = kTissues[std::uniform_int_distribution<std::size_t>(0, 4)(rng)];
    const double r = uni(0.0, 0.45), phi = uni(0.0, 2.0 * std::numbers::pi);
    ph.ellipses.push_back({r * std::cos(phi), r * std::sin(phi), uni(0.04, 0.25), uni(0.04, 0.25),
                           uni(0.0, std::numbers::pi), uni(t[0], t[1])});
  }
  PhantomImage out{ph, rasterize_hu(ph), {}};
  out.normalized = normalize_image(out.hu);
  return out;
}

// ---------------------------------------------------------------------------
// Projection

struct SinogramSet {
  std::vector<double> angles;  // radians in [0, pi)
  std::size_t detectors = 0;
  std::vector<double> values;  // (angles x detectors), row-major
  double i0 = 0.0;             // source counts; 0 for a noiseless sinogram
  double alpha = 1.0;          // dose fraction

  double at(std::size_t a, std::size_t d) const { return values[a * detectors + d]; }
};

inline std::size_t default_detectors(std::size_t grid) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(2.0) * static_cast<double>(grid)));
}

inline std::vector<double> uniform_angles(std::size_t n) {
  std::vector<double> a(n);
  for (std::size_t k = 0; k < n; ++k) a[k] = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return a;
}

namespace detail {
inline double bilinear(const std::vector<double>& img, std::size_t g, double x, double y) {
  // (x, y) in pixel units relative to the grid center; row index grows downward.
  const double c = (static_cast<double>(g) - 1.0) / 2.0;
  const double col = x + c, row = c - y;
  const double fc = std::floor(col), fr = std::floor(row);
  const auto c0 = static_cast<long>(fc), r0 = static_cast<long>(fr);
  const double tx = col - fc, ty = row - fr;
  auto px = [&](long r, long cc) -> double {
    if (r < 0 || cc < 0 || r >= static_cast<long>(g) || cc >= static_cast<long>(g)) return 0.0;
    return img[static_cast<std::size_t>(r) * g + static_cast<std::size_t>(cc)];
  };
  return (1 - ty) * ((1 - tx) * px(r0, c0) + tx * px(r0, c0 + 1)) + ty * ((1 - tx) * px(r0 + 1, c0) + tx * px(r0 + 1, c0 + 1));
}
}  // namespace detail

// Parallel-beam line integrals (pixel-length units) by bilinear ray
// sampling every half pixel. Detector spacing is one pixel.
inline SinogramSet radon(const Tensor<double>& image, std::size_t n_angles, std::size_t n_detectors = 0) {
  const Shape s = image.shape();
  if (s.h != s.w) throw ShapeError("radon: image must be square, got " + s.str());
  const std::size_t g = s.h;
  if (n_detectors == 0) n_detectors = default_detectors(g);
  SinogramSet sino;
  sino.angles = uniform_angles(n_angles);
  sino.detectors = n_detectors;
  sino.values.assign(n_angles * n_detectors, 0.0);
  const std::vector<double> img(image.data().begin(), image.data().begin() + static_cast<std::ptrdiff_t>(g * g));
  const double step = 0.5;
  const double half_len = std::sqrt(2.0) * static_cast<double>(g) / 2.0 + 1.0;
  const auto n_steps = static_cast<std::size_t>(std::ceil(2.0 * half_len / step));
  const double dc = (static_cast<double>(n_detectors) - 1.0) / 2.0;
  for (std::size_t a = 0; a < n_angles; ++a) {
    const double ct = std::cos(sino.angles[a]), st = std::sin(sino.angles[a]);
    for (std::size_t d = 0; d < n_detectors; ++d) {
      const double t = static_cast<double>(d) - dc;
      double acc = 0.0;
      for (std::size_t k = 0; k <= n_steps; ++k) {
        const double sp = -half_len + step * static_cast<double>(k);
        acc += detail::bilinear(img, g, t * ct - sp * st, t * st + sp * ct);
      }
      sino.values[a * n_detectors + d] = acc * step;
    }
  }
  return sino;
}

// ---------------------------------------------------------------------------
// Dose noise

// Poisson sample: inversion for mean <= 50, rounded normal approximation above.
template <class Rng>
double poisson_sample(double mean, Rng& rng) {
  if (mean <= 0.0) return 0.0;
  if (mean <= 50.0) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double p = std::exp(-mean), cdf = p;
    double k = 0.0;
    while (u > cdf && k < 1000.0) {
      k += 1.0;
      p *= mean / k;
      cdf += p;
    }
    return k;
  }
  const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  return std::max(0.0, std::round(mean + std::sqrt(mean) * z));
}

// counts ~ Poisson(I0 * alpha * exp(-p)), clamped >= 1;  p_hat = -ln(counts / (I0 * alpha)).
inline SinogramSet dose_noise(const SinogramSet& sino, double i0, double alpha, std::uint64_t seed) {
  if (!(i0 > 0.0)) throw std::invalid_argument("dose_noise: I0 must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("dose_noise: alpha must be in (0, 1]");
  std::mt19937_64 rng(seed);
  SinogramSet out = sino;
  out.i0 = i0;
  out.alpha = alpha;
  const double blank = i0 * alpha;
  for (auto& p : out.values) {
    const double counts = std::max(1.0, poisson_sample(blank * std::exp(-p), rng));
    p = -std::log(counts / blank);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtered backprojection

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex mu;
  return mu;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace detail

// Ram-Lak filtering of every projection row: the row is zero-padded, and
// multiplied in the DFT domain by the transform of the band-limited
// spatial ramp kernel h[0] = 1/4, h[odd n] = -1/(pi n)^2, h[even n] = 0.
inline std::vector<double> ramp_filter(const SinogramSet& sino) {
  const std::size_t nd = sino.detectors, na = sino.angles.size();
  const std::size_t len = detail::next_pow2(2 * nd);
  const std::size_t nc = len / 2 + 1;
  double* buf = fftw_alloc_real(len);
  fftw_complex* spec = fftw_alloc_complex(nc);
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(len), buf, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(len), spec, buf, FFTW_ESTIMATE);
  }
  // Kernel spectrum (circularly centered at 0).
  std::fill(buf, buf + len, 0.0);
  for (std::size_t k = 0; k < len; ++k) {
    const long n = k <= len / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(len);
    if (n == 0) {
      buf[k] = 0.25;
    } else if (n % 2 != 0) {
      const double pn = std::numbers::pi * static_cast<double>(n);
      buf[k] = -1.0 / (pn * pn);
    }
  }
  fftw_execute(fwd);
  std::vector<double> kernel(nc);
  for (std::size_t k = 0; k < nc; ++k) kernel[k] = spec[k][0];  // real, even kernel

  std::vector<double> out(na * nd);
  for (std::size_t a = 0; a < na; ++a) {
    std::fill(buf, buf + len, 0.0);
    std::copy(sino.values.begin() + static_cast<std::ptrdiff_t>(a * nd),
              sino.values.begin() + static_cast<std::ptrdiff_t>((a + 1) * nd), buf);
    fftw_execute(fwd);
    for (std::size_t k = 0; k < nc; ++k) {
      spec[k][0] *= kernel[k];
      spec[k][1] *= kernel[k];
    }
    fftw_execute(inv);
    for (std::size_t d = 0; d < nd; ++d) out[a * nd + d] = buf[d] / static_cast<double>(len);
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(buf);
  fftw_free(spec);
  return out;
}

// Ramp filtering then linear-interpolation backprojection scaled by pi / N_a.
inline Tensor<double> fbp(const SinogramSet& sino, std::size_t grid) {
  const std::size_t nd = sino.detectors, na = sino.angles.size();
  const auto filtered = ramp_filter(sino);
  std::vector<double> img(grid * grid, 0.0);
  const double c = (static_cast<double>(grid) - 1.0) / 2.0;
  const double dc = (static_cast<double>(nd) - 1.0) / 2.0;
  for (std::size_t a = 0; a < na; ++a) {
    const double ct = std::cos(sino.angles[a]), st = std::sin(sino.angles[a]);
    const double* row = filtered.data() + a * nd;
    for (std::size_t i = 0; i < grid; ++i) {
      const double y = c - static_cast<double>(i);
      for (std::size_t j = 0; j < grid; ++j) {
        const double x = static_cast<double>(j) - c;
        const double pos = x * ct + y * st + dc;
        const double f = std::floor(pos);
        const auto k = static_cast<long>(f);
        const double t = pos - f;
        double v = 0.0;
        if (k >= 0 && k < static_cast<long>(nd)) v += (1.0 - t) * row[k];
        if (k + 1 >= 0 && k + 1 < static_cast<long>(nd)) v += t * row[k + 1];
        img[i * grid + j] += v;
      }
    }
  }
  const double scale = std::numbers::pi / static_cast<double>(na);
  for (auto& v : img) v *= scale;
  return Tensor<double>(Shape{1, 1, grid, grid}, std::move(img));
}

// ---------------------------------------------------------------------------
// Acquisition model: HU phantom -> attenuation -> sinogram -> FBP -> HU.

struct ScanConfig {
  std::size_t grid = 64;
  std::size_t n_angles = 96;
  double fov_mm = 12.0;
  double mu_water_per_mm = 0.02;
  double i0 = 1e5;
};

inline Tensor<double> hu_to_attenuation(const Tensor<double>& hu, const ScanConfig& sc) {
  const double pixel_mm = sc.fov_mm / static_cast<double>(sc.grid);
  std::vector<double> v(hu.numel());
  auto d = hu.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sc.mu_water_per_mm * pixel_mm * (1.0 + d[i] / 1000.0);
  return Tensor<double>(hu.shape(), std::move(v));
}

// Attenuation reconstruction -> normalized image (HU truncated at air, / 4000).
inline Tensor<double> attenuation_to_normalized(const Tensor<double>& mu, const ScanConfig& sc) {
  const double pixel_mm = sc.fov_mm / static_cast<double>(sc.grid);
  const double mu_w = sc.mu_water_per_mm * pixel_mm;
  std::vector<double> v(mu.numel());
  auto d = mu.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = normalize_hu(1000.0 * (d[i] / mu_w - 1.0));
  return Tensor<double>(mu.shape(), std::move(v));
}

// Noiseless FBP reconstruction of a phantom (the clean reference).
inline Tensor<double> reconstruct_clean(const Tensor<double>& hu, const ScanConfig& sc) {
  return attenuation_to_normalized(fbp(radon(hu_to_attenuation(hu, sc), sc.n_angles), sc.grid), sc);
}

// FBP reconstruction from a dose-reduced noisy acquisition.
inline Tensor<double> reconstruct_noisy(const Tensor<double>& hu, const ScanConfig& sc, double alpha,
                                        std::uint64_t noise_seed) {
  auto sino = radon(hu_to_attenuation(hu, sc), sc.n_angles);
  return attenuation_to_normalized(fbp(dose_noise(sino, sc.i0, alpha, noise_seed), sc.grid), sc);
}

// ---------------------------------------------------------------------------
// Dataset

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t count = 0;
  bool overlaps(const SeedRange& o) const {
    return count > 0 && o.count > 0 && first < o.first + o.count && o.first < first + count;
  }
};

struct DatasetConfig {
  ScanConfig scan;
  double alpha = 0.25;     // low-dose fraction
  double sd_alpha = 1.0;   // standard-dose fraction for the unpaired SD pool
  bool sd_noiseless = false;
  std::size_t min_ellipses = 4;
  std::size_t max_ellipses = 10;
  SeedRange train_ld{1000, 200};
  SeedRange train_sd{2000, 200};
  SeedRange eval{3000, 50};
};

inline constexpr std::uint64_t kNoiseStream = 7;

inline std::string indexed_name(const char* prefix, std::size_t i, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05zu%s", prefix, i, suffix);
  return buf;
}

inline void validate(const DatasetConfig& cfg) {
  if (cfg.train_ld.overlaps(cfg.train_sd) || cfg.train_ld.overlaps(cfg.eval) || cfg.train_sd.overlaps(cfg.eval)) {
    throw std::invalid_argument(
        "dataset seed ranges overlap: train/ld, train/sd and eval phantoms must come from disjoint seed ranges");
  }
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0) || !(cfg.sd_alpha > 0.0 && cfg.sd_alpha <= 1.0)) {
    throw std::invalid_argument("dose fractions must lie in (0, 1]");
  }
}

inline Tensor<double> render_low_dose(std::uint64_t seed, const DatasetConfig& cfg) {
  auto ph = make_phantom(seed, cfg.scan.grid, cfg.min_ellipses, cfg.max_ellipses);
  return reconstruct_noisy(ph.hu, cfg.scan, cfg.alpha, derive_seed(seed, kNoiseStream));
}

inline Tensor<double> render_standard_dose(std::uint64_t seed, const DatasetConfig& cfg) {
  auto ph = make_phantom(seed, cfg.scan.grid, cfg.min_ellipses, cfg.max_ellipses);
  if (cfg.sd_noiseless) return reconstruct_clean(ph.hu, cfg.scan);
  return reconstruct_noisy(ph.hu, cfg.scan, cfg.sd_alpha, derive_seed(seed, kNoiseStream));
}

inline Tensor<double> render_clean(std::uint64_t seed, const DatasetConfig& cfg) {
  auto ph = make_phantom(seed, cfg.scan.grid, cfg.min_ellipses, cfg.max_ellipses);
  return reconstruct_clean(ph.hu, cfg.scan);
}

inline nlohmann::json manifest_json(const DatasetConfig& cfg) {
  using nlohmann::json;
  auto range = [](const SeedRange& r) { return json{{"first", r.first}, {"count", r.count}}; };
  return json{
      {"format", "cfcg-dataset"},
      {"version", 1},
      {"grid", cfg.scan.grid},
      {"n_angles", cfg.scan.n_angles},
      {"n_detectors", default_detectors(cfg.scan.grid)},
      {"fov_mm", cfg.scan.fov_mm},
      {"mu_water_per_mm", cfg.scan.mu_water_per_mm},
      {"i0", cfg.scan.i0},
      {"alpha", cfg.alpha},
      {"sd_alpha", cfg.sd_alpha},
      {"sd_noiseless", cfg.sd_noiseless},
      {"min_ellipses", cfg.min_ellipses},
      {"max_ellipses", cfg.max_ellipses},
      {"noise_stream", kNoiseStream},
      {"seeds", {{"train_ld", range(cfg.train_ld)}, {"train_sd", range(cfg.train_sd)}, {"eval", range(cfg.eval)}}},
      {"counts", {{"train_ld", cfg.train_ld.count}, {"train_sd", cfg.train_sd.count}, {"eval_pairs", cfg.eval.count}}},
  };
}

inline DatasetConfig dataset_config_from_manifest(const nlohmann::json& m) {
  DatasetConfig cfg;
  cfg.scan.grid = m.at("grid").get<std::size_t>();
  cfg.scan.n_angles = m.at("n_angles").get<std::size_t>();
  cfg.scan.fov_mm = m.at("fov_mm").get<double>();
  cfg.scan.mu_water_per_mm = m.at("mu_water_per_mm").get<double>();
  cfg.scan.i0 = m.at("i0").get<double>();
  cfg.alpha = m.at("alpha").get<double>();
  cfg.sd_alpha = m.at("sd_alpha").get<double>();
  cfg.sd_noiseless = m.at("sd_noiseless").get<bool>();
  cfg.min_ellipses = m.at("min_ellipses").get<std::size_t>();
  cfg.max_ellipses = m.at("max_ellipses").get<std::size_t>();
  auto range = [](const nlohmann::json& r) {
    return SeedRange{r.at("first").get<std::uint64_t>(), r.at("count").get<std::uint64_t>()};
  };
  const auto& s = m.at("seeds");
  cfg.train_ld = range(s.at("train_ld"));
  cfg.train_sd = range(s.at("train_sd"));
  cfg.eval = range(s.at("eval"));
  return cfg;
}

// Writes train/ld, train/sd (unpaired, disjoint phantoms), eval/pairs
// (clean + noisy from shared phantoms) and manifest.json under `out_dir`.
inline void build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  validate(cfg);
  if (!out_dir.parent_path().empty() && !fs::exists(out_dir.parent_path())) {
    throw std::runtime_error("output directory parent does not exist: " + out_dir.parent_path().string());
  }
  fs::create_directories(out_dir / "train" / "ld");
  fs::create_directories(out_dir / "train" / "sd");
  fs::create_directories(out_dir / "eval" / "pairs");
  const std::size_t n_ld = cfg.train_ld.count, n_sd = cfg.train_sd.count, n_ev = cfg.eval.count;
  parallel_for(n_ld + n_sd + n_ev, [&](std::size_t k) {
    if (k < n_ld) {
      save_tensor(out_dir / "train" / "ld" / indexed_name("ld", k, ".ntsr"),
                  render_low_dose(cfg.train_ld.first + k, cfg));
    } else if (k < n_ld + n_sd) {
      const std::size_t i = k - n_ld;
      save_tensor(out_dir / "train" / "sd" / indexed_name("sd", i, ".ntsr"),
                  render_standard_dose(cfg.train_sd.first + i, cfg));
    } else {
      const std::size_t i = k - n_ld - n_sd;
      const std::uint64_t seed = cfg.eval.first + i;
      auto ph = make_phantom(seed, cfg.scan.grid, cfg.min_ellipses, cfg.max_ellipses);
      save_tensor(out_dir / "eval" / "pairs" / indexed_name("pair", i, "_clean.ntsr"),
                  reconstruct_clean(ph.hu, cfg.scan));
      save_tensor(out_dir / "eval" / "pairs" / indexed_name("pair", i, "_noisy.ntsr"),
                  reconstruct_noisy(ph.hu, cfg.scan, cfg.alpha, derive_seed(seed, kNoiseStream)));
    }
  });
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  os << manifest_json(cfg).dump(2) << "\n";
}

struct EvalPair {
  std::string id;
  Tensor<double> clean;
  Tensor<double> noisy;
};

struct Dataset {
  DatasetConfig config;
  std::vector<Tensor<double>> train_ld;
  std::vector<Tensor<double>> train_sd;
  std::vector<EvalPair> eval;
};

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in dataset directory " + dir.string());
  return nlohmann::json::parse(is);
}

// Loads what build_dataset wrote. Each part can be skipped.
inline Dataset load_dataset(const std::filesystem::path& dir, bool train = true, bool eval = true) {
  Dataset ds;
  ds.config = dataset_config_from_manifest(read_manifest(dir));
  const auto& c = ds.config;
  if (train) {
    for (std::size_t i = 0; i < c.train_ld.count; ++i)
      ds.train_ld.push_back(load_tensor<double>(dir / "train" / "ld" / indexed_name("ld", i, ".ntsr")));
    for (std::size_t i = 0; i < c.train_sd.count; ++i)
      ds.train_sd.push_back(load_tensor<double>(dir / "train" / "sd" / indexed_name("sd", i, ".ntsr")));
  }
  if (eval) {
    for (std::size_t i = 0; i < c.eval.count; ++i) {
      const auto base = dir / "eval" / "pairs";
      ds.eval.push_back({indexed_name("pair", i, ""), load_tensor<double>(base / indexed_name("pair", i, "_clean.ntsr")),
                         load_tensor<double>(base / indexed_name("pair", i, "_noisy.ntsr"))});
    }
  }
  return ds;
}

}  // namespace cfcg::ctsim
