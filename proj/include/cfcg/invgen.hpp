#pragma once

// Invertible generator: L blocks of
//   squeeze -> invertible 1x1 channel mixing -> four-way additive coupling -> unsqueeze
// with an exact analytic inverse.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <utility>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfcg/linalg.hpp"
#include "cfcg/tensor.hpp"

namespace cfcg {

inline constexpr double kMinAbsDeterminant = 1e-8;
inline constexpr double kLeakySlope = 0.2;

class SingularMixingError : public std::domain_error {
 public:
  explicit SingularMixingError(double det)
      : std::domain_error("invertible 1x1 convolution is near-singular: |det W| = " + format(det)),
        abs_det_(std::abs(det)) {}
  double abs_det() const { return abs_det_; }

 private:
  static std::string format(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::scientific << std::abs(v);
    return os.str();
  }
  double abs_det_;
};

// ---------------------------------------------------------------------------
// Squeeze / unsqueeze. Cell order: top-left, top-right, bottom-left,
// bottom-right -> channels 0..3.

namespace detail {

inline std::shared_ptr<const std::vector<std::size_t>> squeeze_index(const Shape& in) {
  const std::size_t h = in.h / 2, w = in.w / 2;
  auto idx = std::make_shared<std::vector<std::size_t>>(in.numel());
  std::size_t k = 0;
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t dy = c / 2, dx = c % 2;
          (*idx)[k++] = (n * in.h + 2 * i + dy) * in.w + 2 * j + dx;
        }
  return idx;
}

inline std::shared_ptr<const std::vector<std::size_t>> unsqueeze_index(const Shape& in) {
  const std::size_t H = in.h * 2, W = in.w * 2;
  auto idx = std::make_shared<std::vector<std::size_t>>(in.numel());
  std::size_t k = 0;
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t c = (y % 2) * 2 + (x % 2);
        (*idx)[k++] = ((n * 4 + c) * in.h + y / 2) * in.w + x / 2;
      }
  return idx;
}

}  // namespace detail

template <class T>
Tensor<T> squeeze(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c != 1) throw ShapeError("squeeze: expected 1 channel, got " + std::to_string(s.c));
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("squeeze: height and width must be even, got " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  return gather(x, Shape{s.n, 4, s.h / 2, s.w / 2}, detail::squeeze_index(s));
}

template <class T>
Tensor<T> unsqueeze(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c != 4) throw ShapeError("unsqueeze: expected 4 channels, got " + std::to_string(s.c));
  return gather(x, Shape{s.n, 1, s.h * 2, s.w * 2}, detail::unsqueeze_index(s));
}

// ---------------------------------------------------------------------------
// Invertible 1x1 convolution

template <class T>
struct InvConv1x1 {
  Tensor<T> weight{Shape{1, 1, 4, 4}};  // W, row-major; y = x W per pixel

  linalg::Mat4 matrix() const {
    linalg::Mat4 m{};
    auto d = weight.data();
    for (std::size_t i = 0; i < 16; ++i) m[i] = static_cast<double>(d[i]);
    return m;
  }
  double determinant() const { return linalg::determinant(matrix()); }
};

template <class T>
Tensor<T> conv1x1_forward(const Tensor<T>& x, const InvConv1x1<T>& layer) {
  if (x.shape().c != 4) throw ShapeError("conv1x1_forward: expected 4 channels, got " + x.shape().str());
  return channel_mix(x, layer.weight);
}

template <class T>
Tensor<T> mixing_inverse(const InvConv1x1<T>& layer) {
  const double det = layer.determinant();
  if (!(std::abs(det) > kMinAbsDeterminant)) throw SingularMixingError(det);
  const auto inv = linalg::inverse(layer.matrix());
  std::vector<T> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<T>(inv[i]);
  return Tensor<T>(Shape{1, 1, 4, 4}, std::move(v));
}

template <class T>
Tensor<T> conv1x1_inverse(const Tensor<T>& y, const InvConv1x1<T>& layer) {
  if (y.shape().c != 4) throw ShapeError("conv1x1_inverse: expected 4 channels, got " + y.shape().str());
  return channel_mix(y, mixing_inverse(layer));
}

// h * w * log|det W|.
template <class T>
double conv1x1_logdet(const InvConv1x1<T>& layer, std::size_t h, std::size_t w) {
  const double det = layer.determinant();
  if (det == 0.0 || !std::isfinite(det)) throw SingularMixingError(det);
  return static_cast<double>(h * w) * std::log(std::abs(det));
}

// ---------------------------------------------------------------------------
// Spectral normalization

template <class T>
struct SpectralNormState {
  std::vector<T> u;  // left singular vector estimate, length out_channels
  std::vector<T> v;  // right singular vector estimate, length in*kh*kw
  T sigma = T(1);    // last estimate

  template <class U>
  SpectralNormState<U> cast() const {
    SpectralNormState<U> s;
    s.u.assign(u.begin(), u.end());
    s.v.assign(v.begin(), v.end());
    s.sigma = static_cast<U>(sigma);
    return s;
  }
};

namespace detail {

template <class T>
void power_iteration_step(std::span<const T> w, std::size_t rows, std::size_t cols, SpectralNormState<T>& st) {
  std::vector<double> v(cols, 0.0), u(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double ui = static_cast<double>(st.u[i]);
    for (std::size_t j = 0; j < cols; ++j) v[j] += static_cast<double>(w[i * cols + j]) * ui;
  }
  linalg::normalize(v);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += static_cast<double>(w[i * cols + j]) * v[j];
    u[i] = acc;
  }
  linalg::normalize(u);
  for (std::size_t i = 0; i < rows; ++i) st.u[i] = static_cast<T>(u[i]);
  for (std::size_t j = 0; j < cols; ++j) st.v[j] = static_cast<T>(v[j]);
}

}  // namespace detail

template <class T, class Rng>
SpectralNormState<T> make_spectral_state(const Tensor<T>& weight, Rng& rng) {
  const std::size_t rows = weight.shape().n, cols = weight.numel() / rows;
  SpectralNormState<T> st;
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> u(rows);
  for (auto& x : u) x = dist(rng);
  linalg::normalize(u);
  st.u.assign(u.begin(), u.end());
  st.v.assign(cols, T(0));
  return st;
}

// sigma_hat = u^T Wmat v from the stored vectors.
template <class T>
double spectral_estimate(const Tensor<T>& weight, const SpectralNormState<T>& st) {
  const std::size_t rows = weight.shape().n, cols = weight.numel() / rows;
  auto w = weight.data();
  double sigma = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += static_cast<double>(w[i * cols + j]) * static_cast<double>(st.v[j]);
    sigma += static_cast<double>(st.u[i]) * acc;
  }
  return sigma;
}

// Runs `iters` power-iteration steps without producing a normalized weight.
template <class T>
void spectral_warmup(const Tensor<T>& weight, SpectralNormState<T>& st, std::size_t iters) {
  const std::size_t rows = weight.shape().n, cols = weight.numel() / rows;
  for (std::size_t i = 0; i < iters; ++i) detail::power_iteration_step(weight.data(), rows, cols, st);
  st.sigma = static_cast<T>(spectral_estimate(weight, st));
}

// weight / sigma_hat with sigma_hat = u^T W v. With `update`, one
// power-iteration step refreshes (u, v) first (training); otherwise the stored
// vectors are used as-is (inference), so repeated calls are reproducible.
template <class T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState<T>& st, bool update) {
  const std::size_t rows = weight.shape().n, cols = weight.numel() / rows;
  if (st.u.size() != rows || st.v.size() != cols) {
    throw ShapeError("spectral_normalize: state sized for " + std::to_string(st.u.size()) + "x" +
                     std::to_string(st.v.size()) + ", weight is " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  if (update) detail::power_iteration_step(weight.data(), rows, cols, st);
  T sigma{};
  auto out = divide_by_spectral_estimate<T>(weight, st.u, st.v, &sigma);
  st.sigma = sigma;
  return out;
}

// ---------------------------------------------------------------------------
// Coupling network: 3x3 (3->c, SN) -> LReLU -> 1x1 (c->c, SN) -> LReLU ->
// 3x3 (c->1, zero-initialized).

template <class T>
struct CouplingNet {
  Tensor<T> w1, b1;  // (c,3,3,3), (c)
  Tensor<T> w2, b2;  // (c,c,1,1), (c)
  Tensor<T> w3, b3;  // (1,c,3,3), (1)
  SpectralNormState<T> sn1, sn2;

  std::size_t latent() const { return w1.shape().n; }

  std::vector<Tensor<T>> parameters() const { return {w1, b1, w2, b2, w3, b3}; }

  template <class U>
  CouplingNet<U> cast() const {
    return CouplingNet<U>{w1.template cast<U>(), b1.template cast<U>(), w2.template cast<U>(),
                          b2.template cast<U>(), w3.template cast<U>(), b3.template cast<U>(),
                          sn1.template cast<U>(), sn2.template cast<U>()};
  }
};

inline std::size_t coupling_net_parameter_count(std::size_t c) {
  return (3 * 9 * c + c) + (c * c + c) + (c * 9 + 1);
}

template <class T, class Rng>
CouplingNet<T> make_coupling_net(std::size_t c, Rng& rng, std::size_t warmup_iters = 50) {
  auto uniform = [&rng](Shape s, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    return Tensor<T>::uniform(s, rng, static_cast<T>(-bound), static_cast<T>(bound));
  };
  CouplingNet<T> net;
  net.w1 = uniform(Shape{c, 3, 3, 3}, 27.0);
  net.b1 = uniform(Shape{1, c, 1, 1}, 27.0);
  net.w2 = uniform(Shape{c, c, 1, 1}, static_cast<double>(c));
  net.b2 = uniform(Shape{1, c, 1, 1}, static_cast<double>(c));
  net.w3 = Tensor<T>::zeros(Shape{1, c, 3, 3});
  net.b3 = Tensor<T>::zeros(Shape{1, 1, 1, 1});
  net.sn1 = make_spectral_state(net.w1, rng);
  net.sn2 = make_spectral_state(net.w2, rng);
  spectral_warmup(net.w1, net.sn1, warmup_iters);
  spectral_warmup(net.w2, net.sn2, warmup_iters);
  return net;
}

template <class T>
Tensor<T> coupling_net_forward(const Tensor<T>& x, CouplingNet<T>& net, NormMode mode) {
  if (x.shape().c != 3) throw ShapeError("coupling net expects 3 input channels, got " + x.shape().str());
  const bool update = mode == NormMode::train;
  auto w1 = spectral_normalize(net.w1, net.sn1, update);
  auto w2 = spectral_normalize(net.w2, net.sn2, update);
  auto h = leaky_relu(conv2d<T>(x, w1, net.b1, {1, 1}), T(kLeakySlope));
  h = leaky_relu(conv2d<T>(h, w2, net.b2, {1, 0}), T(kLeakySlope));
  return conv2d<T>(h, net.w3, net.b3, {1, 1});
}

// ---------------------------------------------------------------------------
// Stable additive coupling over four channel maps.

template <class T>
using Quad = std::array<Tensor<T>, 4>;

// F(i, conditioning) -> update for channel i; conditioning is (N,3,h,w).
template <class T>
using CouplingFn = std::function<Tensor<T>(std::size_t, const Tensor<T>&)>;

namespace detail {
template <class T>
void check_quad(const Quad<T>& q, const char* op) {
  for (const auto& t : q) {
    if (!(t.shape() == q[0].shape()) || t.shape().c != 1) {
      throw ShapeError(std::string(op) + ": the four inputs must be equal-shape single-channel maps, got " +
                       t.shape().str() + " vs " + q[0].shape().str());
    }
  }
}
}  // namespace detail

// y1 = x1 + F1([x2,x3,x4]); y2 = x2 + F2([y1,x3,x4]);
// y3 = x3 + F3([y1,y2,x4]); y4 = x4 + F4([y1,y2,y3]).
template <class T>
Quad<T> coupling_forward(const Quad<T>& x, const CouplingFn<T>& f) {
  detail::check_quad(x, "coupling_forward");
  Quad<T> y;
  y[0] = add(x[0], f(0, concat_channels<T>({x[1], x[2], x[3]})));
  y[1] = add(x[1], f(1, concat_channels<T>({y[0], x[2], x[3]})));
  y[2] = add(x[2], f(2, concat_channels<T>({y[0], y[1], x[3]})));
  y[3] = add(x[3], f(3, concat_channels<T>({y[0], y[1], y[2]})));
  return y;
}

// Reverse-order subtraction.
template <class T>
Quad<T> coupling_inverse(const Quad<T>& y, const CouplingFn<T>& f) {
  detail::check_quad(y, "coupling_inverse");
  Quad<T> x;
  x[3] = sub(y[3], f(3, concat_channels<T>({y[0], y[1], y[2]})));
  x[2] = sub(y[2], f(2, concat_channels<T>({y[0], y[1], x[3]})));
  x[1] = sub(y[1], f(1, concat_channels<T>({y[0], x[2], x[3]})));
  x[0] = sub(y[0], f(0, concat_channels<T>({x[1], x[2], x[3]})));
  return x;
}

template <class T>
Quad<T> split_quad(const Tensor<T>& x) {
  if (x.shape().c != 4) throw ShapeError("expected 4 channels, got " + x.shape().str());
  return {slice_channels(x, 0, 1), slice_channels(x, 1, 1), slice_channels(x, 2, 1), slice_channels(x, 3, 1)};
}

template <class T>
Tensor<T> merge_quad(const Quad<T>& q) {
  return concat_channels<T>({q[0], q[1], q[2], q[3]});
}

// ---------------------------------------------------------------------------
// Generator

template <class T>
struct InvertibleBlock {
  InvConv1x1<T> mix;
  std::array<CouplingNet<T>, 4> nets;

  CouplingFn<T> coupling_fn(NormMode mode) {
    return [this, mode](std::size_t i, const Tensor<T>& cond) { return coupling_net_forward(cond, nets[i], mode); };
  }
};

struct GeneratorConfig {
  std::size_t blocks = 4;        // L
  std::size_t latent = 256;      // c
  std::size_t wavelet_levels = 6;  // J, carried for checkpoints
  double mix_init_noise = 0.01;  // W = Q(I + noise * N(0,1)) from QR
  std::uint64_t seed = 0;
};

template <class T>
struct GeneratorParams {
  GeneratorConfig config;
  std::vector<InvertibleBlock<T>> blocks;

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& b : blocks) {
      out.push_back(b.mix.weight);
      for (const auto& n : b.nets)
        for (auto& p : n.parameters()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

  template <class U>
  GeneratorParams<U> cast() const {
    GeneratorParams<U> g;
    g.config = config;
    for (const auto& b : blocks) {
      InvertibleBlock<U> nb;
      nb.mix.weight = b.mix.weight.template cast<U>();
      for (std::size_t i = 0; i < 4; ++i) nb.nets[i] = b.nets[i].template cast<U>();
      g.blocks.push_back(std::move(nb));
    }
    return g;
  }

  // Deep copy (parameters are shared handles otherwise).
  GeneratorParams clone() const { return cast<T>(); }
};

// Closed-form trainable-parameter count: L * (16 + 4 * net(c)).
inline std::size_t generator_parameter_count(std::size_t blocks, std::size_t latent) {
  return blocks * (16 + 4 * coupling_net_parameter_count(latent));
}

template <class T>
GeneratorParams<T> make_generator(const GeneratorConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  GeneratorParams<T> g;
  g.config = cfg;
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    InvertibleBlock<T> block;
    linalg::Mat4 a = linalg::identity4();
    for (auto& x : a) x += cfg.mix_init_noise * dist(rng);
    const auto q = linalg::orthogonal_factor(a);
    std::vector<T> w(16);
    for (std::size_t i = 0; i < 16; ++i) w[i] = static_cast<T>(q[i]);
    block.mix.weight = Tensor<T>(Shape{1, 1, 4, 4}, std::move(w));
    for (auto& net : block.nets) net = make_coupling_net<T>(cfg.latent, rng);
    g.blocks.push_back(std::move(block));
  }
  return g;
}

// Replaces every parameter with a generic random draw: W = I + 0.3 N(0,1)
// (redrawn until |det W| > 0.1) and all coupling layers, the last one
// included, uniform in +-gain/sqrt(fan_in). Spectral estimates are re-warmed.
template <class T, class Rng>
void randomize_generator(GeneratorParams<T>& g, Rng& rng, double gain = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& b : g.blocks) {
    linalg::Mat4 a{};
    do {
      a = linalg::identity4();
      for (auto& x : a) x += 0.3 * normal(rng);
    } while (std::abs(linalg::determinant(a)) <= 0.1);
    auto w = b.mix.weight.mutable_data();
    for (std::size_t i = 0; i < 16; ++i) w[i] = static_cast<T>(a[i]);
    for (auto& net : b.nets) {
      const double c = static_cast<double>(net.latent());
      const std::array<std::pair<Tensor<T>*, double>, 6> layers{
          {{&net.w1, 27.0}, {&net.b1, 27.0}, {&net.w2, c}, {&net.b2, c}, {&net.w3, 9.0 * c}, {&net.b3, 9.0 * c}}};
      for (auto& [p, fan_in] : layers) {
        std::uniform_real_distribution<double> u(-gain / std::sqrt(fan_in), gain / std::sqrt(fan_in));
        for (auto& x : p->mutable_data()) x = static_cast<T>(u(rng));
      }
      spectral_warmup(net.w1, net.sn1, 50);
      spectral_warmup(net.w2, net.sn2, 50);
    }
  }
}

// Replaces every W by `w` (tests, seeded faults).
template <class T>
void set_mixing(GeneratorParams<T>& g, const linalg::Mat4& w) {
  for (auto& b : g.blocks) {
    auto d = b.mix.weight.mutable_data();
    for (std::size_t i = 0; i < 16; ++i) d[i] = static_cast<T>(w[i]);
  }
}

template <class T>
Tensor<T> generator_forward(const Tensor<T>& r, GeneratorParams<T>& g, NormMode mode = NormMode::eval) {
  if (r.shape().c != 1) throw ShapeError("generator expects single-channel input, got " + r.shape().str());
  Tensor<T> x = r;
  for (auto& block : g.blocks) {
    auto z = conv1x1_forward(squeeze(x), block.mix);
    auto y = coupling_forward(split_quad(z), block.coupling_fn(mode));
    x = unsqueeze(merge_quad(y));
  }
  return x;
}

// Exact inverse; always uses the frozen spectral estimates.
template <class T>
Tensor<T> generator_inverse(const Tensor<T>& s, GeneratorParams<T>& g) {
  if (s.shape().c != 1) throw ShapeError("generator expects single-channel input, got " + s.shape().str());
  Tensor<T> y = s;
  for (auto it = g.blocks.rbegin(); it != g.blocks.rend(); ++it) {
    auto q = coupling_inverse(split_quad(squeeze(y)), it->coupling_fn(NormMode::eval));
    y = unsqueeze(conv1x1_inverse(merge_quad(q), it->mix));
  }
  return y;
}

// Sum over blocks of (h*w) * log|det W_i| for an input of size H x W; the
// coupling layers are volume-preserving.
template <class T>
double generator_logdet(const GeneratorParams<T>& g, std::size_t height, std::size_t width) {
  double total = 0.0;
  for (const auto& b : g.blocks) total += conv1x1_logdet(b.mix, height / 2, width / 2);
  return total;
}

// Upper bound on the generator's Lipschitz constant:
//   prod_blocks sigma_max(W_i) * prod_j (1 + L_j),
// where L_j bounds coupling net j by the product of its layers' operator-norm
// bounds sqrt(kh*kw) * sigma_max(reshaped weight). LeakyReLU is 1-Lipschitz.
// The spectrally normalized layers use the normalized weight.
template <class T>
double coupling_net_lipschitz(const CouplingNet<T>& net) {
  auto layer = [](const Tensor<T>& w, double divisor) {
    const Shape s = w.shape();
    const double sigma = linalg::top_singular_value<T>(w.data(), s.n, s.c * s.h * s.w);
    return std::sqrt(static_cast<double>(s.h * s.w)) * sigma / divisor;
  };
  return layer(net.w1, spectral_estimate(net.w1, net.sn1)) * layer(net.w2, spectral_estimate(net.w2, net.sn2)) *
         layer(net.w3, 1.0);
}

template <class T>
double lipschitz_bound(const GeneratorParams<T>& g) {
  double bound = 1.0;
  for (const auto& b : g.blocks) {
    bound *= linalg::top_singular_value<T>(b.mix.weight.data(), 4, 4);
    for (const auto& net : b.nets) bound *= 1.0 + coupling_net_lipschitz(net);
  }
  return bound;
}

}  // namespace cfcg
