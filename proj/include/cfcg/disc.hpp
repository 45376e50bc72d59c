#pragma once

// PatchGAN discriminator on wavelet residuals, with least-squares GAN losses.
//
//   conv(1->w1, k4, s2)            -> LReLU
//   conv(w1->w2, k4, s2) -> BN     -> LReLU
//   conv(w2->w3, k4, s1) -> BN     -> LReLU
//   conv(w3->1,  k4, s1)           (raw patch scores, no sigmoid)

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfcg/tensor.hpp"

namespace cfcg {

struct DiscriminatorConfig {
  std::array<std::size_t, 3> widths{64, 128, 256};
  std::size_t kernel = 4;
  std::size_t pad = 1;
  double init_std = 0.02;  // N(0, std) conv weights; 0 gives all-zero params
  std::uint64_t seed = 0;
};

inline constexpr std::array<std::size_t, 4> kDiscStrides{2, 2, 1, 1};

template <class T>
struct DiscriminatorParams {
  DiscriminatorConfig config;
  std::array<Tensor<T>, 4> weight;
  std::array<Tensor<T>, 4> bias;
  std::array<Tensor<T>, 2> bn_gamma;  // layers 2 and 3
  std::array<Tensor<T>, 2> bn_beta;
  std::array<BatchNormState<T>, 2> bn_state;

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < 4; ++i) {
      out.push_back(weight[i]);
      out.push_back(bias[i]);
      if (i == 1 || i == 2) {
        out.push_back(bn_gamma[i - 1]);
        out.push_back(bn_beta[i - 1]);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }
};

inline std::size_t discriminator_parameter_count(const std::array<std::size_t, 3>& w, std::size_t k = 4) {
  const std::size_t kk = k * k;
  return (kk * 1 * w[0] + w[0]) + (kk * w[0] * w[1] + w[1] + 2 * w[1]) + (kk * w[1] * w[2] + w[2] + 2 * w[2]) +
         (kk * w[2] + 1);
}

template <class T>
DiscriminatorParams<T> make_discriminator(const DiscriminatorConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  DiscriminatorParams<T> d;
  d.config = cfg;
  const std::array<std::size_t, 5> ch{1, cfg.widths[0], cfg.widths[1], cfg.widths[2], 1};
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape ws{ch[i + 1], ch[i], cfg.kernel, cfg.kernel};
    d.weight[i] = cfg.init_std > 0 ? Tensor<T>::randn(ws, rng, static_cast<T>(cfg.init_std)) : Tensor<T>::zeros(ws);
    d.bias[i] = Tensor<T>::zeros(Shape{1, ch[i + 1], 1, 1});
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const std::size_t c = cfg.widths[j + 1];
    d.bn_gamma[j] = Tensor<T>(Shape{1, c, 1, 1}, T(1));
    d.bn_beta[j] = Tensor<T>::zeros(Shape{1, c, 1, 1});
    d.bn_state[j] = BatchNormState<T>(c);
  }
  return d;
}

// Output side length for an input side, or 0 if the chain collapses.
inline std::size_t patch_output_size(std::size_t side, std::size_t kernel = 4, std::size_t pad = 1) {
  for (std::size_t s : kDiscStrides) {
    side = conv_output_size(side, kernel, s, pad);
    if (side == 0) return 0;
  }
  return side;
}

inline std::size_t min_discriminator_input(std::size_t kernel = 4, std::size_t pad = 1) {
  std::size_t side = 1;
  while (patch_output_size(side, kernel, pad) == 0) ++side;
  return side;
}

template <class T>
Tensor<T> discriminate(const Tensor<T>& r, DiscriminatorParams<T>& d, NormMode mode) {
  const Shape s = r.shape();
  if (s.c != 1) throw ShapeError("discriminate: expected single-channel input, got " + s.str());
  const auto& cfg = d.config;
  if (patch_output_size(s.h, cfg.kernel, cfg.pad) == 0 || patch_output_size(s.w, cfg.kernel, cfg.pad) == 0) {
    throw ShapeError("discriminate: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " too small; minimum side is " + std::to_string(min_discriminator_input(cfg.kernel, cfg.pad)));
  }
  const T slope = T(0.2);
  auto h = leaky_relu(conv2d<T>(r, d.weight[0], d.bias[0], {kDiscStrides[0], cfg.pad}), slope);
  h = conv2d<T>(h, d.weight[1], d.bias[1], {kDiscStrides[1], cfg.pad});
  h = leaky_relu(batch_norm(h, d.bn_gamma[0], d.bn_beta[0], d.bn_state[0], mode), slope);
  h = conv2d<T>(h, d.weight[2], d.bias[2], {kDiscStrides[2], cfg.pad});
  h = leaky_relu(batch_norm(h, d.bn_gamma[1], d.bn_beta[1], d.bn_state[1], mode), slope);
  return conv2d<T>(h, d.weight[3], d.bias[3], {kDiscStrides[3], cfg.pad});
}

// 1/2 mean((real - 1)^2) + 1/2 mean(fake^2)
template <class T>
Tensor<T> lsgan_d_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
  return add(scale(mean(square(add_scalar(real_scores, T(-1)))), T(0.5)), scale(mean(square(fake_scores)), T(0.5)));
}

// 1/2 mean((fake - 1)^2)
template <class T>
Tensor<T> lsgan_g_loss(const Tensor<T>& fake_scores) {
  return scale(mean(square(add_scalar(fake_scores, T(-1)))), T(0.5));
}

}  // namespace cfcg
