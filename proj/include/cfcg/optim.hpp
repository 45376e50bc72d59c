#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cfcg/tensor.hpp"

namespace cfcg {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, T(0)), v(n, T(0)) {}
};

// One bias-corrected ADAM update of `param` in place. A missing gradient is
// treated as zero (moments still decay).
template <class T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamHyper& hp = {}) {
  if (state.m.size() != param.size() || state.v.size() != param.size() ||
      (!grad.empty() && grad.size() != param.size())) {
    throw ShapeError("adam_step: parameter/gradient/state sizes disagree");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad.empty() ? T(0) : grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double mhat = static_cast<double>(state.m[i]) / bc1;
    const double vhat = static_cast<double>(state.v[i]) / bc2;
    param[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + hp.eps));
  }
}

// ADAM over a fixed, ordered list of parameter tensors.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Tensor<T>> params, AdamHyper hp = {}) : params_(std::move(params)), hp_(hp) {
    for (const auto& p : params_) states_.emplace_back(p.numel());
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adam_step<T>(params_[i].mutable_data(), params_[i].grad(), states_[i], lr, hp_);
    }
  }

  std::vector<AdamState<T>>& states() { return states_; }
  const std::vector<AdamState<T>>& states() const { return states_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  const AdamHyper& hyper() const { return hp_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<AdamState<T>> states_;
  AdamHyper hp_;
};

}  // namespace cfcg
