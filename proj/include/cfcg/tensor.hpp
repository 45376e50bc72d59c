#pragma once

// Dense 4-D tensors with tape-based reverse-mode differentiation.
//
// Every value is an NCHW array. Operations executed while a Tape is active
// (see TapeGuard) and touching at least one requires_grad input append a
// backward closure to the tape; Tape::backward replays them in exact reverse
// recording order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cfcg {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  template <class Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
    return Tensor(shape, std::move(v));
  }

  template <class Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> v(shape.numel());
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(shape, std::move(v));
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // In-place access is reserved for leaf parameters (optimizers, loaders).
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }

  T operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = node_->shape;
    return node_->data[((n * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values with no tape history.
  Tensor detach() const { return Tensor(shape(), node_->data); }

  Tensor clone() const {
    Tensor t(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(numel());
    std::transform(node_->data.begin(), node_->data.end(), v.begin(),
                   [](T x) { return static_cast<U>(x); });
    return Tensor<U>(shape(), std::move(v));
  }

  TensorNode<T>& node() const { return *node_; }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { entries_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
  // consumed.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " + loss.shape().str());
    }
    auto& node = loss.node();
    if (!node.requires_grad) {
      throw std::logic_error("backward() on a loss that does not depend on any requires_grad tensor");
    }
    node.ensure_grad();
    node.grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
};

namespace detail {
template <class T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <class T>
Tape<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

// Makes `tape` the recording target for the current thread until destroyed.
template <class T>
class TapeGuard {
 public:
  explicit TapeGuard(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  ~TapeGuard() { detail::active_tape_slot<T>() = previous_; }
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording (inference paths).
template <class T>
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::active_tape_slot<T>()) { detail::active_tape_slot<T>() = nullptr; }
  ~NoGradGuard() { detail::active_tape_slot<T>() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>* previous_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) throw std::logic_error("backward() called with no active tape");
  tape->backward(loss);
}

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  for (const auto* t : inputs)
    if (t != nullptr && t->requires_grad()) return true;
  return false;
}

// Returns the tape to record on, or nullptr when no gradient is needed.
template <class T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr || !any_requires_grad<T>(inputs)) return nullptr;
  return tape;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a, &b})) {
    r.set_requires_grad(true);
    tape->record([a, b, r]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      for (const auto* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto& ig = in->node();
        ig.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ig.grad[i] += g[i];
      }
    });
  }
  return r;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a, &b})) {
    r.set_requires_grad(true);
    tape->record([a, b, r]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      if (a.requires_grad()) {
        auto& ag = a.node();
        ag.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag.grad[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& bg = b.node();
        bg.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg.grad[i] -= g[i];
      }
    });
  }
  return r;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor<T> r(a.shape(), std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a, &b})) {
    r.set_requires_grad(true);
    tape->record([a, b, r]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto& ag = a.node();
        ag.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag.grad[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto& bg = b.node();
        bg.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg.grad[i] += g[i] * x[i];
      }
    });
  }
  return r;
}

// Generic unary map with derivative expressed in terms of the input value.
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor<T> r(a.shape(), std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a})) {
    r.set_requires_grad(true);
    tape->record([a, r, df]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto x = a.data();
      auto& ag = a.node();
      ag.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag.grad[i] += g[i] * df(x[i]);
    });
  }
  return r;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T) { return T(1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// x if x >= 0 else slope * x; derivative at 0 taken as 1.
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary(
      a, [slope](T x) { return x >= T(0) ? x : slope * x; },
      [slope](T x) { return x >= T(0) ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.data()) acc += x;
  Tensor<T> r = Tensor<T>::scalar(acc);
  if (auto* tape = detail::recording_tape<T>({&a})) {
    r.set_requires_grad(true);
    tape->record([a, r]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto& ag = a.node();
      ag.ensure_grad();
      for (auto& v : ag.grad) v += g[0];
    });
  }
  return r;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape s = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + ps.str() + " vs " + s.str());
    }
    channels += ps.c;
  }
  Shape os{s.n, channels, s.h, s.w};
  std::vector<T> out(os.numel());
  const std::size_t plane = s.plane();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::size_t n = 0; n < s.n; ++n) {
      auto src = p.data().subspan(n * p.shape().c * plane, p.shape().c * plane);
      std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>((n * channels + off) * plane));
    }
    off += p.shape().c;
  }
  Tensor<T> r(os, std::move(out));
  Tape<T>* tape = active_tape<T>();
  bool need = false;
  for (const auto& p : parts) need = need || p.requires_grad();
  if (tape != nullptr && need) {
    r.set_requires_grad(true);
    tape->record([parts, offsets, r, channels, plane]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        if (!p.requires_grad()) continue;
        auto& pg = p.node();
        pg.ensure_grad();
        const std::size_t pc = p.shape().c;
        for (std::size_t n = 0; n < p.shape().n; ++n)
          for (std::size_t i = 0; i < pc * plane; ++i)
            pg.grad[n * pc * plane + i] += g[(n * channels + offsets[k]) * plane + i];
      }
    });
  }
  return r;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t start, std::size_t count) {
  const Shape s = a.shape();
  if (start + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") exceeds channel dimension " + std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  Shape os{s.n, count, s.h, s.w};
  std::vector<T> out(os.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = a.data().subspan((n * s.c + start) * plane, count * plane);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(n * count * plane));
  }
  Tensor<T> r(os, std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a})) {
    r.set_requires_grad(true);
    tape->record([a, r, start, count, plane]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto& ag = a.node();
      ag.ensure_grad();
      const Shape s = a.shape();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < count * plane; ++i)
          ag.grad[(n * s.c + start) * plane + i] += g[n * count * plane + i];
    });
  }
  return r;
}

// Fixed permutation of elements: out[i] = in[index[i]]. Shared by the
// squeeze/unsqueeze rearrangements.
template <class T>
Tensor<T> gather(const Tensor<T>& a, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index) {
  if (index->size() != out_shape.numel()) throw ShapeError("gather: index length mismatch");
  std::vector<T> out(out_shape.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(*index)[i]];
  Tensor<T> r(out_shape, std::move(out));
  if (auto* tape = detail::recording_tape<T>({&a})) {
    r.set_requires_grad(true);
    tape->record([a, r, index]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto& ag = a.node();
      ag.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ag.grad[(*index)[i]] += g[i];
    });
  }
  return r;
}

// Per-pixel channel mixing y[n,:,p] = x[n,:,p] * W with W a (1,1,C,C) tensor.
template <class T>
Tensor<T> channel_mix(const Tensor<T>& x, const Tensor<T>& mix) {
  const Shape s = x.shape();
  if (mix.shape().n != 1 || mix.shape().c != 1 || mix.shape().h != s.c || mix.shape().w != s.c) {
    throw ShapeError("channel_mix: matrix shape " + mix.shape().str() + " incompatible with " +
                     std::to_string(s.c) + " input channels");
  }
  const std::size_t C = s.c, P = s.plane();
  std::vector<T> out(s.numel(), T(0));
  auto xd = x.data(), wd = mix.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t co = 0; co < C; ++co) {
      T* o = out.data() + (n * C + co) * P;
      for (std::size_t k = 0; k < C; ++k) {
        const T wk = wd[k * C + co];
        const T* xi = xd.data() + (n * C + k) * P;
        for (std::size_t p = 0; p < P; ++p) o[p] += xi[p] * wk;
      }
    }
  Tensor<T> r(s, std::move(out));
  if (auto* tape = detail::recording_tape<T>({&x, &mix})) {
    r.set_requires_grad(true);
    tape->record([x, mix, r, C, P]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      const std::size_t N = x.shape().n;
      auto xd = x.data(), wd = mix.data();
      if (x.requires_grad()) {
        auto& xg = x.node();
        xg.ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < C; ++k) {
            T* gi = xg.grad.data() + (n * C + k) * P;
            for (std::size_t co = 0; co < C; ++co) {
              const T wk = wd[k * C + co];
              const T* go = g.data() + (n * C + co) * P;
              for (std::size_t p = 0; p < P; ++p) gi[p] += go[p] * wk;
            }
          }
      }
      if (mix.requires_grad()) {
        auto& wg = mix.node();
        wg.ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < C; ++k)
            for (std::size_t co = 0; co < C; ++co) {
              const T* xi = xd.data() + (n * C + k) * P;
              const T* go = g.data() + (n * C + co) * P;
              T acc = T(0);
              for (std::size_t p = 0; p < P; ++p) acc += xi[p] * go[p];
              wg.grad[k * C + co] += acc;
            }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

inline std::size_t conv_output_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) return 0;
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds one image (C,H,W) into a (C*kh*kw, Ho*Wo) row-major matrix.
template <class T>
void im2col(const T* img, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* cols) {
  const std::size_t cols_per_row = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * cols_per_row;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oh * Wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = img + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) ? T(0) : src[iw];
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo, T* img) {
  const std::size_t cols_per_row = Ho * Wo;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * cols_per_row;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
          T* dst = img + (c * H + static_cast<std::size_t>(ih)) * W;
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(W)) dst[iw] += row[oh * Wo + ow];
          }
        }
      }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 Conv2dSpec spec = {}) {
  const Shape is = input.shape(), ws = weight.shape();
  if (ws.c != is.c) {
    throw ShapeError("conv2d: weight in_channels " + std::to_string(ws.c) + " != input channels " +
                     std::to_string(is.c));
  }
  if (spec.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (bias && bias->numel() != ws.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias->numel()) + " != out_channels " +
                     std::to_string(ws.n));
  }
  const std::size_t Ho = conv_output_size(is.h, ws.h, spec.stride, spec.pad);
  const std::size_t Wo = conv_output_size(is.w, ws.w, spec.stride, spec.pad);
  if (Ho == 0 || Wo == 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(ws.h) + "x" + std::to_string(ws.w) +
                     " larger than padded input height/width " + std::to_string(is.h + 2 * spec.pad) + "x" +
                     std::to_string(is.w + 2 * spec.pad));
  }
  const std::size_t O = ws.n, K = ws.c * ws.h * ws.w, P = Ho * Wo;
  const Shape os{is.n, O, Ho, Wo};
  const bool direct = ws.h == 1 && ws.w == 1 && spec.stride == 1 && spec.pad == 0;

  using Mat = detail::RowMatrix<T>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;

  auto cols = std::make_shared<std::vector<T>>(direct ? 0 : is.n * K * P);
  std::vector<T> out(os.numel());
  CMap wm(weight.data().data(), O, K);
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* img = input.data().data() + n * is.c * is.plane();
    const T* colp = img;
    if (!direct) {
      detail::im2col(img, is.c, is.h, is.w, ws.h, ws.w, spec.stride, spec.pad, Ho, Wo, cols->data() + n * K * P);
      colp = cols->data() + n * K * P;
    }
    MMap om(out.data() + n * O * P, O, P);
    om.noalias() = wm * CMap(colp, K, P);
    if (bias) {
      auto b = bias->data();
      for (std::size_t o = 0; o < O; ++o) om.row(o).array() += b[o];
    }
  }
  Tensor<T> r(os, std::move(out));

  const Tensor<T>* bias_ptr = bias ? &*bias : nullptr;
  if (auto* tape = detail::recording_tape<T>({&input, &weight, bias_ptr})) {
    r.set_requires_grad(true);
    tape->record([input, weight, bias, r, cols, spec, direct, K, P, Ho, Wo]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      const Shape is = input.shape(), ws = weight.shape();
      const std::size_t O = ws.n;
      CMap wm(weight.data().data(), O, K);
      if (weight.requires_grad()) weight.node().ensure_grad();
      if (input.requires_grad()) input.node().ensure_grad();
      std::vector<T> dcols(direct ? 0 : K * P);
      for (std::size_t n = 0; n < is.n; ++n) {
        CMap gm(g.data() + n * O * P, O, P);
        const T* colp = direct ? input.data().data() + n * is.c * is.plane() : cols->data() + n * K * P;
        if (weight.requires_grad()) {
          MMap dw(weight.node().grad.data(), O, K);
          dw.noalias() += gm * CMap(colp, K, P).transpose();
        }
        if (input.requires_grad()) {
          T* dimg = input.node().grad.data() + n * is.c * is.plane();
          if (direct) {
            MMap di(dimg, K, P);
            di.noalias() += wm.transpose() * gm;
          } else {
            MMap dc(dcols.data(), K, P);
            dc.noalias() = wm.transpose() * gm;
            detail::col2im_add(dcols.data(), is.c, is.h, is.w, ws.h, ws.w, spec.stride, spec.pad, Ho, Wo, dimg);
          }
        }
      }
      if (bias && bias->requires_grad()) {
        auto& bg = bias->node();
        bg.ensure_grad();
        for (std::size_t n = 0; n < is.n; ++n)
          for (std::size_t o = 0; o < O; ++o) {
            const T* row = g.data() + (n * O + o) * P;
            T acc = T(0);
            for (std::size_t p = 0; p < P; ++p) acc += row[p];
            bg.grad[o] += acc;
          }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class NormMode { train, eval };

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Per-channel normalization followed by learnable scale (gamma) and shift
// (beta), both (1,C,1,1). Train mode uses batch statistics (biased variance)
// and updates the running estimates (unbiased variance).
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     NormMode mode) {
  const Shape s = x.shape();
  if (state.running_mean.size() != s.c || gamma.numel() != s.c || beta.numel() != s.c) {
    throw ShapeError("batch_norm: state has " + std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(s.c));
  }
  const std::size_t C = s.c, P = s.plane(), count = s.n * P;
  std::vector<T> mean(C), inv_std(C);
  auto xd = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == NormMode::train) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < P; ++p) acc += xd[(n * C + c) * P + p];
      const T mu = acc / static_cast<T>(count);
      T var = T(0);
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < P; ++p) {
          const T d = xd[(n * C + c) * P + p] - mu;
          var += d * d;
        }
      const T biased = var / static_cast<T>(count);
      const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : biased;
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(biased + state.eps);
      state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(s.numel());
  std::vector<T> out(s.numel());
  auto gd = gamma.data(), bd = beta.data();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = (n * C + c) * P + p;
        (*xhat)[i] = (xd[i] - mean[c]) * inv_std[c];
        out[i] = gd[c] * (*xhat)[i] + bd[c];
      }
  Tensor<T> r(s, std::move(out));
  if (auto* tape = detail::recording_tape<T>({&x, &gamma, &beta})) {
    r.set_requires_grad(true);
    tape->record([x, gamma, beta, r, xhat, inv_std, mode, C, P, count]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      const std::size_t N = x.shape().n;
      auto gd = gamma.data();
      std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < P; ++p) {
            const std::size_t i = (n * C + c) * P + p;
            dgamma[c] += g[i] * (*xhat)[i];
            dbeta[c] += g[i];
          }
      if (gamma.requires_grad()) {
        auto& gg = gamma.node();
        gg.ensure_grad();
        for (std::size_t c = 0; c < C; ++c) gg.grad[c] += dgamma[c];
      }
      if (beta.requires_grad()) {
        auto& bg = beta.node();
        bg.ensure_grad();
        for (std::size_t c = 0; c < C; ++c) bg.grad[c] += dbeta[c];
      }
      if (x.requires_grad()) {
        auto& xg = x.node();
        xg.ensure_grad();
        const T m = static_cast<T>(count);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) {
              const std::size_t i = (n * C + c) * P + p;
              if (mode == NormMode::train) {
                xg.grad[i] += gd[c] * inv_std[c] / m * (m * g[i] - dbeta[c] - (*xhat)[i] * dgamma[c]);
              } else {
                xg.grad[i] += gd[c] * inv_std[c] * g[i];
              }
            }
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Spectral normalization as a differentiable op.

// Returns weight / sigma with sigma = u^T Wmat v, where Wmat is the weight
// reshaped to (out, in*kh*kw) and u, v are held constant (no gradient).
template <class T>
Tensor<T> divide_by_spectral_estimate(const Tensor<T>& weight, std::span<const T> u, std::span<const T> v,
                                      T* sigma_out = nullptr) {
  const std::size_t O = weight.shape().n, K = weight.numel() / std::max<std::size_t>(O, 1);
  if (u.size() != O || v.size() != K) throw ShapeError("spectral normalization: singular vector size mismatch");
  auto wd = weight.data();
  T sigma = T(0);
  for (std::size_t o = 0; o < O; ++o) {
    T row = T(0);
    for (std::size_t k = 0; k < K; ++k) row += wd[o * K + k] * v[k];
    sigma += u[o] * row;
  }
  if (sigma_out != nullptr) *sigma_out = sigma;
  if (!(std::abs(sigma) > T(0))) throw std::domain_error("spectral normalization: zero singular value estimate");
  std::vector<T> out(wd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wd[i] / sigma;
  Tensor<T> r(weight.shape(), std::move(out));
  if (auto* tape = detail::recording_tape<T>({&weight})) {
    r.set_requires_grad(true);
    std::vector<T> uu(u.begin(), u.end()), vv(v.begin(), v.end());
    tape->record([weight, r, uu = std::move(uu), vv = std::move(vv), sigma, O, K]() {
      auto& g = r.node().grad;
      if (g.empty()) return;
      auto wd = weight.data();
      T gw = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) gw += g[i] * wd[i];
      auto& wg = weight.node();
      wg.ensure_grad();
      const T inv = T(1) / sigma, c = gw / (sigma * sigma);
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t i = o * K + k;
          wg.grad[i] += g[i] * inv - c * uu[o] * vv[k];
        }
    });
  }
  return r;
}

}  // namespace cfcg
