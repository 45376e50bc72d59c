#include <gtest/gtest.h>

#include <memory>
#include <random>

#include "cfcg/optim.hpp"
#include "cfcg/serialize.hpp"
#include "cfcg/tensor.hpp"
#include "oracles.hpp"

using namespace cfcg;

namespace {

Tensor<double> param(Shape s, std::uint64_t seed, double scale = 1.0) {
  auto t = oracle::random_tensor(s, seed, scale);
  t.set_requires_grad(true);
  return t;
}

// Gradient of `loss_fn` with respect to `p` by the tape.
std::vector<double> tape_gradient(Tensor<double> p, const std::function<Tensor<double>()>& loss_fn) {
  Tape<double> tape;
  TapeGuard<double> guard(tape);
  p.zero_grad();
  auto loss = loss_fn();
  tape.backward(loss);
  return std::vector<double>(p.grad().begin(), p.grad().end());
}

void expect_gradient(Tensor<double> p, const std::function<Tensor<double>()>& loss_fn, double tol = 1e-6) {
  const auto analytic = tape_gradient(p, loss_fn);
  const auto numeric = oracle::numeric_gradient(p, [&] {
    NoGradGuard<double> off;
    return loss_fn().item();
  });
  EXPECT_LT(oracle::relative_error(numeric, analytic), tol);
}

}  // namespace

TEST(Shape, NumelAndString) {
  Shape s{2, 3, 4, 5};
  EXPECT_EQ(s.numel(), 120u);
  EXPECT_EQ(s.plane(), 20u);
  EXPECT_EQ(s.str(), "(2,3,4,5)");
}

TEST(Tensor, ConstructionRejectsWrongValueCount) {
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ItemRequiresScalar) {
  EXPECT_DOUBLE_EQ(Tensor<double>::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor<double>(Shape{1, 1, 1, 2}).item(), ShapeError);
}

TEST(Tensor, CastRoundTripsExactlyRepresentableValues) {
  Tensor<double> a(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -2.0, 1024.0});
  auto b = a.cast<float>().cast<double>();
  EXPECT_EQ(oracle::max_abs_diff(a, b), 0.0);
}

TEST(Tensor, ElementwiseOpsRejectShapeMismatch) {
  Tensor<double> a(Shape{1, 1, 2, 2}), b(Shape{1, 1, 2, 3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(sub(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
}

TEST(Conv2d, MatchesNaiveLoopsAcrossStridesAndPadding) {
  struct Case {
    Shape x, w;
    std::size_t stride, pad;
  };
  const Case cases[] = {{{2, 3, 9, 7}, {5, 3, 3, 3}, 1, 1}, {{1, 2, 10, 10}, {4, 2, 4, 4}, 2, 1},
                        {{1, 4, 6, 6}, {3, 4, 1, 1}, 1, 0}, {{2, 1, 8, 8}, {2, 1, 4, 4}, 1, 1},
                        {{1, 3, 5, 5}, {2, 3, 3, 3}, 2, 0}};
  std::uint64_t seed = 1;
  for (const auto& c : cases) {
    auto x = oracle::random_tensor(c.x, seed++);
    auto w = oracle::random_tensor(c.w, seed++);
    auto b = oracle::random_tensor(Shape{1, c.w.n, 1, 1}, seed++);
    const auto got = conv2d<double>(x, w, b, {c.stride, c.pad});
    const auto want = oracle::conv2d_naive(x, w, &b, c.stride, c.pad);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(oracle::max_abs_diff(got, want), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatchAndOversizedKernel) {
  Tensor<double> x(Shape{1, 2, 4, 4}), w(Shape{1, 3, 3, 3}), big(Shape{1, 2, 7, 7});
  EXPECT_THROW(conv2d<double>(x, w, std::nullopt), ShapeError);
  EXPECT_THROW(conv2d<double>(x, big, std::nullopt), ShapeError);
}

TEST(Conv2d, OutputSizeFormula) {
  EXPECT_EQ(conv_output_size(64, 4, 2, 1), 32u);
  EXPECT_EQ(conv_output_size(16, 4, 1, 1), 15u);
  EXPECT_EQ(conv_output_size(2, 4, 1, 0), 0u);
}

TEST(Gradients, Conv2dInputWeightBias) {
  auto x = param(Shape{2, 3, 6, 5}, 11);
  auto w = param(Shape{4, 3, 3, 3}, 12, 0.3);
  auto b = param(Shape{1, 4, 1, 1}, 13);
  auto loss = [&] { return sum(square(conv2d<double>(x, w, b, {2, 1}))); };
  expect_gradient(x, loss);
  expect_gradient(w, loss);
  expect_gradient(b, loss);
}

TEST(Gradients, PointwiseConv) {
  auto x = param(Shape{2, 5, 4, 4}, 21);
  auto w = param(Shape{3, 5, 1, 1}, 22);
  auto loss = [&] { return sum(square(conv2d<double>(x, w, std::nullopt, {1, 0}))); };
  expect_gradient(x, loss);
  expect_gradient(w, loss);
}

TEST(Gradients, ElementwiseAndReductions) {
  auto a = param(Shape{1, 2, 3, 3}, 31);
  auto b = param(Shape{1, 2, 3, 3}, 32);
  auto loss = [&] {
    auto t = add(mul(a, b), sub(scale(a, 0.7), add_scalar(b, 0.1)));
    return add(mean(abs(t)), sum(leaky_relu(t, 0.2)));
  };
  expect_gradient(a, loss);
  expect_gradient(b, loss);
}

TEST(Gradients, ChannelOps) {
  auto a = param(Shape{2, 3, 2, 2}, 41);
  auto b = param(Shape{2, 1, 2, 2}, 42);
  auto mix = param(Shape{1, 1, 4, 4}, 43);
  auto loss = [&] {
    auto cat = concat_channels<double>({a, b});
    auto mixed = channel_mix(cat, mix);
    return sum(square(add(slice_channels(mixed, 1, 2), slice_channels(cat, 0, 2))));
  };
  expect_gradient(a, loss);
  expect_gradient(b, loss);
  expect_gradient(mix, loss);
}

TEST(Gradients, Gather) {
  auto a = param(Shape{1, 1, 2, 3}, 51);
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{5, 0, 0, 2, 4, 1});
  auto target = oracle::random_tensor(Shape{1, 1, 3, 2}, 52);
  expect_gradient(a, [&] { return sum(square(sub(gather(a, Shape{1, 1, 3, 2}, idx), target))); });
}

TEST(Gradients, BatchNormTrainMode) {
  auto x = param(Shape{3, 2, 3, 3}, 61);
  auto gamma = param(Shape{1, 2, 1, 1}, 62);
  auto beta = param(Shape{1, 2, 1, 1}, 63);
  auto weights = oracle::random_tensor(Shape{3, 2, 3, 3}, 64);
  BatchNormState<double> st(2);
  auto loss = [&] { return sum(mul(batch_norm(x, gamma, beta, st, NormMode::train), weights)); };
  expect_gradient(x, loss);
  expect_gradient(gamma, loss);
  expect_gradient(beta, loss);
}

TEST(Gradients, SpectralDivision) {
  auto w = param(Shape{3, 2, 2, 2}, 71);
  std::vector<double> u{0.6, 0.0, 0.8}, v(8);
  for (std::size_t i = 0; i < 8; ++i) v[i] = (i % 2 ? 1.0 : -1.0) / std::sqrt(8.0);
  auto target = oracle::random_tensor(w.shape(), 72);
  expect_gradient(w, [&] { return sum(mul(divide_by_spectral_estimate<double>(w, u, v, nullptr), target)); });
}

TEST(BatchNorm, TrainStatisticsAndRunningUpdate) {
  Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  Tensor<double> g(Shape{1, 1, 1, 1}, 1.0), b(Shape{1, 1, 1, 1}, 0.0);
  BatchNormState<double> st(1);
  auto y = batch_norm(x, g, b, st, NormMode::train);
  // mean 3, biased var 3.5, unbiased var 14/3
  const double sd = std::sqrt(3.5 + 1e-5);
  EXPECT_NEAR(y.data()[0], -2.0 / sd, 1e-12);
  EXPECT_NEAR(y.data()[3], 3.0 / sd, 1e-12);
  EXPECT_NEAR(st.running_mean[0], 0.3, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
  auto e = batch_norm(x, g, b, st, NormMode::eval);
  EXPECT_NEAR(e.data()[0], (1.0 - 0.3) / std::sqrt(st.running_var[0] + 1e-5), 1e-12);
}

TEST(Tape, NoRecordingWithoutTapeOrGradInputs) {
  auto a = param(Shape{1, 1, 2, 2}, 81);
  Tensor<double> c(Shape{1, 1, 2, 2}, 1.0);
  Tape<double> tape;
  {
    TapeGuard<double> guard(tape);
    auto y = add(c, c);
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_FALSE(y.requires_grad());
    {
      NoGradGuard<double> off;
      add(a, c);
      EXPECT_EQ(tape.size(), 0u);
    }
    auto z = add(a, c);
    EXPECT_EQ(tape.size(), 1u);
    EXPECT_TRUE(z.requires_grad());
  }
  EXPECT_EQ(active_tape<double>(), nullptr);
}

TEST(Tape, BackwardRejectsNonScalarAndConstantLoss) {
  Tape<double> tape;
  TapeGuard<double> guard(tape);
  auto a = param(Shape{1, 1, 2, 2}, 91);
  EXPECT_THROW(tape.backward(square(a)), ShapeError);
  EXPECT_THROW(tape.backward(Tensor<double>::scalar(1.0)), std::logic_error);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  auto a = param(Shape{1, 1, 1, 1}, 92);
  Tape<double> tape;
  TapeGuard<double> guard(tape);
  auto loss = add(scale(a, 2.0), mul(a, a));
  tape.backward(loss);
  EXPECT_NEAR(a.grad()[0], 2.0 + 2.0 * a.item(), 1e-12);
}

TEST(Tape, DetachCutsTheGraph) {
  auto a = param(Shape{1, 1, 1, 1}, 93);
  Tape<double> tape;
  TapeGuard<double> guard(tape);
  auto loss = add(mul(a.detach(), a), Tensor<double>::scalar(0.0));
  tape.backward(loss);
  EXPECT_NEAR(a.grad()[0], a.item(), 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p(Shape{1, 1, 1, 2}, std::vector<double>{1.0, -1.0});
  AdamState<double> st(2);
  std::vector<double> g{0.3, -5.0};
  adam_step<double>(p.mutable_data(), g, st, 0.01);
  // Bias-corrected first step is lr * g / (|g| + eps') ~ lr * sign(g).
  EXPECT_NEAR(p.data()[0], 1.0 - 0.01, 1e-7);
  EXPECT_NEAR(p.data()[1], -1.0 + 0.01, 1e-7);
}

TEST(Adam, ZeroLearningRateLeavesParametersBitExact) {
  Tensor<double> p(Shape{1, 1, 1, 3}, std::vector<double>{0.1, 0.2, 0.3});
  const std::vector<double> before(p.data().begin(), p.data().end());
  AdamState<double> st(3);
  std::vector<double> g{1.0, -2.0, 3.0};
  adam_step<double>(p.mutable_data(), g, st, 0.0);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), before);
}

TEST(Serialize, TensorRoundTripBothPrecisions) {
  auto t = oracle::random_tensor(Shape{2, 3, 4, 5}, 101);
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(oracle::max_abs_diff(read_tensor<double>(ss), t), 0.0);
  std::stringstream sf;
  write_tensor(sf, t.cast<float>());
  auto back = read_tensor<double>(sf);
  EXPECT_EQ(oracle::max_abs_diff(back, t.cast<float>().cast<double>()), 0.0);
}

TEST(Serialize, HeaderLayout) {
  Tensor<float> t(Shape{1, 1, 1, 2}, std::vector<float>{1.0f, 2.0f});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string s = ss.str();
  ASSERT_EQ(s.size(), 4u + 4 + 4 + 32 + 8);
  EXPECT_EQ(s.substr(0, 4), "NTSR");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1);   // version
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 1);   // f32
  EXPECT_EQ(static_cast<unsigned char>(s[12 + 24]), 2);  // w = 2
}

TEST(Serialize, RejectsBadMagicAndVersion) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor<double>(bad), FormatError);
  Tensor<double> t(Shape{1, 1, 1, 1}, 1.0);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string s = ss.str();
  s[4] = 9;
  std::stringstream v(s);
  EXPECT_THROW(read_tensor<double>(v), FormatError);
}
