#include <gtest/gtest.h>

#include "cfcg/disc.hpp"
#include "oracles.hpp"

using namespace cfcg;

namespace {

// Layer-by-layer count: conv weights + biases, plus BN scale/shift on layers 2 and 3.
std::size_t expected_disc_count(std::size_t w1, std::size_t w2, std::size_t w3) {
  return (16 * 1 * w1 + w1) + (16 * w1 * w2 + w2) + 2 * w2 + (16 * w2 * w3 + w3) + 2 * w3 + (16 * w3 * 1 + 1);
}

}  // namespace

TEST(Discriminator, PatchGridSizes) {
  EXPECT_EQ(patch_output_size(64), 14u);
  EXPECT_EQ(patch_output_size(16), 2u);
  EXPECT_EQ(patch_output_size(12), 1u);
  EXPECT_EQ(patch_output_size(11), 0u);
  EXPECT_EQ(min_discriminator_input(), 12u);
  DiscriminatorConfig cfg;
  cfg.widths = {4, 8, 8};
  auto d = make_discriminator<double>(cfg);
  const auto out = discriminate(oracle::random_tensor(Shape{2, 1, 64, 64}, 1), d, NormMode::train);
  EXPECT_EQ(out.shape(), (Shape{2, 1, 14, 14}));
}

TEST(Discriminator, TooSmallInputNamesMinimum) {
  DiscriminatorConfig cfg;
  cfg.widths = {2, 2, 2};
  auto d = make_discriminator<double>(cfg);
  try {
    discriminate(Tensor<double>(Shape{1, 1, 8, 8}), d, NormMode::eval);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("12"), std::string::npos);
  }
}

TEST(Discriminator, ParameterCountsMatchClosedForm) {
  EXPECT_EQ(discriminator_parameter_count({64, 128, 256}), expected_disc_count(64, 128, 256));
  EXPECT_EQ(expected_disc_count(64, 128, 256), 661697u);
  DiscriminatorConfig cfg;
  EXPECT_EQ(make_discriminator<double>(cfg).parameter_count(), 661697u);
  cfg.widths = {3, 5, 7};
  EXPECT_EQ(make_discriminator<double>(cfg).parameter_count(), expected_disc_count(3, 5, 7));
}

TEST(Discriminator, ZeroInitGivesZeroScores) {
  DiscriminatorConfig cfg;
  cfg.widths = {4, 4, 4};
  cfg.init_std = 0.0;
  auto d = make_discriminator<double>(cfg);
  const auto out = discriminate(oracle::random_tensor(Shape{1, 1, 16, 16}, 2), d, NormMode::train);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Discriminator, SeedDeterminesWeights) {
  DiscriminatorConfig cfg;
  cfg.widths = {4, 4, 4};
  cfg.seed = 9;
  auto a = make_discriminator<double>(cfg), b = make_discriminator<double>(cfg);
  EXPECT_EQ(oracle::max_abs_diff(a.weight[2], b.weight[2]), 0.0);
  cfg.seed = 10;
  auto c = make_discriminator<double>(cfg);
  EXPECT_GT(oracle::max_abs_diff(a.weight[2], c.weight[2]), 0.0);
}

TEST(Lsgan, LossValues) {
  Tensor<double> real(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 0.0});
  Tensor<double> fake(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 2.0});
  // D: 0.5 * mean([0, 1]) + 0.5 * mean([0, 4]) = 0.25 + 1.0
  EXPECT_NEAR(lsgan_d_loss(real, fake).item(), 1.25, 1e-15);
  // G: 0.5 * mean([1, 1]) = 0.5
  EXPECT_NEAR(lsgan_g_loss(fake).item(), 0.5, 1e-15);
  // Optimum: real -> 1, fake -> 0 gives zero discriminator loss.
  Tensor<double> ones(Shape{1, 1, 2, 2}, 1.0), zeros(Shape{1, 1, 2, 2}, 0.0);
  EXPECT_EQ(lsgan_d_loss(ones, zeros).item(), 0.0);
  EXPECT_EQ(lsgan_g_loss(ones).item(), 0.0);
}

TEST(Lsgan, GradientThroughDiscriminator) {
  DiscriminatorConfig cfg;
  cfg.widths = {3, 4, 4};
  cfg.init_std = 0.3;
  auto d = make_discriminator<double>(cfg);
  auto x = oracle::random_tensor(Shape{2, 1, 16, 16}, 3);
  x.set_requires_grad(true);
  auto loss = [&] { return lsgan_g_loss(discriminate(x, d, NormMode::train)); };
  Tape<double> tape;
  {
    TapeGuard<double> guard(tape);
    tape.backward(loss());
  }
  const auto numeric = oracle::numeric_gradient(x, [&] { return loss().item(); });
  EXPECT_LT(oracle::relative_error(numeric, x.grad()), 1e-5);
}
