#include <gtest/gtest.h>

#include "singrav/error.hpp"
#include "singrav/losses.hpp"

namespace singrav {
namespace {

TEST(Adversarial, UnitLinearCriticHasZeroPenalty) {
  auto gen = at::detail::createCPUGenerator(1);
  auto a = torch::randn({2 * 5 * 5}, torch::kFloat64);
  a = a / a.norm();
  Critic critic = [&](const torch::Tensor& x) { return (x.flatten(1) * a).sum(1); };
  auto real = torch::randn({3, 2, 5, 5}, torch::kFloat64);
  auto fake = torch::randn({3, 2, 5, 5}, torch::kFloat64);
  auto gp = gradient_penalty(critic, real, fake, gen);
  EXPECT_NEAR(gp.item<double>(), 0.0, 1e-20);
  auto l = adversarial_losses(critic, real, fake, 0.1, gen);
  EXPECT_NEAR(l.d_loss.item<double>(), (critic(fake).mean() - critic(real).mean()).item<double>(), 1e-12);
  EXPECT_NEAR(l.g_loss.item<double>(), -critic(fake).mean().item<double>(), 1e-12);
}

TEST(Adversarial, ConstantCriticPenaltyIsOne) {
  auto gen = at::detail::createCPUGenerator(2);
  Critic critic = [](const torch::Tensor& x) { return x.flatten(1).sum(1) * 0 + 2.5; };
  auto real = torch::rand({4, 3, 6, 6});
  auto fake = torch::rand({4, 3, 6, 6});
  auto l = adversarial_losses(critic, real, fake, 0.1, gen);
  EXPECT_NEAR(l.penalty.item<float>(), 1.0f, 1e-6f);
  EXPECT_NEAR(l.d_loss.item<float>(), 0.1f, 1e-6f);
  EXPECT_NEAR(l.g_loss.item<float>(), -2.5f, 1e-6f);
  EXPECT_DOUBLE_EQ(LossWeights{}.gradient_penalty, 0.1);
  EXPECT_THROW(adversarial_losses(critic, real, torch::rand({4, 3, 5, 6}), 0.1, gen), Error);
}

TEST(Adversarial, PenaltyAtKnownInterpolate) {
  // D(x) = sum x^2 / 2 has gradient x, so GP = (||x|| - 1)^2.
  Critic critic = [](const torch::Tensor& x) { return x.pow(2).flatten(1).sum(1) / 2; };
  auto x = torch::tensor({3.0, 4.0}, torch::kFloat64).view({1, 2});
  EXPECT_NEAR(gradient_penalty_at(critic, x).item<double>(), 16.0, 1e-12);
  EXPECT_NEAR(patch_score(torch::arange(8, torch::kFloat32).view({2, 1, 2, 2}))[1].item<float>(), 5.5f, 1e-6f);
}

TEST(DiscInput, ChannelsPerScale) {
  auto rgb = torch::rand({2, 3, 32, 32});
  auto depth = torch::rand({2, 1, 32, 32});
  EXPECT_EQ(build_disc_input(1, 6, rgb, depth, true).sizes(), (std::vector<int64_t>{2, 4, 32, 32}));
  EXPECT_EQ(build_disc_input(1, 6, rgb, depth, false).sizes(), (std::vector<int64_t>{2, 3, 32, 32}));
  EXPECT_THROW(build_disc_input(1, 6, rgb, torch::Tensor(), true), Error);
  auto low = torch::rand({2, 3, 16, 16});
  auto joint = build_disc_input(6, 6, rgb, low, true);
  EXPECT_EQ(joint.sizes(), (std::vector<int64_t>{2, 6, 32, 32}));
  EXPECT_TRUE(torch::equal(joint.narrow(1, 0, 3), rgb));
  auto nd = normalize_depth(torch::tensor({1.5, 3.5, 5.5}), 1.5, 5.5);
  EXPECT_TRUE(torch::allclose(nd, torch::tensor({0.0, 0.5, 1.0})));
}

TEST(Reconstruction, WeightedTerms) {
  LossWeights w;
  EXPECT_DOUBLE_EQ(reconstruction_loss_value(0.1, 0.2, 2, 6, w), 7.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss_value(0.1, 0.2, 6, 6, w), 1.0);
  auto c = torch::rand({2, 3, 4, 4});
  auto d = torch::rand({2, 1, 4, 4});
  auto exact = reconstruction_loss(c, c, d, d, 1, 3, w);
  EXPECT_EQ(exact.total.item<float>(), 0.0f);
  auto t = reconstruction_loss(c, c + 0.1, d, d + 0.2, 1, 3, w);
  EXPECT_NEAR(t.total.item<float>(), 10 * 0.01 + 30 * 0.04, 1e-5);
  auto top = reconstruction_loss(c, c + 0.1, d, d + 0.2, 3, 3, w);
  EXPECT_NEAR(top.total.item<float>(), 0.1, 1e-5);
  EXPECT_FALSE(top.depth_mse.defined());
  LossWeights bad;
  bad.depth = -1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Swd, OneDimensionalExact) {
  auto a = torch::tensor({0.0, 0.0}, torch::kFloat64).view({1, 2});
  auto b = torch::tensor({1.0, 1.0}, torch::kFloat64).view({1, 2});
  EXPECT_NEAR(sliced_wasserstein(a, b, 1, 0).item<double>(), 1.0, 1e-12);
  // Sorting makes the distance permutation-invariant.
  auto c = torch::tensor({3.0, -1.0, 2.0}, torch::kFloat64).view({1, 3});
  auto d = torch::tensor({2.0, 3.0, -1.0}, torch::kFloat64).view({1, 3});
  EXPECT_EQ(sliced_wasserstein(c, d, 4, 7).item<double>(), 0.0);
}

TEST(Swd, SymmetricAndZeroOnSelf) {
  auto a = torch::randn({8, 50});
  auto b = torch::randn({8, 50}) + 0.5;
  EXPECT_EQ(sliced_wasserstein(a, a, 16, 3).item<float>(), 0.0f);
  EXPECT_NEAR(sliced_wasserstein(a, b, 16, 3).item<float>(), sliced_wasserstein(b, a, 16, 3).item<float>(), 1e-6);
  EXPECT_GT(sliced_wasserstein(a, b, 16, 3).item<float>(), 0.0f);
  EXPECT_THROW(sliced_wasserstein(a, torch::randn({8, 49}), 16, 3), Error);
}

TEST(Swd, VggLossOnImages) {
  WeightSource src;
  src.cache_dir = std::filesystem::temp_directory_path() / "singrav_no_weights_here";
  src.fallback_seed = 1;
  VggExtractor vgg(src);
  SwdConfig cfg;
  cfg.projections = 8;
  auto a = torch::rand({1, 3, 32, 32});
  auto b = torch::rand({1, 3, 32, 32});
  torch::NoGradGuard guard;
  EXPECT_EQ(swd_loss(a, a, vgg, cfg).item<float>(), 0.0f);
  const float ab = swd_loss(a, b, vgg, cfg).item<float>();
  EXPECT_GT(ab, 0.0f);
  EXPECT_NEAR(ab, swd_loss(b, a, vgg, cfg).item<float>(), 1e-6 * std::max(1.0f, ab));
  EXPECT_THROW(swd_loss(a, torch::rand({1, 3, 32, 30}), vgg, cfg), Error);
}

TEST(Total, IndicatorOnFinestScale) {
  EXPECT_DOUBLE_EQ(total_loss_value(2, 6, 2, 3, 5), 5);
  EXPECT_DOUBLE_EQ(total_loss_value(6, 6, 2, 3, 5), 10);
  EXPECT_DOUBLE_EQ(total_loss_value(6, 6, 0, 0, 0), 0);
  for (int n = 1; n < 6; ++n) {
    auto t = total_loss(n, 6, torch::tensor(2.0), torch::tensor(3.0), torch::tensor(1e9));
    EXPECT_EQ(t.item<double>(), 5.0);
  }
}

}  // namespace
}  // namespace singrav
