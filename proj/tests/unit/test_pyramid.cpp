#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "singrav/error.hpp"
#include "singrav/image.hpp"
#include "singrav/pyramid.hpp"
#include "singrav/trainer.hpp"

namespace singrav {
namespace {

using testing::toy_pyramid;

TEST(Schedule, Defaults) {
  auto s = scale_schedule(PyramidConfig{});
  EXPECT_EQ(s.volume_res, (std::vector<int64_t>{40, 53, 71, 95, 126}));
  EXPECT_EQ(s.image_res, (std::vector<int64_t>{32, 48, 72, 108, 160}));
  EXPECT_EQ(s.final_image_res, 320);
  EXPECT_EQ(s.image_res_at(6), 320);
  EXPECT_EQ(s.ray_samples.front(), 64);
  EXPECT_EQ(s.ray_samples.back(), 128);
}

TEST(Schedule, SingleVolumeScaleAndRounding) {
  PyramidConfig c;
  c.num_scales = 2;
  c.base_volume_res = 8;
  c.base_image_res = 8;
  c.volume_growth = 2;
  c.image_growth = 2;
  c.super_resolution = 2;
  auto s = scale_schedule(c);
  EXPECT_EQ(s.volume_res, (std::vector<int64_t>{8}));
  EXPECT_EQ(s.image_res, (std::vector<int64_t>{8}));
  EXPECT_EQ(s.final_image_res, 16);

  PyramidConfig d;
  d.num_scales = 4;
  EXPECT_EQ(scale_schedule(d).volume_res[2], 71);
}

TEST(Schedule, InvalidConfigs) {
  PyramidConfig c;
  c.num_scales = 1;
  EXPECT_THROW(scale_schedule(c), Error);
  c = {};
  c.volume_growth = 1.0;
  EXPECT_THROW(scale_schedule(c), Error);
  c = {};
  c.volume_res_override = {1, 2};
  EXPECT_THROW(scale_schedule(c), Error);
  nlohmann::json j = PyramidConfig{};
  j["bogus"] = 1;
  EXPECT_THROW(j.get<PyramidConfig>(), Error);
}

TEST(Schedule, JsonRoundTrip) {
  auto c = toy_pyramid(3);
  c.volume_res_override = {8, 11};
  nlohmann::json j = c;
  auto back = j.get<PyramidConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(scale_schedule(back).volume_res, (std::vector<int64_t>{8, 11}));
}

TEST(Stack, ShapeContractAtEveryScale) {
  for (auto config : {toy_pyramid(3), toy_pyramid(5)}) {
    config.num_scales = 4;
    GeneratorStack stack(config, 1);
    const auto& s = stack.schedule();
    EXPECT_EQ(stack.generator(1)->in_channels(), 3);
    for (int n = 2; n <= 3; ++n) EXPECT_EQ(stack.generator(n)->in_channels(), 4);
    auto noise = draw_noise(s, 11);
    ASSERT_EQ(noise.scales(), 3);
    torch::NoGradGuard guard;
    for (int n = 1; n <= 3; ++n) {
      const Dims d = s.volume_dims(n);
      EXPECT_EQ(noise.z[n - 1].sizes(), (std::vector<int64_t>{noise_channels(n), d.w, d.h, d.u}));
      auto v = generate_to_scale(stack, noise.z, n);
      EXPECT_EQ(v.sizes(), (std::vector<int64_t>{4, d.w, d.h, d.u}));
      EXPECT_EQ(build_discriminator(n, config).in_channels, 4);
    }
    EXPECT_EQ(build_discriminator(4, config).in_channels, 6);
    auto image = torch::rand({3, s.image_res.back(), s.image_res.back()});
    auto sr = super_resolve(stack.super_resolver(), image);
    EXPECT_EQ(sr.size(1), s.final_image_res);
    EXPECT_EQ(sr.size(2), s.final_image_res);
  }
}

TEST(Stack, DefaultSuperResolverDoublesTo320) {
  SuperResolver sr(160, 320, 32, 0.2);
  torch::NoGradGuard guard;
  EXPECT_EQ(sr->forward(torch::rand({1, 3, 160, 160})).sizes(), (std::vector<int64_t>{1, 3, 320, 320}));
  EXPECT_THROW(sr->forward(torch::rand({1, 3, 150, 150})), Error);
}

TEST(Stack, ZeroWeightsGiveBiasOutput) {
  GeneratorStack stack(toy_pyramid(3), 2);
  auto& g1 = stack.generator(1);
  torch::NoGradGuard guard;
  g1->tail()->weight.zero_();
  g1->tail()->bias.copy_(torch::tensor({0.5f, -1.0f, 2.0f, 3.0f}));
  auto csg = make_csg_grid(stack.schedule().volume_dims(1));
  auto a = generate_coarsest(g1, torch::randn({3, 8, 8, 8}), csg);
  auto b = generate_coarsest(g1, torch::randn({3, 8, 8, 8}), csg);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_EQ(a[3].min().item<float>(), 3.0f);
  EXPECT_EQ(a[3].max().item<float>(), 3.0f);
  EXPECT_THROW(generate_coarsest(g1, torch::randn({3, 8, 8, 7}), csg), Error);
}

TEST(Stack, ZeroResidualRefineIsPureUpsample) {
  PyramidConfig c = toy_pyramid(3);
  c.num_scales = 3;
  GeneratorStack stack(c, 3);
  auto& g2 = stack.generator(2);
  torch::NoGradGuard guard;
  g2->tail()->weight.zero_();
  g2->tail()->bias.zero_();
  auto prev = torch::randn({4, 8, 8, 8});
  const Dims d = stack.schedule().volume_dims(2);
  auto out = refine(g2, prev, torch::randn({4, d.w, d.h, d.u}), d);
  EXPECT_TRUE(torch::equal(out, resample_grid(prev, d)));
  EXPECT_THROW(refine(g2, prev, torch::randn({4, 8, 8, 8}), d), Error);

  auto defaults = scale_schedule(PyramidConfig{});
  EXPECT_EQ(defaults.volume_dims(2), (Dims{53, 53, 53}));

  SuperResolver sr(16, 32, 8, 0.2);
  sr->tail()->weight.zero_();
  sr->tail()->bias.zero_();
  auto img = torch::rand({3, 16, 16});
  EXPECT_TRUE(torch::equal(sr->forward(img), bilinear_resize(img.unsqueeze(0), 32, 32).squeeze(0)));
}

TEST(Stack, DiscriminatorArithmetic) {
  PyramidConfig c;
  auto spec = build_discriminator(1, c);
  EXPECT_EQ(spec.receptive_field(), 15);
  EXPECT_EQ(spec.output_size(32), 18);
  Discriminator2d d(spec, 0.2);
  torch::NoGradGuard guard;
  EXPECT_EQ(d->forward(torch::rand({2, 4, 32, 32})).sizes(), (std::vector<int64_t>{2, 1, 18, 18}));
  EXPECT_THROW(d->forward(torch::rand({2, 3, 32, 32})), Error);
}

TEST(Stack, SamplingIsDeterministicAndSeedSensitive) {
  GeneratorStack stack(toy_pyramid(3), 4);
  auto a = sample_scene(stack, 100);
  auto b = sample_scene(stack, 100);
  EXPECT_TRUE(a.volume.bitwise_equal(b.volume));
  EXPECT_TRUE(sample_scene(stack, a.noise).volume.bitwise_equal(a.volume));
  for (uint64_t s = 0; s < 10; ++s) {
    EXPECT_FALSE(sample_scene(stack, 2 * s).volume.bitwise_equal(sample_scene(stack, 2 * s + 1).volume));
  }
  GeneratorStack twin(toy_pyramid(3), 4);
  EXPECT_TRUE(sample_scene(twin, 100).volume.bitwise_equal(a.volume));
}

TEST(Stack, ReconstructionNoiseIsFixed) {
  GeneratorStack stack(toy_pyramid(3), 6);
  auto z = reconstruction_noise(stack.schedule(), stack.z1_star());
  ASSERT_EQ(z.scales(), 2);
  EXPECT_TRUE(torch::equal(z.z[0], stack.z1_star()));
  EXPECT_EQ(z.z[1].abs().max().item<float>(), 0.0f);
  EXPECT_TRUE(reconstruction_volume(stack).bitwise_equal(sample_scene(stack, z).volume));
}

TEST(Stack, WarmStartCopiesOverlap) {
  Generator3d src(3, 8, 3, NormKind::kInstance, 0.2);
  Generator3d dst(4, 8, 3, NormKind::kInstance, 0.2);
  torch::NoGradGuard guard;
  auto before = dst->parameters()[0].clone();
  warm_start(*dst, *src);
  auto w_src = src->parameters()[0];
  auto w_dst = dst->parameters()[0];
  EXPECT_TRUE(torch::equal(w_dst.narrow(1, 0, 3), w_src));
  EXPECT_TRUE(torch::equal(w_dst.narrow(1, 3, 1), before.narrow(1, 3, 1)));
  EXPECT_TRUE(torch::equal(dst->tail()->weight, src->tail()->weight));
}

TEST(Checkpoint, SaveAndLoadReproducesSamples) {
  auto dir = testing::scratch_dir("pyramid_ckpt");
  auto stack = testing::untrained_checkpoint(dir, toy_pyramid(3), 8);
  auto loaded = load_checkpoint(dir);
  EXPECT_TRUE(sample_scene(loaded, 5).volume.bitwise_equal(sample_scene(stack, 5).volume));
  EXPECT_TRUE(torch::equal(loaded.z1_star(), stack.z1_star()));
  for (int n = 1; n <= 3; ++n) {
    EXPECT_TRUE(loaded.frozen(n));
    EXPECT_TRUE(std::filesystem::exists(dir / ("scale_" + std::to_string(n)) / "scale_config.json"));
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "pyramid.json"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace singrav
