#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "oracles.hpp"
#include "singrav/camera.hpp"
#include "singrav/error.hpp"
#include "singrav/renderer.hpp"

namespace singrav {
namespace {

Mat4 random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::array<double, 3> eye{3 * u(rng), 3 * u(rng), 2 + u(rng)};
  return look_at(eye, {0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)}, {0, 0, 1});
}

TEST(Camera, CenterPixelLooksForward) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    Camera cam;
    cam.width = 5;
    cam.height = 5;
    cam.pose = random_pose(rng);
    auto rays = generate_rays(cam, torch::kFloat64);
    auto d = rays.directions[12];
    const auto f = cam.forward();
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(d[a].item<double>(), f[a], 1e-12);
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(rays.origins[0][a].item<double>(), cam.pose[a * 4 + 3], 1e-12);
  }
}

TEST(Camera, IdentityPoseStartsAtOrigin) {
  Camera cam;
  auto rays = generate_rays(cam);
  EXPECT_EQ(rays.origins.abs().max().item<float>(), 0.0f);
  EXPECT_LT((rays.directions.norm(2, 1) - 1).abs().max().item<float>(), 1e-6f);
}

TEST(Camera, CornerRayAngleMatchesFov) {
  Camera cam;
  cam.fov_deg = 90.0;
  cam.width = 8;
  cam.height = 8;
  auto rays = generate_rays(cam, torch::kFloat64);
  auto d = rays.directions[0];
  // pixel center is half a pixel in from the corner: tan = (4 - .5)/4 per axis
  const double t = 3.5 / 4.0;
  const double want = std::atan(std::sqrt(2.0) * t);
  const double got = std::acos(-d[2].item<double>());
  EXPECT_NEAR(got, want, 1e-6);
  EXPECT_LT(d[0].item<double>(), 0.0);
  EXPECT_GT(d[1].item<double>(), 0.0);
}

TEST(Camera, MatchesPixelRayOracle) {
  std::mt19937_64 rng(9);
  Camera cam;
  cam.width = 7;
  cam.height = 4;
  cam.fov_deg = 51.0;
  cam.pose = random_pose(rng);
  auto rays = generate_rays(cam, torch::kFloat64);
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t c = 0; c < 7; ++c) {
      auto [o, d] = oracle::pixel_ray(cam.pose, cam.fov_deg, 7, 4, r, c);
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(rays.directions[r * 7 + c][a].item<double>(), d[a], 1e-12);
    }
  }
  auto sel = generate_rays(cam, torch::tensor({5, 20}, torch::kInt64), torch::kFloat64);
  EXPECT_TRUE(torch::equal(sel.directions[1], rays.directions[20]));
  auto win = generate_rays_window(cam, 1, 2, 2, 3, torch::kFloat64);
  EXPECT_TRUE(torch::equal(win.directions[3], rays.directions[2 * 7 + 2]));
}

TEST(Camera, ValidationAndJson) {
  Camera cam;
  cam.pose[0] = 2.0;  // scaled, not rigid
  EXPECT_THROW(cam.validate(), Error);
  Camera ok;
  ok.near = 2.0;
  ok.far = 1.0;
  EXPECT_THROW(ok.validate(), Error);
  Camera a;
  a.pose = look_at({1, 2, 3}, {0, 0, 0}, {0, 0, 1});
  a.width = 20;
  nlohmann::json j = a;
  Camera b = j.get<Camera>();
  EXPECT_EQ(b.pose, a.pose);
  EXPECT_EQ(b.width, 20);
  auto r = a.resized(10, 16);
  EXPECT_EQ(r.pose, a.pose);
  EXPECT_DOUBLE_EQ(r.focal(), 0.5 * 16 / std::tan(0.5 * a.fov_deg * M_PI / 180.0));
}

Rays single_ray(std::array<double, 3> o, std::array<double, 3> d) {
  return {torch::tensor({o[0], o[1], o[2]}, torch::kFloat64).view({1, 3}),
          torch::tensor({d[0], d[1], d[2]}, torch::kFloat64).view({1, 3})};
}

TEST(Renderer, EmptyVolumeGivesBackgroundAtFar) {
  auto values = torch::full({4, 3, 3, 3}, -1e4, torch::kFloat64);
  auto out = render_rays(values, Bounds{}, single_ray({0, 0, 3}, {0, 0, -1}), 1.0, 5.0, {16, 64});
  EXPECT_NEAR(out.color.abs().max().item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(out.opacity[0].item<double>(), 0.0, 1e-12);
  EXPECT_NEAR(out.depth[0].item<double>(), 5.0, 1e-12);
}

TEST(Renderer, SingleSampleHalfOpacity) {
  // softplus(raw) * delta = ln 2 with delta = 1
  const double raw = std::log(std::exp(std::log(2.0)) - 1.0);
  auto values = torch::zeros({4, 2, 2, 2}, torch::kFloat64);
  values[0].fill_(2.0);
  values[3].fill_(raw);
  auto out = render_rays(values, Bounds{}, single_ray({0, 0, 0.5}, {0, 0, -1}), 0.0 + 1e-9, 1.0 + 1e-9, {1, 8});
  const double c = 1.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(out.color[0][0].item<double>(), 0.5 * c, 1e-6);
  EXPECT_NEAR(out.color[0][1].item<double>(), 0.25, 1e-6);
  EXPECT_NEAR(out.opacity[0].item<double>(), 0.5, 1e-6);
}

TEST(Renderer, MatchesSequentialOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int v = 0; v < 100; ++v) {
    auto values = torch::randn({4, 4, 4, 4}, at::detail::createCPUGenerator(rng()), torch::kFloat64) * 2;
    oracle::Grid g(values);
    std::vector<double> o, d;
    for (int r = 0; r < 8; ++r) {
      std::array<double, 3> eye{2.5 * u(rng), 2.5 * u(rng), 2.5 * u(rng)};
      std::array<double, 3> target{0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng)};
      std::array<double, 3> dir{target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]};
      const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (auto& x : dir) x /= n;
      o.insert(o.end(), eye.begin(), eye.end());
      d.insert(d.end(), dir.begin(), dir.end());
    }
    Rays rays{torch::tensor(o).view({8, 3}), torch::tensor(d).view({8, 3})};
    auto out = render_rays(values, Bounds{}, rays, 0.5, 5.0, {16, 3});
    for (int r = 0; r < 8; ++r) {
      auto want = oracle::composite(g, {o[3 * r], o[3 * r + 1], o[3 * r + 2]}, {d[3 * r], d[3 * r + 1], d[3 * r + 2]},
                                    0.5, 5.0, 16);
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(out.color[r][k].item<double>() - want.color[k]));
      worst = std::max(worst, std::abs(out.depth[r].item<double>() - want.depth));
      worst = std::max(worst, std::abs(out.opacity[r].item<double>() - want.opacity));
    }
  }
  EXPECT_LT(worst, 1e-5);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
}

TEST(Renderer, FloatImageMatchesDoubleRays) {
  auto values = torch::randn({4, 5, 5, 5}, at::detail::createCPUGenerator(4));
  Camera cam;
  cam.width = 6;
  cam.height = 5;
  cam.pose = look_at({2.5, -2.5, 2.0}, {0, 0, 0}, {0, 0, 1});
  cam.near = 1.0;
  cam.far = 6.0;
  auto img = render(values, Bounds{}, cam, {24, 7});
  EXPECT_EQ(img.color.sizes(), (std::vector<int64_t>{3, 5, 6}));
  oracle::Grid g(values);
  for (int64_t r = 0; r < 5; ++r) {
    for (int64_t c = 0; c < 6; ++c) {
      auto [o, d] = oracle::pixel_ray(cam.pose, cam.fov_deg, 6, 5, r, c);
      auto want = oracle::composite(g, o, d, 1.0, 6.0, 24);
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(img.color[k][r][c].item<float>(), want.color[k], 1e-5);
      EXPECT_NEAR(img.depth[r][c].item<float>(), want.depth, 1e-4);
      EXPECT_NEAR(img.opacity[r][c].item<float>(), want.opacity, 1e-5);
    }
  }
  EXPECT_GE(img.depth.min().item<float>(), 1.0f);
  EXPECT_LE(img.depth.max().item<float>(), 6.0f + 1e-5f);
}

TEST(Renderer, GradientMatchesFiniteDifferences) {
  auto values = torch::randn({4, 3, 3, 3}, at::detail::createCPUGenerator(8), torch::kFloat64);
  Camera cam;
  cam.width = 4;
  cam.height = 4;
  cam.pose = look_at({2.0, -2.2, 1.5}, {0, 0, 0}, {0, 0, 1});
  cam.near = 1.0;
  cam.far = 5.0;
  auto rays = generate_rays(cam, torch::kFloat64);
  auto weights = torch::randn({16, 5}, at::detail::createCPUGenerator(3), torch::kFloat64);
  auto objective = [&](const torch::Tensor& v) {
    auto out = render_rays(v, Bounds{}, rays, 1.0, 5.0, {12, 5});
    return (torch::cat({out.color, out.depth.unsqueeze(1), out.opacity.unsqueeze(1)}, 1) * weights).sum();
  };
  auto x = values.clone().requires_grad_(true);
  objective(x).backward();
  auto grad = x.grad();
  const double eps = 1e-6;
  double worst = 0.0;
  auto flat = values.view(-1);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = values.clone();
    auto minus = values.clone();
    plus.view(-1)[i] += eps;
    minus.view(-1)[i] -= eps;
    const double fd = (objective(plus).item<double>() - objective(minus).item<double>()) / (2 * eps);
    const double an = grad.view(-1)[i].item<double>();
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-3, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Renderer, RejectsBadIntervals) {
  auto values = torch::zeros({4, 2, 2, 2});
  auto rays = single_ray({0, 0, 2}, {0, 0, -1});
  EXPECT_THROW(render_rays(values, Bounds{}, rays, 2.0, 1.0, {4, 8}), Error);
  EXPECT_THROW(render_rays(values, Bounds{}, rays, 1.0, 2.0, {0, 8}), Error);
}

TEST(DepthReal, AreaResize) {
  CameraView view;
  view.rgb = torch::zeros({3, 4, 4});
  EXPECT_FALSE(render_depth_real(view, 2, 2).has_value());
  auto depth = torch::arange(16, torch::kFloat32).view({4, 4});
  view.depth = depth;
  EXPECT_TRUE(torch::equal(*render_depth_real(view, 4, 4), depth));
  auto constant = view;
  constant.depth = torch::full({8, 6}, 2.5f);
  EXPECT_LT((*render_depth_real(constant, 3, 5) - 2.5f).abs().max().item<float>(), 1e-6f);
  auto checker = ((torch::arange(4).view({4, 1}) + torch::arange(4).view({1, 4})) % 2).to(torch::kFloat32);
  view.depth = checker * 2 + 1;
  auto half = *render_depth_real(view, 2, 2);
  EXPECT_LT((half - 2.0f).abs().max().item<float>(), 1e-6f);
  view.depth = depth;
  auto blocks = *render_depth_real(view, 2, 2);
  EXPECT_FLOAT_EQ(blocks[0][0].item<float>(), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(blocks[1][1].item<float>(), (10 + 11 + 14 + 15) / 4.0f);
}

}  // namespace
}  // namespace singrav
