#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "singrav/dataset.hpp"
#include "singrav/error.hpp"

namespace singrav {
namespace {

using nlohmann::json;
using testing::scratch_dir;

double norm3(const std::array<double, 3>& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

TEST(Rig, HemisphereGeometry) {
  RigOptions o;
  o.count = 1000;
  o.seed = 4;
  EXPECT_DOUBLE_EQ(o.radius, 3.5);
  EXPECT_DOUBLE_EQ(o.fov_deg, 33.40);
  auto cams = hemisphere_rig(o);
  ASSERT_EQ(cams.size(), 1000u);
  double mean_z = 0;
  for (const auto& c : cams) {
    const auto p = c.position();
    EXPECT_NEAR(norm3(p), 3.5, 1e-9);
    EXPECT_GE(p[2], -1e-9);
    mean_z += p[2] / 1000.0;
    const auto f = c.forward();
    EXPECT_NEAR(norm3(f), 1.0, 1e-9);
    // looks at the origin
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(f[a], -p[a] / 3.5, 1e-9);
    EXPECT_NO_THROW(c.validate());
  }
  // uniform on the hemisphere: z is uniform on [0, r]
  EXPECT_NEAR(mean_z, 1.75, 0.15);

  RigOptions one;
  one.count = 1;
  one.seed = 9;
  EXPECT_EQ(hemisphere_rig(one)[0].pose, hemisphere_rig(one)[0].pose);
  RigOptions jit = one;
  jit.jitter_std = 0.1;
  EXPECT_NE(hemisphere_rig(jit)[0].pose, hemisphere_rig(one)[0].pose);
}

TEST(Synthetic, SingleSphereDepth) {
  for (int64_t m : {32, 64, 128, 256}) {
    SyntheticOptions o;
    o.sphere_count = 1;
    o.volume_res = 48;
    o.samples = m;
    o.rig.count = 3;
    o.rig.width = 9;
    o.rig.height = 9;
    auto scene = make_synthetic_scene(o);
    ASSERT_EQ(scene.dataset.size(), 3);
    for (const auto& v : scene.dataset.views) {
      const double tol = 2 * (v.camera.far - v.camera.near) / static_cast<double>(m);
      const double want = norm3(v.camera.position()) - 0.5;
      EXPECT_NEAR((*v.depth)[4][4].item<float>(), want, tol) << "M=" << m;
    }
  }
}

TEST(Synthetic, EmptySceneAndDeterminism) {
  SyntheticOptions o;
  o.kind = SceneKind::kEmpty;
  o.rig.count = 2;
  o.rig.width = 8;
  o.rig.height = 8;
  o.samples = 16;
  auto scene = make_synthetic_scene(o);
  for (const auto& v : scene.dataset.views) {
    EXPECT_LT(v.rgb.abs().max().item<float>(), 1e-6f);
    EXPECT_NEAR(v.depth->min().item<float>(), v.camera.far, 1e-4);
  }
  auto a = testing::toy_scene(2, 12, 5);
  auto b = testing::toy_scene(2, 12, 5);
  EXPECT_TRUE(a.volume.bitwise_equal(b.volume));
  EXPECT_TRUE(torch::equal(a.dataset.views[1].rgb, b.dataset.views[1].rgb));
  EXPECT_EQ(parse_scene_kind("terrain-noise"), SceneKind::kTerrainNoise);
  EXPECT_THROW(parse_scene_kind("teapot"), Error);
}

TEST(Manifest, RoundTripAndValidation) {
  auto scene = testing::toy_scene(3, 16, 2);
  auto dir = scratch_dir("dataset_io");
  auto manifest = save_dataset(scene.dataset, dir);
  auto back = load_dataset(manifest);
  ASSERT_EQ(back.size(), 3);
  EXPECT_EQ(back.bounds, scene.dataset.bounds);
  for (int i = 0; i < 3; ++i) {
    const auto& a = scene.dataset.views[i];
    const auto& b = back.views[i];
    EXPECT_EQ(b.camera.pose, a.camera.pose);
    EXPECT_LE((a.rgb - b.rgb).abs().max().item<float>(), 0.5f / 255.0f + 1e-6f);
    const double step = a.camera.far / 65535.0;
    EXPECT_LE((*a.depth - *b.depth).abs().max().item<float>(), 0.5 * step + 1e-5);
  }
  // Saving the reloaded dataset reproduces the files byte for byte.
  auto dir2 = scratch_dir("dataset_io2");
  auto again = load_dataset(save_dataset(back, dir2));
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(torch::equal(again.views[i].rgb, back.views[i].rgb));
    EXPECT_TRUE(torch::equal(*again.views[i].depth, *back.views[i].depth));
  }

  json j;
  std::ifstream(manifest) >> j;
  auto broken = j;
  broken["views"][0]["depth_scale"] = 0;
  std::ofstream(dir / "bad_scale.json") << broken.dump();
  EXPECT_THROW(load_dataset(dir / "bad_scale.json"), Error);
  broken = j;
  broken["views"][1]["camera"]["pose_c2w"] = json::array({1, 2, 3});
  std::ofstream(dir / "bad_pose.json") << broken.dump();
  EXPECT_THROW(load_dataset(dir / "bad_pose.json"), Error);
  broken = j;
  broken["views"][2]["rgb"] = "views/missing.png";
  std::ofstream(dir / "missing.json") << broken.dump();
  try {
    load_dataset(dir / "missing.json");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("view 2"), std::string::npos) << e.what();
  }
  auto single = j;
  single["views"] = json::array({j["views"][0]});
  single.erase("bounds");
  std::ofstream(dir / "single.json") << single.dump();
  auto one = load_dataset(dir / "single.json");
  EXPECT_EQ(one.size(), 1);
  EXPECT_EQ(one.bounds, Bounds{});
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST(Pyramid, ResolutionsAndAreaAverage) {
  MultiViewDataset ds;
  CameraView v;
  v.camera.width = 4;
  v.camera.height = 4;
  auto checker = ((torch::arange(4).view({4, 1}) + torch::arange(4).view({1, 4})) % 2).to(torch::kFloat32);
  v.rgb = checker.unsqueeze(0).repeat({3, 1, 1});
  v.depth = checker + 2;
  ds.views.push_back(v);
  CameraView flat = v;
  flat.rgb = torch::full({3, 4, 4}, 0.4f);
  flat.depth = torch::full({4, 4}, 3.0f);
  ds.views.push_back(flat);

  PyramidConfig c;
  c.num_scales = 3;
  c.base_image_res = 2;
  c.image_growth = 2;
  c.base_volume_res = 4;
  c.max_image_res.reset();
  auto schedule = scale_schedule(c);
  auto pyr = build_pyramid(ds, schedule);
  ASSERT_EQ(pyr.scales.size(), 3u);
  for (int n = 1; n <= 2; ++n) EXPECT_EQ(pyr.at(n).height, schedule.image_res[n - 1]);
  EXPECT_EQ(pyr.at(3).height, 8);
  // native resolution is untouched
  EXPECT_TRUE(torch::equal(pyr.at(2).color[0], v.rgb));
  // 4x4 checkerboard -> 2x2 block means
  EXPECT_LT((pyr.at(1).color[0] - 0.5f).abs().max().item<float>(), 1.0f / 255.0f);
  EXPECT_LT((pyr.at(1).depth[0] - 2.5f).abs().max().item<float>(), 1e-3f);
  for (int n = 1; n <= 3; ++n) {
    EXPECT_LT((pyr.at(n).color[1] - 0.4f).abs().max().item<float>(), 1.0f / 255.0f);
    EXPECT_LT((pyr.at(n).depth[1] - 3.0f).abs().max().item<float>(), 1e-3f);
  }

  auto cache = scratch_dir("pyramid_cache");
  auto cached = build_pyramid(ds, schedule, cache);
  auto reread = build_pyramid(ds, schedule, cache);
  EXPECT_EQ(cached.content_hash, dataset_hash(ds, schedule));
  EXPECT_TRUE(std::filesystem::exists(cache / cached.content_hash / "scale_1" / "view_0000.png"));
  for (int n = 1; n <= 3; ++n) {
    EXPECT_TRUE(torch::equal(cached.at(n).color, pyr.at(n).color));
    EXPECT_TRUE(torch::equal(reread.at(n).color, pyr.at(n).color));
    EXPECT_TRUE(torch::equal(reread.at(n).depth, pyr.at(n).depth));
  }
  std::filesystem::remove_all(cache);
}

TEST(Hash, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace singrav
