#include <gtest/gtest.h>

#include <cstring>
#include <map>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "singrav/apps.hpp"
#include "singrav/error.hpp"
#include "singrav/png_io.hpp"

namespace singrav {
namespace {

using testing::scratch_dir;
using testing::toy_pyramid;
using testing::untrained_checkpoint;

NoiseStack random_noise(uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  ScaleSchedule s;
  s.volume_res = {4, 5, 6, 7};
  NoiseStack n;
  n.seed = seed;
  torch::manual_seed(seed);
  for (int64_t r : s.volume_res) n.z.push_back(torch::randn({4, r, r, r}, torch::dtype(dtype)));
  return n;
}

std::vector<double> flat(const torch::Tensor& t) {
  auto d = t.to(torch::kFloat64).contiguous();
  return {d.data_ptr<double>(), d.data_ptr<double>() + d.numel()};
}

// -- animation ----------------------------------------------------------------

TEST(Animation, AlphaOneIsAFixedPointOverAHundredSteps) {
  auto base = random_noise(1);
  AnimationConfig c;
  c.alpha = 1.0;
  c.xi = 0.45;
  c.steps = 101;
  c.start_scale = 1;
  c.seed = 9;
  auto walk = animate_noise(base, c);
  ASSERT_EQ(walk.size(), 101u);
  for (const auto& z : walk) {
    for (int n = 0; n < base.scales(); ++n) ASSERT_TRUE(torch::equal(z.z[n], base.z[n]));
  }
}

TEST(Animation, SeededTraceMatchesTheRecursion) {
  // float64 noise, so the comparison measures the recursion and not float32 storage
  auto base = random_noise(2, torch::kFloat64);
  AnimationConfig c;
  c.alpha = 0.58;
  c.xi = 0.45;
  c.steps = 4;  // three updates
  c.start_scale = 3;
  c.seed = 17;
  auto walk = animate_noise(base, c);

  // Redraw the Gaussian terms in the same order to feed the oracle.
  auto gen = at::detail::createCPUGenerator(c.seed);
  std::vector<std::vector<torch::Tensor>> mu;
  for (int t = 1; t < c.steps; ++t) {
    std::vector<torch::Tensor> step(base.scales());
    for (int n = c.start_scale; n <= base.scales(); ++n) step[n - 1] = torch::randn(base.z[n - 1].sizes(), gen, torch::kFloat64);
    mu.push_back(step);
  }
  for (int n = 1; n <= base.scales(); ++n) {
    for (size_t t = 0; t < walk.size(); ++t) {
      if (n < c.start_scale) {
        EXPECT_TRUE(torch::equal(walk[t].z[n - 1], base.z[n - 1]));
        continue;
      }
      std::vector<std::vector<double>> m;
      for (const auto& s : mu) m.push_back(flat(s[n - 1]));
      const auto expect = oracle::noise_walk(flat(base.z[n - 1]), m, c.alpha, c.xi);
      const auto got = flat(walk[t].z[n - 1]);
      double worst = 0.0;
      for (size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - expect[t][i]));
      EXPECT_LT(worst, 1e-7) << "scale " << n << " step " << t;
    }
  }
}

TEST(Animation, ConfigValidation) {
  AnimationConfig c;
  c.start_scale = 5;
  EXPECT_THROW(c.validate(4), Error);
  c.start_scale = 1;
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(4), Error);
  c.alpha = 0.5;
  c.steps = 0;
  EXPECT_THROW(c.validate(4), Error);
  nlohmann::json j = {{"alpha", 0.2}, {"nope", 1}};
  EXPECT_THROW(j.get<AnimationConfig>(), Error);
}

TEST(Animation, FrameArchiveIsAValidTar) {
  std::vector<torch::Tensor> frames{torch::zeros({3, 4, 5}), torch::ones({3, 4, 5})};
  const auto tar = encode_frame_archive(frames, {{"note", "x"}});
  ASSERT_EQ(tar.size() % 512, 0u);
  std::map<std::string, std::string> files;
  size_t pos = 0;
  while (pos + 512 <= tar.size() && tar[pos] != '\0') {
    const std::string name(tar.data() + pos, strnlen(tar.data() + pos, 100));
    EXPECT_EQ(std::string(tar.data() + pos + 257, 5), "ustar");
    // header checksum: sum of bytes with the checksum field read as spaces
    unsigned sum = 0;
    for (size_t i = 0; i < 512; ++i) sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(tar[pos + i]);
    EXPECT_EQ(sum, std::stoul(std::string(tar.data() + pos + 148, 6), nullptr, 8));
    const size_t size = std::stoul(std::string(tar.data() + pos + 124, 11), nullptr, 8);
    files[name] = tar.substr(pos + 512, size);
    pos += 512 + (size + 511) / 512 * 512;
  }
  ASSERT_EQ(files.size(), 3u);
  auto index = nlohmann::json::parse(files.at("index.json"));
  EXPECT_EQ(index.at("count"), 2);
  EXPECT_EQ(index.at("note"), "x");
  auto decoded = decode_png_rgb(files.at("frame_0001.png"));
  EXPECT_TRUE(torch::equal(decoded, torch::ones({3, 4, 5})));
}

// -- editing ------------------------------------------------------------------

RadianceVolume random_volume(std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> dim(3, 12);
  Dims d{dim(rng), dim(rng), dim(rng)};
  auto values = torch::randn({4, d.w, d.h, d.u}, at::detail::createCPUGenerator(rng()));
  return RadianceVolume(values, Bounds{{-1.0, -0.5, -2.0}, {1.0, 1.5, 0.0}});
}

Box random_box(std::mt19937_64& rng, const Bounds& b) {
  Box box;
  for (int a = 0; a < 3; ++a) {
    std::uniform_real_distribution<double> u(b.lo[a], b.hi[a]);
    double x = u(rng), y = u(rng);
    box.lo[a] = std::min(x, y);
    box.hi[a] = std::max(x, y);
  }
  return box;
}

// Box aligned to voxel faces covering [i, i + k) on every axis.
Box aligned_box(const RadianceVolume& v, std::array<int64_t, 3> i, std::array<int64_t, 3> k) {
  const auto s = v.voxel_size();
  Box b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = v.bounds().lo[a] + static_cast<double>(i[a]) * s[a];
    b.hi[a] = v.bounds().lo[a] + static_cast<double>(i[a] + k[a]) * s[a];
  }
  return b;
}

bool in_box(const RadianceVolume& v, const Box& b, int64_t x, int64_t y, int64_t z) {
  const auto c = v.voxel_center(x, y, z);
  for (int a = 0; a < 3; ++a) {
    if (!(c[a] >= b.lo[a] && c[a] < b.hi[a])) return false;
  }
  return true;
}

TEST(Editing, RemoveLeavesOutsideVoxelsUntouchedForRandomBoxes) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = random_volume(rng);
    const Box box = random_box(rng, v.bounds());
    const VoxelValue empty{0.25f, -1.0f, 2.0f, -9.0f};
    auto out = edit_remove(v, box, empty);
    oracle::Grid in(v.values(), v.bounds()), got(out.values(), v.bounds());
    const Dims d = v.dims();
    for (int64_t x = 0; x < d.w; ++x) {
      for (int64_t y = 0; y < d.h; ++y) {
        for (int64_t z = 0; z < d.u; ++z) {
          const bool inside = in_box(v, box, x, y, z);
          for (int c = 0; c < 4; ++c) {
            const double want = inside ? static_cast<double>(empty[c]) : in.at(c, x, y, z);
            ASSERT_EQ(got.at(c, x, y, z), want) << "trial " << trial;
          }
        }
      }
    }
  }
}

TEST(Editing, MoveEqualsRemoveAfterDuplicate) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = random_volume(rng);
    const Dims d = v.dims();
    std::array<int64_t, 3> k{}, s{}, t{};
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<int64_t> size(1, d[a]);
      k[a] = size(rng);
      std::uniform_int_distribution<int64_t> pos(0, d[a] - k[a]);
      s[a] = pos(rng);
      t[a] = pos(rng);
    }
    const Box src = aligned_box(v, s, k), dst = aligned_box(v, t, k);
    const VoxelValue empty = default_empty_sample(v);
    auto moved = edit_move(v, src, dst, empty);
    auto composed = edit_remove(edit_duplicate(v, src, dst), src, empty);
    ASSERT_TRUE(moved.bitwise_equal(composed)) << "trial " << trial;
    EXPECT_EQ(voxel_range(v, src).extent(), k);
    EXPECT_EQ(voxel_range(v, dst).extent(), k);
    // Voxel by voxel: source emptied, destination holds the old source content, rest untouched.
    oracle::Grid in(v.values(), v.bounds()), got(moved.values(), v.bounds());
    for (int64_t x = 0; x < d.w; ++x) {
      for (int64_t y = 0; y < d.h; ++y) {
        for (int64_t z = 0; z < d.u; ++z) {
          const bool in_src = x >= s[0] && x < s[0] + k[0] && y >= s[1] && y < s[1] + k[1] && z >= s[2] &&
                              z < s[2] + k[2];
          const bool in_dst = x >= t[0] && x < t[0] + k[0] && y >= t[1] && y < t[1] + k[1] && z >= t[2] &&
                              z < t[2] + k[2];
          for (int c = 0; c < 4; ++c) {
            double want = in.at(c, x, y, z);
            if (in_dst) want = in.at(c, x - t[0] + s[0], y - t[1] + s[1], z - t[2] + s[2]);
            if (in_src) want = empty[c];
            ASSERT_EQ(got.at(c, x, y, z), want);
          }
        }
      }
    }
  }
}

TEST(Editing, DuplicateCopiesAndChecksExtents) {
  auto v = RadianceVolume(torch::arange(4 * 4 * 4 * 4, torch::kFloat32).view({4, 4, 4, 4}));
  const Box src = aligned_box(v, {0, 0, 0}, {2, 2, 2});
  const Box dst = aligned_box(v, {2, 2, 2}, {2, 2, 2});
  auto out = edit_duplicate(v, src, dst);
  using torch::indexing::Slice;
  EXPECT_TRUE(torch::equal(out.values().index({Slice(), Slice(2, 4), Slice(2, 4), Slice(2, 4)}),
                           v.values().index({Slice(), Slice(0, 2), Slice(0, 2), Slice(0, 2)})));
  EXPECT_TRUE(torch::equal(out.values().index({Slice(), Slice(0, 2)}), v.values().index({Slice(), Slice(0, 2)})));
  try {
    edit_duplicate(v, src, aligned_box(v, {1, 1, 1}, {3, 2, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidArgument);
  }
}

TEST(Editing, BoxValidation) {
  auto v = RadianceVolume::filled({4, 4, 4}, {0, 0, 0, 0});
  EXPECT_THROW(voxel_range(v, Box{{0, 0, 0}, {-0.5, 1, 1}}), Error);  // min > max
  EXPECT_THROW(voxel_range(v, Box{{-1.5, 0, 0}, {0, 1, 1}}), Error);  // outside
  EXPECT_NO_THROW(voxel_range(v, Box{{-1, -1, -1}, {1, 1, 1}}));
  EXPECT_TRUE(voxel_range(v, Box{{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}}).empty());
  EXPECT_THROW(parse_box("1,2,3"), Error);
  EXPECT_THROW(parse_box("1,2,3,4,5,x"), Error);
  const Box b = parse_box("-1,-0.5,0,1,0.5,1");
  EXPECT_EQ(b.lo[1], -0.5);
  EXPECT_EQ(b.hi[2], 1.0);
  nlohmann::json j = b;
  EXPECT_EQ(j.get<Box>().hi, b.hi);
  EXPECT_EQ(nlohmann::json::array({-1, -0.5, 0, 1, 0.5, 1}).get<Box>().lo, b.lo);
}

TEST(Editing, ComposeLastWriterWins) {
  auto target = RadianceVolume::filled({6, 6, 6}, {0, 0, 0, 0});
  auto a = RadianceVolume::filled({6, 6, 6}, {1, 1, 1, 1});
  auto b = RadianceVolume::filled({6, 6, 6}, {2, 2, 2, 2});
  const Box src = aligned_box(a, {0, 0, 0}, {3, 3, 3});
  const Box d1 = aligned_box(target, {0, 0, 0}, {3, 3, 3});
  const Box d2 = aligned_box(target, {2, 2, 2}, {3, 3, 3});
  auto out = compose({{a, src}, {b, src}}, target, {d1, d2});
  auto acc = out.values().accessor<float, 4>();
  EXPECT_EQ(acc[0][0][0][0], 1.0f);
  EXPECT_EQ(acc[0][2][2][2], 2.0f);  // overlap: later source
  EXPECT_EQ(acc[0][4][4][4], 2.0f);
  EXPECT_EQ(acc[0][5][5][5], 0.0f);
  EXPECT_THROW(compose({{a, src}}, target, {d1, d2}), Error);
}

TEST(Editing, EmptySampleDefaults) {
  auto values = torch::zeros({4, 3, 3, 3});
  values[3][1][2][0] = -7.0;
  values[0][1][2][0] = 0.5;
  auto e = default_empty_sample(RadianceVolume(values));
  EXPECT_EQ(e[3], -7.0f);
  EXPECT_EQ(e[0], 0.5f);
  auto p = sample_point(RadianceVolume(values), {0.0, 0.0, 0.0});
  EXPECT_EQ(p[3], 0.0f);
}

TEST(Editing, HarmonizeResamplesToScaleThreeAndRefines) {
  auto ckpt = scratch_dir("apps_harmonize");
  auto shallow_cfg = toy_pyramid(3);
  auto shallow = untrained_checkpoint(ckpt / "shallow", shallow_cfg, 1);
  auto v = sample_scene(shallow, 3).volume;
  try {
    harmonize(shallow, v);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kUnsupportedConfig);
  }

  auto cfg = toy_pyramid(3);
  cfg.num_scales = 5;
  auto stack = untrained_checkpoint(ckpt / "deep", cfg, 2);
  auto scene = sample_scene(stack, 4).volume;
  auto h1 = harmonize(stack, scene);
  EXPECT_EQ(h1.dims(), stack.schedule().volume_dims(4));
  auto h2 = harmonize(stack, h1);
  EXPECT_EQ(h2.dims(), h1.dims());
  EXPECT_TRUE(harmonize(stack, scene).bitwise_equal(h1));  // zero noise: deterministic
  EXPECT_FALSE(harmonize(stack, scene, 5).bitwise_equal(h1));
  std::filesystem::remove_all(ckpt);
}

// -- mesh -------------------------------------------------------------------

// Raw density whose activated value times voxel size is 0.5 exp(4 (r - |p|)).

RadianceVolume sphere_volume(int64_t res, double radius) {
  auto v = RadianceVolume::filled({res, res, res}, {0, 0, 0, 0});
  const double voxel = 2.0 / static_cast<double>(res);
  auto values = v.values().clone();
  auto acc = values.accessor<float, 4>();
  for (int64_t x = 0; x < res; ++x) {
    for (int64_t y = 0; y < res; ++y) {
      for (int64_t z = 0; z < res; ++z) {
        const auto c = v.voxel_center(x, y, z);
        const double d = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
        const double sigma = 0.5 * std::exp(4.0 * (radius - d)) / voxel;
        acc[3][x][y][z] = static_cast<float>(std::log(std::expm1(sigma)));
        acc[0][x][y][z] = static_cast<float>(c[0] > 0 ? 3.0 : -3.0);  // red on +x
      }
    }
  }
  return RadianceVolume(values);
}

TEST(Mesh, SphereIsClosedConsistentlyWoundAndOutward) {
  const double radius = 0.6;
  auto v = sphere_volume(24, radius);
  const Mesh mesh = export_mesh(v);
  ASSERT_GT(mesh.triangle_count(), 100u);
  ASSERT_EQ(mesh.colors.size(), mesh.vertices.size());

  std::map<std::pair<uint32_t, uint32_t>, int> directed;
  std::set<std::pair<uint32_t, uint32_t>> undirected;
  double signed_volume = 0.0;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const uint32_t a = f[k], b = f[(k + 1) % 3];
      ASSERT_NE(a, b);
      ++directed[{a, b}];
      undirected.insert({std::min(a, b), std::max(a, b)});
    }
    const auto& p = mesh.vertices[f[0]];
    const auto& q = mesh.vertices[f[1]];
    const auto& r = mesh.vertices[f[2]];
    signed_volume += (p[0] * (q[1] * r[2] - q[2] * r[1]) - p[1] * (q[0] * r[2] - q[2] * r[0]) +
                      p[2] * (q[0] * r[1] - q[1] * r[0])) /
                     6.0;
  }
  // Closed and consistently oriented: every directed edge once, its reverse once.
  for (const auto& [e, count] : directed) {
    ASSERT_EQ(count, 1);
    ASSERT_EQ(directed.count({e.second, e.first}), 1u);
  }
  const long chi = static_cast<long>(mesh.vertices.size()) - static_cast<long>(undirected.size()) +
                   static_cast<long>(mesh.faces.size());
  EXPECT_EQ(chi, 2);
  const double ball = 4.0 / 3.0 * M_PI * radius * radius * radius;
  EXPECT_NEAR(signed_volume, ball, 0.05 * ball);  // positive: normals point outward
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& p = mesh.vertices[i];
    const double d = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    EXPECT_NEAR(d, radius, 2.0 / 24.0);
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(mesh.colors[i][k], 0.0f);
      EXPECT_LE(mesh.colors[i][k], 1.0f);
    }
    if (p[0] > 0.2) EXPECT_GT(mesh.colors[i][0], 0.9f);
  }

  const auto stl = encode_stl(mesh);
  EXPECT_EQ(stl.size(), 84 + 50 * mesh.triangle_count());
  uint32_t count = 0;
  std::memcpy(&count, stl.data() + 80, 4);
  EXPECT_EQ(count, mesh.triangle_count());
  const auto obj = encode_obj(mesh);
  EXPECT_EQ(static_cast<size_t>(std::count(obj.begin(), obj.end(), '\n')),
            mesh.vertices.size() + mesh.faces.size() + (obj.rfind("#", 0) == 0 ? 1 : 0));
}

TEST(Mesh, EmptyAndThresholds) {
  auto empty = RadianceVolume::filled({6, 6, 6}, {0, 0, 0, -20});
  EXPECT_EQ(export_mesh(empty).triangle_count(), 0u);
  EXPECT_THROW(export_mesh(empty, 0.0), Error);
  auto v = sphere_volume(16, 0.5);
  EXPECT_GT(export_mesh(v, 0.5).triangle_count(), export_mesh(v, 4.0).triangle_count());
}

// -- final renders ------------------------------------------------------------

TEST(RenderFinal, MatchesCameraSizeAndRange) {
  auto ckpt = scratch_dir("apps_final");
  auto stack = untrained_checkpoint(ckpt, toy_pyramid(3), 3);
  auto scene = sample_scene(stack, 1).volume;
  Camera cam;
  cam.width = 20;
  cam.height = 12;
  cam.pose = look_at({0, -3.5, 1}, {0, 0, 0}, {0, 0, 1});
  auto img = render_final(stack, scene, cam, 16);
  ASSERT_EQ(img.sizes(), (std::vector<int64_t>{3, 12, 20}));
  EXPECT_GE(img.min().item<float>(), 0.0f);
  EXPECT_LE(img.max().item<float>(), 1.0f);
  std::filesystem::remove_all(ckpt);
}

}  // namespace
}  // namespace singrav
