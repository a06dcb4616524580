#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "singrav/error.hpp"
#include "singrav/volume.hpp"

namespace singrav {
namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return Errc::kIo;
}

TEST(CsgGrid, Examples) {
  auto g = make_csg_grid({2, 2, 2});
  EXPECT_EQ(g[0][0][0][0].item<float>(), -1.0f);
  EXPECT_EQ(g[1][0][0][0].item<float>(), -1.0f);
  EXPECT_EQ(g[2][0][0][0].item<float>(), -1.0f);
  auto h = make_csg_grid({4, 4, 4});
  for (int a = 0; a < 3; ++a) EXPECT_EQ(h[a][2][2][2].item<float>(), 0.0f);
  auto k = make_csg_grid({5, 4, 2});
  EXPECT_FLOAT_EQ(k[0][3][1][0].item<float>(), 0.2f);
  EXPECT_EQ(k[1][3][1][0].item<float>(), -0.5f);
  EXPECT_EQ(k[2][3][1][0].item<float>(), -1.0f);
}

TEST(CsgGrid, ExhaustiveUpToEight) {
  for (int64_t w = 1; w <= 8; ++w) {
    for (int64_t h = 1; h <= 8; ++h) {
      for (int64_t u = 1; u <= 8; ++u) {
        auto g = make_csg_grid({w, h, u}).contiguous();
        ASSERT_EQ(g.sizes(), (std::vector<int64_t>{3, w, h, u}));
        auto acc = g.accessor<float, 4>();
        const int64_t n[3] = {w, h, u};
        for (int64_t x = 0; x < w; ++x) {
          for (int64_t y = 0; y < h; ++y) {
            for (int64_t z = 0; z < u; ++z) {
              const int64_t idx[3] = {x, y, z};
              for (int a = 0; a < 3; ++a) {
                const float want =
                    static_cast<float>(2.0 * (static_cast<double>(idx[a]) / static_cast<double>(n[a]) - 0.5));
                ASSERT_EQ(acc[a][x][y][z], want);
              }
            }
          }
        }
      }
    }
  }
}

TEST(Volume, ConstructionInvariants) {
  EXPECT_EQ(code_of([] { RadianceVolume(torch::zeros({3, 4, 4, 4})); }), Errc::kInvalidArgument);
  EXPECT_EQ(code_of([] { RadianceVolume(torch::zeros({4, 1, 4, 4})); }), Errc::kInvalidArgument);
  EXPECT_EQ(code_of([] { RadianceVolume(torch::zeros({4, 2, 2, 2}), Bounds{{0, 0, 0}, {0, 1, 1}}); }),
            Errc::kInvalidArgument);
  auto bad = torch::zeros({4, 2, 2, 2});
  bad[1][1][0][1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(RadianceVolume(bad).check_finite(), Error);
  auto v = RadianceVolume::filled({2, 3, 4}, {1, 2, 3, 4});
  EXPECT_EQ(v.dims(), (Dims{2, 3, 4}));
  const auto c = v.voxel_center(0, 0, 3);
  EXPECT_DOUBLE_EQ(c[0], -0.5);
  EXPECT_DOUBLE_EQ(c[1], -1.0 + 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(c[2], 0.75);
}

TEST(Trilinear, ExactAtCentersAndMeanAtMidpoints) {
  auto values = torch::randn({4, 4, 5, 3}, at::detail::createCPUGenerator(1));
  RadianceVolume v(values, Bounds{{-1, -2, 0}, {3, 2, 1}});
  std::vector<float> pts;
  for (int64_t x = 0; x < 4; ++x) {
    for (int64_t y = 0; y < 5; ++y) {
      for (int64_t z = 0; z < 3; ++z) {
        const auto c = v.voxel_center(x, y, z);
        pts.insert(pts.end(), {static_cast<float>(c[0]), static_cast<float>(c[1]), static_cast<float>(c[2])});
      }
    }
  }
  auto out = sample_trilinear(v, torch::tensor(pts).view({-1, 3}).to(torch::kFloat64));
  auto expect = values.permute({1, 2, 3, 0}).reshape({-1, 4}).to(torch::kFloat64);
  EXPECT_LT((out - expect).abs().max().item<double>(), 1e-6);

  const auto a = v.voxel_center(1, 2, 1);
  const auto b = v.voxel_center(2, 2, 1);
  auto mid = sample_trilinear(v, torch::tensor({(a[0] + b[0]) / 2, a[1], a[2]}, torch::kFloat64).view({1, 3}));
  auto mean = (values.index({torch::indexing::Slice(), 1, 2, 1}) + values.index({torch::indexing::Slice(), 2, 2, 1})) / 2;
  EXPECT_LT((mid[0].to(torch::kFloat32) - mean).abs().max().item<float>(), 1e-6f);
}

TEST(Trilinear, MatchesNeighborOracleAndClampsOutside) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    auto values = torch::randn({4, 4, 4, 4}, at::detail::createCPUGenerator(rng()), torch::kFloat64);
    RadianceVolume v(values);
    oracle::Grid g(values);
    std::vector<double> pts;
    for (int i = 0; i < 32; ++i) pts.insert(pts.end(), {u(rng), u(rng), u(rng)});
    pts.insert(pts.end(), {1.7, -3.0, 0.2});  // outside: clamped
    auto out = sample_trilinear(v, torch::tensor(pts).view({-1, 3}));
    for (int64_t i = 0; i < out.size(0); ++i) {
      const auto want = oracle::trilinear(g, {pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]});
      for (int c = 0; c < 4; ++c) ASSERT_NEAR(out[i][c].item<double>(), want[c], 1e-6);
    }
  }
}

TEST(Trilinear, GradientFlowsToValues) {
  auto values = torch::randn({4, 3, 3, 3}).requires_grad_(true);
  auto out = sample_trilinear(values, Bounds{}, torch::rand({10, 3}) * 2 - 1);
  out.sum().backward();
  ASSERT_TRUE(values.grad().defined());
  // Each query distributes total weight 1 per channel.
  EXPECT_NEAR(values.grad()[0].sum().item<float>(), 10.0f, 1e-4f);
}

TEST(Resample, RoundingAndUpsampling) {
  EXPECT_EQ(round_resolution(40 * 4.0 / 3.0), 53);
  EXPECT_EQ(round_resolution(2.5), 3);
  EXPECT_EQ(round_resolution(-2.5), -3);
  EXPECT_EQ(scaled_dims({40, 40, 40}, 4.0 / 3.0), (Dims{53, 53, 53}));

  auto values = torch::randn({4, 5, 6, 7});
  RadianceVolume v(values);
  auto same = upsample_volume(v, 1.0);
  EXPECT_EQ(same.dims(), v.dims());
  EXPECT_TRUE(torch::allclose(same.values(), values, 0, 1e-6));

  auto c = RadianceVolume::filled({4, 4, 4}, {0.5f, -2.0f, 3.0f, 7.0f});
  for (double f : {1.3, 4.0 / 3.0, 2.0, 3.7}) {
    auto up = upsample_volume(c, f);
    EXPECT_EQ(up.dims(), scaled_dims(c.dims(), f));
    for (int ch = 0; ch < 4; ++ch) {
      EXPECT_LT((up.values()[ch] - c.values()[ch][0][0][0]).abs().max().item<float>(), 1e-6f);
    }
  }
  auto batched = resample_grid(torch::randn({2, 4, 3, 3, 3}), {5, 4, 6});
  EXPECT_EQ(batched.sizes(), (std::vector<int64_t>{2, 4, 5, 4, 6}));
}

TEST(Sgrv, RoundTripsBitExactly) {
  auto values = torch::randn({4, 3, 5, 2});
  values[0][0][0][0] = -0.0f;
  values[3][2][4][1] = std::numeric_limits<float>::denorm_min();
  RadianceVolume v(values, Bounds{{-2, -1, 0}, {2, 1, 3}});
  const auto bytes = encode_sgrv(v);
  ASSERT_EQ(bytes.size() >= 4, true);
  uint32_t len = 0;
  std::memcpy(&len, bytes.data(), 4);
  auto header = nlohmann::json::parse(bytes.substr(4, len));
  EXPECT_EQ(header.at("magic"), "SGRV1");
  EXPECT_EQ(header.at("dims"), nlohmann::json::array({3, 5, 2}));
  EXPECT_EQ(header.at("channels"), 4);
  EXPECT_EQ(header.at("dtype"), "f32le");
  EXPECT_EQ(bytes.size(), 4 + len + 3 * 5 * 2 * 4 * sizeof(float));
  // x-major, channel-last: the second float is channel 1 of voxel (0,0,0)
  float second = 0;
  std::memcpy(&second, bytes.data() + 4 + len + sizeof(float), sizeof(float));
  EXPECT_EQ(second, values[1][0][0][0].item<float>());

  auto back = decode_sgrv(bytes);
  EXPECT_TRUE(back.bitwise_equal(v));
  EXPECT_EQ(back.bounds(), v.bounds());

  auto dir = testing::scratch_dir("sgrv");
  save_sgrv(v, dir / "v.sgrv");
  EXPECT_TRUE(load_sgrv(dir / "v.sgrv").bitwise_equal(v));
  std::filesystem::remove_all(dir);
}

TEST(Sgrv, RejectsDamagedFiles) {
  RadianceVolume v(torch::randn({4, 2, 2, 2}));
  auto bytes = encode_sgrv(v);
  EXPECT_EQ(code_of([&] { decode_sgrv(bytes.substr(0, bytes.size() - 1)); }), Errc::kFormat);
  EXPECT_EQ(code_of([&] { decode_sgrv("ab"); }), Errc::kFormat);
  auto wrong = bytes;
  const auto at = wrong.find("SGRV1");
  wrong[at + 4] = '2';
  EXPECT_EQ(code_of([&] { decode_sgrv(wrong); }), Errc::kFormat);
  EXPECT_EQ(code_of([&] { load_sgrv("/nonexistent/file.sgrv"); }), Errc::kIo);
}

}  // namespace
}  // namespace singrav
