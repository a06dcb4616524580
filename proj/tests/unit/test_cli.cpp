#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "singrav/apps.hpp"
#include "singrav/png_io.hpp"
#include "singrav/volume.hpp"

#ifndef SINGRAV_CLI_PATH
#error "SINGRAV_CLI_PATH must point at the singrav executable"
#endif

namespace singrav {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(testing::scratch_dir("cli"));
    testing::untrained_checkpoint(*root_ / "ckpt", testing::toy_pyramid(3), 4);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }

  RunResult run(const std::string& args) {
    const auto out = *root_ / "stdout.txt";
    const auto err = *root_ / "stderr.txt";
    const std::string cmd = "cd '" + root_->string() + "' && SINGRAV_CACHE='" + (*root_ / "cache").string() + "' '" +
                            std::string(SINGRAV_CLI_PATH) + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static fs::path* root_;
};

fs::path* CliTest::root_ = nullptr;

TEST_F(CliTest, GenerateWritesVolumesPreviewsAndSnapshot) {
  auto r = run("generate --checkpoint ckpt --seed 7 --count 3 -o gen");
  ASSERT_EQ(r.code, 0) << r.err;
  for (int s = 7; s <= 9; ++s) {
    const auto stem = *root_ / "gen" / ("scene_00000" + std::to_string(s));
    ASSERT_TRUE(fs::exists(stem.string() + ".sgrv"));
    EXPECT_NO_THROW(load_sgrv(stem.string() + ".sgrv"));
    EXPECT_EQ(slurp(stem.string() + ".png").substr(1, 3), "PNG");
  }
  EXPECT_EQ(json::parse(slurp(*root_ / "gen" / "index.json")).size(), 3u);
  auto snapshot = json::parse(slurp(*root_ / "gen" / "singrav_generate_config.json"));
  EXPECT_EQ(snapshot.at("command"), "generate");
  EXPECT_EQ(snapshot.at("args").at("seed"), 7);
  EXPECT_TRUE(snapshot.at("config").contains("pyramid"));

  // Same seed, same bytes.
  ASSERT_EQ(run("generate --checkpoint ckpt --seed 8 --count 1 --no-preview -o gen2").code, 0);
  EXPECT_EQ(slurp(*root_ / "gen2" / "scene_000008.sgrv"), slurp(*root_ / "gen" / "scene_000008.sgrv"));
}

TEST_F(CliTest, EditMoveMatchesLibrary) {
  ASSERT_EQ(run("generate --checkpoint ckpt --seed 3 --count 1 --no-preview -o scene").code, 0);
  const auto in = *root_ / "scene" / "scene_000003.sgrv";
  auto v = load_sgrv(in);
  // boxes of 4 voxels per axis on voxel faces, far corners apart
  const int64_t w = v.dims().w;
  ASSERT_GE(w, 9);
  const double s = 2.0 / static_cast<double>(w);
  auto box = [&](int i) {
    std::ostringstream os;
    os.precision(17);
    const double lo = -1.0 + i * s, hi = -1.0 + (i + 4) * s;
    os << lo << "," << lo << "," << lo << "," << hi << "," << hi << "," << hi;
    return os.str();
  };
  const int far = static_cast<int>(w) - 4;
  auto r = run("edit --volume scene/scene_000003.sgrv --op move --src=" + box(1) + " --dst=" + box(far) +
               " -o moved.sgrv");
  ASSERT_EQ(r.code, 0) << r.err;
  const Box src = parse_box(box(1)), dst = parse_box(box(far));
  auto expect = edit_remove(edit_duplicate(v, src, dst), src, default_empty_sample(v));
  EXPECT_TRUE(load_sgrv(*root_ / "moved.sgrv").bitwise_equal(expect));

  r = run("export-mesh --volume moved.sgrv --threshold 0.01 -o moved.obj");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(*root_ / "moved.obj").find("v "), std::string::npos);
  r = run("render --volume moved.sgrv -s view.width=20 -s view.height=12 --depth-out depth.png -o moved.png");
  ASSERT_EQ(r.code, 0) << r.err;
  auto img = decode_png_rgb(slurp(*root_ / "moved.png"));
  EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 12, 20}));
  EXPECT_TRUE(fs::exists(*root_ / "depth.png"));
}

TEST_F(CliTest, PrepareTrainEvaluate) {
  auto r = run("prepare --synthetic -s synthetic.volume_res=16 -s synthetic.samples=24 -s synthetic.rig.count=4 "
               "-s synthetic.rig.width=32 -s synthetic.rig.height=32 -o data");
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::exists(*root_ / "data" / "manifest.json"));
  r = run("train --data data -s pyramid.num_scales=3 -s pyramid.base_volume_res=8 -s pyramid.base_image_res=16 "
          "-s pyramid.max_image_res=null -s pyramid.layers=3 -s pyramid.norm=instance -s pyramid.samples_first=16 "
          "-s pyramid.samples_last=16 -s train.epochs_per_scale=2 -s train.recon_only_epochs=1 "
          "-s train.steps_per_epoch=1 -s 'train.adv_batch=[1,1,1]' -s 'train.recon_batch=[1,1,1]' "
          "-s train.swd.projections=4 --log-every 1 -o trained");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"completed_scales\""), std::string::npos);
  EXPECT_TRUE(fs::exists(*root_ / "trained" / "singrav_train_config.json"));

  r = run("evaluate --checkpoint trained --data data --views 4 --samples 3 --ray-samples 16 -o eval");
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = json::parse(slurp(*root_ / "eval" / "report.json"));
  EXPECT_TRUE(std::isfinite(report.at("sifid_mv").get<double>()));
  EXPECT_TRUE(std::isfinite(report.at("diversity_mv").get<double>()));
  EXPECT_EQ(report.at("per_view").size(), 4u);
}

TEST_F(CliTest, ExitCodesAndStructuredErrors) {
  auto r = run("render --bogus");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err.substr(0, r.err.find('\n'))).at("exit_code"), 2);
  r = run("");
  EXPECT_EQ(r.code, 2);
  r = run("edit --volume missing.sgrv --op remove --src 0,0,0,1,1,1 -o x.sgrv");
  EXPECT_EQ(r.code, 2);
  r = run("train --data data -s pyramid.no_such_key=1 -o t");
  EXPECT_EQ(r.code, 2) << r.err;

  std::ofstream(*root_ / "garbage.sgrv") << "definitely not a volume";
  r = run("export-mesh --volume garbage.sgrv -o g.stl");
  EXPECT_EQ(r.code, 1);
  auto err = json::parse(r.err.substr(0, r.err.find('\n')));
  EXPECT_EQ(err.at("exit_code"), 1);
  EXPECT_FALSE(err.at("message").get<std::string>().empty());

  fs::create_directories(*root_ / "empty_ckpt");
  r = run("generate --checkpoint empty_ckpt -o g");
  EXPECT_EQ(r.code, 1) << r.err;

  r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub :
       {"prepare", "train", "generate", "render", "animate", "edit", "export-mesh", "evaluate", "serve"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

}  // namespace
}  // namespace singrav
