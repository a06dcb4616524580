#pragma once

#include <filesystem>
#include <string>

#include "singrav/dataset.hpp"
#include "singrav/pyramid.hpp"
#include "singrav/trainer.hpp"

namespace singrav::testing {

// N=3, 8^3 / 16^2 base, instance norm (batch size 1 friendly), short ray budgets.
inline PyramidConfig toy_pyramid(int layers = 5) {
  PyramidConfig c;
  c.num_scales = 3;
  c.base_volume_res = 8;
  c.base_image_res = 16;
  c.max_image_res.reset();
  c.layers = layers;
  c.norm = NormKind::kInstance;
  c.samples_first = 32;
  c.samples_last = 48;
  return c;
}

inline TrainConfig toy_train(int64_t epochs = 2, int64_t recon_epochs = 1, int64_t steps = 2) {
  TrainConfig t;
  t.epochs_per_scale = epochs;
  t.recon_only_epochs = recon_epochs;
  t.steps_per_epoch = steps;
  t.d_steps = 1;
  t.g_steps = 1;
  t.adv_batch = {2, 2, 1};
  t.recon_batch = {1, 1, 1};
  t.swd.projections = 8;
  t.swd.layers = {1, 6};
  return t;
}

inline SyntheticScene toy_scene(int64_t views = 4, int64_t image = 24, uint64_t seed = 3) {
  SyntheticOptions o;
  o.kind = SceneKind::kSpheres;
  o.volume_res = 24;
  o.sphere_count = 4;
  o.samples = 64;
  o.seed = seed;
  o.rig.count = views;
  o.rig.width = image;
  o.rig.height = image;
  o.rig.seed = seed;
  return make_synthetic_scene(o);
}

// Every scale frozen and saved without training; enough for plumbing tests.
inline GeneratorStack untrained_checkpoint(const std::filesystem::path& dir, PyramidConfig config,
                                           uint64_t seed = 1) {
  GeneratorStack stack(config, seed);
  CheckpointInfo info;
  info.pyramid = config;
  info.init_seed = seed;
  for (int n = 1; n <= config.num_scales; ++n) {
    freeze_scale(stack, n);
    info.completed_scales = n;
    save_scale(dir, stack, n, info);
  }
  return stack;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("singrav_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace singrav::testing
