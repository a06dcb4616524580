#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "singrav/camera.hpp"
#include "singrav/pyramid.hpp"
#include "singrav/volume.hpp"

namespace singrav {

/// Multi-view RGB-D observations of one scene.
struct MultiViewDataset {
  Bounds bounds;
  std::vector<CameraView> views;

  int64_t size() const { return static_cast<int64_t>(views.size()); }
};

/// Manifest JSON:
///   {version: 1, bounds: [[x,y,z],[x,y,z]],
///    views: [{rgb, depth, depth_scale,
///             camera: {fov_deg, width, height, near, far, pose_c2w: [16]}}]}
/// Paths are relative to the manifest. Depth PNGs are 16-bit grayscale and
/// decode as code * depth_scale world units.
MultiViewDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes images under `dir/views/` and `dir/manifest.json`; returns the
/// manifest path. Depth is quantized with a per-view scale of far / 65535.
std::filesystem::path save_dataset(const MultiViewDataset& dataset, const std::filesystem::path& dir);

/// One resized level of the observation pyramid.
struct ScaleObservations {
  int64_t height = 0;
  int64_t width = 0;
  torch::Tensor color;   // [m, 3, H, W]
  torch::Tensor depth;   // [m, H, W] world units; undefined if the dataset has no depth
  std::vector<Camera> cameras;
};

/// Resized observations per scale, index i holding scale i + 1 (N entries).
struct ObservationPyramid {
  std::vector<ScaleObservations> scales;
  std::string content_hash;

  const ScaleObservations& at(int scale) const { return scales.at(scale - 1); }
  ScaleObservations& at(int scale) { return scales.at(scale - 1); }
};

/// Area-averaged color and depth at every schedule resolution. Values are
/// quantized exactly as the PNG cache stores them, so cached and fresh builds
/// agree bit for bit. With a cache root the levels are stored under
/// `<root>/<sha256>/scale_<n>/view_<i>.{png,dpng}`.
ObservationPyramid build_pyramid(const MultiViewDataset& dataset, const ScaleSchedule& schedule,
                                 const std::optional<std::filesystem::path>& cache_root = std::nullopt);

/// SHA-256 of the dataset content (images, depths, cameras, bounds) and the schedule.
std::string dataset_hash(const MultiViewDataset& dataset, const ScaleSchedule& schedule);

std::string sha256_hex(const std::string& bytes);

struct RigOptions {
  int64_t count = 200;
  double radius = 3.5;
  double fov_deg = 33.40;
  uint64_t seed = 0;
  double jitter_std = 0.0;
  int64_t width = 64;
  int64_t height = 64;
  double near = 0.0;  // 0 selects radius - sqrt(3)
  double far = 0.0;   // 0 selects radius + sqrt(3)
};

/// Cameras uniformly distributed on the upper (z >= 0) hemisphere, each
/// looking at the origin with +Z up; optional Gaussian jitter of the position.
std::vector<Camera> hemisphere_rig(const RigOptions& options);

enum class SceneKind { kSpheres, kBoxes, kTerrainNoise, kEmpty };

SceneKind parse_scene_kind(const std::string& name);

struct SyntheticOptions {
  SceneKind kind = SceneKind::kSpheres;
  int64_t volume_res = 32;
  int64_t sphere_count = 5;   // 1 places a single sphere of radius 0.5 at the origin
  RigOptions rig;
  int64_t samples = 128;
  uint64_t seed = 0;
};

struct SyntheticScene {
  RadianceVolume volume;
  MultiViewDataset dataset;
};

/// Procedural ground-truth volume rendered from a hemisphere rig.
SyntheticScene make_synthetic_scene(const SyntheticOptions& options);

}  // namespace singrav
