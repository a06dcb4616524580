#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "singrav/camera.hpp"
#include "singrav/pyramid.hpp"
#include "singrav/volume.hpp"

namespace singrav {

// ---------------------------------------------------------------------------
// Final-resolution rendering

/// Renders `volume` at the finest 3D scale's image height (matching the
/// camera's aspect), super-resolves with G_N and resizes to the camera size
/// when it differs from the super-resolver output. Colors clamped to [0, 1].
torch::Tensor render_final(GeneratorStack& stack, const RadianceVolume& volume, const Camera& camera,
                           int64_t samples = 0);

// ---------------------------------------------------------------------------
// Animation

struct AnimationConfig {
  double alpha = 0.58;  // weight of the original noise
  double xi = 0.45;     // momentum weight
  int64_t steps = 10;   // T, including the base frame
  int start_scale = 3;  // first scale receiving changes
  uint64_t seed = 0;    // drives the fresh Gaussian terms

  void validate(int volume_scales) const;
};

void to_json(nlohmann::json& j, const AnimationConfig& c);
void from_json(const nlohmann::json& j, AnimationConfig& c);

/// Noise random walk with momentum. Element 0 is `base`; scales below
/// start_scale are copied unchanged. `mu[t][n-1]` supplies the Gaussian term
/// for step t + 1 at scale n (entries below start_scale are ignored).
std::vector<NoiseStack> animate_noise(const NoiseStack& base, const AnimationConfig& config,
                                      const std::vector<std::vector<torch::Tensor>>& mu);

/// Same, with mu drawn from a generator seeded by config.seed.
std::vector<NoiseStack> animate_noise(const NoiseStack& base, const AnimationConfig& config);

/// One color frame [3, H, W] per noise stack. `final_resolution` routes
/// renders through the super-resolver.
std::vector<torch::Tensor> animate(GeneratorStack& stack, const NoiseStack& base,
                                   const AnimationConfig& config, const Camera& camera,
                                   int64_t samples = 0, bool final_resolution = false);

/// Uncompressed ustar archive holding frame_0000.png ... and index.json.
std::string encode_frame_archive(const std::vector<torch::Tensor>& frames, const nlohmann::json& meta);

/// Writes frame_XXXX.png files and index.json into `dir`.
void write_frames(const std::filesystem::path& dir, const std::vector<torch::Tensor>& frames,
                  const nlohmann::json& meta);

// ---------------------------------------------------------------------------
// Editing

/// Axis-aligned box in world coordinates. A voxel belongs to the box when its
/// center c satisfies lo <= c < hi on every axis.
struct Box {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};
};

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);

/// Parses "x0,y0,z0,x1,y1,z1".
Box parse_box(const std::string& text);

/// Raw voxel value (c_r, c_g, c_b, sigma) written into emptied regions.
using VoxelValue = std::array<float, 4>;

/// Half-open voxel index ranges [begin, end) per axis covered by a box.
struct VoxelRange {
  std::array<int64_t, 3> begin{};
  std::array<int64_t, 3> end{};

  std::array<int64_t, 3> extent() const {
    return {end[0] - begin[0], end[1] - begin[1], end[2] - begin[2]};
  }
  bool empty() const;
};

/// Rejects boxes with lo > hi or extending outside the volume bounds.
void validate_box(const RadianceVolume& volume, const Box& box);
VoxelRange voxel_range(const RadianceVolume& volume, const Box& box);

/// Trilinear raw value at a world point.
VoxelValue sample_point(const RadianceVolume& volume, const std::array<double, 3>& point);

/// Raw value of the voxel with the lowest density.
VoxelValue default_empty_sample(const RadianceVolume& volume);

RadianceVolume edit_remove(const RadianceVolume& volume, const Box& box, const VoxelValue& empty);
RadianceVolume edit_duplicate(const RadianceVolume& volume, const Box& src, const Box& dst);
RadianceVolume edit_move(const RadianceVolume& volume, const Box& src, const Box& dst,
                         const VoxelValue& empty);

struct ComposeSource {
  RadianceVolume volume;
  Box box;
};

/// Copies each source region into its destination box of `target`; later
/// entries overwrite earlier ones where destinations overlap.
RadianceVolume compose(const std::vector<ComposeSource>& sources, const RadianceVolume& target,
                       const std::vector<Box>& destinations);

/// Downscales an edited finest volume to scale-3 dims and re-runs the frozen
/// generators 4..N-1. Zero noise unless `fresh_noise_seed` is given.
RadianceVolume harmonize(GeneratorStack& stack, const RadianceVolume& edited,
                         std::optional<uint64_t> fresh_noise_seed = std::nullopt);

// ---------------------------------------------------------------------------
// Mesh export

struct Mesh {
  std::vector<std::array<float, 3>> vertices;
  std::vector<std::array<float, 3>> colors;
  std::vector<std::array<uint32_t, 3>> faces;

  size_t triangle_count() const { return faces.size(); }
};

/// Marching cubes over voxel centers on softplus(sigma) * voxel size at
/// `threshold`; vertex colors are the activated trilinear color.
Mesh export_mesh(const RadianceVolume& volume, double threshold = 0.5);

std::string encode_stl(const Mesh& mesh);
std::string encode_obj(const Mesh& mesh);

}  // namespace singrav
