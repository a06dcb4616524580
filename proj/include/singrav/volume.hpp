#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

namespace singrav {

/// Voxel counts along x, y and z (W, H, U).
struct Dims {
  int64_t w = 0;
  int64_t h = 0;
  int64_t u = 0;

  int64_t operator[](int axis) const { return axis == 0 ? w : (axis == 1 ? h : u); }
  int64_t count() const { return w * h * u; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Axis-aligned box in world units.
struct Bounds {
  std::array<double, 3> lo{-1.0, -1.0, -1.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};

  double extent(int axis) const { return hi[axis] - lo[axis]; }
  bool contains(const std::array<double, 3>& p) const;
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

inline constexpr int64_t kVolumeChannels = 4;

/// Discrete radiance volume: raw (pre-activation) color triple and density per
/// voxel, stored channel-first as a [4, W, H, U] tensor. Channels 0..2 are the
/// raw color, channel 3 the raw density.
///
/// The tensor handle is shared on copy; operations that modify voxels always
/// return a fresh volume.
class RadianceVolume {
 public:
  RadianceVolume() = default;
  explicit RadianceVolume(torch::Tensor values, Bounds bounds = {});

  static RadianceVolume filled(Dims dims, std::array<float, 4> value, Bounds bounds = {});

  const torch::Tensor& values() const { return values_; }
  const Bounds& bounds() const { return bounds_; }
  Dims dims() const;
  bool empty() const { return !values_.defined(); }

  /// World-space center of voxel (x, y, z).
  std::array<double, 3> voxel_center(int64_t x, int64_t y, int64_t z) const;
  std::array<double, 3> voxel_size() const;

  /// Throws if any value is NaN or infinite.
  void check_finite() const;

  RadianceVolume clone() const;
  bool bitwise_equal(const RadianceVolume& other) const;

 private:
  torch::Tensor values_;
  Bounds bounds_;
};

/// Normalized coordinate grid, [3, W, H, U]; entry (x, y, z) equals
/// 2 * (x/W - 1/2, y/H - 1/2, z/U - 1/2).
torch::Tensor make_csg_grid(Dims dims, torch::TensorOptions options = torch::kFloat32);

/// Trilinear field query. `points` is [P, 3] in world coordinates; returns
/// [P, C]. Queries outside the voxel-center lattice clamp to the boundary
/// value. Differentiable with respect to `values`.
torch::Tensor sample_trilinear(const torch::Tensor& values, const Bounds& bounds,
                               const torch::Tensor& points);
torch::Tensor sample_trilinear(const RadianceVolume& volume, const torch::Tensor& points);

/// Round half away from zero, used for every resolution in the schedule.
int64_t round_resolution(double value);

/// Resample a channel-first [C, W, H, U] or batched [B, C, W, H, U] grid to
/// new dims using the voxel-center convention with border clamping.
torch::Tensor resample_grid(const torch::Tensor& values, Dims dims);

RadianceVolume resample_volume(const RadianceVolume& volume, Dims dims);
RadianceVolume upsample_volume(const RadianceVolume& volume, double factor);
Dims scaled_dims(Dims dims, double factor);

// SGRV1: u32 little-endian header length, UTF-8 JSON header, then the raw
// f32le payload in x-major, channel-last order.
std::string encode_sgrv(const RadianceVolume& volume);
RadianceVolume decode_sgrv(const std::string& bytes);
void save_sgrv(const RadianceVolume& volume, const std::filesystem::path& path);
RadianceVolume load_sgrv(const std::filesystem::path& path);

}  // namespace singrav
