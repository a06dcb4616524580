#pragma once

#include <array>
#include <optional>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace singrav {

using Mat4 = std::array<double, 16>;  // row-major

Mat4 identity_pose();
Mat4 look_at(const std::array<double, 3>& eye, const std::array<double, 3>& target,
             const std::array<double, 3>& up);

/// Pinhole camera. The camera looks down its local -Z axis with +Y up and +X
/// right; `pose` maps camera coordinates to world coordinates.
struct Camera {
  double fov_deg = 33.40;               // vertical field of view
  std::optional<double> focal_px;       // overrides fov_deg when set
  int64_t width = 32;
  int64_t height = 32;
  Mat4 pose = identity_pose();
  double near = 1.5;
  double far = 5.5;

  double focal() const;
  std::array<double, 3> position() const { return {pose[3], pose[7], pose[11]}; }
  std::array<double, 3> forward() const { return {-pose[2], -pose[6], -pose[10]}; }

  /// Throws invalid-argument for a non-rigid pose or bad near/far/size.
  void validate() const;

  /// Same pose and field of view at a different image size.
  Camera resized(int64_t new_width, int64_t new_height) const;
};

void to_json(nlohmann::json& j, const Camera& camera);
void from_json(const nlohmann::json& j, Camera& camera);

/// One ray per pixel, row-major over (row, col).
struct Rays {
  torch::Tensor origins;     // [R, 3]
  torch::Tensor directions;  // [R, 3], unit length
  int64_t size() const { return origins.size(0); }
};

/// Rays through the centers of every pixel.
Rays generate_rays(const Camera& camera, torch::Dtype dtype = torch::kFloat32);

/// Rays through selected pixel centers; `pixels` holds flat row-major indices.
Rays generate_rays(const Camera& camera, const torch::Tensor& pixels,
                   torch::Dtype dtype = torch::kFloat32);

/// Rays for the rectangular window [row0, row0+rows) x [col0, col0+cols).
Rays generate_rays_window(const Camera& camera, int64_t row0, int64_t col0, int64_t rows,
                          int64_t cols, torch::Dtype dtype = torch::kFloat32);

/// A camera paired with its observation. `rgb` is [3, H, W] in [0, 1];
/// `depth` is [H, W] in world units.
struct CameraView {
  Camera camera;
  torch::Tensor rgb;
  std::optional<torch::Tensor> depth;
};

}  // namespace singrav
