#include "singrav/camera.hpp"

#include <cmath>
#include <numbers>

#include "singrav/error.hpp"

namespace singrav {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

}  // namespace

Mat4 identity_pose() {
  return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 fwd = sub(target, eye);
  require(dot(fwd, fwd) > 1e-24, Errc::kInvalidArgument, "look_at: eye coincides with target");
  const Vec3 f = normalized(fwd);
  Vec3 right = cross(f, up);
  if (dot(right, right) < 1e-12) {
    // Looking along the up axis; pick any perpendicular reference.
    right = cross(f, std::abs(f[1]) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0});
  }
  right = normalized(right);
  const Vec3 true_up = cross(right, f);
  return {right[0], true_up[0], -f[0], eye[0],
          right[1], true_up[1], -f[1], eye[1],
          right[2], true_up[2], -f[2], eye[2],
          0, 0, 0, 1};
}

double Camera::focal() const {
  if (focal_px) return *focal_px;
  return 0.5 * static_cast<double>(height) / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
}

void Camera::validate() const {
  require(width >= 1 && height >= 1, Errc::kInvalidArgument, "camera size must be >= 1");
  require(near > 0.0 && far > near, Errc::kInvalidArgument, "camera requires 0 < near < far");
  if (focal_px) {
    require(*focal_px > 0.0, Errc::kInvalidArgument, "focal length must be positive");
  } else {
    require(fov_deg > 0.0 && fov_deg < 180.0, Errc::kInvalidArgument,
            "field of view must be in (0, 180) degrees");
  }
  for (double v : pose) {
    require(std::isfinite(v), Errc::kInvalidArgument, "camera pose contains non-finite values");
  }
  require(pose[12] == 0.0 && pose[13] == 0.0 && pose[14] == 0.0 && pose[15] == 1.0,
          Errc::kInvalidArgument, "camera pose bottom row must be [0, 0, 0, 1]");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double d = 0.0;
      for (int k = 0; k < 3; ++k) d += pose[4 * k + i] * pose[4 * k + j];
      require(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-5, Errc::kInvalidArgument,
              "camera pose rotation is not orthonormal");
    }
  }
}

Camera Camera::resized(int64_t new_width, int64_t new_height) const {
  Camera c = *this;
  if (c.focal_px) *c.focal_px *= static_cast<double>(new_height) / static_cast<double>(height);
  c.width = new_width;
  c.height = new_height;
  return c;
}

void to_json(nlohmann::json& j, const Camera& camera) {
  j = nlohmann::json{{"width", camera.width}, {"height", camera.height}, {"near", camera.near},
                     {"far", camera.far},     {"pose_c2w", camera.pose}};
  if (camera.focal_px) {
    j["focal_px"] = *camera.focal_px;
  } else {
    j["fov_deg"] = camera.fov_deg;
  }
}

void from_json(const nlohmann::json& j, Camera& camera) {
  camera = Camera{};
  if (j.contains("focal_px")) camera.focal_px = j.at("focal_px").get<double>();
  if (j.contains("fov_deg")) camera.fov_deg = j.at("fov_deg").get<double>();
  require(j.contains("fov_deg") || j.contains("focal_px"), Errc::kFormat,
          "camera needs fov_deg or focal_px");
  camera.width = j.at("width").get<int64_t>();
  camera.height = j.at("height").get<int64_t>();
  camera.near = j.at("near").get<double>();
  camera.far = j.at("far").get<double>();
  const auto& pose = j.at("pose_c2w");
  require(pose.is_array() && pose.size() == 16, Errc::kFormat,
          "pose_c2w must hold 16 row-major numbers");
  for (int i = 0; i < 16; ++i) camera.pose[i] = pose.at(i).get<double>();
}

namespace {

Rays rays_from_pixel_coords(const Camera& camera, const torch::Tensor& rows,
                            const torch::Tensor& cols, torch::Dtype dtype) {
  camera.validate();
  const double f = camera.focal();
  const double cx = 0.5 * static_cast<double>(camera.width);
  const double cy = 0.5 * static_cast<double>(camera.height);
  auto x = (cols.to(torch::kFloat64) + 0.5 - cx) / f;
  auto y = -(rows.to(torch::kFloat64) + 0.5 - cy) / f;
  auto dirs_cam = torch::stack({x, y, -torch::ones_like(x)}, 1);
  const auto& p = camera.pose;
  auto rot = torch::tensor({p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]},
                           torch::kFloat64)
                 .view({3, 3});
  auto dirs = torch::matmul(dirs_cam, rot.t());
  dirs = dirs / dirs.norm(2, 1, true);
  auto origin = torch::tensor({p[3], p[7], p[11]}, torch::kFloat64);
  auto origins = origin.unsqueeze(0).expand({dirs.size(0), 3}).contiguous();
  return {origins.to(dtype), dirs.to(dtype)};
}

}  // namespace

Rays generate_rays(const Camera& camera, torch::Dtype dtype) {
  auto idx = torch::arange(camera.width * camera.height, torch::kLong);
  return generate_rays(camera, idx, dtype);
}

Rays generate_rays(const Camera& camera, const torch::Tensor& pixels, torch::Dtype dtype) {
  auto rows = torch::div(pixels, camera.width, "floor");
  auto cols = pixels - rows * camera.width;
  return rays_from_pixel_coords(camera, rows, cols, dtype);
}

Rays generate_rays_window(const Camera& camera, int64_t row0, int64_t col0, int64_t rows,
                          int64_t cols, torch::Dtype dtype) {
  require(row0 >= 0 && col0 >= 0 && row0 + rows <= camera.height && col0 + cols <= camera.width,
          Errc::kInvalidArgument, "ray window exceeds the image");
  auto r = torch::arange(row0, row0 + rows, torch::kLong).view({rows, 1}).expand({rows, cols});
  auto c = torch::arange(col0, col0 + cols, torch::kLong).view({1, cols}).expand({rows, cols});
  return rays_from_pixel_coords(camera, r.reshape({-1}), c.reshape({-1}), dtype);
}

}  // namespace singrav
