#include "singrav/dataset.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "singrav/error.hpp"
#include "singrav/image.hpp"
#include "singrav/png_io.hpp"
#include "singrav/renderer.hpp"

namespace singrav {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kMaxDepthCode = 65535.0;

std::string view_stem(int64_t i) {
  std::ostringstream os;
  os << "view_" << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

// Holds an advisory exclusive lock on a file for the lifetime of the object.
class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fs::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    require(fd_ >= 0, Errc::kIo, "cannot open lock file " + path.string());
    ::flock(fd_, LOCK_EX);
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

torch::Tensor depth_codes(const torch::Tensor& depth, double scale) {
  return (depth.to(torch::kFloat64) / scale).round().clamp(0.0, kMaxDepthCode).to(torch::kInt32);
}

torch::Tensor depth_from_codes(const torch::Tensor& codes, double scale) {
  return (codes.to(torch::kFloat64) * scale).to(torch::kFloat32);
}

void append_tensor(std::string& out, const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  out.append(reinterpret_cast<const char*>(c.data_ptr<float>()), c.numel() * sizeof(float));
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) == 1,
          Errc::kIo, "sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

MultiViewDataset load_dataset(const fs::path& manifest_path) {
  require(fs::exists(manifest_path), Errc::kIo, "manifest not found: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(Errc::kFormat, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  require(manifest.value("version", 0) == 1, Errc::kFormat, "manifest version must be 1");
  require(manifest.contains("views") && manifest.at("views").is_array(), Errc::kFormat,
          "manifest needs a views array");
  const fs::path root = manifest_path.parent_path();

  MultiViewDataset dataset;
  if (manifest.contains("bounds")) {
    dataset.bounds.lo = manifest.at("bounds").at(0).get<std::array<double, 3>>();
    dataset.bounds.hi = manifest.at("bounds").at(1).get<std::array<double, 3>>();
  }

  std::vector<std::string> problems;
  int64_t index = 0;
  for (const auto& v : manifest.at("views")) {
    const std::string where = "view " + std::to_string(index++) + ": ";
    try {
      CameraView view;
      view.camera = v.at("camera").get<Camera>();
      view.camera.validate();
      const auto rgb_path = root / v.at("rgb").get<std::string>();
      require(fs::exists(rgb_path), Errc::kIo, "missing file " + rgb_path.string());
      view.rgb = read_png_rgb(rgb_path);
      require(view.rgb.size(1) == view.camera.height && view.rgb.size(2) == view.camera.width,
              Errc::kFormat, "image resolution does not match camera size");
      if (v.contains("depth") && !v.at("depth").is_null()) {
        const double scale = v.value("depth_scale", 0.0);
        require(scale > 0.0, Errc::kFormat, "depth_scale must be positive");
        const auto depth_path = root / v.at("depth").get<std::string>();
        require(fs::exists(depth_path), Errc::kIo, "missing file " + depth_path.string());
        auto depth = depth_from_codes(read_png_gray16(depth_path), scale);
        require(depth.size(0) == view.camera.height && depth.size(1) == view.camera.width,
                Errc::kFormat, "depth resolution does not match camera size");
        view.depth = depth;
      }
      dataset.views.push_back(std::move(view));
    } catch (const Error& e) {
      problems.push_back(where + e.what());
    } catch (const json::exception& e) {
      problems.push_back(where + "malformed entry: " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string report = "dataset validation failed (" + std::to_string(problems.size()) + " view(s)):";
    for (const auto& p : problems) report += "\n  " + p;
    fail(Errc::kFormat, report);
  }
  require(!dataset.views.empty(), Errc::kFormat, "manifest has no views");
  return dataset;
}

fs::path save_dataset(const MultiViewDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "views");
  json views = json::array();
  for (int64_t i = 0; i < dataset.size(); ++i) {
    const auto& view = dataset.views[i];
    const auto stem = view_stem(i);
    json entry = {{"rgb", "views/" + stem + ".png"}, {"camera", view.camera}};
    write_png_rgb8(dir / "views" / (stem + ".png"), view.rgb);
    if (view.depth) {
      const double scale = view.camera.far / kMaxDepthCode;
      write_png_gray16(dir / "views" / (stem + ".dpng"), depth_codes(*view.depth, scale));
      entry["depth"] = "views/" + stem + ".dpng";
      entry["depth_scale"] = scale;
    }
    views.push_back(entry);
  }
  json manifest = {{"version", 1},
                   {"bounds", {dataset.bounds.lo, dataset.bounds.hi}},
                   {"views", views}};
  const auto path = dir / "manifest.json";
  write_file_atomic(path, manifest.dump(2));
  return path;
}

std::string dataset_hash(const MultiViewDataset& dataset, const ScaleSchedule& schedule) {
  std::string blob;
  json meta = {{"bounds", {dataset.bounds.lo, dataset.bounds.hi}},
               {"image_res", schedule.image_res},
               {"final", schedule.final_image_res}};
  blob += meta.dump();
  for (const auto& view : dataset.views) {
    blob += json(view.camera).dump();
    append_tensor(blob, view.rgb);
    if (view.depth) append_tensor(blob, *view.depth);
  }
  return sha256_hex(blob);
}

ObservationPyramid build_pyramid(const MultiViewDataset& dataset, const ScaleSchedule& schedule,
                                 const std::optional<fs::path>& cache_root) {
  require(!dataset.views.empty(), Errc::kInvalidArgument, "dataset has no views");
  const bool has_depth = std::all_of(dataset.views.begin(), dataset.views.end(),
                                     [](const CameraView& v) { return v.depth.has_value(); });
  double max_far = 0.0;
  for (const auto& v : dataset.views) max_far = std::max(max_far, v.camera.far);
  const double depth_scale = max_far / kMaxDepthCode;

  ObservationPyramid pyramid;
  pyramid.content_hash = dataset_hash(dataset, schedule);
  const int levels = static_cast<int>(schedule.image_res.size()) + 1;

  std::optional<FileLock> lock;
  fs::path cache_dir;
  if (cache_root) {
    cache_dir = *cache_root / pyramid.content_hash;
    lock.emplace(cache_dir / ".lock");
  }

  for (int n = 1; n <= levels; ++n) {
    const auto& first = dataset.views.front().rgb;
    const auto [h, w] = scaled_image_size(first.size(1), first.size(2), schedule.image_res_at(n));
    ScaleObservations level;
    level.height = h;
    level.width = w;
    const fs::path scale_dir = cache_dir / ("scale_" + std::to_string(n));
    const bool cached = cache_root && fs::exists(scale_dir / "complete");

    std::vector<torch::Tensor> colors, depths;
    for (int64_t i = 0; i < dataset.size(); ++i) {
      const auto& view = dataset.views[i];
      level.cameras.push_back(view.camera.resized(w, h));
      const auto stem = view_stem(i);
      if (cached) {
        colors.push_back(read_png_rgb(scale_dir / (stem + ".png")));
        if (has_depth) {
          depths.push_back(depth_from_codes(read_png_gray16(scale_dir / (stem + ".dpng")), depth_scale));
        }
        continue;
      }
      auto color = quantize_rgb8(area_resize(view.rgb.to(torch::kFloat32), h, w));
      colors.push_back(color);
      torch::Tensor codes;
      if (has_depth) {
        codes = depth_codes(area_resize(view.depth->to(torch::kFloat32), h, w), depth_scale);
        depths.push_back(depth_from_codes(codes, depth_scale));
      }
      if (cache_root) {
        write_png_rgb8(scale_dir / (stem + ".png"), color);
        if (has_depth) write_png_gray16(scale_dir / (stem + ".dpng"), codes);
      }
    }
    if (cache_root && !cached) write_file_atomic(scale_dir / "complete", "ok\n");
    level.color = torch::stack(colors);
    if (has_depth) level.depth = torch::stack(depths);
    pyramid.scales.push_back(std::move(level));
  }
  return pyramid;
}

std::vector<Camera> hemisphere_rig(const RigOptions& options) {
  require(options.count >= 1, Errc::kInvalidArgument, "rig needs at least one camera");
  require(options.radius > 0.0, Errc::kInvalidArgument, "rig radius must be positive");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, options.jitter_std > 0.0 ? options.jitter_std : 1.0);
  const double near = options.near > 0.0 ? options.near : std::max(0.05, options.radius - std::sqrt(3.0));
  const double far = options.far > 0.0 ? options.far : options.radius + std::sqrt(3.0);

  std::vector<Camera> cameras;
  for (int64_t i = 0; i < options.count; ++i) {
    // z uniform in [0, 1] gives uniform area density on the hemisphere.
    const double z = unit(rng);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    std::array<double, 3> p{options.radius * s * std::cos(phi), options.radius * s * std::sin(phi),
                            options.radius * z};
    if (options.jitter_std > 0.0) {
      for (auto& c : p) c += jitter(rng);
    }
    Camera cam;
    cam.fov_deg = options.fov_deg;
    cam.width = options.width;
    cam.height = options.height;
    cam.near = near;
    cam.far = far;
    cam.pose = look_at(p, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0});
    cameras.push_back(cam);
  }
  return cameras;
}

SceneKind parse_scene_kind(const std::string& name) {
  if (name == "spheres") return SceneKind::kSpheres;
  if (name == "boxes") return SceneKind::kBoxes;
  if (name == "terrain-noise") return SceneKind::kTerrainNoise;
  if (name == "empty") return SceneKind::kEmpty;
  fail(Errc::kInvalidArgument, "unknown scene kind '" + name + "' (spheres|boxes|terrain-noise|empty)");
}

namespace {

constexpr double kAirRaw = -15.0;
constexpr double kSolidRaw = 120.0;

torch::Tensor color_logit(const torch::Tensor& c) {
  auto p = c.clamp(0.02, 0.98);
  return torch::log(p / (1.0 - p));
}

struct Grid {
  torch::Tensor x, y, z;  // [W, H, U] world coordinates of voxel centers
  double voxel = 0.0;
};

Grid voxel_grid(int64_t res, const Bounds& b) {
  auto axis = [&](int a) {
    return b.lo[a] + (torch::arange(res, torch::kFloat64) + 0.5) * (b.extent(a) / res);
  };
  auto g = torch::meshgrid({axis(0), axis(1), axis(2)}, "ij");
  return {g[0], g[1], g[2], b.extent(0) / res};
}

torch::Tensor assemble(const torch::Tensor& occupancy, const torch::Tensor& rgb) {
  auto sigma = kAirRaw + (kSolidRaw - kAirRaw) * occupancy;
  return torch::cat({color_logit(rgb), sigma.unsqueeze(0)}, 0).to(torch::kFloat32).contiguous();
}

torch::Tensor spheres_volume(const Grid& g, const SyntheticOptions& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto occ = torch::zeros_like(g.x);
  auto rgb = torch::full({3, g.x.size(0), g.x.size(1), g.x.size(2)}, 0.5, torch::kFloat64);
  const double soft = 0.35 * g.voxel;
  for (int64_t k = 0; k < o.sphere_count; ++k) {
    double cx = 0, cy = 0, cz = 0, r = 0.5;
    std::array<double, 3> color{0.85, 0.3, 0.2};
    if (o.sphere_count > 1) {
      cx = -0.6 + 1.2 * u(rng);
      cy = -0.6 + 1.2 * u(rng);
      cz = -0.6 + 1.0 * u(rng);
      r = 0.15 + 0.2 * u(rng);
      color = {0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng)};
    }
    auto dist = ((g.x - cx).pow(2) + (g.y - cy).pow(2) + (g.z - cz).pow(2)).sqrt();
    auto o_k = torch::sigmoid((r - dist) / soft);
    auto take = o_k > occ;
    for (int c = 0; c < 3; ++c) rgb[c] = torch::where(take, torch::full_like(occ, color[c]), rgb[c]);
    occ = torch::maximum(occ, o_k);
  }
  return assemble(occ, rgb);
}

torch::Tensor boxes_volume(const Grid& g, const SyntheticOptions& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double soft = 0.35 * g.voxel;
  auto slab = [&](const torch::Tensor& c, double lo, double hi) {
    return torch::sigmoid((c - lo) / soft) * torch::sigmoid((hi - c) / soft);
  };
  auto occ = slab(g.z, -1.0, -0.8);
  auto rgb = torch::stack({torch::full_like(occ, 0.45), torch::full_like(occ, 0.5), torch::full_like(occ, 0.35)});
  const int64_t count = std::max<int64_t>(1, o.sphere_count);
  for (int64_t k = 0; k < count; ++k) {
    const double cx = -0.6 + 1.2 * u(rng), cy = -0.6 + 1.2 * u(rng);
    const double hx = 0.08 + 0.15 * u(rng), hy = 0.08 + 0.15 * u(rng), top = -0.7 + 0.8 * u(rng);
    std::array<double, 3> color{0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 0.8 * u(rng)};
    auto o_k = slab(g.x, cx - hx, cx + hx) * slab(g.y, cy - hy, cy + hy) * slab(g.z, -0.85, top);
    auto take = o_k > occ;
    for (int c = 0; c < 3; ++c) rgb[c] = torch::where(take, torch::full_like(occ, color[c]), rgb[c]);
    occ = torch::maximum(occ, o_k);
  }
  return assemble(occ, rgb);
}

torch::Tensor terrain_volume(const Grid& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto height = torch::full_like(g.x, -0.5);
  for (int k = 0; k < 6; ++k) {
    const double amp = 0.25 / (1 + k), fx = 1.0 + 3.0 * k * u(rng), fy = 1.0 + 3.0 * k * u(rng);
    const double px = 2.0 * std::numbers::pi * u(rng), py = 2.0 * std::numbers::pi * u(rng);
    height = height + amp * torch::sin(fx * g.x + px) * torch::cos(fy * g.y + py);
  }
  auto occ = torch::sigmoid((height - g.z) / (0.35 * g.voxel));
  auto t = ((g.z + 1.0) / 1.2).clamp(0.0, 1.0);
  auto low = torch::stack({torch::full_like(t, 0.2), torch::full_like(t, 0.5), torch::full_like(t, 0.2)});
  auto mid = torch::stack({torch::full_like(t, 0.5), torch::full_like(t, 0.4), torch::full_like(t, 0.25)});
  auto high = torch::stack({torch::full_like(t, 0.9), torch::full_like(t, 0.9), torch::full_like(t, 0.92)});
  auto w_low = (1.0 - 2.0 * t).clamp(0.0, 1.0);
  auto w_high = (2.0 * t - 1.0).clamp(0.0, 1.0);
  auto rgb = w_low * low + (1.0 - w_low - w_high) * mid + w_high * high;
  return assemble(occ, rgb);
}

}  // namespace

SyntheticScene make_synthetic_scene(const SyntheticOptions& options) {
  require(options.volume_res >= 2, Errc::kInvalidArgument, "synthetic volume_res must be >= 2");
  Bounds bounds;
  std::mt19937_64 rng(options.seed);
  const Grid grid = voxel_grid(options.volume_res, bounds);
  torch::Tensor values;
  switch (options.kind) {
    case SceneKind::kSpheres: values = spheres_volume(grid, options, rng); break;
    case SceneKind::kBoxes: values = boxes_volume(grid, options, rng); break;
    case SceneKind::kTerrainNoise: values = terrain_volume(grid, rng); break;
    case SceneKind::kEmpty:
      values = assemble(torch::zeros_like(grid.x), torch::full({3, grid.x.size(0), grid.x.size(1), grid.x.size(2)}, 0.5,
                                                             torch::kFloat64));
      break;
  }
  SyntheticScene scene{RadianceVolume(values, bounds), {}};
  scene.dataset.bounds = bounds;
  RigOptions rig = options.rig;
  if (rig.seed == 0) rig.seed = options.seed;
  RaySampleSpec spec;
  spec.samples = options.samples;
  torch::NoGradGuard guard;
  for (const auto& cam : hemisphere_rig(rig)) {
    auto out = render(scene.volume, cam, spec);
    scene.dataset.views.push_back({cam, out.color.contiguous(), out.depth.contiguous()});
  }
  return scene;
}

}  // namespace singrav
