#include "singrav/apps.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "mc_tables.hpp"
#include "singrav/error.hpp"
#include "singrav/image.hpp"
#include "singrav/png_io.hpp"
#include "singrav/renderer.hpp"

namespace singrav {

using nlohmann::json;

torch::Tensor render_final(GeneratorStack& stack, const RadianceVolume& volume, const Camera& camera,
                           int64_t samples) {
  torch::NoGradGuard guard;
  auto& sr = stack.super_resolver();
  const auto [h, w] = scaled_image_size(camera.height, camera.width, sr->input_res());
  RaySampleSpec spec;
  spec.samples = samples > 0 ? samples : stack.schedule().ray_samples.back();
  auto low = render(volume, camera.resized(w, h), spec).color;
  auto out = super_resolve(sr, low).clamp(0.0, 1.0);
  if (out.size(1) != camera.height || out.size(2) != camera.width) {
    out = bilinear_resize(out, camera.height, camera.width).clamp(0.0, 1.0);
  }
  return out.contiguous();
}

// ---------------------------------------------------------------------------

void AnimationConfig::validate(int volume_scales) const {
  require(alpha >= 0.0 && alpha <= 1.0, Errc::kInvalidArgument, "alpha must lie in [0, 1]");
  require(xi >= 0.0 && xi <= 1.0, Errc::kInvalidArgument, "xi must lie in [0, 1]");
  require(steps >= 1, Errc::kInvalidArgument, "steps must be >= 1");
  require(start_scale >= 1 && start_scale <= volume_scales, Errc::kInvalidArgument,
          "start_scale must lie in [1, " + std::to_string(volume_scales) + "]");
}

void to_json(json& j, const AnimationConfig& c) {
  j = json{{"alpha", c.alpha}, {"xi", c.xi}, {"steps", c.steps}, {"start_scale", c.start_scale},
           {"seed", c.seed}};
}

void from_json(const json& j, AnimationConfig& c) {
  for (const auto& [key, _] : j.items()) {
    require(key == "alpha" || key == "xi" || key == "steps" || key == "start_scale" || key == "seed",
            Errc::kInvalidArgument, "unknown animation key: " + key);
  }
  AnimationConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.xi = j.value("xi", d.xi);
  c.steps = j.value("steps", d.steps);
  c.start_scale = j.value("start_scale", d.start_scale);
  c.seed = j.value("seed", d.seed);
}

std::vector<NoiseStack> animate_noise(const NoiseStack& base, const AnimationConfig& config,
                                      const std::vector<std::vector<torch::Tensor>>& mu) {
  config.validate(base.scales());
  require(static_cast<int64_t>(mu.size()) >= config.steps - 1, Errc::kInvalidArgument,
          "animate_noise: need one mu set per step");
  std::vector<NoiseStack> out{base.clone()};
  NoiseStack previous = base.clone();  // z^(0) := z^(1)
  for (int64_t t = 1; t < config.steps; ++t) {
    const NoiseStack& current = out.back();
    NoiseStack next = current.clone();
    for (int n = config.start_scale; n <= base.scales(); ++n) {
      const auto& m = mu[t - 1].at(n - 1);
      require(m.sizes() == base.z[n - 1].sizes(), Errc::kInvalidArgument,
              "animate_noise: mu shape mismatch at scale " + std::to_string(n));
      auto delta = config.xi * (current.z[n - 1] - previous.z[n - 1]) + (1.0 - config.xi) * m;
      next.z[n - 1] = config.alpha * base.z[n - 1] + (1.0 - config.alpha) * (current.z[n - 1] + delta);
    }
    previous = current.clone();
    out.push_back(std::move(next));
  }
  return out;
}

std::vector<NoiseStack> animate_noise(const NoiseStack& base, const AnimationConfig& config) {
  config.validate(base.scales());
  auto gen = at::detail::createCPUGenerator(config.seed);
  std::vector<std::vector<torch::Tensor>> mu;
  for (int64_t t = 1; t < config.steps; ++t) {
    std::vector<torch::Tensor> step(base.scales());
    for (int n = config.start_scale; n <= base.scales(); ++n) {
      step[n - 1] = torch::randn(base.z[n - 1].sizes(), gen, base.z[n - 1].options());
    }
    mu.push_back(std::move(step));
  }
  return animate_noise(base, config, mu);
}

std::vector<torch::Tensor> animate(GeneratorStack& stack, const NoiseStack& base,
                                   const AnimationConfig& config, const Camera& camera, int64_t samples,
                                   bool final_resolution) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> frames;
  RaySampleSpec spec;
  spec.samples = samples > 0 ? samples : stack.schedule().ray_samples.back();
  for (const auto& noise : animate_noise(base, config)) {
    auto scene = sample_scene(stack, noise);
    frames.push_back(final_resolution ? render_final(stack, scene.volume, camera, spec.samples)
                                      : render(scene.volume, camera, spec).color.contiguous());
  }
  return frames;
}

namespace {

std::string frame_name(size_t i) {
  std::ostringstream os;
  os << "frame_" << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

json frame_index(const std::vector<torch::Tensor>& frames, const json& meta) {
  json names = json::array();
  for (size_t i = 0; i < frames.size(); ++i) names.push_back(frame_name(i));
  json index = meta.is_object() ? meta : json::object();
  index["frames"] = names;
  index["count"] = frames.size();
  if (!frames.empty()) {
    index["width"] = frames.front().size(2);
    index["height"] = frames.front().size(1);
  }
  return index;
}

void octal_field(char* dst, size_t width, uint64_t value) {
  std::ostringstream os;
  os << std::oct << std::setw(static_cast<int>(width - 1)) << std::setfill('0') << value;
  std::memcpy(dst, os.str().data(), width - 1);
  dst[width - 1] = '\0';
}

void tar_append(std::string& out, const std::string& name, const std::string& data) {
  require(name.size() < 100, Errc::kInvalidArgument, "tar entry name too long");
  char header[512];
  std::memset(header, 0, sizeof header);
  std::memcpy(header, name.data(), name.size());
  octal_field(header + 100, 8, 0644);
  octal_field(header + 108, 8, 0);
  octal_field(header + 116, 8, 0);
  octal_field(header + 124, 12, data.size());
  octal_field(header + 136, 12, 0);
  header[156] = '0';
  std::memcpy(header + 257, "ustar", 6);
  std::memcpy(header + 263, "00", 2);
  std::memset(header + 148, ' ', 8);
  unsigned sum = 0;
  for (unsigned char c : header) sum += c;
  octal_field(header + 148, 7, sum);
  header[155] = ' ';
  out.append(header, sizeof header);
  out += data;
  out.append((512 - data.size() % 512) % 512, '\0');
}

}  // namespace

std::string encode_frame_archive(const std::vector<torch::Tensor>& frames, const json& meta) {
  std::string out;
  for (size_t i = 0; i < frames.size(); ++i) tar_append(out, frame_name(i), encode_png_rgb8(frames[i]));
  tar_append(out, "index.json", frame_index(frames, meta).dump(2));
  out.append(1024, '\0');
  return out;
}

void write_frames(const std::filesystem::path& dir, const std::vector<torch::Tensor>& frames,
                  const json& meta) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < frames.size(); ++i) write_png_rgb8(dir / frame_name(i), frames[i]);
  write_file_atomic(dir / "index.json", frame_index(frames, meta).dump(2));
}

// ---------------------------------------------------------------------------

void to_json(json& j, const Box& b) { j = json{{"min", b.lo}, {"max", b.hi}}; }

void from_json(const json& j, Box& b) {
  if (j.is_array()) {
    require(j.size() == 6, Errc::kInvalidArgument, "box arrays need 6 numbers");
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = j.at(a).get<double>();
      b.hi[a] = j.at(a + 3).get<double>();
    }
    return;
  }
  b.lo = j.at("min").get<std::array<double, 3>>();
  b.hi = j.at("max").get<std::array<double, 3>>();
}

Box parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      require(used == item.size(), Errc::kInvalidArgument, "bad number");
    } catch (const std::logic_error&) {
      fail(Errc::kInvalidArgument, "malformed box '" + text + "'");
    }
  }
  require(v.size() == 6, Errc::kInvalidArgument, "box needs x0,y0,z0,x1,y1,z1, got '" + text + "'");
  return Box{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

bool VoxelRange::empty() const {
  for (int a = 0; a < 3; ++a) {
    if (end[a] <= begin[a]) return true;
  }
  return false;
}

void validate_box(const RadianceVolume& volume, const Box& box) {
  constexpr double kTol = 1e-9;
  const auto& b = volume.bounds();
  for (int a = 0; a < 3; ++a) {
    require(std::isfinite(box.lo[a]) && std::isfinite(box.hi[a]), Errc::kInvalidArgument,
            "box corners must be finite");
    require(box.lo[a] <= box.hi[a], Errc::kInvalidArgument, "box min must not exceed max");
    require(box.lo[a] >= b.lo[a] - kTol && box.hi[a] <= b.hi[a] + kTol, Errc::kInvalidArgument,
            "box lies outside the scene bounds");
  }
}

VoxelRange voxel_range(const RadianceVolume& volume, const Box& box) {
  validate_box(volume, box);
  const Dims d = volume.dims();
  const std::array<int64_t, 3> n{d.w, d.h, d.u};
  VoxelRange r;
  for (int a = 0; a < 3; ++a) {
    int64_t first = n[a], last = -1;
    for (int64_t i = 0; i < n[a]; ++i) {
      std::array<int64_t, 3> idx{0, 0, 0};
      idx[a] = i;
      const double c = volume.voxel_center(idx[0], idx[1], idx[2])[a];
      if (c >= box.lo[a] && c < box.hi[a]) {
        first = std::min(first, i);
        last = std::max(last, i);
      }
    }
    if (last < 0) {
      r.begin[a] = r.end[a] = 0;
    } else {
      r.begin[a] = first;
      r.end[a] = last + 1;
    }
  }
  return r;
}

namespace {

torch::Tensor region(const torch::Tensor& values, const VoxelRange& r) {
  using torch::indexing::Slice;
  return values.index({Slice(), Slice(r.begin[0], r.end[0]), Slice(r.begin[1], r.end[1]),
                       Slice(r.begin[2], r.end[2])});
}

std::string extent_text(const std::array<int64_t, 3>& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

void require_congruent(const VoxelRange& src, const VoxelRange& dst) {
  require(src.extent() == dst.extent(), Errc::kInvalidArgument,
          "source and destination boxes cover different voxel extents (" + extent_text(src.extent()) +
              " vs " + extent_text(dst.extent()) + ")");
}

}  // namespace

VoxelValue sample_point(const RadianceVolume& volume, const std::array<double, 3>& point) {
  auto p = torch::tensor({point[0], point[1], point[2]}, torch::kFloat32).view({1, 3});
  auto v = sample_trilinear(volume, p).to(torch::kFloat32).contiguous();
  VoxelValue out;
  for (int c = 0; c < 4; ++c) out[c] = v[0][c].item<float>();
  return out;
}

VoxelValue default_empty_sample(const RadianceVolume& volume) {
  const auto& values = volume.values();
  const int64_t idx = values[3].flatten().argmin().item<int64_t>();
  auto flat = values.flatten(1);
  VoxelValue out;
  for (int c = 0; c < 4; ++c) out[c] = flat[c][idx].item<float>();
  return out;
}

RadianceVolume edit_remove(const RadianceVolume& volume, const Box& box, const VoxelValue& empty) {
  const auto r = voxel_range(volume, box);
  auto values = volume.values().clone();
  if (!r.empty()) {
    auto target = region(values, r);
    for (int c = 0; c < 4; ++c) target[c].fill_(empty[c]);
  }
  return RadianceVolume(values, volume.bounds());
}

RadianceVolume edit_duplicate(const RadianceVolume& volume, const Box& src, const Box& dst) {
  const auto rs = voxel_range(volume, src);
  const auto rd = voxel_range(volume, dst);
  require_congruent(rs, rd);
  auto values = volume.values().clone();
  if (!rs.empty()) region(values, rd).copy_(region(volume.values(), rs));
  return RadianceVolume(values, volume.bounds());
}

RadianceVolume edit_move(const RadianceVolume& volume, const Box& src, const Box& dst,
                         const VoxelValue& empty) {
  return edit_remove(edit_duplicate(volume, src, dst), src, empty);
}

RadianceVolume compose(const std::vector<ComposeSource>& sources, const RadianceVolume& target,
                       const std::vector<Box>& destinations) {
  require(sources.size() == destinations.size(), Errc::kInvalidArgument,
          "compose needs one destination per source (" + std::to_string(sources.size()) + " vs " +
              std::to_string(destinations.size()) + ")");
  auto values = target.values().clone();
  for (size_t k = 0; k < sources.size(); ++k) {
    const auto rs = voxel_range(sources[k].volume, sources[k].box);
    const auto rd = voxel_range(target, destinations[k]);
    require_congruent(rs, rd);
    if (!rs.empty()) region(values, rd).copy_(region(sources[k].volume.values(), rs));
  }
  return RadianceVolume(values, target.bounds());
}

RadianceVolume harmonize(GeneratorStack& stack, const RadianceVolume& edited,
                         std::optional<uint64_t> fresh_noise_seed) {
  const int N = stack.num_scales();
  require(N >= 4, Errc::kUnsupportedConfig,
          "harmonize needs at least 4 scales (the pyramid has " + std::to_string(N) + ")");
  torch::NoGradGuard guard;
  const auto& schedule = stack.schedule();
  auto v = resample_grid(edited.values(), schedule.volume_dims(3));
  std::optional<at::Generator> gen;
  if (fresh_noise_seed) gen = at::detail::createCPUGenerator(*fresh_noise_seed);
  for (int n = 4; n <= N - 1; ++n) {
    const Dims d = schedule.volume_dims(n);
    auto z = gen ? torch::randn({noise_channels(n), d.w, d.h, d.u}, *gen)
                 : torch::zeros({noise_channels(n), d.w, d.h, d.u});
    v = refine(stack.generator(n), v, z, d);
  }
  return RadianceVolume(v.contiguous(), edited.bounds());
}

// ---------------------------------------------------------------------------

Mesh export_mesh(const RadianceVolume& volume, double threshold) {
  require(threshold > 0.0, Errc::kInvalidArgument, "mesh threshold must be positive");
  const Dims d = volume.dims();
  const auto vs = volume.voxel_size();
  const double voxel = (vs[0] + vs[1] + vs[2]) / 3.0;
  auto field_t = (activate_density(volume.values()[3].to(torch::kFloat64)) * voxel).contiguous();
  const double* field = field_t.data_ptr<double>();
  auto at = [&](int64_t x, int64_t y, int64_t z) { return field[(x * d.h + y) * d.u + z]; };

  // Cube corner offsets and edge endpoints in the tabulation's numbering.
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  Mesh mesh;
  std::unordered_map<int64_t, uint32_t> edge_vertex;
  std::vector<std::array<double, 3>> positions;
  for (int64_t x = 0; x + 1 < d.w; ++x) {
    for (int64_t y = 0; y + 1 < d.h; ++y) {
      for (int64_t z = 0; z + 1 < d.u; ++z) {
        double val[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          val[c] = at(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
          if (val[c] < threshold) cube |= 1 << c;
        }
        if (detail::kEdgeTable[cube] == 0) continue;
        uint32_t ids[12];
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube] & (1 << e))) continue;
          const int a = kEdge[e][0], b = kEdge[e][1];
          const int64_t ax = x + kCorner[a][0], ay = y + kCorner[a][1], az = z + kCorner[a][2];
          const int64_t bx = x + kCorner[b][0], by = y + kCorner[b][1], bz = z + kCorner[b][2];
          const int64_t lo = std::min((ax * d.h + ay) * d.u + az, (bx * d.h + by) * d.u + bz);
          const int axis = ax != bx ? 0 : (ay != by ? 1 : 2);
          const int64_t key = lo * 3 + axis;
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            ids[e] = it->second;
            continue;
          }
          const double denom = val[b] - val[a];
          const double t = std::abs(denom) < 1e-12 ? 0.5 : (threshold - val[a]) / denom;
          const auto pa = volume.voxel_center(ax, ay, az);
          const auto pb = volume.voxel_center(bx, by, bz);
          std::array<double, 3> p;
          for (int k = 0; k < 3; ++k) p[k] = pa[k] + t * (pb[k] - pa[k]);
          ids[e] = static_cast<uint32_t>(positions.size());
          positions.push_back(p);
          edge_vertex.emplace(key, ids[e]);
        }
        for (int i = 0; detail::kTriTable[cube][i] != -1; i += 3) {
          mesh.faces.push_back({ids[detail::kTriTable[cube][i]], ids[detail::kTriTable[cube][i + 1]],
                                ids[detail::kTriTable[cube][i + 2]]});
        }
      }
    }
  }
  if (positions.empty()) return mesh;
  auto pts = torch::empty({static_cast<int64_t>(positions.size()), 3}, torch::kFloat32);
  auto acc = pts.accessor<float, 2>();
  for (size_t i = 0; i < positions.size(); ++i) {
    for (int k = 0; k < 3; ++k) acc[i][k] = static_cast<float>(positions[i][k]);
  }
  auto colors = activate_color(sample_trilinear(volume, pts).index({torch::indexing::Slice(), torch::indexing::Slice(0, 3)}))
                    .to(torch::kFloat32)
                    .contiguous();
  auto cacc = colors.accessor<float, 2>();
  for (size_t i = 0; i < positions.size(); ++i) {
    mesh.vertices.push_back({acc[i][0], acc[i][1], acc[i][2]});
    mesh.colors.push_back({cacc[i][0], cacc[i][1], cacc[i][2]});
  }
  return mesh;
}

namespace {

template <typename T>
void put(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

std::string encode_stl(const Mesh& mesh) {
  std::string out(80, '\0');
  const std::string title = "singrav mesh";
  std::memcpy(out.data(), title.data(), title.size());
  put<uint32_t>(out, static_cast<uint32_t>(mesh.faces.size()));
  for (const auto& f : mesh.faces) {
    const auto& a = mesh.vertices[f[0]];
    const auto& b = mesh.vertices[f[1]];
    const auto& c = mesh.vertices[f[2]];
    const float ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const float vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
    float nx = uy * vz - uz * vy, ny = uz * vx - ux * vz, nz = ux * vy - uy * vx;
    const float len = std::sqrt(nx * nx + ny * ny + nz * nz);
    if (len > 0) {
      nx /= len;
      ny /= len;
      nz /= len;
    }
    for (float v : {nx, ny, nz}) put<float>(out, v);
    for (const auto* p : {&a, &b, &c}) {
      for (float v : *p) put<float>(out, v);
    }
    put<uint16_t>(out, 0);
  }
  return out;
}

std::string encode_obj(const Mesh& mesh) {
  std::ostringstream os;
  os << std::setprecision(7);
  os << "# singrav mesh, " << mesh.vertices.size() << " vertices, " << mesh.faces.size() << " faces\n";
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    const auto& c = mesh.colors[i];
    os << "v " << v[0] << ' ' << v[1] << ' ' << v[2] << ' ' << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
  }
  for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return os.str();
}

}  // namespace singrav
