#include "singrav/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "singrav/error.hpp"

namespace singrav {

namespace F = torch::nn::functional;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "SGRV1 I/O assumes a little-endian host");

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << dims.w << "x" << dims.h << "x" << dims.u;
  return os.str();
}

bool Bounds::contains(const std::array<double, 3>& p) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < lo[a] || p[a] > hi[a]) return false;
  }
  return true;
}

RadianceVolume::RadianceVolume(torch::Tensor values, Bounds bounds)
    : values_(std::move(values)), bounds_(bounds) {
  require(values_.defined() && values_.dim() == 4 && values_.size(0) == kVolumeChannels,
          Errc::kInvalidArgument, "radiance volume must be a [4, W, H, U] tensor");
  for (int a = 1; a < 4; ++a) {
    require(values_.size(a) >= 2, Errc::kInvalidArgument,
            "radiance volume dims must be >= 2 per axis");
  }
  for (int a = 0; a < 3; ++a) {
    require(bounds_.hi[a] > bounds_.lo[a], Errc::kInvalidArgument, "degenerate volume bounds");
  }
}

RadianceVolume RadianceVolume::filled(Dims dims, std::array<float, 4> value, Bounds bounds) {
  auto v = torch::empty({kVolumeChannels, dims.w, dims.h, dims.u});
  for (int64_t c = 0; c < kVolumeChannels; ++c) v[c].fill_(value[c]);
  return RadianceVolume(v, bounds);
}

Dims RadianceVolume::dims() const {
  return {values_.size(1), values_.size(2), values_.size(3)};
}

std::array<double, 3> RadianceVolume::voxel_size() const {
  const Dims d = dims();
  return {bounds_.extent(0) / d.w, bounds_.extent(1) / d.h, bounds_.extent(2) / d.u};
}

std::array<double, 3> RadianceVolume::voxel_center(int64_t x, int64_t y, int64_t z) const {
  const auto s = voxel_size();
  return {bounds_.lo[0] + (x + 0.5) * s[0], bounds_.lo[1] + (y + 0.5) * s[1],
          bounds_.lo[2] + (z + 0.5) * s[2]};
}

void RadianceVolume::check_finite() const {
  require(torch::isfinite(values_).all().item<bool>(), Errc::kNumerical,
          "radiance volume contains non-finite values");
}

RadianceVolume RadianceVolume::clone() const {
  return RadianceVolume(values_.detach().clone(), bounds_);
}

bool RadianceVolume::bitwise_equal(const RadianceVolume& other) const {
  if (dims() != other.dims() || !(bounds_ == other.bounds_)) return false;
  auto a = values_.detach().contiguous();
  auto b = other.values_.detach().to(a.scalar_type()).contiguous();
  return std::memcmp(a.data_ptr(), b.data_ptr(), a.numel() * a.element_size()) == 0;
}

torch::Tensor make_csg_grid(Dims dims, torch::TensorOptions options) {
  require(dims.w >= 1 && dims.h >= 1 && dims.u >= 1, Errc::kInvalidArgument,
          "csg grid dims must be positive, got " + to_string(dims));
  auto axis = [&](int64_t n) {
    auto idx = torch::arange(n, torch::kFloat64);
    return (2.0 * (idx / static_cast<double>(n) - 0.5)).to(options);
  };
  auto gx = axis(dims.w).view({dims.w, 1, 1}).expand({dims.w, dims.h, dims.u});
  auto gy = axis(dims.h).view({1, dims.h, 1}).expand({dims.w, dims.h, dims.u});
  auto gz = axis(dims.u).view({1, 1, dims.u}).expand({dims.w, dims.h, dims.u});
  return torch::stack({gx, gy, gz}).contiguous();
}

torch::Tensor sample_trilinear(const torch::Tensor& values, const Bounds& bounds,
                               const torch::Tensor& points) {
  require(values.dim() == 4, Errc::kInvalidArgument, "sample_trilinear expects [C, W, H, U]");
  require(points.dim() == 2 && points.size(1) == 3, Errc::kInvalidArgument,
          "sample_trilinear expects [P, 3] points");
  const int64_t channels = values.size(0);
  if (points.size(0) == 0) return torch::zeros({0, channels}, values.options());

  const std::array<int64_t, 3> n{values.size(1), values.size(2), values.size(3)};
  auto pts = points.to(values.scalar_type());
  std::array<torch::Tensor, 3> i0, frac;
  for (int a = 0; a < 3; ++a) {
    // Continuous index with voxel centers at integer positions.
    auto u = (pts.select(1, a) - bounds.lo[a]) * (static_cast<double>(n[a]) / bounds.extent(a)) - 0.5;
    u = u.clamp(0.0, static_cast<double>(n[a] - 1));
    auto base = u.floor().clamp(0.0, static_cast<double>(n[a] - 2));
    frac[a] = u - base;
    i0[a] = base.to(torch::kLong);
  }

  const int64_t stride_x = n[1] * n[2];
  const int64_t stride_y = n[2];
  auto flat = values.reshape({channels, -1});
  torch::Tensor result;
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
    auto idx = (i0[0] + dx) * stride_x + (i0[1] + dy) * stride_y + (i0[2] + dz);
    auto w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
             (dz ? frac[2] : 1.0 - frac[2]);
    auto term = flat.index_select(1, idx) * w.unsqueeze(0);
    result = result.defined() ? result + term : term;
  }
  return result.t();
}

torch::Tensor sample_trilinear(const RadianceVolume& volume, const torch::Tensor& points) {
  return sample_trilinear(volume.values(), volume.bounds(), points);
}

int64_t round_resolution(double value) {
  return static_cast<int64_t>(std::round(value));
}

Dims scaled_dims(Dims dims, double factor) {
  require(factor > 0.0 && std::isfinite(factor), Errc::kInvalidArgument,
          "scale factor must be positive");
  return {round_resolution(dims.w * factor), round_resolution(dims.h * factor),
          round_resolution(dims.u * factor)};
}

torch::Tensor resample_grid(const torch::Tensor& values, Dims dims) {
  require(values.dim() == 4 || values.dim() == 5, Errc::kInvalidArgument,
          "resample_grid expects [C, W, H, U] or [B, C, W, H, U]");
  require(dims.w >= 1 && dims.h >= 1 && dims.u >= 1, Errc::kInvalidArgument,
          "resample target dims must be positive");
  const bool batched = values.dim() == 5;
  auto in = batched ? values : values.unsqueeze(0);
  if (in.size(2) == dims.w && in.size(3) == dims.h && in.size(4) == dims.u) return values;
  // align_corners=false with an explicit size places samples at voxel centers
  // and clamps at the border, matching sample_trilinear.
  auto out = F::interpolate(in, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{dims.w, dims.h, dims.u})
                                    .mode(torch::kTrilinear)
                                    .align_corners(false));
  return batched ? out : out.squeeze(0);
}

RadianceVolume resample_volume(const RadianceVolume& volume, Dims dims) {
  return RadianceVolume(resample_grid(volume.values(), dims), volume.bounds());
}

RadianceVolume upsample_volume(const RadianceVolume& volume, double factor) {
  return resample_volume(volume, scaled_dims(volume.dims(), factor));
}

std::string encode_sgrv(const RadianceVolume& volume) {
  const Dims d = volume.dims();
  const auto& b = volume.bounds();
  json header = {
      {"magic", "SGRV1"},
      {"dims", {d.w, d.h, d.u}},
      {"channels", kVolumeChannels},
      {"bounds", {{b.lo[0], b.lo[1], b.lo[2]}, {b.hi[0], b.hi[1], b.hi[2]}}},
      {"dtype", "f32le"},
      {"order", "xyz-major, channel-last"},
  };
  const std::string text = header.dump();
  auto payload = volume.values().detach().to(torch::kFloat32).permute({1, 2, 3, 0}).contiguous();
  const auto payload_bytes = static_cast<size_t>(payload.numel()) * sizeof(float);

  std::string out;
  out.reserve(4 + text.size() + payload_bytes);
  const auto len = static_cast<uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  out.append(reinterpret_cast<const char*>(payload.data_ptr<float>()), payload_bytes);
  return out;
}

RadianceVolume decode_sgrv(const std::string& bytes) {
  require(bytes.size() >= 4, Errc::kFormat, "SGRV1: truncated header length");
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[i])) << (8 * i);
  require(bytes.size() >= 4 + static_cast<size_t>(len), Errc::kFormat, "SGRV1: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(4, len));
  } catch (const json::exception& e) {
    fail(Errc::kFormat, std::string("SGRV1: malformed header: ") + e.what());
  }
  require(header.value("magic", "") == "SGRV1", Errc::kFormat, "SGRV1: bad magic");
  require(header.value("dtype", "") == "f32le", Errc::kFormat, "SGRV1: unsupported dtype");
  require(header.value("channels", 0) == kVolumeChannels, Errc::kFormat, "SGRV1: channels must be 4");
  const auto dims_j = header.at("dims");
  const Dims d{dims_j.at(0).get<int64_t>(), dims_j.at(1).get<int64_t>(), dims_j.at(2).get<int64_t>()};
  Bounds bounds;
  for (int a = 0; a < 3; ++a) {
    bounds.lo[a] = header.at("bounds").at(0).at(a).get<double>();
    bounds.hi[a] = header.at("bounds").at(1).at(a).get<double>();
  }
  const size_t count = static_cast<size_t>(d.count()) * kVolumeChannels;
  require(bytes.size() == 4 + len + count * sizeof(float), Errc::kFormat,
          "SGRV1: payload size does not match dims");
  auto payload = torch::empty({d.w, d.h, d.u, kVolumeChannels});
  std::memcpy(payload.data_ptr<float>(), bytes.data() + 4 + len, count * sizeof(float));
  return RadianceVolume(payload.permute({3, 0, 1, 2}).contiguous(), bounds);
}

void save_sgrv(const RadianceVolume& volume, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(static_cast<bool>(out), Errc::kIo, "cannot open " + tmp);
    const auto bytes = encode_sgrv(volume);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), Errc::kIo, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

RadianceVolume load_sgrv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return decode_sgrv(bytes);
}

}  // namespace singrav
