#include "singrav/renderer.hpp"

#include "singrav/error.hpp"
#include "singrav/image.hpp"

namespace singrav {

void RaySampleSpec::validate() const {
  require(samples >= 1, Errc::kInvalidArgument, "samples per ray must be >= 1");
  require(chunk_rays >= 1, Errc::kInvalidArgument, "chunk size must be >= 1");
}

namespace {

RayRenderOutput composite_chunk(const torch::Tensor& values, const Bounds& bounds,
                                const torch::Tensor& origins, const torch::Tensor& dirs,
                                const torch::Tensor& t, double delta, double far) {
  const int64_t rays = origins.size(0);
  const int64_t samples = t.size(0);
  // [R, M, 3]
  auto pts = origins.unsqueeze(1) + dirs.unsqueeze(1) * t.view({1, samples, 1});
  auto flat_pts = pts.reshape({-1, 3});
  auto raw = sample_trilinear(values, bounds, flat_pts).view({rays, samples, -1});

  auto inside = torch::ones({rays, samples}, torch::dtype(torch::kBool));
  for (int a = 0; a < 3; ++a) {
    auto c = pts.select(2, a);
    inside = inside & (c >= bounds.lo[a]) & (c <= bounds.hi[a]);
  }
  auto sigma = activate_density(raw.select(2, 3)) * inside.to(raw.scalar_type());
  auto color = activate_color(raw.narrow(2, 0, 3));

  auto tau = sigma * delta;
  auto cum = torch::cumsum(tau, 1);
  auto transmittance = torch::exp(-(cum - tau));  // T_i, exclusive prefix
  auto alpha = 1.0 - torch::exp(-tau);
  auto weights = transmittance * alpha;           // [R, M]
  auto residual = torch::exp(-cum.select(1, samples - 1));

  RayRenderOutput out;
  out.color = (weights.unsqueeze(2) * color).sum(1);
  out.opacity = 1.0 - residual;
  out.depth = (weights * t.view({1, samples})).sum(1) + residual * far;
  return out;
}

}  // namespace

RayRenderOutput render_rays(const torch::Tensor& values, const Bounds& bounds, const Rays& rays,
                            double near, double far, const RaySampleSpec& spec) {
  spec.validate();
  require(near > 0.0 && far > near, Errc::kInvalidArgument, "render requires 0 < near < far");
  const auto dtype = values.scalar_type();
  const double delta = (far - near) / static_cast<double>(spec.samples);
  auto t = near + (torch::arange(spec.samples, torch::dtype(dtype)) + 0.5) * delta;
  auto origins = rays.origins.to(dtype);
  auto dirs = rays.directions.to(dtype);

  const int64_t total = rays.size();
  if (total <= spec.chunk_rays) return composite_chunk(values, bounds, origins, dirs, t, delta, far);

  std::vector<torch::Tensor> colors, depths, opacities;
  for (int64_t start = 0; start < total; start += spec.chunk_rays) {
    const int64_t n = std::min(spec.chunk_rays, total - start);
    auto part = composite_chunk(values, bounds, origins.narrow(0, start, n), dirs.narrow(0, start, n),
                                t, delta, far);
    colors.push_back(part.color);
    depths.push_back(part.depth);
    opacities.push_back(part.opacity);
  }
  return {torch::cat(colors), torch::cat(depths), torch::cat(opacities)};
}

RenderOutput render(const torch::Tensor& values, const Bounds& bounds, const Camera& camera,
                    const RaySampleSpec& spec) {
  const auto rays = generate_rays(camera, values.scalar_type());
  auto out = render_rays(values, bounds, rays, camera.near, camera.far, spec);
  const int64_t h = camera.height;
  const int64_t w = camera.width;
  return {out.color.t().reshape({3, h, w}), out.depth.view({h, w}), out.opacity.view({h, w})};
}

RenderOutput render(const RadianceVolume& volume, const Camera& camera, const RaySampleSpec& spec) {
  return render(volume.values(), volume.bounds(), camera, spec);
}

std::optional<torch::Tensor> render_depth_real(const CameraView& view, int64_t height,
                                               int64_t width) {
  if (!view.depth || !view.depth->defined()) return std::nullopt;
  return area_resize(*view.depth, height, width);
}

}  // namespace singrav
