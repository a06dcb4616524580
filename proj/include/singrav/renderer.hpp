#pragma once

#include <optional>

#include <torch/torch.h>

#include "singrav/camera.hpp"
#include "singrav/volume.hpp"

namespace singrav {

/// Uniform midpoint sampling: the interval [near, far] is split into
/// `samples` equal bins and each sample sits at its bin center, so every
/// step delta equals (far - near) / samples.
struct RaySampleSpec {
  int64_t samples = 64;
  int64_t chunk_rays = 4096;

  void validate() const;
};

/// Per-ray results. color [R, 3], depth [R], opacity [R].
struct RayRenderOutput {
  torch::Tensor color;
  torch::Tensor depth;
  torch::Tensor opacity;
};

/// Image results, channel-first. color [3, H, W] in [0, 1], depth [H, W] in
/// [near, far], opacity [H, W] = 1 - final transmittance.
struct RenderOutput {
  torch::Tensor color;
  torch::Tensor depth;
  torch::Tensor opacity;
};

inline torch::Tensor activate_density(const torch::Tensor& raw) { return torch::softplus(raw); }
inline torch::Tensor activate_color(const torch::Tensor& raw) { return torch::sigmoid(raw); }

/// Emission-absorption compositing of raw volume values along rays.
/// Density is softplus-activated, color sigmoid-activated; samples outside
/// `bounds` carry no density; the residual transmittance is black and
/// terminates at `far`. Differentiable with respect to `values`.
RayRenderOutput render_rays(const torch::Tensor& values, const Bounds& bounds, const Rays& rays,
                            double near, double far, const RaySampleSpec& spec);

RenderOutput render(const torch::Tensor& values, const Bounds& bounds, const Camera& camera,
                    const RaySampleSpec& spec);
RenderOutput render(const RadianceVolume& volume, const Camera& camera, const RaySampleSpec& spec);

/// Ground-truth depth of a view resized by area averaging; nullopt when the
/// view carries no depth.
std::optional<torch::Tensor> render_depth_real(const CameraView& view, int64_t height,
                                               int64_t width);

}  // namespace singrav
