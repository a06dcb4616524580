#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace singrav {

/// Area-weighted resize of [..., H, W] images. Each output pixel is the
/// exact coverage-weighted mean of the input pixels under its footprint, so
/// integer downscales reduce to block means. Differentiable.
torch::Tensor area_resize(const torch::Tensor& image, int64_t out_h, int64_t out_w);

/// Bilinear resize with half-pixel centers; accepts [C, H, W] or [B, C, H, W].
torch::Tensor bilinear_resize(const torch::Tensor& image, int64_t out_h, int64_t out_w);

/// Height/width of an image resized so that its height becomes `res`.
std::pair<int64_t, int64_t> scaled_image_size(int64_t height, int64_t width, int64_t res);

}  // namespace singrav
