#include "singrav/image.hpp"

#include <algorithm>
#include <cmath>

#include "singrav/error.hpp"

namespace singrav {

namespace F = torch::nn::functional;

namespace {

// [out, in] matrix whose rows hold the coverage weights of each output cell.
torch::Tensor area_weights(int64_t in, int64_t out) {
  auto w = torch::zeros({out, in}, torch::kFloat64);
  auto acc = w.accessor<double, 2>();
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    const auto first = static_cast<int64_t>(std::floor(lo));
    const auto last = std::min<int64_t>(in - 1, static_cast<int64_t>(std::ceil(hi)) - 1);
    for (int64_t j = first; j <= last; ++j) {
      const double overlap = std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
      if (overlap > 0.0) acc[i][j] = overlap / scale;
    }
  }
  return w;
}

}  // namespace

torch::Tensor area_resize(const torch::Tensor& image, int64_t out_h, int64_t out_w) {
  require(image.dim() >= 2, Errc::kInvalidArgument, "area_resize expects [..., H, W]");
  require(out_h >= 1 && out_w >= 1, Errc::kInvalidArgument, "area_resize target must be positive");
  const int64_t in_h = image.size(-2);
  const int64_t in_w = image.size(-1);
  if (in_h == out_h && in_w == out_w) return image;
  auto wy = area_weights(in_h, out_h).to(image.options());
  auto wx = area_weights(in_w, out_w).to(image.options());
  return torch::matmul(torch::matmul(wy, image), wx.t());
}

torch::Tensor bilinear_resize(const torch::Tensor& image, int64_t out_h, int64_t out_w) {
  require(image.dim() == 3 || image.dim() == 4, Errc::kInvalidArgument,
          "bilinear_resize expects [C, H, W] or [B, C, H, W]");
  const bool batched = image.dim() == 4;
  auto in = batched ? image : image.unsqueeze(0);
  auto out = F::interpolate(in, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{out_h, out_w})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
  return batched ? out : out.squeeze(0);
}

std::pair<int64_t, int64_t> scaled_image_size(int64_t height, int64_t width, int64_t res) {
  if (height == width) return {res, res};
  const double aspect = static_cast<double>(width) / static_cast<double>(height);
  return {res, std::max<int64_t>(1, static_cast<int64_t>(std::round(res * aspect)))};
}

}  // namespace singrav
