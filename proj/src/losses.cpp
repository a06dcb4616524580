#include "singrav/losses.hpp"

#include "singrav/error.hpp"
#include "singrav/image.hpp"

namespace singrav {

void LossWeights::validate() const {
  require(color >= 0 && depth >= 0 && gradient_penalty >= 0 && swd >= 0, Errc::kInvalidArgument,
          "loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"lambda_c", w.color},
                     {"lambda_d", w.depth},
                     {"gp_weight", w.gradient_penalty},
                     {"swd_weight", w.swd}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  for (const auto& [key, _] : j.items()) {
    require(key == "lambda_c" || key == "lambda_d" || key == "gp_weight" || key == "swd_weight",
            Errc::kInvalidArgument, "unknown loss weight key: " + key);
  }
  LossWeights d;
  w.color = j.value("lambda_c", d.color);
  w.depth = j.value("lambda_d", d.depth);
  w.gradient_penalty = j.value("gp_weight", d.gradient_penalty);
  w.swd = j.value("swd_weight", d.swd);
  w.validate();
}

torch::Tensor patch_score(const torch::Tensor& patch_map) {
  return patch_map.flatten(1).mean(1);
}

torch::Tensor gradient_penalty_at(const Critic& critic, const torch::Tensor& x_hat_in) {
  auto x_hat = x_hat_in.detach().requires_grad_(true);
  auto scores = critic(x_hat);
  torch::Tensor grads;
  if (scores.requires_grad()) {
    grads = torch::autograd::grad({scores.sum()}, {x_hat}, {}, /*retain_graph=*/true,
                                  /*create_graph=*/true, /*allow_unused=*/true)[0];
  }
  if (!grads.defined()) grads = torch::zeros_like(x_hat);
  auto norm = grads.flatten(1).norm(2, 1);
  return (norm - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, at::Generator& gen) {
  require(real.sizes() == fake.sizes(), Errc::kInvalidArgument,
          "gradient penalty: real and fake shapes differ");
  std::vector<int64_t> eps_shape(real.dim(), 1);
  eps_shape[0] = real.size(0);
  auto eps = torch::rand(eps_shape, gen, real.options());
  auto x_hat = eps * real.detach() + (1.0 - eps) * fake.detach();
  return gradient_penalty_at(critic, x_hat);
}

AdversarialLosses adversarial_losses(const Critic& critic, const torch::Tensor& real,
                                     const torch::Tensor& fake, double gp_weight,
                                     at::Generator& gen) {
  require(real.sizes() == fake.sizes(), Errc::kInvalidArgument,
          "adversarial loss: real and fake shapes differ");
  AdversarialLosses out;
  auto real_score = critic(real).mean();
  auto fake_detached = critic(fake.detach()).mean();
  out.penalty = gradient_penalty(critic, real, fake, gen);
  out.d_loss = fake_detached - real_score + gp_weight * out.penalty;
  out.g_loss = -critic(fake).mean();
  return out;
}

torch::Tensor normalize_depth(const torch::Tensor& depth, double near, double far) {
  return (depth - near) / (far - near);
}

torch::Tensor build_disc_input(int scale, int num_scales, const torch::Tensor& color,
                               const torch::Tensor& depth_or_low_res, bool depth_conditioning) {
  require(color.dim() == 4 && color.size(1) == 3, Errc::kInvalidArgument,
          "discriminator color input must be [B, 3, H, W]");
  if (scale == num_scales) {
    require(depth_or_low_res.defined() && depth_or_low_res.dim() == 4 &&
                depth_or_low_res.size(1) == 3,
            Errc::kInvalidArgument, "finest-scale discriminator needs a [B, 3, h, w] low-res image");
    auto up = bilinear_resize(depth_or_low_res, color.size(2), color.size(3));
    return torch::cat({color, up}, 1);
  }
  if (!depth_conditioning) return color;
  require(depth_or_low_res.defined(), Errc::kInvalidArgument,
          "depth map required for discriminator input below the finest scale");
  auto depth = depth_or_low_res.dim() == 3 ? depth_or_low_res.unsqueeze(1) : depth_or_low_res;
  require(depth.dim() == 4 && depth.size(1) == 1 && depth.size(0) == color.size(0) &&
              depth.size(2) == color.size(2) && depth.size(3) == color.size(3),
          Errc::kInvalidArgument, "depth map must be [B, 1, H, W] matching the color image");
  return torch::cat({color, depth}, 1);
}

double reconstruction_loss_value(double color_mse, double depth_mse, int scale, int num_scales,
                                 const LossWeights& weights) {
  double total = weights.color * color_mse;
  if (scale < num_scales) total += weights.depth * depth_mse;
  return total;
}

ReconstructionTerms reconstruction_loss(const torch::Tensor& color, const torch::Tensor& target_color,
                                        const torch::Tensor& depth_norm,
                                        const torch::Tensor& target_depth_norm, int scale,
                                        int num_scales, const LossWeights& weights) {
  require(color.sizes() == target_color.sizes(), Errc::kInvalidArgument,
          "reconstruction: color shapes differ");
  ReconstructionTerms out;
  out.color_mse = (color - target_color).pow(2).mean();
  out.total = weights.color * out.color_mse;
  if (scale < num_scales && depth_norm.defined() && target_depth_norm.defined()) {
    require(depth_norm.sizes() == target_depth_norm.sizes(), Errc::kInvalidArgument,
            "reconstruction: depth shapes differ");
    out.depth_mse = (depth_norm - target_depth_norm).pow(2).mean();
    out.total = out.total + weights.depth * out.depth_mse;
  }
  return out;
}

void SwdConfig::validate() const {
  require(!layers.empty(), Errc::kInvalidArgument, "SWD needs at least one feature layer");
  require(projections >= 1, Errc::kInvalidArgument, "SWD needs at least one projection");
}

void to_json(nlohmann::json& j, const SwdConfig& c) {
  j = nlohmann::json{{"layers", c.layers}, {"projections", c.projections}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SwdConfig& c) {
  for (const auto& [key, _] : j.items()) {
    require(key == "layers" || key == "projections" || key == "seed", Errc::kInvalidArgument,
            "unknown swd key: " + key);
  }
  SwdConfig d;
  c.layers = j.value("layers", d.layers);
  c.projections = j.value("projections", d.projections);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

torch::Tensor sliced_wasserstein(const torch::Tensor& features_a, const torch::Tensor& features_b,
                                 int64_t projections, uint64_t seed) {
  require(features_a.dim() == 2 && features_a.sizes() == features_b.sizes(), Errc::kInvalidArgument,
          "sliced_wasserstein expects equally shaped [C, N] feature sets");
  require(projections >= 1, Errc::kInvalidArgument, "projections must be >= 1");
  const int64_t channels = features_a.size(0);
  auto gen = at::detail::createCPUGenerator(seed);
  auto dirs = torch::randn({projections, channels}, gen, torch::kFloat64);
  dirs = (dirs / dirs.norm(2, 1, true)).to(features_a.options());
  auto pa = std::get<0>(torch::sort(torch::matmul(dirs, features_a), 1));
  auto pb = std::get<0>(torch::sort(torch::matmul(dirs, features_b), 1));
  return (pa - pb).pow(2).mean();
}

torch::Tensor swd_loss(const torch::Tensor& image_a, const torch::Tensor& image_b,
                       VggExtractor& extractor, const SwdConfig& config) {
  config.validate();
  require(image_a.sizes() == image_b.sizes(), Errc::kInvalidArgument,
          "swd_loss: image resolutions differ");
  auto a = image_a.dim() == 3 ? image_a.unsqueeze(0) : image_a;
  auto b = image_b.dim() == 3 ? image_b.unsqueeze(0) : image_b;
  require(a.size(1) == 3, Errc::kInvalidArgument, "swd_loss expects 3-channel images");
  auto layers = config.layers;
  std::sort(layers.begin(), layers.end());
  auto fa = extractor.extract(a, layers);
  auto fb = extractor.extract(b, layers);
  torch::Tensor total = torch::zeros({}, a.options());
  for (size_t k = 0; k < layers.size(); ++k) {
    for (int64_t i = 0; i < a.size(0); ++i) {
      auto xa = fa[k][i].flatten(1);
      auto xb = fb[k][i].flatten(1);
      total = total + sliced_wasserstein(xa, xb, config.projections, config.seed + k) /
                          static_cast<double>(a.size(0));
    }
  }
  return total;
}

torch::Tensor total_loss(int scale, int num_scales, const torch::Tensor& adversarial,
                         const torch::Tensor& reconstruction, const torch::Tensor& swd) {
  auto out = adversarial + reconstruction;
  if (scale == num_scales && swd.defined()) out = out + swd;
  return out;
}

double total_loss_value(int scale, int num_scales, double adversarial, double reconstruction,
                        double swd) {
  return adversarial + reconstruction + (scale == num_scales ? swd : 0.0);
}

}  // namespace singrav
