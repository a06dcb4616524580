#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "singrav/features.hpp"

namespace singrav {

struct LossWeights {
  double color = 10.0;     // lambda_c
  double depth = 30.0;     // lambda_d
  double gradient_penalty = 0.1;
  double swd = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

// ---------------------------------------------------------------------------
// Adversarial (WGAN-GP)

/// Maps a [B, ...] batch to per-sample scores [B].
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Per-sample score of a patch critic: the mean over its patch map.
torch::Tensor patch_score(const torch::Tensor& patch_map);

/// mean_b (||grad_x critic(x_hat_b)|| - 1)^2 with x_hat uniformly interpolated
/// between `real` and `fake`. The graph is kept so the penalty can be
/// backpropagated into the critic's parameters.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real,
                               const torch::Tensor& fake, at::Generator& gen);

/// Gradient penalty at a fixed interpolate, for callers that supply x_hat.
torch::Tensor gradient_penalty_at(const Critic& critic, const torch::Tensor& x_hat);

struct AdversarialLosses {
  torch::Tensor d_loss;  // mean D(fake) - mean D(real) + w * GP
  torch::Tensor g_loss;  // -mean D(fake)
  torch::Tensor penalty;
};

AdversarialLosses adversarial_losses(const Critic& critic, const torch::Tensor& real,
                                     const torch::Tensor& fake, double gp_weight,
                                     at::Generator& gen);

// ---------------------------------------------------------------------------
// Discriminator inputs

/// Maps world-unit depth to [0, 1] over [near, far].
torch::Tensor normalize_depth(const torch::Tensor& depth, double near, double far);

/// Discriminator input at `scale` of an N-scale pyramid.
/// Below N: RGB [B,3,H,W] + normalized depth [B,1,H,W] -> 4 channels (3 when
/// depth conditioning is disabled). At N: the super-resolved RGB plus the
/// bilinear upsample of `low_res` [B,3,h,w] -> 6 channels.
torch::Tensor build_disc_input(int scale, int num_scales, const torch::Tensor& color,
                               const torch::Tensor& depth_or_low_res, bool depth_conditioning);

// ---------------------------------------------------------------------------
// Reconstruction

struct ReconstructionTerms {
  torch::Tensor total;
  torch::Tensor color_mse;
  torch::Tensor depth_mse;  // undefined at the finest scale
};

/// lambda_c * color_mse + [scale < N] * lambda_d * depth_mse.
double reconstruction_loss_value(double color_mse, double depth_mse, int scale, int num_scales,
                                 const LossWeights& weights);

/// Depths are compared after normalize_depth.
ReconstructionTerms reconstruction_loss(const torch::Tensor& color, const torch::Tensor& target_color,
                                        const torch::Tensor& depth_norm,
                                        const torch::Tensor& target_depth_norm, int scale,
                                        int num_scales, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Sliced Wasserstein texture loss

struct SwdConfig {
  std::vector<int> layers = vgg19_default_taps();
  int64_t projections = 64;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SwdConfig& c);
void from_json(const nlohmann::json& j, SwdConfig& c);

/// Sliced Wasserstein distance between two sets of feature vectors [C, N]:
/// mean squared difference of sorted 1-D projections onto `projections`
/// random unit directions drawn from `seed`.
torch::Tensor sliced_wasserstein(const torch::Tensor& features_a, const torch::Tensor& features_b,
                                 int64_t projections, uint64_t seed);

/// Sum over configured VGG layers of the per-layer sliced Wasserstein
/// distance, averaged over the batch. Images are [B, 3, H, W] in [0, 1].
torch::Tensor swd_loss(const torch::Tensor& image_a, const torch::Tensor& image_b,
                       VggExtractor& extractor, const SwdConfig& config);

// ---------------------------------------------------------------------------

/// L_adv + L_rec + [scale == N] * L_sw.
torch::Tensor total_loss(int scale, int num_scales, const torch::Tensor& adversarial,
                         const torch::Tensor& reconstruction, const torch::Tensor& swd);
double total_loss_value(int scale, int num_scales, double adversarial, double reconstruction,
                        double swd);

}  // namespace singrav
