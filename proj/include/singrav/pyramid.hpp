#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "singrav/volume.hpp"

namespace singrav {

enum class NormKind { kBatch, kInstance };

struct PyramidConfig {
  int num_scales = 6;            // N; scales 1..N-1 are 3D, scale N is the 2D super-resolver
  double volume_growth = 4.0 / 3.0;  // theta
  double image_growth = 1.5;         // mu_r
  double super_resolution = 2.0;     // mu_s
  int64_t base_volume_res = 40;
  int64_t base_image_res = 32;
  std::optional<int64_t> max_image_res = 160;  // clamp on pre-super-resolution renders
  int layers = 7;                // L
  int64_t hidden_channels = 32;
  NormKind norm = NormKind::kBatch;
  double leaky_slope = 0.2;
  bool depth_conditioning = true;
  int64_t samples_first = 64;    // ray samples at scale 1
  int64_t samples_last = 128;    // ray samples at scale N-1
  std::vector<int64_t> volume_res_override;
  std::vector<int64_t> image_res_override;
  Bounds bounds;

  void validate() const;
  int volume_scales() const { return num_scales - 1; }
};

void to_json(nlohmann::json& j, const PyramidConfig& c);
void from_json(const nlohmann::json& j, PyramidConfig& c);

/// Resolved per-scale resolutions. Index i holds scale i + 1.
struct ScaleSchedule {
  std::vector<int64_t> volume_res;   // N-1 entries
  std::vector<int64_t> image_res;    // N-1 entries
  int64_t final_image_res = 0;       // scale N
  std::vector<int64_t> ray_samples;  // N-1 entries

  Dims volume_dims(int scale) const;
  int64_t image_res_at(int scale) const;  // 1..N
};

ScaleSchedule scale_schedule(const PyramidConfig& config);

// ---------------------------------------------------------------------------
// Networks

/// 3D generator: (L-1) x [conv3d k3 s1 p1, norm, LeakyReLU] then conv3d -> 4.
class Generator3dImpl : public torch::nn::Module {
 public:
  Generator3dImpl(int64_t in_channels, int64_t hidden, int layers, NormKind norm, double slope);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels() const { return in_channels_; }
  torch::nn::Conv3d& tail() { return tail_; }

 private:
  int64_t in_channels_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv3d tail_{nullptr};
};
TORCH_MODULE(Generator3d);

/// 2D super-resolver: bilinear upsample, 3->hidden expansion, then the
/// 32/16/8/8/3 instance-normalized conv chain; the output adds the bilinear
/// upsample of the input.
class SuperResolverImpl : public torch::nn::Module {
 public:
  SuperResolverImpl(int64_t input_res, int64_t output_res, int64_t hidden, double slope);
  torch::Tensor forward(const torch::Tensor& image);

  int64_t input_res() const { return input_res_; }
  int64_t output_res() const { return output_res_; }
  torch::nn::Conv2d& tail() { return tail_; }

 private:
  int64_t input_res_;
  int64_t output_res_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d tail_{nullptr};
};
TORCH_MODULE(SuperResolver);

struct DiscriminatorSpec {
  int64_t in_channels = 4;
  int layers = 7;
  int64_t hidden = 32;
  int64_t kernel = 3;
  int64_t padding = 0;

  int64_t receptive_field() const { return 1 + layers * (kernel - 1); }
  int64_t output_size(int64_t input) const { return input - layers * (kernel - 1 - 2 * padding); }
};

DiscriminatorSpec build_discriminator(int scale, const PyramidConfig& config);

/// Patch critic: (L-1) x [conv2d k3 s1 p0, LeakyReLU] then conv2d -> 1.
class Discriminator2dImpl : public torch::nn::Module {
 public:
  Discriminator2dImpl(const DiscriminatorSpec& spec, double slope);
  torch::Tensor forward(const torch::Tensor& x);

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Discriminator2d);

/// Conv weights ~ N(0, std), norm scales ~ N(1, std), biases zero.
void init_weights(torch::nn::Module& module, torch::Generator& gen, double std = 0.02);

/// Copies every parameter and buffer of `src` into the same-named entry of
/// `dst`; where shapes differ only in the input-channel dimension the
/// overlapping slice is copied and the rest keeps its current values.
void warm_start(torch::nn::Module& dst, const torch::nn::Module& src);

void set_requires_grad(torch::nn::Module& module, bool flag);

// ---------------------------------------------------------------------------
// Noise

/// Per-scale noise volumes; z[0] is [3, dims_1], z[n>0] is [4, dims_{n+1}].
struct NoiseStack {
  std::vector<torch::Tensor> z;
  uint64_t seed = 0;

  int scales() const { return static_cast<int>(z.size()); }
  NoiseStack clone() const;
};

int64_t noise_channels(int scale);

/// Unit Gaussian noise at every 3D scale, deterministic in `seed`.
NoiseStack draw_noise(const ScaleSchedule& schedule, uint64_t seed);

/// Reconstruction noise {z1*, 0, ..., 0}.
NoiseStack reconstruction_noise(const ScaleSchedule& schedule, const torch::Tensor& z1_star);

// ---------------------------------------------------------------------------
// Stack and cascade

class GeneratorStack {
 public:
  GeneratorStack() = default;
  GeneratorStack(PyramidConfig config, uint64_t init_seed);

  const PyramidConfig& config() const { return config_; }
  const ScaleSchedule& schedule() const { return schedule_; }
  int num_scales() const { return config_.num_scales; }

  Generator3d& generator(int scale);
  const Generator3d& generator(int scale) const;
  SuperResolver& super_resolver() { return super_resolver_; }
  const SuperResolver& super_resolver() const { return super_resolver_; }
  Discriminator2d& discriminator(int scale);

  bool frozen(int scale) const { return frozen_.at(scale - 1); }
  void set_frozen(int scale, bool flag);

  /// Reconstruction noise z1*; drawn once at construction and persisted.
  const torch::Tensor& z1_star() const { return z1_star_; }
  void set_z1_star(torch::Tensor z) { z1_star_ = std::move(z); }

  /// Switches every network to inference mode.
  void eval();

  /// All networks of one scale (generator or super-resolver, discriminator).
  std::vector<torch::nn::Module*> scale_modules(int scale);

 private:
  PyramidConfig config_;
  ScaleSchedule schedule_;
  std::vector<Generator3d> generators_;
  SuperResolver super_resolver_{nullptr};
  std::vector<Discriminator2d> discriminators_;
  std::vector<bool> frozen_;
  torch::Tensor z1_star_;
};

/// V1 = G1(z1 + e_csg). Accepts [C, W, H, U] or batched [B, C, W, H, U].
torch::Tensor generate_coarsest(Generator3d& g1, const torch::Tensor& z1, const torch::Tensor& csg);

/// Vn = up(V_{n-1}) + Gn(zn + up(V_{n-1})), upsampled to `dims`.
torch::Tensor refine(Generator3d& gn, const torch::Tensor& prev, const torch::Tensor& zn, Dims dims);

torch::Tensor super_resolve(SuperResolver& gn, const torch::Tensor& image);

/// Runs the 3D cascade up to `last_scale` (1-based). Noise tensors may be
/// batched. Returns raw volumes [.., 4, W, H, U].
torch::Tensor generate_to_scale(GeneratorStack& stack, const std::vector<torch::Tensor>& noise,
                                int last_scale);

struct SceneSample {
  RadianceVolume volume;  // finest 3D scale
  NoiseStack noise;
};

SceneSample sample_scene(GeneratorStack& stack, uint64_t seed);
SceneSample sample_scene(GeneratorStack& stack, const NoiseStack& noise);

/// The reconstruction volume V* generated from {z1*, 0, ..., 0}.
RadianceVolume reconstruction_volume(GeneratorStack& stack);

}  // namespace singrav
