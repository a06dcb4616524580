#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "singrav/dataset.hpp"
#include "singrav/features.hpp"
#include "singrav/losses.hpp"
#include "singrav/pyramid.hpp"

namespace singrav {

struct TrainConfig {
  int64_t epochs_per_scale = 80;
  int64_t recon_only_epochs = 20;
  int64_t d_steps = 3;
  int64_t g_steps = 3;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::vector<int64_t> adv_batch = {6, 6, 6, 5, 2, 2};    // per scale, length N
  std::vector<int64_t> recon_batch = {2, 2, 2, 1, 1, 1};  // per scale, length N
  int64_t steps_per_epoch = 0;  // 0: ceil(views / adversarial batch)
  int64_t max_rays = 4096;      // reconstruction pixel budget per view above 64 px
  int64_t crop_size = 64;       // adversarial crop side above this image side
  int64_t chunk_rays = 4096;
  bool normalize_depth = true;  // (d - near) / (far - near) before MSE and discriminator
  bool self_depth = false;
  LossWeights weights;
  SwdConfig swd;
  uint64_t seed = 0;

  void validate(int num_scales) const;
  int64_t adversarial_epochs() const { return epochs_per_scale - recon_only_epochs; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct StepLog {
  int64_t step = 0;
  int scale = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double rec_loss = 0.0;
  double swd_loss = 0.0;
  double color_mse = 0.0;
  double wall_time = 0.0;
};

struct ScaleReport {
  int scale = 0;
  std::vector<StepLog> log;
};

/// Disables gradients and switches the scale's networks to inference mode.
/// Idempotent.
void freeze_scale(GeneratorStack& stack, int scale);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   <dir>/pyramid.json            configs, completed scales, seeds
//   <dir>/z1_star.pt
//   <dir>/scale_<n>/generator.pt  (G_n, or G_N's super-resolver)
//   <dir>/scale_<n>/discriminator.pt
//   <dir>/scale_<n>/scale_config.json

struct CheckpointInfo {
  PyramidConfig pyramid;
  nlohmann::json train_config;  // as written; may be null for inference-only use
  uint64_t init_seed = 0;
  int completed_scales = 0;
  std::string dataset_hash;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Writes scale `n` and updates pyramid.json; every file is written atomically.
void save_scale(const std::filesystem::path& dir, GeneratorStack& stack, int scale,
                const CheckpointInfo& info);

/// Rebuilds the stack and loads every completed scale (frozen).
GeneratorStack load_checkpoint(const std::filesystem::path& dir);

/// Loads completed scales into an existing stack built from the same config.
void load_scales(const std::filesystem::path& dir, GeneratorStack& stack, int completed);

// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(GeneratorStack& stack, const ObservationPyramid& observations, TrainConfig config,
          uint64_t init_seed = 0);

  /// Checkpoints and the CSV log go here when set.
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }
  void set_weight_source(WeightSource source) { weights_ = std::move(source); }
  void set_progress(std::function<void(const StepLog&)> fn) { progress_ = std::move(fn); }

  /// Trains one scale; predecessors must be frozen. Warm starts from scale n-1
  /// (except the super-resolver and its discriminator) and freezes the scale.
  ScaleReport train_scale(int scale);

  /// Trains scales coarse to fine, stopping after `last_scale` (0 = all).
  /// With `resume`, completed scales found in the checkpoint directory are
  /// loaded and skipped.
  std::vector<ScaleReport> train_all(bool resume = false, int last_scale = 0);

  /// Color MSE of the reconstruction against the training views at `scale`.
  double reconstruction_color_mse(int scale);

 private:
  struct ScaleState;
  struct ReconTerms {
    torch::Tensor total;
    torch::Tensor color_mse;
    torch::Tensor depth_mse;
  };

  ReconTerms recon_terms(ScaleState& s);
  torch::Tensor fake_batch(ScaleState& s, int64_t batch, torch::Tensor* low_out);
  torch::Tensor real_batch(ScaleState& s, int64_t batch, std::vector<int64_t>* views_out);
  torch::Tensor crop(ScaleState& s, const torch::Tensor& x);
  torch::Tensor crop_like(ScaleState& s, const torch::Tensor& x, const torch::Tensor& like);
  static torch::Tensor crop_to(const torch::Tensor& x, const torch::Tensor& like);
  torch::Tensor prepare_depth(const torch::Tensor& depth, const Camera& camera) const;
  void refresh_self_depth(ScaleState& s);
  void record(const StepLog& log);
  void check_finite(const StepLog& log) const;
  CheckpointInfo info() const;

  GeneratorStack& stack_;
  const ObservationPyramid& obs_;
  TrainConfig config_;
  uint64_t init_seed_;
  std::optional<std::filesystem::path> checkpoint_dir_;
  WeightSource weights_ = WeightSource::from_environment();
  std::unique_ptr<VggExtractor> vgg_;
  std::function<void(const StepLog&)> progress_;
  int64_t global_step_ = 0;
  double wall_start_ = 0.0;
};

}  // namespace singrav
