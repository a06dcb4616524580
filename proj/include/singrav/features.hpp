#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace singrav {

/// Where pretrained weights come from. Weight files are state dicts written
/// by `torch.save` (zip container) with torchvision parameter names; see
/// tools/fetch_weights.py. When no file is found the extractor falls back to
/// a seeded random initialization and reports `pretrained() == false`.
struct WeightSource {
  std::optional<std::filesystem::path> path;  // explicit file, offline mode
  std::filesystem::path cache_dir;            // searched for the default file name
  uint64_t fallback_seed = 0;

  /// Cache dir from $SINGRAV_WEIGHTS, else $SINGRAV_CACHE/weights, else ./cache/weights.
  static WeightSource from_environment();
};

/// Loads a zip-container state dict into `module`, matching names exactly.
/// Returns the number of tensors copied.
size_t load_state_dict(torch::nn::Module& module, const std::filesystem::path& path,
                       const std::string& prefix = "");

/// VGG-19 convolutional trunk up to relu5_1, named as torchvision's
/// `features.<i>` so pretrained state dicts load directly.
class Vgg19FeaturesImpl : public torch::nn::Module {
 public:
  Vgg19FeaturesImpl();
  /// Activations at the requested layer indices (sorted ascending) for
  /// [B, 3, H, W] inputs already normalized with ImageNet statistics.
  std::vector<torch::Tensor> forward(const torch::Tensor& x, const std::vector<int>& taps);

 private:
  torch::nn::Sequential features_{nullptr};
};
TORCH_MODULE(Vgg19Features);

/// Indices of relu1_1, relu2_1, relu3_1, relu4_1, relu5_1 in `features`.
std::vector<int> vgg19_default_taps();

class VggExtractor {
 public:
  explicit VggExtractor(const WeightSource& source);

  /// Features of [B, 3, H, W] images in [0, 1].
  std::vector<torch::Tensor> extract(const torch::Tensor& images, const std::vector<int>& taps);
  bool pretrained() const { return pretrained_; }
  const std::string& source_description() const { return description_; }

 private:
  Vgg19Features net_;
  bool pretrained_ = false;
  std::string description_;
};

/// Inception-v3 stem through the first max-pool (64 channels), the feature
/// map used by single-image FID. Parameter names follow torchvision's
/// `inception_v3` (Conv2d_1a_3x3, Conv2d_2a_3x3, Conv2d_2b_3x3).
class InceptionStemImpl : public torch::nn::Module {
 public:
  InceptionStemImpl();
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential conv1a_{nullptr}, conv2a_{nullptr}, conv2b_{nullptr};
};
TORCH_MODULE(InceptionStem);

class InceptionExtractor {
 public:
  explicit InceptionExtractor(const WeightSource& source);

  /// [B, 64, h, w] features of [B, 3, H, W] images in [0, 1].
  torch::Tensor extract(const torch::Tensor& images);
  bool pretrained() const { return pretrained_; }
  const std::string& source_description() const { return description_; }

 private:
  InceptionStem net_;
  bool pretrained_ = false;
  std::string description_;
};

}  // namespace singrav
