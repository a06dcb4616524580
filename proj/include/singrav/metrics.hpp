#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "singrav/dataset.hpp"
#include "singrav/features.hpp"
#include "singrav/pyramid.hpp"

namespace singrav {

struct MetricsConfig {
  int64_t views_M = 40;
  int64_t scenes_J = 50;
  uint64_t seed = 0;
  double eps = 1e-6;
  int64_t samples = 0;  // ray samples per render; 0 uses the finest 3D scale's count

  void validate() const;
};

void to_json(nlohmann::json& j, const MetricsConfig& c);
void from_json(const nlohmann::json& j, MetricsConfig& c);

/// Gaussian fit of per-location features: mean [C] and unbiased covariance [C, C], in double.
struct GaussianStats {
  torch::Tensor mean;
  torch::Tensor cov;
  int64_t locations = 0;
};

/// `features` is [C, N] or [C, h, w]; locations are the columns.
GaussianStats gaussian_stats(const torch::Tensor& features);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps = 0.0);

/// Single-image FID between two feature maps. Sets `regularized` when the
/// location count does not exceed the feature dimension and eps * I was added.
double sifid(const torch::Tensor& features_a, const torch::Tensor& features_b, double eps,
             bool* regularized = nullptr);

struct MetricResult {
  double value = 0.0;
  std::vector<double> per_view;  // NaN for excluded views
  std::vector<std::string> warnings;
};

/// `renders[j][m]` are [3, H, W] images aligned with `references[m]`.
MetricResult sifid_mv(const std::vector<std::vector<torch::Tensor>>& renders,
                      const std::vector<torch::Tensor>& references, InceptionExtractor& extractor,
                      double eps = 1e-6);

/// Per-pixel std over scenes averaged over pixels and channels, divided by the
/// pixel std of the reference; views with a constant reference are skipped.
MetricResult diversity_mv(const std::vector<std::vector<torch::Tensor>>& renders,
                          const std::vector<torch::Tensor>& references);

/// Samples J scenes, renders M dataset views at the finest resolution and
/// reports both metrics as JSON {config, seed, sifid_mv, diversity_mv, per_view, wall_time}.
nlohmann::json evaluate(GeneratorStack& stack, const ObservationPyramid& observations,
                        const MetricsConfig& config, InceptionExtractor& extractor);

}  // namespace singrav
