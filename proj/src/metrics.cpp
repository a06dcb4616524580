#include "singrav/metrics.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "singrav/apps.hpp"
#include "singrav/error.hpp"

namespace singrav {

using nlohmann::json;

void MetricsConfig::validate() const {
  require(views_M >= 1, Errc::kInvalidArgument, "views_M must be >= 1");
  require(scenes_J >= 2, Errc::kInvalidArgument, "scenes_J must be >= 2");
  require(eps >= 0.0, Errc::kInvalidArgument, "eps must be >= 0");
  require(samples >= 0, Errc::kInvalidArgument, "samples must be >= 0");
}

void to_json(json& j, const MetricsConfig& c) {
  j = json{{"views_M", c.views_M}, {"scenes_J", c.scenes_J}, {"seed", c.seed}, {"eps", c.eps},
           {"samples", c.samples}};
}

void from_json(const json& j, MetricsConfig& c) {
  for (const auto& [key, _] : j.items()) {
    require(key == "views_M" || key == "scenes_J" || key == "seed" || key == "eps" || key == "samples",
            Errc::kInvalidArgument, "unknown metrics key: " + key);
  }
  MetricsConfig d;
  c.views_M = j.value("views_M", d.views_M);
  c.scenes_J = j.value("scenes_J", d.scenes_J);
  c.seed = j.value("seed", d.seed);
  c.eps = j.value("eps", d.eps);
  c.samples = j.value("samples", d.samples);
  c.validate();
}

GaussianStats gaussian_stats(const torch::Tensor& features) {
  require(features.dim() == 2 || features.dim() == 3, Errc::kInvalidArgument,
          "gaussian_stats expects [C, N] or [C, h, w] features");
  auto f = features.detach().to(torch::kFloat64).flatten(1);
  GaussianStats s;
  s.locations = f.size(1);
  require(s.locations >= 1, Errc::kInvalidArgument, "gaussian_stats needs at least one location");
  s.mean = f.mean(1);
  auto centered = f - s.mean.unsqueeze(1);
  const double denom = s.locations > 1 ? static_cast<double>(s.locations - 1) : 1.0;
  s.cov = torch::matmul(centered, centered.t()) / denom;
  return s;
}

namespace {

torch::Tensor psd_sqrt(const torch::Tensor& m) {
  auto [evals, evecs] = torch::linalg_eigh(0.5 * (m + m.t()));
  return torch::matmul(evecs * evals.clamp_min(0.0).sqrt().unsqueeze(0), evecs.t());
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b, double eps) {
  require(a.mean.sizes() == b.mean.sizes(), Errc::kInvalidArgument,
          "frechet_distance: feature dimensions differ");
  const int64_t c = a.mean.size(0);
  auto eye = torch::eye(c, torch::kFloat64) * eps;
  auto s1 = a.cov + eye;
  auto s2 = b.cov + eye;
  auto root1 = psd_sqrt(s1);
  auto inner = torch::matmul(torch::matmul(root1, s2), root1);
  auto inner_evals = torch::linalg_eigvalsh(0.5 * (inner + inner.t()));
  const double tr_sqrt = inner_evals.clamp_min(0.0).sqrt().sum().item<double>();
  const double mean_term = (a.mean - b.mean).pow(2).sum().item<double>();
  const double value = mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double sifid(const torch::Tensor& features_a, const torch::Tensor& features_b, double eps,
             bool* regularized) {
  auto a = gaussian_stats(features_a);
  auto b = gaussian_stats(features_b);
  const bool reg = std::min(a.locations, b.locations) <= a.mean.size(0);
  if (regularized) *regularized = reg;
  return frechet_distance(a, b, reg ? eps : 0.0);
}

MetricResult sifid_mv(const std::vector<std::vector<torch::Tensor>>& renders,
                      const std::vector<torch::Tensor>& references, InceptionExtractor& extractor,
                      double eps) {
  require(!renders.empty() && !references.empty(), Errc::kInvalidArgument,
          "sifid_mv needs renders and references");
  const size_t views = references.size();
  MetricResult out;
  out.per_view.assign(views, 0.0);
  bool any_regularized = false;
  std::vector<torch::Tensor> ref_features;
  for (const auto& r : references) ref_features.push_back(extractor.extract(r.unsqueeze(0))[0]);
  for (const auto& scene : renders) {
    require(scene.size() == views, Errc::kInvalidArgument,
            "sifid_mv: every scene needs one render per reference view");
    for (size_t m = 0; m < views; ++m) {
      require(scene[m].sizes() == references[m].sizes(), Errc::kInvalidArgument,
              "sifid_mv: render and reference sizes differ");
      bool reg = false;
      out.per_view[m] += sifid(extractor.extract(scene[m].unsqueeze(0))[0], ref_features[m], eps, &reg);
      any_regularized = any_regularized || reg;
    }
  }
  for (auto& v : out.per_view) v /= static_cast<double>(renders.size());
  out.value = std::accumulate(out.per_view.begin(), out.per_view.end(), 0.0) / static_cast<double>(views);
  if (any_regularized) {
    out.warnings.push_back("feature locations <= feature dimension; covariance regularized with eps*I");
  }
  return out;
}

MetricResult diversity_mv(const std::vector<std::vector<torch::Tensor>>& renders,
                          const std::vector<torch::Tensor>& references) {
  require(!renders.empty() && !references.empty(), Errc::kInvalidArgument,
          "diversity_mv needs renders and references");
  const size_t views = references.size();
  MetricResult out;
  out.per_view.assign(views, std::nan(""));
  double total = 0.0;
  int64_t used = 0;
  for (size_t m = 0; m < views; ++m) {
    std::vector<torch::Tensor> stack;
    for (const auto& scene : renders) {
      require(scene.size() == views, Errc::kInvalidArgument,
              "diversity_mv: every scene needs one render per reference view");
      stack.push_back(scene[m].to(torch::kFloat64));
    }
    const double ref_std = references[m].to(torch::kFloat64).std(/*unbiased=*/false).item<double>();
    if (!(ref_std > 0.0)) {
      out.warnings.push_back("view " + std::to_string(m) + " has a constant reference image; excluded");
      continue;
    }
    const double pixel_std = torch::stack(stack).std(0, /*unbiased=*/false).mean().item<double>();
    out.per_view[m] = pixel_std / ref_std;
    total += out.per_view[m];
    ++used;
  }
  require(used > 0, Errc::kPrecondition, "diversity_mv: every reference image is constant");
  out.value = total / static_cast<double>(used);
  return out;
}

json evaluate(GeneratorStack& stack, const ObservationPyramid& observations, const MetricsConfig& config,
              InceptionExtractor& extractor) {
  config.validate();
  const int N = stack.num_scales();
  for (int n = 1; n <= N; ++n) {
    require(stack.frozen(n), Errc::kPrecondition,
            "evaluate requires a trained stack (scale " + std::to_string(n) + " is not frozen)");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto& finest = observations.at(N);
  const int64_t m_total = finest.color.size(0);

  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> chosen;
  if (config.views_M <= m_total) {
    std::vector<int64_t> order(m_total);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    chosen.assign(order.begin(), order.begin() + config.views_M);
  } else {
    std::uniform_int_distribution<int64_t> pick(0, m_total - 1);
    for (int64_t i = 0; i < config.views_M; ++i) chosen.push_back(pick(rng));
  }

  std::vector<torch::Tensor> references;
  for (auto i : chosen) references.push_back(finest.color[i]);

  stack.eval();
  const int64_t samples = config.samples > 0 ? config.samples : stack.schedule().ray_samples.back();
  std::vector<std::vector<torch::Tensor>> renders;
  std::vector<uint64_t> scene_seeds;
  for (int64_t j = 0; j < config.scenes_J; ++j) {
    const uint64_t scene_seed = config.seed * 1000003ULL + static_cast<uint64_t>(j) + 1;
    scene_seeds.push_back(scene_seed);
    auto scene = sample_scene(stack, scene_seed);
    std::vector<torch::Tensor> row;
    for (auto i : chosen) row.push_back(render_final(stack, scene.volume, finest.cameras[i], samples));
    renders.push_back(std::move(row));
  }

  auto s = sifid_mv(renders, references, extractor, config.eps);
  auto d = diversity_mv(renders, references);
  json per_view = json::array();
  for (size_t k = 0; k < chosen.size(); ++k) {
    json entry = {{"view", chosen[k]}, {"sifid", s.per_view[k]}};
    entry["diversity"] = std::isnan(d.per_view[k]) ? json(nullptr) : json(d.per_view[k]);
    per_view.push_back(entry);
  }
  json warnings = s.warnings;
  for (const auto& w : d.warnings) warnings.push_back(w);
  for (const auto& w : warnings) std::cerr << "singrav: evaluate: " << w.get<std::string>() << "\n";
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return json{{"config", config},
              {"seed", config.seed},
              {"sifid_mv", s.value},
              {"diversity_mv", d.value},
              {"per_view", per_view},
              {"scene_seeds", scene_seeds},
              {"feature_extractor",
               {{"pretrained", extractor.pretrained()}, {"source", extractor.source_description()}}},
              {"warnings", warnings},
              {"wall_time", wall}};
}

}  // namespace singrav
