#include "singrav/pyramid.hpp"

#include <cmath>

#include "singrav/error.hpp"
#include "singrav/image.hpp"

namespace singrav {

namespace nn = torch::nn;

void PyramidConfig::validate() const {
  require(num_scales >= 2, Errc::kInvalidArgument, "pyramid needs at least 2 scales");
  require(volume_growth > 1.0 && image_growth > 1.0 && super_resolution > 1.0,
          Errc::kInvalidArgument, "growth factors must exceed 1");
  require(base_volume_res >= 2 && base_image_res >= 1, Errc::kInvalidArgument,
          "base resolutions too small");
  require(layers >= 2, Errc::kInvalidArgument, "networks need at least 2 layers");
  require(hidden_channels >= 1, Errc::kInvalidArgument, "hidden channels must be positive");
  require(samples_first >= 1 && samples_last >= 1, Errc::kInvalidArgument,
          "ray sample counts must be positive");
  require(volume_res_override.empty() ||
              static_cast<int>(volume_res_override.size()) == num_scales - 1,
          Errc::kInvalidArgument, "volume_res_override needs N-1 entries");
  require(image_res_override.empty() ||
              static_cast<int>(image_res_override.size()) == num_scales - 1,
          Errc::kInvalidArgument, "image_res_override needs N-1 entries");
}

void to_json(nlohmann::json& j, const PyramidConfig& c) {
  j = nlohmann::json{{"num_scales", c.num_scales},
                     {"volume_growth", c.volume_growth},
                     {"image_growth", c.image_growth},
                     {"super_resolution", c.super_resolution},
                     {"base_volume_res", c.base_volume_res},
                     {"base_image_res", c.base_image_res},
                     {"max_image_res", c.max_image_res ? nlohmann::json(*c.max_image_res) : nlohmann::json()},
                     {"layers", c.layers},
                     {"hidden_channels", c.hidden_channels},
                     {"norm", c.norm == NormKind::kBatch ? "batch" : "instance"},
                     {"leaky_slope", c.leaky_slope},
                     {"depth_conditioning", c.depth_conditioning},
                     {"samples_first", c.samples_first},
                     {"samples_last", c.samples_last},
                     {"volume_res_override", c.volume_res_override},
                     {"image_res_override", c.image_res_override},
                     {"bounds", {c.bounds.lo, c.bounds.hi}}};
}

void from_json(const nlohmann::json& j, PyramidConfig& c) {
  static const std::vector<std::string> known = {
      "num_scales", "volume_growth", "image_growth", "super_resolution", "base_volume_res",
      "base_image_res", "max_image_res", "layers", "hidden_channels", "norm", "leaky_slope",
      "depth_conditioning", "samples_first", "samples_last", "volume_res_override",
      "image_res_override", "bounds"};
  for (const auto& [key, _] : j.items()) {
    require(std::find(known.begin(), known.end(), key) != known.end(), Errc::kInvalidArgument,
            "unknown pyramid config key: " + key);
  }
  PyramidConfig d;
  c.num_scales = j.value("num_scales", d.num_scales);
  c.volume_growth = j.value("volume_growth", d.volume_growth);
  c.image_growth = j.value("image_growth", d.image_growth);
  c.super_resolution = j.value("super_resolution", d.super_resolution);
  c.base_volume_res = j.value("base_volume_res", d.base_volume_res);
  c.base_image_res = j.value("base_image_res", d.base_image_res);
  c.max_image_res = d.max_image_res;
  if (j.contains("max_image_res")) {
    c.max_image_res = j.at("max_image_res").is_null()
                          ? std::nullopt
                          : std::optional<int64_t>(j.at("max_image_res").get<int64_t>());
  }
  c.layers = j.value("layers", d.layers);
  c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  const auto norm = j.value("norm", std::string("batch"));
  require(norm == "batch" || norm == "instance", Errc::kInvalidArgument,
          "norm must be 'batch' or 'instance'");
  c.norm = norm == "batch" ? NormKind::kBatch : NormKind::kInstance;
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.depth_conditioning = j.value("depth_conditioning", d.depth_conditioning);
  c.samples_first = j.value("samples_first", d.samples_first);
  c.samples_last = j.value("samples_last", d.samples_last);
  c.volume_res_override = j.value("volume_res_override", std::vector<int64_t>{});
  c.image_res_override = j.value("image_res_override", std::vector<int64_t>{});
  if (j.contains("bounds")) {
    c.bounds.lo = j.at("bounds").at(0).get<std::array<double, 3>>();
    c.bounds.hi = j.at("bounds").at(1).get<std::array<double, 3>>();
  }
}

Dims ScaleSchedule::volume_dims(int scale) const {
  require(scale >= 1 && scale <= static_cast<int>(volume_res.size()), Errc::kInvalidArgument,
          "no 3D volume at scale " + std::to_string(scale));
  const int64_t r = volume_res[scale - 1];
  return {r, r, r};
}

int64_t ScaleSchedule::image_res_at(int scale) const {
  const int last = static_cast<int>(image_res.size()) + 1;
  require(scale >= 1 && scale <= last, Errc::kInvalidArgument,
          "no image resolution at scale " + std::to_string(scale));
  return scale == last ? final_image_res : image_res[scale - 1];
}

ScaleSchedule scale_schedule(const PyramidConfig& config) {
  config.validate();
  ScaleSchedule s;
  const int volume_scales = config.num_scales - 1;
  for (int n = 1; n <= volume_scales; ++n) {
    if (!config.volume_res_override.empty()) {
      s.volume_res.push_back(config.volume_res_override[n - 1]);
    } else {
      s.volume_res.push_back(
          round_resolution(config.base_volume_res * std::pow(config.volume_growth, n - 1)));
    }
    int64_t img = config.image_res_override.empty()
                      ? round_resolution(config.base_image_res * std::pow(config.image_growth, n - 1))
                      : config.image_res_override[n - 1];
    if (config.max_image_res) img = std::min(img, *config.max_image_res);
    s.image_res.push_back(img);
    if (volume_scales == 1) {
      s.ray_samples.push_back(config.samples_first);
    } else {
      const double t = static_cast<double>(n - 1) / static_cast<double>(volume_scales - 1);
      s.ray_samples.push_back(round_resolution(
          config.samples_first + t * static_cast<double>(config.samples_last - config.samples_first)));
    }
  }
  s.final_image_res = round_resolution(s.image_res.back() * config.super_resolution);
  return s;
}

// ---------------------------------------------------------------------------

namespace {

nn::AnyModule make_norm3d(NormKind kind, int64_t channels) {
  if (kind == NormKind::kBatch) return nn::AnyModule(nn::BatchNorm3d(channels));
  return nn::AnyModule(nn::InstanceNorm3d(nn::InstanceNorm3dOptions(channels).affine(true)));
}

nn::LeakyReLU leaky(double slope) {
  return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope));
}

}  // namespace

Generator3dImpl::Generator3dImpl(int64_t in_channels, int64_t hidden, int layers, NormKind norm,
                                 double slope)
    : in_channels_(in_channels) {
  body_ = nn::Sequential();
  int64_t ch = in_channels;
  for (int i = 0; i < layers - 1; ++i) {
    body_->push_back(nn::Conv3d(nn::Conv3dOptions(ch, hidden, 3).stride(1).padding(1)));
    body_->push_back(make_norm3d(norm, hidden));
    body_->push_back(leaky(slope));
    ch = hidden;
  }
  tail_ = nn::Conv3d(nn::Conv3dOptions(hidden, kVolumeChannels, 3).stride(1).padding(1));
  register_module("body", body_);
  register_module("tail", tail_);
}

torch::Tensor Generator3dImpl::forward(const torch::Tensor& x) {
  return tail_->forward(body_->forward(x));
}

SuperResolverImpl::SuperResolverImpl(int64_t input_res, int64_t output_res, int64_t hidden,
                                     double slope)
    : input_res_(input_res), output_res_(output_res) {
  auto conv = [](int64_t in, int64_t out) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(1).padding(1));
  };
  auto inorm = [](int64_t c) { return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(true)); };
  body_ = nn::Sequential(conv(3, hidden), leaky(slope),
                         conv(hidden, 16), inorm(16), leaky(slope),
                         conv(16, 8), inorm(8), leaky(slope),
                         conv(8, 8), inorm(8), leaky(slope));
  tail_ = conv(8, 3);
  register_module("body", body_);
  register_module("tail", tail_);
}

torch::Tensor SuperResolverImpl::forward(const torch::Tensor& image) {
  const bool batched = image.dim() == 4;
  auto x = batched ? image : image.unsqueeze(0);
  require(x.size(1) == 3 && x.size(2) == input_res_, Errc::kInvalidArgument,
          "super-resolver expects 3-channel images of height " + std::to_string(input_res_));
  const auto [oh, ow] = scaled_image_size(x.size(2), x.size(3), output_res_);
  auto up = bilinear_resize(x, oh, ow);
  auto out = up + tail_->forward(body_->forward(up));
  return batched ? out : out.squeeze(0);
}

DiscriminatorSpec build_discriminator(int scale, const PyramidConfig& config) {
  require(scale >= 1 && scale <= config.num_scales, Errc::kInvalidArgument,
          "discriminator scale out of range");
  DiscriminatorSpec spec;
  spec.layers = config.layers;
  spec.hidden = 32;
  if (scale == config.num_scales) {
    spec.in_channels = 6;
  } else {
    spec.in_channels = config.depth_conditioning ? 4 : 3;
  }
  return spec;
}

Discriminator2dImpl::Discriminator2dImpl(const DiscriminatorSpec& spec, double slope) : spec_(spec) {
  body_ = nn::Sequential();
  int64_t ch = spec.in_channels;
  for (int i = 0; i < spec.layers - 1; ++i) {
    body_->push_back(
        nn::Conv2d(nn::Conv2dOptions(ch, spec.hidden, spec.kernel).stride(1).padding(spec.padding)));
    body_->push_back(leaky(slope));
    ch = spec.hidden;
  }
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, 1, spec.kernel).stride(1).padding(spec.padding)));
  register_module("body", body_);
}

torch::Tensor Discriminator2dImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == spec_.in_channels, Errc::kInvalidArgument,
          "discriminator expects [B, " + std::to_string(spec_.in_channels) + ", H, W] input");
  return body_->forward(x);
}

void init_weights(nn::Module& module, torch::Generator& gen, double std) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters(true)) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (is_bias) {
      p.zero_();
    } else if (p.dim() == 1) {
      p.normal_(1.0, std, gen);  // normalization scale
    } else {
      p.normal_(0.0, std, gen);
    }
  }
}

void warm_start(nn::Module& dst, const nn::Module& src) {
  torch::NoGradGuard guard;
  auto copy_named = [](torch::OrderedDict<std::string, torch::Tensor> to,
                       const torch::OrderedDict<std::string, torch::Tensor>& from) {
    for (auto& item : to) {
      const auto* other = from.find(item.key());
      if (other == nullptr) continue;
      auto& t = item.value();
      if (t.sizes() == other->sizes()) {
        t.copy_(*other);
      } else if (t.dim() >= 2 && t.dim() == other->dim() && t.size(0) == other->size(0)) {
        const int64_t ch = std::min(t.size(1), other->size(1));
        t.narrow(1, 0, ch).copy_(other->narrow(1, 0, ch));
      }
    }
  };
  copy_named(dst.named_parameters(true), src.named_parameters(true));
  copy_named(dst.named_buffers(true), src.named_buffers(true));
}

void set_requires_grad(nn::Module& module, bool flag) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(flag);
}

// ---------------------------------------------------------------------------

NoiseStack NoiseStack::clone() const {
  NoiseStack out{{}, seed};
  for (const auto& t : z) out.z.push_back(t.clone());
  return out;
}

int64_t noise_channels(int scale) { return scale == 1 ? 3 : kVolumeChannels; }

NoiseStack draw_noise(const ScaleSchedule& schedule, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  NoiseStack stack;
  stack.seed = seed;
  for (int n = 1; n <= static_cast<int>(schedule.volume_res.size()); ++n) {
    const Dims d = schedule.volume_dims(n);
    stack.z.push_back(torch::randn({noise_channels(n), d.w, d.h, d.u}, gen));
  }
  return stack;
}

NoiseStack reconstruction_noise(const ScaleSchedule& schedule, const torch::Tensor& z1_star) {
  NoiseStack stack;
  stack.z.push_back(z1_star);
  for (int n = 2; n <= static_cast<int>(schedule.volume_res.size()); ++n) {
    const Dims d = schedule.volume_dims(n);
    stack.z.push_back(torch::zeros({noise_channels(n), d.w, d.h, d.u}));
  }
  return stack;
}

GeneratorStack::GeneratorStack(PyramidConfig config, uint64_t init_seed)
    : config_(std::move(config)), schedule_(scale_schedule(config_)) {
  auto gen = at::detail::createCPUGenerator(init_seed);
  for (int n = 1; n <= config_.volume_scales(); ++n) {
    Generator3d g(noise_channels(n), config_.hidden_channels, config_.layers, config_.norm,
                  config_.leaky_slope);
    init_weights(*g, gen);
    generators_.push_back(g);
  }
  super_resolver_ = SuperResolver(schedule_.image_res.back(), schedule_.final_image_res,
                                  config_.hidden_channels, config_.leaky_slope);
  init_weights(*super_resolver_, gen);
  for (int n = 1; n <= config_.num_scales; ++n) {
    Discriminator2d d(build_discriminator(n, config_), config_.leaky_slope);
    init_weights(*d, gen);
    discriminators_.push_back(d);
  }
  frozen_.assign(config_.num_scales, false);
  const Dims d1 = schedule_.volume_dims(1);
  z1_star_ = torch::randn({noise_channels(1), d1.w, d1.h, d1.u}, gen);
}

Generator3d& GeneratorStack::generator(int scale) {
  require(scale >= 1 && scale <= config_.volume_scales(), Errc::kInvalidArgument,
          "no 3D generator at scale " + std::to_string(scale));
  return generators_[scale - 1];
}

const Generator3d& GeneratorStack::generator(int scale) const {
  require(scale >= 1 && scale <= config_.volume_scales(), Errc::kInvalidArgument,
          "no 3D generator at scale " + std::to_string(scale));
  return generators_[scale - 1];
}

Discriminator2d& GeneratorStack::discriminator(int scale) {
  require(scale >= 1 && scale <= config_.num_scales, Errc::kInvalidArgument,
          "no discriminator at scale " + std::to_string(scale));
  return discriminators_[scale - 1];
}

void GeneratorStack::set_frozen(int scale, bool flag) {
  require(scale >= 1 && scale <= config_.num_scales, Errc::kInvalidArgument, "scale out of range");
  frozen_[scale - 1] = flag;
  for (auto* m : scale_modules(scale)) {
    set_requires_grad(*m, !flag);
    if (flag) m->eval();
  }
}

void GeneratorStack::eval() {
  for (auto& g : generators_) g->eval();
  super_resolver_->eval();
  for (auto& d : discriminators_) d->eval();
}

std::vector<nn::Module*> GeneratorStack::scale_modules(int scale) {
  std::vector<nn::Module*> out;
  if (scale == config_.num_scales) {
    out.push_back(super_resolver_.get());
  } else {
    out.push_back(generator(scale).get());
  }
  out.push_back(discriminator(scale).get());
  return out;
}

// ---------------------------------------------------------------------------

torch::Tensor generate_coarsest(Generator3d& g1, const torch::Tensor& z1, const torch::Tensor& csg) {
  const bool batched = z1.dim() == 5;
  auto z = batched ? z1 : z1.unsqueeze(0);
  require(z.dim() == 5 && csg.dim() == 4 && z.size(1) == csg.size(0) &&
              z.size(2) == csg.size(1) && z.size(3) == csg.size(2) && z.size(4) == csg.size(3),
          Errc::kInvalidArgument, "z1 and csg grid shapes differ");
  require(z.size(1) == g1->in_channels(), Errc::kInvalidArgument,
          "z1 channel count does not match G1");
  auto out = g1->forward(z + csg.unsqueeze(0).to(z.scalar_type()));
  return batched ? out : out.squeeze(0);
}

torch::Tensor refine(Generator3d& gn, const torch::Tensor& prev, const torch::Tensor& zn, Dims dims) {
  const bool batched = zn.dim() == 5;
  auto z = batched ? zn : zn.unsqueeze(0);
  auto p = prev.dim() == 5 ? prev : prev.unsqueeze(0);
  require(z.dim() == 5 && z.size(1) == gn->in_channels() && z.size(2) == dims.w &&
              z.size(3) == dims.h && z.size(4) == dims.u,
          Errc::kInvalidArgument, "noise shape does not match scale dims " + to_string(dims));
  require(p.size(1) == kVolumeChannels, Errc::kInvalidArgument, "previous volume must have 4 channels");
  auto up = resample_grid(p, dims);
  auto out = up + gn->forward(z + up);
  return batched ? out : out.squeeze(0);
}

torch::Tensor super_resolve(SuperResolver& gn, const torch::Tensor& image) {
  return gn->forward(image);
}

torch::Tensor generate_to_scale(GeneratorStack& stack, const std::vector<torch::Tensor>& noise,
                                int last_scale) {
  require(last_scale >= 1 && last_scale <= stack.config().volume_scales(), Errc::kInvalidArgument,
          "generate_to_scale: scale out of range");
  require(static_cast<int>(noise.size()) >= last_scale, Errc::kInvalidArgument,
          "generate_to_scale: not enough noise volumes");
  const auto& schedule = stack.schedule();
  auto csg = make_csg_grid(schedule.volume_dims(1));
  auto v = generate_coarsest(stack.generator(1), noise[0], csg);
  for (int n = 2; n <= last_scale; ++n) {
    v = refine(stack.generator(n), v, noise[n - 1], schedule.volume_dims(n));
  }
  return v;
}

SceneSample sample_scene(GeneratorStack& stack, uint64_t seed) {
  return sample_scene(stack, draw_noise(stack.schedule(), seed));
}

SceneSample sample_scene(GeneratorStack& stack, const NoiseStack& noise) {
  torch::NoGradGuard guard;
  const int last = stack.config().volume_scales();
  auto v = generate_to_scale(stack, noise.z, last);
  return {RadianceVolume(v.contiguous(), stack.config().bounds), noise};
}

RadianceVolume reconstruction_volume(GeneratorStack& stack) {
  return sample_scene(stack, reconstruction_noise(stack.schedule(), stack.z1_star())).volume;
}

}  // namespace singrav
