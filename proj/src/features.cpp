#include "singrav/features.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "singrav/error.hpp"

namespace singrav {

namespace nn = torch::nn;

namespace {

constexpr const char* kVggFile = "vgg19_features.pth";
constexpr const char* kInceptionFile = "inception_v3_stem.pth";

std::optional<std::filesystem::path> resolve_weights(const WeightSource& source, const char* name) {
  if (source.path) {
    require(std::filesystem::exists(*source.path), Errc::kIo,
            "weights file not found: " + source.path->string());
    return source.path;
  }
  auto cached = source.cache_dir / name;
  if (!source.cache_dir.empty() && std::filesystem::exists(cached)) return cached;
  return std::nullopt;
}

void kaiming_init(nn::Module& module, uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::detail::createCPUGenerator(seed);
  for (auto& item : module.named_parameters(true)) {
    auto& p = item.value();
    if (p.dim() == 4) {
      const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
      p.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    } else if (item.key().ends_with("bias")) {
      p.zero_();
    } else {
      p.fill_(1.0);
    }
  }
}

nn::Sequential basic_conv(int64_t in, int64_t out, int64_t stride, int64_t padding) {
  nn::Sequential s;
  s->push_back("conv", nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(padding).bias(false)));
  s->push_back("bn", nn::BatchNorm2d(nn::BatchNormOptions(out).eps(0.001)));
  s->push_back("relu", nn::ReLU());
  return s;
}

}  // namespace

WeightSource WeightSource::from_environment() {
  WeightSource s;
  if (const char* w = std::getenv("SINGRAV_WEIGHTS"); w && *w) {
    s.cache_dir = w;
  } else if (const char* c = std::getenv("SINGRAV_CACHE"); c && *c) {
    s.cache_dir = std::filesystem::path(c) / "weights";
  } else {
    s.cache_dir = std::filesystem::path("cache") / "weights";
  }
  return s;
}

size_t load_state_dict(nn::Module& module, const std::filesystem::path& path, const std::string& prefix) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::kIo, "cannot open weights " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    fail(Errc::kFormat, "weights " + path.string() +
                            " are not a zip-container state dict (re-save with torch.save)");
  }
  require(value.isGenericDict(), Errc::kFormat, "weights file does not hold a state dict");
  auto dict = value.toGenericDict();

  torch::NoGradGuard guard;
  size_t copied = 0;
  auto assign = [&](torch::OrderedDict<std::string, torch::Tensor> targets) {
    for (auto& item : targets) {
      const auto key = prefix + item.key();
      auto it = dict.find(key);
      if (it == dict.end()) continue;
      auto src = it->value().toTensor();
      require(src.sizes() == item.value().sizes(), Errc::kFormat,
              "shape mismatch for " + key + " in " + path.string());
      item.value().copy_(src);
      ++copied;
    }
  };
  assign(module.named_parameters(true));
  assign(module.named_buffers(true));
  return copied;
}

// ---------------------------------------------------------------------------

Vgg19FeaturesImpl::Vgg19FeaturesImpl() {
  features_ = nn::Sequential();
  // Layer plan of the VGG-19 trunk up to relu5_1 (index 29).
  const std::vector<int64_t> plan = {64, 64, -1, 128, 128, -1, 256, 256, 256, 256, -1,
                                     512, 512, 512, 512, -1, 512};
  int64_t ch = 3;
  for (int64_t item : plan) {
    if (item < 0) {
      features_->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
    } else {
      features_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, item, 3).padding(1)));
      features_->push_back(nn::ReLU());
      ch = item;
    }
  }
  register_module("features", features_);
}

std::vector<torch::Tensor> Vgg19FeaturesImpl::forward(const torch::Tensor& x,
                                                      const std::vector<int>& taps) {
  std::vector<torch::Tensor> out;
  if (taps.empty()) return out;
  auto h = x;
  size_t next = 0;
  for (size_t i = 0; i < features_->size() && next < taps.size(); ++i) {
    h = (features_->begin() + i)->forward(h);
    if (static_cast<int>(i) == taps[next]) {
      out.push_back(h);
      ++next;
    }
  }
  require(next == taps.size(), Errc::kInvalidArgument, "VGG tap index beyond relu5_1");
  return out;
}

std::vector<int> vgg19_default_taps() { return {1, 6, 11, 20, 29}; }

VggExtractor::VggExtractor(const WeightSource& source) {
  if (auto path = resolve_weights(source, kVggFile)) {
    const size_t n = load_state_dict(*net_, *path);
    require(n == net_->parameters().size(), Errc::kFormat,
            "VGG-19 weights incomplete in " + path->string());
    pretrained_ = true;
    description_ = path->string();
  } else {
    kaiming_init(*net_, source.fallback_seed);
    description_ = "random(seed=" + std::to_string(source.fallback_seed) + ")";
    std::cerr << "singrav: no VGG-19 weights found in '" << source.cache_dir.string()
              << "', using a seeded random feature extractor\n";
  }
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> VggExtractor::extract(const torch::Tensor& images,
                                                 const std::vector<int>& taps) {
  auto mean = torch::tensor({0.485, 0.456, 0.406}, images.options()).view({1, 3, 1, 1});
  auto std = torch::tensor({0.229, 0.224, 0.225}, images.options()).view({1, 3, 1, 1});
  auto sorted = taps;
  std::sort(sorted.begin(), sorted.end());
  return net_->forward((images - mean) / std, sorted);
}

// ---------------------------------------------------------------------------

InceptionStemImpl::InceptionStemImpl() {
  conv1a_ = register_module("Conv2d_1a_3x3", basic_conv(3, 32, 2, 0));
  conv2a_ = register_module("Conv2d_2a_3x3", basic_conv(32, 32, 1, 0));
  conv2b_ = register_module("Conv2d_2b_3x3", basic_conv(32, 64, 1, 1));
}

torch::Tensor InceptionStemImpl::forward(const torch::Tensor& x) {
  auto h = conv2b_->forward(conv2a_->forward(conv1a_->forward(x)));
  return torch::max_pool2d(h, 3, 2);
}

InceptionExtractor::InceptionExtractor(const WeightSource& source) {
  if (auto path = resolve_weights(source, kInceptionFile)) {
    const size_t n = load_state_dict(*net_, *path);
    require(n >= net_->parameters().size(), Errc::kFormat,
            "Inception stem weights incomplete in " + path->string());
    pretrained_ = true;
    description_ = path->string();
  } else {
    kaiming_init(*net_, source.fallback_seed);
    description_ = "random(seed=" + std::to_string(source.fallback_seed) + ")";
    std::cerr << "singrav: no Inception weights found in '" << source.cache_dir.string()
              << "', using a seeded random feature extractor\n";
  }
  net_->eval();
  for (auto& p : net_->parameters()) p.set_requires_grad(false);
}

torch::Tensor InceptionExtractor::extract(const torch::Tensor& images) {
  torch::NoGradGuard guard;
  return net_->forward(images.to(torch::kFloat32) * 2.0 - 1.0);
}

}  // namespace singrav
