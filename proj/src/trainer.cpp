#include "singrav/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "singrav/error.hpp"
#include "singrav/image.hpp"
#include "singrav/png_io.hpp"
#include "singrav/renderer.hpp"

namespace singrav {

using nlohmann::json;
namespace fs = std::filesystem;
using torch::indexing::Slice;

namespace {

constexpr const char* kCheckpointFormat = "singrav-checkpoint-1";

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t scale_seed(uint64_t seed, int scale) { return splitmix(seed ^ splitmix(static_cast<uint64_t>(scale))); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename Holder>
void save_module(const Holder& module, const fs::path& path) {
  const auto tmp = path.string() + ".tmp";
  torch::save(module, tmp);
  fs::rename(tmp, path);
}

template <typename Holder>
void load_module(Holder& module, const fs::path& path) {
  require(fs::exists(path), Errc::kNotFound, "checkpoint file missing: " + path.string());
  torch::load(module, path.string());
}

json scale_config_json(GeneratorStack& stack, int n, uint64_t seed) {
  const auto& cfg = stack.config();
  const auto& s = stack.schedule();
  const int N = stack.num_scales();
  auto& d = stack.discriminator(n);
  json j = {{"scale", n},
            {"layers", cfg.layers},
            {"hidden_channels", cfg.hidden_channels},
            {"seed", seed},
            {"frozen", stack.frozen(n)},
            {"image_res", s.image_res_at(n)},
            {"discriminator", {{"in_channels", d->spec().in_channels}, {"layers", d->spec().layers}}}};
  if (n < N) {
    const Dims dims = s.volume_dims(n);
    j["kind"] = "generator3d";
    j["volume_dims"] = {dims.w, dims.h, dims.u};
    j["in_channels"] = stack.generator(n)->in_channels();
    j["ray_samples"] = s.ray_samples[n - 1];
    j["norm"] = cfg.norm == NormKind::kBatch ? "batch" : "instance";
  } else {
    j["kind"] = "super_resolver";
    j["input_res"] = stack.super_resolver()->input_res();
    j["output_res"] = stack.super_resolver()->output_res();
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate(int num_scales) const {
  require(epochs_per_scale >= 1, Errc::kInvalidArgument, "epochs_per_scale must be >= 1");
  require(recon_only_epochs >= 0 && recon_only_epochs <= epochs_per_scale, Errc::kInvalidArgument,
          "recon_only_epochs must lie in [0, epochs_per_scale]");
  require(d_steps >= 1 && g_steps >= 1, Errc::kInvalidArgument, "d_steps and g_steps must be >= 1");
  require(lr > 0.0, Errc::kInvalidArgument, "lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::kInvalidArgument,
          "Adam betas must lie in [0, 1)");
  require(static_cast<int>(adv_batch.size()) == num_scales &&
              static_cast<int>(recon_batch.size()) == num_scales,
          Errc::kInvalidArgument,
          "adv_batch and recon_batch need one entry per scale (" + std::to_string(num_scales) + ")");
  for (size_t i = 0; i < adv_batch.size(); ++i) {
    require(adv_batch[i] >= 1 && recon_batch[i] >= 1, Errc::kInvalidArgument, "batch sizes must be >= 1");
  }
  require(steps_per_epoch >= 0, Errc::kInvalidArgument, "steps_per_epoch must be >= 0");
  require(max_rays >= 1 && crop_size >= 16 && chunk_rays >= 1, Errc::kInvalidArgument,
          "max_rays, chunk_rays must be >= 1 and crop_size >= 16");
  weights.validate();
  swd.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs_per_scale", c.epochs_per_scale},
           {"recon_only_epochs", c.recon_only_epochs},
           {"d_steps", c.d_steps},
           {"g_steps", c.g_steps},
           {"lr", c.lr},
           {"betas", {c.beta1, c.beta2}},
           {"adv_batch", c.adv_batch},
           {"recon_batch", c.recon_batch},
           {"steps_per_epoch", c.steps_per_epoch},
           {"max_rays", c.max_rays},
           {"crop_size", c.crop_size},
           {"chunk_rays", c.chunk_rays},
           {"normalize_depth", c.normalize_depth},
           {"self_depth", c.self_depth},
           {"weights", c.weights},
           {"swd", c.swd},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  static const std::vector<std::string> keys = {
      "epochs_per_scale", "recon_only_epochs", "d_steps", "g_steps", "lr", "betas", "adv_batch",
      "recon_batch", "steps_per_epoch", "max_rays", "crop_size", "chunk_rays", "normalize_depth",
      "self_depth", "weights", "swd", "seed"};
  for (const auto& [key, _] : j.items()) {
    require(std::find(keys.begin(), keys.end(), key) != keys.end(), Errc::kInvalidArgument,
            "unknown train key: " + key);
  }
  TrainConfig d;
  c.epochs_per_scale = j.value("epochs_per_scale", d.epochs_per_scale);
  c.recon_only_epochs = j.value("recon_only_epochs", d.recon_only_epochs);
  c.d_steps = j.value("d_steps", d.d_steps);
  c.g_steps = j.value("g_steps", d.g_steps);
  c.lr = j.value("lr", d.lr);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  c.adv_batch = j.value("adv_batch", d.adv_batch);
  c.recon_batch = j.value("recon_batch", d.recon_batch);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.max_rays = j.value("max_rays", d.max_rays);
  c.crop_size = j.value("crop_size", d.crop_size);
  c.chunk_rays = j.value("chunk_rays", d.chunk_rays);
  c.normalize_depth = j.value("normalize_depth", d.normalize_depth);
  c.self_depth = j.value("self_depth", d.self_depth);
  c.weights = j.value("weights", d.weights);
  c.swd = j.value("swd", d.swd);
  c.seed = j.value("seed", d.seed);
}

void freeze_scale(GeneratorStack& stack, int scale) { stack.set_frozen(scale, true); }

// ---------------------------------------------------------------------------

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  const auto path = dir / "pyramid.json";
  require(fs::exists(path), Errc::kNotFound, "no checkpoint at " + dir.string() + " (pyramid.json missing)");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(Errc::kFormat, "malformed " + path.string() + ": " + e.what());
  }
  require(j.value("format", "") == kCheckpointFormat, Errc::kFormat,
          "unsupported checkpoint format in " + path.string());
  CheckpointInfo info;
  info.pyramid = j.at("pyramid").get<PyramidConfig>();
  info.train_config = j.value("train", json(nullptr));
  info.init_seed = j.value("init_seed", uint64_t{0});
  info.completed_scales = j.value("completed_scales", 0);
  info.dataset_hash = j.value("dataset_hash", "");
  return info;
}

void save_scale(const fs::path& dir, GeneratorStack& stack, int scale, const CheckpointInfo& info) {
  const auto scale_dir = dir / ("scale_" + std::to_string(scale));
  fs::create_directories(scale_dir);
  if (scale < stack.num_scales()) {
    save_module(stack.generator(scale), scale_dir / "generator.pt");
  } else {
    save_module(stack.super_resolver(), scale_dir / "generator.pt");
  }
  save_module(stack.discriminator(scale), scale_dir / "discriminator.pt");
  const uint64_t seed = info.train_config.is_object() ? info.train_config.value("seed", uint64_t{0}) : 0;
  write_file_atomic(scale_dir / "scale_config.json",
                    scale_config_json(stack, scale, scale_seed(seed, scale)).dump(2));
  {
    const auto tmp = (dir / "z1_star.pt.tmp").string();
    torch::save(stack.z1_star(), tmp);
    fs::rename(tmp, dir / "z1_star.pt");
  }
  json scales = json::array();
  for (int n = 1; n <= info.completed_scales; ++n) scales.push_back("scale_" + std::to_string(n));
  json index = {{"format", kCheckpointFormat},
                {"pyramid", info.pyramid},
                {"train", info.train_config},
                {"init_seed", info.init_seed},
                {"completed_scales", info.completed_scales},
                {"num_scales", info.pyramid.num_scales},
                {"dataset_hash", info.dataset_hash},
                {"scales", scales}};
  write_file_atomic(dir / "pyramid.json", index.dump(2));
}

void load_scales(const fs::path& dir, GeneratorStack& stack, int completed) {
  require(completed <= stack.num_scales(), Errc::kFormat, "checkpoint lists more scales than the pyramid");
  if (fs::exists(dir / "z1_star.pt")) {
    torch::Tensor z;
    torch::load(z, (dir / "z1_star.pt").string());
    require(z.sizes() == stack.z1_star().sizes(), Errc::kFormat, "z1_star shape mismatch in checkpoint");
    stack.set_z1_star(z);
  }
  for (int n = 1; n <= completed; ++n) {
    const auto scale_dir = dir / ("scale_" + std::to_string(n));
    if (n < stack.num_scales()) {
      load_module(stack.generator(n), scale_dir / "generator.pt");
    } else {
      load_module(stack.super_resolver(), scale_dir / "generator.pt");
    }
    load_module(stack.discriminator(n), scale_dir / "discriminator.pt");
    freeze_scale(stack, n);
  }
}

GeneratorStack load_checkpoint(const fs::path& dir) {
  const auto info = read_checkpoint_info(dir);
  GeneratorStack stack(info.pyramid, info.init_seed);
  load_scales(dir, stack, info.completed_scales);
  stack.eval();
  return stack;
}

// ---------------------------------------------------------------------------
// Trainer internals

struct Trainer::ScaleState {
  int n = 0;
  int N = 0;
  at::Generator gen;
  std::mt19937_64 rng;
  const ScaleObservations* obs = nullptr;
  const ScaleObservations* obs_low = nullptr;  // scale N-1 observations (finest scale only)
  int64_t views = 0;
  RaySampleSpec spec;
  torch::Tensor depth;           // [m, H, W] world units, may be undefined
  torch::Tensor recon_prev;      // V*_{n-1}
  std::vector<torch::Tensor> recon_low;  // finest scale: renders of V*_{N-1}
  bool use_depth = false;
};

Trainer::Trainer(GeneratorStack& stack, const ObservationPyramid& observations, TrainConfig config,
                 uint64_t init_seed)
    : stack_(stack), obs_(observations), config_(std::move(config)), init_seed_(init_seed) {
  config_.validate(stack_.num_scales());
  require(static_cast<int>(obs_.scales.size()) == stack_.num_scales(), Errc::kInvalidArgument,
          "observation pyramid has " + std::to_string(obs_.scales.size()) + " levels, the stack " +
              std::to_string(stack_.num_scales()));
  const bool has_depth = obs_.scales.front().depth.defined();
  if (stack_.config().depth_conditioning && !has_depth) {
    require(config_.self_depth, Errc::kPrecondition,
            "dataset has no depth maps; enable self_depth or disable depth_conditioning");
  }
  wall_start_ = std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

CheckpointInfo Trainer::info() const {
  CheckpointInfo info;
  info.pyramid = stack_.config();
  info.train_config = config_;
  info.init_seed = init_seed_;
  info.dataset_hash = obs_.content_hash;
  return info;
}

torch::Tensor Trainer::prepare_depth(const torch::Tensor& depth, const Camera& camera) const {
  if (!config_.normalize_depth) return depth;
  return normalize_depth(depth, camera.near, camera.far);
}

namespace {

struct Rendered {
  torch::Tensor color;  // [3, h, w] or [3, P]
  torch::Tensor depth;  // [h, w] or [P]
};

Rendered render_window(const torch::Tensor& values, const Bounds& bounds, const Camera& cam, int64_t r0,
                       int64_t c0, int64_t rows, int64_t cols, const RaySampleSpec& spec) {
  auto rays = generate_rays_window(cam, r0, c0, rows, cols);
  auto out = render_rays(values, bounds, rays, cam.near, cam.far, spec);
  return {out.color.t().reshape({3, rows, cols}), out.depth.reshape({rows, cols})};
}

Rendered render_pixels(const torch::Tensor& values, const Bounds& bounds, const Camera& cam,
                       const torch::Tensor& pixels, const RaySampleSpec& spec) {
  auto rays = generate_rays(cam, pixels);
  auto out = render_rays(values, bounds, rays, cam.near, cam.far, spec);
  return {out.color.t(), out.depth};
}

int64_t pick(std::mt19937_64& rng, int64_t count) {
  return std::uniform_int_distribution<int64_t>(0, count - 1)(rng);
}

}  // namespace

Trainer::ReconTerms Trainer::recon_terms(ScaleState& s) {
  ReconTerms terms;
  const auto& bounds = stack_.config().bounds;
  const int64_t batch = config_.recon_batch[s.n - 1];
  torch::Tensor color_err = torch::zeros({});
  torch::Tensor depth_err = torch::zeros({});
  if (s.n < s.N) {
    torch::Tensor v;
    if (s.n == 1) {
      v = generate_coarsest(stack_.generator(1), stack_.z1_star(), make_csg_grid(stack_.schedule().volume_dims(1)));
    } else {
      const Dims dims = stack_.schedule().volume_dims(s.n);
      v = refine(stack_.generator(s.n), s.recon_prev,
                 torch::zeros({noise_channels(s.n), dims.w, dims.h, dims.u}), dims);
    }
    const int64_t h = s.obs->height, w = s.obs->width;
    const bool subset = std::max(h, w) > config_.crop_size && h * w > config_.max_rays;
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t i = pick(s.rng, s.views);
      const auto& cam = s.obs->cameras[i];
      Rendered r;
      torch::Tensor target_c, target_d;
      if (subset) {
        auto pixels = torch::randperm(h * w, s.gen, torch::kLong).slice(0, 0, config_.max_rays);
        r = render_pixels(v, bounds, cam, pixels, s.spec);
        target_c = s.obs->color[i].flatten(1).index_select(1, pixels);
        if (s.use_depth) target_d = s.depth[i].flatten().index_select(0, pixels);
      } else {
        RenderOutput out = render(v, bounds, cam, s.spec);
        r = {out.color, out.depth};
        target_c = s.obs->color[i];
        if (s.use_depth) target_d = s.depth[i];
      }
      color_err = color_err + (r.color - target_c).pow(2).mean();
      if (s.use_depth) {
        depth_err = depth_err + (prepare_depth(r.depth, cam) - prepare_depth(target_d, cam)).pow(2).mean();
      }
    }
  } else {
    auto& sr = stack_.super_resolver();
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t i = pick(s.rng, s.views);
      auto out = sr->forward(s.recon_low[i]);
      color_err = color_err + (out - s.obs->color[i]).pow(2).mean();
    }
  }
  terms.color_mse = color_err / static_cast<double>(batch);
  terms.depth_mse = depth_err / static_cast<double>(batch);
  terms.total = config_.weights.color * terms.color_mse;
  if (s.n < s.N && s.use_depth) terms.total = terms.total + config_.weights.depth * terms.depth_mse;
  return terms;
}

torch::Tensor Trainer::fake_batch(ScaleState& s, int64_t batch, torch::Tensor* low_out) {
  const auto& schedule = stack_.schedule();
  const auto& bounds = stack_.config().bounds;
  std::vector<torch::Tensor> noise;
  const int last3d = std::min(s.n, s.N - 1);
  for (int k = 1; k <= last3d; ++k) {
    const Dims d = schedule.volume_dims(k);
    noise.push_back(torch::randn({batch, noise_channels(k), d.w, d.h, d.u}, s.gen));
  }
  if (s.n < s.N) {
    torch::Tensor v;
    if (s.n == 1) {
      v = generate_coarsest(stack_.generator(1), noise[0], make_csg_grid(schedule.volume_dims(1)));
    } else {
      torch::Tensor prev;
      {
        torch::NoGradGuard guard;
        prev = generate_to_scale(stack_, noise, s.n - 1);
      }
      v = refine(stack_.generator(s.n), prev, noise[s.n - 1], schedule.volume_dims(s.n));
    }
    const int64_t h = s.obs->height, w = s.obs->width;
    const int64_t rows = std::min(h, config_.crop_size), cols = std::min(w, config_.crop_size);
    std::vector<torch::Tensor> images;
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t i = pick(s.rng, s.views);
      const auto& cam = s.obs->cameras[i];
      const int64_t r0 = pick(s.rng, h - rows + 1), c0 = pick(s.rng, w - cols + 1);
      auto r = render_window(v[b], bounds, cam, r0, c0, rows, cols, s.spec);
      auto depth = stack_.config().depth_conditioning ? prepare_depth(r.depth, cam).unsqueeze(0)
                                                      : torch::Tensor();
      images.push_back(depth.defined() ? torch::cat({r.color, depth}, 0) : r.color);
    }
    return torch::stack(images);
  }
  // Finest scale: frozen 3D cascade, full low-resolution renders, then G_N.
  std::vector<torch::Tensor> lows;
  {
    torch::NoGradGuard guard;
    auto v = generate_to_scale(stack_, noise, s.N - 1);
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t i = pick(s.rng, s.views);
      lows.push_back(render(v[b], bounds, s.obs_low->cameras[i], s.spec).color);
    }
  }
  auto low = torch::stack(lows);
  if (low_out) *low_out = low;
  auto high = stack_.super_resolver()->forward(low);
  return crop(s, build_disc_input(s.N, s.N, high, low, true));
}

torch::Tensor Trainer::real_batch(ScaleState& s, int64_t batch, std::vector<int64_t>* views_out) {
  const int64_t h = s.obs->height, w = s.obs->width;
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> highs, lows;
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t i = pick(s.rng, s.views);
    if (views_out) views_out->push_back(i);
    if (s.n == s.N) {
      highs.push_back(s.obs->color[i]);
      lows.push_back(s.obs_low->color[i]);
      continue;
    }
    const int64_t rows = std::min(h, config_.crop_size), cols = std::min(w, config_.crop_size);
    const int64_t r0 = pick(s.rng, h - rows + 1), c0 = pick(s.rng, w - cols + 1);
    auto color = s.obs->color[i].index({Slice(), Slice(r0, r0 + rows), Slice(c0, c0 + cols)});
    if (stack_.config().depth_conditioning) {
      auto depth = s.depth[i].index({Slice(r0, r0 + rows), Slice(c0, c0 + cols)});
      images.push_back(torch::cat({color, prepare_depth(depth, s.obs->cameras[i]).unsqueeze(0)}, 0));
    } else {
      images.push_back(color);
    }
  }
  if (s.n == s.N) {
    return crop(s, build_disc_input(s.N, s.N, torch::stack(highs), torch::stack(lows), true));
  }
  return torch::stack(images);
}

torch::Tensor Trainer::crop(ScaleState& s, const torch::Tensor& x) {
  const int64_t h = x.size(2), w = x.size(3);
  if (std::max(h, w) <= config_.crop_size) return x;
  const int64_t rows = std::min(h, config_.crop_size), cols = std::min(w, config_.crop_size);
  const int64_t r0 = pick(s.rng, h - rows + 1), c0 = pick(s.rng, w - cols + 1);
  return x.index({Slice(), Slice(), Slice(r0, r0 + rows), Slice(c0, c0 + cols)});
}

void Trainer::check_finite(const StepLog& log) const {
  for (double v : {log.d_loss, log.g_loss, log.rec_loss, log.swd_loss}) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss at scale " << log.scale << ", step " << log.step << ": d_loss=" << log.d_loss
         << " g_loss=" << log.g_loss << " rec_loss=" << log.rec_loss << " swd_loss=" << log.swd_loss
         << " (try a lower lr or a smaller gp_weight)";
      fail(Errc::kNumerical, os.str());
    }
  }
}

void Trainer::record(const StepLog& log) {
  check_finite(log);
  if (checkpoint_dir_) {
    fs::create_directories(*checkpoint_dir_);
    const auto path = *checkpoint_dir_ / "train_log.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    require(static_cast<bool>(out), Errc::kIo, "cannot write " + path.string());
    if (fresh) out << "step,scale,d_loss,g_loss,rec_loss,swd_loss,wall_time\n";
    out << log.step << ',' << log.scale << ',' << log.d_loss << ',' << log.g_loss << ',' << log.rec_loss
        << ',' << log.swd_loss << ',' << log.wall_time << '\n';
  }
  if (progress_) progress_(log);
}

void Trainer::refresh_self_depth(ScaleState& s) {
  torch::NoGradGuard guard;
  const auto& bounds = stack_.config().bounds;
  torch::Tensor v;
  if (s.n == 1) {
    v = generate_coarsest(stack_.generator(1), stack_.z1_star(), make_csg_grid(stack_.schedule().volume_dims(1)));
  } else {
    const Dims dims = stack_.schedule().volume_dims(s.n);
    v = refine(stack_.generator(s.n), s.recon_prev, torch::zeros({noise_channels(s.n), dims.w, dims.h, dims.u}),
               dims);
  }
  std::vector<torch::Tensor> depths;
  for (int64_t i = 0; i < s.views; ++i) depths.push_back(render(v, bounds, s.obs->cameras[i], s.spec).depth);
  s.depth = torch::stack(depths);
  s.use_depth = true;
}

ScaleReport Trainer::train_scale(int n) {
  const int N = stack_.num_scales();
  require(n >= 1 && n <= N, Errc::kInvalidArgument, "train_scale: scale out of range");
  for (int k = 1; k < n; ++k) {
    require(stack_.frozen(k), Errc::kPrecondition,
            "train_scale(" + std::to_string(n) + "): scale " + std::to_string(k) + " is not trained and frozen");
  }
  const auto t0 = std::chrono::steady_clock::now();

  ScaleState s;
  s.n = n;
  s.N = N;
  const uint64_t seed = scale_seed(config_.seed, n);
  s.gen = at::detail::createCPUGenerator(seed);
  s.rng.seed(seed);
  s.obs = &obs_.at(n);
  s.views = s.obs->color.size(0);
  s.spec.samples = stack_.schedule().ray_samples[std::min(n, N - 1) - 1];
  s.spec.chunk_rays = config_.chunk_rays;
  if (n < N) {
    s.depth = s.obs->depth;
    s.use_depth = s.depth.defined() && !config_.self_depth;
  }

  // Warm start and unfreeze this scale's networks.
  stack_.set_frozen(n, false);
  if (n > 1 && n < N) {
    warm_start(*stack_.generator(n), *stack_.generator(n - 1));
    warm_start(*stack_.discriminator(n), *stack_.discriminator(n - 1));
  }
  for (auto* m : stack_.scale_modules(n)) m->train();

  {
    torch::NoGradGuard guard;
    if (n > 1 && n < N) {
      auto z = reconstruction_noise(stack_.schedule(), stack_.z1_star());
      s.recon_prev = generate_to_scale(stack_, z.z, n - 1);
    }
    if (n == N) {
      s.obs_low = &obs_.at(N - 1);
      auto v = reconstruction_volume(stack_);
      for (int64_t i = 0; i < s.views; ++i) {
        s.recon_low.push_back(render(v, s.obs_low->cameras[i], s.spec).color);
      }
    }
  }

  torch::nn::Module* g_module = stack_.scale_modules(n)[0];
  auto& d_net = stack_.discriminator(n);
  torch::optim::Adam opt_g(g_module->parameters(),
                           torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2}));
  torch::optim::Adam opt_d(d_net->parameters(),
                           torch::optim::AdamOptions(config_.lr).betas({config_.beta1, config_.beta2}));
  Critic critic = [&](const torch::Tensor& x) { return patch_score(d_net->forward(x)); };

  const int64_t adv_batch = config_.adv_batch[n - 1];
  const int64_t steps_per_epoch =
      config_.steps_per_epoch > 0 ? config_.steps_per_epoch : (s.views + adv_batch - 1) / adv_batch;

  // SWD only runs in adversarial steps; recon-only runs never load VGG.
  if (n == N && config_.weights.swd > 0.0 && config_.adversarial_epochs() > 0 && !vgg_) {
    vgg_ = std::make_unique<VggExtractor>(weights_);
  }

  ScaleReport report;
  report.scale = n;
  auto wall = [&] { return seconds_since(t0); };

  for (int64_t epoch = 0; epoch < config_.epochs_per_scale; ++epoch) {
    const bool recon_only = epoch < config_.recon_only_epochs;
    if (!recon_only && epoch == config_.recon_only_epochs && config_.self_depth && n < N) {
      refresh_self_depth(s);
    }
    for (int64_t step = 0; step < steps_per_epoch; ++step) {
      StepLog log;
      log.scale = n;
      if (recon_only) {
        opt_g.zero_grad();
        auto terms = recon_terms(s);
        terms.total.backward();
        opt_g.step();
        log.rec_loss = terms.total.item<double>();
        log.color_mse = terms.color_mse.item<double>();
      } else {
        for (int64_t k = 0; k < config_.d_steps; ++k) {
          torch::Tensor fake;
          {
            torch::NoGradGuard guard;
            fake = fake_batch(s, adv_batch, nullptr);
          }
          auto real = real_batch(s, adv_batch, nullptr);
          if (real.sizes() != fake.sizes()) real = crop_to(real, fake);
          opt_d.zero_grad();
          auto gp = gradient_penalty(critic, real, fake, s.gen);
          auto d_loss = critic(fake).mean() - critic(real).mean() + config_.weights.gradient_penalty * gp;
          d_loss.backward();
          opt_d.step();
          log.d_loss = d_loss.item<double>();
        }
        set_requires_grad(*d_net, false);
        for (int64_t k = 0; k < config_.g_steps; ++k) {
          opt_g.zero_grad();
          auto fake = fake_batch(s, adv_batch, nullptr);
          auto adv = -critic(fake).mean();
          auto terms = recon_terms(s);
          torch::Tensor swd;
          if (n == N && config_.weights.swd > 0.0) {
            std::vector<int64_t> views;
            real_batch(s, 1, &views);
            auto fake_rgb = fake.index({Slice(0, 1), Slice(0, 3)});
            auto real_rgb = s.obs->color[views[0]].unsqueeze(0);
            real_rgb = crop_like(s, real_rgb, fake_rgb);
            swd = config_.weights.swd * swd_loss(fake_rgb, real_rgb, *vgg_, config_.swd);
            log.swd_loss = swd.item<double>();
          }
          auto total = total_loss(n, N, adv, terms.total, swd);
          total.backward();
          opt_g.step();
          log.g_loss = adv.item<double>();
          log.rec_loss = terms.total.item<double>();
          log.color_mse = terms.color_mse.item<double>();
        }
        set_requires_grad(*d_net, true);
      }
      log.step = ++global_step_;
      log.wall_time = wall();
      record(log);
      report.log.push_back(log);
    }
  }
  freeze_scale(stack_, n);
  return report;
}

torch::Tensor Trainer::crop_to(const torch::Tensor& x, const torch::Tensor& like) {
  return x.index({Slice(), Slice(), Slice(0, like.size(2)), Slice(0, like.size(3))});
}

torch::Tensor Trainer::crop_like(ScaleState& s, const torch::Tensor& x, const torch::Tensor& like) {
  const int64_t rows = like.size(2), cols = like.size(3);
  if (x.size(2) == rows && x.size(3) == cols) return x;
  const int64_t r0 = pick(s.rng, x.size(2) - rows + 1), c0 = pick(s.rng, x.size(3) - cols + 1);
  return x.index({Slice(), Slice(), Slice(r0, r0 + rows), Slice(c0, c0 + cols)});
}

std::vector<ScaleReport> Trainer::train_all(bool resume, int last_scale) {
  const int N = stack_.num_scales();
  const int stop = last_scale > 0 ? std::min(last_scale, N) : N;
  int start = 1;
  CheckpointInfo meta = info();
  if (resume && checkpoint_dir_ && fs::exists(*checkpoint_dir_ / "pyramid.json")) {
    const auto found = read_checkpoint_info(*checkpoint_dir_);
    auto mismatch = [&](const std::string& what) {
      fail(Errc::kConflict, "checkpoint/config mismatch on resume (" + what + ") in " +
                                checkpoint_dir_->string());
    };
    if (json(found.pyramid) != json(meta.pyramid)) mismatch("pyramid config");
    if (found.train_config != meta.train_config) mismatch("train config");
    if (found.init_seed != meta.init_seed) mismatch("init seed");
    if (found.dataset_hash != meta.dataset_hash) mismatch("dataset");
    load_scales(*checkpoint_dir_, stack_, found.completed_scales);
    start = found.completed_scales + 1;
    // Rows of an interrupted scale are dropped; that scale restarts from scratch.
    global_step_ = 0;
    const auto log_path = *checkpoint_dir_ / "train_log.csv";
    if (fs::exists(log_path)) {
      std::string kept;
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || !std::isdigit(static_cast<unsigned char>(line[0]))) {
          kept += line + "\n";
          continue;
        }
        const auto comma = line.find(',');
        if (std::stoi(line.substr(comma + 1)) <= found.completed_scales) {
          kept += line + "\n";
          ++global_step_;
        }
      }
      in.close();
      write_file_atomic(log_path, kept);
    }
  } else if (checkpoint_dir_ && fs::exists(*checkpoint_dir_ / "train_log.csv")) {
    fs::remove(*checkpoint_dir_ / "train_log.csv");
  }
  std::vector<ScaleReport> reports;
  for (int n = start; n <= stop; ++n) {
    reports.push_back(train_scale(n));
    if (checkpoint_dir_) {
      meta.completed_scales = n;
      save_scale(*checkpoint_dir_, stack_, n, meta);
    }
  }
  return reports;
}

double Trainer::reconstruction_color_mse(int scale) {
  const int N = stack_.num_scales();
  require(scale >= 1 && scale <= N, Errc::kInvalidArgument, "scale out of range");
  torch::NoGradGuard guard;
  const auto& o = obs_.at(scale);
  RaySampleSpec spec;
  spec.samples = stack_.schedule().ray_samples[std::min(scale, N - 1) - 1];
  spec.chunk_rays = config_.chunk_rays;
  auto z = reconstruction_noise(stack_.schedule(), stack_.z1_star());
  auto v = generate_to_scale(stack_, z.z, std::min(scale, N - 1));
  double total = 0.0;
  const int64_t views = o.color.size(0);
  for (int64_t i = 0; i < views; ++i) {
    torch::Tensor color;
    if (scale < N) {
      color = render(v, stack_.config().bounds, o.cameras[i], spec).color;
    } else {
      auto low = render(v, stack_.config().bounds, obs_.at(N - 1).cameras[i], spec).color;
      color = stack_.super_resolver()->forward(low);
    }
    total += (color - o.color[i]).pow(2).mean().item<double>();
  }
  return total / static_cast<double>(views);
}

}  // namespace singrav
