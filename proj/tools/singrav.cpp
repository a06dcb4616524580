// singrav: command-line driver. Every subcommand resolves one JSON config
// (built-in defaults <- --config file <- --set overrides <- flags), writes it
// next to its outputs, and delegates to the library.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "singrav/apps.hpp"
#include "singrav/dataset.hpp"
#include "singrav/error.hpp"
#include "singrav/metrics.hpp"
#include "singrav/png_io.hpp"
#include "singrav/renderer.hpp"
#include "singrav/service.hpp"
#include "singrav/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace singrav;

namespace {

constexpr int kUsageExit = 2;
constexpr int kRuntimeExit = 1;

// Thrown for problems the user can fix on the command line or in the config.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json rig_json(const RigOptions& r) {
  return {{"count", r.count},   {"radius", r.radius}, {"fov_deg", r.fov_deg}, {"seed", r.seed},
          {"jitter_std", r.jitter_std}, {"width", r.width}, {"height", r.height}, {"near", r.near},
          {"far", r.far}};
}

RigOptions rig_from(const json& j) {
  RigOptions r;
  r.count = j.at("count");
  r.radius = j.at("radius");
  r.fov_deg = j.at("fov_deg");
  r.seed = j.at("seed");
  r.jitter_std = j.at("jitter_std");
  r.width = j.at("width");
  r.height = j.at("height");
  r.near = j.at("near");
  r.far = j.at("far");
  return r;
}

SyntheticOptions synthetic_from(const json& j) {
  SyntheticOptions o;
  o.kind = parse_scene_kind(j.at("kind"));
  o.volume_res = j.at("volume_res");
  o.sphere_count = j.at("sphere_count");
  o.samples = j.at("samples");
  o.seed = j.at("seed");
  o.rig = rig_from(j.at("rig"));
  return o;
}

// Orbit camera used by render, generate previews and animate.
struct ViewConfig {
  int64_t width = 128;
  int64_t height = 128;
  int64_t samples = 0;  // 0: the checkpoint's finest count, else 128
  double radius = 3.5;
  double azimuth_deg = -45.0;
  double elevation_deg = 30.0;
  double fov_deg = 33.40;
};

// start_scale 0 means min(3, number of 3D scales), resolved once the checkpoint is known.
json animation_defaults() {
  json j = AnimationConfig{};
  j["start_scale"] = 0;
  return j;
}

AnimationConfig animation_from(const json& j, int volume_scales) {
  json copy = j;
  if (copy.at("start_scale") == 0) copy["start_scale"] = std::min(3, volume_scales);
  return copy.get<AnimationConfig>();
}

json default_config() {
  const SyntheticOptions synth;
  const ViewConfig view;
  return {{"pyramid", PyramidConfig{}},
          {"train", TrainConfig{}},
          {"metrics", MetricsConfig{}},
          {"animation", animation_defaults()},
          {"synthetic",
           {{"kind", "spheres"},
            {"volume_res", synth.volume_res},
            {"sphere_count", synth.sphere_count},
            {"samples", synth.samples},
            {"seed", synth.seed},
            {"rig", rig_json(synth.rig)}}},
          {"view",
           {{"width", view.width},
            {"height", view.height},
            {"samples", view.samples},
            {"radius", view.radius},
            {"azimuth_deg", view.azimuth_deg},
            {"elevation_deg", view.elevation_deg},
            {"fov_deg", view.fov_deg}}},
          {"mesh", {{"threshold", 0.5}}}};
}

// Merges `patch` into `base`, rejecting keys `base` does not know. Objects
// merge recursively; anything else replaces. Free-form objects (the pyramid's
// bounds, loss weights) are checked later by their own parsers.
void merge_known(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw UsageError("unknown config key '" + path + "'");
    if (base[key].is_object() && value.is_object()) {
      merge_known(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void apply_override(json& config, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + text + "' is not key=value");
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings
  }
  json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw UsageError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  *node = value;
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string out;
};

json resolve(const Common& c) {
  json config = default_config();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw UsageError("cannot read config file " + c.config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file " + c.config_path + " is not valid JSON: " + e.what());
    }
    merge_known(config, file, "");
  }
  for (const auto& o : c.overrides) apply_override(config, o);
  // Parse every section once so type errors surface before any work starts.
  try {
    config.at("pyramid").get<PyramidConfig>().validate();
    (void)config.at("train").get<TrainConfig>();
    config.at("metrics").get<MetricsConfig>().validate();
    (void)animation_from(config.at("animation"), 3);
    (void)synthetic_from(config.at("synthetic"));
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return config;
}

void write_snapshot(const fs::path& dir, const std::string& command, const json& config, const json& args) {
  fs::create_directories(dir);
  json snap = {{"command", command}, {"args", args}, {"config", config}};
  write_file_atomic(dir / ("singrav_" + command + "_config.json"), snap.dump(2));
}

fs::path cache_root() {
  if (const char* c = std::getenv("SINGRAV_CACHE"); c && *c) return c;
  return "cache";
}

fs::path manifest_path(const std::string& data) {
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.json";
  return p;
}

Camera orbit_camera(const json& view, double near_far_radius) {
  const double az = view.at("azimuth_deg").get<double>() * M_PI / 180.0;
  const double el = view.at("elevation_deg").get<double>() * M_PI / 180.0;
  const double r = view.at("radius").get<double>();
  Camera cam;
  cam.width = view.at("width");
  cam.height = view.at("height");
  cam.fov_deg = view.at("fov_deg");
  cam.pose = look_at({r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)},
                     {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0});
  cam.near = std::max(1e-3, r - near_far_radius);
  cam.far = r + near_far_radius;
  cam.validate();
  return cam;
}

Camera camera_for(const json& view, const std::string& pose_text, const Bounds& bounds) {
  double half_diag = 0.0;
  for (int a = 0; a < 3; ++a) half_diag += 0.25 * bounds.extent(a) * bounds.extent(a);
  Camera cam = orbit_camera(view, std::sqrt(half_diag));
  if (!pose_text.empty()) {
    std::stringstream ss(pose_text);
    std::string item;
    std::vector<double> v;
    while (std::getline(ss, item, ',')) {
      try {
        v.push_back(std::stod(item));
      } catch (const std::logic_error&) {
        throw UsageError("--pose entry '" + item + "' is not a number");
      }
    }
    if (v.size() != 16) throw UsageError("--pose needs 16 comma-separated row-major numbers");
    std::copy(v.begin(), v.end(), cam.pose.begin());
    cam.validate();
  }
  return cam;
}

int64_t view_samples(const json& view, const GeneratorStack* stack) {
  const int64_t s = view.at("samples");
  if (s > 0) return s;
  return stack ? stack->schedule().ray_samples.back() : 128;
}

std::array<double, 3> parse_point(const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw UsageError("'" + text + "' is not x,y,z");
    }
  }
  if (v.size() != 3) throw UsageError("'" + text + "' is not x,y,z");
  return {v[0], v[1], v[2]};
}

void log_line(const json& j) { std::cerr << j.dump() << "\n"; }

// -- subcommands ---------------------------------------------------------------

struct PrepareArgs {
  std::string data;
  bool synthetic = false;
};

void run_prepare(const Common& c, const PrepareArgs& a) {
  json config = resolve(c);
  if (c.seed) {
    config["synthetic"]["seed"] = *c.seed;
    config["synthetic"]["rig"]["seed"] = *c.seed;
  }
  if (a.synthetic == !a.data.empty()) throw UsageError("prepare needs exactly one of --synthetic or --data");
  if (a.synthetic && c.out.empty()) throw UsageError("prepare --synthetic needs --out");
  MultiViewDataset dataset;
  json result;
  if (a.synthetic) {
    auto scene = make_synthetic_scene(synthetic_from(config.at("synthetic")));
    const fs::path out(c.out);
    result["manifest"] = save_dataset(scene.dataset, out).string();
    save_sgrv(scene.volume, out / "ground_truth.sgrv");
    result["ground_truth"] = (out / "ground_truth.sgrv").string();
    dataset = load_dataset(out / "manifest.json");  // what training will actually see
  } else {
    dataset = load_dataset(manifest_path(a.data));
  }
  const auto schedule = scale_schedule(config.at("pyramid").get<PyramidConfig>());
  const auto pyramid = build_pyramid(dataset, schedule, cache_root() / "pyramids");
  result["views"] = dataset.size();
  result["pyramid_hash"] = pyramid.content_hash;
  result["pyramid_cache"] = (cache_root() / "pyramids" / pyramid.content_hash).string();
  if (!c.out.empty()) write_snapshot(c.out, "prepare", config, {{"data", a.data}, {"synthetic", a.synthetic}});
  std::cout << result.dump(2) << "\n";
}

struct TrainArgs {
  std::string data;
  std::string checkpoint;
  bool resume = false;
  int until_scale = 0;
  int64_t log_every = 10;
};

void run_train(const Common& c, const TrainArgs& a) {
  json config = resolve(c);
  if (c.seed) config["train"]["seed"] = *c.seed;
  const auto pyramid_cfg = config.at("pyramid").get<PyramidConfig>();
  const auto train_cfg = config.at("train").get<TrainConfig>();
  try {
    train_cfg.validate(pyramid_cfg.num_scales);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.until_scale < 0 || a.until_scale > pyramid_cfg.num_scales) {
    throw UsageError("--until-scale must lie in [1, " + std::to_string(pyramid_cfg.num_scales) + "]");
  }
  const fs::path ckpt = a.checkpoint.empty() ? fs::path(c.out) : fs::path(a.checkpoint);
  if (ckpt.empty()) throw UsageError("train needs --checkpoint (or --out)");
  const auto dataset = load_dataset(manifest_path(a.data));
  const auto schedule = scale_schedule(pyramid_cfg);
  const auto obs = build_pyramid(dataset, schedule, cache_root() / "pyramids");
  const uint64_t init_seed = train_cfg.seed;
  GeneratorStack stack(pyramid_cfg, init_seed);
  Trainer trainer(stack, obs, train_cfg, init_seed);
  trainer.set_checkpoint_dir(ckpt);
  trainer.set_progress([&](const StepLog& l) {
    if (a.log_every > 0 && l.step % a.log_every == 0) {
      log_line({{"step", l.step}, {"scale", l.scale}, {"d_loss", l.d_loss}, {"g_loss", l.g_loss},
                {"rec_loss", l.rec_loss}, {"swd_loss", l.swd_loss}, {"wall_time", l.wall_time}});
    }
  });
  write_snapshot(ckpt, "train", config,
                 {{"data", a.data}, {"resume", a.resume}, {"until_scale", a.until_scale}});
  const auto reports = trainer.train_all(a.resume, a.until_scale);
  json summary = json::array();
  for (const auto& r : reports) {
    summary.push_back({{"scale", r.scale},
                       {"steps", r.log.size()},
                       {"final_rec_loss", r.log.empty() ? 0.0 : r.log.back().rec_loss},
                       {"color_mse", trainer.reconstruction_color_mse(r.scale)}});
  }
  std::cout << json{{"checkpoint", ckpt.string()},
                    {"completed_scales", read_checkpoint_info(ckpt).completed_scales},
                    {"scales", summary}}
                   .dump(2)
            << "\n";
}

struct GenerateArgs {
  std::string checkpoint;
  int64_t count = 1;
  bool previews = true;
};

void run_generate(const Common& c, const GenerateArgs& a) {
  json config = resolve(c);
  if (c.out.empty()) throw UsageError("generate needs --out");
  if (a.count < 1) throw UsageError("--count must be positive");
  auto stack = load_checkpoint(a.checkpoint);
  torch::NoGradGuard guard;
  const uint64_t base = c.seed.value_or(0);
  const fs::path out(c.out);
  fs::create_directories(out);
  json files = json::array();
  for (int64_t k = 0; k < a.count; ++k) {
    const uint64_t seed = base + static_cast<uint64_t>(k);
    auto scene = sample_scene(stack, seed);
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%06llu", static_cast<unsigned long long>(seed));
    save_sgrv(scene.volume, out / (std::string(name) + ".sgrv"));
    json entry = {{"seed", seed}, {"volume", std::string(name) + ".sgrv"}};
    if (a.previews) {
      const Camera cam = camera_for(config.at("view"), "", scene.volume.bounds());
      auto img = render_final(stack, scene.volume, cam, view_samples(config.at("view"), &stack));
      write_file_atomic(out / (std::string(name) + ".png"), encode_png_rgb8(img));
      entry["preview"] = std::string(name) + ".png";
    }
    files.push_back(entry);
  }
  write_snapshot(out, "generate", config, {{"checkpoint", a.checkpoint}, {"count", a.count}, {"seed", base}});
  write_file_atomic(out / "index.json", files.dump(2));
  std::cout << json{{"scenes", files}}.dump(2) << "\n";
}

struct RenderArgs {
  std::string volume;
  std::string checkpoint;
  std::string pose;
  std::string depth_out;
  bool final_res = false;
};

void run_render(const Common& c, const RenderArgs& a) {
  json config = resolve(c);
  if (c.out.empty()) throw UsageError("render needs --out <file.png>");
  std::optional<GeneratorStack> stack;
  if (!a.checkpoint.empty()) stack.emplace(load_checkpoint(a.checkpoint));
  if (a.final_res && !stack) throw UsageError("--final needs --checkpoint");
  RadianceVolume volume;
  torch::NoGradGuard guard;
  if (!a.volume.empty()) {
    volume = load_sgrv(a.volume);
  } else if (stack && c.seed) {
    volume = sample_scene(*stack, *c.seed).volume;
  } else {
    throw UsageError("render needs --volume, or --checkpoint with --seed");
  }
  const Camera cam = camera_for(config.at("view"), a.pose, volume.bounds());
  const int64_t samples = view_samples(config.at("view"), stack ? &*stack : nullptr);
  RaySampleSpec spec;
  spec.samples = samples;
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  auto result = render(volume, cam, spec);
  auto color = a.final_res ? render_final(*stack, volume, cam, samples) : result.color;
  write_file_atomic(out, encode_png_rgb8(color));
  json info = {{"image", out.string()}, {"camera", cam}, {"samples", samples}};
  if (!a.depth_out.empty()) {
    const double scale = cam.far / 65535.0;
    auto codes = (result.depth.to(torch::kFloat64) / scale).round().clamp(0, 65535).to(torch::kInt32);
    write_file_atomic(a.depth_out, encode_png_gray16(codes));
    info["depth"] = a.depth_out;
    info["depth_scale"] = scale;
  }
  write_snapshot(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "render", config,
                 {{"volume", a.volume}, {"checkpoint", a.checkpoint}, {"pose", a.pose}, {"final", a.final_res}});
  std::cout << info.dump(2) << "\n";
}

struct AnimateArgs {
  std::string checkpoint;
  std::string pose;
  bool archive = false;
  bool final_res = false;
};

void run_animate(const Common& c, const AnimateArgs& a) {
  json config = resolve(c);
  if (c.out.empty()) throw UsageError("animate needs --out");
  auto stack = load_checkpoint(a.checkpoint);
  auto anim = animation_from(config.at("animation"), stack.config().volume_scales());
  const uint64_t scene_seed = c.seed.value_or(0);
  if (c.seed && config.at("animation").at("seed") == 0) anim.seed = *c.seed;
  try {
    anim.validate(stack.config().volume_scales());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  config["animation"] = anim;
  torch::NoGradGuard guard;
  const Camera cam = camera_for(config.at("view"), a.pose, stack.config().bounds);
  auto frames = animate(stack, draw_noise(stack.schedule(), scene_seed), anim, cam,
                        view_samples(config.at("view"), &stack), a.final_res);
  json meta = {{"scene_seed", scene_seed}, {"animation", anim}, {"camera", cam}};
  const fs::path out(c.out);
  if (a.archive) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file_atomic(out, encode_frame_archive(frames, meta));
    write_snapshot(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "animate", config,
                   {{"checkpoint", a.checkpoint}, {"seed", scene_seed}});
  } else {
    write_frames(out, frames, meta);
    write_snapshot(out, "animate", config, {{"checkpoint", a.checkpoint}, {"seed", scene_seed}});
  }
  std::cout << json{{"frames", frames.size()}, {"out", out.string()}}.dump(2) << "\n";
}

struct EditArgs {
  std::string volume;
  std::string op;
  std::vector<std::string> src;
  std::vector<std::string> dst;
  std::vector<std::string> sources;  // compose: one volume per --src
  std::string empty_point;
  std::string checkpoint;  // harmonize
};

void run_edit(const Common& c, const EditArgs& a) {
  json config = resolve(c);
  if (c.out.empty()) throw UsageError("edit needs --out <file.sgrv>");
  auto boxes = [](const std::vector<std::string>& texts) {
    std::vector<Box> out;
    for (const auto& t : texts) {
      try {
        out.push_back(parse_box(t));
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
    }
    return out;
  };
  const auto src = boxes(a.src);
  const auto dst = boxes(a.dst);
  auto need = [&](size_t s, size_t d) {
    if (src.size() != s || dst.size() != d) {
      throw UsageError("--op " + a.op + " needs " + std::to_string(s) + " --src and " + std::to_string(d) +
                       " --dst");
    }
  };
  const RadianceVolume volume = load_sgrv(a.volume);
  auto empty = [&] {
    return a.empty_point.empty() ? default_empty_sample(volume) : sample_point(volume, parse_point(a.empty_point));
  };
  torch::NoGradGuard guard;
  RadianceVolume result;
  if (a.op == "remove") {
    need(1, 0);
    result = edit_remove(volume, src[0], empty());
  } else if (a.op == "duplicate") {
    need(1, 1);
    result = edit_duplicate(volume, src[0], dst[0]);
  } else if (a.op == "move") {
    need(1, 1);
    result = edit_move(volume, src[0], dst[0], empty());
  } else if (a.op == "compose") {
    if (src.empty() || src.size() != dst.size() || a.sources.size() != src.size()) {
      throw UsageError("--op compose needs matching counts of --source, --src and --dst");
    }
    std::vector<ComposeSource> parts;
    for (size_t i = 0; i < src.size(); ++i) parts.push_back({load_sgrv(a.sources[i]), src[i]});
    result = compose(parts, volume, dst);
  } else if (a.op == "harmonize") {
    if (a.checkpoint.empty()) throw UsageError("--op harmonize needs --checkpoint");
    auto stack = load_checkpoint(a.checkpoint);
    result = harmonize(stack, volume, c.seed);
  } else {
    throw UsageError("--op must be remove|duplicate|move|compose|harmonize");
  }
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_sgrv(result, out);
  write_snapshot(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "edit", config,
                 {{"volume", a.volume}, {"op", a.op}, {"src", a.src}, {"dst", a.dst}, {"sources", a.sources},
                  {"empty_point", a.empty_point}});
  const Dims d = result.dims();
  std::cout << json{{"out", out.string()}, {"dims", {d.w, d.h, d.u}}}.dump(2) << "\n";
}

struct MeshArgs {
  std::string volume;
  std::optional<double> threshold;
  std::string format;
};

void run_export_mesh(const Common& c, const MeshArgs& a) {
  json config = resolve(c);
  if (c.out.empty()) throw UsageError("export-mesh needs --out");
  const fs::path out(c.out);
  std::string format = a.format;
  if (format.empty()) format = out.extension() == ".obj" ? "obj" : "stl";
  if (format != "stl" && format != "obj") throw UsageError("--format must be stl or obj");
  if (a.threshold) config["mesh"]["threshold"] = *a.threshold;
  const Mesh mesh = export_mesh(load_sgrv(a.volume), config.at("mesh").at("threshold").get<double>());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_atomic(out, format == "stl" ? encode_stl(mesh) : encode_obj(mesh));
  write_snapshot(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "export-mesh", config,
                 {{"volume", a.volume}, {"format", format}});
  std::cout << json{{"out", out.string()}, {"triangles", mesh.triangle_count()},
                    {"vertices", mesh.vertices.size()}}
                   .dump(2)
            << "\n";
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::optional<int64_t> views;
  std::optional<int64_t> scenes;
  std::optional<int64_t> ray_samples;
};

void run_evaluate(const Common& c, const EvaluateArgs& a) {
  json config = resolve(c);
  if (a.views) config["metrics"]["views_M"] = *a.views;
  if (a.scenes) config["metrics"]["scenes_J"] = *a.scenes;
  if (a.ray_samples) config["metrics"]["samples"] = *a.ray_samples;
  if (c.seed) config["metrics"]["seed"] = *c.seed;
  const auto metrics = config.at("metrics").get<MetricsConfig>();
  try {
    metrics.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  auto stack = load_checkpoint(a.checkpoint);
  const auto dataset = load_dataset(manifest_path(a.data));
  const auto obs = build_pyramid(dataset, stack.schedule(), cache_root() / "pyramids");
  InceptionExtractor extractor(WeightSource::from_environment());
  auto report = evaluate(stack, obs, metrics, extractor);
  report["checkpoint"] = a.checkpoint;
  report["data"] = a.data;
  if (!c.out.empty()) {
    const fs::path out(c.out);
    fs::create_directories(out);
    write_file_atomic(out / "report.json", report.dump(2));
    write_snapshot(out, "evaluate", config, {{"checkpoint", a.checkpoint}, {"data", a.data}});
  }
  std::cout << report.dump(2) << "\n";
}

struct ServeArgs {
  std::string checkpoint;
  std::optional<int> port;
  std::string host;
  std::string data_dir;
  int64_t cache_entries = 256;
};

void run_serve(const Common& c, const ServeArgs& a) {
  json config = resolve(c);
  auto options = ServiceOptions::from_environment();
  if (!a.checkpoint.empty()) options.checkpoint = a.checkpoint;
  if (a.port) options.port = *a.port;
  if (!a.host.empty()) options.host = a.host;
  if (!a.data_dir.empty()) options.data_dir = a.data_dir;
  if (a.cache_entries < 0) throw UsageError("--cache-entries must be non-negative");
  options.render_cache_entries = static_cast<size_t>(a.cache_entries);
  if (config.at("view").at("samples").get<int64_t>() > 0) options.default_samples = config.at("view").at("samples");
  write_snapshot(options.data_dir, "serve", config,
                 {{"checkpoint", a.checkpoint}, {"port", options.port}, {"host", options.host}});
  Service service(options);
  service.run();
}

void add_common(CLI::App* sub, Common& c, bool out_required_hint) {
  sub->add_option("-c,--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("-s,--set", c.overrides, "Override a config value: dotted.key=value (repeatable)");
  sub->add_option("--seed", c.seed, "Seed for this run");
  sub->add_option("-o,--out", c.out, out_required_hint ? "Output path (required)" : "Output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"singrav: 3D generative model from a single multi-view scene"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "singrav 0.1.0");

  Common common;
  auto* prepare = app.add_subcommand("prepare", "Build (or synthesize) a dataset and cache its pyramid");
  PrepareArgs prepare_args;
  add_common(prepare, common, false);
  prepare->add_option("--data", prepare_args.data, "Dataset manifest or directory to validate and cache");
  prepare->add_flag("--synthetic", prepare_args.synthetic, "Render a procedural scene (config section 'synthetic') into --out");

  auto* train = app.add_subcommand("train", "Train the pyramid coarse to fine");
  TrainArgs train_args;
  add_common(train, common, false);
  train->add_option("--data", train_args.data, "Dataset manifest or directory")->required();
  train->add_option("--checkpoint", train_args.checkpoint, "Checkpoint directory (defaults to --out)");
  train->add_flag("--resume", train_args.resume, "Skip scales already completed in the checkpoint");
  train->add_option("--until-scale", train_args.until_scale, "Stop after this scale");
  train->add_option("--log-every", train_args.log_every, "Progress line interval in steps (0 silences)");

  auto* generate = app.add_subcommand("generate", "Sample scenes to SGRV1 volumes and preview PNGs");
  GenerateArgs generate_args;
  add_common(generate, common, true);
  generate->add_option("--checkpoint", generate_args.checkpoint, "Trained checkpoint directory")->required();
  generate->add_option("--count", generate_args.count, "Number of scenes (seeds seed .. seed+count-1)");
  generate->add_flag("!--no-preview", generate_args.previews, "Skip preview renders");

  auto* render_cmd = app.add_subcommand("render", "Render a volume to PNG");
  RenderArgs render_args;
  add_common(render_cmd, common, true);
  render_cmd->add_option("--volume", render_args.volume, "SGRV1 volume")->check(CLI::ExistingFile);
  render_cmd->add_option("--checkpoint", render_args.checkpoint, "Checkpoint for --seed sampling or --final");
  render_cmd->add_option("--pose", render_args.pose, "16 comma-separated row-major camera-to-world entries");
  render_cmd->add_option("--depth-out", render_args.depth_out, "Also write a 16-bit depth PNG here");
  render_cmd->add_flag("--final", render_args.final_res, "Route through the super-resolver");

  auto* animate_cmd = app.add_subcommand("animate", "Render a noise random walk as frames");
  AnimateArgs animate_args;
  add_common(animate_cmd, common, true);
  animate_cmd->add_option("--checkpoint", animate_args.checkpoint, "Trained checkpoint directory")->required();
  animate_cmd->add_option("--pose", animate_args.pose, "16 comma-separated row-major camera-to-world entries");
  animate_cmd->add_flag("--archive", animate_args.archive, "Write a tar archive to --out instead of a frame directory");
  animate_cmd->add_flag("--final", animate_args.final_res, "Route frames through the super-resolver");

  auto* edit = app.add_subcommand("edit", "Apply remove/duplicate/move/compose/harmonize to a volume");
  EditArgs edit_args;
  add_common(edit, common, true);
  edit->add_option("--volume", edit_args.volume, "Input SGRV1 volume")->required()->check(CLI::ExistingFile);
  edit->add_option("--op", edit_args.op, "remove|duplicate|move|compose|harmonize")->required();
  edit->add_option("--src", edit_args.src, "Source box x0,y0,z0,x1,y1,z1 (repeatable for compose)");
  edit->add_option("--dst", edit_args.dst, "Destination box x0,y0,z0,x1,y1,z1 (repeatable for compose)");
  edit->add_option("--source", edit_args.sources, "Compose source volume, one per --src")->check(CLI::ExistingFile);
  edit->add_option("--empty-point", edit_args.empty_point, "x,y,z whose value fills emptied voxels");
  edit->add_option("--checkpoint", edit_args.checkpoint, "Checkpoint for --op harmonize");

  auto* mesh = app.add_subcommand("export-mesh", "Marching-cubes mesh of a volume's density");
  MeshArgs mesh_args;
  add_common(mesh, common, true);
  mesh->add_option("--volume", mesh_args.volume, "Input SGRV1 volume")->required()->check(CLI::ExistingFile);
  mesh->add_option("--threshold", mesh_args.threshold, "Iso level on density times voxel size (default 0.5)");
  mesh->add_option("--format", mesh_args.format, "stl|obj (default from the --out extension)");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "SIFID-MV and diversity report");
  EvaluateArgs eval_args;
  add_common(evaluate_cmd, common, false);
  evaluate_cmd->add_option("--checkpoint", eval_args.checkpoint, "Trained checkpoint directory")->required();
  evaluate_cmd->add_option("--data", eval_args.data, "Dataset manifest or directory")->required();
  evaluate_cmd->add_option("--views", eval_args.views, "Views M");
  evaluate_cmd->add_option("--samples", eval_args.scenes, "Sampled scenes J");
  evaluate_cmd->add_option("--ray-samples", eval_args.ray_samples, "Ray samples per render");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  ServeArgs serve_args;
  add_common(serve, common, false);
  serve->add_option("--checkpoint", serve_args.checkpoint, "Trained checkpoint directory");
  serve->add_option("--port", serve_args.port, "Port (default $SINGRAV_PORT or 8080)");
  serve->add_option("--host", serve_args.host, "Bind address (default 0.0.0.0)");
  serve->add_option("--data-dir", serve_args.data_dir, "Scene records (default $SINGRAV_CACHE/service)");
  serve->add_option("--cache-entries", serve_args.cache_entries, "Render cache size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    log_line({{"error", "usage"}, {"message", e.what()}, {"exit_code", kUsageExit}});
    std::cerr << "run with --help for usage\n";
    return kUsageExit;
  }

  try {
    if (prepare->parsed()) run_prepare(common, prepare_args);
    if (train->parsed()) run_train(common, train_args);
    if (generate->parsed()) run_generate(common, generate_args);
    if (render_cmd->parsed()) run_render(common, render_args);
    if (animate_cmd->parsed()) run_animate(common, animate_args);
    if (edit->parsed()) run_edit(common, edit_args);
    if (mesh->parsed()) run_export_mesh(common, mesh_args);
    if (evaluate_cmd->parsed()) run_evaluate(common, eval_args);
    if (serve->parsed()) run_serve(common, serve_args);
  } catch (const UsageError& e) {
    log_line({{"error", "usage"}, {"message", e.what()}, {"exit_code", kUsageExit}});
    return kUsageExit;
  } catch (const Error& e) {
    // Bad boxes, poses and the like come back from the library as invalid_argument.
    const int code = e.code() == Errc::kInvalidArgument ? kUsageExit : kRuntimeExit;
    log_line({{"error", errc_name(e.code())}, {"message", e.what()}, {"exit_code", code}});
    return code;
  } catch (const std::exception& e) {
    log_line({{"error", "internal"}, {"message", e.what()}, {"exit_code", kRuntimeExit}});
    return kRuntimeExit;
  }
  return 0;
}
