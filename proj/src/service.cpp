#include "singrav/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <list>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "singrav/apps.hpp"
#include "singrav/dataset.hpp"
#include "singrav/error.hpp"
#include "singrav/png_io.hpp"
#include "singrav/renderer.hpp"
#include "singrav/trainer.hpp"

namespace singrav {

using nlohmann::json;
namespace fs = std::filesystem;

ServiceOptions ServiceOptions::from_environment() {
  ServiceOptions o;
  if (const char* p = std::getenv("SINGRAV_PORT"); p && *p) {
    try {
      o.port = std::stoi(p);
    } catch (const std::logic_error&) {
      fail(Errc::kInvalidArgument, std::string("SINGRAV_PORT is not a port number: ") + p);
    }
  }
  if (const char* c = std::getenv("SINGRAV_CACHE"); c && *c) {
    o.data_dir = fs::path(c) / "service";
  } else {
    o.data_dir = fs::path("cache") / "service";
  }
  return o;
}

namespace {

int http_status(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument:
    case Errc::kFormat: return 400;
    case Errc::kNotFound: return 404;
    case Errc::kConflict: return 409;
    case Errc::kUnsupportedConfig: return 422;
    case Errc::kPrecondition: return 503;
    case Errc::kIo:
    case Errc::kNumerical: return 500;
  }
  return 500;
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", message}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    torch::NoGradGuard guard;
    fn();
  } catch (const Error& e) {
    send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid_argument", std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

double parse_number(const std::string& text, const std::string& what) {
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size() && std::isfinite(v)) return v;
  } catch (const std::logic_error&) {
  }
  fail(Errc::kInvalidArgument, "malformed " + what + ": '" + text + "'");
}

double param(const httplib::Request& req, const std::string& key, double fallback) {
  return req.has_param(key) ? parse_number(req.get_param_value(key), key) : fallback;
}

int64_t int_param(const httplib::Request& req, const std::string& key, int64_t fallback, int64_t lo,
                  int64_t hi) {
  const double v = param(req, key, static_cast<double>(fallback));
  require(v == std::floor(v) && v >= lo && v <= hi, Errc::kInvalidArgument,
          key + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return static_cast<int64_t>(v);
}

Mat4 default_pose() {
  const double r = 3.5;
  return look_at({r * 0.61, -r * 0.61, r * 0.5}, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0});
}

Camera camera_from_query(const httplib::Request& req) {
  Camera cam;
  if (req.has_param("pose")) {
    std::stringstream ss(req.get_param_value("pose"));
    std::string item;
    std::vector<double> v;
    while (std::getline(ss, item, ',')) v.push_back(parse_number(item, "pose entry"));
    require(v.size() == 16, Errc::kInvalidArgument,
            "pose needs 16 comma-separated row-major numbers, got " + std::to_string(v.size()));
    std::copy(v.begin(), v.end(), cam.pose.begin());
  } else {
    cam.pose = default_pose();
  }
  cam.width = int_param(req, "w", 128, 1, 2048);
  cam.height = int_param(req, "h", cam.width, 1, 2048);
  cam.fov_deg = param(req, "fov", cam.fov_deg);
  cam.near = param(req, "near", cam.near);
  cam.far = param(req, "far", cam.far);
  require(cam.fov_deg > 0.0 && cam.fov_deg < 180.0, Errc::kInvalidArgument, "fov must lie in (0, 180)");
  cam.validate();
  return cam;
}

std::string new_uuid() {
  static std::mutex mutex;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mutex);
  const uint64_t a = rng(), b = rng();
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8) << (a >> 32) << '-' << std::setw(4) << ((a >> 16) & 0xffff)
     << '-' << std::setw(4) << ((a & 0x0fff) | 0x4000) << '-' << std::setw(4)
     << (((b >> 48) & 0x3fff) | 0x8000) << '-' << std::setw(12) << (b & 0xffffffffffffULL);
  return os.str();
}

class LruCache {
 public:
  explicit LruCache(size_t capacity) : capacity_(capacity) {}

  std::optional<std::pair<std::string, httplib::Headers>> get(const std::string& key) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return std::make_pair(it->second->body, it->second->headers);
  }

  void put(const std::string& key, std::string body, httplib::Headers headers) {
    if (capacity_ == 0) return;
    std::lock_guard lock(mutex_);
    if (auto it = index_.find(key); it != index_.end()) {
      order_.erase(it->second);
      index_.erase(it);
    }
    order_.push_front({key, std::move(body), std::move(headers)});
    index_[key] = order_.begin();
    while (order_.size() > capacity_) {
      index_.erase(order_.back().key);
      order_.pop_back();
    }
  }

 private:
  struct Entry {
    std::string key;
    std::string body;
    httplib::Headers headers;
  };
  size_t capacity_;
  std::mutex mutex_;
  std::list<Entry> order_;
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
};

struct SceneRecord {
  std::string id;
  uint64_t seed = 0;
  fs::path dir;
  std::mutex mutation;  // held for the duration of an edit or harmonize

  mutable std::mutex state;  // guards the fields below
  std::shared_ptr<const RadianceVolume> volume;
  std::string content_hash;
  json history = json::array();
  bool compacted = false;
  bool replay_verified = true;
  int64_t next_edit = 1;

  std::pair<std::shared_ptr<const RadianceVolume>, std::string> snapshot() const {
    std::lock_guard lock(state);
    return {volume, content_hash};
  }
};

}  // namespace

struct Service::Impl {
  ServiceOptions options;
  std::optional<GeneratorStack> stack;
  std::string checkpoint_id;
  std::mutex model;  // generator forward passes

  mutable std::shared_mutex scenes_mutex;
  std::map<std::string, std::shared_ptr<SceneRecord>> scenes;

  LruCache cache;
  httplib::Server server;
  std::thread thread;
  int bound_port = 0;

  explicit Impl(ServiceOptions o) : options(std::move(o)), cache(options.render_cache_entries) {
    if (options.checkpoint) {
      stack.emplace(load_checkpoint(*options.checkpoint));
      const auto info = read_checkpoint_info(*options.checkpoint);
      require(info.completed_scales == stack->num_scales(), Errc::kPrecondition,
              "checkpoint " + options.checkpoint->string() + " is not fully trained (" +
                  std::to_string(info.completed_scales) + "/" + std::to_string(stack->num_scales()) + " scales)");
      std::string blob = read_file(*options.checkpoint / "pyramid.json");
      blob += read_file(*options.checkpoint / "z1_star.pt");
      for (int n = 1; n <= stack->num_scales(); ++n) {
        blob += read_file(*options.checkpoint / ("scale_" + std::to_string(n)) / "generator.pt");
      }
      checkpoint_id = sha256_hex(blob);
    }
    fs::create_directories(options.data_dir / "scenes");
    load_records();
    routes();
  }

  // -- records ---------------------------------------------------------------

  std::shared_ptr<SceneRecord> find(const std::string& id) const {
    std::shared_lock lock(scenes_mutex);
    auto it = scenes.find(id);
    require(it != scenes.end(), Errc::kNotFound, "unknown scene " + id);
    return it->second;
  }

  GeneratorStack& require_stack() {
    require(stack.has_value(), Errc::kPrecondition, "no trained checkpoint loaded");
    return *stack;
  }

  RadianceVolume base_volume(uint64_t seed) {
    std::lock_guard lock(model);
    return sample_scene(require_stack(), seed).volume;
  }

  static std::string volume_hash(const RadianceVolume& v) { return sha256_hex(encode_sgrv(v)); }

  void persist(SceneRecord& r) {
    json record;
    {
      std::lock_guard lock(r.state);
      save_sgrv(*r.volume, r.dir / "volume.sgrv");
      record = {{"scene_id", r.id},
                {"seed", r.seed},
                {"checkpoint_id", checkpoint_id},
                {"history", r.history},
                {"compacted", r.compacted},
                {"next_edit", r.next_edit}};
    }
    write_file_atomic(r.dir / "record.json", record.dump(2));
  }

  json describe(const SceneRecord& r) const {
    std::lock_guard lock(r.state);
    const Dims d = r.volume->dims();
    return {{"scene_id", r.id},
            {"seed", r.seed},
            {"dims", {d.w, d.h, d.u}},
            {"content_hash", r.content_hash},
            {"history", r.history},
            {"compacted", r.compacted},
            {"replay_verified", r.replay_verified}};
  }

  RadianceVolume apply_op(const RadianceVolume& volume, const json& entry, const fs::path& dir) {
    const std::string op = entry.at("op").get<std::string>();
    if (op == "harmonize") {
      std::lock_guard lock(model);
      return harmonize(require_stack(), volume);
    }
    std::vector<Box> boxes;
    for (const auto& b : entry.at("boxes")) boxes.push_back(b.get<Box>());
    auto empty = [&] {
      if (entry.contains("empty_point") && !entry.at("empty_point").is_null()) {
        const auto p = entry.at("empty_point").get<std::array<double, 3>>();
        for (int a = 0; a < 3; ++a) {
          require(p[a] >= volume.bounds().lo[a] && p[a] <= volume.bounds().hi[a], Errc::kInvalidArgument,
                  "empty_point lies outside the scene bounds");
        }
        return sample_point(volume, p);
      }
      return default_empty_sample(volume);
    };
    auto need = [&](size_t count) {
      require(boxes.size() == count, Errc::kInvalidArgument,
              op + " needs " + std::to_string(count) + " box(es), got " + std::to_string(boxes.size()));
    };
    if (op == "remove") {
      need(1);
      return edit_remove(volume, boxes[0], empty());
    }
    if (op == "duplicate") {
      need(2);
      return edit_duplicate(volume, boxes[0], boxes[1]);
    }
    if (op == "move") {
      need(2);
      return edit_move(volume, boxes[0], boxes[1], empty());
    }
    if (op == "compose") {
      std::vector<ComposeSource> sources;
      for (const auto& s : entry.at("sources")) {
        sources.push_back({load_sgrv(dir / s.at("file").get<std::string>()), s.at("box").get<Box>()});
      }
      return compose(sources, volume, boxes);
    }
    fail(Errc::kInvalidArgument, "unknown op '" + op + "' (remove|duplicate|move|compose)");
  }

  void load_records() {
    for (const auto& entry : fs::directory_iterator(options.data_dir / "scenes")) {
      const auto record_path = entry.path() / "record.json";
      if (!entry.is_directory() || !fs::exists(record_path)) continue;
      try {
        const auto j = json::parse(read_file(record_path));
        if (j.value("checkpoint_id", "") != checkpoint_id || !stack) {
          std::cerr << "singrav: skipping scene " << entry.path().filename().string()
                    << " (recorded with a different checkpoint)\n";
          continue;
        }
        auto r = std::make_shared<SceneRecord>();
        r->id = j.at("scene_id").get<std::string>();
        r->seed = j.at("seed").get<uint64_t>();
        r->dir = entry.path();
        r->history = j.at("history");
        r->compacted = j.value("compacted", false);
        r->next_edit = j.value("next_edit", int64_t{1});
        torch::NoGradGuard guard;
        RadianceVolume v = base_volume(r->seed);
        for (const auto& op : r->history) v = apply_op(v, op, r->dir);
        auto cached = load_sgrv(r->dir / "volume.sgrv");
        r->replay_verified = cached.bitwise_equal(v);
        if (!r->replay_verified) {
          std::cerr << "singrav: scene " << r->id << ": history replay differs from the cached volume; "
                    << "serving the cached volume\n";
        }
        r->volume = std::make_shared<const RadianceVolume>(std::move(cached));
        r->content_hash = volume_hash(*r->volume);
        std::unique_lock lock(scenes_mutex);
        scenes[r->id] = r;
      } catch (const std::exception& e) {
        std::cerr << "singrav: cannot load scene record " << entry.path().string() << ": " << e.what() << "\n";
      }
    }
  }

  // -- handlers ----------------------------------------------------------------

  void create_scene(const httplib::Request& req, httplib::Response& res) {
    require_stack();
    json body = req.body.empty() ? json::object() : json::parse(req.body);
    uint64_t seed = 0;
    if (body.contains("seed") && !body.at("seed").is_null()) {
      require(body.at("seed").is_number_unsigned() || body.at("seed").is_number_integer(),
              Errc::kInvalidArgument, "seed must be a non-negative integer");
      seed = body.at("seed").get<uint64_t>();
    } else {
      seed = std::random_device{}() & 0x7fffffffU;
    }
    auto r = std::make_shared<SceneRecord>();
    r->id = new_uuid();
    r->seed = seed;
    r->dir = options.data_dir / "scenes" / r->id;
    fs::create_directories(r->dir);
    r->volume = std::make_shared<const RadianceVolume>(base_volume(seed));
    r->content_hash = volume_hash(*r->volume);
    persist(*r);
    {
      std::unique_lock lock(scenes_mutex);
      scenes[r->id] = r;
    }
    send_json(res, {{"scene_id", r->id}, {"seed", seed}}, 201);
  }

  void render_image(const httplib::Request& req, httplib::Response& res, bool depth) {
    auto r = find(req.matches[1]);
    const Camera cam = camera_from_query(req);
    const bool final_res = req.has_param("final") && req.get_param_value("final") == "1";
    const int64_t default_samples =
        options.default_samples > 0 ? options.default_samples
                                    : (stack ? stack->schedule().ray_samples.back() : int64_t{64});
    const int64_t samples = int_param(req, "samples", default_samples, 1, 4096);
    auto [volume, hash] = r->snapshot();
    std::ostringstream key;
    key << hash << '|' << (depth ? "depth" : "color") << '|' << json(cam).dump() << '|' << samples << '|'
        << final_res;
    if (auto hit = cache.get(key.str())) {
      for (const auto& [k, v] : hit->second) res.set_header(k, v);
      res.set_content(hit->first, "image/png");
      return;
    }
    httplib::Headers headers;
    std::string png;
    RaySampleSpec spec;
    spec.samples = samples;
    if (depth) {
      auto out = render(*volume, cam, spec);
      const double scale = cam.far / 65535.0;
      auto codes = (out.depth.to(torch::kFloat64) / scale).round().clamp(0, 65535).to(torch::kInt32);
      png = encode_png_gray16(codes);
      std::ostringstream s;
      s << std::setprecision(17) << scale;
      headers.emplace("X-Depth-Scale", s.str());
    } else {
      torch::Tensor color;
      if (final_res) {
        std::lock_guard lock(model);
        color = render_final(require_stack(), *volume, cam, samples);
      } else {
        color = render(*volume, cam, spec).color;
      }
      png = encode_png_rgb8(color);
      std::string depth_url = "/scenes/" + r->id + "/depth";
      const auto q = req.target.find('?');
      if (q != std::string::npos) depth_url += req.target.substr(q);
      headers.emplace("X-Depth-Available", depth_url);
    }
    for (const auto& [k, v] : headers) res.set_header(k, v);
    res.set_content(png, "image/png");
    cache.put(key.str(), std::move(png), std::move(headers));
  }

  void get_volume(const httplib::Request& req, httplib::Response& res) {
    auto r = find(req.matches[1]);
    auto [volume, hash] = r->snapshot();
    res.set_header("Content-Disposition", "attachment; filename=\"" + r->id + ".sgrv\"");
    res.set_content(encode_sgrv(*volume), "application/octet-stream");
  }

  void get_mesh(const httplib::Request& req, httplib::Response& res) {
    auto r = find(req.matches[1]);
    const double threshold = param(req, "threshold", 0.5);
    const std::string format = req.has_param("format") ? req.get_param_value("format") : "stl";
    require(format == "stl" || format == "obj", Errc::kInvalidArgument, "format must be stl or obj");
    auto [volume, hash] = r->snapshot();
    const Mesh mesh = export_mesh(*volume, threshold);
    res.set_header("X-Triangle-Count", std::to_string(mesh.triangle_count()));
    if (format == "stl") {
      res.set_content(encode_stl(mesh), "model/stl");
    } else {
      res.set_content(encode_obj(mesh), "model/obj");
    }
  }

  void get_animation(const httplib::Request& req, httplib::Response& res) {
    auto r = find(req.matches[1]);
    auto& s = require_stack();
    AnimationConfig config;
    config.alpha = param(req, "alpha", config.alpha);
    config.xi = param(req, "xi", config.xi);
    config.steps = int_param(req, "steps", config.steps, 1, 240);
    config.start_scale = static_cast<int>(
        int_param(req, "start_scale", std::min(3, s.config().volume_scales()), 1, s.config().volume_scales()));
    config.seed = static_cast<uint64_t>(int_param(req, "seed", static_cast<int64_t>(r->seed), 0, INT64_MAX));
    Camera cam = camera_from_query(req);
    if (!req.has_param("w")) cam = cam.resized(64, 64);
    const int64_t samples = int_param(req, "samples", s.schedule().ray_samples.back(), 1, 4096);
    std::vector<torch::Tensor> frames;
    {
      std::lock_guard lock(model);
      frames = animate(s, draw_noise(s.schedule(), r->seed), config, cam, samples,
                        req.has_param("final") && req.get_param_value("final") == "1");
    }
    json meta = {{"scene_id", r->id}, {"animation", config}};
    res.set_header("Content-Disposition", "attachment; filename=\"" + r->id + "_animation.tar\"");
    res.set_content(encode_frame_archive(frames, meta), "application/x-tar");
  }

  template <typename Fn>
  void mutate(SceneRecord& r, Fn&& fn) {
    std::unique_lock lock(r.mutation, std::try_to_lock);
    require(lock.owns_lock(), Errc::kConflict, "another mutation of scene " + r.id + " is in flight");
    if (options.mutation_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(options.mutation_delay_ms));
    }
    fn();
    persist(r);
  }

  void post_edit(const httplib::Request& req, httplib::Response& res) {
    auto r = find(req.matches[1]);
    json body = json::parse(req.body);
    require(body.is_object() && body.contains("op") && body.at("op").is_string(), Errc::kInvalidArgument,
            "edit body needs an op");
    json entry = {{"op", body.at("op")}, {"boxes", body.value("boxes", json::array())}};
    if (body.contains("empty_point")) entry["empty_point"] = body.at("empty_point");
    int64_t edit_id = 0;
    mutate(*r, [&] {
      auto [volume, hash] = r->snapshot();
      {
        std::lock_guard lock(r->state);
        edit_id = r->next_edit;
      }
      entry["edit_id"] = edit_id;
      if (entry.at("op") == "compose") {
        json sources = json::array();
        int k = 0;
        for (const auto& s : body.at("sources")) {
          const auto src_id = s.at("scene_id").get<std::string>();
          auto src = src_id == r->id ? volume : find(src_id)->snapshot().first;
          const std::string file = "edit_" + std::to_string(edit_id) + "_source_" + std::to_string(k++) + ".sgrv";
          save_sgrv(*src, r->dir / file);
          sources.push_back({{"scene_id", src_id}, {"box", s.at("box")}, {"file", file}});
        }
        entry["sources"] = sources;
      }
      auto next = std::make_shared<const RadianceVolume>(apply_op(*volume, entry, r->dir));
      auto next_hash = volume_hash(*next);
      std::lock_guard lock(r->state);
      r->volume = std::move(next);
      r->content_hash = std::move(next_hash);
      r->history.push_back(entry);
      r->next_edit = edit_id + 1;
    });
    send_json(res, {{"edit_id", edit_id}, {"scene_id", r->id}}, 201);
  }

  void post_harmonize(const httplib::Request& req, httplib::Response& res) {
    auto r = find(req.matches[1]);
    require_stack();
    json dims;
    mutate(*r, [&] {
      auto [volume, hash] = r->snapshot();
      json entry = {{"op", "harmonize"}};
      auto next = std::make_shared<const RadianceVolume>(apply_op(*volume, entry, r->dir));
      const Dims d = next->dims();
      dims = {d.w, d.h, d.u};
      auto next_hash = volume_hash(*next);
      std::lock_guard lock(r->state);
      entry["edit_id"] = r->next_edit++;
      r->volume = std::move(next);
      r->content_hash = std::move(next_hash);
      r->history.push_back(entry);
      r->compacted = true;
    });
    send_json(res, {{"status", "harmonized"}, {"scene_id", r->id}, {"dims", dims}});
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Expose-Headers",
                                 "X-Depth-Available, X-Depth-Scale, X-Triangle-Count"}});
    server.Options(".*", [this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not_found" : "http_error",
                   "no route for " + req.method + " " + req.path);
      }
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      send_error(res, 500, "internal", "unhandled server error");
    });

    auto wrap = [this](void (Impl::*fn)(const httplib::Request&, httplib::Response&)) {
      return [this, fn](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { (this->*fn)(req, res); });
      };
    };
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      json body = {{"status", "ok"}, {"checkpoint", stack.has_value()}};
      if (stack) body["num_scales"] = stack->num_scales();
      send_json(res, body);
    });
    server.Post("/scenes", wrap(&Impl::create_scene));
    server.Get("/scenes", [this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      std::shared_lock lock(scenes_mutex);
      for (const auto& [id, r] : scenes) {
        std::lock_guard state(r->state);
        list.push_back({{"scene_id", id}, {"seed", r->seed}, {"edits", r->history.size()}});
      }
      send_json(res, list);
    });
    const std::string id = "([0-9a-fA-F-]+)";
    server.Get("/scenes/" + id, [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, describe(*find(req.matches[1]))); });
    });
    server.Get("/scenes/" + id + "/render", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { render_image(req, res, false); });
    });
    server.Get("/scenes/" + id + "/depth", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { render_image(req, res, true); });
    });
    server.Get("/scenes/" + id + "/volume", wrap(&Impl::get_volume));
    server.Get("/scenes/" + id + "/mesh", wrap(&Impl::get_mesh));
    server.Get("/scenes/" + id + "/animation", wrap(&Impl::get_animation));
    server.Post("/scenes/" + id + "/edits", wrap(&Impl::post_edit));
    server.Post("/scenes/" + id + "/harmonize", wrap(&Impl::post_harmonize));
  }

  void bind() {
    if (options.port == 0) {
      bound_port = server.bind_to_any_port(options.host);
    } else {
      require(server.bind_to_port(options.host, options.port), Errc::kIo,
              "cannot bind " + options.host + ":" + std::to_string(options.port));
      bound_port = options.port;
    }
    require(bound_port > 0, Errc::kIo, "cannot bind " + options.host);
  }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

int Service::start() {
  impl_->bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->bound_port;
}

void Service::run() {
  impl_->bind();
  std::cerr << "singrav: serving on " << impl_->options.host << ":" << impl_->bound_port << "\n";
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

bool Service::has_checkpoint() const { return impl_->stack.has_value(); }

size_t Service::scene_count() const {
  std::shared_lock lock(impl_->scenes_mutex);
  return impl_->scenes.size();
}

}  // namespace singrav
