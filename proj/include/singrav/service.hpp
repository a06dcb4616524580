#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace singrav {

struct ServiceOptions {
  std::optional<std::filesystem::path> checkpoint;  // without one, POST /scenes answers 503
  std::filesystem::path data_dir;                   // scene records live in <data_dir>/scenes
  std::string host = "0.0.0.0";
  int port = 8080;
  size_t render_cache_entries = 256;
  int64_t default_samples = 0;    // 0: the finest 3D scale's ray count
  int mutation_delay_ms = 0;      // holds the per-scene lock longer; for exercising 409s
  std::string cors_origin = "*";

  /// Port from $SINGRAV_PORT (else 8080) and data dir from $SINGRAV_CACHE/service
  /// (else ./cache/service).
  static ServiceOptions from_environment();
};

/// REST facade over a trained pyramid:
///
///   GET  /health
///   POST /scenes {seed?}                        -> 201 {scene_id, seed}
///   GET  /scenes                                -> [{scene_id, seed, edits}]
///   GET  /scenes/{id}                           -> record JSON
///   GET  /scenes/{id}/render?pose=&w=&h=&fov=&near=&far=&samples=&final=  -> PNG
///   GET  /scenes/{id}/depth?...same...          -> 16-bit PNG, X-Depth-Scale header
///   GET  /scenes/{id}/volume                    -> SGRV1
///   GET  /scenes/{id}/mesh?threshold=&format=stl|obj
///   GET  /scenes/{id}/animation?alpha=&xi=&steps=&start_scale=&seed=&pose=&w=&h= -> tar
///   POST /scenes/{id}/edits {op, boxes, empty_point?, sources?} -> 201 {edit_id}
///   POST /scenes/{id}/harmonize                 -> {status, dims}
///
/// Errors are JSON {code, message}. Mutations of one scene are serialized; a
/// mutation arriving while another is in flight gets 409.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread; returns the bound port
  /// (options.port, or an ephemeral port when it is 0).
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  bool has_checkpoint() const;
  size_t scene_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace singrav
