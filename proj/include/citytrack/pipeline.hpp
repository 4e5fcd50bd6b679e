#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "citytrack/geo.hpp"
#include "citytrack/ingest.hpp"
#include "citytrack/mct.hpp"
#include "citytrack/metrics.hpp"
#include "citytrack/sct.hpp"
#include "citytrack/simkit.hpp"

namespace citytrack::pipeline {

struct SourceConfig {
  enum class Kind { Files, Simkit };
  Kind kind = Kind::Simkit;
  /// Files: directory holding det/<camera>.csv and det/<camera>.emb.
  std::string dir;
  /// Files: frames per camera; 0 means up to the last detection.
  std::int64_t num_frames = 0;
  simkit::ScenarioOptions scenario;
  simkit::NoiseProfile noise;
  int embedding_dim = 64;
};

struct PipelineConfig {
  std::string topology_path;
  SourceConfig source;
  /// "oracle", "file" or "external".
  std::string provider = "oracle";
  double tick_period = 2.0;
  double alpha_min = ingest::kDefaultAlphaMin;
  double nms_iou = ingest::kDefaultNmsIou;
  sct::TrackerParams tracker;
  mct::MctParams mct;
  bool real_time = false;
  /// Real-time pacing factor; 2 plays the stream at twice its frame rate.
  double playback_speed = 1.0;
  /// Seconds without progress before a camera counts as stalled (real time only).
  double stall_timeout = 5.0;
  /// 0: hardware concurrency. MCT_THREADS caps it further.
  int threads = 0;
  std::string output_dir;

  /// Throws ConfigError on bad fields; relative paths resolve against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static PipelineConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Stand-in for the inference service: one request per batch, one embedding
/// per detection in order.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<Embedding>> embed(const ingest::TickBatch& batch) = 0;
};

/// Returns the embeddings the source attached to each frame (oracle draws or
/// file rows).
class PrecomputedProvider : public EmbeddingProvider {
 public:
  std::vector<std::vector<Embedding>> embed(const ingest::TickBatch& batch) override;
};

/// Adds a fixed delay per call; used to exercise backpressure.
class SlowProvider : public EmbeddingProvider {
 public:
  SlowProvider(std::shared_ptr<EmbeddingProvider> inner, std::chrono::microseconds delay)
      : inner_(std::move(inner)), delay_(delay) {}
  std::vector<std::vector<Embedding>> embed(const ingest::TickBatch& batch) override;

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::chrono::microseconds delay_;
};

class ExternalProvider : public EmbeddingProvider {
 public:
  using Fn = std::function<std::vector<std::vector<Embedding>>(const ingest::TickBatch&)>;
  explicit ExternalProvider(Fn fn) : fn_(std::move(fn)) {}
  std::vector<std::vector<Embedding>> embed(const ingest::TickBatch& batch) override { return fn_(batch); }

 private:
  Fn fn_;
};

/// Frames of every camera, with embeddings attached when the source has them.
struct LoadedSource {
  geo::CameraTopology topology;
  std::map<geo::CameraId, std::vector<ingest::FrameRecord>> frames;
  /// Present for simulated sources.
  std::optional<simkit::ScenarioBundle> scenario;
};

/// Throws SourceMissing or ConfigError.
LoadedSource load_source(const PipelineConfig& cfg);

struct RunReport {
  std::map<geo::CameraId, std::size_t> frames_processed;
  /// Queue drops plus frames that arrived after a camera was declared stalled.
  std::map<geo::CameraId, std::size_t> frames_dropped;
  /// Per batch: from the first frame's arrival to the last tracker finishing it.
  std::vector<double> tick_latency_ms;
  std::vector<double> supervisor_latency_ms;
  std::vector<sct::ConcludedTrack> tracks;
  std::vector<mct::GlobalIdentity> identities;
  std::vector<geo::CameraId> stalled_cameras;
  double wall_seconds = 0.0;
  double scenario_seconds = 0.0;
  int workers = 1;

  std::size_t total_dropped() const;
  double latency_percentile(double p) const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  /// Overrides the provider named in the config.
  std::shared_ptr<EmbeddingProvider> provider;
  /// Overrides the worker count (still capped by MCT_THREADS).
  int workers = 0;
};

/// Runs the full pipeline on a loaded source and writes outputs when
/// cfg.output_dir is set.
RunReport run(const PipelineConfig& cfg, const LoadedSource& source, const RunOptions& options = {});
RunReport run(const PipelineConfig& cfg, const RunOptions& options = {});

/// Worker count after applying the config, MCT_THREADS and the camera count.
int resolve_workers(int requested, std::size_t n_cameras);

void write_outputs(const std::string& dir, const RunReport& report);

metrics::TrajectorySet identity_trajectories(const std::vector<mct::GlobalIdentity>& identities);
metrics::TrajectorySet track_trajectories(const std::vector<sct::ConcludedTrack>& tracks);
metrics::TrajectorySet gt_trajectories(const simkit::GroundTruth& gt);

/// tracks.csv (camera,track_id,global_id,t_s,t_e,...) with tracks.emb.
void write_track_table(const std::string& dir, const RunReport& report);

}  // namespace citytrack::pipeline
