#include "citytrack/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "citytrack/errors.hpp"

namespace citytrack::pipeline {

namespace {

using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

template <typename T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lk(mu_);
      if (closed_) return;
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  /// Empty once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return closed_ || !q_.empty(); });
    return take();
  }
  /// Also returns empty on timeout; `timed_out` tells the two apart.
  std::optional<T> pop_for(std::chrono::milliseconds d, bool& timed_out) {
    std::unique_lock lk(mu_);
    timed_out = !cv_.wait_for(lk, d, [&] { return closed_ || !q_.empty(); });
    return take();
  }
  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::optional<T> take() {
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

struct Arrival {
  ingest::FrameRecord frame;
  Clock::time_point arrived;
};

/// Per-camera bounded frame queues feeding the batcher. In drop mode a full
/// lane discards its oldest frame; otherwise the producer waits.
class LaneQueue {
 public:
  LaneQueue(const std::vector<geo::CameraId>& cams, std::size_t capacity, bool drop_oldest)
      : capacity_(std::max<std::size_t>(1, capacity)), drop_oldest_(drop_oldest) {
    for (const auto& c : cams) {
      lanes_[c];
      dropped_[c] = 0;
    }
  }

  bool push(Arrival a) {
    std::unique_lock lk(mu_);
    auto& lane = lanes_.at(a.frame.camera);
    if (drop_oldest_) {
      while (lane.size() >= capacity_) {
        lane.pop_front();
        ++dropped_[a.frame.camera];
      }
    } else {
      space_.wait(lk, [&] { return closed_ || lane.size() < capacity_; });
    }
    if (closed_) return false;
    lane.push_back(std::move(a));
    lk.unlock();
    ready_.notify_one();
    return true;
  }

  /// Oldest frame of every non-empty lane, in camera order. Empty once the
  /// producer has finished and every lane is drained.
  std::optional<std::vector<Arrival>> next() {
    std::unique_lock lk(mu_);
    ready_.wait(lk, [&] { return closed_ || finished_ || any(); });
    if (!any()) return std::nullopt;
    std::vector<Arrival> out;
    for (auto& [cam, lane] : lanes_) {
      if (lane.empty()) continue;
      out.push_back(std::move(lane.front()));
      lane.pop_front();
    }
    lk.unlock();
    space_.notify_all();
    return out;
  }

  void finish() {
    {
      std::lock_guard lk(mu_);
      finished_ = true;
    }
    ready_.notify_all();
  }
  void abort() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
      for (auto& [c, l] : lanes_) l.clear();
    }
    ready_.notify_all();
    space_.notify_all();
  }
  std::map<geo::CameraId, std::size_t> dropped() {
    std::lock_guard lk(mu_);
    return dropped_;
  }

 private:
  bool any() const {
    return std::any_of(lanes_.begin(), lanes_.end(), [](const auto& kv) { return !kv.second.empty(); });
  }

  std::size_t capacity_;
  bool drop_oldest_;
  std::mutex mu_;
  std::condition_variable ready_, space_;
  std::map<geo::CameraId, std::deque<Arrival>> lanes_;
  std::map<geo::CameraId, std::size_t> dropped_;
  bool closed_ = false;
  bool finished_ = false;
};

struct WorkItem {
  std::uint64_t batch = 0;
  ingest::FrameRecord frame;
};

struct BatchStarted {
  std::uint64_t batch = 0;
  std::size_t frames = 0;
  Clock::time_point start;
};

struct Progress {
  geo::CameraId camera;
  double timestamp = 0.0;
  std::vector<sct::ConcludedTrack> concluded;
  bool ended = false;
  std::uint64_t batch = 0;
  Clock::time_point done;
};

struct SupervisorMsg {
  std::optional<BatchStarted> started;
  std::optional<Progress> progress;
};

class FailureLatch {
 public:
  void set(std::exception_ptr e) {
    std::lock_guard lk(mu_);
    if (!error_) error_ = e;
    failed_ = true;
  }
  bool failed() const { return failed_.load(); }
  void rethrow() {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr error_;
  std::atomic<bool> failed_{false};
};

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  c.topology_path = resolve(base_dir, take<std::string>(j, "topology", ""));
  if (j.contains("source")) {
    const auto& s = j.at("source");
    const auto type = take<std::string>(s, "type", "simkit");
    if (type == "files") {
      c.source.kind = SourceConfig::Kind::Files;
      c.source.dir = resolve(base_dir, take<std::string>(s, "dir", ""));
      c.source.num_frames = take<std::int64_t>(s, "num_frames", 0);
    } else if (type == "simkit") {
      c.source.kind = SourceConfig::Kind::Simkit;
      try {
        c.source.scenario = simkit::ScenarioOptions::from_json(s.value("scenario", nlohmann::json::object()));
      } catch (const InvalidLayout& e) {
        throw ConfigError(e.what());
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
      }
      const auto n = s.value("noise", nlohmann::json::object());
      c.source.noise.box_jitter_std = take(n, "box_jitter_std", 0.0);
      c.source.noise.miss_rate = take(n, "miss_rate", 0.0);
      c.source.noise.false_positive_rate = take(n, "false_positive_rate", 0.0);
      c.source.noise.embedding_noise_std = take(n, "embedding_noise_std", 0.0);
      c.source.embedding_dim = take(s, "embedding_dim", 64);
    } else {
      throw ConfigError("unknown source type '" + type + "'");
    }
  }
  c.provider = take<std::string>(j, "provider", c.source.kind == SourceConfig::Kind::Files ? "file" : "oracle");
  c.tick_period = take(j, "tick_period", c.tick_period);
  c.alpha_min = take(j, "alpha_min", c.alpha_min);
  c.nms_iou = take(j, "nms_iou", c.nms_iou);
  if (j.contains("tracker")) {
    const auto& t = j.at("tracker");
    c.tracker.n_init = take(t, "n_init", c.tracker.n_init);
    c.tracker.max_age = take(t, "max_age", c.tracker.max_age);
    c.tracker.matching_threshold = take(t, "matching_threshold", c.tracker.matching_threshold);
    c.tracker.max_iou_distance = take(t, "max_iou_distance", c.tracker.max_iou_distance);
    c.tracker.gallery_budget = take(t, "gallery_budget", c.tracker.gallery_budget);
  }
  if (j.contains("mct")) {
    const auto& m = j.at("mct");
    c.mct.tau_min = take(m, "tau_min", c.mct.tau_min);
    c.mct.v_max = take(m, "v_max", c.mct.v_max);
    c.mct.lambda = take(m, "lambda", c.mct.lambda);
    c.mct.flush_horizon = take(m, "flush_horizon", c.mct.flush_horizon);
    c.mct.rule_adjacency = take(m, "rule_adjacency", c.mct.rule_adjacency);
    c.mct.rule_direction = take(m, "rule_direction", c.mct.rule_direction);
  }
  c.real_time = take(j, "real_time", c.real_time);
  c.playback_speed = take(j, "playback_speed", c.playback_speed);
  c.stall_timeout = take(j, "stall_timeout", c.stall_timeout);
  c.threads = take(j, "threads", c.threads);
  c.output_dir = resolve(base_dir, take<std::string>(j, "output_dir", ""));
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json src;
  if (source.kind == SourceConfig::Kind::Files) {
    src = {{"type", "files"}, {"dir", source.dir}, {"num_frames", source.num_frames}};
  } else {
    src = {{"type", "simkit"},
           {"scenario", source.scenario.to_json()},
           {"noise",
            {{"box_jitter_std", source.noise.box_jitter_std},
             {"miss_rate", source.noise.miss_rate},
             {"false_positive_rate", source.noise.false_positive_rate},
             {"embedding_noise_std", source.noise.embedding_noise_std}}},
           {"embedding_dim", source.embedding_dim}};
  }
  return {{"topology", topology_path},
          {"source", src},
          {"provider", provider},
          {"tick_period", tick_period},
          {"alpha_min", alpha_min},
          {"nms_iou", nms_iou},
          {"tracker",
           {{"n_init", tracker.n_init},
            {"max_age", tracker.max_age},
            {"matching_threshold", tracker.matching_threshold},
            {"max_iou_distance", tracker.max_iou_distance},
            {"gallery_budget", tracker.gallery_budget}}},
          {"mct",
           {{"tau_min", mct.tau_min},
            {"v_max", mct.v_max},
            {"lambda", mct.lambda},
            {"flush_horizon", mct.flush_horizon},
            {"rule_adjacency", mct.rule_adjacency},
            {"rule_direction", mct.rule_direction}}},
          {"real_time", real_time},
          {"playback_speed", playback_speed},
          {"stall_timeout", stall_timeout},
          {"threads", threads},
          {"output_dir", output_dir}};
}

void PipelineConfig::validate() const {
  auto in01 = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  in01(alpha_min, "alpha_min");
  in01(nms_iou, "nms_iou");
  in01(mct.tau_min, "mct.tau_min");
  in01(mct.lambda, "mct.lambda");
  in01(tracker.max_iou_distance, "tracker.max_iou_distance");
  if (!(tracker.matching_threshold > 0.0 && tracker.matching_threshold <= 2.0)) {
    throw ConfigError("tracker.matching_threshold must lie in (0, 2]");
  }
  if (tracker.n_init < 1 || tracker.max_age < 1 || tracker.gallery_budget < 1) {
    throw ConfigError("tracker n_init, max_age and gallery_budget must be positive");
  }
  if (!(tick_period > 0.0)) throw ConfigError("tick_period must be positive");
  if (!(mct.v_max > 0.0)) throw ConfigError("mct.v_max must be positive");
  if (!(mct.flush_horizon > 0.0)) throw ConfigError("mct.flush_horizon must be positive");
  if (!(playback_speed > 0.0)) throw ConfigError("playback_speed must be positive");
  if (!(stall_timeout > 0.0)) throw ConfigError("stall_timeout must be positive");
  if (threads < 0) throw ConfigError("threads must be non-negative");
  if (provider != "oracle" && provider != "file" && provider != "external") {
    throw ConfigError("provider must be oracle, file or external");
  }
  if (source.kind == SourceConfig::Kind::Files) {
    if (source.dir.empty()) throw ConfigError("files source needs 'dir'");
    if (topology_path.empty()) throw ConfigError("files source needs 'topology'");
    if (provider == "oracle") throw ConfigError("the oracle provider needs a simkit source");
  } else {
    const auto& s = source.noise;
    if (!(s.miss_rate >= 0.0 && s.miss_rate < 1.0)) throw ConfigError("noise.miss_rate must lie in [0, 1)");
    if (s.box_jitter_std < 0.0 || s.false_positive_rate < 0.0 || s.embedding_noise_std < 0.0) {
      throw ConfigError("noise parameters must be non-negative");
    }
    if (source.embedding_dim < 1) throw ConfigError("embedding_dim must be positive");
    if (provider == "file") throw ConfigError("the file provider needs a files source");
  }
}

// ---------------------------------------------------------------------------
// Providers

std::vector<std::vector<Embedding>> PrecomputedProvider::embed(const ingest::TickBatch& batch) {
  std::vector<std::vector<Embedding>> out;
  out.reserve(batch.frames.size());
  for (const auto& f : batch.frames) {
    if (f.embeddings.size() != f.detections.size()) {
      throw DimensionMismatch("frame " + std::to_string(f.frame_index) + " of " + f.camera +
                              " has no embeddings for its detections");
    }
    out.push_back(f.embeddings);
  }
  return out;
}

std::vector<std::vector<Embedding>> SlowProvider::embed(const ingest::TickBatch& batch) {
  std::this_thread::sleep_for(delay_);
  return inner_->embed(batch);
}

// ---------------------------------------------------------------------------
// Sources

LoadedSource load_source(const PipelineConfig& cfg) {
  LoadedSource src;
  if (cfg.source.kind == SourceConfig::Kind::Simkit) {
    try {
      auto bundle = simkit::gen_scenario(cfg.source.scenario);
      const auto oracle = simkit::make_oracle(bundle.scenario, cfg.source.embedding_dim);
      auto streams = simkit::render_detections(bundle, oracle, cfg.source.noise, cfg.source.scenario.seed);
      src.topology = bundle.scenario.topology;
      for (auto& [cam, s] : streams) src.frames[cam] = std::move(s.frames);
      src.scenario = std::move(bundle);
    } catch (const InvalidLayout& e) {
      throw ConfigError(e.what());
    }
    return src;
  }

  if (!fs::exists(cfg.topology_path)) throw SourceMissing("topology " + cfg.topology_path);
  src.topology = geo::CameraTopology::load(cfg.topology_path);
  std::map<geo::CameraId, std::vector<ingest::DetectionRow>> rows;
  std::map<geo::CameraId, std::vector<Embedding>> embs;
  std::int64_t n_frames = cfg.source.num_frames;
  for (const auto& cam : src.topology.camera_ids()) {
    const auto csv = fs::path(cfg.source.dir) / "det" / (cam + ".csv");
    if (!fs::exists(csv)) throw SourceMissing(csv.string());
    rows[cam] = ingest::read_detection_csv(csv.string());
    const auto emb = fs::path(cfg.source.dir) / "det" / (cam + ".emb");
    if (fs::exists(emb)) {
      embs[cam] = read_embeddings(emb.string()).rows;
    } else if (cfg.provider == "file") {
      throw SourceMissing(emb.string());
    }
    if (cfg.source.num_frames == 0) {
      for (const auto& r : rows[cam]) n_frames = std::max(n_frames, r.frame_index + 1);
    }
  }
  for (const auto& cam : src.topology.camera_ids()) {
    src.frames[cam] = ingest::frames_from_rows(cam, src.topology.camera(cam).fps, n_frames, rows[cam], embs[cam]);
  }
  return src;
}

// ---------------------------------------------------------------------------
// Report

std::size_t RunReport::total_dropped() const {
  std::size_t n = 0;
  for (const auto& [c, d] : frames_dropped) n += d;
  return n;
}

double RunReport::latency_percentile(double p) const {
  if (tick_latency_ms.empty()) return 0.0;
  auto v = tick_latency_ms;
  std::sort(v.begin(), v.end());
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

nlohmann::json RunReport::to_json() const {
  const std::vector<double> edges{1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
  std::vector<std::size_t> counts(edges.size() + 1, 0);
  for (double l : tick_latency_ms) {
    const auto it = std::lower_bound(edges.begin(), edges.end(), l);
    ++counts[static_cast<std::size_t>(it - edges.begin())];
  }
  double sup_max = 0.0;
  for (double s : supervisor_latency_ms) sup_max = std::max(sup_max, s);
  std::size_t multi = 0;
  for (const auto& g : identities) multi += g.members.size() > 1 ? 1 : 0;
  return {{"frames_processed", frames_processed},
          {"frames_dropped", frames_dropped},
          {"dropped_total", total_dropped()},
          {"tick_latency_ms",
           {{"count", tick_latency_ms.size()},
            {"p50", latency_percentile(50)},
            {"p99", latency_percentile(99)},
            {"max", latency_percentile(100)},
            {"histogram_edges", edges},
            {"histogram_counts", counts}}},
          {"supervisor_latency_ms", {{"count", supervisor_latency_ms.size()}, {"max", sup_max}}},
          {"concluded_tracks", tracks.size()},
          {"global_identities", identities.size()},
          {"multi_camera_identities", multi},
          {"stalled_cameras", stalled_cameras},
          {"wall_seconds", wall_seconds},
          {"scenario_seconds", scenario_seconds},
          {"workers", workers}};
}

// ---------------------------------------------------------------------------
// Run

int resolve_workers(int requested, std::size_t n_cameras) {
  int w = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("MCT_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) w = std::min<int>(w, static_cast<int>(cap));
  }
  w = std::min<int>(w, static_cast<int>(std::max<std::size_t>(1, n_cameras)));
  return std::max(1, w);
}

RunReport run(const PipelineConfig& cfg, const RunOptions& options) {
  cfg.validate();
  return run(cfg, load_source(cfg), options);
}

RunReport run(const PipelineConfig& cfg, const LoadedSource& source, const RunOptions& options) {
  cfg.validate();
  const auto wall_start = Clock::now();

  std::shared_ptr<EmbeddingProvider> provider = options.provider;
  if (!provider) {
    if (cfg.provider == "external") throw ConfigError("the external provider must be supplied by the caller");
    provider = std::make_shared<PrecomputedProvider>();
  }

  const auto cams = source.topology.camera_ids();
  for (const auto& [cam, frames] : source.frames) {
    if (!source.topology.contains(cam)) throw UnknownCamera(cam);
  }
  RunReport report;
  report.workers = resolve_workers(options.workers > 0 ? options.workers : cfg.threads, cams.size());
  const auto n_workers = static_cast<std::size_t>(report.workers);

  std::map<geo::CameraId, std::size_t> owner;
  for (std::size_t i = 0; i < cams.size(); ++i) owner[cams[i]] = i % n_workers;

  double fps_max = 1.0;
  std::vector<const ingest::FrameRecord*> schedule;
  for (const auto& [cam, frames] : source.frames) {
    fps_max = std::max(fps_max, source.topology.camera(cam).fps);
    for (const auto& f : frames) {
      schedule.push_back(&f);
      report.scenario_seconds = std::max(report.scenario_seconds, f.timestamp);
    }
  }
  std::stable_sort(schedule.begin(), schedule.end(), [](const auto* a, const auto* b) {
    return std::tie(a->timestamp, a->camera) < std::tie(b->timestamp, b->camera);
  });

  const auto capacity = static_cast<std::size_t>(std::ceil(2.0 * fps_max));
  LaneQueue lanes(cams, cfg.real_time ? capacity : std::max<std::size_t>(capacity, 64), cfg.real_time);
  std::vector<Channel<WorkItem>> work(n_workers);
  Channel<SupervisorMsg> to_supervisor;
  FailureLatch latch;

  auto fail = [&](std::exception_ptr e) {
    latch.set(e);
    lanes.abort();
    for (auto& w : work) w.close();
    to_supervisor.close();
  };

  std::thread feeder([&] {
    try {
      const auto start = Clock::now();
      for (const auto* f : schedule) {
        if (latch.failed()) break;
        if (cfg.real_time) {
          const auto due = start + std::chrono::duration_cast<Clock::duration>(
                                       std::chrono::duration<double>(f->timestamp / cfg.playback_speed));
          std::this_thread::sleep_until(due);
        }
        if (!lanes.push({*f, Clock::now()})) break;
      }
      lanes.finish();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::thread batcher([&] {
    try {
      std::uint64_t batch_id = 0;
      while (auto round = lanes.next()) {
        ++batch_id;
        std::vector<ingest::FrameRecord> frames;
        Clock::time_point start = round->front().arrived;
        for (auto& a : *round) {
          start = std::min(start, a.arrived);
          frames.push_back(ingest::postprocess(a.frame, cfg.alpha_min, cfg.nms_iou));
        }
        auto batch = ingest::batch_frames(std::move(frames), static_cast<std::int64_t>(batch_id));
        auto embs = provider->embed(batch);
        if (embs.size() != batch.frames.size()) throw DimensionMismatch("provider returned the wrong frame count");
        to_supervisor.push({BatchStarted{batch_id, batch.frames.size(), start}, std::nullopt});
        for (std::size_t i = 0; i < batch.frames.size(); ++i) {
          auto& f = batch.frames[i];
          if (embs[i].size() != f.detections.size()) {
            throw DimensionMismatch("provider returned the wrong embedding count for " + f.camera);
          }
          f.embeddings = std::move(embs[i]);
          work[owner.at(f.camera)].push({batch_id, std::move(f)});
        }
      }
      for (auto& w : work) w.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w] {
      try {
        std::map<geo::CameraId, sct::Tracker> trackers;
        for (const auto& cam : cams) {
          if (owner[cam] == w) trackers.emplace(cam, sct::Tracker(source.topology.camera(cam), cfg.tracker));
        }
        while (auto item = work[w].pop()) {
          auto& tr = trackers.at(item->frame.camera);
          Progress p;
          p.camera = item->frame.camera;
          p.timestamp = item->frame.timestamp;
          p.concluded = tr.step(item->frame);
          p.batch = item->batch;
          p.done = Clock::now();
          to_supervisor.push({std::nullopt, std::move(p)});
        }
        if (latch.failed()) return;
        for (auto& [cam, tr] : trackers) {
          Progress p;
          p.camera = cam;
          p.timestamp = std::numeric_limits<double>::infinity();
          p.concluded = tr.finish();
          p.ended = true;
          to_supervisor.push({std::nullopt, std::move(p)});
        }
      } catch (...) {
        fail(std::current_exception());
      }
    });
  }

  std::map<geo::CameraId, std::size_t> stalled_frames;
  std::thread supervisor_thread([&] {
    try {
      mct::Supervisor sup(source.topology, cfg.mct);
      std::map<geo::CameraId, double> progress;
      std::map<geo::CameraId, bool> ended;
      for (const auto& c : cams) {
        progress[c] = -std::numeric_limits<double>::infinity();
        ended[c] = false;
        report.frames_processed[c] = 0;
      }
      struct Pending {
        std::size_t expected = 0;
        std::size_t done = 0;
        bool started = false;
        Clock::time_point start, last;
      };
      std::map<std::uint64_t, Pending> batches;
      std::vector<sct::ConcludedTrack> pending;
      double next_tick = cfg.tick_period;
      std::vector<mct::GlobalIdentity> emitted;

      auto settle = [&](std::uint64_t id) {
        auto& b = batches[id];
        if (b.started && b.done == b.expected) {
          report.tick_latency_ms.push_back(ms_between(b.start, b.last));
          batches.erase(id);
        }
      };
      auto all_ready = [&](double t) {
        return std::all_of(cams.begin(), cams.end(), [&](const auto& c) { return ended[c] || progress[c] >= t; });
      };
      auto all_ended = [&] {
        return std::all_of(cams.begin(), cams.end(), [&](const auto& c) { return ended[c]; });
      };
      auto run_ticks = [&] {
        while (all_ready(next_tick)) {
          if (all_ended() && pending.empty()) return true;
          std::vector<sct::ConcludedTrack> due;
          std::vector<sct::ConcludedTrack> later;
          for (auto& t : pending) (t.concluded_at <= next_tick || all_ended() ? due : later).push_back(std::move(t));
          pending = std::move(later);
          for (const auto& t : due) report.tracks.push_back(t);
          const auto t0 = Clock::now();
          auto res = sup.tick(std::move(due), next_tick);
          report.supervisor_latency_ms.push_back(ms_between(t0, Clock::now()));
          for (auto& g : res.flushed) emitted.push_back(std::move(g));
          next_tick += cfg.tick_period;
        }
        return false;
      };

      const auto stall = std::chrono::milliseconds(static_cast<long>(cfg.stall_timeout * 1000.0));
      bool finished = false;
      while (!finished) {
        bool timed_out = false;
        auto msg = cfg.real_time ? to_supervisor.pop_for(stall, timed_out) : to_supervisor.pop();
        if (!msg) {
          if (latch.failed()) return;
          if (timed_out) {
            // Cameras holding back the next tick are treated as ended.
            for (const auto& c : cams) {
              if (!ended[c] && progress[c] < next_tick) {
                ended[c] = true;
                report.stalled_cameras.push_back(c);
              }
            }
            finished = run_ticks();
            continue;
          }
          break;
        }
        if (msg->started) {
          auto& b = batches[msg->started->batch];
          b.started = true;
          b.expected = msg->started->frames;
          b.start = msg->started->start;
          settle(msg->started->batch);
        }
        if (msg->progress) {
          auto& p = *msg->progress;
          for (auto& t : p.concluded) pending.push_back(std::move(t));
          if (p.ended) {
            ended[p.camera] = true;
          } else {
            progress[p.camera] = std::max(progress[p.camera], p.timestamp);
            ++report.frames_processed[p.camera];
            auto& b = batches[p.batch];
            ++b.done;
            b.last = std::max(b.last, p.done);
            settle(p.batch);
          }
        }
        finished = run_ticks();
      }
      // Frames that reach a camera after it was declared stalled are discarded.
      while (auto msg = to_supervisor.pop()) {
        if (msg->progress && !msg->progress->ended) ++stalled_frames[msg->progress->camera];
      }
      if (latch.failed()) return;
      for (auto& g : sup.finish()) emitted.push_back(std::move(g));
      std::sort(emitted.begin(), emitted.end(), [](const auto& a, const auto& b) { return a.global_id < b.global_id; });
      report.identities = std::move(emitted);
    } catch (...) {
      fail(std::current_exception());
    }
  });

  feeder.join();
  batcher.join();
  for (auto& t : workers) t.join();
  to_supervisor.close();
  supervisor_thread.join();
  latch.rethrow();

  report.frames_dropped = lanes.dropped();
  for (const auto& [cam, n] : stalled_frames) report.frames_dropped[cam] += n;
  std::sort(report.tracks.begin(), report.tracks.end(), [](const auto& a, const auto& b) {
    return std::tie(a.camera, a.track_id) < std::tie(b.camera, b.track_id);
  });
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - wall_start).count();
  if (!cfg.output_dir.empty()) write_outputs(cfg.output_dir, report);
  return report;
}

// ---------------------------------------------------------------------------
// Outputs

metrics::TrajectorySet identity_trajectories(const std::vector<mct::GlobalIdentity>& identities) {
  metrics::TrajectorySet out;
  for (const auto& g : identities) {
    for (const auto& m : g.members) {
      for (const auto& b : m.boxes) out.push_back({m.camera, b.frame_index, static_cast<long>(g.global_id), b.box});
    }
  }
  return out;
}

metrics::TrajectorySet track_trajectories(const std::vector<sct::ConcludedTrack>& tracks) {
  metrics::TrajectorySet out;
  for (const auto& t : tracks) {
    for (const auto& b : t.boxes) out.push_back({t.camera, b.frame_index, static_cast<long>(t.track_id), b.box});
  }
  return out;
}

metrics::TrajectorySet gt_trajectories(const simkit::GroundTruth& gt) {
  metrics::TrajectorySet out;
  for (const auto& [cam, frames] : gt.frames) {
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (const auto& g : frames[f]) out.push_back({cam, static_cast<std::int64_t>(f), g.global_id, g.box});
    }
  }
  return out;
}

void write_track_table(const std::string& dir, const RunReport& report) {
  std::map<mct::TrackKey, std::int64_t> gid;
  for (const auto& g : report.identities) {
    for (const auto& m : g.members) gid[{m.camera, m.track_id}] = g.global_id;
  }
  std::ofstream out(fs::path(dir) / "tracks.csv");
  out << "camera,track_id,global_id,t_s,t_e,lat_s,lon_s,lat_e,lon_e,class\n";
  std::vector<Embedding> rows;
  std::uint32_t dim = 0;
  char buf[256];
  for (const auto& t : report.tracks) {
    const auto it = gid.find({t.camera, t.track_id});
    std::snprintf(buf, sizeof buf, ",%lld,%lld,%.3f,%.3f,%.8f,%.8f,%.8f,%.8f,%d\n",
                  static_cast<long long>(t.track_id), static_cast<long long>(it == gid.end() ? -1 : it->second),
                  t.t_s, t.t_e, t.l_s.lat, t.l_s.lon, t.l_e.lat, t.l_e.lon, static_cast<int>(t.class_label));
    out << t.camera << buf;
    rows.push_back(t.embedding);
    dim = static_cast<std::uint32_t>(t.embedding.size());
  }
  write_embeddings((fs::path(dir) / "tracks.emb").string(), dim, rows);
}

void write_outputs(const std::string& dir, const RunReport& report) {
  fs::create_directories(dir);
  sct::write_track_csv((fs::path(dir) / "sct.csv").string(), report.tracks);
  mct::write_global_csv((fs::path(dir) / "mct.csv").string(), report.identities);
  {
    std::ofstream out(fs::path(dir) / "mct_summary.json");
    out << mct::summary_json(report.identities).dump(1) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "report.json");
    out << report.to_json().dump(1) << "\n";
  }
  write_track_table(dir, report);
}

}  // namespace citytrack::pipeline
