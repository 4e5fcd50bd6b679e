#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "citytrack/geo.hpp"
#include "citytrack/reid.hpp"
#include "citytrack/sct.hpp"

namespace citytrack::mct {

struct MctParams {
  double tau_min = 0.15;
  /// Maximum plausible travel speed, m/s.
  double v_max = 40.0;
  /// Camera bias mitigation strength.
  double lambda = 0.1;
  double flush_horizon = 120.0;
  /// Rule 4 (adjacent cameras only) and rule 5 (direction consistency).
  bool rule_adjacency = true;
  bool rule_direction = true;
};

using TrackKey = std::pair<geo::CameraId, std::int64_t>;

/// What the similarity computation sees of a single-camera track or of a
/// multi-camera identity: its cameras, appearance and time-location endpoints.
struct TrackSummary {
  std::vector<geo::CameraId> cameras;  // sorted, unique
  geo::CameraId start_camera;
  geo::CameraId end_camera;
  Embedding embedding;
  double t_s = 0.0;
  double t_e = 0.0;
  geo::GeoPoint l_s;
  geo::GeoPoint l_e;
  /// Smallest (camera, track id) among members; orders ties.
  TrackKey key;
};

TrackSummary summarize(const sct::ConcludedTrack& t);
/// Summary of an identity: normalized mean embedding, earliest start and latest end.
TrackSummary summarize(const std::vector<sct::ConcludedTrack>& members);

/// Earlier/later roles for a pair, ordered by end time.
struct TrackPairContext {
  const TrackSummary* earlier = nullptr;
  const TrackSummary* later = nullptr;
  double dt = 0.0;            // later.t_s - earlier.t_e, seconds
  double gap_distance = 0.0;  // d(later.l_s, earlier.l_e), meters
};

TrackPairContext make_context(const TrackSummary& a, const TrackSummary& b);

/// Quadratic speed prior 4 v (v_max - v) / v_max^2, clamped at 0.
double speed_similarity(double mean_speed, double v_max);
/// Throws NonPositiveDt when ctx.dt <= 0.
double speed_similarity(const TrackPairContext& ctx, double v_max);

/// Forward/backward direction consistency; `earlier` ends before `later` starts.
bool direction_consistent(const TrackSummary& earlier, const TrackSummary& later);
bool direction_consistent(const sct::ConcludedTrack& earlier, const sct::ConcludedTrack& later);

/// Appearance times speed similarity, or 0 when a traffic rule fails.
/// Symmetric. Throws UnknownCamera.
double pairwise_similarity(const TrackSummary& a, const TrackSummary& b, const geo::CameraTopology& topo,
                           const MctParams& params);
double pairwise_similarity(const sct::ConcludedTrack& a, const sct::ConcludedTrack& b,
                           const geo::CameraTopology& topo, const MctParams& params);

using SimilarityMatrix = Eigen::MatrixXd;

SimilarityMatrix build_similarity_matrix(const std::vector<TrackSummary>& tracks, const geo::CameraTopology& topo,
                                         const MctParams& params);
SimilarityMatrix build_similarity_matrix(const std::vector<sct::ConcludedTrack>& tracks,
                                         const geo::CameraTopology& topo, const MctParams& params);

SimilarityMatrix apply_min_threshold(const SimilarityMatrix& m, double tau_min);

/// Greedy agglomeration under camera exclusivity: repeatedly merges the
/// highest-similarity pair whose clusters are distinct and camera-disjoint.
/// Returns clusters as sorted index lists, ordered by smallest index.
std::vector<std::vector<std::size_t>> hierarchical_cluster(const std::vector<TrackSummary>& tracks,
                                                           const SimilarityMatrix& m);

struct GlobalIdentity {
  std::int64_t global_id = 0;
  std::vector<sct::ConcludedTrack> members;
  std::vector<geo::CameraId> cameras;
  double last_seen = 0.0;
};

struct TickResult {
  /// Identities flushed on this tick.
  std::vector<GlobalIdentity> flushed;
  /// Global id given to each new track, aligned with the tick's input after
  /// deterministic ordering (see Supervisor::tick).
  std::vector<std::pair<TrackKey, std::int64_t>> assignments;
  std::size_t merges = 0;
};

/// Owns the multi-camera store. Single writer; not thread-safe.
class Supervisor {
 public:
  Supervisor(geo::CameraTopology topology, MctParams params);

  /// New tracks are processed in (camera, track id) order.
  TickResult tick(std::vector<sct::ConcludedTrack> new_tracks, double now);
  /// Emits every remaining identity.
  std::vector<GlobalIdentity> finish();

  const std::vector<GlobalIdentity>& active() const { return active_; }
  const MctParams& params() const { return params_; }

 private:
  geo::CameraTopology topology_;
  MctParams params_;
  reid::CameraEmbeddingStats camera_stats_;
  std::vector<GlobalIdentity> active_;
  std::int64_t next_id_ = 1;
};

/// camera,frame,global_id,x,y,w,h (1-based frames), sorted by camera, frame, id.
void write_global_csv(const std::string& path, const std::vector<GlobalIdentity>& identities);
nlohmann::json summary_json(const std::vector<GlobalIdentity>& identities);

}  // namespace citytrack::mct
