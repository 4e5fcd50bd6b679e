#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "citytrack/embedding.hpp"
#include "citytrack/geo.hpp"
#include "citytrack/ingest.hpp"
#include "citytrack/kalman.hpp"
#include "citytrack/reid.hpp"

namespace citytrack::sct {

struct TrackerParams {
  int n_init = 3;
  int max_age = 30;
  /// Appearance cost threshold for the matching cascade.
  double matching_threshold = 0.3;
  double max_iou_distance = 0.7;
  std::size_t gallery_budget = 100;
};

enum class TrackStatus { Tentative, Confirmed, Deleted };

struct TimedBox {
  std::int64_t frame_index = 0;
  ingest::Detection box;
};

struct TimedFeature {
  std::int64_t frame_index = 0;
  Embedding feature;
};

/// A live single-camera track.
struct SCTrack {
  std::int64_t track_id = 0;
  geo::CameraId camera;
  TrackStatus status = TrackStatus::Tentative;
  KalmanState state;
  int hits = 0;
  int time_since_update = 0;
  std::vector<TimedBox> boxes;
  std::vector<TimedFeature> features;
  std::deque<Embedding> gallery;
};

/// A finished single-camera track, summarized for cross-camera association.
struct ConcludedTrack {
  geo::CameraId camera;
  std::int64_t track_id = 0;
  Embedding embedding;
  double t_s = 0.0;
  double t_e = 0.0;
  geo::GeoPoint l_s;
  geo::GeoPoint l_e;
  ingest::VehicleClass class_label = ingest::VehicleClass::Car;
  std::vector<TimedBox> boxes;
  /// Frame at which the tracker declared the track finished.
  std::int64_t concluded_frame = 0;
  double concluded_at = 0.0;
};

/// Min over the gallery of 1 - <g, e>. Throws EmptyGallery.
double appearance_cost(std::span<const Embedding> gallery, const Embedding& e);
double appearance_cost(const std::deque<Embedding>& gallery, const Embedding& e);

struct Association {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // (track, detection)
  std::vector<std::size_t> unmatched_tracks;
  std::vector<std::size_t> unmatched_detections;
};

/// Matching cascade on confirmed tracks (appearance cost, Mahalanobis gate),
/// then IoU assignment for tentative tracks and tracks missed for one frame.
/// Track states must already be predicted to the frame's time.
Association associate(const std::vector<SCTrack>& tracks, const ingest::FrameRecord& frame,
                      const TrackerParams& params);

/// Majority label; ties go to the label seen first.
ingest::VehicleClass majority_class(const std::vector<TimedBox>& boxes);

/// One camera's tracker. Not thread-safe; owned by a single worker.
class Tracker {
 public:
  Tracker(geo::CameraInfo camera, TrackerParams params, reid::TemporalScorer scorer = {});

  /// Advances to the frame and returns the tracks that concluded on it.
  /// Throws OutOfOrderFrame unless frame indices strictly increase.
  std::vector<ConcludedTrack> step(const ingest::FrameRecord& frame);
  /// End of stream: concludes every confirmed track.
  std::vector<ConcludedTrack> finish();

  const std::vector<SCTrack>& tracks() const { return tracks_; }
  const geo::CameraInfo& camera() const { return camera_; }

 private:
  ConcludedTrack conclude(SCTrack& track, std::int64_t frame_index) const;

  geo::CameraInfo camera_;
  TrackerParams params_;
  reid::TemporalScorer scorer_;
  std::vector<SCTrack> tracks_;
  std::int64_t next_id_ = 1;
  std::int64_t last_frame_ = -1;
};

/// camera,frame,track_id,x,y,w,h,conf (1-based frames).
void write_track_csv(const std::string& path, const std::vector<ConcludedTrack>& tracks);

struct TrackCsvRow {
  geo::CameraId camera;
  std::int64_t frame_index = 0;
  std::int64_t id = 0;
  ingest::Detection box;
};
/// Reads both the single-camera (with conf) and global (without) track CSVs.
std::vector<TrackCsvRow> read_track_csv(const std::string& path);

}  // namespace citytrack::sct
