#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "citytrack/geo.hpp"
#include "citytrack/ingest.hpp"

namespace citytrack::metrics {

struct Observation {
  geo::CameraId camera;
  std::int64_t frame = 0;
  long id = 0;
  ingest::Detection box;
};

/// Boxes of every id; at most one per (id, camera, frame).
using TrajectorySet = std::vector<Observation>;

struct MotSummary {
  double mota = 0.0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t id_switches = 0;
  std::size_t num_gt = 0;
  std::size_t num_matches = 0;
  double idp = 0.0;
  double idr = 0.0;
  double idf1 = 0.0;
  std::size_t idtp = 0;
  std::size_t idfp = 0;
  std::size_t idfn = 0;

  nlohmann::json to_json() const;
};

struct IdentityScores {
  double idp = 0.0;
  double idr = 0.0;
  double idf1 = 0.0;
  std::size_t idtp = 0;
  std::size_t idfp = 0;
  std::size_t idfn = 0;
};

/// CLEAR-MOT counts; fills the MOTA fields of the summary only.
MotSummary evaluate_mota(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh = 0.5);
/// Identity metrics under the IDTP-maximizing one-to-one id correspondence.
IdentityScores evaluate_identity(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh = 0.5);
/// Both of the above.
MotSummary evaluate(const TrajectorySet& gt, const TrajectorySet& pred, double iou_thresh = 0.5);

/// Throws std::invalid_argument when an (id, camera, frame) repeats.
void check_trajectories(const TrajectorySet& s);

/// For each (camera, pred id): the gt id its boxes match most often at
/// iou >= iou_thresh. Ids without any match are absent.
std::map<std::pair<geo::CameraId, long>, long> majority_labels(const TrajectorySet& pred, const TrajectorySet& gt,
                                                              double iou_thresh = 0.5);

/// MOT-style GT files `<camera>.csv` in a directory (frame,id,x,y,w,h,...).
TrajectorySet read_gt_dir(const std::string& dir);
/// Track CSV with a camera column (single-camera or global output).
TrajectorySet read_prediction_csv(const std::string& path);

}  // namespace citytrack::metrics
