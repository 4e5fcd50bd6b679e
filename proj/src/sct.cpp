#include "citytrack/sct.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "citytrack/assignment.hpp"
#include "citytrack/errors.hpp"
#include "csv.hpp"

namespace citytrack::sct {

namespace {

constexpr double kInfeasible = 1e5;

geo::PixelPoint bottom_center(const ingest::Detection& d) { return {(d.x1 + d.x2) / 2.0, d.y2}; }

// Runs min-cost matching on a subset of tracks/detections and maps indices back.
void match_subset(const std::vector<std::size_t>& track_idx, const std::vector<std::size_t>& det_idx,
                  const Eigen::MatrixXd& cost, double max_cost, Association& out,
                  std::vector<std::size_t>& unmatched_tracks, std::vector<std::size_t>& unmatched_dets) {
  const auto res = min_cost_matching(cost, max_cost);
  for (auto [r, c] : res.matches) {
    out.matches.emplace_back(track_idx[static_cast<std::size_t>(r)], det_idx[static_cast<std::size_t>(c)]);
  }
  unmatched_tracks.clear();
  for (int r : res.unmatched_rows) unmatched_tracks.push_back(track_idx[static_cast<std::size_t>(r)]);
  unmatched_dets.clear();
  for (int c : res.unmatched_cols) unmatched_dets.push_back(det_idx[static_cast<std::size_t>(c)]);
}

}  // namespace

double appearance_cost(std::span<const Embedding> gallery, const Embedding& e) {
  if (gallery.empty()) throw EmptyGallery("track has no appearance samples");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& g : gallery) best = std::min(best, 1.0 - g.dot(e));
  return best;
}

double appearance_cost(const std::deque<Embedding>& gallery, const Embedding& e) {
  if (gallery.empty()) throw EmptyGallery("track has no appearance samples");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& g : gallery) best = std::min(best, 1.0 - g.dot(e));
  return best;
}

Association associate(const std::vector<SCTrack>& tracks, const ingest::FrameRecord& frame,
                      const TrackerParams& params) {
  const auto& dets = frame.detections;
  if (!dets.empty() && frame.embeddings.size() != dets.size()) {
    throw DimensionMismatch("association needs one embedding per detection");
  }
  Association out;
  std::vector<std::size_t> unmatched_dets(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) unmatched_dets[i] = i;

  std::vector<Observation> obs;
  obs.reserve(dets.size());
  for (const auto& d : dets) obs.push_back(to_observation(d));

  // Stage 1: cascade over confirmed tracks, most recently updated first.
  std::vector<char> matched_track(tracks.size(), 0);
  for (int level = 0; level < params.max_age && !unmatched_dets.empty(); ++level) {
    std::vector<std::size_t> level_tracks;
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      if (tracks[t].status == TrackStatus::Confirmed && tracks[t].time_since_update == 1 + level) {
        level_tracks.push_back(t);
      }
    }
    if (level_tracks.empty()) continue;
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(level_tracks.size()),
                         static_cast<Eigen::Index>(unmatched_dets.size()));
    for (std::size_t r = 0; r < level_tracks.size(); ++r) {
      const auto& track = tracks[level_tracks[r]];
      for (std::size_t c = 0; c < unmatched_dets.size(); ++c) {
        const auto d = unmatched_dets[c];
        double v = appearance_cost(track.gallery, frame.embeddings[d]);
        if (gating_distance(track.state, obs[d]) > kGateThreshold) v = kInfeasible;
        cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
    std::vector<std::size_t> rest_tracks, rest_dets;
    const auto before = out.matches.size();
    match_subset(level_tracks, unmatched_dets, cost, params.matching_threshold, out, rest_tracks, rest_dets);
    for (std::size_t m = before; m < out.matches.size(); ++m) matched_track[out.matches[m].first] = 1;
    unmatched_dets = std::move(rest_dets);
  }

  // Stage 2: IoU on tentative tracks and confirmed tracks missed for exactly one frame.
  std::vector<std::size_t> iou_tracks, left_tracks;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    if (matched_track[t]) continue;
    const bool tentative = tracks[t].status == TrackStatus::Tentative;
    if (tentative || tracks[t].time_since_update == 1) {
      iou_tracks.push_back(t);
    } else {
      left_tracks.push_back(t);
    }
  }
  if (!iou_tracks.empty() && !unmatched_dets.empty()) {
    Eigen::MatrixXd cost(static_cast<Eigen::Index>(iou_tracks.size()),
                         static_cast<Eigen::Index>(unmatched_dets.size()));
    for (std::size_t r = 0; r < iou_tracks.size(); ++r) {
      const auto predicted = to_detection(tracks[iou_tracks[r]].state.observation());
      for (std::size_t c = 0; c < unmatched_dets.size(); ++c) {
        cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            1.0 - ingest::iou(predicted, dets[unmatched_dets[c]]);
      }
    }
    std::vector<std::size_t> rest_tracks, rest_dets;
    match_subset(iou_tracks, unmatched_dets, cost, params.max_iou_distance, out, rest_tracks, rest_dets);
    left_tracks.insert(left_tracks.end(), rest_tracks.begin(), rest_tracks.end());
    unmatched_dets = std::move(rest_dets);
  } else {
    left_tracks.insert(left_tracks.end(), iou_tracks.begin(), iou_tracks.end());
  }

  std::sort(out.matches.begin(), out.matches.end());
  std::sort(left_tracks.begin(), left_tracks.end());
  std::sort(unmatched_dets.begin(), unmatched_dets.end());
  out.unmatched_tracks = std::move(left_tracks);
  out.unmatched_detections = std::move(unmatched_dets);
  return out;
}

ingest::VehicleClass majority_class(const std::vector<TimedBox>& boxes) {
  std::map<ingest::VehicleClass, std::pair<int, std::size_t>> votes;  // count, first seen
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    auto [it, fresh] = votes.try_emplace(boxes[i].box.beta, 0, i);
    ++it->second.first;
  }
  ingest::VehicleClass best = ingest::VehicleClass::Other;
  int best_count = -1;
  std::size_t best_first = 0;
  for (const auto& [label, v] : votes) {
    if (v.first > best_count || (v.first == best_count && v.second < best_first)) {
      best = label;
      best_count = v.first;
      best_first = v.second;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Tracker

Tracker::Tracker(geo::CameraInfo camera, TrackerParams params, reid::TemporalScorer scorer)
    : camera_(std::move(camera)), params_(params), scorer_(std::move(scorer)) {}

std::vector<ConcludedTrack> Tracker::step(const ingest::FrameRecord& frame) {
  if (frame.frame_index <= last_frame_) {
    throw OutOfOrderFrame(camera_.id + ": frame " + std::to_string(frame.frame_index) + " after " +
                          std::to_string(last_frame_));
  }
  const std::int64_t elapsed = last_frame_ < 0 ? 1 : frame.frame_index - last_frame_;
  last_frame_ = frame.frame_index;

  for (auto& t : tracks_) {
    for (std::int64_t k = 0; k < elapsed; ++k) t.state = kf_predict(t.state);
    t.time_since_update += static_cast<int>(elapsed);
  }

  const auto assoc = associate(tracks_, frame, params_);

  for (auto [ti, di] : assoc.matches) {
    auto& t = tracks_[ti];
    const auto& det = frame.detections[di];
    t.state = kf_update(t.state, to_observation(det));
    ++t.hits;
    t.time_since_update = 0;
    t.boxes.push_back({frame.frame_index, det});
    t.features.push_back({frame.frame_index, frame.embeddings[di]});
    t.gallery.push_back(frame.embeddings[di]);
    while (t.gallery.size() > params_.gallery_budget) t.gallery.pop_front();
    if (t.status == TrackStatus::Tentative && t.hits >= params_.n_init) t.status = TrackStatus::Confirmed;
  }

  std::vector<ConcludedTrack> concluded;
  for (auto ti : assoc.unmatched_tracks) {
    auto& t = tracks_[ti];
    if (t.status == TrackStatus::Tentative) {
      t.status = TrackStatus::Deleted;
    } else if (t.time_since_update > params_.max_age) {
      concluded.push_back(conclude(t, frame.frame_index));
      t.status = TrackStatus::Deleted;
    }
  }

  for (auto di : assoc.unmatched_detections) {
    const auto& det = frame.detections[di];
    SCTrack t;
    t.track_id = next_id_++;
    t.camera = camera_.id;
    t.state = kf_initiate(to_observation(det));
    t.hits = 1;
    t.boxes.push_back({frame.frame_index, det});
    t.features.push_back({frame.frame_index, frame.embeddings[di]});
    t.gallery.push_back(frame.embeddings[di]);
    if (params_.n_init <= 1) t.status = TrackStatus::Confirmed;
    tracks_.push_back(std::move(t));
  }

  std::erase_if(tracks_, [](const SCTrack& t) { return t.status == TrackStatus::Deleted; });
  return concluded;
}

std::vector<ConcludedTrack> Tracker::finish() {
  std::vector<ConcludedTrack> out;
  for (auto& t : tracks_) {
    if (t.status == TrackStatus::Confirmed) out.push_back(conclude(t, std::max<std::int64_t>(last_frame_, 0)));
  }
  tracks_.clear();
  return out;
}

ConcludedTrack Tracker::conclude(SCTrack& track, std::int64_t frame_index) const {
  ConcludedTrack c;
  c.camera = camera_.id;
  c.track_id = track.track_id;
  std::vector<Embedding> rows;
  rows.reserve(track.features.size());
  for (const auto& f : track.features) rows.push_back(f.feature);
  c.embedding = reid::temporal_aggregate(rows, scorer_);
  const auto& first = track.boxes.front();
  const auto& last = track.boxes.back();
  c.t_s = static_cast<double>(first.frame_index) / camera_.fps;
  c.t_e = static_cast<double>(last.frame_index) / camera_.fps;
  c.l_s = geo::pixel_to_geo(camera_.homography, bottom_center(first.box));
  c.l_e = geo::pixel_to_geo(camera_.homography, bottom_center(last.box));
  c.class_label = majority_class(track.boxes);
  c.boxes = std::move(track.boxes);
  c.concluded_frame = frame_index;
  c.concluded_at = static_cast<double>(frame_index) / camera_.fps;
  return c;
}

// ---------------------------------------------------------------------------
// Files

void write_track_csv(const std::string& path, const std::vector<ConcludedTrack>& tracks) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  char buf[320];
  for (const auto& t : tracks) {
    for (const auto& b : t.boxes) {
      std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.4f,%.4f,%.4f,%.4f,%.4f\n", t.camera.c_str(),
                    static_cast<long long>(b.frame_index + 1), static_cast<long long>(t.track_id), b.box.x1,
                    b.box.y1, b.box.width(), b.box.height(), b.box.alpha);
      out << buf;
    }
  }
}

std::vector<TrackCsvRow> read_track_csv(const std::string& path) {
  std::vector<TrackCsvRow> rows;
  detail::for_each_csv_row(path, [&](const auto& f, const std::string& where) {
    if (f.size() < 7) throw ParseError(where + ": expected camera,frame,id,x,y,w,h[,conf]");
    TrackCsvRow r;
    r.camera = std::string(f[0]);
    r.frame_index = detail::parse_int(f[1], where) - 1;
    r.id = detail::parse_int(f[2], where);
    const double x = detail::parse_double(f[3], where);
    const double y = detail::parse_double(f[4], where);
    const double w = detail::parse_double(f[5], where);
    const double h = detail::parse_double(f[6], where);
    const double conf = f.size() > 7 ? detail::parse_double(f[7], where) : 1.0;
    r.box = ingest::Detection{x, y, x + w, y + h, conf, ingest::VehicleClass::Car};
    rows.push_back(r);
  });
  return rows;
}

}  // namespace citytrack::sct
