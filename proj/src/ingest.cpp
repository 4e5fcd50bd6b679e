#include "citytrack/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "citytrack/errors.hpp"
#include "csv.hpp"

namespace citytrack::ingest {

VehicleClass vehicle_class_from_int(int v) {
  if (v < 0 || v > static_cast<int>(VehicleClass::Other)) return VehicleClass::Other;
  return static_cast<VehicleClass>(v);
}

const char* to_string(VehicleClass c) {
  switch (c) {
    case VehicleClass::Car: return "car";
    case VehicleClass::Bus: return "bus";
    case VehicleClass::Truck: return "truck";
    case VehicleClass::Van: return "van";
    case VehicleClass::Suv: return "suv";
    case VehicleClass::Other: return "other";
  }
  return "other";
}

Detection Detection::make(double x1, double y1, double x2, double y2, double alpha, VehicleClass beta) {
  if (!(x2 > x1) || !(y2 > y1)) throw std::invalid_argument("Detection: degenerate box");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("Detection: confidence outside [0,1]");
  return Detection{x1, y1, x2, y2, alpha, beta};
}

std::vector<std::size_t> filter_confidence_indices(const std::vector<Detection>& dets, double alpha_min) {
  std::vector<std::size_t> keep;
  keep.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].alpha >= alpha_min) keep.push_back(i);
  }
  return keep;
}

std::vector<Detection> filter_confidence(const std::vector<Detection>& dets, double alpha_min) {
  std::vector<Detection> out;
  for (auto i : filter_confidence_indices(dets, alpha_min)) out.push_back(dets[i]);
  return out;
}

double iou(const Detection& a, const Detection& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = dets[a];
    const auto& db = dets[b];
    if (da.alpha != db.alpha) return da.alpha > db.alpha;
    if (da.x1 != db.x1) return da.x1 < db.x1;
    return da.y1 < db.y1;
  });
  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const auto j = order[oj];
      if (!suppressed[j] && iou(dets[i], dets[j]) > iou_thresh) suppressed[j] = true;
    }
  }
  return keep;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<Detection> out;
  for (auto i : nms_indices(dets, iou_thresh)) out.push_back(dets[i]);
  return out;
}

FrameRecord postprocess(const FrameRecord& frame, double alpha_min, double iou_thresh) {
  if (!frame.embeddings.empty() && frame.embeddings.size() != frame.detections.size()) {
    throw DimensionMismatch("frame embeddings are not aligned with detections");
  }
  const auto kept = filter_confidence_indices(frame.detections, alpha_min);
  std::vector<Detection> filtered;
  filtered.reserve(kept.size());
  for (auto i : kept) filtered.push_back(frame.detections[i]);
  const auto survivors = nms_indices(filtered, iou_thresh);

  FrameRecord out;
  out.camera = frame.camera;
  out.frame_index = frame.frame_index;
  out.timestamp = frame.timestamp;
  out.detections.reserve(survivors.size());
  for (auto s : survivors) {
    out.detections.push_back(filtered[s]);
    if (!frame.embeddings.empty()) out.embeddings.push_back(frame.embeddings[kept[s]]);
  }
  return out;
}

TickBatch batch_frames(std::vector<FrameRecord> pending, std::int64_t tick) {
  std::stable_sort(pending.begin(), pending.end(),
                   [](const FrameRecord& a, const FrameRecord& b) { return a.camera < b.camera; });
  for (std::size_t i = 1; i < pending.size(); ++i) {
    if (pending[i].camera == pending[i - 1].camera) throw DuplicateCamera(pending[i].camera);
  }
  return TickBatch{tick, std::move(pending)};
}

std::vector<DetectionRow> read_detection_csv(const std::string& path) {
  std::vector<DetectionRow> rows;
  detail::for_each_csv_row(path, [&](const auto& f, const std::string& where) {
    if (f.size() < 7) throw ParseError(where + ": expected frame,id,x,y,w,h,conf[,class]");
    DetectionRow r;
    r.frame_index = detail::parse_int(f[0], where) - 1;
    if (r.frame_index < 0) throw ParseError(where + ": frames are 1-based");
    r.id = detail::parse_int(f[1], where);
    const double x = detail::parse_double(f[2], where);
    const double y = detail::parse_double(f[3], where);
    const double w = detail::parse_double(f[4], where);
    const double h = detail::parse_double(f[5], where);
    double conf = detail::parse_double(f[6], where);
    if (conf < 0.0 || conf > 1.0) throw ParseError(where + ": confidence outside [0,1]");
    const auto cls = f.size() > 7 ? vehicle_class_from_int(static_cast<int>(detail::parse_int(f[7], where)))
                                  : VehicleClass::Car;
    if (!(w > 0.0) || !(h > 0.0)) throw ParseError(where + ": non-positive box size");
    r.det = Detection{x, y, x + w, y + h, conf, cls};
    rows.push_back(r);
  });
  return rows;
}

void write_detection_csv(const std::string& path, const std::vector<DetectionRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.4f,%.4f,%.4f,%.4f,%.4f,%d\n",
                  static_cast<long long>(r.frame_index + 1), static_cast<long long>(r.id), r.det.x1, r.det.y1,
                  r.det.width(), r.det.height(), r.det.alpha, static_cast<int>(r.det.beta));
    out << buf;
  }
}

std::vector<FrameRecord> frames_from_rows(const geo::CameraId& camera, double fps, std::int64_t num_frames,
                                          const std::vector<DetectionRow>& rows,
                                          const std::vector<Embedding>& embeddings) {
  if (!embeddings.empty() && embeddings.size() != rows.size()) {
    throw DimensionMismatch("embedding rows (" + std::to_string(embeddings.size()) +
                            ") do not match detection rows (" + std::to_string(rows.size()) + ")");
  }
  std::int64_t max_frame = -1;
  for (const auto& r : rows) max_frame = std::max(max_frame, r.frame_index);
  const std::int64_t n = std::max(num_frames, max_frame + 1);
  std::vector<FrameRecord> frames(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto& f = frames[static_cast<std::size_t>(i)];
    f.camera = camera;
    f.frame_index = i;
    f.timestamp = static_cast<double>(i) / fps;
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& f = frames[static_cast<std::size_t>(rows[k].frame_index)];
    f.detections.push_back(rows[k].det);
    if (!embeddings.empty()) f.embeddings.push_back(embeddings[k]);
  }
  return frames;
}

}  // namespace citytrack::ingest
