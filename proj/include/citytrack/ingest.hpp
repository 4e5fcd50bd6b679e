#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "citytrack/embedding.hpp"
#include "citytrack/geo.hpp"

namespace citytrack::ingest {

enum class VehicleClass : int { Car = 0, Bus = 1, Truck = 2, Van = 3, Suv = 4, Other = 5 };

VehicleClass vehicle_class_from_int(int v);
const char* to_string(VehicleClass c);

/// One detector output: corners in pixels, confidence and class label.
struct Detection {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  double alpha = 1.0;
  VehicleClass beta = VehicleClass::Car;

  /// Validating constructor; throws std::invalid_argument on inverted boxes
  /// or confidences outside [0, 1].
  static Detection make(double x1, double y1, double x2, double y2, double alpha,
                        VehicleClass beta = VehicleClass::Car);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct FrameRecord {
  geo::CameraId camera;
  std::int64_t frame_index = 0;
  double timestamp = 0.0;
  std::vector<Detection> detections;
  /// Either empty or one unit embedding per detection.
  std::vector<Embedding> embeddings;

  bool has_embeddings() const { return !embeddings.empty() || detections.empty(); }
};

struct TickBatch {
  std::int64_t tick = 0;
  std::vector<FrameRecord> frames;
};

inline constexpr double kDefaultAlphaMin = 0.35;
inline constexpr double kDefaultNmsIou = 0.85;

std::vector<Detection> filter_confidence(const std::vector<Detection>& dets, double alpha_min);
/// Indices of detections with alpha >= alpha_min, in input order.
std::vector<std::size_t> filter_confidence_indices(const std::vector<Detection>& dets, double alpha_min);

double iou(const Detection& a, const Detection& b);

/// Greedy class-agnostic NMS. Confidence ties go to the lexicographically
/// smaller (x1, y1). Output is in greedy (non-increasing confidence) order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);
std::vector<std::size_t> nms_indices(const std::vector<Detection>& dets, double iou_thresh);

/// Confidence filter then NMS, applied to a frame's detections and any
/// attached embeddings together.
FrameRecord postprocess(const FrameRecord& frame, double alpha_min, double iou_thresh);

/// Orders frames by camera id. Throws DuplicateCamera.
TickBatch batch_frames(std::vector<FrameRecord> pending, std::int64_t tick);

// ---------------------------------------------------------------------------
// MOTChallenge-style detection files: frame,id,x,y,w,h,conf,class
// Frames are 1-based on disk and 0-based in memory.

struct DetectionRow {
  std::int64_t frame_index = 0;
  std::int64_t id = -1;
  Detection det;
};

std::vector<DetectionRow> read_detection_csv(const std::string& path);
void write_detection_csv(const std::string& path, const std::vector<DetectionRow>& rows);

/// Groups rows into frames 0..num_frames-1 (empty frames included). When
/// `embeddings` is non-empty it must be row-aligned with `rows`.
std::vector<FrameRecord> frames_from_rows(const geo::CameraId& camera, double fps,
                                          std::int64_t num_frames,
                                          const std::vector<DetectionRow>& rows,
                                          const std::vector<Embedding>& embeddings);

}  // namespace citytrack::ingest
