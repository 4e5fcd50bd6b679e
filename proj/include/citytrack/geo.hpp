#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace citytrack::geo {

inline constexpr double kEarthRadiusM = 6'371'000.0;

using CameraId = std::string;

/// Latitude/longitude in degrees. Longitude 180 is accepted as an alias of -180.
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  /// Throws std::invalid_argument on NaN or out-of-range coordinates.
  static GeoPoint make(double lat, double lon);

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct Correspondence {
  PixelPoint pixel;
  GeoPoint geo;
};

/// Planar homography mapping image pixels to the (lon, lat) plane in degrees.
///
/// The matrix is stored normalized so that m(2,2) == 1 whenever that entry is
/// non-zero. Construction rejects numerically singular matrices.
class Homography {
 public:
  Homography();
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return Homography(); }
  /// Row-major 9-element form, as used in topology files.
  static Homography from_row_major(std::span<const double> values);

  const Eigen::Matrix3d& matrix() const { return m_; }
  const Eigen::Matrix3d& inverse() const { return inv_; }
  std::vector<double> row_major() const;

 private:
  Eigen::Matrix3d m_;
  Eigen::Matrix3d inv_;
};

/// Great-circle distance in meters on a sphere of radius kEarthRadiusM.
double haversine_distance(const GeoPoint& a, const GeoPoint& b);

/// Normalized DLT over at least four correspondences.
/// Throws DegenerateConfiguration for rank-deficient systems.
Homography estimate_homography(std::span<const Correspondence> pairs);

/// Throws HorizonPoint when the homogeneous coordinate vanishes.
GeoPoint pixel_to_geo(const Homography& h, const PixelPoint& p);
PixelPoint geo_to_pixel(const Homography& h, const GeoPoint& g);

struct CameraInfo {
  CameraId id;
  GeoPoint position;
  Homography homography;
  double fps = 10.0;
  /// Kept only so a topology can be written back in the form it was read.
  std::vector<Correspondence> homography_pairs;
};

/// Immutable camera network: positions, projections and the two symmetric
/// pair relations used by the traffic rules. Overlap is a subset of adjacency.
class CameraTopology {
 public:
  CameraTopology() = default;
  CameraTopology(std::vector<CameraInfo> cameras,
                 const std::vector<std::pair<CameraId, CameraId>>& adjacent,
                 const std::vector<std::pair<CameraId, CameraId>>& overlap);

  static CameraTopology from_json(const nlohmann::json& j);
  static CameraTopology load(const std::string& path);
  nlohmann::json to_json() const;

  bool contains(const CameraId& id) const { return cameras_.count(id) > 0; }
  const CameraInfo& camera(const CameraId& id) const;
  const std::map<CameraId, CameraInfo>& cameras() const { return cameras_; }
  std::vector<CameraId> camera_ids() const;

  /// Throws UnknownCamera for ids not in the topology.
  bool are_adjacent(const CameraId& a, const CameraId& b) const;
  bool are_overlapping(const CameraId& a, const CameraId& b) const;

  const std::set<std::pair<CameraId, CameraId>>& adjacency() const { return adjacency_; }
  const std::set<std::pair<CameraId, CameraId>>& overlap() const { return overlap_; }

 private:
  static std::pair<CameraId, CameraId> key(const CameraId& a, const CameraId& b);
  void require(const CameraId& id) const;

  std::map<CameraId, CameraInfo> cameras_;
  std::set<std::pair<CameraId, CameraId>> adjacency_;
  std::set<std::pair<CameraId, CameraId>> overlap_;
};

inline bool are_adjacent(const CameraTopology& t, const CameraId& a, const CameraId& b) {
  return t.are_adjacent(a, b);
}

/// Local east/north offsets in meters around an origin, for small areas.
GeoPoint offset_meters(const GeoPoint& origin, double east_m, double north_m);

}  // namespace citytrack::geo
