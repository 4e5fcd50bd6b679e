#include "citytrack/geo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "citytrack/errors.hpp"

namespace citytrack::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kHorizonEps = 1e-12;
// Relative singular-value floor for invertibility; an absolute determinant
// test is meaningless for matrices mapping pixels to degrees.
constexpr double kInvertibleRcond = 1e-12;

bool invertible(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m);
  const auto& s = svd.singularValues();
  return s(0) > 0.0 && std::isfinite(s(0)) && s(2) / s(0) > kInvertibleRcond;
}

Eigen::Matrix3d normalized(const Eigen::Matrix3d& m) {
  if (m(2, 2) != 0.0) return m / m(2, 2);
  return m;
}

// Hartley conditioning: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d conditioning(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= static_cast<double>(pts.size());
  if (mean <= 0.0) throw DegenerateConfiguration("all points coincide");
  const double s = std::numbers::sqrt2 / mean;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

}  // namespace

GeoPoint GeoPoint::make(double lat, double lon) {
  if (!std::isfinite(lat) || !std::isfinite(lon)) {
    throw std::invalid_argument("GeoPoint: non-finite coordinate");
  }
  if (lat < -90.0 || lat > 90.0) throw std::invalid_argument("GeoPoint: latitude out of range");
  if (lon < -180.0 || lon > 180.0) throw std::invalid_argument("GeoPoint: longitude out of range");
  return GeoPoint{lat, lon};
}

Homography::Homography() : m_(Eigen::Matrix3d::Identity()), inv_(Eigen::Matrix3d::Identity()) {}

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || !invertible(m)) {
    throw DegenerateConfiguration("homography is singular");
  }
  m_ = normalized(m);
  inv_ = normalized(m_.inverse());
}

Homography Homography::from_row_major(std::span<const double> values) {
  if (values.size() != 9) throw std::invalid_argument("homography needs 9 values");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = values[static_cast<std::size_t>(r * 3 + c)];
  return Homography(m);
}

std::vector<double> Homography::row_major() const {
  std::vector<double> out;
  out.reserve(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m_(r, c));
  return out;
}

double haversine_distance(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

Homography estimate_homography(std::span<const Correspondence> pairs) {
  if (pairs.size() < 4) throw DegenerateConfiguration("need at least 4 correspondences");

  std::vector<Eigen::Vector2d> src, dst;
  src.reserve(pairs.size());
  dst.reserve(pairs.size());
  for (const auto& c : pairs) {
    src.emplace_back(c.pixel.x, c.pixel.y);
    dst.emplace_back(c.geo.lon, c.geo.lat);
  }
  const Eigen::Matrix3d ts = conditioning(src);
  const Eigen::Matrix3d td = conditioning(dst);

  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * src[static_cast<std::size_t>(i)].homogeneous();
    const Eigen::Vector3d q = td * dst[static_cast<std::size_t>(i)].homogeneous();
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s(0) <= 0.0 || s(7) / s(0) < 1e-10) {
    throw DegenerateConfiguration("DLT system is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  const Eigen::Matrix3d m = td.inverse() * hn * ts;
  if (!m.allFinite() || !invertible(m)) throw DegenerateConfiguration("estimated homography is singular");
  return Homography(m);
}

GeoPoint pixel_to_geo(const Homography& h, const PixelPoint& p) {
  const Eigen::Vector3d q = h.matrix() * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(q.z()) < kHorizonEps) throw HorizonPoint("pixel maps to the horizon");
  return GeoPoint{q.y() / q.z(), q.x() / q.z()};
}

PixelPoint geo_to_pixel(const Homography& h, const GeoPoint& g) {
  const Eigen::Vector3d q = h.inverse() * Eigen::Vector3d(g.lon, g.lat, 1.0);
  if (std::abs(q.z()) < kHorizonEps) throw HorizonPoint("geo point maps to the image horizon");
  return PixelPoint{q.x() / q.z(), q.y() / q.z()};
}

GeoPoint offset_meters(const GeoPoint& origin, double east_m, double north_m) {
  const double dlat = north_m / (kEarthRadiusM * kDegToRad);
  const double dlon = east_m / (kEarthRadiusM * kDegToRad * std::cos(origin.lat * kDegToRad));
  return GeoPoint{origin.lat + dlat, origin.lon + dlon};
}

// ---------------------------------------------------------------------------
// CameraTopology

CameraTopology::CameraTopology(std::vector<CameraInfo> cameras,
                               const std::vector<std::pair<CameraId, CameraId>>& adjacent,
                               const std::vector<std::pair<CameraId, CameraId>>& overlap) {
  for (auto& c : cameras) {
    if (c.fps <= 0.0) throw InvalidTopology("camera " + c.id + " has non-positive fps");
    const auto id = c.id;
    if (!cameras_.emplace(id, std::move(c)).second) {
      throw InvalidTopology("duplicate camera id " + id);
    }
  }
  for (const auto& [a, b] : adjacent) {
    if (!contains(a) || !contains(b)) throw InvalidTopology("adjacency references unknown camera");
    if (a == b) throw InvalidTopology("camera cannot be adjacent to itself: " + a);
    adjacency_.insert(key(a, b));
  }
  for (const auto& [a, b] : overlap) {
    if (!contains(a) || !contains(b)) throw InvalidTopology("overlap references unknown camera");
    const auto k = key(a, b);
    if (!adjacency_.count(k)) throw InvalidTopology("overlapping pair must be adjacent: " + a + "," + b);
    overlap_.insert(k);
  }
}

std::pair<CameraId, CameraId> CameraTopology::key(const CameraId& a, const CameraId& b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

void CameraTopology::require(const CameraId& id) const {
  if (!contains(id)) throw UnknownCamera(id);
}

const CameraInfo& CameraTopology::camera(const CameraId& id) const {
  auto it = cameras_.find(id);
  if (it == cameras_.end()) throw UnknownCamera(id);
  return it->second;
}

std::vector<CameraId> CameraTopology::camera_ids() const {
  std::vector<CameraId> ids;
  ids.reserve(cameras_.size());
  for (const auto& [id, _] : cameras_) ids.push_back(id);
  return ids;
}

bool CameraTopology::are_adjacent(const CameraId& a, const CameraId& b) const {
  require(a);
  require(b);
  if (a == b) return false;
  return adjacency_.count(key(a, b)) > 0;
}

bool CameraTopology::are_overlapping(const CameraId& a, const CameraId& b) const {
  require(a);
  require(b);
  if (a == b) return false;
  return overlap_.count(key(a, b)) > 0;
}

CameraTopology CameraTopology::from_json(const nlohmann::json& j) {
  try {
    std::vector<CameraInfo> cams;
    for (const auto& jc : j.at("cameras")) {
      CameraInfo c;
      c.id = jc.at("id").get<std::string>();
      c.position = GeoPoint::make(jc.at("lat").get<double>(), jc.at("lon").get<double>());
      c.fps = jc.value("fps", 10.0);
      if (jc.contains("homography")) {
        const auto v = jc.at("homography").get<std::vector<double>>();
        c.homography = Homography::from_row_major(v);
      } else if (jc.contains("homography_pairs")) {
        for (const auto& jp : jc.at("homography_pairs")) {
          c.homography_pairs.push_back(
              {PixelPoint{jp.at("px").get<double>(), jp.at("py").get<double>()},
               GeoPoint::make(jp.at("lat").get<double>(), jp.at("lon").get<double>())});
        }
        c.homography = estimate_homography(c.homography_pairs);
      } else {
        throw InvalidTopology("camera " + c.id + " has neither homography nor homography_pairs");
      }
      cams.push_back(std::move(c));
    }
    auto pairs = [&](const char* name) {
      std::vector<std::pair<CameraId, CameraId>> out;
      if (!j.contains(name)) return out;
      for (const auto& p : j.at(name)) {
        if (!p.is_array() || p.size() != 2) throw InvalidTopology(std::string(name) + " entries must be pairs");
        out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
      return out;
    };
    return CameraTopology(std::move(cams), pairs("adjacent"), pairs("overlap"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTopology(e.what());
  } catch (const std::invalid_argument& e) {
    throw InvalidTopology(e.what());
  }
}

CameraTopology CameraTopology::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTopology("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTopology(path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json CameraTopology::to_json() const {
  nlohmann::json j;
  j["cameras"] = nlohmann::json::array();
  for (const auto& [id, c] : cameras_) {
    nlohmann::json jc{{"id", id}, {"lat", c.position.lat}, {"lon", c.position.lon}, {"fps", c.fps}};
    if (!c.homography_pairs.empty()) {
      nlohmann::json jp = nlohmann::json::array();
      for (const auto& p : c.homography_pairs) {
        jp.push_back({{"px", p.pixel.x}, {"py", p.pixel.y}, {"lat", p.geo.lat}, {"lon", p.geo.lon}});
      }
      jc["homography_pairs"] = std::move(jp);
    } else {
      jc["homography"] = c.homography.row_major();
    }
    j["cameras"].push_back(std::move(jc));
  }
  j["adjacent"] = nlohmann::json::array();
  for (const auto& [a, b] : adjacency_) j["adjacent"].push_back({a, b});
  j["overlap"] = nlohmann::json::array();
  for (const auto& [a, b] : overlap_) j["overlap"].push_back({a, b});
  return j;
}

}  // namespace citytrack::geo
