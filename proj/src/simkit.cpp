#include "citytrack/simkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "citytrack/errors.hpp"
#include "citytrack/reid.hpp"
#include "citytrack/rng.hpp"

namespace citytrack::simkit {

namespace {

using ingest::VehicleClass;

constexpr double kApproach = 40.0;  // road beyond the outermost views, meters
const geo::GeoPoint kOrigin{42.4900, -90.6700};

enum Tag : std::uint64_t { kTagVehicle = 1, kTagRender = 2, kTagPrototype = 3, kTagDraw = 4, kTagFalse = 5 };

struct Size {
  double length, width;
};

Size vehicle_size(VehicleClass c) {
  switch (c) {
    case VehicleClass::Bus: return {12.0, 2.5};
    case VehicleClass::Truck: return {9.0, 2.5};
    case VehicleClass::Van: return {5.2, 2.0};
    case VehicleClass::Suv: return {4.8, 1.9};
    default: return {4.5, 1.8};
  }
}

VehicleClass draw_class(rng::Stream& rs) {
  const double u = rs.uniform();
  if (u < 0.60) return VehicleClass::Car;
  if (u < 0.75) return VehicleClass::Suv;
  if (u < 0.85) return VehicleClass::Van;
  if (u < 0.95) return VehicleClass::Truck;
  return VehicleClass::Bus;
}

geo::CameraId camera_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%03d", i + 1);
  return buf;
}

geo::GeoPoint to_geo(const LocalPoint& p) { return geo::offset_meters(kOrigin, p.east, p.north); }

/// Ground rectangle to image: the far (north) edge is pulled in to give a
/// mild perspective.
geo::Homography view_homography(const Viewport& v, std::vector<geo::Correspondence>& pairs) {
  const double inset = 0.125 * v.width;
  const double w = v.width;
  const double h = v.height;
  pairs = {
      {{0.0, h}, to_geo({v.east_min, v.north_min})},
      {{w, h}, to_geo({v.east_max, v.north_min})},
      {{w - inset, 0.0}, to_geo({v.east_max, v.north_max})},
      {{inset, 0.0}, to_geo({v.east_min, v.north_max})},
  };
  return geo::estimate_homography(pairs);
}

struct Line {
  LocalPoint from, to;
};

// Box of a vehicle footprint centered at `c` heading along `dir` (unit).
std::optional<ingest::Detection> project_box(const geo::Homography& hm, const Viewport& vp, const LocalPoint& c,
                                             double dx, double dy, Size size, VehicleClass cls) {
  const double hl = size.length / 2.0;
  const double hw = size.width / 2.0;
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (double a : {-hl, hl}) {
    for (double b : {-hw, hw}) {
      const LocalPoint p{c.east + a * dx - b * dy, c.north + a * dy + b * dx};
      const auto px = geo::geo_to_pixel(hm, to_geo(p));
      umin = std::min(umin, px.x);
      umax = std::max(umax, px.x);
      vmin = std::min(vmin, px.y);
      vmax = std::max(vmax, px.y);
    }
  }
  const auto p0 = geo::geo_to_pixel(hm, to_geo(c));
  const auto p1 = geo::geo_to_pixel(hm, to_geo({c.east + 1.0, c.north}));
  const double px_per_m = std::hypot(p1.x - p0.x, p1.y - p0.y);
  const double body = (cls == VehicleClass::Bus || cls == VehicleClass::Truck ? 3.2 : 1.6) * px_per_m;
  const ingest::Detection d{umin, vmin - body, umax, vmax, 1.0, cls};
  if (d.x1 < 0.0 || d.y1 < 0.0 || d.x2 > vp.width || d.y2 > vp.height) return std::nullopt;
  return d;
}

LocalPoint lerp(const Waypoint& a, const Waypoint& b, double t) {
  const double s = (t - a.t) / (b.t - a.t);
  return {a.local.east + s * (b.local.east - a.local.east), a.local.north + s * (b.local.north - a.local.north)};
}

struct Layouts {
  std::vector<Viewport> viewports;
  std::vector<LocalPoint> centers;
  std::vector<std::pair<geo::CameraId, geo::CameraId>> adjacent;
  int rows = 1, cols = 1;
};

Layouts make_layout(const ScenarioOptions& o) {
  Layouts L;
  const double half = o.view_length / 2.0;
  if (o.layout == Layout::Corridor) {
    L.cols = o.n_cams;
    for (int i = 0; i < o.n_cams; ++i) {
      const double e = i * o.camera_spacing;
      L.centers.push_back({e, 0.0});
      L.viewports.push_back({camera_name(i), 1280, 720, e - half, e + half, -12.0, 12.0});
      if (i > 0) L.adjacent.emplace_back(camera_name(i - 1), camera_name(i));
    }
    return L;
  }
  L.rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(o.n_cams)))));
  L.cols = (o.n_cams + L.rows - 1) / L.rows;
  for (int i = 0; i < o.n_cams; ++i) {
    const int r = i / L.cols;
    const int c = i % L.cols;
    const LocalPoint p{c * o.camera_spacing, -r * o.camera_spacing};
    L.centers.push_back(p);
    L.viewports.push_back({camera_name(i), 1280, 720, p.east - half, p.east + half, p.north - half, p.north + half});
    if (c > 0) L.adjacent.emplace_back(camera_name(i - 1), camera_name(i));
    if (r > 0) L.adjacent.emplace_back(camera_name(i - L.cols), camera_name(i));
  }
  return L;
}

// Start and end of one trip, before timing.
Line corridor_trip(const ScenarioOptions& o, rng::Stream& rs) {
  const int n = o.n_cams;
  const double half = o.view_length / 2.0;
  const double start = -half - kApproach;
  const double end = (n - 1) * o.camera_spacing + half + kApproach;
  // Eastbound geometry; westbound trips are mirrored afterwards.
  double from = start;
  int first = 0;
  if (n > 1 && rs.bernoulli(o.ramp_probability)) {
    const int gap = static_cast<int>(rs.below(static_cast<std::uint64_t>(n - 1)));
    from = (gap + 0.5) * o.camera_spacing;
    first = gap + 1;
  }
  double to = end;
  if (first < n - 1 && rs.bernoulli(o.ramp_probability)) {
    const int gap = first + static_cast<int>(rs.below(static_cast<std::uint64_t>(n - 1 - first)));
    to = (gap + 0.5) * o.camera_spacing;
  }
  const bool east = rs.bernoulli(0.5);
  const std::array<double, 3> lanes{2.0, 5.5, 9.0};
  const double lane = lanes[rs.below(lanes.size())];
  if (east) return {{from, -lane}, {to, -lane}};
  const double span = (n - 1) * o.camera_spacing;
  return {{span - from, lane}, {span - to, lane}};
}

Line grid_trip(const ScenarioOptions& o, const Layouts& L, rng::Stream& rs) {
  const double half = o.view_length / 2.0;
  const std::array<double, 2> lanes{2.0, 5.5};
  const double lane = lanes[rs.below(lanes.size())];
  const bool forward = rs.bernoulli(0.5);
  const bool horizontal = L.rows == 1 || rs.bernoulli(0.5);
  Line line;
  if (horizontal) {
    const int r = static_cast<int>(rs.below(static_cast<std::uint64_t>(L.rows)));
    const int in_row = std::min(L.cols, o.n_cams - r * L.cols);
    const double y = -r * o.camera_spacing;
    const double a = -half - kApproach;
    const double b = (in_row - 1) * o.camera_spacing + half + kApproach;
    line = forward ? Line{{a, y - lane}, {b, y - lane}} : Line{{b, y + lane}, {a, y + lane}};
  } else {
    const int c = static_cast<int>(rs.below(static_cast<std::uint64_t>(std::min(L.cols, o.n_cams))));
    int in_col = 0;
    while ((in_col)*L.cols + c < o.n_cams) ++in_col;
    const double x = c * o.camera_spacing;
    const double a = half + kApproach;
    const double b = -(in_col - 1) * o.camera_spacing - half - kApproach;
    line = forward ? Line{{x + lane, a}, {x + lane, b}} : Line{{x - lane, b}, {x - lane, a}};
  }
  return line;
}

std::int64_t frame_count(const ScenarioOptions& o) {
  return static_cast<std::int64_t>(std::floor(o.duration_s * o.fps + 1e-9));
}

// Boxes of one vehicle in every camera: camera index -> (frame, box).
std::vector<std::vector<std::pair<std::int64_t, ingest::Detection>>> vehicle_boxes(
    const ScenarioOptions& o, const Vehicle& v, const std::vector<Viewport>& vps,
    const std::vector<geo::Homography>& hms) {
  std::vector<std::vector<std::pair<std::int64_t, ingest::Detection>>> out(vps.size());
  const auto& a = v.path.front();
  const auto& b = v.path.back();
  const double len = std::hypot(b.local.east - a.local.east, b.local.north - a.local.north);
  const double dx = (b.local.east - a.local.east) / len;
  const double dy = (b.local.north - a.local.north) / len;
  const auto size = vehicle_size(v.cls);
  const std::int64_t f0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(a.t * o.fps - 1e-9)));
  const std::int64_t f1 = std::min(frame_count(o) - 1, static_cast<std::int64_t>(std::floor(b.t * o.fps + 1e-9)));
  for (std::int64_t f = f0; f <= f1; ++f) {
    const double t = static_cast<double>(f) / o.fps;
    const LocalPoint c = lerp(a, b, t);
    for (std::size_t k = 0; k < vps.size(); ++k) {
      const auto& vp = vps[k];
      const double m = size.length;
      if (c.east < vp.east_min - m || c.east > vp.east_max + m || c.north < vp.north_min - m ||
          c.north > vp.north_max + m) {
        continue;
      }
      if (auto d = project_box(hms[k], vp, c, dx, dy, size, v.cls)) out[k].emplace_back(f, *d);
    }
  }
  return out;
}

}  // namespace

Layout parse_layout(const std::string& name) {
  if (name == "corridor" || name == "Corridor") return Layout::Corridor;
  if (name == "grid" || name == "Grid") return Layout::Grid;
  throw InvalidLayout("unknown layout '" + name + "'");
}

const char* to_string(Layout l) { return l == Layout::Corridor ? "corridor" : "grid"; }

nlohmann::json ScenarioOptions::to_json() const {
  return {{"seed", seed},
          {"n_cams", n_cams},
          {"n_vehicles", n_vehicles},
          {"duration_s", duration_s},
          {"fps", fps},
          {"layout", to_string(layout)},
          {"camera_spacing", camera_spacing},
          {"view_length", view_length},
          {"speed_min", speed_min},
          {"speed_max", speed_max},
          {"ramp_probability", ramp_probability}};
}

ScenarioOptions ScenarioOptions::from_json(const nlohmann::json& j) {
  ScenarioOptions o;
  o.seed = j.value("seed", o.seed);
  o.n_cams = j.value("n_cams", o.n_cams);
  o.n_vehicles = j.value("n_vehicles", o.n_vehicles);
  o.duration_s = j.value("duration_s", o.duration_s);
  o.fps = j.value("fps", o.fps);
  o.layout = parse_layout(j.value("layout", std::string("corridor")));
  o.camera_spacing = j.value("camera_spacing", o.camera_spacing);
  o.view_length = j.value("view_length", o.view_length);
  o.speed_min = j.value("speed_min", o.speed_min);
  o.speed_max = j.value("speed_max", o.speed_max);
  o.ramp_probability = j.value("ramp_probability", o.ramp_probability);
  return o;
}

std::size_t GroundTruth::box_count() const {
  std::size_t n = 0;
  for (const auto& [cam, frames] : frames) {
    for (const auto& f : frames) n += f.size();
  }
  return n;
}

ScenarioBundle gen_scenario(const ScenarioOptions& o) {
  if (o.n_cams < 1) throw InvalidLayout("n_cams must be at least 1");
  if (o.n_vehicles < 0) throw InvalidLayout("n_vehicles must be non-negative");
  if (!(o.duration_s > 0.0) || !(o.fps > 0.0)) throw InvalidLayout("duration and fps must be positive");
  if (!(o.speed_min > 0.0) || o.speed_max < o.speed_min) throw InvalidLayout("bad speed range");
  if (o.camera_spacing < o.view_length) throw InvalidLayout("camera views would overlap");

  ScenarioBundle out;
  auto& sc = out.scenario;
  sc.options = o;
  sc.origin = kOrigin;
  const auto L = make_layout(o);
  sc.viewports = L.viewports;

  std::vector<geo::CameraInfo> infos;
  std::vector<geo::Homography> hms;
  for (std::size_t i = 0; i < L.viewports.size(); ++i) {
    geo::CameraInfo info;
    info.id = L.viewports[i].camera;
    info.position = to_geo({L.centers[i].east, L.centers[i].north - 30.0});
    info.homography = view_homography(L.viewports[i], info.homography_pairs);
    info.fps = o.fps;
    hms.push_back(info.homography);
    infos.push_back(std::move(info));
  }
  sc.topology = geo::CameraTopology(infos, L.adjacent, {});

  const std::int64_t n_frames = frame_count(o);
  for (const auto& vp : sc.viewports) {
    out.gt.frames[vp.camera].assign(static_cast<std::size_t>(n_frames), {});
  }

  for (int i = 0; i < o.n_vehicles; ++i) {
    const long id = i + 1;
    for (int attempt = 0;; ++attempt) {
      rng::Stream rs(o.seed, {kTagVehicle, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(attempt)});
      Vehicle v;
      v.global_id = id;
      v.cls = draw_class(rs);
      v.speed = rs.uniform(o.speed_min, o.speed_max);
      const Line line = o.layout == Layout::Corridor ? corridor_trip(o, rs) : grid_trip(o, L, rs);
      const double len = std::hypot(line.to.east - line.from.east, line.to.north - line.from.north);
      // Leave enough time to cross at least one view before the end.
      const double reach = (o.camera_spacing / 2.0 + kApproach + o.view_length + 15.0) / v.speed;
      const double t0 = rs.uniform(0.0, std::max(0.0, o.duration_s - reach));
      v.path = {{t0, line.from, to_geo(line.from)}, {t0 + len / v.speed, line.to, to_geo(line.to)}};
      auto boxes = vehicle_boxes(o, v, sc.viewports, hms);
      const bool seen = std::any_of(boxes.begin(), boxes.end(), [](const auto& b) { return !b.empty(); });
      if (!seen && attempt < 64) continue;
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        auto& frames = out.gt.frames[sc.viewports[k].camera];
        for (const auto& [f, d] : boxes[k]) frames[static_cast<std::size_t>(f)].push_back({id, d});
      }
      sc.vehicles.push_back(std::move(v));
      break;
    }
  }
  return out;
}

EmbeddingOracle::EmbeddingOracle(std::uint64_t seed, const std::vector<long>& ids, int dim)
    : seed_(seed), dim_(dim) {
  if (dim < 1) throw std::invalid_argument("embedding dimension must be positive");
  const bool orthogonal = ids.size() <= static_cast<std::size_t>(dim);
  for (long id : ids) {
    if (index_.count(id)) continue;
    rng::Stream rs(seed, {kTagPrototype, static_cast<std::uint64_t>(id)});
    Embedding v(dim);
    for (;;) {
      for (int k = 0; k < dim; ++k) v(k) = rs.normal();
      if (orthogonal) {
        for (int pass = 0; pass < 2; ++pass) {
          for (const auto& p : prototypes_) v -= p.dot(v) * p;
        }
      }
      if (v.norm() > 1e-6) break;
    }
    index_[id] = prototypes_.size();
    prototypes_.push_back(v.normalized());
  }
}

const Embedding& EmbeddingOracle::prototype(long id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw UnknownIdentity("no prototype for id " + std::to_string(id));
  return prototypes_[it->second];
}

Eigen::MatrixXd EmbeddingOracle::prototype_dots() const {
  const auto n = static_cast<Eigen::Index>(prototypes_.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = prototypes_[static_cast<std::size_t>(i)].dot(prototypes_[static_cast<std::size_t>(j)]);
    }
  }
  return m;
}

Embedding EmbeddingOracle::draw(long id, double sigma, std::uint64_t draw_seed) const {
  const Embedding& p = prototype(id);
  if (sigma == 0.0) return p;
  rng::Stream rs(seed_, {kTagDraw, static_cast<std::uint64_t>(id), draw_seed});
  const double sd = sigma / std::sqrt(static_cast<double>(dim_));
  Embedding v = p;
  for (int k = 0; k < dim_; ++k) v(k) += sd * rs.normal();
  return reid::l2_normalize(v);
}

Embedding EmbeddingOracle::random_unit(std::uint64_t draw_seed) const {
  rng::Stream rs(seed_, {kTagFalse, draw_seed});
  Embedding v(dim_);
  do {
    for (int k = 0; k < dim_; ++k) v(k) = rs.normal();
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Embedding oracle_embedding(const EmbeddingOracle& oracle, long id, double sigma, std::uint64_t draw_seed) {
  return oracle.draw(id, sigma, draw_seed);
}

EmbeddingOracle make_oracle(const Scenario& scenario, int dim) {
  std::vector<long> ids;
  for (const auto& v : scenario.vehicles) ids.push_back(v.global_id);
  return EmbeddingOracle(scenario.options.seed, ids, dim);
}

std::map<geo::CameraId, CameraStream> render_detections(const ScenarioBundle& bundle, const EmbeddingOracle& oracle,
                                                        const NoiseProfile& noise, std::uint64_t seed) {
  std::map<geo::CameraId, CameraStream> out;
  const auto& o = bundle.scenario.options;
  for (const auto& vp : bundle.scenario.viewports) {
    const auto cam_tag = rng::hash_string(vp.camera);
    CameraStream s;
    s.camera = vp.camera;
    s.fps = o.fps;
    const auto& gt_frames = bundle.gt.frames.at(vp.camera);
    for (std::size_t f = 0; f < gt_frames.size(); ++f) {
      rng::Stream rs(seed, {kTagRender, cam_tag, f});
      ingest::FrameRecord fr;
      fr.camera = vp.camera;
      fr.frame_index = static_cast<std::int64_t>(f);
      fr.timestamp = static_cast<double>(f) / o.fps;
      std::vector<long> truth;
      for (const auto& g : gt_frames[f]) {
        const bool missed = rs.bernoulli(noise.miss_rate);
        ingest::Detection d = g.box;
        if (noise.box_jitter_std > 0.0) {
          d.x1 += rs.normal(0.0, noise.box_jitter_std);
          d.y1 += rs.normal(0.0, noise.box_jitter_std);
          d.x2 += rs.normal(0.0, noise.box_jitter_std);
          d.y2 += rs.normal(0.0, noise.box_jitter_std);
          d.x1 = std::clamp(d.x1, 0.0, vp.width - 2.0);
          d.y1 = std::clamp(d.y1, 0.0, vp.height - 2.0);
          d.x2 = std::clamp(d.x2, d.x1 + 1.0, static_cast<double>(vp.width));
          d.y2 = std::clamp(d.y2, d.y1 + 1.0, static_cast<double>(vp.height));
        }
        if (missed) continue;
        const auto draw_seed = rng::derive(seed, {cam_tag, f, static_cast<std::uint64_t>(g.global_id)});
        fr.detections.push_back(d);
        fr.embeddings.push_back(oracle.draw(g.global_id, noise.embedding_noise_std, draw_seed));
        truth.push_back(g.global_id);
      }
      const auto n_fp = rs.poisson(noise.false_positive_rate);
      for (std::uint64_t k = 0; k < n_fp; ++k) {
        const double w = rs.uniform(30.0, 120.0);
        const double h = 0.6 * w;
        const double x = rs.uniform(0.0, vp.width - w);
        const double y = rs.uniform(0.0, vp.height - h);
        const double alpha = rs.uniform(0.2, 0.9);
        const auto cls = static_cast<VehicleClass>(rs.below(6));
        fr.detections.push_back({x, y, x + w, y + h, alpha, cls});
        fr.embeddings.push_back(oracle.random_unit(rng::derive(seed, {cam_tag, f, 0xf00d0000ULL + k})));
        truth.push_back(-1);
      }
      s.frames.push_back(std::move(fr));
      s.truth.push_back(std::move(truth));
    }
    out.emplace(vp.camera, std::move(s));
  }
  return out;
}

nlohmann::json scenario_json(const Scenario& sc) {
  nlohmann::json j;
  j["options"] = sc.options.to_json();
  j["origin"] = {sc.origin.lat, sc.origin.lon};
  j["topology"] = sc.topology.to_json();
  auto vehicles = nlohmann::json::array();
  for (const auto& v : sc.vehicles) {
    auto path = nlohmann::json::array();
    for (const auto& w : v.path) path.push_back({{"t", w.t}, {"lat", w.geo.lat}, {"lon", w.geo.lon}});
    vehicles.push_back(
        {{"id", v.global_id}, {"class", static_cast<int>(v.cls)}, {"speed", v.speed}, {"path", path}});
  }
  j["vehicles"] = vehicles;
  auto vps = nlohmann::json::array();
  for (const auto& vp : sc.viewports) {
    vps.push_back({{"camera", vp.camera},
                   {"width", vp.width},
                   {"height", vp.height},
                   {"south_west", {to_geo({vp.east_min, vp.north_min}).lat, to_geo({vp.east_min, vp.north_min}).lon}},
                   {"north_east", {to_geo({vp.east_max, vp.north_max}).lat, to_geo({vp.east_max, vp.north_max}).lon}}});
  }
  j["viewports"] = vps;
  return j;
}

void write_scenario_files(const std::string& dir, const ScenarioBundle& bundle,
                          const std::map<geo::CameraId, CameraStream>* streams) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "gt");
  {
    std::ofstream out(fs::path(dir) / "scenario.json");
    out << scenario_json(bundle.scenario).dump(1) << "\n";
  }
  {
    std::ofstream out(fs::path(dir) / "topology.json");
    out << bundle.scenario.topology.to_json().dump(1) << "\n";
  }
  char buf[256];
  for (const auto& [cam, frames] : bundle.gt.frames) {
    std::ofstream out(fs::path(dir) / "gt" / (cam + ".csv"));
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (const auto& g : frames[f]) {
        std::snprintf(buf, sizeof buf, "%zu,%ld,%.4f,%.4f,%.4f,%.4f,1,%d,1\n", f + 1, g.global_id, g.box.x1,
                      g.box.y1, g.box.width(), g.box.height(), static_cast<int>(g.box.beta));
        out << buf;
      }
    }
  }
  if (streams == nullptr) return;
  fs::create_directories(fs::path(dir) / "det");
  for (const auto& [cam, s] : *streams) {
    std::vector<ingest::DetectionRow> rows;
    std::vector<Embedding> embs;
    std::uint32_t dim = 0;
    for (const auto& fr : s.frames) {
      for (std::size_t k = 0; k < fr.detections.size(); ++k) {
        rows.push_back({fr.frame_index, -1, fr.detections[k]});
        embs.push_back(fr.embeddings[k]);
        dim = static_cast<std::uint32_t>(fr.embeddings[k].size());
      }
    }
    ingest::write_detection_csv((fs::path(dir) / "det" / (cam + ".csv")).string(), rows);
    write_embeddings((fs::path(dir) / "det" / (cam + ".emb")).string(), dim, embs);
  }
}

}  // namespace citytrack::simkit
