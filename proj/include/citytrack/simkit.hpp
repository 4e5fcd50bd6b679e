#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "citytrack/embedding.hpp"
#include "citytrack/geo.hpp"
#include "citytrack/ingest.hpp"

namespace citytrack::simkit {

enum class Layout { Corridor, Grid };

/// "corridor" or "grid"; throws InvalidLayout.
Layout parse_layout(const std::string& name);
const char* to_string(Layout l);

struct ScenarioOptions {
  std::uint64_t seed = 1;
  int n_cams = 6;
  int n_vehicles = 50;
  double duration_s = 120.0;
  double fps = 10.0;
  Layout layout = Layout::Corridor;
  /// Distance between neighbouring cameras along a road, meters.
  double camera_spacing = 300.0;
  /// Along-road extent of each camera view, meters.
  double view_length = 120.0;
  double speed_min = 8.0;
  double speed_max = 18.0;
  /// Corridor only: chance that a vehicle enters (and, separately, leaves)
  /// through a ramp between cameras instead of a corridor end.
  double ramp_probability = 0.3;

  nlohmann::json to_json() const;
  static ScenarioOptions from_json(const nlohmann::json& j);
};

/// Local planar coordinates in meters around the scenario origin.
struct LocalPoint {
  double east = 0.0;
  double north = 0.0;
};

struct Waypoint {
  double t = 0.0;
  LocalPoint local;
  geo::GeoPoint geo;
};

struct Vehicle {
  long global_id = 0;
  ingest::VehicleClass cls = ingest::VehicleClass::Car;
  double speed = 0.0;
  /// Piecewise linear, strictly increasing time.
  std::vector<Waypoint> path;
};

struct Viewport {
  geo::CameraId camera;
  int width = 1280;
  int height = 720;
  /// Ground rectangle seen by the camera, in local meters.
  double east_min = 0.0, east_max = 0.0, north_min = 0.0, north_max = 0.0;
};

struct Scenario {
  ScenarioOptions options;
  geo::GeoPoint origin;
  geo::CameraTopology topology;
  std::vector<Vehicle> vehicles;
  std::vector<Viewport> viewports;
};

struct GtBox {
  long global_id = 0;
  ingest::Detection box;
};

/// camera -> frame index -> boxes sorted by id.
struct GroundTruth {
  std::map<geo::CameraId, std::vector<std::vector<GtBox>>> frames;
  std::size_t box_count() const;
};

struct ScenarioBundle {
  Scenario scenario;
  GroundTruth gt;
};

/// Throws InvalidLayout for n_cams < 1 or a non-positive duration/fps.
ScenarioBundle gen_scenario(const ScenarioOptions& options);

struct NoiseProfile {
  double box_jitter_std = 0.0;
  double miss_rate = 0.0;
  /// Expected false positives per frame.
  double false_positive_rate = 0.0;
  double embedding_noise_std = 0.0;
};

/// Identity prototypes plus noisy draws around them. The noise sigma is the
/// expected norm of the perturbation: each component gets sigma / sqrt(D).
class EmbeddingOracle {
 public:
  EmbeddingOracle(std::uint64_t seed, const std::vector<long>& ids, int dim);

  int dim() const { return dim_; }
  bool has(long id) const { return index_.count(id) > 0; }
  /// Throws UnknownIdentity.
  const Embedding& prototype(long id) const;
  Eigen::MatrixXd prototype_dots() const;
  /// normalize(prototype + noise); sigma = 0 gives the prototype exactly.
  Embedding draw(long id, double sigma, std::uint64_t draw_seed) const;
  Embedding random_unit(std::uint64_t draw_seed) const;

 private:
  std::uint64_t seed_;
  int dim_;
  std::map<long, std::size_t> index_;
  std::vector<Embedding> prototypes_;
};

Embedding oracle_embedding(const EmbeddingOracle& oracle, long id, double sigma, std::uint64_t draw_seed);

/// One camera's rendered stream; `truth` holds the source id per detection
/// (-1 for false positives).
struct CameraStream {
  geo::CameraId camera;
  double fps = 10.0;
  std::vector<ingest::FrameRecord> frames;
  std::vector<std::vector<long>> truth;
};

std::map<geo::CameraId, CameraStream> render_detections(const ScenarioBundle& bundle, const EmbeddingOracle& oracle,
                                                        const NoiseProfile& noise, std::uint64_t seed);

EmbeddingOracle make_oracle(const Scenario& scenario, int dim);

/// Writes scenario.json, topology.json, gt/<cam>.csv and, when streams are
/// given, det/<cam>.csv plus det/<cam>.emb into `dir`.
void write_scenario_files(const std::string& dir, const ScenarioBundle& bundle,
                          const std::map<geo::CameraId, CameraStream>* streams = nullptr);

nlohmann::json scenario_json(const Scenario& scenario);

}  // namespace citytrack::simkit
