#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "citytrack/errors.hpp"
#include "citytrack/geo.hpp"
#include "oracles/oracles.hpp"

using namespace citytrack;
using namespace citytrack::geo;

namespace {

constexpr double kR = 6371000.0;

std::vector<Correspondence> plane_pairs(const Eigen::Matrix3d& h, const std::vector<PixelPoint>& px) {
  std::vector<Correspondence> out;
  for (const auto& p : px) {
    const Eigen::Vector3d w = h * Eigen::Vector3d(p.x, p.y, 1.0);
    out.push_back({p, GeoPoint{w.y() / w.z(), w.x() / w.z()}});
  }
  return out;
}

}  // namespace

TEST(Haversine, SelfDistanceIsZero) {
  EXPECT_EQ(haversine_distance({38.9, -77.0}, {38.9, -77.0}), 0.0);
}

TEST(Haversine, HalfCircumference) {
  const double d = haversine_distance({0.0, 0.0}, GeoPoint::make(0.0, 180.0));
  EXPECT_NEAR(d, std::numbers::pi * kR, 1e-6);
  EXPECT_NEAR(d, 20015086.8, 0.1);
}

TEST(Haversine, OneDegreeOfMeridian) {
  const double d = haversine_distance({38.0, -77.0}, {39.0, -77.0});
  EXPECT_NEAR(d, oracle::cosine_law_m(38.0, -77.0, 39.0, -77.0), 1e-3);
  EXPECT_NEAR(d, 111194.9, 0.1);
}

TEST(Haversine, SymmetryAndTriangleOnRandomPoints) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> lat(-80.0, 80.0), lon(-179.0, 179.0);
  for (int i = 0; i < 500; ++i) {
    const GeoPoint a{lat(gen), lon(gen)}, b{lat(gen), lon(gen)}, c{lat(gen), lon(gen)};
    EXPECT_EQ(haversine_distance(a, b), haversine_distance(b, a));
    EXPECT_LE(haversine_distance(a, c), haversine_distance(a, b) + haversine_distance(b, c) + 1e-6);
    EXPECT_NEAR(haversine_distance(a, b), oracle::cosine_law_m(a.lat, a.lon, b.lat, b.lon), 1e-2);
  }
}

TEST(GeoPoint, RangeChecks) {
  EXPECT_THROW(GeoPoint::make(91.0, 0.0), std::invalid_argument);
  EXPECT_THROW(GeoPoint::make(0.0, -181.0), std::invalid_argument);
  EXPECT_THROW(GeoPoint::make(NAN, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(GeoPoint::make(-90.0, -180.0));
}

TEST(Homography, IdentityFromPlanePairs) {
  const std::vector<Correspondence> pairs{
      {{0, 0}, {0, 0}}, {{1, 0}, {0, 1}}, {{1, 1}, {1, 1}}, {{0, 1}, {1, 0}}};
  const auto h = estimate_homography(pairs);
  EXPECT_TRUE(h.matrix().isApprox(Eigen::Matrix3d::Identity(), 1e-9)) << h.matrix();
}

TEST(Homography, TranslationIsAffine) {
  const std::vector<PixelPoint> px{{0, 0}, {3, 0}, {3, 2}, {0, 5}};
  std::vector<Correspondence> pairs;
  for (const auto& p : px) pairs.push_back({p, GeoPoint{p.y + 2.0, p.x + 1.0}});
  const auto h = estimate_homography(pairs);
  Eigen::Matrix3d expected;
  expected << 1, 0, 1, 0, 1, 2, 0, 0, 1;
  EXPECT_TRUE(h.matrix().isApprox(expected, 1e-9)) << h.matrix();

  const auto back = geo_to_pixel(h, GeoPoint{7.0, 4.0});
  EXPECT_NEAR(back.x, 3.0, 1e-9);
  EXPECT_NEAR(back.y, 5.0, 1e-9);
}

TEST(Homography, CollinearPixelsAreDegenerate) {
  const std::vector<Correspondence> pairs{
      {{0, 0}, {0, 0}}, {{1, 1}, {1, 1}}, {{2, 2}, {2, 2}}, {{3, 3}, {3, 3}}};
  EXPECT_THROW(estimate_homography(pairs), DegenerateConfiguration);
}

TEST(Homography, TooFewPairs) {
  const std::vector<Correspondence> pairs{{{0, 0}, {0, 0}}, {{1, 0}, {0, 1}}, {{1, 1}, {1, 1}}};
  EXPECT_THROW(estimate_homography(pairs), DegenerateConfiguration);
}

TEST(Homography, IdentityProjection) {
  const auto h = Homography::identity();
  const auto g = pixel_to_geo(h, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(g.lon, 3.0);
  EXPECT_DOUBLE_EQ(g.lat, 4.0);
  const auto p = geo_to_pixel(h, GeoPoint{4.0, 3.0});
  EXPECT_DOUBLE_EQ(p.x, 3.0);
  EXPECT_DOUBLE_EQ(p.y, 4.0);
}

TEST(Homography, HorizonPoint) {
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, 0, 1, 0, 1, 0;
  const Homography h(m);
  EXPECT_THROW(pixel_to_geo(h, {1.0, 0.0}), HorizonPoint);
  // The inverse maps plane points with zero third coordinate to infinity too.
  EXPECT_THROW(geo_to_pixel(h, GeoPoint{0.0, 1.0}), HorizonPoint);
}

TEST(Homography, SingularMatrixRejected) {
  Eigen::Matrix3d m;
  m << 1, 2, 3, 2, 4, 6, 0, 0, 1;
  EXPECT_THROW(Homography{m}, DegenerateConfiguration);
}

TEST(Homography, RandomRoundTripAndReprojection) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1280.0), v(0.0, 720.0), jitter(-1e-3, 1e-3);
  for (int trial = 0; trial < 200; ++trial) {
    // A pixel -> degree map of realistic scale with mild perspective.
    Eigen::Matrix3d m;
    m << 1e-5 + jitter(gen) * 1e-3, 2e-6, -90.67 + jitter(gen), 1e-7, -8e-6 + jitter(gen) * 1e-3, 42.49 + jitter(gen),
        1e-5 * jitter(gen), 2e-4 + 1e-4 * jitter(gen), 1.0;
    const std::vector<PixelPoint> px{{0, 720}, {1280, 720}, {1120, 0}, {160, 0}, {640, 360}, {100, 500}};
    const auto pairs = plane_pairs(m, px);
    const auto h = estimate_homography(pairs);
    for (const auto& c : pairs) {
      const auto g = pixel_to_geo(h, c.pixel);
      EXPECT_NEAR(g.lat, c.geo.lat, 1e-6);
      EXPECT_NEAR(g.lon, c.geo.lon, 1e-6);
    }
    for (int k = 0; k < 20; ++k) {
      const PixelPoint p{u(gen), v(gen)};
      const auto back = geo_to_pixel(h, pixel_to_geo(h, p));
      EXPECT_LE(std::hypot(back.x - p.x, back.y - p.y) / std::hypot(p.x, p.y), 1e-6);
    }
  }
}

TEST(Topology, AdjacencyQueries) {
  std::vector<CameraInfo> cams{{"A", {0, 0}, Homography::identity(), 10.0, {}},
                               {"B", {0, 0.001}, Homography::identity(), 10.0, {}},
                               {"C", {0, 0.002}, Homography::identity(), 10.0, {}}};
  const CameraTopology t(cams, {{"A", "B"}, {"C", "B"}}, {{"B", "A"}});
  EXPECT_TRUE(are_adjacent(t, "A", "B"));
  EXPECT_TRUE(are_adjacent(t, "B", "A"));
  EXPECT_TRUE(are_adjacent(t, "B", "C"));
  EXPECT_FALSE(are_adjacent(t, "A", "C"));
  EXPECT_FALSE(are_adjacent(t, "A", "A"));
  EXPECT_TRUE(t.are_overlapping("A", "B"));
  EXPECT_FALSE(t.are_overlapping("B", "C"));
  EXPECT_THROW(are_adjacent(t, "A", "Z"), UnknownCamera);
}

TEST(Topology, InvalidConfigurations) {
  std::vector<CameraInfo> cams{{"A", {0, 0}, Homography::identity(), 10.0, {}},
                               {"B", {0, 0.001}, Homography::identity(), 10.0, {}}};
  EXPECT_THROW(CameraTopology(cams, {{"A", "A"}}, {}), InvalidTopology);
  EXPECT_THROW(CameraTopology(cams, {}, {{"A", "B"}}), InvalidTopology);
  EXPECT_THROW(CameraTopology(cams, {{"A", "Q"}}, {}), std::exception);
  auto dup = cams;
  dup.push_back(cams[0]);
  EXPECT_THROW(CameraTopology(dup, {}, {}), std::exception);
}

TEST(Topology, JsonRoundTripKeepsSymmetry) {
  const nlohmann::json j = nlohmann::json::parse(R"({
    "cameras": [
      {"id": "c1", "lat": 42.0, "lon": -90.0, "fps": 10,
       "homography": [1e-5, 0, -90.0, 0, -1e-5, 42.0, 0, 0, 1]},
      {"id": "c2", "lat": 42.0, "lon": -89.99,
       "homography_pairs": [
         {"px": 0, "py": 0, "lat": 42.0, "lon": -90.0},
         {"px": 100, "py": 0, "lat": 42.0, "lon": -89.999},
         {"px": 100, "py": 100, "lat": 41.999, "lon": -89.999},
         {"px": 0, "py": 100, "lat": 41.999, "lon": -90.0}]}
    ],
    "adjacent": [["c2", "c1"]],
    "overlap": []
  })");
  const auto t = CameraTopology::from_json(j);
  EXPECT_TRUE(t.are_adjacent("c1", "c2"));
  EXPECT_TRUE(t.are_adjacent("c2", "c1"));
  const auto t2 = CameraTopology::from_json(t.to_json());
  EXPECT_TRUE(t2.are_adjacent("c2", "c1"));
  EXPECT_EQ(t2.camera_ids(), (std::vector<CameraId>{"c1", "c2"}));
  const auto g = pixel_to_geo(t2.camera("c2").homography, {50, 50});
  EXPECT_NEAR(g.lat, 41.9995, 1e-9);
  EXPECT_NEAR(g.lon, -89.9995, 1e-9);
}
