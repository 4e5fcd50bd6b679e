#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "citytrack/errors.hpp"
#include "citytrack/rng.hpp"
#include "citytrack/simkit.hpp"

using namespace citytrack;
using namespace citytrack::simkit;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ScenarioOptions small(std::uint64_t seed) {
  ScenarioOptions o;
  o.seed = seed;
  o.n_cams = 3;
  o.n_vehicles = 8;
  o.duration_s = 40.0;
  return o;
}

}  // namespace

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  rng::Stream a(7, {1, 1}), b(7, {1, 1}), c(7, {1, 2});
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
  }
  rng::Stream u(3);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
    sum += x;
  }
  EXPECT_NEAR(sum / 100000.0, 0.5, 0.01);
}

TEST(Layout, Parse) {
  EXPECT_EQ(parse_layout("corridor"), Layout::Corridor);
  EXPECT_EQ(parse_layout("grid"), Layout::Grid);
  EXPECT_THROW(parse_layout("ring"), InvalidLayout);
  ScenarioOptions o;
  o.n_cams = 0;
  EXPECT_THROW(gen_scenario(o), InvalidLayout);
}

TEST(Scenario, NoVehiclesEmptyTruth) {
  ScenarioOptions o = small(1);
  o.n_vehicles = 0;
  const auto b = gen_scenario(o);
  EXPECT_EQ(b.gt.box_count(), 0u);
  EXPECT_TRUE(b.scenario.vehicles.empty());
}

TEST(Scenario, SameSeedSameFiles) {
  const auto base = fs::temp_directory_path() / "citytrack_simkit";
  fs::remove_all(base);
  for (const char* run : {"a", "b"}) {
    const auto bundle = gen_scenario(small(5));
    const auto streams = render_detections(bundle, make_oracle(bundle.scenario, 16), {1.0, 0.1, 0.5, 0.2}, 9);
    write_scenario_files((base / run).string(), bundle, &streams);
  }
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), base / "a");
    EXPECT_EQ(slurp(e.path()), slurp(base / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_GE(files, 2u + 3u * 3u);
}

TEST(Scenario, CorridorChainAndVisibility) {
  const auto b = gen_scenario(small(2));
  const auto& topo = b.scenario.topology;
  const auto ids = topo.camera_ids();
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_TRUE(topo.are_adjacent(ids[0], ids[1]));
  EXPECT_TRUE(topo.are_adjacent(ids[1], ids[2]));
  EXPECT_FALSE(topo.are_adjacent(ids[0], ids[2]));

  std::set<long> seen;
  for (const auto& [cam, frames] : b.gt.frames) {
    for (const auto& f : frames) {
      for (const auto& g : f) {
        seen.insert(g.global_id);
        EXPECT_GE(g.box.x1, 0.0);
        EXPECT_LE(g.box.x2, 1280.0);
        EXPECT_GE(g.box.y1, 0.0);
        EXPECT_LE(g.box.y2, 720.0);
      }
    }
  }
  for (const auto& v : b.scenario.vehicles) EXPECT_TRUE(seen.count(v.global_id)) << v.global_id;
}

TEST(Scenario, TwoCameraKinematics) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ScenarioOptions o;
    o.seed = seed;
    o.n_cams = 2;
    o.n_vehicles = 1;
    o.duration_s = 60.0;
    o.ramp_probability = 0.0;
    const auto b = gen_scenario(o);
    ASSERT_EQ(b.scenario.vehicles.size(), 1u);
    const double speed = b.scenario.vehicles[0].speed;
    std::vector<double> first;
    for (const auto& [cam, frames] : b.gt.frames) {
      for (std::size_t f = 0; f < frames.size(); ++f) {
        if (!frames[f].empty()) {
          first.push_back(static_cast<double>(f) / o.fps);
          break;
        }
      }
    }
    if (first.size() < 2) continue;  // the vehicle may not reach the second view in time
    // Both views see the same stretch of road relative to their camera, so the
    // entry times differ by spacing / speed.
    EXPECT_NEAR(std::abs(first[1] - first[0]), o.camera_spacing / speed, 2.0 / o.fps) << seed;
  }
}

TEST(Render, ZeroNoiseEqualsTruth) {
  const auto b = gen_scenario(small(3));
  const auto oracle = make_oracle(b.scenario, 16);
  const auto streams = render_detections(b, oracle, {}, 1);
  for (const auto& [cam, s] : streams) {
    const auto& gt = b.gt.frames.at(cam);
    ASSERT_EQ(s.frames.size(), gt.size());
    for (std::size_t f = 0; f < gt.size(); ++f) {
      ASSERT_EQ(s.frames[f].detections.size(), gt[f].size());
      for (std::size_t k = 0; k < gt[f].size(); ++k) {
        const auto& d = s.frames[f].detections[k];
        EXPECT_EQ(d.x1, gt[f][k].box.x1);
        EXPECT_EQ(d.y2, gt[f][k].box.y2);
        EXPECT_EQ(d.alpha, 1.0);
        EXPECT_EQ(s.truth[f][k], gt[f][k].global_id);
        EXPECT_EQ(s.frames[f].embeddings[k], oracle.prototype(gt[f][k].global_id));
      }
    }
  }
}

TEST(Render, FullMissEmpties) {
  const auto b = gen_scenario(small(3));
  const auto streams = render_detections(b, make_oracle(b.scenario, 8), {0.0, 1.0, 0.0, 0.0}, 1);
  for (const auto& [cam, s] : streams)
    for (const auto& f : s.frames) EXPECT_TRUE(f.detections.empty());
}

TEST(Render, MissRateConcentrates) {
  ScenarioOptions o;
  o.seed = 4;
  o.n_cams = 6;
  o.n_vehicles = 60;
  o.duration_s = 120.0;
  const auto b = gen_scenario(o);
  ASSERT_GE(b.gt.box_count(), 10000u);
  const auto streams = render_detections(b, make_oracle(b.scenario, 8), {0.0, 0.5, 0.0, 0.0}, 77);
  std::size_t kept = 0;
  for (const auto& [cam, s] : streams)
    for (const auto& f : s.frames) kept += f.detections.size();
  const double dropped = 1.0 - static_cast<double>(kept) / static_cast<double>(b.gt.box_count());
  EXPECT_NEAR(dropped, 0.5, 0.02);
}

TEST(Oracle, Draws) {
  const EmbeddingOracle oracle(11, {1, 2, 3}, 32);
  EXPECT_EQ(oracle.draw(2, 0.0, 5), oracle.prototype(2));
  EXPECT_THROW(oracle.prototype(9), UnknownIdentity);
  EXPECT_THROW(oracle_embedding(oracle, 9, 0.1, 0), UnknownIdentity);
  double dot = 0.0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const auto e = oracle_embedding(oracle, 1, 0.1, k);
    EXPECT_NEAR(e.norm(), 1.0, 1e-12);
    dot += e.dot(oracle.prototype(1));
  }
  EXPECT_GE(dot / 1000.0, 0.99);
  for (std::uint64_t k = 0; k < 100; ++k) EXPECT_NEAR(oracle_embedding(oracle, 3, 5.0, k).norm(), 1.0, 1e-12);
}

TEST(Oracle, OrthogonalPrototypesGiveKnownAppearanceTerm) {
  const EmbeddingOracle oracle(3, {1, 2, 3, 4, 5}, 16);
  const auto dots = oracle.prototype_dots();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(dots(i, j), i == j ? 1.0 : 0.0, 1e-12);
  const double term = 1.0 - (oracle.prototype(1) - oracle.prototype(2)).norm() / 2.0;
  EXPECT_NEAR(term, 0.2929, 1e-4);
}

TEST(Scenario, OptionsJsonRoundTrip) {
  ScenarioOptions o = small(9);
  o.layout = Layout::Grid;
  o.ramp_probability = 0.1;
  const auto back = ScenarioOptions::from_json(o.to_json());
  EXPECT_EQ(back.to_json(), o.to_json());
}
