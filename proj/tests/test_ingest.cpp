#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "citytrack/errors.hpp"
#include "citytrack/ingest.hpp"

using namespace citytrack;
using namespace citytrack::ingest;

namespace {

Detection box(double x1, double y1, double x2, double y2, double a = 1.0) { return Detection{x1, y1, x2, y2, a}; }

std::vector<Detection> random_boxes(std::mt19937_64& gen, int n) {
  std::uniform_real_distribution<double> pos(0.0, 100.0), size(5.0, 40.0), conf(0.0, 1.0);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double x = pos(gen), y = pos(gen);
    out.push_back(box(x, y, x + size(gen), y + size(gen), std::round(conf(gen) * 10.0) / 10.0));
  }
  return out;
}

}  // namespace

TEST(Detection, MakeValidates) {
  EXPECT_THROW(Detection::make(5, 0, 1, 1, 0.5), std::invalid_argument);
  EXPECT_THROW(Detection::make(0, 0, 1, 1, 1.5), std::invalid_argument);
  EXPECT_NO_THROW(Detection::make(0, 0, 1, 1, 0.5));
}

TEST(FilterConfidence, Examples) {
  const std::vector<Detection> d{box(0, 0, 1, 1, 0.9), box(0, 0, 1, 1, 0.2)};
  const auto f = filter_confidence(d, 0.35);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].alpha, 0.9);
  EXPECT_EQ(filter_confidence(d, 0.0), d);
  EXPECT_TRUE(filter_confidence({}, 0.35).empty());
}

TEST(FilterConfidence, Idempotent) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 100; ++i) {
    const auto d = random_boxes(gen, 12);
    const auto once = filter_confidence(d, 0.35);
    EXPECT_EQ(filter_confidence(once, 0.35), once);
  }
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(iou(box(0, 0, 10, 10), box(0, 0, 10, 10)), 1.0);
  EXPECT_DOUBLE_EQ(iou(box(0, 0, 10, 10), box(20, 20, 30, 30)), 0.0);
  EXPECT_DOUBLE_EQ(iou(box(0, 0, 10, 10), box(0, 0, 10, 5)), 0.5);
}

TEST(Iou, Symmetric) {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 200; ++i) {
    const auto d = random_boxes(gen, 2);
    EXPECT_EQ(iou(d[0], d[1]), iou(d[1], d[0]));
    EXPECT_DOUBLE_EQ(iou(d[0], d[0]), 1.0);
  }
}

TEST(Nms, Examples) {
  // 10x10 vs 10x9 sharing an edge: iou 0.9.
  const auto kept = nms({box(0, 0, 10, 10, 0.9), box(0, 0, 10, 9, 0.8)}, 0.85);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].alpha, 0.9);
  EXPECT_EQ(nms({box(0, 0, 10, 10, 0.9), box(0, 0, 10, 5, 0.8)}, 0.85).size(), 2u);
  EXPECT_EQ(nms({box(0, 0, 10, 10, 0.9)}, 0.85).size(), 1u);
}

TEST(Nms, TieBreakIsLexicographic) {
  const auto kept = nms({box(1, 0, 11, 10, 0.5), box(0, 0, 10, 10, 0.5)}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].x1, 0.0);
}

TEST(Nms, Properties) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 300; ++trial) {
    const auto d = random_boxes(gen, 15);
    for (double t : {0.3, 0.5, 0.85}) {
      const auto kept = nms(d, t);
      for (const auto& k : kept) EXPECT_NE(std::find(d.begin(), d.end(), k), d.end());
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i > 0) EXPECT_GE(kept[i - 1].alpha, kept[i].alpha);
        for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LE(iou(kept[i], kept[j]), t);
      }
    }
  }
}

TEST(Postprocess, KeepsEmbeddingsAligned) {
  FrameRecord f;
  f.camera = "c1";
  f.detections = {box(0, 0, 10, 10, 0.8), box(0, 0, 10, 9.9, 0.9), box(50, 50, 60, 60, 0.2), box(30, 30, 40, 40, 0.5)};
  for (int i = 0; i < 4; ++i) f.embeddings.push_back(Embedding::Constant(2, i));
  const auto out = postprocess(f, 0.35, 0.85);
  ASSERT_EQ(out.detections.size(), 2u);
  EXPECT_EQ(out.detections[0].alpha, 0.9);
  EXPECT_EQ(out.embeddings[0](0), 1.0);
  EXPECT_EQ(out.detections[1].alpha, 0.5);
  EXPECT_EQ(out.embeddings[1](0), 3.0);
}

TEST(BatchFrames, Examples) {
  FrameRecord a, b;
  a.camera = "A";
  b.camera = "B";
  const auto batch = batch_frames({b, a}, 7);
  ASSERT_EQ(batch.frames.size(), 2u);
  EXPECT_EQ(batch.frames[0].camera, "A");
  EXPECT_EQ(batch.frames[1].camera, "B");
  EXPECT_EQ(batch.tick, 7);
  EXPECT_TRUE(batch_frames({}, 0).frames.empty());
  EXPECT_THROW(batch_frames({a, a}, 0), DuplicateCamera);
}

TEST(DetectionCsv, RoundTripAndFrames) {
  const auto path = (std::filesystem::temp_directory_path() / "citytrack_det.csv").string();
  std::vector<DetectionRow> rows{{0, -1, box(1, 2, 11, 22, 0.5)}, {2, 4, Detection{5, 5, 8, 9, 1.0, VehicleClass::Bus}}};
  write_detection_csv(path, rows);
  const auto back = read_detection_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].frame_index, 0);
  EXPECT_EQ(back[1].frame_index, 2);
  EXPECT_EQ(back[1].id, 4);
  EXPECT_EQ(back[1].det.beta, VehicleClass::Bus);
  EXPECT_NEAR(back[0].det.x2, 11.0, 1e-9);

  const auto frames = frames_from_rows("c9", 10.0, 4, back, {});
  ASSERT_EQ(frames.size(), 4u);
  EXPECT_EQ(frames[0].detections.size(), 1u);
  EXPECT_TRUE(frames[1].detections.empty());
  EXPECT_DOUBLE_EQ(frames[2].timestamp, 0.2);
  EXPECT_THROW(frames_from_rows("c9", 10.0, 4, back, {Embedding::Zero(2)}), DimensionMismatch);
}

TEST(DetectionCsv, RejectsMalformedRows) {
  const auto path = (std::filesystem::temp_directory_path() / "citytrack_bad.csv").string();
  {
    std::ofstream out(path);
    out << "1,-1,0,0,10,10,0.5,0\n0,-1,0,0,10,10,0.5,0\n";
  }
  EXPECT_THROW(read_detection_csv(path), ParseError);
  {
    std::ofstream out(path);
    out << "1,-1,zero,0,10,10,0.5\n";
  }
  EXPECT_THROW(read_detection_csv(path), ParseError);
}
