#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "citytrack/errors.hpp"
#include "citytrack/reid.hpp"

using namespace citytrack;
using namespace citytrack::reid;

namespace {

Embedding vec(std::initializer_list<double> v) {
  Embedding e(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) e(i++) = x;
  return e;
}

Embedding unit(std::initializer_list<double> v) { return vec(v).normalized(); }

Embedding random_unit(std::mt19937_64& gen, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Embedding e(dim);
  for (int i = 0; i < dim; ++i) e(i) = n(gen);
  return e.normalized();
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_TRUE(l2_normalize(vec({3, 4})).isApprox(vec({0.6, 0.8}), 1e-15));
  const Embedding u = unit({1, 2, 3});
  EXPECT_TRUE(l2_normalize(u).isApprox(u, 1e-15));
  EXPECT_THROW(l2_normalize(vec({0, 0})), ZeroVector);
}

TEST(TemporalAggregate, Examples) {
  Eigen::MatrixXd rows(2, 2);
  rows << 1, 0, 0, 1;
  const auto w = weighted_aggregate(rows, vec({std::log(3.0), 0.0}));
  EXPECT_NEAR(w(0), 0.75 / std::sqrt(0.625), 1e-12);
  EXPECT_NEAR(w(1), 0.25 / std::sqrt(0.625), 1e-12);
  EXPECT_NEAR(w(0), 0.9487, 1e-4);
  EXPECT_NEAR(w(1), 0.3162, 1e-4);

  const auto m = temporal_aggregate(rows, TemporalScorer::uniform());
  EXPECT_NEAR(m(0), 1.0 / std::sqrt(2.0), 1e-12);

  Eigen::MatrixXd one(1, 3);
  one << 3, 0, 4;
  EXPECT_TRUE(temporal_aggregate(one, {}).isApprox(vec({0.6, 0, 0.8}), 1e-15));
}

TEST(TemporalAggregate, PermutationAndShiftInvariance) {
  std::mt19937_64 gen(31);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int L = 1 + static_cast<int>(gen() % 8), D = 2 + static_cast<int>(gen() % 6);
    Eigen::MatrixXd seq(L, D);
    Eigen::VectorXd s(L);
    for (int i = 0; i < L; ++i) {
      seq.row(i) = random_unit(gen, D).transpose();
      s(i) = n(gen);
    }
    const auto base = weighted_aggregate(seq, s);
    EXPECT_NEAR(base.norm(), 1.0, 1e-12);

    std::vector<int> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Eigen::MatrixXd pseq(L, D);
    Eigen::VectorXd ps(L);
    for (int i = 0; i < L; ++i) {
      pseq.row(i) = seq.row(perm[i]);
      ps(i) = s(perm[i]);
    }
    EXPECT_LE((weighted_aggregate(pseq, ps) - base).norm(), 1e-9);
    const double c = 5.0 * n(gen);
    EXPECT_LE((weighted_aggregate(seq, s.array() + c) - base).norm(), 1e-9);
  }
}

TEST(TemporalScorer, LearnedShapesAndRoundTrip) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0.0, 0.1);
  const int D = 6;
  TemporalScorer::ConvWeights w;
  for (auto& k : w.conv1) k = Eigen::MatrixXd::NullaryExpr(TemporalScorer::kHidden, D, [&] { return n(gen); });
  w.bias1 = Eigen::VectorXd::NullaryExpr(TemporalScorer::kHidden, [&] { return n(gen); });
  w.conv2 = decltype(w.conv2)::NullaryExpr([&] { return n(gen); });
  w.bias2 = 0.25;
  const auto scorer = TemporalScorer::learned(w);

  Eigen::MatrixXd seq(5, D);
  for (int i = 0; i < 5; ++i) seq.row(i) = random_unit(gen, D).transpose();
  const auto s = scorer.scores(seq);
  ASSERT_EQ(s.size(), 5);

  // Direct evaluation of the two same-padded convolutions.
  Eigen::MatrixXd hidden = Eigen::MatrixXd::Zero(5, TemporalScorer::kHidden);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd acc = w.bias1;
    for (int k = 0; k < 3; ++k) {
      const int src = t + k - 1;
      if (src >= 0 && src < 5) acc += w.conv1[k] * seq.row(src).transpose();
    }
    hidden.row(t) = acc.cwiseMax(0.0).transpose();
  }
  for (int t = 0; t < 5; ++t) {
    double acc = w.bias2;
    for (int k = 0; k < 3; ++k) {
      const int src = t + k - 1;
      if (src >= 0 && src < 5) acc += w.conv2.row(k).dot(hidden.row(src));
    }
    EXPECT_NEAR(s(t), acc, 1e-12);
  }

  const auto path = (std::filesystem::temp_directory_path() / "citytrack_scorer.emb").string();
  scorer.save(path);
  const auto back = TemporalScorer::load(path);
  EXPECT_EQ(back.kind(), TemporalScorer::Kind::LearnedConv);
  // float32 on disk
  EXPECT_LE((back.scores(seq) - s).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(AverageEmbeddings, Examples) {
  const auto a = unit({1, 2, 2});
  EXPECT_TRUE(average_embeddings(a, a).isApprox(a, 1e-15));
  const auto m = average_embeddings(vec({1, 0}), vec({0, 1}));
  EXPECT_NEAR(m(0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(m(1), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(average_embeddings(vec({1, 0}), vec({-1, 0})), ZeroVector);
}

TEST(Mitigation, Examples) {
  const std::vector<std::pair<geo::CameraId, Embedding>> t{{"a", vec({1, 0})}, {"a", vec({0, 1})}, {"b", unit({1, 1})}};
  const auto same = mitigate_camera_bias(t, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(same[i], t[i].second);

  const auto half = mitigate_camera_bias(t, 0.5);
  EXPECT_NEAR(half[0](0), 0.75 / std::sqrt(0.625), 1e-12);
  EXPECT_NEAR(half[0](1), -0.25 / std::sqrt(0.625), 1e-12);
  EXPECT_NEAR(half[0](0), 0.9487, 1e-4);
  EXPECT_NEAR(half[0](1), -0.3162, 1e-4);

  EXPECT_THROW(mitigate_camera_bias({{"x", unit({1, 2})}}, 1.0), ZeroVector);
}

TEST(Mitigation, UnitNormOutput) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<geo::CameraId, Embedding>> t;
    for (int i = 0; i < 10; ++i) t.push_back({std::string(1, static_cast<char>('a' + gen() % 3)), random_unit(gen, 8)});
    for (const auto& f : mitigate_camera_bias(t, 0.1)) EXPECT_NEAR(f.norm(), 1.0, 1e-12);
  }
}

TEST(Mitigation, RunningStatsMatchBatch) {
  std::mt19937_64 gen(9);
  std::vector<std::pair<geo::CameraId, Embedding>> t;
  CameraEmbeddingStats stats;
  for (int i = 0; i < 12; ++i) {
    t.push_back({i % 2 ? "a" : "b", random_unit(gen, 5)});
    stats.add(t.back().first, t.back().second);
  }
  const auto batch = mitigate_camera_bias(t, 0.1);
  for (std::size_t i = 0; i < t.size(); ++i)
    EXPECT_LE((stats.mitigate(t[i].first, t[i].second, 0.1) - batch[i]).norm(), 1e-12);
  EXPECT_EQ(stats.count("a"), 6u);
}

TEST(Rerank, SingleQueryAgainstReference) {
  const std::vector<Embedding> q{unit({1.0, 0.2, 0.0})};
  const std::vector<Embedding> g{unit({0.9, 0.1, 0.3}), unit({0.0, 1.0, 0.2}), unit({0.5, 0.5, -0.6})};
  const auto d = k_reciprocal_rerank(q, g, {2, 1, 0.5});
  const double expected[3] = {0.3630939510373765, 1.0649186059656683, 0.744591833238337};
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(d(0, j), expected[j], 1e-12);
}

TEST(Rerank, TwoQueriesAgainstReference) {
  const std::vector<Embedding> q{unit({0.3, -0.2, 0.9, 0.1}), unit({-0.5, 0.7, 0.1, 0.4})};
  const std::vector<Embedding> g{unit({0.2, -0.1, 1.0, 0.0}), unit({-0.4, 0.8, 0.0, 0.5}),
                                 unit({0.9, 0.1, -0.2, 0.3}), unit({0.1, 0.1, 0.1, 1.0}),
                                 unit({-0.6, 0.5, 0.3, 0.2}), unit({0.4, -0.5, 0.6, -0.3})};
  const auto d = k_reciprocal_rerank(q, g, {3, 2, 0.3});
  const double expected[2][6] = {
      {0.05812990365795792, 1.1705867053305283, 1.0539063605742471, 1.078954674959155, 1.1217264325424965,
       0.30334718003758043},
      {1.1391925178469116, 0.05676203165076864, 0.9936229472572841, 0.5260042694924552, 0.24685108232358008,
       1.251468338378388}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(d(i, j), expected[i][j], 1e-12);
}

TEST(Rerank, LambdaOneIsRawBitwise) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Embedding> q, g;
    for (int i = 0; i < 4; ++i) q.push_back(random_unit(gen, 8));
    for (int i = 0; i < 25; ++i) g.push_back(random_unit(gen, 8));
    const auto raw = euclidean_distances(q, g);
    const auto rr = k_reciprocal_rerank(q, g, {20, 6, 1.0});
    EXPECT_TRUE((raw.array() == rr.array()).all());
  }
}

TEST(Rerank, EquidistantTiesPreserved) {
  // Simplex corners are pairwise equidistant.
  std::vector<Embedding> all;
  for (int i = 0; i < 6; ++i) {
    Embedding e = Embedding::Zero(6);
    e(i) = 1.0;
    all.push_back(e);
  }
  const std::vector<Embedding> q(all.begin(), all.begin() + 1), g(all.begin() + 1, all.end());
  const auto d = k_reciprocal_rerank(q, g, {3, 2, 0.3});
  for (int j = 1; j < 5; ++j) EXPECT_EQ(d(0, j), d(0, 0));
}

TEST(Rerank, InsufficientGallery) {
  const std::vector<Embedding> q{unit({1, 0})}, g{unit({0, 1}), unit({1, 1})};
  EXPECT_THROW(k_reciprocal_rerank(q, g, {3, 1, 0.3}), InsufficientGallery);
}

TEST(EvalReid, Examples) {
  const std::vector<LabeledTrack> q{{1, "a"}}, g{{1, "b"}, {2, "b"}};
  Eigen::MatrixXd first(1, 2), second(1, 2);
  first << 0.1, 0.9;
  second << 0.9, 0.1;
  const auto s1 = eval_track_reid(q, g, first);
  EXPECT_EQ(s1.mAP, 1.0);
  EXPECT_EQ(s1.cmc1, 1.0);
  const auto s2 = eval_track_reid(q, g, second);
  EXPECT_DOUBLE_EQ(s2.mAP, 0.5);
  EXPECT_EQ(s2.cmc1, 0.0);
  EXPECT_EQ(s2.cmc5, 1.0);
  const std::vector<LabeledTrack> only_same{{1, "a"}, {2, "b"}};
  EXPECT_THROW(eval_track_reid(q, only_same, first), NoValidGallery);
}

TEST(EvalReid, MatchesDefinitionOracle) {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  int checked = 0;
  while (checked < 300) {
    const int nq = 1 + static_cast<int>(gen() % 5), ng = 1 + static_cast<int>(gen() % 6);
    std::vector<LabeledTrack> q(nq), g(ng);
    for (auto& t : q) t = {static_cast<long>(gen() % 3), std::string(1, static_cast<char>('a' + gen() % 3))};
    for (auto& t : g) t = {static_cast<long>(gen() % 3), std::string(1, static_cast<char>('a' + gen() % 3))};
    Eigen::MatrixXd d(nq, ng);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < ng; ++j) d(i, j) = u(gen);

    // AP = mean over relevant items of (relevant at or above its rank) / rank.
    bool valid = true;
    double map = 0.0, c1 = 0.0, c5 = 0.0;
    for (int i = 0; i < nq && valid; ++i) {
      std::vector<int> rel;
      for (int j = 0; j < ng; ++j)
        if (g[j].camera != q[i].camera && g[j].identity == q[i].identity) rel.push_back(j);
      if (rel.empty()) {
        valid = false;
        break;
      }
      auto rank = [&](int j) {
        int r = 1;
        for (int k = 0; k < ng; ++k)
          if (k != j && g[k].camera != q[i].camera && d(i, k) < d(i, j)) ++r;
        return r;
      };
      double ap = 0.0;
      int best = ng + 1;
      for (int j : rel) {
        int above = 0;
        for (int k : rel)
          if (rank(k) <= rank(j)) ++above;
        ap += static_cast<double>(above) / rank(j);
        best = std::min(best, rank(j));
      }
      map += ap / static_cast<double>(rel.size());
      c1 += best <= 1;
      c5 += best <= 5;
    }
    if (!valid) {
      EXPECT_THROW(eval_track_reid(q, g, d), NoValidGallery);
      continue;
    }
    const auto s = eval_track_reid(q, g, d);
    EXPECT_NEAR(s.mAP, map / nq, 1e-12);
    EXPECT_NEAR(s.cmc1, c1 / nq, 1e-12);
    EXPECT_NEAR(s.cmc5, c5 / nq, 1e-12);
    ++checked;
  }
}
