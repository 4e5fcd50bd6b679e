#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "citytrack/errors.hpp"
#include "citytrack/kalman.hpp"

using namespace citytrack;
using namespace citytrack::sct;

TEST(Observation, Examples) {
  const auto a = to_observation(ingest::Detection{0, 0, 10, 20});
  EXPECT_EQ(a.u, 5.0);
  EXPECT_EQ(a.v, 20.0);
  EXPECT_EQ(a.r, 0.5);
  EXPECT_EQ(a.h, 20.0);
  const auto b = to_observation(ingest::Detection{0, 0, 1, 1});
  EXPECT_EQ(b.vector(), Eigen::Vector4d(0.5, 1, 1, 1));
  const auto c = to_observation(ingest::Detection{2, 3, 6, 5});
  EXPECT_EQ(c.vector(), Eigen::Vector4d(4, 5, 2, 2));
  const auto d = to_detection(c);
  EXPECT_DOUBLE_EQ(d.x1, 2.0);
  EXPECT_DOUBLE_EQ(d.y1, 3.0);
  EXPECT_DOUBLE_EQ(d.x2, 6.0);
  EXPECT_DOUBLE_EQ(d.y2, 5.0);
}

TEST(Kalman, Initiate) {
  const auto s = kf_initiate({5, 20, 0.5, 20});
  StateVector expected;
  expected << 5, 20, 0.5, 20, 0, 0, 0, 0;
  EXPECT_EQ(s.mean, expected);
  EXPECT_TRUE(s.cov.isApprox(s.cov.transpose()));
  // Position std 2 * h / 20, velocity std 10 * h / 160.
  EXPECT_NEAR(s.cov(0, 0), std::pow(2.0 * 20.0 / 20.0, 2), 1e-12);
  EXPECT_NEAR(s.cov(4, 4), std::pow(10.0 * 20.0 / 160.0, 2), 1e-12);
}

TEST(Kalman, Predict) {
  auto s = kf_initiate({3, 4, 1, 10});
  const auto p = kf_predict(s);
  EXPECT_EQ(p.mean.head<4>(), s.mean.head<4>());
  EXPECT_GT(p.cov(0, 0), s.cov(0, 0));

  s.mean << 0, 0, 1, 10, 2, 3, 0, 0;
  const auto q = kf_predict(s);
  EXPECT_EQ(q.mean.head<4>(), Eigen::Vector4d(2, 3, 1, 10));
}

TEST(Kalman, UpdateOverwritesPositionBitwise) {
  auto s = kf_initiate({0, 0, 1, 10});
  s.mean << 1, 2, 0.7, 12, 0.5, 0.1, 0, 0.2;
  s = kf_predict(s);
  const Observation obs{5, 20, 0.5, 20};
  const auto u = kf_update(s, obs);
  EXPECT_EQ(u.mean(0), 5.0);
  EXPECT_EQ(u.mean(1), 20.0);
  EXPECT_EQ(u.mean(2), 0.5);
  EXPECT_EQ(u.mean(3), 20.0);
}

TEST(Kalman, ZeroInnovationKeepsVelocity) {
  auto s = kf_initiate({10, 10, 1, 10});
  s.mean.tail<4>() << 1.5, -0.5, 0.0, 0.1;
  s = kf_predict(s);
  const auto u = kf_update(s, s.observation());
  EXPECT_NEAR((u.mean.tail<4>() - s.mean.tail<4>()).norm(), 0.0, 1e-9);
}

TEST(Kalman, ConstantVelocityConvergence) {
  // A box moving 4 px right and 1 px down per frame, size fixed.
  auto truth = [](int f) { return Observation{100.0 + 4.0 * f, 300.0 + 1.0 * f, 0.6, 50.0}; };
  auto s = kf_initiate(truth(0));
  for (int f = 1; f <= 10; ++f) {
    s = kf_predict(s);
    if (f == 10) break;
    s = kf_update(s, truth(f));
  }
  const auto p = s.observation();
  EXPECT_LE(std::hypot(p.u - truth(10).u, p.v - truth(10).v), 1.0);
}

TEST(Kalman, GatingDistance) {
  auto s = kf_initiate({5, 20, 0.5, 20});
  EXPECT_NEAR(gating_distance(s, s.observation()), 0.0, 1e-12);
  // One-dimensional analogue: variance 4 in u (3 from the state, 1 from the
  // measurement noise (20/20)^2), innovation 2.
  s.cov = StateCovariance::Identity() * 1e-30;
  s.cov(0, 0) = 3.0;
  s.cov(1, 1) = 5.0;
  s.cov(3, 3) = 6.0;
  s.cov(2, 2) = 1.0;
  EXPECT_NEAR(gating_distance(s, {7, 20, 0.5, 20}), 1.0, 1e-12);
}

TEST(Kalman, SingularInnovation) {
  KalmanState s;
  s.mean << 0, 0, 1, 0, 0, 0, 0, 0;  // zero height makes the measurement noise vanish
  s.cov.setZero();
  EXPECT_THROW(gating_distance(s, {0, 0, 1, 0}), SingularInnovation);
}

TEST(Kalman, CovarianceStaysPsd) {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> h(20.0, 200.0);
  auto s = kf_initiate({640, 360, 0.6, 80});
  for (int i = 0; i < 1000; ++i) {
    s = kf_predict(s);
    if (i % 7 != 3) {
      const Observation o{s.mean(0) + 3 * n(gen), s.mean(1) + 3 * n(gen), std::abs(0.6 + 0.05 * n(gen)), h(gen)};
      s = kf_update(s, o);
    }
    EXPECT_TRUE(s.cov.isApprox(s.cov.transpose(), 1e-12));
    const Eigen::SelfAdjointEigenSolver<StateCovariance> es(s.cov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
  }
}

TEST(Kalman, GatingInvariantUnderRescaling) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 50; ++i) {
    auto s = kf_initiate({100 + u(gen), 200 + u(gen), 0.5, 40});
    s = kf_predict(s);
    const Observation obs{s.mean(0) + u(gen), s.mean(1) + u(gen), 0.5 + 0.01 * u(gen), 40 + u(gen)};
    const double k = 3.0;
    StateVector scale;
    scale << k, k, 1, k, k, k, 1, k;
    KalmanState t;
    t.mean = scale.asDiagonal() * s.mean;
    t.cov = scale.asDiagonal() * s.cov * scale.asDiagonal();
    const Observation tobs{k * obs.u, k * obs.v, obs.r, k * obs.h};
    EXPECT_NEAR(gating_distance(t, tobs), gating_distance(s, obs), 1e-9);
  }
}
