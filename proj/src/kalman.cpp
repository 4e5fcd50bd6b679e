#include "citytrack/kalman.hpp"

#include <Eigen/Cholesky>

#include "citytrack/errors.hpp"

namespace citytrack::sct {

namespace {

constexpr double kStdPosition = 1.0 / 20.0;
constexpr double kStdVelocity = 1.0 / 160.0;

using Projection = Eigen::Matrix<double, 4, 8>;
using Innovation = Eigen::Matrix4d;

const StateCovariance& motion() {
  static const StateCovariance f = [] {
    StateCovariance m = StateCovariance::Identity();
    for (int i = 0; i < 4; ++i) m(i, 4 + i) = 1.0;
    return m;
  }();
  return f;
}

const Projection& projection() {
  static const Projection h = [] {
    Projection m = Projection::Zero();
    for (int i = 0; i < 4; ++i) m(i, i) = 1.0;
    return m;
  }();
  return h;
}

Eigen::Vector4d measurement_std(double h) {
  return {kStdPosition * h, kStdPosition * h, 1e-1, kStdPosition * h};
}

Innovation innovation_cov(const KalmanState& s) {
  const Eigen::Vector4d std = measurement_std(s.mean(3));
  Innovation cov = projection() * s.cov * projection().transpose();
  cov.diagonal() += std.array().square().matrix();
  return cov;
}

}  // namespace

Observation to_observation(const ingest::Detection& d) {
  const double h = d.y2 - d.y1;
  return Observation{(d.x1 + d.x2) / 2.0, d.y2, (d.x2 - d.x1) / h, h};
}

ingest::Detection to_detection(const Observation& o) {
  const double w = o.r * o.h;
  ingest::Detection d;
  d.x1 = o.u - w / 2.0;
  d.x2 = o.u + w / 2.0;
  d.y1 = o.v - o.h;
  d.y2 = o.v;
  return d;
}

KalmanState kf_initiate(const Observation& obs) {
  KalmanState s;
  s.mean << obs.u, obs.v, obs.r, obs.h, 0, 0, 0, 0;
  StateVector std;
  std << 2 * kStdPosition * obs.h, 2 * kStdPosition * obs.h, 1e-2, 2 * kStdPosition * obs.h,
      10 * kStdVelocity * obs.h, 10 * kStdVelocity * obs.h, 1e-5, 10 * kStdVelocity * obs.h;
  s.cov = std.array().square().matrix().asDiagonal();
  return s;
}

KalmanState kf_predict(const KalmanState& s) {
  const double h = s.mean(3);
  StateVector std;
  std << kStdPosition * h, kStdPosition * h, 1e-2, kStdPosition * h,
      kStdVelocity * h, kStdVelocity * h, 1e-5, kStdVelocity * h;
  KalmanState out;
  out.mean = motion() * s.mean;
  out.cov = motion() * s.cov * motion().transpose();
  out.cov.diagonal() += std.array().square().matrix();
  return out;
}

KalmanState kf_update(const KalmanState& s, const Observation& obs) {
  const Innovation cov = innovation_cov(s);
  const Eigen::LLT<Innovation> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularInnovation("innovation covariance is not positive definite");

  // K = P H^T S^-1
  const Eigen::Matrix<double, 8, 4> pht = s.cov * projection().transpose();
  const Eigen::Matrix<double, 8, 4> gain = llt.solve(pht.transpose()).transpose();
  const Eigen::Vector4d innovation = obs.vector() - projection() * s.mean;

  KalmanState out;
  out.mean = s.mean + gain * innovation;
  // Joseph form keeps the covariance symmetric positive semi-definite.
  const StateCovariance ikh = StateCovariance::Identity() - gain * projection();
  const Eigen::Vector4d std = measurement_std(s.mean(3));
  const Innovation r = std.array().square().matrix().asDiagonal();
  out.cov = ikh * s.cov * ikh.transpose() + gain * r * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();

  // The matched detection becomes the current state.
  out.mean(0) = obs.u;
  out.mean(1) = obs.v;
  out.mean(2) = obs.r;
  out.mean(3) = obs.h;
  return out;
}

double gating_distance(const KalmanState& s, const Observation& obs) {
  const Innovation cov = innovation_cov(s);
  const Eigen::LLT<Innovation> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularInnovation("innovation covariance is not positive definite");
  const Eigen::Vector4d d = obs.vector() - projection() * s.mean;
  const Eigen::Vector4d z = llt.matrixL().solve(d);
  return z.squaredNorm();
}

}  // namespace citytrack::sct
