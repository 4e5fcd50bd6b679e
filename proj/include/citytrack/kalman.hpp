#pragma once

#include <Eigen/Core>

#include "citytrack/ingest.hpp"

namespace citytrack::sct {

/// Bottom-center box parameterization: u is the horizontal center, v the
/// bottom edge, r = width / height and h the height, all in pixels.
struct Observation {
  double u = 0.0;
  double v = 0.0;
  double r = 1.0;
  double h = 1.0;

  Eigen::Vector4d vector() const { return {u, v, r, h}; }
  static Observation from_vector(const Eigen::Vector4d& z) { return {z(0), z(1), z(2), z(3)}; }
};

Observation to_observation(const ingest::Detection& d);
/// Inverse of to_observation; confidence and class are left at defaults.
ingest::Detection to_detection(const Observation& o);

using StateVector = Eigen::Matrix<double, 8, 1>;
using StateCovariance = Eigen::Matrix<double, 8, 8>;

/// Constant-velocity state [u, v, r, h, du, dv, dr, dh] with covariance.
struct KalmanState {
  StateVector mean = StateVector::Zero();
  StateCovariance cov = StateCovariance::Identity();

  Observation observation() const { return Observation::from_vector(mean.head<4>()); }
};

/// Chi-square 0.95 quantile with 4 degrees of freedom.
inline constexpr double kGateThreshold = 9.4877;

KalmanState kf_initiate(const Observation& obs);
/// One-frame constant-velocity prediction with height-relative process noise.
KalmanState kf_predict(const KalmanState& s);
/// Kalman correction, after which the positional components of the mean are
/// replaced by the observation itself. Throws SingularInnovation.
KalmanState kf_update(const KalmanState& s, const Observation& obs);
/// Squared Mahalanobis distance of obs to the projected state.
double gating_distance(const KalmanState& s, const Observation& obs);

}  // namespace citytrack::sct
