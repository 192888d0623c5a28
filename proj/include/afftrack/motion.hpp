#pragma once

#include <Eigen/Dense>

#include "afftrack/core.hpp"

namespace afftrack {

// Velocity model: centroid advanced by the last detected planar velocity; an
// update replaces the whole state with the matched detection.

ObjectState predict_velocity(const ObjectState& state, double dt);
Track predict_velocity(const Track& track, double dt);
Track update_assign(const Track& track, const Detection& det);

// Constant-velocity Kalman filter over (x, y, z, l, w, h, theta, vx, vy).
// Measurements observe the first seven components.

inline constexpr int kKalmanDim = 9;
inline constexpr int kMeasDim = 7;

using KalmanVector = Eigen::Matrix<double, kKalmanDim, 1>;
using KalmanMatrix = Eigen::Matrix<double, kKalmanDim, kKalmanDim>;
using MeasVector = Eigen::Matrix<double, kMeasDim, 1>;
using MeasMatrix = Eigen::Matrix<double, kMeasDim, kMeasDim>;

struct KalmanNoise {
  KalmanVector process = KalmanVector::Zero();   // diagonal of Q (per second)
  MeasVector measurement = MeasVector::Ones();   // diagonal of R
  double init_velocity_var = 100.0;

  static KalmanNoise from_config(const TrackerConfig& cfg);
};

struct KalmanState {
  KalmanVector mean = KalmanVector::Zero();
  KalmanMatrix covariance = KalmanMatrix::Identity();

  /// Initial state from a detection; velocity starts at zero with large variance.
  static KalmanState from_detection(const ObjectState& s, const KalmanNoise& noise);
  /// Writes pose and velocity into `base`, keeping its class and score.
  ObjectState to_state(const ObjectState& base) const;
};

KalmanState kalman_predict(const KalmanState& ks, double dt, const KalmanNoise& noise);
KalmanState kalman_update(const KalmanState& ks, const ObjectState& measurement,
                          const KalmanNoise& noise);
inline KalmanState kalman_update(const KalmanState& ks, const Detection& det,
                                 const KalmanNoise& noise) {
  return kalman_update(ks, det.state, noise);
}

}  // namespace afftrack
