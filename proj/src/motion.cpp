#include "afftrack/motion.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

namespace afftrack {

ObjectState predict_velocity(const ObjectState& state, double dt) {
  if (!(dt > 0.0)) throw DomainError("predict_velocity: dt must be > 0");
  ObjectState out = state;
  out.x = state.x + dt * state.vx;
  out.y = state.y + dt * state.vy;
  return out;
}

Track predict_velocity(const Track& track, double dt) {
  Track out = track;
  out.state = predict_velocity(track.state, dt);
  return out;
}

Track update_assign(const Track& track, const Detection& det) {
  Track out = track;
  out.state = det.state;
  out.hits = track.hits + 1;
  out.misses = 0;
  return out;
}

KalmanNoise KalmanNoise::from_config(const TrackerConfig& cfg) {
  KalmanNoise n;
  n.process << cfg.kf_q_pos, cfg.kf_q_pos, cfg.kf_q_pos, cfg.kf_q_size, cfg.kf_q_size,
      cfg.kf_q_size, cfg.kf_q_yaw, cfg.kf_q_vel, cfg.kf_q_vel;
  n.measurement << cfg.kf_r_pos, cfg.kf_r_pos, cfg.kf_r_pos, cfg.kf_r_size, cfg.kf_r_size,
      cfg.kf_r_size, cfg.kf_r_yaw;
  n.init_velocity_var = cfg.kf_init_vel_var;
  return n;
}

KalmanState KalmanState::from_detection(const ObjectState& s, const KalmanNoise& noise) {
  KalmanState ks;
  ks.mean << s.x, s.y, s.z, s.l, s.w, s.h, s.theta, 0.0, 0.0;
  ks.covariance.setZero();
  ks.covariance.diagonal().head<kMeasDim>() = noise.measurement;
  ks.covariance(7, 7) = noise.init_velocity_var;
  ks.covariance(8, 8) = noise.init_velocity_var;
  return ks;
}

ObjectState KalmanState::to_state(const ObjectState& base) const {
  ObjectState s = base;
  s.x = mean(0);
  s.y = mean(1);
  s.z = mean(2);
  // Sizes are kept strictly positive so the state invariant always holds.
  s.l = std::max(mean(3), 1e-3);
  s.w = std::max(mean(4), 1e-3);
  s.h = std::max(mean(5), 1e-3);
  s.theta = normalize_angle(mean(6));
  s.vx = mean(7);
  s.vy = mean(8);
  return s;
}

namespace {

KalmanMatrix make_psd(const KalmanMatrix& p) {
  KalmanMatrix sym = 0.5 * (p + p.transpose());
  Eigen::LLT<KalmanMatrix> llt(sym);
  if (llt.info() == Eigen::Success) return sym;
  Eigen::SelfAdjointEigenSolver<KalmanMatrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("kalman: covariance eigen-decomposition failed");
  spdlog::warn("kalman: covariance lost positive semi-definiteness, clamping eigenvalues");
  KalmanVector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

KalmanState kalman_predict(const KalmanState& ks, double dt, const KalmanNoise& noise) {
  if (!(dt > 0.0)) throw DomainError("kalman_predict: dt must be > 0");
  KalmanMatrix F = KalmanMatrix::Identity();
  F(0, 7) = dt;
  F(1, 8) = dt;
  KalmanState out;
  out.mean = F * ks.mean;
  out.mean(6) = normalize_angle(out.mean(6));
  KalmanMatrix Q = (noise.process * dt).asDiagonal();
  out.covariance = make_psd(F * ks.covariance * F.transpose() + Q);
  return out;
}

KalmanState kalman_update(const KalmanState& ks, const ObjectState& m, const KalmanNoise& noise) {
  Eigen::Matrix<double, kMeasDim, kKalmanDim> H = Eigen::Matrix<double, kMeasDim, kKalmanDim>::Zero();
  H.leftCols<kMeasDim>().setIdentity();
  MeasVector z;
  z << m.x, m.y, m.z, m.l, m.w, m.h, m.theta;
  MeasVector innovation = z - H * ks.mean;
  innovation(6) = normalize_angle(innovation(6));

  const MeasMatrix R = noise.measurement.asDiagonal();
  const MeasMatrix S = H * ks.covariance * H.transpose() + R;
  Eigen::LDLT<MeasMatrix> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-300)
    throw NumericError("kalman_update: singular innovation covariance");
  // K = P H^T S^-1
  const Eigen::Matrix<double, kKalmanDim, kMeasDim> K =
      ldlt.solve(H * ks.covariance.transpose()).transpose();

  KalmanState out;
  out.mean = ks.mean + K * innovation;
  out.mean(6) = normalize_angle(out.mean(6));
  // Joseph form keeps the posterior symmetric PSD.
  const KalmanMatrix IKH = KalmanMatrix::Identity() - K * H;
  out.covariance = make_psd(IKH * ks.covariance * IKH.transpose() + K * R * K.transpose());
  return out;
}

}  // namespace afftrack
