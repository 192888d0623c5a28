#include "afftrack/core.hpp"

#include <cmath>
#include <numbers>

namespace afftrack {

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) throw DomainError("normalize_angle: non-finite input");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(theta, two_pi);  // (-2pi, 2pi)
  if (r > std::numbers::pi) r -= two_pi;
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

namespace {

void require_finite(double v, const char* field) {
  if (!std::isfinite(v)) throw ValidationError(field, "must be finite");
}

void require_positive(double v, const char* field) {
  require_finite(v, field);
  if (!(v > 0.0)) throw ValidationError(field, "must be > 0");
}

void require_unit(double v, const char* field) {
  require_finite(v, field);
  if (v < 0.0 || v > 1.0) throw ValidationError(field, "must lie in [0, 1]");
}

}  // namespace

void ObjectState::validate() const {
  require_finite(x, "x");
  require_finite(y, "y");
  require_finite(z, "z");
  require_positive(l, "l");
  require_positive(w, "w");
  require_positive(h, "h");
  require_finite(theta, "theta");
  if (theta <= -std::numbers::pi || theta > std::numbers::pi)
    throw ValidationError("theta", "must lie in (-pi, pi]");
  require_finite(vx, "vx");
  require_finite(vy, "vy");
  if (class_id < 0) throw ValidationError("class", "must be non-negative");
  require_unit(score, "score");
}

std::array<double, kStateDim> ObjectState::to_array() const {
  return {x, y, z, l, w, h, theta, vx, vy, static_cast<double>(class_id), score};
}

ObjectState make_state(double x, double y, double z, double l, double w, double h, double theta,
                       double vx, double vy, int class_id, double score) {
  ObjectState s{x, y, z, l, w, h, normalize_angle(theta), vx, vy, class_id, score};
  s.validate();
  return s;
}

void Box2D::validate() const {
  require_finite(u1, "u1");
  require_finite(v1, "v1");
  require_finite(u2, "u2");
  require_finite(v2, "v2");
  if (!(u1 < u2)) throw ValidationError("u2", "must exceed u1");
  if (!(v1 < v2)) throw ValidationError("v2", "must exceed v1");
}

void PointCloud::validate() const {
  for (const auto& p : points) {
    require_finite(p.x, "point.x");
    require_finite(p.y, "point.y");
    require_finite(p.z, "point.z");
    require_unit(p.r, "point.r");
    require_finite(p.dt, "point.dt");
    if (p.dt > 0.0) throw ValidationError("point.dt", "must be <= 0");
  }
}

std::string to_string(MatcherKind k) { return k == MatcherKind::hungarian ? "hungarian" : "greedy"; }
std::string to_string(MotionKind k) { return k == MotionKind::velocity ? "velocity" : "kalman"; }
std::string to_string(AffinityKind k) {
  switch (k) {
    case AffinityKind::learned: return "learned";
    case AffinityKind::heuristic: return "heuristic";
    case AffinityKind::cosine: return "cosine";
    case AffinityKind::inner_product: return "inner_product";
  }
  return "?";
}

MatcherKind parse_matcher(const std::string& s) {
  if (s == "hungarian") return MatcherKind::hungarian;
  if (s == "greedy") return MatcherKind::greedy;
  throw ConfigError("unknown matcher '" + s + "'");
}

MotionKind parse_motion(const std::string& s) {
  if (s == "velocity") return MotionKind::velocity;
  if (s == "kalman") return MotionKind::kalman;
  throw ConfigError("unknown motion model '" + s + "'");
}

AffinityKind parse_affinity(const std::string& s) {
  if (s == "learned") return AffinityKind::learned;
  if (s == "heuristic") return AffinityKind::heuristic;
  if (s == "cosine") return AffinityKind::cosine;
  if (s == "inner_product") return AffinityKind::inner_product;
  throw ConfigError("unknown affinity '" + s + "'");
}

double TrackerConfig::tau_fuse_for(int cls) const {
  auto it = per_class.find(cls);
  return it != per_class.end() && it->second.tau_fuse ? *it->second.tau_fuse : tau_fuse;
}
double TrackerConfig::tau_2d_for(int cls) const {
  auto it = per_class.find(cls);
  return it != per_class.end() && it->second.tau_2d ? *it->second.tau_2d : tau_2d;
}
double TrackerConfig::tau_3d_for(int cls) const {
  auto it = per_class.find(cls);
  return it != per_class.end() && it->second.tau_3d ? *it->second.tau_3d : tau_3d;
}
double TrackerConfig::tau_rej_for(int cls) const {
  auto it = per_class.find(cls);
  return it != per_class.end() && it->second.tau_rej ? *it->second.tau_rej : tau_rej;
}

namespace {

void config_unit(double v, const std::string& key) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(key + " must lie in [0, 1]");
}

}  // namespace

void TrackerConfig::validate() const {
  config_unit(tau_fuse, "tau_fuse");
  config_unit(tau_2d, "tau_2d");
  config_unit(tau_rej, "tau_rej");
  config_unit(tau_gt, "tau_gt");
  config_unit(min_affinity, "min_affinity");
  if (!(tau_3d > 0.0)) throw ConfigError("tau_3d must be > 0");
  if (max_misses < 1) throw ConfigError("max_misses must be >= 1");
  if (min_hits < 1) throw ConfigError("min_hits must be >= 1");
  for (double q : {kf_q_pos, kf_q_size, kf_q_yaw, kf_q_vel, kf_init_vel_var})
    if (!(q >= 0.0)) throw ConfigError("kalman process noise must be >= 0");
  for (double r : {kf_r_pos, kf_r_size, kf_r_yaw})
    if (!(r > 0.0)) throw ConfigError("kalman measurement noise must be > 0");
  for (const auto& [cls, t] : per_class) {
    const std::string p = "class " + std::to_string(cls) + " ";
    if (t.tau_fuse) config_unit(*t.tau_fuse, p + "tau_fuse");
    if (t.tau_2d) config_unit(*t.tau_2d, p + "tau_2d");
    if (t.tau_rej) config_unit(*t.tau_rej, p + "tau_rej");
    if (t.tau_3d && !(*t.tau_3d > 0.0)) throw ConfigError(p + "tau_3d must be > 0");
  }
}

void TrainConfig::validate() const {
  config_unit(focal_alpha, "focal_alpha");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
  if (!(sigma_x >= 0.0) || !(sigma_y >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (!(drop_min >= 0.0 && drop_min <= drop_max && drop_max <= 1.0))
    throw ConfigError("need 0 <= drop_min <= drop_max <= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
}

}  // namespace afftrack
