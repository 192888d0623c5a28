#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace afftrack {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& msg)
      : std::runtime_error("invalid " + field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

inline constexpr int kStateDim = 11;

/// Wraps an angle into (-pi, pi]. Throws DomainError for non-finite input.
double normalize_angle(double theta);

/// Oriented 3D box with planar velocity, class and confidence. Boxes are
/// upright (yaw only); (x, y, z) is the box center.
struct ObjectState {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double theta = 0.0;
  double vx = 0.0, vy = 0.0;
  int class_id = 0;
  double score = 1.0;

  /// Throws ValidationError naming the first offending field.
  void validate() const;
  std::array<double, kStateDim> to_array() const;

  friend bool operator==(const ObjectState&, const ObjectState&) = default;
};

/// Checked constructor: normalizes theta, then validates.
ObjectState make_state(double x, double y, double z, double l, double w, double h, double theta,
                       double vx, double vy, int class_id, double score);

struct Box2D {
  double u1 = 0.0, v1 = 0.0, u2 = 1.0, v2 = 1.0;

  double area() const { return (u2 - u1) * (v2 - v1); }
  void validate() const;
  friend bool operator==(const Box2D&, const Box2D&) = default;
};

struct Detection {
  ObjectState state;
  int frame = 0;
  std::optional<Box2D> box2d;
  int source_id = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Image-only detection consumed by the fusion and second association stages.
struct Detection2D {
  Box2D box;
  int frame = 0;
  int class_id = 0;
  double score = 1.0;
  int source_id = 0;

  friend bool operator==(const Detection2D&, const Detection2D&) = default;
};

enum class TrackStatus { tentative, confirmed, dead };

struct Track {
  ObjectState state;
  int track_id = 0;
  int age = 1;
  int hits = 1;
  int misses = 0;
  TrackStatus status = TrackStatus::tentative;

  friend bool operator==(const Track&, const Track&) = default;
};

struct LidarPoint {
  double x = 0.0, y = 0.0, z = 0.0;
  double r = 0.0;   // reflectance in [0, 1]
  double dt = 0.0;  // relative sweep time, <= 0

  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;
};

struct PointCloud {
  std::vector<LidarPoint> points;

  void validate() const;
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Ground-truth or predicted box with an identity, as stored in track files.
struct LabeledBox {
  int id = 0;
  int frame = 0;
  ObjectState state;
  std::optional<Box2D> box2d;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

using FrameDetections = std::vector<Detection>;
using DetectionSequence = std::vector<FrameDetections>;
using LabeledSequence = std::vector<std::vector<LabeledBox>>;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class MatcherKind { hungarian, greedy };
enum class MotionKind { velocity, kalman };
enum class AffinityKind { learned, heuristic, cosine, inner_product };

std::string to_string(MatcherKind k);
std::string to_string(MotionKind k);
std::string to_string(AffinityKind k);
MatcherKind parse_matcher(const std::string& s);
MotionKind parse_motion(const std::string& s);
AffinityKind parse_affinity(const std::string& s);

struct ClassThresholds {
  std::optional<double> tau_fuse, tau_2d, tau_3d, tau_rej;
};

struct TrackerConfig {
  double tau_fuse = 0.3;
  double tau_2d = 0.5;
  double tau_3d = 2.0;
  double tau_rej = 0.6;
  double tau_gt = 0.55;
  int max_misses = 2;
  int min_hits = 1;
  MatcherKind matcher = MatcherKind::hungarian;
  MotionKind motion = MotionKind::velocity;
  AffinityKind affinity = AffinityKind::learned;
  bool rejection = true;
  bool class_gating = true;
  // Apply the tau_3d gate as a mask before solving instead of filtering after.
  bool gate_before_solve = false;
  // Matches with affinity below this are dropped after solving (0 keeps all).
  double min_affinity = 0.0;

  // Kalman noise scales (diagonal Q and R).
  double kf_q_pos = 0.5;
  double kf_q_size = 0.01;
  double kf_q_yaw = 0.05;
  double kf_q_vel = 1.0;
  double kf_r_pos = 0.1;
  double kf_r_size = 0.05;
  double kf_r_yaw = 0.1;
  double kf_init_vel_var = 100.0;

  std::map<int, ClassThresholds> per_class;

  double tau_fuse_for(int cls) const;
  double tau_2d_for(int cls) const;
  double tau_3d_for(int cls) const;
  double tau_rej_for(int cls) const;

  void validate() const;
};

struct TrainConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double sigma_x = 0.01;
  double sigma_y = 0.01;
  double drop_min = 0.0;
  double drop_max = 0.2;
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 0.03;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

}  // namespace afftrack
