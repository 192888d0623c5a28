#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afftrack/core.hpp"
#include "afftrack/geometry.hpp"

namespace afftrack {

inline constexpr int kCar = 0;
inline constexpr int kPedestrian = 1;
inline constexpr int kCyclist = 2;

/// Nominal (l, w, h) per class.
std::array<double, 3> class_size(int class_id);

/// Forward-looking camera at the origin, 1.7 m above ground, f = 1000 px,
/// 1600 x 900 image.
CameraModel default_camera();

struct ScenarioSpec {
  std::string name = "custom";
  int frames = 20;
  double dt = 0.5;

  // Layout. Clusters hold objects of one class moving together; singles
  // move independently; crossing pairs are two pedestrians passing each
  // other head-on with a lateral offset.
  int clusters = 1;
  int objects_per_cluster = 4;
  double cluster_radius = 3.0;
  int singles = 2;
  int crossing_pairs = 0;
  double crossing_offset = 1.0;
  std::array<double, 3> class_weights{0.5, 0.3, 0.2};  // car, pedestrian, cyclist
  int cluster_class = -1;  // -1 draws each cluster's class from class_weights
  double speed_scale = 1.0;
  double velocity_jitter = 0.1;  // per-object deviation from its cluster velocity (m/s)
  double position_jitter = 0.02; // per-frame GT position noise (m)
  double min_separation = 1.0;   // BEV center distance between any two objects, every frame
  bool allow_overlap = false;

  // Detector model.
  double pos_noise = 0.1;
  double size_noise = 0.03;  // relative
  double yaw_noise = 0.05;
  double velocity_noise = 0.3;
  double score_spread = 0.5;  // true detections score in [1 - spread, 1]
  double miss_rate = 0.05;
  double duplicate_rate = 0.0;  // duplicates per GT object per frame
  double clutter_rate = 0.2;    // Poisson mean of false boxes per frame
  double miss_rate_2d = 0.05;
  double pixel_noise = 3.0;

  // LiDAR model.
  double points_per_m2 = 40.0;
  int sweeps = 3;
  double sweep_interval = 0.05;
  int ground_points = 1500;

  /// Throws ConfigError for an infeasible spec.
  void validate() const;
};

struct Scenario {
  std::string name;
  ScenarioSpec spec;
  std::uint64_t seed = 0;
  double dt = 0.5;
  CameraModel camera;
  LabeledSequence gt;
  DetectionSequence detections;
  std::vector<std::vector<Detection2D>> detections2d;
  std::vector<PointCloud> clouds;

  int frames() const { return static_cast<int>(gt.size()); }
};

/// Deterministic in (spec, seed).
Scenario generate(const ScenarioSpec& spec, std::uint64_t seed);

struct Preset {
  std::string name;
  ScenarioSpec spec;
  std::uint64_t seed;
};

/// cluster_dense, crossing_pair, duplicates_heavy, sparse_easy,
/// mixed_train_00 .. mixed_train_19.
std::vector<Preset> preset_suite();
/// The four evaluation presets, in suite order.
std::vector<Preset> evaluation_presets();
/// The mixed_train_* presets.
std::vector<Preset> training_presets();
/// Throws ConfigError for an unknown name.
Preset find_preset(const std::string& name);

// On-disk layout of a scenario directory:
//   manifest.txt  detections.txt  detections2d.txt  gt.txt  clouds/NNNNNN.txt
//
// manifest.txt:
//   afftrack-scenario 1
//   name <name>
//   seed <seed>
//   dt <seconds>
//   frames <count>
//   camera <P0 .. P11> <width> <height>
//   detections <relative path>
//   detections2d <relative path>
//   gt <relative path>
//   cloud <frame> <relative path>      one per frame
//   end

/// Writes the scenario and returns the manifest path.
std::filesystem::path write_scenario(const std::filesystem::path& dir, const Scenario& s);
/// Loads a scenario from its manifest. The spec field is left at defaults.
Scenario load_scenario(const std::filesystem::path& manifest);

}  // namespace afftrack
