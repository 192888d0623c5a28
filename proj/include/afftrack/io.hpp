#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "afftrack/core.hpp"

namespace afftrack {

// Text formats. Every file is UTF-8, one space-separated record per line.
// Blank lines and lines starting with '#' are ignored. Doubles are written
// in shortest round-trip form, so save/load is bit-exact.
//
//   detections   frame class x y z l w h theta vx vy score [u1 v1 u2 v2]
//   tracks       track_id frame class x y z l w h theta vx vy score [u1 v1 u2 v2]
//   2D dets      frame class score u1 v1 u2 v2
//   point cloud  x y z r dt

/// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);

/// Groups records by frame; frame indices without records yield empty groups.
/// Frames must be non-decreasing within the file.
DetectionSequence load_detections(const std::filesystem::path& path);
DetectionSequence parse_detections(std::istream& in);
void save_detections(const std::filesystem::path& path, const DetectionSequence& seq);
void write_detections(std::ostream& out, const DetectionSequence& seq);

LabeledSequence load_tracks(const std::filesystem::path& path);
LabeledSequence parse_tracks(std::istream& in);
void save_tracks(const std::filesystem::path& path, const LabeledSequence& seq);
void write_tracks(std::ostream& out, const LabeledSequence& seq);

std::vector<std::vector<Detection2D>> load_detections_2d(const std::filesystem::path& path);
void save_detections_2d(const std::filesystem::path& path,
                        const std::vector<std::vector<Detection2D>>& seq);

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

/// Flat `key = value` file. '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues load_key_values(const std::filesystem::path& path);
KeyValues parse_key_values(std::istream& in);

/// Applies recognised keys; returns the keys that were consumed.
/// Per-class overrides use `tau_3d.<class> = value` (likewise tau_fuse, tau_2d, tau_rej).
std::vector<std::string> apply_tracker_config(const KeyValues& kv, TrackerConfig& cfg);
std::vector<std::string> apply_train_config(const KeyValues& kv, TrainConfig& cfg);
void write_tracker_config(std::ostream& out, const TrackerConfig& cfg);
void write_train_config(std::ostream& out, const TrainConfig& cfg);

}  // namespace afftrack
