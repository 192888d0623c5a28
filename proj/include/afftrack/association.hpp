#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "afftrack/core.hpp"
#include "afftrack/geometry.hpp"
#include "afftrack/interaction.hpp"

namespace afftrack {

/// M x N 0/1 matrix with at most one true entry per row and per column.
using AssignmentMatrix = BoolMatrix;

struct Match {
  int track = 0;
  int detection = 0;
  double score = 0.0;

  friend bool operator==(const Match&, const Match&) = default;
};

struct MatchSet {
  std::vector<Match> matches;  // sorted by track index
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;

  /// Throws ContractError unless indices are in range and mutually disjoint.
  void validate(int rows, int cols) const;
  double total_score() const;
};

/// Builds a MatchSet from an assignment; scores are read from `scores`.
MatchSet to_match_set(const AssignmentMatrix& a, const nn::Matrix& scores);

/// Minimum-cost assignment over the allowed cells. Rectangular problems and
/// forbidden cells are padded with a cost larger than any achievable sum of
/// real costs, so the solution matches as many allowed pairs as possible and
/// among those minimizes the total cost. Padded pairs are dropped.
AssignmentMatrix hungarian(const nn::Matrix& cost, const BoolMatrix& forbidden);
AssignmentMatrix hungarian(const nn::Matrix& cost);

/// Repeatedly takes the best remaining pair that passes `threshold`
/// (score >= threshold when maximizing, <= when minimizing) and removes its
/// row and column. Ties go to the lexicographically smallest (row, col).
/// `allowed`, when non-empty, masks out pairs.
MatchSet greedy(const nn::Matrix& score, double threshold, bool maximize,
                const BoolMatrix& allowed = BoolMatrix());

struct FusionResult {
  std::vector<Match> pairs;  // (3D detection, 2D detection, IoU)
  std::vector<int> unfused_3d;
  std::vector<int> unfused_2d;
};

/// Greedy 3D/2D fusion on the IoU between each projected 3D box and each 2D
/// box; pairs below tau_fuse (per class) or of different class are ineligible.
FusionResult fuse_detections(std::span<const Detection> dets3d, std::span<const Detection2D> dets2d,
                             const CameraModel& cam, const TrackerConfig& cfg);

enum class ScoreKind { affinity, distance };

/// First association stage between predicted tracks and 3D detections.
/// `scores` is an affinity (higher is better, cost 1 - A) or a scaled
/// distance (lower is better, used as the cost directly). Solutions are
/// filtered by the scaled-distance gate tau_3d and, for affinities, by
/// cfg.min_affinity.
MatchSet stage1(std::span<const ObjectState> tracks, std::span<const Detection> dets,
                const nn::Matrix& scores, ScoreKind kind, const TrackerConfig& cfg);

/// Second association stage: projected tracks against leftover 2D detections,
/// greedy on IoU with threshold tau_2d (per class).
MatchSet stage2(std::span<const ObjectState> tracks, std::span<const Detection2D> dets2d,
                const CameraModel& cam, const TrackerConfig& cfg);

/// CSV rows `frame,stage,track,detection,score` for every match.
void write_match_trace(std::ostream& os, int frame, const std::string& stage, const MatchSet& m);

}  // namespace afftrack
