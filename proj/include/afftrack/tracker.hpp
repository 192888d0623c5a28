#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "afftrack/association.hpp"
#include "afftrack/geometry.hpp"
#include "afftrack/interaction.hpp"
#include "afftrack/motion.hpp"
#include "afftrack/simgen.hpp"

namespace afftrack {

/// Marks the younger track of every same-class pair with 3D IoU above
/// tau_rej as dead. Pairs are visited in descending IoU; a pair whose member
/// already died is skipped; equal ages keep the lower track id. Returns the
/// indices of the rejected tracks in rejection order.
std::vector<int> reject_overlaps(std::span<Track> tracks, const TrackerConfig& cfg);

/// Convenience form returning only the survivors.
std::vector<Track> surviving_tracks(std::vector<Track> tracks, const TrackerConfig& cfg);

struct FrameInput {
  std::span<const Detection> detections;
  std::span<const Detection2D> detections2d;
  const PointCloud* cloud = nullptr;
  double dt = 0.5;
};

/// What the last step did, for debugging dumps.
struct FrameTrace {
  int frame = 0;
  std::vector<int> track_ids;  // rows of `scores`, stage-1 track indices
  nn::Matrix scores;           // affinity or scaled distance
  ScoreKind kind = ScoreKind::affinity;
  FusionResult fusion;
  MatchSet stage1;
  MatchSet stage2;  // indices into the stage-1 unmatched tracks / unfused 2D boxes
  std::vector<int> rejected_ids;
};

/// Online tracker for one sequence. Not thread-safe; run one instance per
/// sequence.
class Tracker {
 public:
  /// `model` is required for the learned, cosine and inner-product affinities
  /// and must outlive the tracker.
  Tracker(const TrackerConfig& cfg, const CameraModel& cam, const AffinityModel* model = nullptr);

  /// Runs one frame and returns the confirmed tracks matched in it.
  std::vector<Track> step(const FrameInput& in);

  /// Live (tentative and confirmed) tracks.
  std::vector<Track> tracks() const;
  int frame() const { return frame_; }
  const FrameTrace& last_trace() const { return trace_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  struct Live {
    Track track;
    KalmanState kalman;
  };

  nn::Matrix affinity_scores(std::span<const ObjectState> previous,
                             std::span<const ObjectState> predicted,
                             std::span<const Detection> dets, const PointCloud& cloud) const;

  TrackerConfig cfg_;
  CameraModel cam_;
  const AffinityModel* model_;
  KalmanNoise noise_;
  std::vector<Live> live_;
  PointCloud previous_cloud_;
  int next_id_ = 1;
  int frame_ = 0;
  FrameTrace trace_;
};

/// Called after every frame with the tracker and the frame index.
using FrameObserver = std::function<void(const Tracker&, int)>;

/// Tracks a whole scenario; returns the emitted boxes per frame with track
/// ids as box ids and the last detection score as confidence.
LabeledSequence run_sequence(const Scenario& s, const TrackerConfig& cfg,
                             const AffinityModel* model = nullptr,
                             const FrameObserver& observer = {});

/// One row of the tracking ablation grid.
struct AblationRow {
  std::string tag;
  MatcherKind matcher;
  bool rejection;
  AffinityKind affinity;
  MotionKind motion;

  TrackerConfig apply(TrackerConfig base) const;
};

/// For each matcher (greedy rows "a", Hungarian rows "b"): heuristic + Kalman
/// without rejection, then with rejection, then learned + Kalman, then
/// learned + velocity.
std::vector<AblationRow> ablation_grid();

}  // namespace afftrack
