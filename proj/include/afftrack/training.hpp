#pragma once

#include <functional>
#include <span>
#include <vector>

#include "afftrack/checkpoint.hpp"
#include "afftrack/interaction.hpp"
#include "afftrack/simgen.hpp"

namespace afftrack {

/// Ground-truth association targets for one frame pair.
struct AffinityLabel {
  nn::Matrix target;             // M x N, 1 where both objects carry the same GT id
  std::vector<int> previous_ids;  // GT id per previous object, -1 if unmatched
  std::vector<int> current_ids;   // GT id per current object, -1 if unmatched
};

/// Greedy, by descending IoU, same class only, IoU strictly above `tau_gt`.
/// Returns the GT id for every object, -1 when unmatched.
std::vector<int> match_to_gt(std::span<const ObjectState> objects, std::span<const LabeledBox> gt,
                             double tau_gt);

AffinityLabel make_labels(std::span<const ObjectState> previous, std::span<const ObjectState> current,
                          std::span<const LabeledBox> gt_previous,
                          std::span<const LabeledBox> gt_current, double tau_gt);

struct FocalLoss {
  double loss = 0.0;
  nn::Matrix grad;  // dL/dA
  int clamped = 0;  // entries clamped away from 0 or 1
};

/// Mean binary focal loss over all M*N cells:
///   FL(p, 1) = -alpha (1-p)^gamma log p
///   FL(p, 0) = -(1-alpha) p^gamma log(1-p)
/// Probabilities are clamped to [1e-7, 1 - 1e-7].
FocalLoss focal_loss(const nn::Matrix& A, const nn::Matrix& target, double alpha, double gamma);

/// Adds independent N(0, sigma^2) offsets to x and y.
std::vector<ObjectState> perturb_positions(std::span<const ObjectState> objects, double sigma_x,
                                           double sigma_y, nn::Rng& rng);

/// Removes round(d * N) uniformly chosen objects with d ~ U(d_min, d_max).
/// Survivors keep their relative order.
std::vector<ObjectState> dropout_detections(std::span<const ObjectState> objects, double d_min,
                                            double d_max, nn::Rng& rng);

/// A (scenario, frame) pair: detections at frame-1 stand in for tracks.
struct FramePair {
  int scenario = 0;
  int frame = 1;
};

std::vector<FramePair> frame_pairs(std::span<const Scenario> scenarios);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  long steps = 0;  // optimizer steps taken after this epoch
};

/// Runs the training loop with Adam on a one-cycle schedule. The schedule
/// covers all epochs of `train_cfg`; resuming continues it where it stopped.
class Trainer {
 public:
  Trainer(AffinityModel& model, std::span<const Scenario> scenarios, const TrainConfig& train_cfg,
          const TrackerConfig& tracker_cfg);

  /// Restores optimizer moments and progress saved by `save_state`.
  void load_state(const nn::Checkpoint& ckpt);
  /// Model weights plus optimizer state and loss history.
  nn::Checkpoint checkpoint() const;

  /// Trains one epoch. Throws NumericError on a non-finite loss.
  EpochStats run_epoch();
  /// Trains until `train_cfg.epochs` epochs are done.
  std::vector<EpochStats> run(const std::function<void(const EpochStats&)>& on_epoch = {});

  int epochs_done() const { return epochs_done_; }
  const std::vector<double>& loss_curve() const { return loss_curve_; }

 private:
  AffinityModel& model_;
  std::span<const Scenario> scenarios_;
  TrainConfig cfg_;
  TrackerConfig tracker_cfg_;
  std::vector<FramePair> pairs_;
  nn::ParamList params_;
  nn::Adam adam_;
  nn::OneCycleSchedule schedule_;
  int epochs_done_ = 0;
  std::vector<double> loss_curve_;
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean loss per epoch
  long steps = 0;
};

TrainResult train(AffinityModel& model, std::span<const Scenario> scenarios,
                  const TrainConfig& train_cfg, const TrackerConfig& tracker_cfg);

/// Fraction of cells where (A > 0.5) agrees with the label, over every frame
/// pair of `scenarios`, evaluated without augmentation.
double label_accuracy(const AffinityModel& model, std::span<const Scenario> scenarios,
                      const TrackerConfig& tracker_cfg);

/// Eval-mode affinity for one frame pair with detections at frame-1 standing
/// in for tracks.
PairOutput evaluate_pair(const AffinityModel& model, const Scenario& s, int frame);

}  // namespace afftrack
