#pragma once

#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "afftrack/core.hpp"
#include "afftrack/interaction.hpp"
#include "afftrack/simgen.hpp"

namespace afftrack {

/// Ground truth and predictions of one sequence, frame aligned. Prediction
/// confidences are read from `state.score`.
struct EvalSequence {
  LabeledSequence gt;
  LabeledSequence pred;
};

/// How a GT box and a prediction are compared.
struct MatchCriterion {
  enum class Kind { center_distance, iou_3d };
  Kind kind = Kind::center_distance;
  double threshold = 2.0;  // max BEV distance (m), or min 3D IoU

  bool admits(const ObjectState& gt, const ObjectState& pred) const;
  /// Non-negative; lower is better.
  double cost(const ObjectState& gt, const ObjectState& pred) const;
};

struct ClearMot {
  long gt = 0, tp = 0, fp = 0, fn = 0, ids = 0;
  double distance_sum = 0.0;  // over TPs, BEV center distance

  double mota() const;
  double recall() const;
  double mean_distance() const;
};

/// CLEAR-MOT counts over all sequences using predictions with score >=
/// `min_score`. Per frame, previous correspondences still admitted are kept,
/// the rest are matched by minimum-cost assignment. Only same-class pairs
/// match. An id switch is counted when a GT object's matched prediction id
/// differs from the one it was last matched to.
ClearMot clear_mot(std::span<const EvalSequence> seqs, const MatchCriterion& crit = {},
                   double min_score = -std::numeric_limits<double>::infinity());

struct Amota {
  double amota = 0.0;
  double amotp = 0.0;
  double mota_best = 0.0;
  long ids_at_best = 0;
  double best_threshold = 0.0;
  std::vector<double> motar;  // one per recall target k/40
};

inline constexpr int kRecallSteps = 40;

/// Recall sweep over targets k/40. The confidence threshold for a target is
/// the score of the ceil(r*GT)-th highest-scoring true positive of the
/// all-predictions matching; unreachable targets score MOTAR 0 and
/// AMOTP contribution equal to the match threshold.
Amota amota_amotp(std::span<const EvalSequence> seqs, const MatchCriterion& crit = {});

struct Hota {
  double hota = 0.0, deta = 0.0, assa = 0.0;
  std::vector<double> hota_alpha, deta_alpha, assa_alpha;  // one per alpha
};

/// Localization thresholds 0.05, 0.10, ..., 0.95.
std::vector<double> hota_alphas();

/// HOTA with 3D IoU similarity (same class only), all predictions used.
Hota hota(std::span<const EvalSequence> seqs);

struct ClassMetrics {
  double amota = 0.0, amotp = 0.0, mota_best = 0.0;
  long ids_at_best = 0;
  double hota = 0.0, deta = 0.0, assa = 0.0;
  ClearMot counts;  // all predictions
};

struct MetricReport {
  double amota = 0.0, amotp = 0.0, mota_best = 0.0;
  long ids_at_best = 0;
  double hota = 0.0, deta = 0.0, assa = 0.0;
  ClearMot counts;
  std::map<int, ClassMetrics> per_class;
};

/// Per-class metrics for every class present in the ground truth; overall
/// values are class means, except id switches and counts which are summed.
MetricReport evaluate(std::span<const EvalSequence> seqs, const MatchCriterion& crit = {});

/// Keeps only the boxes of one class.
EvalSequence filter_class(const EvalSequence& s, int class_id);

void write_report(std::ostream& os, const MetricReport& r);
void write_report_csv(std::ostream& os, const MetricReport& r);

// ---------------------------------------------------------------------------
// Feature discrimination
// ---------------------------------------------------------------------------

inline constexpr int kHistogramBins = 64;

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<double> a, b;  // normalized counts of the two populations
};

/// Both populations binned over their pooled [min, max].
Histogram pooled_histogram(std::span<const double> a, std::span<const double> b,
                           int bins = kHistogramBins);
/// Jensen-Shannon divergence of two discrete distributions, base 2.
double jsd(std::span<const double> p, std::span<const double> q);
/// JSD of the pooled histograms of two samples.
double jsd_samples(std::span<const double> a, std::span<const double> b, int bins = kHistogramBins);

struct Population {
  std::vector<double> same, different;
  double mean_same = 0.0, mean_different = 0.0;
  double jsd = 0.0;
  Histogram histogram;
};

struct DiscriminationReport {
  Population cosine;    // between interaction-aware features
  Population affinity;  // head output
  bool complete = false;  // both populations non-empty
};

/// Splits cosine similarities and affinities into same-object and
/// different-object (same class) pairs. Ids < 0 mark objects without GT.
void accumulate_discrimination(DiscriminationReport& r, const nn::Matrix& features_t,
                               const nn::Matrix& features_d, const nn::Matrix& affinity,
                               std::span<const int> ids_t, std::span<const int> ids_d,
                               std::span<const int> class_t, std::span<const int> class_d);
/// Fills means, histograms and JSD.
void finalize_discrimination(DiscriminationReport& r);

/// Runs the model on every frame pair of `scenarios` (previous detections as
/// tracks) and reports the discrimination statistics.
DiscriminationReport discrimination_report(const AffinityModel& model,
                                           std::span<const Scenario> scenarios, double tau_gt);

void write_discrimination(std::ostream& os, const DiscriminationReport& r);
void write_histograms_csv(std::ostream& os, const DiscriminationReport& r);

}  // namespace afftrack
