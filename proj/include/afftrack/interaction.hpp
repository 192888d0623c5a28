#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "afftrack/checkpoint.hpp"
#include "afftrack/core.hpp"
#include "afftrack/features.hpp"
#include "afftrack/nn.hpp"

namespace afftrack {

using AffinityMatrix = nn::Matrix;  // M x N, entries in (0, 1)
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

enum class NormPlacement { pre, post };

/// Multi-head attention block. Queries come from `a`, keys and values from
/// `b`, with MHA(x, y) = Wo * concat_h(softmax(Q_h K_h^T / sqrt(C/H)) V_h).
///
///   post:  h = LN1(a + MHA(a, b));          out = LN2(h + FFN(h))
///   pre:   h = a + MHA(LN1(a), LN1(b));     out = h + FFN(LN2(h))
///
/// An empty `b` leaves `a` unchanged.
class AttentionBlock {
 public:
  struct Cache {
    nn::Linear::Cache q, k, v, o, ff1, ff2;
    nn::LayerNorm::Cache norm1, norm1b, norm2;
    nn::Matrix Q, K, V;
    std::vector<nn::Matrix> attn;  // per head, rows(a) x rows(b)
    nn::Matrix ff_pre;
    bool passthrough = false;
    bool valid = false;
  };

  AttentionBlock() = default;
  AttentionBlock(const std::string& name, int channels, int heads, NormPlacement norm,
                 nn::Rng& rng);

  int channels() const { return channels_; }
  int heads() const { return heads_; }
  NormPlacement norm_placement() const { return norm_; }

  nn::Matrix forward(const nn::Matrix& a, const nn::Matrix& b, Cache* cache = nullptr) const;
  /// Returns (dL/da, dL/db). For self-attention the caller sums both.
  std::pair<nn::Matrix, nn::Matrix> backward(const Cache& cache, const nn::Matrix& dout);
  void collect(nn::ParamList& out);

  nn::Linear q, k, v, o;
  nn::LayerNorm norm1;
  nn::Linear ff1, ff2;
  nn::LayerNorm norm2;

 private:
  int channels_ = 0;
  int heads_ = 1;
  NormPlacement norm_ = NormPlacement::pre;
};

/// N_c interleaved passes; each pass runs self(t), self(d), cross(t<-d),
/// cross(d<-t) in that order. The self block of a pass is shared by both
/// streams and the cross block by both directions.
class InteractionTransformer {
 public:
  struct Cache {
    std::vector<AttentionBlock::Cache> steps;  // 4 per pass
    bool valid = false;
  };

  InteractionTransformer() = default;
  InteractionTransformer(int channels, int heads, int passes, NormPlacement norm, nn::Rng& rng);

  int passes() const { return static_cast<int>(self_blocks.size()); }

  std::pair<nn::Matrix, nn::Matrix> forward(const nn::Matrix& t, const nn::Matrix& d,
                                            Cache* cache = nullptr) const;
  std::pair<nn::Matrix, nn::Matrix> backward(const Cache& cache, const nn::Matrix& dt,
                                             const nn::Matrix& dd);
  void collect(nn::ParamList& out);

  std::vector<AttentionBlock> self_blocks;
  std::vector<AttentionBlock> cross_blocks;
};

// ---------------------------------------------------------------------------
// Affinity providers
// ---------------------------------------------------------------------------

/// Learned affinity head: every (track, detection) feature pair is
/// concatenated, reduced by Linear-BN-ReLU then Linear to one channel, and
/// squashed by a sigmoid.
class AffinityHead {
 public:
  struct Cache {
    nn::LinearBnRelu::Cache hidden;
    nn::Linear::Cache out;
    nn::Matrix affinity;
    bool valid = false;
  };

  AffinityHead() = default;
  AffinityHead(int channels, nn::Rng& rng);

  AffinityMatrix forward(const nn::Matrix& t, const nn::Matrix& d, nn::Mode mode,
                         Cache* cache = nullptr) const;
  std::pair<nn::Matrix, nn::Matrix> backward(const Cache& cache, const nn::Matrix& dA,
                                             Eigen::Index m, Eigen::Index n);
  void collect(nn::ParamList& out);
  void collect_buffers(nn::ParamList& out);

  nn::LinearBnRelu hidden;
  nn::Linear out;
};

/// Pairwise cosine similarity in [-1, 1]; zero-norm rows score 0.
nn::Matrix cosine_affinity(const nn::Matrix& t, const nn::Matrix& d);
/// Pairwise dot products.
nn::Matrix inner_product_affinity(const nn::Matrix& t, const nn::Matrix& d);

/// Scaled Euclidean distance: ||c_t - c_d|| * (2 - cos(theta_t - theta_d)).
struct HeuristicScores {
  nn::Matrix distance;  // lower is better
  BoolMatrix compatible;  // distance <= tau_3d (per detection class)
};
nn::Matrix scaled_distance(std::span<const ObjectState> tracks, std::span<const ObjectState> dets);
HeuristicScores heuristic_affinity(std::span<const ObjectState> tracks,
                                   std::span<const ObjectState> dets, const TrackerConfig& cfg);

// ---------------------------------------------------------------------------
// Full network
// ---------------------------------------------------------------------------

enum class FeatureMixer { transformer, independent };
enum class HeadKind { ffn, cosine, inner_product };

std::string to_string(FeatureMixer m);
std::string to_string(HeadKind h);
std::string to_string(NormPlacement n);
FeatureMixer parse_mixer(const std::string& s);
HeadKind parse_head(const std::string& s);
NormPlacement parse_norm(const std::string& s);

struct ModelConfig {
  int channels = 16;
  int heads = 4;
  int passes = 4;  // N_c
  FeatureMixer mixer = FeatureMixer::transformer;
  HeadKind head = HeadKind::ffn;
  NormPlacement norm = NormPlacement::pre;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One association problem: tracks at t-1 with their cloud, detections at t
/// with theirs.
struct PairInput {
  std::span<const ObjectState> tracks;
  const PointCloud* track_cloud = nullptr;
  std::span<const ObjectState> detections;
  const PointCloud* detection_cloud = nullptr;
};

struct PairOutput {
  nn::Matrix track_features;      // interaction-aware, M x C
  nn::Matrix detection_features;  // interaction-aware, N x C
  nn::Matrix scores;              // head output before calibration (cosine / inner kinds)
  AffinityMatrix affinity;        // M x N in (0, 1)
};

/// Feature extraction, interaction transformer (or per-object bypass) and
/// affinity head. Tracks and detections share the feature networks and are
/// normalized as one batch. Positions are expressed relative to the mean
/// object position of the pair before entering the state network.
class AffinityModel {
 public:
  struct Cache {
    FeatureExtractor::Cache features;
    InteractionTransformer::Cache transformer;
    AffinityHead::Cache head;
    PairOutput output;
    Eigen::Index m = 0, n = 0;
    bool valid = false;
  };

  explicit AffinityModel(const ModelConfig& cfg = {});

  const ModelConfig& config() const { return cfg_; }

  PairOutput forward(const PairInput& in, nn::Mode mode, Cache* cache = nullptr) const;
  /// Backpropagates dL/dA into the parameter gradients.
  void backward(const Cache& cache, const nn::Matrix& dA);

  nn::ParamList parameters();
  nn::ParamList buffers();

  nn::Checkpoint to_checkpoint() const;
  static AffinityModel from_checkpoint(const nn::Checkpoint& ckpt);

  FeatureExtractor features;
  InteractionTransformer transformer;
  AffinityHead head;
  // Affine calibration sigmoid(scale * score + shift) for the cosine and
  // inner-product heads.
  nn::Param calibration;

 private:
  ModelConfig cfg_;
};

/// Raw (pre-mixing) state rows with positions centered on the pair mean.
nn::Matrix centered_state_rows(std::span<const ObjectState> tracks,
                               std::span<const ObjectState> dets);

}  // namespace afftrack
