#pragma once

#include <array>
#include <span>

#include "afftrack/core.hpp"
#include "afftrack/nn.hpp"

namespace afftrack {

/// Fixed-length summary of the points inside an object's box:
///   [0]      log1p(point count)
///   [1..3]   centroid offset from the box center, box frame (m)
///   [4..6]   per-axis standard deviation, box frame (m)
///   [7]      mean reflectance
///   [8]      mean |dt|
///   [9..17]  fraction of points per cell of a 3x3 BEV grid over the box
/// All zeros when the box holds no points.
inline constexpr int kShapeDim = 18;
using ShapeDescriptor = std::array<double, kShapeDim>;

ShapeDescriptor shape_descriptor(const ObjectState& box, const PointCloud& cloud);

/// One row per object: the 11 state fields.
nn::Matrix state_matrix(std::span<const ObjectState> states);
/// One row per object: its shape descriptor.
nn::Matrix shape_matrix(std::span<const ObjectState> states, const PointCloud& cloud);

/// Shared state and shape networks producing C-channel object features,
/// C/2 from each.
class FeatureExtractor {
 public:
  struct Cache {
    nn::FFNBlock::Cache state, shape;
    bool valid = false;
  };

  FeatureExtractor() = default;
  FeatureExtractor(int channels, nn::Rng& rng);

  int channels() const { return channels_; }

  nn::Matrix state_features(const nn::Matrix& states, nn::Mode mode,
                            nn::FFNBlock::Cache* cache = nullptr) const;
  nn::Matrix shape_features(const nn::Matrix& shapes, nn::Mode mode,
                            nn::FFNBlock::Cache* cache = nullptr) const;
  /// [state_features | shape_features]
  nn::Matrix forward(const nn::Matrix& states, const nn::Matrix& shapes, nn::Mode mode,
                     Cache* cache = nullptr) const;
  /// Accumulates parameter gradients. Inputs are not differentiated.
  void backward(const Cache& cache, const nn::Matrix& dfeat);

  void collect(nn::ParamList& out);
  void collect_buffers(nn::ParamList& out);

  nn::FFNBlock state_ffn;
  nn::FFNBlock shape_ffn;

 private:
  int channels_ = 0;
};

nn::Matrix extract_state_features(std::span<const ObjectState> states,
                                  const FeatureExtractor& fx, nn::Mode mode = nn::Mode::eval);
nn::Matrix extract_shape_features(std::span<const ObjectState> states, const PointCloud& cloud,
                                  const FeatureExtractor& fx, nn::Mode mode = nn::Mode::eval);
nn::Matrix object_features(std::span<const ObjectState> states, const PointCloud& cloud,
                           const FeatureExtractor& fx, nn::Mode mode = nn::Mode::eval);

}  // namespace afftrack
