#include "afftrack/features.hpp"

#include <algorithm>
#include <cmath>

#include "afftrack/geometry.hpp"

namespace afftrack {

ShapeDescriptor shape_descriptor(const ObjectState& box, const PointCloud& cloud) {
  ShapeDescriptor d{};
  const double radius2 = 0.25 * (box.l * box.l + box.w * box.w + box.h * box.h);
  double n = 0.0;
  std::array<double, 3> sum{}, sum2{};
  double refl = 0.0, age = 0.0;
  std::array<double, 9> cells{};
  for (const auto& p : cloud.points) {
    const double dx = p.x - box.x, dy = p.y - box.y, dz = p.z - box.z;
    if (dx * dx + dy * dy + dz * dz > radius2) continue;
    if (!contains_point(box, p.x, p.y, p.z)) continue;
    const auto q = to_box_frame(box, p.x, p.y, p.z);
    n += 1.0;
    for (int a = 0; a < 3; ++a) {
      sum[a] += q[a];
      sum2[a] += q[a] * q[a];
    }
    refl += p.r;
    age += std::abs(p.dt);
    const int i = std::clamp(static_cast<int>(std::floor((q[0] + 0.5 * box.l) / (box.l / 3.0))), 0, 2);
    const int j = std::clamp(static_cast<int>(std::floor((q[1] + 0.5 * box.w) / (box.w / 3.0))), 0, 2);
    cells[3 * i + j] += 1.0;
  }
  if (n == 0.0) return d;
  d[0] = std::log1p(n);
  for (int a = 0; a < 3; ++a) {
    const double mean = sum[a] / n;
    d[1 + a] = mean;
    d[4 + a] = std::sqrt(std::max(0.0, sum2[a] / n - mean * mean));
  }
  d[7] = refl / n;
  d[8] = age / n;
  for (int k = 0; k < 9; ++k) d[9 + k] = cells[k] / n;
  return d;
}

nn::Matrix state_matrix(std::span<const ObjectState> states) {
  nn::Matrix m(static_cast<Eigen::Index>(states.size()), kStateDim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto row = states[i].to_array();
    for (int c = 0; c < kStateDim; ++c) m(static_cast<Eigen::Index>(i), c) = row[c];
  }
  return m;
}

nn::Matrix shape_matrix(std::span<const ObjectState> states, const PointCloud& cloud) {
  nn::Matrix m(static_cast<Eigen::Index>(states.size()), kShapeDim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto d = shape_descriptor(states[i], cloud);
    for (int c = 0; c < kShapeDim; ++c) m(static_cast<Eigen::Index>(i), c) = d[c];
  }
  return m;
}

FeatureExtractor::FeatureExtractor(int channels, nn::Rng& rng) : channels_(channels) {
  if (channels < 2 || channels % 2 != 0)
    throw ContractError("feature channel count must be even and >= 2");
  state_ffn = nn::FFNBlock("features.state", kStateDim, channels, channels / 2, rng);
  shape_ffn = nn::FFNBlock("features.shape", kShapeDim, channels, channels / 2, rng);
}

nn::Matrix FeatureExtractor::state_features(const nn::Matrix& states, nn::Mode mode,
                                            nn::FFNBlock::Cache* cache) const {
  if (states.rows() == 0) return nn::Matrix(0, channels_ / 2);
  return state_ffn.forward(states, mode, cache);
}

nn::Matrix FeatureExtractor::shape_features(const nn::Matrix& shapes, nn::Mode mode,
                                            nn::FFNBlock::Cache* cache) const {
  if (shapes.rows() == 0) return nn::Matrix(0, channels_ / 2);
  return shape_ffn.forward(shapes, mode, cache);
}

nn::Matrix FeatureExtractor::forward(const nn::Matrix& states, const nn::Matrix& shapes,
                                     nn::Mode mode, Cache* cache) const {
  if (states.rows() != shapes.rows()) throw ContractError("state/shape row count mismatch");
  if (states.rows() == 0) {
    if (cache) cache->valid = false;
    return nn::Matrix(0, channels_);
  }
  const nn::Matrix st = state_features(states, mode, cache ? &cache->state : nullptr);
  const nn::Matrix sh = shape_features(shapes, mode, cache ? &cache->shape : nullptr);
  nn::Matrix out(states.rows(), channels_);
  out << st, sh;
  if (cache) cache->valid = true;
  return out;
}

void FeatureExtractor::backward(const Cache& cache, const nn::Matrix& dfeat) {
  if (dfeat.rows() == 0) return;
  if (!cache.valid) throw StateError("FeatureExtractor: backward called before forward");
  const int half = channels_ / 2;
  state_ffn.backward(cache.state, dfeat.leftCols(half));
  shape_ffn.backward(cache.shape, dfeat.rightCols(half));
}

void FeatureExtractor::collect(nn::ParamList& out) {
  state_ffn.collect(out);
  shape_ffn.collect(out);
}

void FeatureExtractor::collect_buffers(nn::ParamList& out) {
  state_ffn.collect_buffers(out);
  shape_ffn.collect_buffers(out);
}

nn::Matrix extract_state_features(std::span<const ObjectState> states, const FeatureExtractor& fx,
                                  nn::Mode mode) {
  return fx.state_features(state_matrix(states), mode);
}

nn::Matrix extract_shape_features(std::span<const ObjectState> states, const PointCloud& cloud,
                                  const FeatureExtractor& fx, nn::Mode mode) {
  return fx.shape_features(shape_matrix(states, cloud), mode);
}

nn::Matrix object_features(std::span<const ObjectState> states, const PointCloud& cloud,
                           const FeatureExtractor& fx, nn::Mode mode) {
  return fx.forward(state_matrix(states), shape_matrix(states, cloud), mode);
}

}  // namespace afftrack
