#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "afftrack/core.hpp"

namespace afftrack::nn {

/// Row-major semantics: one row per sample (object or object pair), one
/// column per channel.
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Rng = std::mt19937_64;

enum class Mode { train, eval };

/// A trainable tensor and its gradient accumulator.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

/// Non-owning view of every parameter of a model, in a stable order.
using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);

Matrix relu(const Matrix& x);
/// Gradient of ReLU given its input.
Matrix relu_backward(const Matrix& x, const Matrix& dy);
Matrix sigmoid(const Matrix& x);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& x);
/// Gradient of softmax_rows given its output `p`.
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp);

// ---------------------------------------------------------------------------

class Linear {
 public:
  struct Cache {
    Matrix x;
    bool valid = false;
  };

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  /// y = x W^T + b
  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  /// Accumulates dW, db; returns dL/dx.
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param weight;  // out x in
  Param bias;    // 1 x out
};

/// Batch normalization over the row (object) axis.
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates; a single-row batch falls back to the running estimates.
/// Eval mode uses the running estimates only and never mutates the layer.
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  struct Cache {
    Matrix xhat;
    RowVector inv_std;
    bool batch_stats = false;
    bool valid = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels);

  Matrix forward(const Matrix& x, Mode mode, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);
  void collect_buffers(ParamList& out);

  Param gamma;  // 1 x C
  Param beta;   // 1 x C
  // Running estimates are updated by train-mode forward passes only.
  mutable Param running_mean;
  mutable Param running_var;
};

/// Linear -> BatchNorm -> ReLU.
class LinearBnRelu {
 public:
  struct Cache {
    Linear::Cache lin;
    BatchNorm::Cache bn;
    Matrix pre;  // BN output, ReLU input
    bool valid = false;
  };

  LinearBnRelu() = default;
  LinearBnRelu(const std::string& name, int in, int out, Rng& rng);

  Matrix forward(const Matrix& x, Mode mode, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);
  void collect_buffers(ParamList& out);

  Linear linear;
  BatchNorm bn;
};

/// Two Linear-BatchNorm-ReLU stages, used to change the channel count.
class FFNBlock {
 public:
  struct Cache {
    LinearBnRelu::Cache first, second;
    bool valid = false;
  };

  FFNBlock() = default;
  FFNBlock(const std::string& name, int in, int hidden, int out, Rng& rng);

  int in_features() const { return first.linear.in_features(); }
  int out_features() const { return second.linear.out_features(); }

  Matrix forward(const Matrix& x, Mode mode, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);
  void collect_buffers(ParamList& out);

  LinearBnRelu first, second;
};

/// Per-row layer normalization with learnable scale and shift.
class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  struct Cache {
    Matrix xhat;
    Eigen::VectorXd inv_std;  // per row
    bool valid = false;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int channels);

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param gamma, beta;
};

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// One-cycle learning rate: linear warmup from peak/div_factor to peak over
/// the first `warmup_fraction` of steps, then cosine annealing down to
/// peak/(div_factor*final_div_factor) at the last step.
struct OneCycleSchedule {
  double peak_lr = 0.03;
  long total_steps = 1;
  double warmup_fraction = 0.5;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  long peak_step() const;
  double lr(long step) const;
};

/// Adam with bias correction; step() consumes the accumulated gradients.
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  explicit Adam(const ParamList& params);

  /// Throws NumericError if any gradient is non-finite.
  void step(const ParamList& params, double lr);

  long steps_taken() const { return t_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  void set_steps_taken(long t) { t_ = t; }

 private:
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace afftrack::nn
