#include "afftrack/nn.hpp"

#include <cmath>
#include <numbers>

namespace afftrack::nn {

void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  return (x.array() > 0.0).select(dy, 0.0);
}

Matrix sigmoid(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
  const Eigen::VectorXd dot = (p.array() * dp.array()).rowwise().sum();
  return p.array() * (dp.colwise() - dot).array();
}

// ---------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(out, in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  Matrix b(1, out);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = dist(rng);
  weight = Param(name + ".weight", std::move(w));
  bias = Param(name + ".bias", std::move(b));
}

Matrix Linear::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != weight.value.cols())
    throw ContractError(weight.name + ": expected " + std::to_string(weight.value.cols()) +
                        " input channels, got " + std::to_string(x.cols()));
  if (cache) {
    cache->x = x;
    cache->valid = true;
  }
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Cache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError(weight.name + ": backward called before forward");
  weight.grad.noalias() += dy.transpose() * cache.x;
  bias.grad += dy.colwise().sum();
  return dy * weight.value;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", Matrix::Ones(1, channels)),
      beta(name + ".beta", Matrix::Zero(1, channels)),
      running_mean(name + ".running_mean", Matrix::Zero(1, channels)),
      running_var(name + ".running_var", Matrix::Ones(1, channels)) {}

Matrix BatchNorm::forward(const Matrix& x, Mode mode, Cache* cache) const {
  const Eigen::Index n = x.rows();
  if (x.cols() != gamma.value.cols())
    throw ContractError(gamma.name + ": channel mismatch");
  const bool batch = mode == Mode::train && n > 1;
  RowVector mean, var;
  if (batch) {
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    running_mean.value = (1.0 - kMomentum) * running_mean.value + kMomentum * mean;
    running_var.value = (1.0 - kMomentum) * running_var.value + kMomentum * unbias * var;
  } else {
    mean = running_mean.value.row(0);
    var = running_var.value.row(0);
  }
  const RowVector inv_std = (var.array() + kEpsilon).rsqrt();
  Matrix xhat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
  Matrix y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
    cache->batch_stats = batch;
    cache->valid = true;
  }
  return y;
}

Matrix BatchNorm::backward(const Cache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError(gamma.name + ": backward called before forward");
  gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  if (!cache.batch_stats) return dxhat.array().rowwise() * cache.inv_std.array();
  const double n = static_cast<double>(dy.rows());
  const RowVector sum_dxhat = dxhat.colwise().sum();
  const RowVector sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum();
  Matrix dx = (n * dxhat.array()).rowwise() - sum_dxhat.array();
  dx.array() -= cache.xhat.array().rowwise() * sum_dxhat_xhat.array();
  dx.array().rowwise() *= (cache.inv_std.array() / n);
  return dx;
}

void BatchNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

void BatchNorm::collect_buffers(ParamList& out) {
  out.push_back(&running_mean);
  out.push_back(&running_var);
}

// ---------------------------------------------------------------------------

LinearBnRelu::LinearBnRelu(const std::string& name, int in, int out, Rng& rng)
    : linear(name + ".linear", in, out, rng), bn(name + ".bn", out) {}

Matrix LinearBnRelu::forward(const Matrix& x, Mode mode, Cache* cache) const {
  Matrix h = linear.forward(x, cache ? &cache->lin : nullptr);
  Matrix pre = bn.forward(h, mode, cache ? &cache->bn : nullptr);
  Matrix y = relu(pre);
  if (cache) {
    cache->pre = std::move(pre);
    cache->valid = true;
  }
  return y;
}

Matrix LinearBnRelu::backward(const Cache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError(linear.weight.name + ": backward called before forward");
  return linear.backward(cache.lin, bn.backward(cache.bn, relu_backward(cache.pre, dy)));
}

void LinearBnRelu::collect(ParamList& out) {
  linear.collect(out);
  bn.collect(out);
}

void LinearBnRelu::collect_buffers(ParamList& out) { bn.collect_buffers(out); }

// ---------------------------------------------------------------------------

FFNBlock::FFNBlock(const std::string& name, int in, int hidden, int out, Rng& rng)
    : first(name + ".0", in, hidden, rng), second(name + ".1", hidden, out, rng) {}

Matrix FFNBlock::forward(const Matrix& x, Mode mode, Cache* cache) const {
  Matrix h = first.forward(x, mode, cache ? &cache->first : nullptr);
  Matrix y = second.forward(h, mode, cache ? &cache->second : nullptr);
  if (cache) cache->valid = true;
  return y;
}

Matrix FFNBlock::backward(const Cache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError("FFNBlock: backward called before forward");
  return first.backward(cache.first, second.backward(cache.second, dy));
}

void FFNBlock::collect(ParamList& out) {
  first.collect(out);
  second.collect(out);
}

void FFNBlock::collect_buffers(ParamList& out) {
  first.collect_buffers(out);
  second.collect_buffers(out);
}

// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(const std::string& name, int channels)
    : gamma(name + ".gamma", Matrix::Ones(1, channels)),
      beta(name + ".beta", Matrix::Zero(1, channels)) {}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != gamma.value.cols()) throw ContractError(gamma.name + ": channel mismatch");
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + kEpsilon).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix y = xhat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
    cache->valid = true;
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  if (!cache.valid) throw StateError(gamma.name + ": backward called before forward");
  gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad += dy.colwise().sum();
  const double c = static_cast<double>(dy.cols());
  const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  Matrix dx = (c * dxhat.array()).colwise() - sum_dxhat.array();
  dx.array() -= cache.xhat.array().colwise() * sum_dxhat_xhat.array();
  dx.array().colwise() *= (cache.inv_std.array() / c);
  return dx;
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---------------------------------------------------------------------------

long OneCycleSchedule::peak_step() const {
  return static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total_steps - 1)));
}

double OneCycleSchedule::lr(long step) const {
  const double start = peak_lr / div_factor;
  const double end = start / final_div_factor;
  if (total_steps <= 1) return peak_lr;
  const long peak = peak_step();
  if (step <= peak) {
    if (peak == 0) return peak_lr;
    const double t = static_cast<double>(step) / static_cast<double>(peak);
    return start + t * (peak_lr - start);
  }
  const long last = total_steps - 1;
  const double t = static_cast<double>(std::min(step, last) - peak) / static_cast<double>(last - peak);
  return end + 0.5 * (peak_lr - end) * (1.0 + std::cos(std::numbers::pi * t));
}

Adam::Adam(const ParamList& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Param* p : params) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(const ParamList& params, double lr) {
  if (params.size() != m_.size()) throw ContractError("Adam: parameter list changed");
  for (const Param* p : params) {
    if (!p->grad.allFinite()) throw NumericError("Adam: non-finite gradient in " + p->name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * p.grad;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + epsilon);
  }
}

}  // namespace afftrack::nn
