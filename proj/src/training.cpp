#include "afftrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "afftrack/geometry.hpp"
#include "afftrack/io.hpp"

namespace afftrack {

std::vector<int> match_to_gt(std::span<const ObjectState> objects, std::span<const LabeledBox> gt,
                             double tau_gt) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < objects.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (objects[i].class_id != gt[j].state.class_id) continue;
      const double iou = iou_3d(objects[i], gt[j].state);
      if (iou > tau_gt) cand.emplace_back(-iou, i, j);
    }
  std::sort(cand.begin(), cand.end());
  std::vector<int> ids(objects.size(), -1);
  std::vector<char> gt_used(gt.size(), 0);
  for (const auto& [neg, i, j] : cand) {
    if (ids[i] >= 0 || gt_used[j]) continue;
    ids[i] = gt[j].id;
    gt_used[j] = 1;
  }
  return ids;
}

AffinityLabel make_labels(std::span<const ObjectState> previous, std::span<const ObjectState> current,
                          std::span<const LabeledBox> gt_previous,
                          std::span<const LabeledBox> gt_current, double tau_gt) {
  AffinityLabel out;
  out.previous_ids = match_to_gt(previous, gt_previous, tau_gt);
  out.current_ids = match_to_gt(current, gt_current, tau_gt);
  out.target = nn::Matrix::Zero(static_cast<Eigen::Index>(previous.size()),
                                static_cast<Eigen::Index>(current.size()));
  for (std::size_t m = 0; m < previous.size(); ++m)
    for (std::size_t n = 0; n < current.size(); ++n)
      if (out.previous_ids[m] >= 0 && out.previous_ids[m] == out.current_ids[n])
        out.target(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)) = 1.0;
  return out;
}

FocalLoss focal_loss(const nn::Matrix& A, const nn::Matrix& target, double alpha, double gamma) {
  if (A.rows() != target.rows() || A.cols() != target.cols())
    throw ContractError("focal_loss: affinity and label shapes differ");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  FocalLoss out;
  out.grad = nn::Matrix::Zero(A.rows(), A.cols());
  if (A.size() == 0) return out;
  const double inv = 1.0 / static_cast<double>(A.size());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      double p = A(i, j);
      if (!std::isfinite(p)) throw NumericError("focal_loss: non-finite affinity");
      if (p < lo || p > hi) {
        p = std::clamp(p, lo, hi);
        ++out.clamped;
      }
      double l, g;
      if (target(i, j) > 0.5) {
        const double q = 1.0 - p;
        l = -alpha * std::pow(q, gamma) * std::log(p);
        g = alpha * (gamma * std::pow(q, gamma - 1.0) * std::log(p) - std::pow(q, gamma) / p);
      } else {
        const double q = 1.0 - p;
        l = -(1.0 - alpha) * std::pow(p, gamma) * std::log(q);
        g = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(q) - std::pow(p, gamma) / q);
      }
      out.loss += l * inv;
      out.grad(i, j) = g * inv;
    }
  if (out.clamped > 0) spdlog::debug("focal_loss: clamped {} probabilities", out.clamped);
  return out;
}

std::vector<ObjectState> perturb_positions(std::span<const ObjectState> objects, double sigma_x,
                                           double sigma_y, nn::Rng& rng) {
  if (sigma_x < 0.0 || sigma_y < 0.0) throw DomainError("perturb_positions: negative sigma");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<ObjectState> out(objects.begin(), objects.end());
  for (auto& o : out) {
    o.x += sigma_x * n01(rng);
    o.y += sigma_y * n01(rng);
  }
  return out;
}

std::vector<ObjectState> dropout_detections(std::span<const ObjectState> objects, double d_min,
                                            double d_max, nn::Rng& rng) {
  if (!(0.0 <= d_min && d_min <= d_max && d_max <= 1.0))
    throw DomainError("dropout_detections: need 0 <= d_min <= d_max <= 1");
  const double d = d_min + (d_max - d_min) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto n = objects.size();
  const auto drop = static_cast<std::size_t>(std::llround(d * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<char> keep(n, 1);
  for (std::size_t k = 0; k < std::min(drop, n); ++k) keep[idx[k]] = 0;
  std::vector<ObjectState> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(objects[i]);
  return out;
}

std::vector<FramePair> frame_pairs(std::span<const Scenario> scenarios) {
  std::vector<FramePair> out;
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    for (int f = 1; f < scenarios[s].frames(); ++f) out.push_back({static_cast<int>(s), f});
  return out;
}

namespace {

std::vector<ObjectState> states_of(const FrameDetections& dets) {
  std::vector<ObjectState> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.state);
  return out;
}

const PointCloud& cloud_at(const Scenario& s, int frame) {
  static const PointCloud kEmpty;
  const auto f = static_cast<std::size_t>(frame);
  return f < s.clouds.size() ? s.clouds[f] : kEmpty;
}

long steps_per_epoch(std::size_t pairs, int batch) {
  return static_cast<long>((pairs + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += format_double(v[i]);
  }
  return out;
}

}  // namespace

PairOutput evaluate_pair(const AffinityModel& model, const Scenario& s, int frame) {
  if (frame < 1 || frame >= s.frames()) throw ContractError("evaluate_pair: frame out of range");
  const auto prev = states_of(s.detections[static_cast<std::size_t>(frame - 1)]);
  const auto curr = states_of(s.detections[static_cast<std::size_t>(frame)]);
  PairInput in{prev, &cloud_at(s, frame - 1), curr, &cloud_at(s, frame)};
  return model.forward(in, nn::Mode::eval);
}

Trainer::Trainer(AffinityModel& model, std::span<const Scenario> scenarios,
                 const TrainConfig& train_cfg, const TrackerConfig& tracker_cfg)
    : model_(model),
      scenarios_(scenarios),
      cfg_(train_cfg),
      tracker_cfg_(tracker_cfg),
      pairs_(frame_pairs(scenarios)),
      params_(model.parameters()),
      adam_(params_) {
  cfg_.validate();
  if (pairs_.empty()) throw ConfigError("training needs at least one scenario with two frames");
  schedule_.peak_lr = cfg_.learning_rate;
  schedule_.total_steps = std::max(1L, cfg_.epochs * steps_per_epoch(pairs_.size(), cfg_.batch_size));
}

nn::Checkpoint Trainer::checkpoint() const {
  nn::Checkpoint ckpt = model_.to_checkpoint();
  ckpt.meta["train.epochs_done"] = std::to_string(epochs_done_);
  ckpt.meta["train.steps"] = std::to_string(adam_.steps_taken());
  ckpt.meta["train.loss_curve"] = join_doubles(loss_curve_);
  auto& adam = const_cast<nn::Adam&>(adam_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.tensors.push_back({"adam.m." + params_[i]->name, adam.first_moments()[i]});
    ckpt.tensors.push_back({"adam.v." + params_[i]->name, adam.second_moments()[i]});
  }
  return ckpt;
}

void Trainer::load_state(const nn::Checkpoint& ckpt) {
  auto meta = [&](const std::string& k) -> std::string {
    auto it = ckpt.meta.find(k);
    if (it == ckpt.meta.end()) throw ConfigError("checkpoint has no training state (" + k + ")");
    return it->second;
  };
  epochs_done_ = std::stoi(meta("train.epochs_done"));
  adam_.set_steps_taken(std::stol(meta("train.steps")));
  loss_curve_.clear();
  std::istringstream curve(meta("train.loss_curve"));
  for (double v; curve >> v;) loss_curve_.push_back(v);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto* m = ckpt.find("adam.m." + params_[i]->name);
    const auto* v = ckpt.find("adam.v." + params_[i]->name);
    if (!m || !v) throw ConfigError("checkpoint is missing optimizer state for " + params_[i]->name);
    if (m->value.rows() != params_[i]->value.rows() || m->value.cols() != params_[i]->value.cols() ||
        v->value.rows() != m->value.rows() || v->value.cols() != m->value.cols())
      throw ConfigError("optimizer state shape mismatch for " + params_[i]->name);
    adam_.first_moments()[i] = m->value;
    adam_.second_moments()[i] = v->value;
  }
}

EpochStats Trainer::run_epoch() {
  const int epoch = epochs_done_;
  nn::Rng rng(cfg_.rng_seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch) + 1);
  std::vector<FramePair> order = pairs_;
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0.0;
  long loss_count = 0;
  const auto batch = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch) {
    nn::zero_grads(params_);
    int used = 0;
    for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k) {
      const FramePair fp = order[k];
      const Scenario& s = scenarios_[static_cast<std::size_t>(fp.scenario)];
      const auto f = static_cast<std::size_t>(fp.frame);
      auto prev = states_of(s.detections[f - 1]);
      auto curr = states_of(s.detections[f]);
      prev = dropout_detections(prev, cfg_.drop_min, cfg_.drop_max, rng);
      curr = dropout_detections(curr, cfg_.drop_min, cfg_.drop_max, rng);
      prev = perturb_positions(prev, cfg_.sigma_x, cfg_.sigma_y, rng);
      curr = perturb_positions(curr, cfg_.sigma_x, cfg_.sigma_y, rng);
      if (prev.empty() || curr.empty()) continue;
      const AffinityLabel label = make_labels(prev, curr, s.gt[f - 1], s.gt[f], tracker_cfg_.tau_gt);

      AffinityModel::Cache cache;
      PairInput in{prev, &cloud_at(s, fp.frame - 1), curr, &cloud_at(s, fp.frame)};
      const PairOutput out = model_.forward(in, nn::Mode::train, &cache);
      const FocalLoss fl = focal_loss(out.affinity, label.target, cfg_.focal_alpha, cfg_.focal_gamma);
      if (!std::isfinite(fl.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", scenario '" +
                           s.name + "', frame " + std::to_string(fp.frame) + " (" +
                           std::to_string(prev.size()) + " tracks, " + std::to_string(curr.size()) +
                           " detections)");
      model_.backward(cache, fl.grad);
      loss_sum += fl.loss;
      ++loss_count;
      ++used;
    }
    if (used == 0) continue;
    for (auto* p : params_) p->grad /= static_cast<double>(used);
    adam_.step(params_, schedule_.lr(adam_.steps_taken()));
  }
  const double mean = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
  loss_curve_.push_back(mean);
  ++epochs_done_;
  return {epoch, mean, adam_.steps_taken()};
}

std::vector<EpochStats> Trainer::run(const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<EpochStats> out;
  while (epochs_done_ < cfg_.epochs) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

TrainResult train(AffinityModel& model, std::span<const Scenario> scenarios,
                  const TrainConfig& train_cfg, const TrackerConfig& tracker_cfg) {
  Trainer t(model, scenarios, train_cfg, tracker_cfg);
  const auto stats = t.run();
  return {t.loss_curve(), stats.empty() ? 0L : stats.back().steps};
}

double label_accuracy(const AffinityModel& model, std::span<const Scenario> scenarios,
                      const TrackerConfig& tracker_cfg) {
  long agree = 0, total = 0;
  for (const auto& s : scenarios)
    for (int f = 1; f < s.frames(); ++f) {
      const auto uf = static_cast<std::size_t>(f);
      const PairOutput out = evaluate_pair(model, s, f);
      const auto prev = states_of(s.detections[uf - 1]);
      const auto curr = states_of(s.detections[uf]);
      const AffinityLabel label = make_labels(prev, curr, s.gt[uf - 1], s.gt[uf], tracker_cfg.tau_gt);
      for (Eigen::Index i = 0; i < label.target.rows(); ++i)
        for (Eigen::Index j = 0; j < label.target.cols(); ++j) {
          agree += (out.affinity(i, j) > 0.5) == (label.target(i, j) > 0.5);
          ++total;
        }
    }
  return total > 0 ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;
}

}  // namespace afftrack
