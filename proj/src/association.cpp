#include "afftrack/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <tuple>

namespace afftrack {

void MatchSet::validate(int rows, int cols) const {
  std::vector<char> row_used(static_cast<std::size_t>(rows), 0), col_used(static_cast<std::size_t>(cols), 0);
  auto mark = [](std::vector<char>& used, int idx, const char* what) {
    if (idx < 0 || idx >= static_cast<int>(used.size()))
      throw ContractError(std::string("match set: ") + what + " index out of range");
    if (used[static_cast<std::size_t>(idx)])
      throw ContractError(std::string("match set: ") + what + " index used twice");
    used[static_cast<std::size_t>(idx)] = 1;
  };
  for (const auto& m : matches) {
    mark(row_used, m.track, "track");
    mark(col_used, m.detection, "detection");
  }
  for (int t : unmatched_tracks) mark(row_used, t, "track");
  for (int d : unmatched_detections) mark(col_used, d, "detection");
}

double MatchSet::total_score() const {
  double s = 0.0;
  for (const auto& m : matches) s += m.score;
  return s;
}

namespace {

MatchSet complete(std::vector<Match> matches, Eigen::Index rows, Eigen::Index cols) {
  MatchSet out;
  std::sort(matches.begin(), matches.end(),
            [](const Match& a, const Match& b) { return a.track < b.track; });
  std::vector<char> ru(static_cast<std::size_t>(rows), 0), cu(static_cast<std::size_t>(cols), 0);
  for (const auto& m : matches) {
    ru[static_cast<std::size_t>(m.track)] = 1;
    cu[static_cast<std::size_t>(m.detection)] = 1;
  }
  for (Eigen::Index r = 0; r < rows; ++r)
    if (!ru[static_cast<std::size_t>(r)]) out.unmatched_tracks.push_back(static_cast<int>(r));
  for (Eigen::Index c = 0; c < cols; ++c)
    if (!cu[static_cast<std::size_t>(c)]) out.unmatched_detections.push_back(static_cast<int>(c));
  out.matches = std::move(matches);
  return out;
}

}  // namespace

MatchSet to_match_set(const AssignmentMatrix& a, const nn::Matrix& scores) {
  if (a.rows() != scores.rows() || a.cols() != scores.cols())
    throw ContractError("to_match_set: shape mismatch");
  std::vector<Match> matches;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (a(r, c)) matches.push_back({static_cast<int>(r), static_cast<int>(c), scores(r, c)});
  return complete(std::move(matches), a.rows(), a.cols());
}

AssignmentMatrix hungarian(const nn::Matrix& cost) {
  return hungarian(cost, BoolMatrix::Constant(cost.rows(), cost.cols(), false));
}

AssignmentMatrix hungarian(const nn::Matrix& cost, const BoolMatrix& forbidden) {
  const Eigen::Index rows = cost.rows(), cols = cost.cols();
  if (forbidden.rows() != rows || forbidden.cols() != cols)
    throw ContractError("hungarian: mask shape mismatch");
  AssignmentMatrix result = AssignmentMatrix::Constant(rows, cols, false);
  const Eigen::Index n = std::max(rows, cols);
  if (n == 0) return result;

  auto allowed = [&](Eigen::Index r, Eigen::Index c) {
    return r < rows && c < cols && !forbidden(r, c) && std::isfinite(cost(r, c));
  };
  double maxabs = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (allowed(r, c)) maxabs = std::max(maxabs, std::abs(cost(r, c)));
  const double big = 2.0 * static_cast<double>(n) * (maxabs + 1.0);

  // Shortest augmenting path with potentials, 1-indexed.
  const double inf = std::numeric_limits<double>::infinity();
  auto a = [&](Eigen::Index i, Eigen::Index j) {
    return allowed(i - 1, j - 1) ? cost(i - 1, j - 1) : big;
  };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Eigen::Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Eigen::Index i0 = p[j0];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Eigen::Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (Eigen::Index j = 1; j <= n; ++j) {
    const Eigen::Index r = p[j] - 1, c = j - 1;
    if (allowed(r, c)) result(r, c) = true;
  }
  return result;
}

MatchSet greedy(const nn::Matrix& score, double threshold, bool maximize, const BoolMatrix& allowed) {
  const Eigen::Index rows = score.rows(), cols = score.cols();
  const bool masked = allowed.size() > 0;
  if (masked && (allowed.rows() != rows || allowed.cols() != cols))
    throw ContractError("greedy: mask shape mismatch");
  std::vector<std::tuple<double, int, int>> cand;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double s = score(r, c);
      if (!std::isfinite(s) || (masked && !allowed(r, c))) continue;
      if (maximize ? s < threshold : s > threshold) continue;
      cand.emplace_back(maximize ? -s : s, static_cast<int>(r), static_cast<int>(c));
    }
  std::sort(cand.begin(), cand.end());
  std::vector<char> ru(static_cast<std::size_t>(rows), 0), cu(static_cast<std::size_t>(cols), 0);
  std::vector<Match> matches;
  for (const auto& [key, r, c] : cand) {
    if (ru[static_cast<std::size_t>(r)] || cu[static_cast<std::size_t>(c)]) continue;
    ru[static_cast<std::size_t>(r)] = cu[static_cast<std::size_t>(c)] = 1;
    matches.push_back({r, c, maximize ? -key : key});
  }
  return complete(std::move(matches), rows, cols);
}

FusionResult fuse_detections(std::span<const Detection> dets3d, std::span<const Detection2D> dets2d,
                             const CameraModel& cam, const TrackerConfig& cfg) {
  const auto m = static_cast<Eigen::Index>(dets3d.size());
  const auto n = static_cast<Eigen::Index>(dets2d.size());
  nn::Matrix iou = nn::Matrix::Zero(m, n);
  BoolMatrix allowed = BoolMatrix::Constant(m, n, false);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& d3 = dets3d[static_cast<std::size_t>(i)];
    const auto proj = project_box(d3.state, cam);
    if (!proj) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& d2 = dets2d[static_cast<std::size_t>(j)];
      if (cfg.class_gating && d2.class_id != d3.state.class_id) continue;
      iou(i, j) = iou_2d(*proj, d2.box);
      allowed(i, j) = iou(i, j) >= cfg.tau_fuse_for(d3.state.class_id);
    }
  }
  const MatchSet ms = greedy(iou, 0.0, true, allowed);
  return {ms.matches, ms.unmatched_tracks, ms.unmatched_detections};
}

MatchSet stage1(std::span<const ObjectState> tracks, std::span<const Detection> dets,
                const nn::Matrix& scores, ScoreKind kind, const TrackerConfig& cfg) {
  const auto m = static_cast<Eigen::Index>(tracks.size());
  const auto n = static_cast<Eigen::Index>(dets.size());
  if (scores.rows() != m || scores.cols() != n)
    throw ContractError("stage1: score matrix is " + std::to_string(scores.rows()) + "x" +
                        std::to_string(scores.cols()) + ", expected " + std::to_string(m) + "x" +
                        std::to_string(n));
  std::vector<ObjectState> det_states;
  det_states.reserve(dets.size());
  for (const auto& d : dets) det_states.push_back(d.state);
  const nn::Matrix dist = scaled_distance(tracks, det_states);

  BoolMatrix gate_ok(m, n), forbidden(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& det = det_states[static_cast<std::size_t>(j)];
      gate_ok(i, j) = dist(i, j) <= cfg.tau_3d_for(det.class_id);
      const bool class_ok =
          !cfg.class_gating || tracks[static_cast<std::size_t>(i)].class_id == det.class_id;
      forbidden(i, j) = !class_ok || (cfg.gate_before_solve && !gate_ok(i, j));
    }

  const bool affinity = kind == ScoreKind::affinity;
  MatchSet solved;
  if (cfg.matcher == MatcherKind::hungarian) {
    const nn::Matrix cost = affinity ? nn::Matrix((1.0 - scores.array()).matrix()) : scores;
    solved = to_match_set(hungarian(cost, forbidden), scores);
  } else {
    const double thr = affinity ? -std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::infinity();
    solved = greedy(scores, thr, affinity, !forbidden);
  }

  std::vector<Match> kept;
  for (const auto& mt : solved.matches) {
    if (!gate_ok(mt.track, mt.detection)) continue;
    if (affinity && mt.score < cfg.min_affinity) continue;
    kept.push_back(mt);
  }
  return complete(std::move(kept), m, n);
}

MatchSet stage2(std::span<const ObjectState> tracks, std::span<const Detection2D> dets2d,
                const CameraModel& cam, const TrackerConfig& cfg) {
  const auto m = static_cast<Eigen::Index>(tracks.size());
  const auto n = static_cast<Eigen::Index>(dets2d.size());
  nn::Matrix iou = nn::Matrix::Zero(m, n);
  BoolMatrix allowed = BoolMatrix::Constant(m, n, false);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& t = tracks[static_cast<std::size_t>(i)];
    const auto proj = project_box(t, cam);
    if (!proj) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& d = dets2d[static_cast<std::size_t>(j)];
      if (cfg.class_gating && d.class_id != t.class_id) continue;
      iou(i, j) = iou_2d(*proj, d.box);
      allowed(i, j) = iou(i, j) > 0.0 && iou(i, j) >= cfg.tau_2d_for(d.class_id);
    }
  }
  return greedy(iou, 0.0, true, allowed);
}

void write_match_trace(std::ostream& os, int frame, const std::string& stage, const MatchSet& m) {
  for (const auto& mt : m.matches)
    os << frame << ',' << stage << ',' << mt.track << ',' << mt.detection << ',' << mt.score << '\n';
}

}  // namespace afftrack
