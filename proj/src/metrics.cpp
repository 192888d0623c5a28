#include "afftrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "afftrack/association.hpp"
#include "afftrack/geometry.hpp"
#include "afftrack/io.hpp"
#include "afftrack/training.hpp"

namespace afftrack {

bool MatchCriterion::admits(const ObjectState& gt, const ObjectState& pred) const {
  if (gt.class_id != pred.class_id) return false;
  if (kind == Kind::center_distance) return center_distance_bev(gt, pred) <= threshold;
  return iou_3d(gt, pred) >= threshold;
}

double MatchCriterion::cost(const ObjectState& gt, const ObjectState& pred) const {
  if (kind == Kind::center_distance) return center_distance_bev(gt, pred);
  return 1.0 - iou_3d(gt, pred);
}

double ClearMot::mota() const {
  if (gt == 0) return 0.0;
  return 1.0 - static_cast<double>(fp + fn + ids) / static_cast<double>(gt);
}

double ClearMot::recall() const {
  return gt > 0 ? static_cast<double>(tp) / static_cast<double>(gt) : 0.0;
}

double ClearMot::mean_distance() const {
  return tp > 0 ? distance_sum / static_cast<double>(tp) : 0.0;
}

namespace {

std::size_t frame_count(const EvalSequence& s) { return std::max(s.gt.size(), s.pred.size()); }

const std::vector<LabeledBox>& frame_of(const LabeledSequence& seq, std::size_t f) {
  static const std::vector<LabeledBox> kEmpty;
  return f < seq.size() ? seq[f] : kEmpty;
}

ClearMot clear_mot_impl(std::span<const EvalSequence> seqs, const MatchCriterion& crit,
                        double min_score, std::vector<double>* tp_scores) {
  ClearMot out;
  for (const auto& seq : seqs) {
    std::unordered_map<int, int> previous;  // gt id -> pred id, last frame
    std::unordered_map<int, int> last;      // gt id -> pred id, last match ever
    for (std::size_t f = 0; f < frame_count(seq); ++f) {
      const auto& gts = frame_of(seq.gt, f);
      std::vector<const LabeledBox*> preds;
      for (const auto& p : frame_of(seq.pred, f))
        if (p.state.score >= min_score) preds.push_back(&p);

      std::vector<int> gt_match(gts.size(), -1);
      std::vector<char> pred_used(preds.size(), 0);
      for (std::size_t g = 0; g < gts.size(); ++g) {
        auto it = previous.find(gts[g].id);
        if (it == previous.end()) continue;
        for (std::size_t p = 0; p < preds.size(); ++p) {
          if (pred_used[p] || preds[p]->id != it->second) continue;
          if (crit.admits(gts[g].state, preds[p]->state)) {
            gt_match[g] = static_cast<int>(p);
            pred_used[p] = 1;
          }
          break;
        }
      }
      std::vector<std::size_t> rows, cols;
      for (std::size_t g = 0; g < gts.size(); ++g)
        if (gt_match[g] < 0) rows.push_back(g);
      for (std::size_t p = 0; p < preds.size(); ++p)
        if (!pred_used[p]) cols.push_back(p);
      if (!rows.empty() && !cols.empty()) {
        const auto R = static_cast<Eigen::Index>(rows.size()), C = static_cast<Eigen::Index>(cols.size());
        nn::Matrix cost(R, C);
        BoolMatrix forbidden(R, C);
        for (Eigen::Index r = 0; r < R; ++r)
          for (Eigen::Index c = 0; c < C; ++c) {
            const auto& gs = gts[rows[static_cast<std::size_t>(r)]].state;
            const auto& ps = preds[cols[static_cast<std::size_t>(c)]]->state;
            forbidden(r, c) = !crit.admits(gs, ps);
            cost(r, c) = forbidden(r, c) ? 0.0 : crit.cost(gs, ps);
          }
        const AssignmentMatrix a = hungarian(cost, forbidden);
        for (Eigen::Index r = 0; r < R; ++r)
          for (Eigen::Index c = 0; c < C; ++c)
            if (a(r, c)) {
              gt_match[rows[static_cast<std::size_t>(r)]] = static_cast<int>(cols[static_cast<std::size_t>(c)]);
              pred_used[cols[static_cast<std::size_t>(c)]] = 1;
            }
      }

      previous.clear();
      for (std::size_t g = 0; g < gts.size(); ++g) {
        ++out.gt;
        if (gt_match[g] < 0) {
          ++out.fn;
          continue;
        }
        const LabeledBox& p = *preds[static_cast<std::size_t>(gt_match[g])];
        ++out.tp;
        out.distance_sum += center_distance_bev(gts[g].state, p.state);
        if (tp_scores) tp_scores->push_back(p.state.score);
        auto it = last.find(gts[g].id);
        if (it != last.end() && it->second != p.id) ++out.ids;
        last[gts[g].id] = p.id;
        previous[gts[g].id] = p.id;
      }
      for (std::size_t p = 0; p < preds.size(); ++p)
        if (!pred_used[p]) ++out.fp;
    }
  }
  return out;
}

}  // namespace

ClearMot clear_mot(std::span<const EvalSequence> seqs, const MatchCriterion& crit, double min_score) {
  return clear_mot_impl(seqs, crit, min_score, nullptr);
}

Amota amota_amotp(std::span<const EvalSequence> seqs, const MatchCriterion& crit) {
  Amota out;
  out.motar.assign(kRecallSteps, 0.0);
  std::vector<double> tp_scores;
  const ClearMot full =
      clear_mot_impl(seqs, crit, -std::numeric_limits<double>::infinity(), &tp_scores);
  out.mota_best = full.mota();
  out.ids_at_best = full.ids;
  out.best_threshold = -std::numeric_limits<double>::infinity();
  const double miss_distance = crit.kind == MatchCriterion::Kind::center_distance ? crit.threshold : 2.0;
  const long G = full.gt;
  if (G == 0) return out;
  if (tp_scores.empty()) {
    bool any_positive = false;
    for (const auto& s : seqs)
      for (const auto& fr : s.pred)
        for (const auto& p : fr) any_positive |= p.state.score > 0.0;
    if (!any_positive) spdlog::warn("amota: no predictions with positive score");
    out.amotp = miss_distance;
    return out;
  }
  std::sort(tp_scores.begin(), tp_scores.end(), std::greater<>());
  std::map<double, ClearMot> memo;
  double amota_sum = 0.0, amotp_sum = 0.0;
  for (int k = 1; k <= kRecallSteps; ++k) {
    const long need = (k * G + kRecallSteps - 1) / kRecallSteps;
    if (need > static_cast<long>(tp_scores.size())) {
      amotp_sum += miss_distance;
      continue;
    }
    const double thr = tp_scores[static_cast<std::size_t>(need - 1)];
    auto it = memo.find(thr);
    if (it == memo.end()) it = memo.emplace(thr, clear_mot(seqs, crit, thr)).first;
    const ClearMot& cm = it->second;
    const double r = cm.recall();
    const double g = static_cast<double>(G);
    const double motar =
        std::max(0.0, 1.0 - (static_cast<double>(cm.ids + cm.fp + cm.fn) - (1.0 - r) * g) / (r * g));
    out.motar[static_cast<std::size_t>(k - 1)] = motar;
    amota_sum += motar;
    amotp_sum += cm.mean_distance();
    if (cm.mota() > out.mota_best) {
      out.mota_best = cm.mota();
      out.ids_at_best = cm.ids;
      out.best_threshold = thr;
    }
  }
  out.amota = std::clamp(amota_sum / kRecallSteps, 0.0, 1.0);
  out.amotp = amotp_sum / kRecallSteps;
  return out;
}

std::vector<double> hota_alphas() {
  std::vector<double> a;
  for (int i = 0; i < 19; ++i) a.push_back(0.05 + 0.05 * i);
  return a;
}

Hota hota(std::span<const EvalSequence> seqs) {
  const std::vector<double> alphas = hota_alphas();
  const std::size_t na = alphas.size();
  std::vector<double> tp(na, 0.0), fn(na, 0.0), fp(na, 0.0), ass_num(na, 0.0);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  for (const auto& seq : seqs) {
    std::map<int, int> gt_index, pred_index;
    for (const auto& fr : seq.gt)
      for (const auto& b : fr) gt_index.emplace(b.id, 0);
    for (const auto& fr : seq.pred)
      for (const auto& b : fr) pred_index.emplace(b.id, 0);
    int k = 0;
    for (auto& [id, idx] : gt_index) idx = k++;
    k = 0;
    for (auto& [id, idx] : pred_index) idx = k++;
    const auto G = static_cast<Eigen::Index>(gt_index.size());
    const auto P = static_cast<Eigen::Index>(pred_index.size());

    const std::size_t nf = frame_count(seq);
    std::vector<nn::Matrix> sims(nf);
    std::vector<std::vector<Eigen::Index>> gids(nf), pids(nf);
    nn::Matrix potential = nn::Matrix::Zero(G, P);
    Eigen::VectorXd gt_count = Eigen::VectorXd::Zero(G);
    Eigen::RowVectorXd pred_count = Eigen::RowVectorXd::Zero(P);
    double total_gt = 0.0, total_pred = 0.0;

    for (std::size_t f = 0; f < nf; ++f) {
      const auto& gts = frame_of(seq.gt, f);
      const auto& preds = frame_of(seq.pred, f);
      for (const auto& b : gts) gids[f].push_back(gt_index.at(b.id));
      for (const auto& b : preds) pids[f].push_back(pred_index.at(b.id));
      total_gt += static_cast<double>(gts.size());
      total_pred += static_cast<double>(preds.size());
      nn::Matrix sim = nn::Matrix::Zero(static_cast<Eigen::Index>(gts.size()),
                                        static_cast<Eigen::Index>(preds.size()));
      for (std::size_t g = 0; g < gts.size(); ++g)
        for (std::size_t p = 0; p < preds.size(); ++p)
          if (gts[g].state.class_id == preds[p].state.class_id)
            sim(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(p)) =
                iou_3d(gts[g].state, preds[p].state);
      for (auto g : gids[f]) gt_count(g) += 1.0;
      for (auto p : pids[f]) pred_count(p) += 1.0;
      if (sim.size() > 0) {
        const Eigen::VectorXd rows = sim.rowwise().sum();
        const Eigen::RowVectorXd cols = sim.colwise().sum();
        for (Eigen::Index g = 0; g < sim.rows(); ++g)
          for (Eigen::Index p = 0; p < sim.cols(); ++p) {
            const double denom = rows(g) + cols(p) - sim(g, p);
            const double v = denom > eps ? sim(g, p) / denom : 0.0;
            potential(gids[f][static_cast<std::size_t>(g)], pids[f][static_cast<std::size_t>(p)]) += v;
          }
      }
      sims[f] = std::move(sim);
    }

    nn::Matrix global = nn::Matrix::Zero(G, P);
    for (Eigen::Index g = 0; g < G; ++g)
      for (Eigen::Index p = 0; p < P; ++p) {
        const double denom = gt_count(g) + pred_count(p) - potential(g, p);
        global(g, p) = denom > 0.0 ? potential(g, p) / denom : 0.0;
      }

    std::vector<nn::Matrix> matches(na, nn::Matrix::Zero(G, P));
    std::vector<double> seq_tp(na, 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
      const nn::Matrix& sim = sims[f];
      if (sim.rows() == 0 || sim.cols() == 0) continue;
      nn::Matrix cost(sim.rows(), sim.cols());
      for (Eigen::Index g = 0; g < sim.rows(); ++g)
        for (Eigen::Index p = 0; p < sim.cols(); ++p)
          cost(g, p) = -global(gids[f][static_cast<std::size_t>(g)], pids[f][static_cast<std::size_t>(p)]) *
                       sim(g, p);
      const AssignmentMatrix a = hungarian(cost);
      for (Eigen::Index g = 0; g < sim.rows(); ++g)
        for (Eigen::Index p = 0; p < sim.cols(); ++p) {
          if (!a(g, p)) continue;
          for (std::size_t ai = 0; ai < na; ++ai) {
            if (sim(g, p) >= alphas[ai] - eps) {
              seq_tp[ai] += 1.0;
              matches[ai](gids[f][static_cast<std::size_t>(g)], pids[f][static_cast<std::size_t>(p)]) += 1.0;
            }
          }
        }
    }
    for (std::size_t ai = 0; ai < na; ++ai) {
      tp[ai] += seq_tp[ai];
      fn[ai] += total_gt - seq_tp[ai];
      fp[ai] += total_pred - seq_tp[ai];
      const nn::Matrix& mc = matches[ai];
      for (Eigen::Index g = 0; g < G; ++g)
        for (Eigen::Index p = 0; p < P; ++p) {
          if (mc(g, p) <= 0.0) continue;
          const double ass = mc(g, p) / (gt_count(g) + pred_count(p) - mc(g, p));
          ass_num[ai] += mc(g, p) * ass;
        }
    }
  }

  Hota out;
  for (std::size_t ai = 0; ai < na; ++ai) {
    const double deta = tp[ai] / std::max(1.0, tp[ai] + fn[ai] + fp[ai]);
    const double assa = ass_num[ai] / std::max(1.0, tp[ai]);
    out.deta_alpha.push_back(deta);
    out.assa_alpha.push_back(assa);
    out.hota_alpha.push_back(std::sqrt(deta * assa));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  out.hota = mean(out.hota_alpha);
  out.deta = mean(out.deta_alpha);
  out.assa = mean(out.assa_alpha);
  return out;
}

EvalSequence filter_class(const EvalSequence& s, int class_id) {
  auto keep = [&](const LabeledSequence& seq) {
    LabeledSequence out(seq.size());
    for (std::size_t f = 0; f < seq.size(); ++f)
      for (const auto& b : seq[f])
        if (b.state.class_id == class_id) out[f].push_back(b);
    return out;
  };
  return {keep(s.gt), keep(s.pred)};
}

MetricReport evaluate(std::span<const EvalSequence> seqs, const MatchCriterion& crit) {
  std::set<int> classes;
  for (const auto& s : seqs)
    for (const auto& fr : s.gt)
      for (const auto& b : fr) classes.insert(b.state.class_id);
  MetricReport r;
  r.counts = clear_mot(seqs, crit);
  for (int cls : classes) {
    std::vector<EvalSequence> sub;
    sub.reserve(seqs.size());
    for (const auto& s : seqs) sub.push_back(filter_class(s, cls));
    ClassMetrics m;
    const Amota a = amota_amotp(sub, crit);
    const Hota h = hota(sub);
    m.amota = a.amota;
    m.amotp = a.amotp;
    m.mota_best = a.mota_best;
    m.ids_at_best = a.ids_at_best;
    m.hota = h.hota;
    m.deta = h.deta;
    m.assa = h.assa;
    m.counts = clear_mot(sub, crit);
    r.per_class[cls] = m;
  }
  if (r.per_class.empty()) return r;
  const double n = static_cast<double>(r.per_class.size());
  for (const auto& [cls, m] : r.per_class) {
    r.amota += m.amota / n;
    r.amotp += m.amotp / n;
    r.mota_best += m.mota_best / n;
    r.ids_at_best += m.ids_at_best;
    r.hota += m.hota / n;
    r.deta += m.deta / n;
    r.assa += m.assa / n;
  }
  return r;
}

void write_report(std::ostream& os, const MetricReport& r) {
  auto line = [&](const std::string& scope, double amota, double amotp, double mota, long ids,
                  double h, double d, double a, const ClearMot& c) {
    os << scope << ": AMOTA " << format_double(amota) << "  AMOTP " << format_double(amotp)
       << "  MOTA " << format_double(mota) << "  IDS " << ids << "  HOTA " << format_double(h)
       << "  DetA " << format_double(d) << "  AssA " << format_double(a) << "  (TP " << c.tp
       << " FP " << c.fp << " FN " << c.fn << " IDS@all " << c.ids << " GT " << c.gt << ")\n";
  };
  line("overall", r.amota, r.amotp, r.mota_best, r.ids_at_best, r.hota, r.deta, r.assa, r.counts);
  for (const auto& [cls, m] : r.per_class)
    line("class " + std::to_string(cls), m.amota, m.amotp, m.mota_best, m.ids_at_best, m.hota,
         m.deta, m.assa, m.counts);
}

void write_report_csv(std::ostream& os, const MetricReport& r) {
  os << "scope,amota,amotp,mota_best,ids_at_best,hota,deta,assa,tp,fp,fn,ids_all,gt\n";
  auto row = [&](const std::string& scope, double amota, double amotp, double mota, long ids,
                 double h, double d, double a, const ClearMot& c) {
    os << scope << ',' << format_double(amota) << ',' << format_double(amotp) << ','
       << format_double(mota) << ',' << ids << ',' << format_double(h) << ',' << format_double(d)
       << ',' << format_double(a) << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.ids
       << ',' << c.gt << '\n';
  };
  row("overall", r.amota, r.amotp, r.mota_best, r.ids_at_best, r.hota, r.deta, r.assa, r.counts);
  for (const auto& [cls, m] : r.per_class)
    row("class" + std::to_string(cls), m.amota, m.amotp, m.mota_best, m.ids_at_best, m.hota, m.deta,
        m.assa, m.counts);
}

// ---------------------------------------------------------------------------

Histogram pooled_histogram(std::span<const double> a, std::span<const double> b, int bins) {
  if (bins < 1) throw ContractError("histogram needs at least one bin");
  Histogram h;
  h.a.assign(static_cast<std::size_t>(bins), 0.0);
  h.b.assign(static_cast<std::size_t>(bins), 0.0);
  if (a.empty() && b.empty()) return h;
  h.lo = std::numeric_limits<double>::infinity();
  h.hi = -std::numeric_limits<double>::infinity();
  for (double x : a) h.lo = std::min(h.lo, x), h.hi = std::max(h.hi, x);
  for (double x : b) h.lo = std::min(h.lo, x), h.hi = std::max(h.hi, x);
  const double width = h.hi - h.lo;
  auto bin_of = [&](double x) {
    if (!(width > 0.0)) return 0;
    return std::clamp(static_cast<int>(std::floor((x - h.lo) / width * bins)), 0, bins - 1);
  };
  for (double x : a) h.a[static_cast<std::size_t>(bin_of(x))] += 1.0;
  for (double x : b) h.b[static_cast<std::size_t>(bin_of(x))] += 1.0;
  for (auto& v : h.a) v /= std::max<double>(1.0, static_cast<double>(a.size()));
  for (auto& v : h.b) v /= std::max<double>(1.0, static_cast<double>(b.size()));
  return h;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ContractError("jsd: distributions differ in length");
  constexpr double smooth = 1e-12;
  double sp = 0.0, sq = 0.0;
  for (double x : p) sp += x;
  for (double x : q) sq += x;
  if (!(sp > 0.0) || !(sq > 0.0)) throw ContractError("jsd: empty distribution");
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] / sp, qi = q[i] / sq;
    const double mi = std::max(0.5 * (pi + qi), smooth);
    if (pi > 0.0) kl_p += pi * std::log2(pi / mi);
    if (qi > 0.0) kl_q += qi * std::log2(qi / mi);
  }
  return std::clamp(0.5 * (kl_p + kl_q), 0.0, 1.0);
}

double jsd_samples(std::span<const double> a, std::span<const double> b, int bins) {
  const Histogram h = pooled_histogram(a, b, bins);
  return jsd(h.a, h.b);
}

void accumulate_discrimination(DiscriminationReport& r, const nn::Matrix& features_t,
                               const nn::Matrix& features_d, const nn::Matrix& affinity,
                               std::span<const int> ids_t, std::span<const int> ids_d,
                               std::span<const int> class_t, std::span<const int> class_d) {
  const auto m = features_t.rows(), n = features_d.rows();
  if (affinity.rows() != m || affinity.cols() != n ||
      static_cast<Eigen::Index>(ids_t.size()) != m || static_cast<Eigen::Index>(ids_d.size()) != n ||
      class_t.size() != ids_t.size() || class_d.size() != ids_d.size())
    throw ContractError("discrimination: inconsistent shapes");
  if (m == 0 || n == 0) return;
  const nn::Matrix cos = cosine_affinity(features_t, features_d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const int a = ids_t[static_cast<std::size_t>(i)], b = ids_d[static_cast<std::size_t>(j)];
      if (a < 0 || b < 0) continue;
      if (a == b) {
        r.cosine.same.push_back(cos(i, j));
        r.affinity.same.push_back(affinity(i, j));
      } else if (class_t[static_cast<std::size_t>(i)] == class_d[static_cast<std::size_t>(j)]) {
        r.cosine.different.push_back(cos(i, j));
        r.affinity.different.push_back(affinity(i, j));
      }
    }
}

void finalize_discrimination(DiscriminationReport& r) {
  r.complete = !r.cosine.same.empty() && !r.cosine.different.empty();
  for (Population* p : {&r.cosine, &r.affinity}) {
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    p->mean_same = mean(p->same);
    p->mean_different = mean(p->different);
    p->histogram = pooled_histogram(p->same, p->different);
    p->jsd = r.complete ? jsd(p->histogram.a, p->histogram.b) : 0.0;
  }
}

DiscriminationReport discrimination_report(const AffinityModel& model,
                                           std::span<const Scenario> scenarios, double tau_gt) {
  DiscriminationReport r;
  for (const auto& s : scenarios)
    for (int f = 1; f < s.frames(); ++f) {
      const auto uf = static_cast<std::size_t>(f);
      std::vector<ObjectState> prev, curr;
      for (const auto& d : s.detections[uf - 1]) prev.push_back(d.state);
      for (const auto& d : s.detections[uf]) curr.push_back(d.state);
      const PairOutput out = evaluate_pair(model, s, f);
      const AffinityLabel label = make_labels(prev, curr, s.gt[uf - 1], s.gt[uf], tau_gt);
      std::vector<int> ct, cd;
      for (const auto& o : prev) ct.push_back(o.class_id);
      for (const auto& o : curr) cd.push_back(o.class_id);
      accumulate_discrimination(r, out.track_features, out.detection_features, out.affinity,
                                label.previous_ids, label.current_ids, ct, cd);
    }
  finalize_discrimination(r);
  return r;
}

void write_discrimination(std::ostream& os, const DiscriminationReport& r) {
  if (!r.complete) os << "discrimination: incomplete (a population is empty)\n";
  auto pop = [&](const std::string& name, const Population& p) {
    os << name << ": same n=" << p.same.size() << " mean=" << format_double(p.mean_same)
       << "  different n=" << p.different.size() << " mean=" << format_double(p.mean_different)
       << "  JSD=" << format_double(p.jsd) << "\n";
  };
  pop("cosine", r.cosine);
  pop("affinity", r.affinity);
}

void write_histograms_csv(std::ostream& os, const DiscriminationReport& r) {
  os << "quantity,bin,lo,hi,same,different\n";
  auto dump = [&](const std::string& name, const Population& p) {
    const auto& h = p.histogram;
    const auto bins = h.a.size();
    const double w = bins > 0 ? (h.hi - h.lo) / static_cast<double>(bins) : 0.0;
    for (std::size_t i = 0; i < bins; ++i)
      os << name << ',' << i << ',' << format_double(h.lo + w * static_cast<double>(i)) << ','
         << format_double(h.lo + w * static_cast<double>(i + 1)) << ',' << format_double(h.a[i])
         << ',' << format_double(h.b[i]) << '\n';
  };
  dump("cosine", r.cosine);
  dump("affinity", r.affinity);
}

}  // namespace afftrack
