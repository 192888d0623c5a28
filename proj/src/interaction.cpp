#include "afftrack/interaction.hpp"

#include <cmath>
#include <string>

namespace afftrack {

using nn::Matrix;

// ---------------------------------------------------------------------------
// AttentionBlock
// ---------------------------------------------------------------------------

AttentionBlock::AttentionBlock(const std::string& name, int channels, int heads,
                               NormPlacement norm, nn::Rng& rng)
    : q(name + ".q", channels, channels, rng),
      k(name + ".k", channels, channels, rng),
      v(name + ".v", channels, channels, rng),
      o(name + ".o", channels, channels, rng),
      norm1(name + ".norm1", channels),
      ff1(name + ".ff1", channels, 2 * channels, rng),
      ff2(name + ".ff2", 2 * channels, channels, rng),
      norm2(name + ".norm2", channels),
      channels_(channels),
      heads_(heads),
      norm_(norm) {
  if (heads < 1 || channels % heads != 0)
    throw ContractError("attention: head count must divide the channel count");
}

Matrix AttentionBlock::forward(const Matrix& a, const Matrix& b, Cache* cache) const {
  if (a.cols() != channels_ || b.cols() != channels_)
    throw ContractError("attention: channel mismatch");
  if (a.rows() == 0 || b.rows() == 0) {
    if (cache) {
      cache->passthrough = true;
      cache->valid = true;
    }
    return a;
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.passthrough = false;
  const int hd = channels_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const bool pre = norm_ == NormPlacement::pre;
  const Matrix na = pre ? norm1.forward(a, &c.norm1) : a;
  const Matrix nb = pre ? norm1.forward(b, &c.norm1b) : b;
  c.Q = q.forward(na, &c.q);
  c.K = k.forward(nb, &c.k);
  c.V = v.forward(nb, &c.v);
  Matrix heads_out(a.rows(), channels_);
  c.attn.assign(heads_, Matrix());
  for (int h = 0; h < heads_; ++h) {
    const auto Qh = c.Q.middleCols(h * hd, hd);
    const auto Kh = c.K.middleCols(h * hd, hd);
    const auto Vh = c.V.middleCols(h * hd, hd);
    c.attn[h] = nn::softmax_rows(scale * (Qh * Kh.transpose()));
    heads_out.middleCols(h * hd, hd) = c.attn[h] * Vh;
  }
  const Matrix msg = o.forward(heads_out, &c.o);
  Matrix out;
  if (pre) {
    const Matrix h1 = a + msg;
    c.ff_pre = ff1.forward(norm2.forward(h1, &c.norm2), &c.ff1);
    out = h1 + ff2.forward(nn::relu(c.ff_pre), &c.ff2);
  } else {
    const Matrix h1 = norm1.forward(a + msg, &c.norm1);
    c.ff_pre = ff1.forward(h1, &c.ff1);
    const Matrix f = ff2.forward(nn::relu(c.ff_pre), &c.ff2);
    out = norm2.forward(h1 + f, &c.norm2);
  }
  c.valid = true;
  return out;
}

std::pair<Matrix, Matrix> AttentionBlock::backward(const Cache& c, const Matrix& dout) {
  if (!c.valid) throw StateError("attention: backward called before forward");
  if (c.passthrough) return {dout, Matrix()};
  const int hd = channels_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const bool pre = norm_ == NormPlacement::pre;
  // dsum1: gradient at the first residual sum a + msg.
  Matrix dsum1;
  if (pre) {
    const Matrix dr = ff2.backward(c.ff2, dout);
    dsum1 = dout + norm2.backward(c.norm2, ff1.backward(c.ff1, nn::relu_backward(c.ff_pre, dr)));
  } else {
    const Matrix dsum2 = norm2.backward(c.norm2, dout);
    Matrix dh1 = dsum2;
    const Matrix dr = ff2.backward(c.ff2, dsum2);
    dh1 += ff1.backward(c.ff1, nn::relu_backward(c.ff_pre, dr));
    dsum1 = norm1.backward(c.norm1, dh1);
  }
  Matrix da = dsum1;
  const Matrix dheads = o.backward(c.o, dsum1);

  Matrix dQ(c.Q.rows(), c.Q.cols()), dK(c.K.rows(), c.K.cols()), dV(c.V.rows(), c.V.cols());
  for (int h = 0; h < heads_; ++h) {
    const auto dOh = dheads.middleCols(h * hd, hd);
    const auto Qh = c.Q.middleCols(h * hd, hd);
    const auto Kh = c.K.middleCols(h * hd, hd);
    const auto Vh = c.V.middleCols(h * hd, hd);
    const Matrix& P = c.attn[h];
    const Matrix dP = dOh * Vh.transpose();
    dV.middleCols(h * hd, hd) = P.transpose() * dOh;
    const Matrix dS = scale * nn::softmax_rows_backward(P, dP);
    dQ.middleCols(h * hd, hd) = dS * Kh;
    dK.middleCols(h * hd, hd) = dS.transpose() * Qh;
  }
  Matrix dqa = q.backward(c.q, dQ);
  Matrix db = k.backward(c.k, dK);
  db += v.backward(c.v, dV);
  if (pre) {
    dqa = norm1.backward(c.norm1, dqa);
    db = norm1.backward(c.norm1b, db);
  }
  da += dqa;
  return {da, db};
}

void AttentionBlock::collect(nn::ParamList& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
  norm1.collect(out);
  ff1.collect(out);
  ff2.collect(out);
  norm2.collect(out);
}

// ---------------------------------------------------------------------------
// InteractionTransformer
// ---------------------------------------------------------------------------

InteractionTransformer::InteractionTransformer(int channels, int heads, int passes,
                                               NormPlacement norm, nn::Rng& rng) {
  if (passes < 1) throw ConfigError("interaction transformer needs at least one pass");
  for (int i = 0; i < passes; ++i) {
    self_blocks.emplace_back("transformer." + std::to_string(i) + ".self", channels, heads, norm, rng);
    cross_blocks.emplace_back("transformer." + std::to_string(i) + ".cross", channels, heads, norm, rng);
  }
}

std::pair<Matrix, Matrix> InteractionTransformer::forward(const Matrix& t, const Matrix& d,
                                                          Cache* cache) const {
  Matrix tf = t, df = d;
  if (cache) cache->steps.assign(4 * self_blocks.size(), AttentionBlock::Cache{});
  for (std::size_t i = 0; i < self_blocks.size(); ++i) {
    auto step = [&](std::size_t s) { return cache ? &cache->steps[4 * i + s] : nullptr; };
    tf = self_blocks[i].forward(tf, tf, step(0));
    df = self_blocks[i].forward(df, df, step(1));
    tf = cross_blocks[i].forward(tf, df, step(2));
    df = cross_blocks[i].forward(df, tf, step(3));
  }
  if (cache) cache->valid = true;
  return {tf, df};
}

std::pair<Matrix, Matrix> InteractionTransformer::backward(const Cache& cache, const Matrix& dt,
                                                           const Matrix& dd) {
  if (!cache.valid) throw StateError("transformer: backward called before forward");
  Matrix gt = dt, gd = dd;
  auto add = [](Matrix& acc, const Matrix& g) {
    if (g.size() > 0) acc += g;
  };
  for (std::size_t i = self_blocks.size(); i-- > 0;) {
    {
      auto [ga, gb] = cross_blocks[i].backward(cache.steps[4 * i + 3], gd);
      gd = ga;
      add(gt, gb);
    }
    {
      auto [ga, gb] = cross_blocks[i].backward(cache.steps[4 * i + 2], gt);
      gt = ga;
      add(gd, gb);
    }
    {
      auto [ga, gb] = self_blocks[i].backward(cache.steps[4 * i + 1], gd);
      gd = ga;
      add(gd, gb);
    }
    {
      auto [ga, gb] = self_blocks[i].backward(cache.steps[4 * i + 0], gt);
      gt = ga;
      add(gt, gb);
    }
  }
  return {gt, gd};
}

void InteractionTransformer::collect(nn::ParamList& out) {
  for (std::size_t i = 0; i < self_blocks.size(); ++i) {
    self_blocks[i].collect(out);
    cross_blocks[i].collect(out);
  }
}

// ---------------------------------------------------------------------------
// Affinity providers
// ---------------------------------------------------------------------------

namespace {

// Row m*N + n holds [t_m | d_n].
Matrix pair_rows(const Matrix& t, const Matrix& d) {
  const Eigen::Index m = t.rows(), n = d.rows(), c = t.cols();
  Matrix f(m * n, 2 * c);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      f.block(i * n + j, 0, 1, c) = t.row(i);
      f.block(i * n + j, c, 1, c) = d.row(j);
    }
  return f;
}

Matrix normalized_rows(const Matrix& x, Eigen::VectorXd& norms) {
  norms = x.rowwise().norm();
  Matrix out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.row(i) = norms(i) > 0.0 ? Matrix(x.row(i) / norms(i)) : Matrix::Zero(1, x.cols());
  return out;
}

}  // namespace

AffinityHead::AffinityHead(int channels, nn::Rng& rng)
    : hidden("head.hidden", 2 * channels, channels, rng), out("head.out", channels, 1, rng) {}

AffinityMatrix AffinityHead::forward(const Matrix& t, const Matrix& d, nn::Mode mode,
                                     Cache* cache) const {
  const Eigen::Index m = t.rows(), n = d.rows();
  if (m == 0 || n == 0) {
    if (cache) cache->valid = false;
    return AffinityMatrix(m, n);
  }
  const Matrix f = pair_rows(t, d);
  const Matrix h = hidden.forward(f, mode, cache ? &cache->hidden : nullptr);
  const Matrix logits = out.forward(h, cache ? &cache->out : nullptr);
  const Matrix p = nn::sigmoid(logits);
  AffinityMatrix a(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = p(i * n + j, 0);
  if (cache) {
    cache->affinity = a;
    cache->valid = true;
  }
  return a;
}

std::pair<Matrix, Matrix> AffinityHead::backward(const Cache& cache, const Matrix& dA,
                                                 Eigen::Index m, Eigen::Index n) {
  if (m == 0 || n == 0) return {Matrix::Zero(m, hidden.linear.in_features() / 2),
                                Matrix::Zero(n, hidden.linear.in_features() / 2)};
  if (!cache.valid) throw StateError("affinity head: backward called before forward");
  Matrix dlogit(m * n, 1);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double p = cache.affinity(i, j);
      dlogit(i * n + j, 0) = dA(i, j) * p * (1.0 - p);
    }
  const Matrix df = hidden.backward(cache.hidden, out.backward(cache.out, dlogit));
  const Eigen::Index c = df.cols() / 2;
  Matrix dt = Matrix::Zero(m, c), dd = Matrix::Zero(n, c);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      dt.row(i) += df.block(i * n + j, 0, 1, c);
      dd.row(j) += df.block(i * n + j, c, 1, c);
    }
  return {dt, dd};
}

void AffinityHead::collect(nn::ParamList& out_list) {
  hidden.collect(out_list);
  out.collect(out_list);
}

void AffinityHead::collect_buffers(nn::ParamList& out_list) { hidden.collect_buffers(out_list); }

Matrix cosine_affinity(const Matrix& t, const Matrix& d) {
  if (t.cols() != d.cols()) throw ContractError("cosine_affinity: channel mismatch");
  Eigen::VectorXd nt, nd;
  return normalized_rows(t, nt) * normalized_rows(d, nd).transpose();
}

Matrix inner_product_affinity(const Matrix& t, const Matrix& d) {
  if (t.cols() != d.cols()) throw ContractError("inner_product_affinity: channel mismatch");
  return t * d.transpose();
}

Matrix scaled_distance(std::span<const ObjectState> tracks, std::span<const ObjectState> dets) {
  Matrix dist(static_cast<Eigen::Index>(tracks.size()), static_cast<Eigen::Index>(dets.size()));
  for (std::size_t i = 0; i < tracks.size(); ++i)
    for (std::size_t j = 0; j < dets.size(); ++j) {
      const auto& a = tracks[i];
      const auto& b = dets[j];
      const double c = std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                                 (a.z - b.z) * (a.z - b.z));
      dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          c * (2.0 - std::cos(a.theta - b.theta));
    }
  return dist;
}

HeuristicScores heuristic_affinity(std::span<const ObjectState> tracks,
                                   std::span<const ObjectState> dets, const TrackerConfig& cfg) {
  HeuristicScores out;
  out.distance = scaled_distance(tracks, dets);
  out.compatible.resize(out.distance.rows(), out.distance.cols());
  for (Eigen::Index i = 0; i < out.distance.rows(); ++i)
    for (Eigen::Index j = 0; j < out.distance.cols(); ++j)
      out.compatible(i, j) = out.distance(i, j) <= cfg.tau_3d_for(dets[j].class_id);
  return out;
}

// ---------------------------------------------------------------------------
// AffinityModel
// ---------------------------------------------------------------------------

std::string to_string(FeatureMixer m) {
  return m == FeatureMixer::transformer ? "transformer" : "independent";
}

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::ffn: return "ffn";
    case HeadKind::cosine: return "cosine";
    case HeadKind::inner_product: return "inner_product";
  }
  return "?";
}

std::string to_string(NormPlacement n) { return n == NormPlacement::pre ? "pre" : "post"; }

NormPlacement parse_norm(const std::string& s) {
  if (s == "pre") return NormPlacement::pre;
  if (s == "post") return NormPlacement::post;
  throw ConfigError("unknown norm placement '" + s + "'");
}

FeatureMixer parse_mixer(const std::string& s) {
  if (s == "transformer") return FeatureMixer::transformer;
  if (s == "independent") return FeatureMixer::independent;
  throw ConfigError("unknown feature mixer '" + s + "'");
}

HeadKind parse_head(const std::string& s) {
  if (s == "ffn") return HeadKind::ffn;
  if (s == "cosine") return HeadKind::cosine;
  if (s == "inner_product") return HeadKind::inner_product;
  throw ConfigError("unknown affinity head '" + s + "'");
}

void ModelConfig::validate() const {
  if (channels < 2 || channels % 2 != 0) throw ConfigError("channels must be even and >= 2");
  if (heads < 1 || channels % heads != 0) throw ConfigError("heads must divide channels");
  if (passes < 1) throw ConfigError("passes (N_c) must be >= 1");
}

Matrix centered_state_rows(std::span<const ObjectState> tracks, std::span<const ObjectState> dets) {
  Matrix rows(static_cast<Eigen::Index>(tracks.size() + dets.size()), kStateDim);
  Eigen::Index r = 0;
  for (const auto& s : tracks) rows.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(s.to_array().data(), kStateDim);
  for (const auto& s : dets) rows.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(s.to_array().data(), kStateDim);
  if (rows.rows() > 0) {
    const Eigen::RowVector3d mean = rows.leftCols<3>().colwise().mean();
    rows.leftCols<3>().rowwise() -= mean;
  }
  return rows;
}

AffinityModel::AffinityModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  nn::Rng rng(cfg.seed);
  features = FeatureExtractor(cfg.channels, rng);
  transformer = InteractionTransformer(cfg.channels, cfg.heads, cfg.passes, cfg.norm, rng);
  head = AffinityHead(cfg.channels, rng);
  Matrix cal(1, 2);
  cal << (cfg.head == HeadKind::inner_product ? 5.0 / cfg.channels : 5.0), 0.0;
  calibration = nn::Param("head.calibration", cal);
}

PairOutput AffinityModel::forward(const PairInput& in, nn::Mode mode, Cache* cache) const {
  const auto m = static_cast<Eigen::Index>(in.tracks.size());
  const auto n = static_cast<Eigen::Index>(in.detections.size());
  static const PointCloud kEmpty;
  const PointCloud& tc = in.track_cloud ? *in.track_cloud : kEmpty;
  const PointCloud& dc = in.detection_cloud ? *in.detection_cloud : kEmpty;

  const Matrix states = centered_state_rows(in.tracks, in.detections);
  Matrix shapes(m + n, kShapeDim);
  if (m > 0) shapes.topRows(m) = shape_matrix(in.tracks, tc);
  if (n > 0) shapes.bottomRows(n) = shape_matrix(in.detections, dc);

  PairOutput outp;
  const Matrix feat = features.forward(states, shapes, mode, cache ? &cache->features : nullptr);
  const int c = cfg_.channels;
  const Matrix t0 = m > 0 ? Matrix(feat.topRows(m)) : Matrix(0, c);
  const Matrix d0 = n > 0 ? Matrix(feat.bottomRows(n)) : Matrix(0, c);
  if (cfg_.mixer == FeatureMixer::transformer) {
    std::tie(outp.track_features, outp.detection_features) =
        transformer.forward(t0, d0, cache ? &cache->transformer : nullptr);
  } else {
    outp.track_features = t0;
    outp.detection_features = d0;
  }

  if (cfg_.head == HeadKind::ffn) {
    outp.affinity = head.forward(outp.track_features, outp.detection_features, mode,
                                 cache ? &cache->head : nullptr);
  } else {
    outp.scores = cfg_.head == HeadKind::cosine
                      ? cosine_affinity(outp.track_features, outp.detection_features)
                      : inner_product_affinity(outp.track_features, outp.detection_features);
    const double scale = calibration.value(0, 0), shift = calibration.value(0, 1);
    outp.affinity = nn::sigmoid((scale * outp.scores.array() + shift).matrix());
  }
  if (cache) {
    cache->output = outp;
    cache->m = m;
    cache->n = n;
    cache->valid = true;
  }
  return outp;
}

void AffinityModel::backward(const Cache& cache, const Matrix& dA) {
  if (!cache.valid) throw StateError("affinity model: backward called before forward");
  const Eigen::Index m = cache.m, n = cache.n;
  if (dA.rows() != m || dA.cols() != n) throw ContractError("affinity model: gradient shape");
  if (m == 0 || n == 0) return;
  const auto& o = cache.output;
  Matrix dt, dd;
  if (cfg_.head == HeadKind::ffn) {
    std::tie(dt, dd) = head.backward(cache.head, dA, m, n);
  } else {
    const Matrix dz = dA.array() * o.affinity.array() * (1.0 - o.affinity.array());
    const double scale = calibration.value(0, 0);
    calibration.grad(0, 0) += (dz.array() * o.scores.array()).sum();
    calibration.grad(0, 1) += dz.sum();
    const Matrix ds = scale * dz;
    if (cfg_.head == HeadKind::inner_product) {
      dt = ds * o.detection_features;
      dd = ds.transpose() * o.track_features;
    } else {
      Eigen::VectorXd nt, nd;
      const Matrix tn = normalized_rows(o.track_features, nt);
      const Matrix dn = normalized_rows(o.detection_features, nd);
      // Zero-norm rows have zero normalized vectors and receive no gradient.
      const Matrix dtn = ds * dn;
      const Matrix ddn = ds.transpose() * tn;
      auto through_norm = [](const Matrix& xn, const Eigen::VectorXd& norms, const Matrix& dxn) {
        Matrix dx = Matrix::Zero(xn.rows(), xn.cols());
        for (Eigen::Index i = 0; i < xn.rows(); ++i) {
          if (norms(i) <= 0.0) continue;
          const double proj = dxn.row(i).dot(xn.row(i));
          dx.row(i) = (dxn.row(i) - proj * xn.row(i)) / norms(i);
        }
        return dx;
      };
      dt = through_norm(tn, nt, dtn);
      dd = through_norm(dn, nd, ddn);
    }
  }
  if (cfg_.mixer == FeatureMixer::transformer) {
    std::tie(dt, dd) = transformer.backward(cache.transformer, dt, dd);
  }
  Matrix dfeat(m + n, cfg_.channels);
  dfeat.topRows(m) = dt;
  dfeat.bottomRows(n) = dd;
  features.backward(cache.features, dfeat);
}

nn::ParamList AffinityModel::parameters() {
  nn::ParamList out;
  features.collect(out);
  if (cfg_.mixer == FeatureMixer::transformer) transformer.collect(out);
  if (cfg_.head == HeadKind::ffn) {
    head.collect(out);
  } else {
    out.push_back(&calibration);
  }
  return out;
}

nn::ParamList AffinityModel::buffers() {
  nn::ParamList out;
  features.collect_buffers(out);
  if (cfg_.head == HeadKind::ffn) head.collect_buffers(out);
  return out;
}

nn::Checkpoint AffinityModel::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.meta["model.channels"] = std::to_string(cfg_.channels);
  ckpt.meta["model.heads"] = std::to_string(cfg_.heads);
  ckpt.meta["model.passes"] = std::to_string(cfg_.passes);
  ckpt.meta["model.mixer"] = to_string(cfg_.mixer);
  ckpt.meta["model.norm"] = to_string(cfg_.norm);
  ckpt.meta["model.head"] = to_string(cfg_.head);
  ckpt.meta["model.seed"] = std::to_string(cfg_.seed);
  auto& self = const_cast<AffinityModel&>(*this);  // collect() only takes addresses
  nn::store_params(ckpt, self.parameters());
  nn::store_params(ckpt, self.buffers());
  return ckpt;
}

AffinityModel AffinityModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  auto get = [&](const std::string& key) {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw ConfigError("checkpoint is missing meta " + key);
    return it->second;
  };
  ModelConfig cfg;
  cfg.channels = std::stoi(get("model.channels"));
  cfg.heads = std::stoi(get("model.heads"));
  cfg.passes = std::stoi(get("model.passes"));
  cfg.mixer = parse_mixer(get("model.mixer"));
  cfg.norm = parse_norm(get("model.norm"));
  cfg.head = parse_head(get("model.head"));
  cfg.seed = std::stoull(get("model.seed"));
  AffinityModel model(cfg);
  nn::restore_params(ckpt, model.parameters());
  nn::restore_params(ckpt, model.buffers());
  return model;
}

}  // namespace afftrack
