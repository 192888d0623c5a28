#include "afftrack/tracker.hpp"

#include <algorithm>
#include <tuple>

namespace afftrack {

std::vector<int> reject_overlaps(std::span<Track> tracks, const TrackerConfig& cfg) {
  std::vector<std::tuple<double, int, int>> pairs;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    if (tracks[i].status == TrackStatus::dead) continue;
    for (std::size_t j = i + 1; j < tracks.size(); ++j) {
      if (tracks[j].status == TrackStatus::dead) continue;
      if (tracks[i].state.class_id != tracks[j].state.class_id) continue;
      const double iou = iou_3d(tracks[i].state, tracks[j].state);
      if (iou > cfg.tau_rej_for(tracks[i].state.class_id))
        pairs.emplace_back(-iou, static_cast<int>(i), static_cast<int>(j));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<int> rejected;
  for (const auto& [neg_iou, i, j] : pairs) {
    Track& a = tracks[static_cast<std::size_t>(i)];
    Track& b = tracks[static_cast<std::size_t>(j)];
    if (a.status == TrackStatus::dead || b.status == TrackStatus::dead) continue;
    bool drop_a;
    if (a.age != b.age) {
      drop_a = a.age < b.age;
    } else {
      drop_a = a.track_id > b.track_id;
    }
    Track& loser = drop_a ? a : b;
    loser.status = TrackStatus::dead;
    rejected.push_back(drop_a ? i : j);
  }
  return rejected;
}

std::vector<Track> surviving_tracks(std::vector<Track> tracks, const TrackerConfig& cfg) {
  reject_overlaps(tracks, cfg);
  std::erase_if(tracks, [](const Track& t) { return t.status == TrackStatus::dead; });
  return tracks;
}

Tracker::Tracker(const TrackerConfig& cfg, const CameraModel& cam, const AffinityModel* model)
    : cfg_(cfg), cam_(cam), model_(model), noise_(KalmanNoise::from_config(cfg)) {
  cfg_.validate();
  cam_.validate();
  if (cfg_.affinity != AffinityKind::heuristic) {
    if (!model_) throw ConfigError("affinity '" + to_string(cfg_.affinity) + "' needs a model");
    const HeadKind want = cfg_.affinity == AffinityKind::learned  ? HeadKind::ffn
                          : cfg_.affinity == AffinityKind::cosine ? HeadKind::cosine
                                                                  : HeadKind::inner_product;
    if (model_->config().head != want)
      throw ConfigError("affinity '" + to_string(cfg_.affinity) + "' does not match model head '" +
                        to_string(model_->config().head) + "'");
  }
}

std::vector<Track> Tracker::tracks() const {
  std::vector<Track> out;
  out.reserve(live_.size());
  for (const auto& l : live_) out.push_back(l.track);
  return out;
}

nn::Matrix Tracker::affinity_scores(std::span<const ObjectState> previous,
                                    std::span<const ObjectState> predicted,
                                    std::span<const Detection> dets,
                                    const PointCloud& cloud) const {
  std::vector<ObjectState> det_states;
  det_states.reserve(dets.size());
  for (const auto& d : dets) det_states.push_back(d.state);
  if (cfg_.affinity == AffinityKind::heuristic) return scaled_distance(predicted, det_states);
  PairInput in;
  in.tracks = previous;
  in.track_cloud = &previous_cloud_;
  in.detections = det_states;
  in.detection_cloud = &cloud;
  return model_->forward(in, nn::Mode::eval).affinity;
}

std::vector<Track> Tracker::step(const FrameInput& in) {
  if (!(in.dt > 0.0)) throw DomainError("tracker step: dt must be positive");
  static const PointCloud kEmpty;
  const PointCloud& cloud = in.cloud ? *in.cloud : kEmpty;
  trace_ = FrameTrace{};
  trace_.frame = frame_;

  // Predict.
  std::vector<ObjectState> previous, predicted;
  previous.reserve(live_.size());
  predicted.reserve(live_.size());
  for (auto& l : live_) {
    previous.push_back(l.track.state);
    if (cfg_.motion == MotionKind::kalman) {
      l.kalman = kalman_predict(l.kalman, in.dt, noise_);
      l.track.state = l.kalman.to_state(l.track.state);
    } else {
      l.track = predict_velocity(l.track, in.dt);
    }
    l.track.age += 1;
    predicted.push_back(l.track.state);
    trace_.track_ids.push_back(l.track.track_id);
  }

  // Fuse and associate.
  trace_.fusion = fuse_detections(in.detections, in.detections2d, cam_, cfg_);
  trace_.kind = cfg_.affinity == AffinityKind::heuristic ? ScoreKind::distance : ScoreKind::affinity;
  trace_.scores = affinity_scores(previous, predicted, in.detections, cloud);
  trace_.stage1 = stage1(predicted, in.detections, trace_.scores, trace_.kind, cfg_);

  std::vector<ObjectState> s2_tracks;
  for (int t : trace_.stage1.unmatched_tracks) s2_tracks.push_back(predicted[static_cast<std::size_t>(t)]);
  std::vector<Detection2D> s2_dets;
  for (int d : trace_.fusion.unfused_2d) s2_dets.push_back(in.detections2d[static_cast<std::size_t>(d)]);
  trace_.stage2 = stage2(s2_tracks, s2_dets, cam_, cfg_);

  // Update.
  std::vector<char> matched(live_.size(), 0);
  for (const auto& m : trace_.stage1.matches) {
    auto& l = live_[static_cast<std::size_t>(m.track)];
    const Detection& det = in.detections[static_cast<std::size_t>(m.detection)];
    if (cfg_.motion == MotionKind::kalman) {
      l.kalman = kalman_update(l.kalman, det, noise_);
      l.track.state = l.kalman.to_state(det.state);
      l.track.hits += 1;
      l.track.misses = 0;
    } else {
      l.track = update_assign(l.track, det);
    }
    matched[static_cast<std::size_t>(m.track)] = 1;
  }
  for (const auto& m : trace_.stage2.matches) {
    const int t = trace_.stage1.unmatched_tracks[static_cast<std::size_t>(m.track)];
    auto& l = live_[static_cast<std::size_t>(t)];
    l.track.hits += 1;
    l.track.misses = 0;
    matched[static_cast<std::size_t>(t)] = 1;
  }
  for (std::size_t i = 0; i < live_.size(); ++i) {
    if (matched[i]) continue;
    auto& t = live_[i].track;
    t.misses += 1;
    if (t.misses >= cfg_.max_misses) t.status = TrackStatus::dead;
  }

  // Birth.
  for (int d : trace_.stage1.unmatched_detections) {
    const Detection& det = in.detections[static_cast<std::size_t>(d)];
    Live l;
    l.track.state = det.state;
    l.track.track_id = next_id_++;
    l.kalman = KalmanState::from_detection(det.state, noise_);
    live_.push_back(std::move(l));
  }
  for (auto& l : live_)
    if (l.track.status == TrackStatus::tentative && l.track.hits >= cfg_.min_hits)
      l.track.status = TrackStatus::confirmed;

  // Rejection.
  if (cfg_.rejection) {
    std::vector<Track> view = tracks();
    for (int idx : reject_overlaps(view, cfg_)) {
      live_[static_cast<std::size_t>(idx)].track.status = TrackStatus::dead;
      trace_.rejected_ids.push_back(view[static_cast<std::size_t>(idx)].track_id);
    }
  }
  std::erase_if(live_, [](const Live& l) { return l.track.status == TrackStatus::dead; });

  std::vector<Track> out;
  for (const auto& l : live_)
    if (l.track.status == TrackStatus::confirmed && l.track.misses == 0) out.push_back(l.track);
  previous_cloud_ = cloud;
  ++frame_;
  return out;
}

LabeledSequence run_sequence(const Scenario& s, const TrackerConfig& cfg, const AffinityModel* model,
                             const FrameObserver& observer) {
  Tracker tracker(cfg, s.camera, model);
  LabeledSequence out(static_cast<std::size_t>(s.frames()));
  static const std::vector<Detection2D> kNo2d;
  for (int f = 0; f < s.frames(); ++f) {
    const auto uf = static_cast<std::size_t>(f);
    FrameInput in;
    in.detections = s.detections[uf];
    in.detections2d = uf < s.detections2d.size() ? std::span<const Detection2D>(s.detections2d[uf])
                                                 : std::span<const Detection2D>(kNo2d);
    in.cloud = uf < s.clouds.size() ? &s.clouds[uf] : nullptr;
    in.dt = s.dt;
    for (const Track& t : tracker.step(in)) out[uf].push_back(LabeledBox{t.track_id, f, t.state, std::nullopt});
    if (observer) observer(tracker, f);
  }
  return out;
}

TrackerConfig AblationRow::apply(TrackerConfig base) const {
  base.matcher = matcher;
  base.rejection = rejection;
  base.affinity = affinity;
  base.motion = motion;
  return base;
}

std::vector<AblationRow> ablation_grid() {
  std::vector<AblationRow> rows;
  for (auto [m, suffix] : {std::pair{MatcherKind::greedy, "a"}, std::pair{MatcherKind::hungarian, "b"}}) {
    rows.push_back({std::string("1") + suffix, m, false, AffinityKind::heuristic, MotionKind::kalman});
    rows.push_back({std::string("2") + suffix, m, true, AffinityKind::heuristic, MotionKind::kalman});
    rows.push_back({std::string("3") + suffix, m, true, AffinityKind::learned, MotionKind::kalman});
    rows.push_back({std::string("4") + suffix, m, true, AffinityKind::learned, MotionKind::velocity});
  }
  return rows;
}

}  // namespace afftrack
