#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "afftrack/geometry.hpp"
#include "afftrack/metrics.hpp"
#include "afftrack/tracker.hpp"
#include "afftrack/training.hpp"

using namespace afftrack;

namespace {

Track make_track(int id, double x, int age, int cls = 0) {
  Track t;
  t.track_id = id;
  t.age = age;
  t.state = make_state(x, 0, 0, 1, 1, 1, 0, 0, 0, cls, 0.9);
  return t;
}

// Offset along x giving IoU `iou` between two unit cubes.
double offset_for(double iou) { return (1.0 - iou) / (1.0 + iou); }

Detection det_at(double x, double y, int frame) {
  Detection d;
  d.frame = frame;
  d.state = make_state(x, y, 0.8, 4.5, 1.9, 1.6, 0.0, 2.0, 0.0, kCar, 0.9);
  return d;
}

TrackerConfig heuristic_config() {
  TrackerConfig cfg;
  cfg.affinity = AffinityKind::heuristic;
  return cfg;
}

}  // namespace

TEST_CASE("overlap rejection") {
  TrackerConfig cfg;
  SUBCASE("the younger of an overlapping pair dies") {
    std::vector<Track> ts{make_track(1, 0, 5), make_track(2, offset_for(0.7), 2)};
    CHECK(iou_3d(ts[0].state, ts[1].state) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(reject_overlaps(ts, cfg) == std::vector<int>{1});
    CHECK(ts[1].status == TrackStatus::dead);
  }
  SUBCASE("IoU at or below the threshold keeps both") {
    std::vector<Track> ts{make_track(1, 0, 5), make_track(2, offset_for(0.5), 2)};
    CHECK(reject_overlaps(ts, cfg).empty());
  }
  SUBCASE("three mutually overlapping tracks leave the oldest") {
    std::vector<Track> ts{make_track(1, 0, 3), make_track(2, 0.05, 2), make_track(3, 0.1, 1)};
    const auto survivors = surviving_tracks(ts, cfg);
    REQUIRE(survivors.size() == 1);
    CHECK(survivors[0].age == 3);
  }
  SUBCASE("equal ages keep the lower id") {
    std::vector<Track> ts{make_track(7, 0, 4), make_track(3, 0.05, 4)};
    const auto survivors = surviving_tracks(ts, cfg);
    REQUIRE(survivors.size() == 1);
    CHECK(survivors[0].track_id == 3);
  }
  SUBCASE("different classes never reject each other") {
    std::vector<Track> ts{make_track(1, 0, 3), make_track(2, 0.0, 1, kPedestrian)};
    CHECK(reject_overlaps(ts, cfg).empty());
  }
  SUBCASE("no surviving same-class pair overlaps above the threshold") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> pos(0.0, 3.0);
    std::uniform_int_distribution<int> age(1, 6), cls(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Track> ts;
      for (int i = 0; i < 8; ++i) {
        Track t = make_track(i + 1, pos(rng), age(rng), cls(rng));
        t.state.y = pos(rng) / 3;
        ts.push_back(t);
      }
      const auto survivors = surviving_tracks(ts, cfg);
      for (std::size_t i = 0; i < survivors.size(); ++i)
        for (std::size_t j = i + 1; j < survivors.size(); ++j)
          if (survivors[i].state.class_id == survivors[j].state.class_id)
            CHECK(iou_3d(survivors[i].state, survivors[j].state) <= cfg.tau_rej);
    }
  }
}

TEST_CASE("tracker lifecycle") {
  const CameraModel cam = default_camera();
  SUBCASE("an empty frame only advances the frame counter") {
    Tracker tr(heuristic_config(), cam);
    CHECK(tr.step({}).empty());
    CHECK(tr.tracks().empty());
    CHECK(tr.frame() == 1);
  }
  SUBCASE("a repeated detection is confirmed after min_hits frames with a stable id") {
    TrackerConfig cfg = heuristic_config();
    cfg.min_hits = 3;
    Tracker tr(cfg, cam);
    for (int f = 0; f < 6; ++f) {
      const std::vector<Detection> dets{det_at(15.0 + f, 2.0, f)};
      const auto out = tr.step({dets, {}, nullptr, 0.5});
      if (f < 2) {
        CHECK(out.empty());
      } else {
        REQUIRE(out.size() == 1);
        CHECK(out[0].track_id == 1);
      }
    }
  }
  SUBCASE("a track dies after max_misses frames without a match") {
    TrackerConfig cfg = heuristic_config();
    cfg.max_misses = 2;
    Tracker tr(cfg, cam);
    const std::vector<Detection> dets{det_at(15.0, 2.0, 0)};
    tr.step({dets, {}, nullptr, 0.5});
    tr.step({});
    CHECK(tr.tracks().size() == 1);
    tr.step({});
    CHECK(tr.tracks().empty());
  }
  SUBCASE("learned affinity needs a model") {
    CHECK_THROWS(Tracker(TrackerConfig{}, cam, nullptr));
  }
}

TEST_CASE("track ids stay unique and are never reused") {
  const Scenario s = generate(find_preset("cluster_dense").spec, 5);
  std::set<int> alive, dead;
  int max_id = 0;
  long checked = 0;
  run_sequence(s, heuristic_config(), nullptr, [&](const Tracker& tr, int) {
    std::set<int> now;
    for (const auto& t : tr.tracks()) {
      CHECK(now.insert(t.track_id).second);
      CHECK(dead.count(t.track_id) == 0);
      if (!alive.count(t.track_id)) CHECK(t.track_id > max_id);
      max_id = std::max(max_id, t.track_id);
      ++checked;
    }
    for (int id : alive)
      if (!now.count(id)) dead.insert(id);
    alive = now;
  });
  CHECK(checked > 50);
  CHECK(!dead.empty());
}

TEST_CASE("tracking is deterministic") {
  const Scenario s = generate(find_preset("duplicates_heavy").spec, 3);
  CHECK(run_sequence(s, heuristic_config()) == run_sequence(s, heuristic_config()));
}

TEST_CASE("learned affinity keeps identities through a crossing") {
  std::vector<Scenario> train_set;
  for (const auto& p : training_presets()) train_set.push_back(generate(p.spec, p.seed));
  AffinityModel model;
  TrainConfig tc;
  tc.epochs = 6;
  train(model, train_set, tc, TrackerConfig{});

  ScenarioSpec spec;
  spec.clusters = 0;
  spec.singles = 0;
  spec.crossing_pairs = 1;
  spec.miss_rate = 0.0;
  spec.clutter_rate = 0.0;
  spec.pos_noise = 0.03;
  spec.velocity_noise = 0.05;
  const Scenario s = generate(spec, 8);
  const auto pred = run_sequence(s, TrackerConfig{}, &model);
  const std::vector<EvalSequence> seqs{{s.gt, pred}};
  const ClearMot c = clear_mot(seqs);
  CHECK(c.ids == 0);
  CHECK(c.tp >= c.gt - 2);
}
