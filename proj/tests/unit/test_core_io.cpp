#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "afftrack/io.hpp"

using namespace afftrack;

TEST_CASE("normalize_angle maps into (-pi, pi]") {
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi).epsilon(1e-12));
  CHECK(normalize_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi).epsilon(1e-12));
  CHECK_THROWS_AS(normalize_angle(std::nan("")), DomainError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const double t = u(rng);
    const double r = normalize_angle(t);
    CHECK(r > -std::numbers::pi);
    CHECK(r <= std::numbers::pi);
    const double k = (t - r) / (2 * std::numbers::pi);
    CHECK(std::abs(k - std::round(k)) < 1e-9);
  }
}

TEST_CASE("ObjectState validation names the offending field") {
  ObjectState s;
  s.l = 0.0;
  try {
    s.validate();
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "l");
  }
  CHECK_NOTHROW(make_state(0, 0, 0, 1, 1, 1, 7.0, 0, 0, 0, 0.5));
  CHECK(make_state(0, 0, 0, 1, 1, 1, 7.0, 0, 0, 0, 0.5).theta ==
        doctest::Approx(7.0 - 2 * std::numbers::pi));
}

TEST_CASE("detection files group records by frame") {
  SUBCASE("empty file gives an empty sequence") {
    std::istringstream in("");
    CHECK(parse_detections(in).empty());
  }
  SUBCASE("record with zero length is rejected on field l") {
    std::istringstream in("0 0 1 2 0.5 0 1.9 1.6 0 0 0 0.9\n");
    try {
      parse_detections(in);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.field() == "l");
    }
  }
  SUBCASE("frames 0, 0, 2 give three groups with frame 1 empty") {
    std::istringstream in(
        "0 0 1 2 0.8 4.5 1.9 1.6 0 0 0 0.9\n"
        "0 1 3 4 0.9 0.8 0.7 1.75 0 0 0 0.8\n"
        "2 0 1 2 0.8 4.5 1.9 1.6 0 0 0 0.7\n");
    const auto seq = parse_detections(in);
    REQUIRE(seq.size() == 3);
    CHECK(seq[0].size() == 2);
    CHECK(seq[1].empty());
    CHECK(seq[2].size() == 1);
    CHECK(seq[2][0].state.score == 0.7);
  }
  SUBCASE("malformed numbers report their line") {
    std::istringstream in("0 0 1 2 0.8 4.5 1.9 1.6 0 0 0 0.9\n0 0 x 2 0.8 4.5 1.9 1.6 0 0 0 0.9\n");
    try {
      parse_detections(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("decreasing frames are rejected") {
    std::istringstream in("1 0 1 2 0.8 4.5 1.9 1.6 0 0 0 0.9\n0 0 1 2 0.8 4.5 1.9 1.6 0 0 0 0.9\n");
    CHECK_THROWS_AS(parse_detections(in), ParseError);
  }
}

TEST_CASE("detection files round-trip bit for bit") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-30.0, 30.0), pos(0.1, 5.0), sc(0.0, 1.0);
  DetectionSequence seq(4);
  for (int f = 0; f < 4; ++f)
    for (int i = 0; i < 3; ++i) {
      Detection d;
      d.frame = f;
      d.source_id = i;
      d.state = make_state(u(rng), u(rng), u(rng) / 10, pos(rng), pos(rng), pos(rng), u(rng),
                           u(rng) / 7, u(rng) / 7, i % 3, sc(rng));
      if (i == 1) d.box2d = Box2D{10.0 + sc(rng), 20.0, 30.0 + sc(rng), 40.0};
      seq[f].push_back(d);
    }
  std::stringstream ss;
  write_detections(ss, seq);
  const auto back = parse_detections(ss);
  CHECK(back == seq);
}

TEST_CASE("format_double is the shortest exact representation") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) / 3.0;
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("tracker config keys are applied and thresholds keep their defaults") {
  TrackerConfig cfg;
  CHECK(cfg.tau_rej == 0.6);
  CHECK(cfg.tau_gt == 0.55);
  std::istringstream in("tau_3d = 3.5\ntau_3d.1 = 1.25  # pedestrians\nmatcher = greedy\n");
  const auto kv = parse_key_values(in);
  const auto used = apply_tracker_config(kv, cfg);
  CHECK(used.size() == 3);
  CHECK(cfg.tau_3d_for(0) == 3.5);
  CHECK(cfg.tau_3d_for(1) == 1.25);
  CHECK(cfg.matcher == MatcherKind::greedy);

  TrackerConfig bad;
  bad.tau_rej = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
