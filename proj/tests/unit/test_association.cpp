#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "afftrack/association.hpp"

using namespace afftrack;
using nn::Matrix;

namespace {

struct Best {
  int count = -1;
  double cost = 0.0;
};

// Exhaustive oracle: the largest number of allowed pairs, then the smallest
// total cost among assignments with that many pairs.
Best brute_force(const Matrix& cost, const BoolMatrix& forbidden) {
  const int m = static_cast<int>(cost.rows()), n = static_cast<int>(cost.cols());
  const bool transpose = m > n;
  const int small = transpose ? n : m, large = transpose ? m : n;
  std::vector<int> cols(large);
  std::iota(cols.begin(), cols.end(), 0);
  Best best;
  do {
    int count = 0;
    double total = 0.0;
    for (int r = 0; r < small; ++r) {
      const int i = transpose ? cols[r] : r, j = transpose ? r : cols[r];
      if (forbidden(i, j)) continue;
      ++count;
      total += cost(i, j);
    }
    if (count > best.count || (count == best.count && total < best.cost - 1e-12)) best = {count, total};
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Best evaluate(const AssignmentMatrix& a, const Matrix& cost, const BoolMatrix& forbidden) {
  Best b{0, 0.0};
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    CHECK(a.row(i).count() <= 1);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j)) {
        CHECK_FALSE(forbidden(i, j));
        ++b.count;
        b.cost += cost(i, j);
      }
  }
  for (Eigen::Index j = 0; j < a.cols(); ++j) CHECK(a.col(j).count() <= 1);
  return b;
}

Detection det(double x, double y, int cls = 0) {
  Detection d;
  d.state = make_state(x, y, 0.8, 4.0, 1.8, 1.6, 0.0, 0, 0, cls, 0.9);
  return d;
}

CameraModel camera() {
  CameraModel cam;
  cam.P = {800, -1000, 0, 0, 450, 0, -1000, 1700, 1, 0, 0, 0};
  return cam;
}

}  // namespace

TEST_CASE("Hungarian hand cases") {
  Matrix c(2, 2);
  c << 1, 2, 3, 1;
  const auto a = hungarian(c);
  CHECK(a(0, 0));
  CHECK(a(1, 1));
  CHECK(a.count() == 2);

  CHECK(hungarian(Matrix::Constant(1, 1, 0.4)).count() == 1);
  CHECK(hungarian(Matrix::Ones(3, 2), BoolMatrix::Constant(3, 2, true)).count() == 0);
  CHECK(hungarian(Matrix(0, 3)).size() == 0);
}

TEST_CASE("Hungarian agrees with exhaustive enumeration") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> dim(1, 7);
  std::uniform_real_distribution<double> u(-5.0, 5.0), p(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = dim(rng), n = dim(rng);
    Matrix cost(m, n);
    BoolMatrix forbidden(m, n);
    const double density = trial % 3 == 0 ? 0.3 : 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        cost(i, j) = trial % 5 == 0 ? std::round(u(rng)) : u(rng);  // integer costs create ties
        forbidden(i, j) = p(rng) < density;
      }
    const Best want = brute_force(cost, forbidden);
    const Best got = evaluate(hungarian(cost, forbidden), cost, forbidden);
    CHECK(got.count == want.count);
    CHECK(got.cost == doctest::Approx(want.cost).epsilon(1e-9));
  }
}

TEST_CASE("greedy matching") {
  Matrix s(2, 2);
  s << 0.9, 0.8, 0.85, 0.1;
  const auto g = greedy(s, 0.5, true);
  REQUIRE(g.matches.size() == 1);
  CHECK(g.matches[0] == Match{0, 0, 0.9});
  CHECK(g.unmatched_tracks == std::vector<int>{1});
  CHECK(g.unmatched_detections == std::vector<int>{1});

  CHECK(greedy(s, 0.95, true).matches.empty());
  CHECK(greedy(Matrix::Constant(1, 1, 0.7), 0.5, true).matches.size() == 1);

  SUBCASE("ties go to the smallest (row, col)") {
    const auto t = greedy(Matrix::Constant(2, 2, 0.5), 0.0, true);
    REQUIRE(t.matches.size() == 2);
    CHECK(t.matches[0].detection == 0);
    CHECK(t.matches[1].detection == 1);
  }
  SUBCASE("minimizing") {
    const auto mn = greedy(s, 0.5, false);
    REQUIRE(mn.matches.size() == 1);
    CHECK(mn.matches[0] == Match{1, 1, 0.1});
  }
}

TEST_CASE("Hungarian total affinity is never below greedy") {
  std::mt19937_64 rng(32);
  std::uniform_int_distribution<int> dim(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int m = dim(rng), n = dim(rng);
    Matrix a(m, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
    const double h = to_match_set(hungarian((1.0 - a.array()).matrix()), a).total_score();
    const double g = greedy(a, 0.0, true).total_score();
    CHECK(h >= g - 1e-12);
  }
}

TEST_CASE("fusion of 3D and 2D detections") {
  const auto cam = camera();
  std::vector<Detection> d3{det(20, 0)};
  const auto proj = project_box(d3[0].state, cam);
  REQUIRE(proj.has_value());
  TrackerConfig cfg;

  SUBCASE("exact projection fuses") {
    const std::vector<Detection2D> d2{{*proj, 0, 0, 0.9, 0}};
    const auto f = fuse_detections(d3, d2, cam, cfg);
    REQUIRE(f.pairs.size() == 1);
    CHECK(f.pairs[0].score == doctest::Approx(1.0));
  }
  SUBCASE("no 2D detections leaves every 3D detection unfused") {
    const auto f = fuse_detections(d3, {}, cam, cfg);
    CHECK(f.pairs.empty());
    CHECK(f.unfused_3d == std::vector<int>{0});
  }
  SUBCASE("two 3D boxes on one 2D box fuse once") {
    d3.push_back(det(20.2, 0.1));
    const std::vector<Detection2D> d2{{*proj, 0, 0, 0.9, 0}};
    const auto f = fuse_detections(d3, d2, cam, cfg);
    REQUIRE(f.pairs.size() == 1);
    CHECK(f.pairs[0].track == 0);
    CHECK(f.unfused_3d == std::vector<int>{1});
  }
  SUBCASE("class mismatch blocks fusion") {
    const std::vector<Detection2D> d2{{*proj, 0, 1, 0.9, 0}};
    CHECK(fuse_detections(d3, d2, cam, cfg).pairs.empty());
  }
}

TEST_CASE("first association stage") {
  TrackerConfig cfg;
  std::vector<ObjectState> tracks{det(10, 0).state, det(10, 5).state};
  std::vector<Detection> dets{det(10.2, 0), det(10.1, 5.1)};
  Matrix a(2, 2);
  a << 0.9, 0.1, 0.1, 0.9;

  SUBCASE("dominant diagonal") {
    const auto m = stage1(tracks, dets, a, ScoreKind::affinity, cfg);
    REQUIRE(m.matches.size() == 2);
    CHECK(m.matches[0].detection == 0);
    CHECK(m.matches[1].detection == 1);
  }
  SUBCASE("distance gate drops a far pair") {
    dets[1] = det(30, 5);
    const auto m = stage1(tracks, dets, a, ScoreKind::affinity, cfg);
    REQUIRE(m.matches.size() == 1);
    CHECK(m.unmatched_tracks == std::vector<int>{1});
    CHECK(m.unmatched_detections == std::vector<int>{1});
  }
  SUBCASE("class gating") {
    dets[0].state.class_id = 1;
    const auto m = stage1(tracks, dets, a, ScoreKind::affinity, cfg);
    REQUIRE(m.matches.size() == 1);
    CHECK(m.matches[0].track == 1);
  }
  SUBCASE("Hungarian and greedy on a crafted affinity") {
    tracks = {det(10, 0).state, det(10.5, 0).state};
    dets = {det(10.2, 0), det(10.3, 0)};
    a << 0.6, 0.5, 0.59, 0.0;
    const auto h = stage1(tracks, dets, a, ScoreKind::affinity, cfg);
    CHECK(h.total_score() == doctest::Approx(1.09));
    CHECK(h.matches[0].detection == 1);
    cfg.matcher = MatcherKind::greedy;
    const auto g = stage1(tracks, dets, a, ScoreKind::affinity, cfg);
    CHECK(g.matches[0].detection == 0);
    CHECK(g.total_score() == doctest::Approx(0.6));
    CHECK(h.total_score() >= g.total_score());
  }
  SUBCASE("heuristic distances are used as costs") {
    std::vector<ObjectState> ds{dets[0].state, dets[1].state};
    const auto m = stage1(tracks, dets, scaled_distance(tracks, ds), ScoreKind::distance, cfg);
    CHECK(m.matches.size() == 2);
  }
  SUBCASE("score shape is checked") {
    CHECK_THROWS_AS(stage1(tracks, dets, Matrix(1, 2), ScoreKind::affinity, cfg), ContractError);
  }
}

TEST_CASE("second association stage") {
  const auto cam = camera();
  TrackerConfig cfg;
  const auto t = det(20, 0).state;
  const auto proj = *project_box(t, cam);

  SUBCASE("a leftover box with high IoU keeps the track") {
    Box2D b = proj;
    const double shrink = 0.05 * (b.u2 - b.u1);
    b.u1 += shrink;
    const std::vector<Detection2D> d2{{b, 0, 0, 0.9, 0}};
    const std::vector<ObjectState> ts{t};
    const auto m = stage2(ts, d2, cam, cfg);
    REQUIRE(m.matches.size() == 1);
    CHECK(m.matches[0].score >= 0.8);
  }
  SUBCASE("a track behind the camera never matches") {
    const std::vector<ObjectState> ts{det(-20, 0).state};
    const std::vector<Detection2D> d2{{Box2D{0, 0, 1600, 900}, 0, 0, 0.9, 0}};
    CHECK(stage2(ts, d2, cam, cfg).matches.empty());
  }
  SUBCASE("two tracks compete for one box") {
    const std::vector<ObjectState> ts{t, det(20.1, 0).state};
    const std::vector<Detection2D> d2{{proj, 0, 0, 0.9, 0}};
    const auto m = stage2(ts, d2, cam, cfg);
    CHECK(m.matches.size() == 1);
    CHECK(m.matches[0].track == 0);
  }
}

TEST_CASE("match sets validate their indices") {
  MatchSet ms;
  ms.matches = {{0, 1, 0.5}};
  ms.unmatched_tracks = {1};
  ms.unmatched_detections = {0};
  CHECK_NOTHROW(ms.validate(2, 2));
  ms.unmatched_detections = {1};
  CHECK_THROWS_AS(ms.validate(2, 2), ContractError);
}
