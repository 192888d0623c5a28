#include <doctest.h>

#include <cmath>
#include <random>

#include "afftrack/training.hpp"

using namespace afftrack;
using nn::Matrix;

namespace {

ObjectState ped(double x, double y) { return make_state(x, y, 0.875, 0.8, 0.7, 1.75, 0, 0, 0, kPedestrian, 0.9); }

LabeledBox gt_box(int id, const ObjectState& s) { return LabeledBox{id, 0, s, std::nullopt}; }

std::vector<Scenario> small_set(int count, std::uint64_t seed) {
  std::vector<Scenario> out;
  for (int i = 0; i < count; ++i) {
    ScenarioSpec spec = training_presets()[static_cast<std::size_t>(i)].spec;
    spec.frames = 8;
    out.push_back(generate(spec, seed + static_cast<std::uint64_t>(i)));
  }
  return out;
}

}  // namespace

TEST_CASE("ground-truth labels") {
  const std::vector<LabeledBox> gt{gt_box(4, ped(0, 0)), gt_box(9, ped(5, 0))};
  SUBCASE("identical detections give the identity correspondence") {
    const std::vector<ObjectState> objs{ped(0, 0), ped(5, 0)};
    const auto lab = make_labels(objs, objs, gt, gt, 0.55);
    CHECK(lab.target == Matrix::Identity(2, 2));
    CHECK(lab.previous_ids == std::vector<int>{4, 9});
  }
  SUBCASE("IoU below tau_gt leaves an object unmatched") {
    // Offset giving BEV IoU 0.5 for equal boxes: (l - dx) / (l + dx) = 0.5.
    const double dx = 0.8 / 3.0;
    const std::vector<ObjectState> prev{ped(0, 0), ped(5, 0)};
    const std::vector<ObjectState> cur{ped(dx, 0), ped(5, 0)};
    const auto lab = make_labels(prev, cur, gt, gt, 0.55);
    CHECK(lab.current_ids[0] == -1);
    CHECK(lab.target.col(0).isZero(0.0));
    CHECK(lab.target(1, 1) == 1.0);
  }
  SUBCASE("a duplicate loses to the better-overlapping box") {
    const std::vector<ObjectState> objs{ped(0.1, 0), ped(0.02, 0)};
    const auto ids = match_to_gt(objs, gt, 0.55);
    CHECK(ids == std::vector<int>{-1, 4});
  }
  SUBCASE("classes must agree") {
    auto car = ped(0, 0);
    car.class_id = kCar;
    const std::vector<ObjectState> objs{car};
    CHECK(match_to_gt(objs, gt, 0.55) == std::vector<int>{-1});
  }
}

TEST_CASE("focal loss") {
  Matrix a(1, 1), y(1, 1);
  y << 1.0;
  a << 0.999999;
  CHECK(focal_loss(a, y, 0.25, 2.0).loss < 1e-12);
  a << 0.5;
  CHECK(std::abs(focal_loss(a, y, 0.25, 2.0).loss - 0.25 * 0.25 * std::log(2.0)) < 1e-9);

  SUBCASE("gradient matches central differences") {
    nn::Rng rng(51);
    std::uniform_real_distribution<double> u(0.05, 0.95), c(0.0, 1.0);
    Matrix p(3, 4), t(3, 4);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p.data()[i] = u(rng);
      t.data()[i] = c(rng) < 0.3 ? 1.0 : 0.0;
    }
    const auto fl = focal_loss(p, t, 0.25, 2.0);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Matrix up = p, dn = p;
      up.data()[i] += h;
      dn.data()[i] -= h;
      const double num = (focal_loss(up, t, 0.25, 2.0).loss - focal_loss(dn, t, 0.25, 2.0).loss) / (2 * h);
      CHECK(std::abs(fl.grad.data()[i] - num) / std::abs(num) < 1e-6);
    }
  }
  SUBCASE("extreme probabilities are clamped") {
    Matrix q(1, 2), t(1, 2);
    q << 0.0, 1.0;
    t << 1.0, 0.0;
    const auto fl = focal_loss(q, t, 0.25, 2.0);
    CHECK(std::isfinite(fl.loss));
    CHECK(fl.clamped == 2);
  }
}

TEST_CASE("position perturbation") {
  std::vector<ObjectState> objs(3, ped(1, 2));
  nn::Rng a(5);
  CHECK(perturb_positions(objs, 0.0, 0.0, a) == objs);
  CHECK_FALSE(perturb_positions(objs, 0.01, 0.01, a) == objs);

  nn::Rng r1(6), r2(6);
  CHECK(perturb_positions(objs, 0.01, 0.02, r1) == perturb_positions(objs, 0.01, 0.02, r2));

  const std::vector<ObjectState> many(100000, ped(0, 0));
  nn::Rng rng(7);
  const auto out = perturb_positions(many, 0.01, 0.03, rng);
  double sx = 0.0, sy = 0.0;
  bool z_untouched = true;
  for (const auto& o : out) {
    sx += o.x * o.x;
    sy += o.y * o.y;
    z_untouched = z_untouched && o.z == many[0].z;
  }
  CHECK(z_untouched);
  CHECK(std::sqrt(sx / many.size()) == doctest::Approx(0.01).epsilon(0.02));
  CHECK(std::sqrt(sy / many.size()) == doctest::Approx(0.03).epsilon(0.02));
}

TEST_CASE("detection dropout") {
  std::vector<ObjectState> objs;
  for (int i = 0; i < 10; ++i) objs.push_back(ped(i, 0));
  nn::Rng rng(8);
  CHECK(dropout_detections(objs, 0.0, 0.0, rng) == objs);
  CHECK(dropout_detections(objs, 1.0, 1.0, rng).empty());
  const auto kept = dropout_detections(objs, 0.2, 0.2, rng);
  REQUIRE(kept.size() == 8);
  for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i].x > kept[i - 1].x);
}

TEST_CASE("training loop") {
  const auto scenarios = small_set(5, 300);
  const TrackerConfig tcfg;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    AffinityModel model;
    const auto before = model.to_checkpoint();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    cfg.drop_max = 0.0;
    cfg.sigma_x = cfg.sigma_y = 0.0;
    const auto res = train(model, scenarios, cfg, tcfg);
    for (const auto& t : before.tensors) {
      if (t.name.find("running") != std::string::npos) continue;
      CHECK(model.to_checkpoint().find(t.name)->value == t.value);
    }
    REQUIRE(res.loss_curve.size() == 3);
    CHECK(res.loss_curve[2] == doctest::Approx(res.loss_curve[0]).epsilon(1e-12));
  }
  SUBCASE("loss falls over 200 steps") {
    AffinityModel model;
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 23;  // 35 pairs per epoch, 9 steps each
    const auto res = train(model, scenarios, cfg, tcfg);
    CHECK(res.steps >= 200);
    CHECK(res.loss_curve.back() < res.loss_curve.front());
  }
  SUBCASE("a trained model labels held-out frames better than an untrained one") {
    const auto held_out = small_set(3, 900);
    AffinityModel untrained, trained;
    TrainConfig cfg;
    cfg.epochs = 10;
    train(trained, scenarios, cfg, tcfg);
    CHECK(label_accuracy(trained, held_out, tcfg) > label_accuracy(untrained, held_out, tcfg));
  }
}

TEST_CASE("resuming continues the loss curve") {
  const auto scenarios = small_set(3, 400);
  const TrackerConfig tcfg;
  TrainConfig cfg;
  cfg.epochs = 4;

  AffinityModel straight;
  Trainer full(straight, scenarios, cfg, tcfg);
  full.run();

  AffinityModel first;
  Trainer part(first, scenarios, cfg, tcfg);
  part.run_epoch();
  part.run_epoch();
  const auto ck = part.checkpoint();

  AffinityModel resumed = AffinityModel::from_checkpoint(ck);
  Trainer rest(resumed, scenarios, cfg, tcfg);
  rest.load_state(ck);
  rest.run();
  CHECK(rest.loss_curve() == full.loss_curve());
  CHECK(resumed.to_checkpoint().tensors.size() == straight.to_checkpoint().tensors.size());
}
