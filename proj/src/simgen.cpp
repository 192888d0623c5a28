#include "afftrack/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "afftrack/io.hpp"

namespace afftrack {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Always consumes one draw so that zero noise does not shift the stream.
double gauss(Rng& rng, double sd) { return sd * std::normal_distribution<double>(0.0, 1.0)(rng); }

int pick_class(Rng& rng, const std::array<double, 3>& w) {
  std::discrete_distribution<int> d(w.begin(), w.end());
  return d(rng);
}

std::array<double, 2> class_speed(int cls) {
  switch (cls) {
    case kCar: return {2.0, 5.0};
    case kPedestrian: return {0.8, 1.5};
    default: return {2.0, 4.0};
  }
}

double class_reflectance(int cls) {
  switch (cls) {
    case kCar: return 0.6;
    case kPedestrian: return 0.25;
    default: return 0.4;
  }
}

struct SimObject {
  int cls = 0;
  double l = 1, w = 1, h = 1;
  double cx = 0, cy = 0;  // position at the middle frame
  double vx = 0, vy = 0;
  std::vector<std::array<double, 2>> jitter;  // per frame

  ObjectState at(int frame, int frames, double dt) const {
    const double tau = (frame - 0.5 * (frames - 1)) * dt;
    ObjectState s;
    s.x = cx + vx * tau + jitter[static_cast<std::size_t>(frame)][0];
    s.y = cy + vy * tau + jitter[static_cast<std::size_t>(frame)][1];
    s.z = 0.5 * h;
    s.l = l;
    s.w = w;
    s.h = h;
    s.theta = normalize_angle(std::atan2(vy, vx));
    s.vx = vx;
    s.vy = vy;
    s.class_id = cls;
    s.score = 1.0;
    return s;
  }
};

bool bev_overlap(const ObjectState& a, const ObjectState& b) {
  const auto ca = bev_corners(a), cb = bev_corners(b);
  return convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()}) > 0.0;
}

bool compatible(const SimObject& a, const SimObject& b, const ScenarioSpec& spec) {
  for (int f = 0; f < spec.frames; ++f) {
    const ObjectState sa = a.at(f, spec.frames, spec.dt), sb = b.at(f, spec.frames, spec.dt);
    if (center_distance_bev(sa, sb) < spec.min_separation) return false;
    if (!spec.allow_overlap && bev_overlap(sa, sb)) return false;
  }
  return true;
}

SimObject make_object(Rng& rng, int cls, const ScenarioSpec& spec, bool jitter) {
  SimObject o;
  o.cls = cls;
  const auto size = class_size(cls);
  const double scale = uniform(rng, 0.9, 1.1);
  o.l = size[0] * scale;
  o.w = size[1] * scale;
  o.h = size[2] * uniform(rng, 0.95, 1.05);
  o.jitter.resize(static_cast<std::size_t>(spec.frames));
  for (auto& j : o.jitter) {
    const double jx = gauss(rng, spec.position_jitter), jy = gauss(rng, spec.position_jitter);
    j = jitter ? std::array<double, 2>{jx, jy} : std::array<double, 2>{0.0, 0.0};
  }
  return o;
}

void random_velocity(Rng& rng, int cls, const ScenarioSpec& spec, double& vx, double& vy) {
  const auto [lo, hi] = class_speed(cls);
  const double speed = uniform(rng, lo, hi) * spec.speed_scale;
  const double heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
  vx = speed * std::cos(heading);
  vy = speed * std::sin(heading);
}

constexpr int kPlacementTries = 400;
constexpr int kSceneRestarts = 60;

bool place(std::vector<SimObject>& placed, const SimObject& cand, const ScenarioSpec& spec) {
  for (const auto& p : placed)
    if (!compatible(p, cand, spec)) return false;
  placed.push_back(cand);
  return true;
}

std::vector<SimObject> layout(Rng& rng, const ScenarioSpec& spec) {
  for (int restart = 0; restart < kSceneRestarts; ++restart) {
    std::vector<SimObject> objs;
    bool ok = true;
    for (int c = 0; c < spec.clusters && ok; ++c) {
      const int cls = spec.cluster_class >= 0 ? spec.cluster_class : pick_class(rng, spec.class_weights);
      const double ccx = uniform(rng, 15.0, 45.0), ccy = uniform(rng, -12.0, 12.0);
      double cvx, cvy;
      random_velocity(rng, cls, spec, cvx, cvy);
      for (int i = 0; i < spec.objects_per_cluster && ok; ++i) {
        bool done = false;
        for (int t = 0; t < kPlacementTries && !done; ++t) {
          SimObject o = make_object(rng, cls, spec, true);
          const double r = spec.cluster_radius * std::sqrt(uniform(rng, 0.0, 1.0));
          const double a = uniform(rng, -std::numbers::pi, std::numbers::pi);
          o.cx = ccx + r * std::cos(a);
          o.cy = ccy + r * std::sin(a);
          o.vx = cvx + gauss(rng, spec.velocity_jitter);
          o.vy = cvy + gauss(rng, spec.velocity_jitter);
          done = place(objs, o, spec);
        }
        ok = done;
      }
    }
    for (int p = 0; p < spec.crossing_pairs && ok; ++p) {
      bool done = false;
      for (int t = 0; t < kPlacementTries && !done; ++t) {
        SimObject a = make_object(rng, kPedestrian, spec, false);
        SimObject b = make_object(rng, kPedestrian, spec, false);
        const double ccx = uniform(rng, 15.0, 45.0), ccy = uniform(rng, -12.0, 12.0);
        const double dir = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        const double speed = uniform(rng, 1.0, 1.4) * spec.speed_scale;
        a.cx = b.cx = ccx;
        a.cy = ccy - 0.5 * spec.crossing_offset;
        b.cy = ccy + 0.5 * spec.crossing_offset;
        a.vx = dir * speed;
        b.vx = -dir * speed;
        std::vector<SimObject> trial = objs;
        if (place(trial, a, spec) && place(trial, b, spec)) {
          objs = std::move(trial);
          done = true;
        }
      }
      ok = done;
    }
    for (int i = 0; i < spec.singles && ok; ++i) {
      bool done = false;
      for (int t = 0; t < kPlacementTries && !done; ++t) {
        SimObject o = make_object(rng, pick_class(rng, spec.class_weights), spec, true);
        o.cx = uniform(rng, 10.0, 50.0);
        o.cy = uniform(rng, -15.0, 15.0);
        random_velocity(rng, o.cls, spec, o.vx, o.vy);
        done = place(objs, o, spec);
      }
      ok = done;
    }
    if (ok) return objs;
  }
  throw ConfigError("scenario '" + spec.name + "': could not place objects with min_separation " +
                    std::to_string(spec.min_separation));
}

ObjectState noisy(Rng& rng, const ObjectState& gt, const ScenarioSpec& spec) {
  ObjectState d = gt;
  d.x += gauss(rng, spec.pos_noise);
  d.y += gauss(rng, spec.pos_noise);
  d.z += gauss(rng, 0.3 * spec.pos_noise);
  d.l = std::max(0.1, d.l * (1.0 + gauss(rng, spec.size_noise)));
  d.w = std::max(0.1, d.w * (1.0 + gauss(rng, spec.size_noise)));
  d.h = std::max(0.1, d.h * (1.0 + gauss(rng, spec.size_noise)));
  d.theta = normalize_angle(d.theta + gauss(rng, spec.yaw_noise));
  d.vx += gauss(rng, spec.velocity_noise);
  d.vy += gauss(rng, spec.velocity_noise);
  d.score = 1.0 - spec.score_spread * uniform(rng, 0.0, 1.0);
  return d;
}

ObjectState duplicate_of(Rng& rng, const ObjectState& gt) {
  double spread = 1.0;
  for (int t = 0; t < 100; ++t, spread *= 0.8) {
    ObjectState d = gt;
    d.x += gauss(rng, 0.08 * gt.w * spread);
    d.y += gauss(rng, 0.08 * gt.w * spread);
    d.l *= 1.0 + gauss(rng, 0.04 * spread);
    d.w *= 1.0 + gauss(rng, 0.04 * spread);
    d.theta = normalize_angle(d.theta + gauss(rng, 0.04 * spread));
    d.score = uniform(rng, 0.1, 0.45);
    if (d.l > 0.0 && d.w > 0.0 && iou_3d(d, gt) > 0.6) return d;
  }
  ObjectState d = gt;
  d.score = uniform(rng, 0.1, 0.45);
  return d;
}

ObjectState clutter_box(Rng& rng, const ScenarioSpec& spec) {
  const int cls = pick_class(rng, spec.class_weights);
  const auto size = class_size(cls);
  ObjectState s;
  s.x = uniform(rng, 10.0, 50.0);
  s.y = uniform(rng, -15.0, 15.0);
  s.l = size[0];
  s.w = size[1];
  s.h = size[2];
  s.z = 0.5 * s.h;
  s.theta = uniform(rng, -std::numbers::pi, std::numbers::pi);
  s.class_id = cls;
  s.score = uniform(rng, 0.1, 0.45);
  return s;
}

void sample_face(Rng& rng, PointCloud& cloud, const ObjectState& s, const std::array<double, 3>& center,
                 const std::array<double, 3>& axis_a, double len_a, const std::array<double, 3>& axis_b,
                 double len_b, const ScenarioSpec& spec) {
  const double mean = spec.points_per_m2 * len_a * len_b;
  if (mean <= 0.0) return;
  const int n = std::poisson_distribution<int>(mean)(rng);
  const double base_r = class_reflectance(s.class_id);
  for (int i = 0; i < n; ++i) {
    const double a = uniform(rng, -0.5, 0.5) * len_a, b = uniform(rng, -0.5, 0.5) * len_b;
    const int sweep = spec.sweeps > 1 ? std::uniform_int_distribution<int>(0, spec.sweeps - 1)(rng) : 0;
    const double dt = -sweep * spec.sweep_interval;
    LidarPoint p;
    p.x = center[0] + a * axis_a[0] + b * axis_b[0] + s.vx * dt;
    p.y = center[1] + a * axis_a[1] + b * axis_b[1] + s.vy * dt;
    p.z = center[2] + a * axis_a[2] + b * axis_b[2];
    p.r = std::clamp(base_r + gauss(rng, 0.05), 0.0, 1.0);
    p.dt = dt;
    cloud.points.push_back(p);
  }
}

// Faces facing the sensor at the origin plus the roof. Points sit just inside
// the surface.
void sample_object(Rng& rng, PointCloud& cloud, const ObjectState& s, const ScenarioSpec& spec) {
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const std::array<double, 3> ex{c, sn, 0.0}, ey{-sn, c, 0.0}, ez{0.0, 0.0, 1.0};
  const double inset = 0.98;
  auto face = [&](const std::array<double, 3>& normal, double half, const std::array<double, 3>& a,
                  double la, const std::array<double, 3>& b, double lb) {
    const std::array<double, 3> center{s.x + normal[0] * half * inset, s.y + normal[1] * half * inset,
                                       s.z + normal[2] * half * inset};
    sample_face(rng, cloud, s, center, a, la, b, lb, spec);
  };
  for (double sign : {1.0, -1.0}) {
    const std::array<double, 3> nx{sign * ex[0], sign * ex[1], 0.0};
    if (nx[0] * s.x + nx[1] * s.y < 0.0) face(nx, 0.5 * s.l, ey, s.w, ez, s.h);
    const std::array<double, 3> ny{sign * ey[0], sign * ey[1], 0.0};
    if (ny[0] * s.x + ny[1] * s.y < 0.0) face(ny, 0.5 * s.w, ex, s.l, ez, s.h);
  }
  face(ez, 0.5 * s.h, ex, s.l, ey, s.w);
}

std::string frame_cloud_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clouds/%06d.txt", f);
  return buf;
}

}  // namespace

std::array<double, 3> class_size(int class_id) {
  switch (class_id) {
    case kCar: return {4.5, 1.9, 1.6};
    case kPedestrian: return {0.8, 0.7, 1.75};
    case kCyclist: return {1.8, 0.7, 1.6};
    default: throw DomainError("unknown class " + std::to_string(class_id));
  }
}

CameraModel default_camera() {
  CameraModel cam;
  const double f = 1000.0, cu = 800.0, cv = 450.0, height = 1.7;
  // Camera axes: right = -y, down = -z, forward = +x.
  cam.P = {cu, -f, 0.0, 0.0, cv, 0.0, -f, f * height, 1.0, 0.0, 0.0, 0.0};
  cam.width = 1600;
  cam.height = 900;
  return cam;
}

void ScenarioSpec::validate() const {
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("scenario '" + name + "': " + what);
  };
  require(frames >= 1, "frames must be >= 1");
  require(dt > 0.0, "dt must be positive");
  require(clusters >= 0 && objects_per_cluster >= 0 && singles >= 0 && crossing_pairs >= 0,
          "object counts must be non-negative");
  require(cluster_radius >= 0.0, "cluster_radius must be non-negative");
  require(cluster_class >= -1 && cluster_class <= 2, "cluster_class must be -1, 0, 1 or 2");
  require(class_weights[0] >= 0 && class_weights[1] >= 0 && class_weights[2] >= 0 &&
              class_weights[0] + class_weights[1] + class_weights[2] > 0,
          "class_weights must be non-negative with a positive sum");
  require(speed_scale >= 0.0 && velocity_jitter >= 0.0 && position_jitter >= 0.0,
          "motion parameters must be non-negative");
  require(min_separation >= 0.0, "min_separation must be non-negative");
  require(pos_noise >= 0 && size_noise >= 0 && yaw_noise >= 0 && velocity_noise >= 0 &&
              pixel_noise >= 0,
          "noise levels must be non-negative");
  require(score_spread >= 0.0 && score_spread <= 0.5, "score_spread must be in [0, 0.5]");
  require(miss_rate >= 0 && miss_rate <= 1 && miss_rate_2d >= 0 && miss_rate_2d <= 1,
          "miss rates must be in [0, 1]");
  require(duplicate_rate >= 0.0 && clutter_rate >= 0.0, "duplicate and clutter rates must be >= 0");
  require(points_per_m2 >= 0.0 && sweeps >= 1 && sweep_interval >= 0.0 && ground_points >= 0,
          "lidar parameters out of range");
  if (crossing_pairs > 0) {
    require(crossing_offset >= min_separation, "crossing_offset is below min_separation");
    const double ped_width = class_size(kPedestrian)[1] * 1.1;
    require(allow_overlap || crossing_offset > ped_width,
            "crossing_offset is smaller than a pedestrian's width and overlap is not allowed");
  }
  if (clusters > 0 && objects_per_cluster > 1 && min_separation > 0.0) {
    // Disks of diameter min_separation must pack into the cluster disk.
    const double r = cluster_radius + 0.5 * min_separation;
    require(objects_per_cluster * 0.25 * min_separation * min_separation <= 0.9 * r * r,
            "clusters are too dense for min_separation");
  }
}

Scenario generate(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Scenario sc;
  sc.name = spec.name;
  sc.spec = spec;
  sc.seed = seed;
  sc.dt = spec.dt;
  sc.camera = default_camera();

  const std::vector<SimObject> objs = layout(rng, spec);
  const auto nf = static_cast<std::size_t>(spec.frames);
  sc.gt.resize(nf);
  sc.detections.resize(nf);
  sc.detections2d.resize(nf);
  sc.clouds.resize(nf);

  for (int f = 0; f < spec.frames; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    std::vector<ObjectState> states;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const ObjectState s = objs[i].at(f, spec.frames, spec.dt);
      states.push_back(s);
      sc.gt[fi].push_back(LabeledBox{static_cast<int>(i) + 1, f, s, std::nullopt});
    }

    auto& dets = sc.detections[fi];
    auto push = [&](const ObjectState& s) {
      Detection d;
      d.state = s;
      d.frame = f;
      d.source_id = static_cast<int>(dets.size());
      dets.push_back(d);
    };
    for (const auto& s : states) {
      const bool missed = uniform(rng, 0.0, 1.0) < spec.miss_rate;
      const ObjectState d = noisy(rng, s, spec);
      if (!missed) push(d);
    }
    if (!states.empty()) {
      const auto n_dup = static_cast<std::size_t>(std::llround(spec.duplicate_rate * states.size()));
      std::vector<std::size_t> order(states.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k = 0; k < n_dup; ++k) push(duplicate_of(rng, states[order[k % order.size()]]));
    }
    if (spec.clutter_rate > 0.0) {
      const int n_clutter = std::poisson_distribution<int>(spec.clutter_rate)(rng);
      for (int k = 0; k < n_clutter; ++k) push(clutter_box(rng, spec));
    }

    auto& d2 = sc.detections2d[fi];
    for (const auto& s : states) {
      const auto proj = project_box(s, sc.camera);
      const bool missed = uniform(rng, 0.0, 1.0) < spec.miss_rate_2d;
      std::array<double, 4> c{};
      for (auto& v : c) v = gauss(rng, spec.pixel_noise);
      const double score = 1.0 - spec.score_spread * uniform(rng, 0.0, 1.0);
      if (!proj || missed) continue;
      double u1 = proj->u1 + c[0], v1 = proj->v1 + c[1], u2 = proj->u2 + c[2], v2 = proj->v2 + c[3];
      if (u1 > u2) std::swap(u1, u2);
      if (v1 > v2) std::swap(v1, v2);
      u1 = std::clamp(u1, 0.0, double(sc.camera.width));
      u2 = std::clamp(u2, 0.0, double(sc.camera.width));
      v1 = std::clamp(v1, 0.0, double(sc.camera.height));
      v2 = std::clamp(v2, 0.0, double(sc.camera.height));
      if ((u2 - u1) * (v2 - v1) < 1.0) continue;
      Detection2D det;
      det.box = {u1, v1, u2, v2};
      det.frame = f;
      det.class_id = s.class_id;
      det.score = score;
      det.source_id = static_cast<int>(d2.size());
      d2.push_back(det);
    }

    auto& cloud = sc.clouds[fi];
    for (const auto& s : states) sample_object(rng, cloud, s, spec);
    for (int g = 0; g < spec.ground_points; ++g) {
      const int sweep = spec.sweeps > 1 ? std::uniform_int_distribution<int>(0, spec.sweeps - 1)(rng) : 0;
      LidarPoint p;
      p.x = uniform(rng, 5.0, 55.0);
      p.y = uniform(rng, -20.0, 20.0);
      p.z = std::min(-0.02, -0.1 + gauss(rng, 0.02));
      p.r = uniform(rng, 0.0, 0.2);
      p.dt = -sweep * spec.sweep_interval;
      cloud.points.push_back(p);
    }
  }
  return sc;
}

std::vector<Preset> preset_suite() {
  std::vector<Preset> out = evaluation_presets();
  for (auto& p : training_presets()) out.push_back(std::move(p));
  return out;
}

std::vector<Preset> evaluation_presets() {
  std::vector<Preset> out;
  {
    ScenarioSpec s;
    s.name = "cluster_dense";
    s.clusters = 1;
    s.objects_per_cluster = 8;
    s.cluster_radius = 3.0;
    s.cluster_class = kPedestrian;
    s.singles = 2;
    s.class_weights = {0.0, 0.8, 0.2};
    s.min_separation = 0.9;
    s.velocity_jitter = 0.15;
    s.pos_noise = 0.12;
    s.velocity_noise = 0.3;
    s.miss_rate = 0.05;
    s.duplicate_rate = 0.05;
    s.clutter_rate = 0.3;
    out.push_back({s.name, s, 11});
  }
  {
    ScenarioSpec s;
    s.name = "crossing_pair";
    s.clusters = 0;
    s.crossing_pairs = 2;
    s.crossing_offset = 1.0;
    s.singles = 3;
    s.class_weights = {0.4, 0.4, 0.2};
    s.min_separation = 0.9;
    s.pos_noise = 0.12;
    s.velocity_noise = 0.3;
    s.miss_rate = 0.05;
    s.clutter_rate = 0.2;
    out.push_back({s.name, s, 12});
  }
  {
    ScenarioSpec s;
    s.name = "duplicates_heavy";
    s.clusters = 1;
    s.objects_per_cluster = 4;
    s.cluster_radius = 8.0;
    s.cluster_class = kCar;
    s.singles = 6;
    s.min_separation = 2.0;
    s.pos_noise = 0.1;
    s.miss_rate = 0.05;
    s.duplicate_rate = 0.5;
    s.clutter_rate = 0.2;
    out.push_back({s.name, s, 13});
  }
  {
    ScenarioSpec s;
    s.name = "sparse_easy";
    s.clusters = 0;
    s.singles = 5;
    s.min_separation = 10.5;
    s.speed_scale = 0.5;
    s.pos_noise = 0.05;
    s.velocity_noise = 0.1;
    s.miss_rate = 0.0;
    s.duplicate_rate = 0.0;
    s.clutter_rate = 0.0;
    out.push_back({s.name, s, 14});
  }
  return out;
}

std::vector<Preset> training_presets() {
  std::vector<Preset> out;
  for (int i = 0; i < 20; ++i) {
    Rng meta(1000 + static_cast<std::uint64_t>(i));
    ScenarioSpec s;
    char name[32];
    std::snprintf(name, sizeof name, "mixed_train_%02d", i);
    s.name = name;
    s.clusters = std::uniform_int_distribution<int>(0, 2)(meta);
    s.cluster_class = std::uniform_int_distribution<int>(0, 2)(meta);
    s.objects_per_cluster = std::uniform_int_distribution<int>(3, 8)(meta);
    s.cluster_radius = s.cluster_class == kCar ? uniform(meta, 7.0, 10.0) : uniform(meta, 2.0, 4.0);
    s.singles = std::uniform_int_distribution<int>(1, 4)(meta);
    s.crossing_pairs = std::uniform_int_distribution<int>(0, 2)(meta);
    s.min_separation = 0.9;
    s.velocity_jitter = uniform(meta, 0.05, 0.2);
    s.pos_noise = uniform(meta, 0.05, 0.2);
    s.velocity_noise = uniform(meta, 0.1, 0.4);
    s.miss_rate = uniform(meta, 0.0, 0.15);
    s.duplicate_rate = uniform(meta, 0.0, 0.4);
    s.clutter_rate = uniform(meta, 0.0, 0.5);
    out.push_back({s.name, s, 100 + static_cast<std::uint64_t>(i)});
  }
  return out;
}

Preset find_preset(const std::string& name) {
  for (auto& p : preset_suite())
    if (p.name == name) return p;
  throw ConfigError("unknown preset '" + name + "'");
}

std::filesystem::path write_scenario(const std::filesystem::path& dir, const Scenario& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "clouds");
  save_detections(dir / "detections.txt", s.detections);
  save_detections_2d(dir / "detections2d.txt", s.detections2d);
  save_tracks(dir / "gt.txt", s.gt);
  for (int f = 0; f < s.frames(); ++f)
    save_point_cloud(dir / frame_cloud_name(f), s.clouds[static_cast<std::size_t>(f)]);
  const fs::path manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << "afftrack-scenario 1\n";
  out << "name " << s.name << "\n";
  out << "seed " << s.seed << "\n";
  out << "dt " << format_double(s.dt) << "\n";
  out << "frames " << s.frames() << "\n";
  out << "camera";
  for (double v : s.camera.P) out << ' ' << format_double(v);
  out << ' ' << s.camera.width << ' ' << s.camera.height << "\n";
  out << "detections detections.txt\n";
  out << "detections2d detections2d.txt\n";
  out << "gt gt.txt\n";
  for (int f = 0; f < s.frames(); ++f) out << "cloud " << f << ' ' << frame_cloud_name(f) << "\n";
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing " + manifest.string());
  return manifest;
}

Scenario load_scenario(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open " + manifest.string());
  const auto dir = manifest.parent_path();
  Scenario s;
  std::string line;
  std::size_t lineno = 0;
  int frames = -1;
  bool header = false, ended = false;
  std::filesystem::path det_path, det2d_path, gt_path;
  std::vector<std::filesystem::path> clouds;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!header) {
      int version = 0;
      if (key != "afftrack-scenario" || !(ls >> version) || version != 1)
        throw ParseError("expected 'afftrack-scenario 1'", lineno);
      header = true;
      continue;
    }
    auto fail = [&](const std::string& what) { throw ParseError(what, lineno); };
    if (key == "name") {
      ls >> s.name;
    } else if (key == "seed") {
      if (!(ls >> s.seed)) fail("bad seed");
    } else if (key == "dt") {
      if (!(ls >> s.dt) || !(s.dt > 0.0)) fail("bad dt");
    } else if (key == "frames") {
      if (!(ls >> frames) || frames < 0) fail("bad frame count");
      clouds.assign(static_cast<std::size_t>(frames), {});
    } else if (key == "camera") {
      for (double& v : s.camera.P)
        if (!(ls >> v)) fail("bad camera matrix");
      if (!(ls >> s.camera.width >> s.camera.height)) fail("bad camera size");
    } else if (key == "detections") {
      std::string p;
      ls >> p;
      det_path = dir / p;
    } else if (key == "detections2d") {
      std::string p;
      ls >> p;
      det2d_path = dir / p;
    } else if (key == "gt") {
      std::string p;
      ls >> p;
      gt_path = dir / p;
    } else if (key == "cloud") {
      int f = -1;
      std::string p;
      if (!(ls >> f >> p) || f < 0 || f >= frames) fail("bad cloud entry");
      clouds[static_cast<std::size_t>(f)] = dir / p;
    } else if (key == "end") {
      ended = true;
      break;
    } else {
      fail("unknown manifest key '" + key + "'");
    }
  }
  if (!header) throw ParseError("empty manifest", lineno);
  if (!ended) throw ParseError("manifest is missing 'end'", lineno);
  if (frames < 0) throw ParseError("manifest is missing 'frames'", lineno);
  s.camera.validate();
  const auto nf = static_cast<std::size_t>(frames);
  if (!det_path.empty()) s.detections = load_detections(det_path);
  if (!det2d_path.empty()) s.detections2d = load_detections_2d(det2d_path);
  if (!gt_path.empty()) s.gt = load_tracks(gt_path);
  if (s.detections.size() > nf || s.detections2d.size() > nf || s.gt.size() > nf)
    throw ParseError("frame files extend past the declared frame count", lineno);
  s.detections.resize(nf);
  s.detections2d.resize(nf);
  s.gt.resize(nf);
  s.clouds.resize(nf);
  for (std::size_t f = 0; f < nf; ++f)
    if (!clouds[f].empty()) s.clouds[f] = load_point_cloud(clouds[f]);
  s.spec.name = s.name;
  s.spec.frames = frames;
  s.spec.dt = s.dt;
  return s;
}

}  // namespace afftrack
