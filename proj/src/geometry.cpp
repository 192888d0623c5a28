#include "afftrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace afftrack {

namespace {

constexpr double kEps = 1e-9;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(s);
}

// Sutherland-Hodgman: clip `subject` against the half-plane left of edge (a, b).
std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  out.reserve(subject.size() + 2);
  const std::size_t n = subject.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& prev = subject[(i + n - 1) % n];
    const double dc = cross(a, b, cur);
    const double dp = cross(a, b, prev);
    const bool cur_in = dc >= -kEps;
    const bool prev_in = dp >= -kEps;
    if (cur_in != prev_in) {
      const double t = dp / (dp - dc);
      out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
    }
    if (cur_in) out.push_back(cur);
  }
  return out;
}

}  // namespace

void CameraModel::validate() const {
  for (double v : P)
    if (!std::isfinite(v)) throw ValidationError("camera.P", "entries must be finite");
  if (P[8] == 0.0 && P[9] == 0.0 && P[10] == 0.0 && P[11] == 0.0)
    throw ValidationError("camera.P", "third row must be nonzero");
  if (width <= 0 || height <= 0) throw ValidationError("camera.size", "must be positive");
}

std::array<Vec2, 4> bev_corners(const ObjectState& s) {
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const double hl = 0.5 * s.l, hw = 0.5 * s.w;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {s.x + c * local[i].x - sn * local[i].y, s.y + sn * local[i].x + c * local[i].y};
  }
  return out;
}

std::array<std::array<double, 3>, 8> box_corners(const ObjectState& s) {
  const auto bev = bev_corners(s);
  std::array<std::array<double, 3>, 8> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {bev[i].x, bev[i].y, s.z - 0.5 * s.h};
    out[i + 4] = {bev[i].x, bev[i].y, s.z + 0.5 * s.h};
  }
  return out;
}

double convex_intersection_area(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  std::vector<Vec2> poly = a;
  for (std::size_t i = 0; i < b.size() && !poly.empty(); ++i) {
    poly = clip_edge(poly, b[i], b[(i + 1) % b.size()]);
  }
  const double area = polygon_area(poly);
  return area < kEps * kEps ? 0.0 : area;
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.u2, b.u2) - std::max(a.u1, b.u1);
  const double ih = std::min(a.v2, b.v2) - std::max(a.v1, b.v1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double intersection_volume(const ObjectState& a, const ObjectState& b) {
  const double zlo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double zhi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  if (zhi <= zlo) return 0.0;
  // Cheap rejection on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.l, a.w), rb = 0.5 * std::hypot(b.l, b.w);
  if (std::hypot(a.x - b.x, a.y - b.y) >= ra + rb) return 0.0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  const double area = convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  return area * (zhi - zlo);
}

double iou_3d(const ObjectState& a, const ObjectState& b) {
  const double inter = intersection_volume(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::optional<Box2D> project_box(const ObjectState& state, const CameraModel& cam) {
  const auto corners = box_corners(state);
  const auto& P = cam.P;
  auto depth = [&](const std::array<double, 3>& p) {
    return P[8] * p[0] + P[9] * p[1] + P[10] * p[2] + P[11];
  };
  std::vector<std::array<double, 3>> pts;
  for (const auto& c : corners)
    if (depth(c) >= kNearPlane) pts.push_back(c);
  // Edges crossing the near plane contribute their crossing point.
  static constexpr int kEdges[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                        {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (const auto& e : kEdges) {
    const auto& p = corners[e[0]];
    const auto& q = corners[e[1]];
    const double dp = depth(p), dq = depth(q);
    if ((dp < kNearPlane) != (dq < kNearPlane)) {
      const double t = (kNearPlane - dp) / (dq - dp);
      pts.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), p[2] + t * (q[2] - p[2])});
    }
  }
  if (pts.empty()) return std::nullopt;
  double u1 = std::numeric_limits<double>::infinity(), v1 = u1;
  double u2 = -u1, v2 = -u1;
  for (const auto& p : pts) {
    const double w = depth(p);
    const double u = (P[0] * p[0] + P[1] * p[1] + P[2] * p[2] + P[3]) / w;
    const double v = (P[4] * p[0] + P[5] * p[1] + P[6] * p[2] + P[7]) / w;
    u1 = std::min(u1, u);
    u2 = std::max(u2, u);
    v1 = std::min(v1, v);
    v2 = std::max(v2, v);
  }
  u1 = std::clamp(u1, 0.0, static_cast<double>(cam.width));
  u2 = std::clamp(u2, 0.0, static_cast<double>(cam.width));
  v1 = std::clamp(v1, 0.0, static_cast<double>(cam.height));
  v2 = std::clamp(v2, 0.0, static_cast<double>(cam.height));
  if (!(u1 < u2) || !(v1 < v2)) return std::nullopt;
  return Box2D{u1, v1, u2, v2};
}

std::array<double, 3> to_box_frame(const ObjectState& box, double px, double py, double pz) {
  const double dx = px - box.x, dy = py - box.y;
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  return {c * dx + s * dy, -s * dx + c * dy, pz - box.z};
}

bool contains_point(const ObjectState& box, double px, double py, double pz) {
  const auto p = to_box_frame(box, px, py, pz);
  return p[0] >= -0.5 * box.l && p[0] < 0.5 * box.l && p[1] >= -0.5 * box.w && p[1] < 0.5 * box.w &&
         p[2] >= -0.5 * box.h && p[2] < 0.5 * box.h;
}

double center_distance_bev(const ObjectState& a, const ObjectState& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace afftrack
