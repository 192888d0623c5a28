#pragma once

#include <array>
#include <optional>
#include <vector>

#include "afftrack/core.hpp"

namespace afftrack {

/// Pinhole camera: row-major 3x4 projection matrix mapping homogeneous world
/// points to (u*w, v*w, w), where w is the depth along the optical axis.
struct CameraModel {
  std::array<double, 12> P{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  int width = 1600;
  int height = 900;

  void validate() const;
};

/// Depth below which box corners are clipped before projection (meters).
inline constexpr double kNearPlane = 0.1;

struct Vec2 {
  double x = 0.0, y = 0.0;
};

/// BEV footprint corners, counter-clockwise.
std::array<Vec2, 4> bev_corners(const ObjectState& s);
/// The eight box corners in world coordinates.
std::array<std::array<double, 3>, 8> box_corners(const ObjectState& s);

/// Area of the intersection of two convex counter-clockwise polygons.
double convex_intersection_area(const std::vector<Vec2>& a, const std::vector<Vec2>& b);

double iou_2d(const Box2D& a, const Box2D& b);
double iou_3d(const ObjectState& a, const ObjectState& b);
/// Intersection volume of two upright oriented boxes.
double intersection_volume(const ObjectState& a, const ObjectState& b);

std::optional<Box2D> project_box(const ObjectState& state, const CameraModel& cam);

/// Point expressed in the box frame (x along heading, origin at box center).
std::array<double, 3> to_box_frame(const ObjectState& box, double px, double py, double pz);
/// Half-open containment: each box-frame coordinate in [-d/2, d/2).
bool contains_point(const ObjectState& box, double px, double py, double pz);

/// Center distance on the ground plane.
double center_distance_bev(const ObjectState& a, const ObjectState& b);

}  // namespace afftrack
