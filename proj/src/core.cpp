#include "relrefine/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relrefine {

namespace {

using Point = std::array<double, 2>;

double cross(const Point& o, const Point& a, const Point& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double polygon_area(const std::vector<Point>& poly) {
  if (poly.size() < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    acc += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(acc);
}

// Intersection of segment pq with the infinite line through a->b.
Point line_intersection(const Point& p, const Point& q, const Point& a,
                        const Point& b) {
  const double cp = cross(a, b, p);
  const double cq = cross(a, b, q);
  const double t = cp / (cp - cq);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

}  // namespace

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Vehicle:
      return "Vehicle";
    case ClassLabel::Pedestrian:
      return "Pedestrian";
    case ClassLabel::Cyclist:
      return "Cyclist";
  }
  return "Vehicle";
}

ClassLabel parse_class(std::string_view name) {
  if (name == "Vehicle") return ClassLabel::Vehicle;
  if (name == "Pedestrian") return ClassLabel::Pedestrian;
  if (name == "Cyclist") return ClassLabel::Cyclist;
  throw std::invalid_argument("unknown class label '" + std::string(name) + "'");
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

bool Box3D::valid() const {
  return length > 0.0 && width > 0.0 && height > 0.0 && std::isfinite(cx) &&
         std::isfinite(cy) && std::isfinite(cz) && std::isfinite(yaw);
}

std::array<Point, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.length;
  const double hw = 0.5 * box.width;
  const std::array<Point, 4> local = {
      Point{hl, hw}, Point{-hl, hw}, Point{-hl, -hw}, Point{hl, -hw}};
  std::array<Point, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {box.cx + c * local[i][0] - s * local[i][1],
              box.cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  // Sutherland-Hodgman: clip a against each edge of b (both CCW).
  std::vector<Point> poly(ca.begin(), ca.end());
  std::vector<Point> next;
  next.reserve(8);
  for (std::size_t e = 0; e < 4 && !poly.empty(); ++e) {
    const Point& e0 = cb[e];
    const Point& e1 = cb[(e + 1) % 4];
    next.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point& cur = poly[i];
      const Point& prev = poly[(i + poly.size() - 1) % poly.size()];
      const bool cur_in = cross(e0, e1, cur) >= 0.0;
      const bool prev_in = cross(e0, e1, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) next.push_back(line_intersection(prev, cur, e0, e1));
        next.push_back(cur);
      } else if (prev_in) {
        next.push_back(line_intersection(prev, cur, e0, e1));
      }
    }
    poly.swap(next);
  }
  return polygon_area(poly);
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.length * a.width + b.length * b.width - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double heading_delta(double a, double b) { return std::abs(wrap_angle(a - b)); }

Box3D project_box(const Box3D& box, const Pose2D& from, const Pose2D& to) {
  // p_world = R(from) p + t_from ; p_to = R(-to) (p_world - t_to)
  const double cf = std::cos(from.yaw), sf = std::sin(from.yaw);
  const double wx = cf * box.cx - sf * box.cy + from.x;
  const double wy = sf * box.cx + cf * box.cy + from.y;
  const double ct = std::cos(to.yaw), st = std::sin(to.yaw);
  const double dx = wx - to.x, dy = wy - to.y;
  const double dyaw = from.yaw - to.yaw;
  const double cd = std::cos(dyaw), sd = std::sin(dyaw);

  Box3D out = box;
  out.cx = ct * dx + st * dy;
  out.cy = -st * dx + ct * dy;
  out.yaw = wrap_angle(box.yaw + dyaw);
  out.vx = cd * box.vx - sd * box.vy;
  out.vy = sd * box.vx + cd * box.vy;
  return out;
}

Box3D world_to_ego(const Box3D& world, const Pose2D& ego) {
  return project_box(world, Pose2D{}, ego);
}

Box3D ego_to_world(const Box3D& local, const Pose2D& ego) {
  return project_box(local, ego, Pose2D{});
}

std::vector<double> make_basic_features(const Box3D& box, double score,
                                        ClassLabel label, double dt) {
  std::vector<double> d(kBasicDim);
  d[kFieldCx] = box.cx;
  d[kFieldCy] = box.cy;
  d[kFieldCz] = box.cz;
  d[kFieldLength] = box.length;
  d[kFieldWidth] = box.width;
  d[kFieldHeight] = box.height;
  d[kFieldSinYaw] = std::sin(box.yaw);
  d[kFieldCosYaw] = std::cos(box.yaw);
  d[kFieldVx] = box.vx;
  d[kFieldVy] = box.vy;
  d[kFieldScore] = score;
  d[kFieldDt] = dt;
  d[kFieldClass] = static_cast<double>(class_index(label));
  return d;
}

double bev_distance(const Box3D& a, const Box3D& b) {
  return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

}  // namespace relrefine
