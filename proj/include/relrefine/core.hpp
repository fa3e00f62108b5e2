#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace relrefine {

inline constexpr double kPi = 3.14159265358979323846;

enum class ClassLabel : int { Vehicle = 0, Pedestrian = 1, Cyclist = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::Vehicle, ClassLabel::Pedestrian, ClassLabel::Cyclist};

std::string_view to_string(ClassLabel label);
ClassLabel parse_class(std::string_view name);
inline int class_index(ClassLabel label) { return static_cast<int>(label); }

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Planar ego pose in the world frame.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double length = 1.0, width = 1.0, height = 1.0;
  double yaw = 0.0;
  double vx = 0.0, vy = 0.0;

  bool valid() const;
};

/// Length of the basic feature vector d. Layout (see `BasicField`):
/// center(3), size(3), sin/cos yaw(2), velocity(2), score, dt, class index.
inline constexpr std::size_t kBasicDim = 13;
/// Length of the synthesized map-view feature o.
inline constexpr std::size_t kBevDim = 32;

enum BasicField : std::size_t {
  kFieldCx = 0,
  kFieldCy,
  kFieldCz,
  kFieldLength,
  kFieldWidth,
  kFieldHeight,
  kFieldSinYaw,
  kFieldCosYaw,
  kFieldVx,
  kFieldVy,
  kFieldScore,
  kFieldDt,
  kFieldClass,
};

struct Detection {
  Box3D box;
  double score = 0.0;
  ClassLabel label = ClassLabel::Vehicle;
  std::vector<double> basic;
  std::vector<double> bev;
  // Simulator provenance only. Models never read it.
  std::optional<int> object_id;
};

struct GroundTruth {
  Box3D box;
  ClassLabel label = ClassLabel::Vehicle;
  int object_id = -1;
};

struct Frame {
  int sequence = 0;
  int index = 0;
  double timestamp = 0.0;
  Pose2D ego;
  std::vector<Detection> detections;
  std::optional<std::vector<GroundTruth>> ground_truth;
};

/// Bird's-eye-view IoU of two yaw-rotated rectangles.
double bev_iou(const Box3D& a, const Box3D& b);

/// Area of the intersection of the two BEV rectangles.
double bev_intersection_area(const Box3D& a, const Box3D& b);

/// BEV corners in counter-clockwise order.
std::array<std::array<double, 2>, 4> bev_corners(const Box3D& box);

/// Smallest absolute angular difference, in [0, pi].
double heading_delta(double a, double b);

/// Re-expresses a box given in `from` ego coordinates in `to` ego coordinates.
/// Center, yaw and velocity are rotated; cz and size are untouched.
Box3D project_box(const Box3D& box, const Pose2D& from, const Pose2D& to);

/// Local ego coordinates of a world-frame box.
Box3D world_to_ego(const Box3D& world, const Pose2D& ego);
Box3D ego_to_world(const Box3D& local, const Pose2D& ego);

/// Serializes a detection's box/score/class into the basic layout.
std::vector<double> make_basic_features(const Box3D& box, double score,
                                        ClassLabel label, double dt = 0.0);

double bev_distance(const Box3D& a, const Box3D& b);

}  // namespace relrefine
