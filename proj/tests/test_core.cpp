#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "relrefine/core.hpp"
#include "relrefine/scene_io.hpp"

using namespace relrefine;

namespace {

Box3D square(double cx, double cy, double yaw = 0.0) {
  Box3D b;
  b.cx = cx;
  b.cy = cy;
  b.length = 1.0;
  b.width = 1.0;
  b.yaw = yaw;
  return b;
}

// 3x3 homogeneous SE(2) matrices.
using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 pose_matrix(const Pose2D& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {{{c, -s, p.x}, {s, c, p.y}, {0, 0, 1}}};
}

Mat3 inverse(const Mat3& m) {
  // rotation transpose, -R^T t
  Mat3 r{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) r[i][j] = m[j][i];
  r[0][2] = -(r[0][0] * m[0][2] + r[0][1] * m[1][2]);
  r[1][2] = -(r[1][0] * m[0][2] + r[1][1] * m[1][2]);
  r[2] = {0, 0, 1};
  return r;
}

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

}  // namespace

TEST_CASE("bev_iou identical boxes") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const Box3D b = oracle::random_box(rng);
    CHECK(bev_iou(b, b) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("bev_iou offset unit squares") {
  CHECK(bev_iou(square(0, 0), square(0.5, 0)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(bev_iou(square(0, 0), square(2, 0)) == 0.0);
  // a square rotated by 90 degrees is the same square
  CHECK(bev_iou(square(0, 0), square(0, 0, kPi / 2)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bev_iou contained box") {
  Box3D big = square(0, 0);
  big.length = 4;
  big.width = 2;
  Box3D small = square(0.3, 0.2, 0.7);
  CHECK(bev_iou(big, small) == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
  CHECK(bev_intersection_area(big, small) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bev_iou matches area sampling on random rotated pairs") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const Box3D a = oracle::random_box(rng);
    const Box3D b = oracle::random_box(rng);
    const double mc = oracle::monte_carlo_iou(a, b, 700, 5 + i);
    CHECK(std::abs(bev_iou(a, b) - mc) < 2e-3);
    CHECK(bev_iou(a, b) == doctest::Approx(bev_iou(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("project_box pure translation") {
  Box3D b = square(4, 1, 0.3);
  const Box3D o = project_box(b, Pose2D{}, Pose2D{1, 0, 0});
  CHECK(o.cx == doctest::Approx(3.0));
  CHECK(o.cy == doctest::Approx(1.0));
  CHECK(o.yaw == doctest::Approx(0.3));
}

TEST_CASE("heading_delta") {
  CHECK(heading_delta(0, 0) == 0.0);
  CHECK(heading_delta(0, 2 * kPi) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(heading_delta(0.1, -0.1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(heading_delta(kPi - 0.1, -kPi + 0.1) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(heading_delta(0, kPi) == doctest::Approx(kPi).epsilon(1e-12));
}

TEST_CASE("wrap_angle range") {
  for (double a = -20; a < 20; a += 0.37) {
    const double w = wrap_angle(a);
    CHECK(w > -kPi);
    CHECK(w <= kPi);
    CHECK(std::abs(std::remainder(w - a, 2 * kPi)) < 1e-12);
  }
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
}

TEST_CASE("project_box identity") {
  std::mt19937_64 rng(5);
  const Box3D b = oracle::random_box(rng, 30);
  const Pose2D p{3, -2, 0.4};
  const Box3D o = project_box(b, p, p);
  CHECK(o.cx == doctest::Approx(b.cx).epsilon(1e-12));
  CHECK(o.cy == doctest::Approx(b.cy).epsilon(1e-12));
  CHECK(o.yaw == doctest::Approx(b.yaw).epsilon(1e-12));
  CHECK(o.vx == doctest::Approx(b.vx).epsilon(1e-12));
  CHECK(o.length == b.length);
}

TEST_CASE("project_box quarter turn by hand") {
  Box3D b;
  b.cx = 1;
  b.cy = 0;
  b.yaw = 0;
  b.vx = 2;
  b.vy = 0;
  const Box3D o = project_box(b, Pose2D{}, Pose2D{0, 0, kPi / 2});
  // the target frame's x axis is the old y axis
  CHECK(o.cx == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(o.cy == doctest::Approx(-1.0));
  CHECK(o.yaw == doctest::Approx(-kPi / 2));
  CHECK(std::abs(o.vx) < 1e-12);
  CHECK(o.vy == doctest::Approx(-2.0));
}

TEST_CASE("project_box matches SE(2) matrix composition") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 50; ++i) {
    const Box3D b = oracle::random_box(rng, 20);
    const Pose2D from{u(rng), u(rng), u(rng)};
    const Pose2D to{u(rng), u(rng), u(rng)};
    const Mat3 t = mul(inverse(pose_matrix(to)), pose_matrix(from));
    const double x = t[0][0] * b.cx + t[0][1] * b.cy + t[0][2];
    const double y = t[1][0] * b.cx + t[1][1] * b.cy + t[1][2];
    const Box3D o = project_box(b, from, to);
    CHECK(o.cx == doctest::Approx(x).epsilon(1e-10));
    CHECK(o.cy == doctest::Approx(y).epsilon(1e-10));
    CHECK(heading_delta(o.yaw, b.yaw + std::atan2(t[1][0], t[0][0])) < 1e-10);
    CHECK(o.cz == b.cz);
  }
}

TEST_CASE("world_to_ego and ego_to_world invert each other") {
  std::mt19937_64 rng(9);
  const Pose2D ego{5, 7, 1.1};
  const Box3D b = oracle::random_box(rng, 20);
  const Box3D back = ego_to_world(world_to_ego(b, ego), ego);
  CHECK(back.cx == doctest::Approx(b.cx).epsilon(1e-12));
  CHECK(back.cy == doctest::Approx(b.cy).epsilon(1e-12));
  CHECK(heading_delta(back.yaw, b.yaw) < 1e-12);
}

TEST_CASE("basic feature layout") {
  Box3D b;
  b.cx = 1;
  b.cy = 2;
  b.cz = 3;
  b.length = 4;
  b.width = 5;
  b.height = 6;
  b.yaw = 0.5;
  b.vx = 7;
  b.vy = 8;
  const auto f = make_basic_features(b, 0.9, ClassLabel::Cyclist, 0.3);
  REQUIRE(f.size() == kBasicDim);
  CHECK(f[kFieldCx] == 1);
  CHECK(f[kFieldHeight] == 6);
  CHECK(f[kFieldSinYaw] == doctest::Approx(std::sin(0.5)));
  CHECK(f[kFieldCosYaw] == doctest::Approx(std::cos(0.5)));
  CHECK(f[kFieldVy] == 8);
  CHECK(f[kFieldScore] == 0.9);
  CHECK(f[kFieldDt] == 0.3);
  CHECK(f[kFieldClass] == 2);
}

TEST_CASE("class names round-trip") {
  for (ClassLabel c : kAllClasses) CHECK(parse_class(to_string(c)) == c);
  CHECK_THROWS(parse_class("Truck"));
}

TEST_CASE("scene line round-trip") {
  Frame f;
  f.sequence = 3;
  f.index = 7;
  f.timestamp = 0.7;
  f.ego = {1.5, -2.25, 0.125};
  Detection d;
  d.box.cx = 10.123456789;
  d.box.yaw = -1.0;
  d.score = 0.75;
  d.label = ClassLabel::Pedestrian;
  d.basic = make_basic_features(d.box, d.score, d.label);
  d.bev = std::vector<double>(kBevDim, 0.5);
  d.object_id = 12;
  f.detections.push_back(d);
  GroundTruth g;
  g.box.cx = -4;
  g.label = ClassLabel::Vehicle;
  g.object_id = 12;
  f.ground_truth = std::vector<GroundTruth>{g};

  const std::string line = frame_to_line(f);
  CHECK(line.find('\n') == std::string::npos);
  const Frame r = frame_from_line(line);
  CHECK(r.sequence == 3);
  CHECK(r.index == 7);
  CHECK(r.ego.y == -2.25);
  REQUIRE(r.detections.size() == 1);
  CHECK(r.detections[0].box.cx == doctest::Approx(10.123456789).epsilon(1e-9));
  CHECK(r.detections[0].label == ClassLabel::Pedestrian);
  CHECK(r.detections[0].bev.size() == kBevDim);
  CHECK(r.detections[0].object_id == 12);
  REQUIRE(r.ground_truth);
  CHECK((*r.ground_truth)[0].box.cx == -4);
  // writing the parsed frame again gives the same bytes
  CHECK(frame_to_line(r) == line);
}

TEST_CASE("scene stream round-trip and sequence split") {
  std::vector<Frame> frames(5);
  for (int i = 0; i < 5; ++i) {
    frames[i].sequence = i < 3 ? 0 : 1;
    frames[i].index = i < 3 ? i : i - 3;
    frames[i].timestamp = frames[i].index * 0.1;
  }
  std::stringstream ss;
  write_scene(ss, frames);
  const auto back = read_scene(ss);
  REQUIRE(back.size() == 5);
  CHECK_FALSE(back[0].ground_truth.has_value());
  const auto seqs = split_sequences(back);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].size() == 3);
  CHECK(seqs[1].size() == 2);
}

TEST_CASE("malformed scene line is rejected") {
  CHECK_THROWS(frame_from_line("{\"version\":1"));
  CHECK_THROWS(frame_from_line("{\"version\":99,\"seq\":0,\"frame\":0,\"timestamp\":0}"));
}
