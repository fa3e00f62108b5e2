#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "relrefine/track.hpp"

using namespace relrefine;

namespace {

Detection det_at(double x, double y, double vx = 0, double vy = 0,
                 ClassLabel label = ClassLabel::Vehicle) {
  Detection d;
  d.box.cx = x;
  d.box.cy = y;
  d.box.vx = vx;
  d.box.vy = vy;
  d.box.length = 4;
  d.box.width = 2;
  d.score = 0.8;
  d.label = label;
  d.basic = make_basic_features(d.box, d.score, d.label);
  return d;
}

Frame frame_at(int index, std::vector<Detection> dets, Pose2D ego = {}) {
  Frame f;
  f.index = index;
  f.timestamp = 0.1 * index;
  f.ego = ego;
  f.detections = std::move(dets);
  return f;
}

// Independent re-statement of the association rule.
struct OracleTrack {
  int id;
  ClassLabel label;
  Box3D box;
  Pose2D ego;
  double t;
  int misses;
};

std::vector<int> oracle_step(std::vector<OracleTrack>& tracks, int& next_id, const Frame& f,
                             const TrackerConfig& cfg) {
  const std::size_t nd = f.detections.size();
  std::vector<int> ids(nd, -1);
  std::vector<bool> used(tracks.size(), false);
  std::vector<Box3D> pred;
  for (const auto& t : tracks) {
    Box3D p = project_box(t.box, t.ego, f.ego);
    p.cx += p.vx * (f.timestamp - t.t);
    p.cy += p.vy * (f.timestamp - t.t);
    pred.push_back(p);
  }
  while (true) {
    double best = 1e300;
    std::size_t bt = 0, bd = 0;
    bool found = false;
    for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
      if (used[ti]) continue;
      for (std::size_t di = 0; di < nd; ++di) {
        if (ids[di] >= 0 || f.detections[di].label != tracks[ti].label) continue;
        const double d = std::hypot(pred[ti].cx - f.detections[di].box.cx,
                                    pred[ti].cy - f.detections[di].box.cy);
        if (d > cfg.match_radius[class_index(tracks[ti].label)]) continue;
        if (d < best) {
          best = d;
          bt = ti;
          bd = di;
          found = true;
        }
      }
    }
    if (!found) break;
    used[bt] = true;
    ids[bd] = tracks[bt].id;
  }
  std::vector<OracleTrack> kept;
  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    if (!used[ti] && ++tracks[ti].misses > cfg.max_age) continue;
    if (used[ti]) tracks[ti].misses = 0;
    kept.push_back(tracks[ti]);
  }
  tracks = kept;
  for (std::size_t di = 0; di < nd; ++di) {
    if (ids[di] < 0) {
      ids[di] = next_id++;
      tracks.push_back({ids[di], f.detections[di].label, {}, {}, 0, 0});
    }
    for (auto& t : tracks) {
      if (t.id == ids[di]) {
        t.box = f.detections[di].box;
        t.ego = f.ego;
        t.t = f.timestamp;
      }
    }
  }
  return ids;
}

}  // namespace

TEST_CASE("constant velocity object forms one track") {
  Tracker tr;
  for (int k = 0; k < 3; ++k) {
    const auto ids = tr.step(frame_at(k, {det_at(1.0 * k, 0, 10, 0)}));
    CHECK(ids == std::vector<int>{0});
  }
  REQUIRE(tr.tracks().size() == 1);
  CHECK(tr.tracks()[0].history.size() == 3);
  CHECK(tr.next_id() == 1);
}

TEST_CASE("death rule") {
  TrackerConfig cfg;
  SUBCASE("gap of max_age frames keeps the id") {
    Tracker tr(cfg);
    tr.step(frame_at(0, {det_at(5, 5)}));
    for (int k = 1; k <= cfg.max_age; ++k) tr.step(frame_at(k, {}));
    CHECK(tr.step(frame_at(cfg.max_age + 1, {det_at(5, 5)})) == std::vector<int>{0});
  }
  SUBCASE("gap of max_age + 1 frames starts a new track") {
    Tracker tr(cfg);
    tr.step(frame_at(0, {det_at(5, 5)}));
    for (int k = 1; k <= cfg.max_age + 1; ++k) tr.step(frame_at(k, {}));
    CHECK(tr.tracks().empty());
    CHECK(tr.step(frame_at(cfg.max_age + 2, {det_at(5, 5)})) == std::vector<int>{1});
  }
}

TEST_CASE("classes never associate across labels") {
  Tracker tr;
  tr.step(frame_at(0, {det_at(0, 0, 0, 0, ClassLabel::Pedestrian)}));
  const auto ids = tr.step(frame_at(1, {det_at(0, 0, 0, 0, ClassLabel::Cyclist)}));
  CHECK(ids == std::vector<int>{1});
}

TEST_CASE("non-increasing timestamps are rejected") {
  Tracker tr;
  tr.step(frame_at(2, {}));
  CHECK_THROWS_AS(tr.step(frame_at(2, {})), std::invalid_argument);
  CHECK_THROWS_AS(tr.step(frame_at(1, {})), std::invalid_argument);
}

TEST_CASE("20 crossing objects match the greedy oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> noise(0.0, 0.3);
  struct Obj {
    double x, y, vx, vy;
    ClassLabel label;
  };
  std::vector<Obj> objs;
  for (int i = 0; i < 20; ++i) {
    const double ang = kPi * u(rng);
    const double speed = 5 + 5 * u(rng);
    // start on a ring and drive through the middle
    objs.push_back({-20 * std::cos(ang) + 3 * u(rng), -20 * std::sin(ang) + 3 * u(rng),
                    speed * std::cos(ang), speed * std::sin(ang), i < 16 ? ClassLabel::Vehicle : ClassLabel::Cyclist});
  }
  TrackerConfig cfg;
  Tracker tr(cfg);
  std::vector<OracleTrack> otracks;
  int next = 0;
  Pose2D ego{0, 0, 0};
  for (int k = 0; k < 60; ++k) {
    std::vector<Detection> dets;
    for (auto& o : objs) {
      if (rng() % 10 == 0) continue;  // occasional miss
      Box3D w;
      w.cx = o.x + noise(rng);
      w.cy = o.y + noise(rng);
      w.vx = o.vx;
      w.vy = o.vy;
      Box3D local = world_to_ego(w, ego);
      dets.push_back(det_at(local.cx, local.cy, local.vx, local.vy, o.label));
    }
    std::shuffle(dets.begin(), dets.end(), rng);
    const Frame f = frame_at(k, dets, ego);
    const auto got = tr.step(f);
    const auto expect = oracle_step(otracks, next, f, cfg);
    CHECK(got == expect);
    for (auto& o : objs) {
      o.x += 0.1 * o.vx;
      o.y += 0.1 * o.vy;
    }
    ego.x += 0.5;
    ego.yaw += 0.01;
  }
}

TEST_CASE("sequence assembly") {
  SUBCASE("stationary ego is the identity") {
    Tracker tr;
    for (int k = 0; k < 4; ++k) tr.step(frame_at(k, {det_at(2.0 + k, 1.0, 10, 0)}));
    const Track& t = tr.tracks()[0];
    const auto seq = assemble_sequence(t, Pose2D{}, 10);
    REQUIRE(seq.rows() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t k = 0; k < kBasicDim; ++k) {
        if (k == kFieldDt) continue;
        CHECK(seq(r, k) == doctest::Approx(t.history[r].det.basic[k]).epsilon(1e-15));
      }
      CHECK(seq(r, kFieldDt) == doctest::Approx(0.1 * r));
    }
    CHECK(assemble_sequence(t, Pose2D{}, 2).rows() == 2);
    CHECK(assemble_sequence(t, Pose2D{}, 2)(1, kFieldCx) == doctest::Approx(5.0));
  }
  SUBCASE("translated ego shifts past centers") {
    std::vector<TrackEntry> h(2);
    h[0].ego = Pose2D{0, 0, 0};
    h[0].det = det_at(3, 0);
    h[1].ego = Pose2D{1, 0, 0};
    h[1].timestamp = 0.1;
    h[1].det = det_at(2, 0);
    const auto seq = assemble_sequence(h, h[1].ego, 5);
    CHECK(seq(0, kFieldCx) == doctest::Approx(2.0));
    CHECK(seq(1, kFieldCx) == doctest::Approx(2.0));
  }
  SUBCASE("rotating ego matches matrix composition") {
    std::vector<TrackEntry> h;
    for (int k = 0; k < 4; ++k) {
      TrackEntry e;
      e.ego = Pose2D{0.5 * k, 0.2 * k, kPi / 2 * k};
      e.timestamp = 0.1 * k;
      e.det = det_at(3 + k, -1, 1, 2);
      e.det.box.yaw = 0.3;
      h.push_back(e);
    }
    const Pose2D cur = h.back().ego;
    const auto seq = assemble_sequence(h, cur, 10);
    for (int k = 0; k < 4; ++k) {
      const Pose2D& from = h[k].ego;
      // world point, then into the current frame
      const double wx = std::cos(from.yaw) * h[k].det.box.cx - std::sin(from.yaw) * h[k].det.box.cy + from.x;
      const double wy = std::sin(from.yaw) * h[k].det.box.cx + std::cos(from.yaw) * h[k].det.box.cy + from.y;
      const double lx = std::cos(cur.yaw) * (wx - cur.x) + std::sin(cur.yaw) * (wy - cur.y);
      const double ly = -std::sin(cur.yaw) * (wx - cur.x) + std::cos(cur.yaw) * (wy - cur.y);
      const double yaw = 0.3 + from.yaw - cur.yaw;
      CHECK(seq(k, kFieldCx) == doctest::Approx(lx).epsilon(1e-12));
      CHECK(seq(k, kFieldCy) == doctest::Approx(ly).epsilon(1e-12));
      CHECK(seq(k, kFieldSinYaw) == doctest::Approx(std::sin(yaw)).epsilon(1e-12));
      CHECK(seq(k, kFieldCosYaw) == doctest::Approx(std::cos(yaw)).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS(assemble_sequence(std::span<const TrackEntry>{}, Pose2D{}, 3));
  }
}

TEST_CASE("track dump round-trip") {
  std::vector<Frame> frames;
  for (int s = 0; s < 2; ++s) {
    for (int k = 0; k < 5; ++k) {
      Frame f = frame_at(k, {det_at(k, 0, 10, 0), det_at(-20, 3 + 0.1 * k, 1, 0, ClassLabel::Pedestrian)},
                         Pose2D{0.1 * k, 0, 0.01 * k});
      f.sequence = s;
      frames.push_back(f);
    }
  }
  const auto records = track_frames(frames, TrackerConfig{});
  CHECK(records.size() == 20);
  std::stringstream ss;
  write_track_dump(ss, records);
  const auto back = read_track_dump(ss);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(track_record_to_line(back[i]) == track_record_to_line(records[i]));
  }
  std::vector<int> seq_of;
  const auto tracks = tracks_from_dump(back, &seq_of);
  CHECK(tracks.size() == 4);  // two objects in each sequence
  for (const auto& t : tracks) CHECK(t.history.size() == 5);
  CHECK(seq_of.size() == tracks.size());
}
