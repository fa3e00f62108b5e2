#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "relrefine/scene_io.hpp"
#include "relrefine/sim.hpp"

using namespace relrefine;

namespace {

NoiseModel silent_noise() {
  NoiseModel n;
  n.center_sigma = {0, 0, 0};
  n.size_sigma = {0, 0, 0};
  n.heading_sigma = {0, 0, 0};
  n.velocity_sigma = {0, 0, 0};
  n.heading_flip_prob = {0, 0, 0};
  n.fn_rate = 0;
  n.range_dropout = 0;
  n.fp_per_frame = 0;
  return n;
}

ScenarioConfig small_scenario(std::uint64_t seed = 3) {
  ScenarioConfig c;
  c.seed = seed;
  c.frames = 10;
  c.object_counts = {10, 6, 3};
  c.extent = 60;
  return c;
}

std::map<int, const GroundTruth*> by_id(const Frame& f) {
  std::map<int, const GroundTruth*> m;
  for (const auto& g : *f.ground_truth) m[g.object_id] = &g;
  return m;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("scenario with no objects") {
  ScenarioConfig c = small_scenario();
  c.object_counts = {0, 0, 0};
  const auto frames = generate_scenario(c);
  REQUIRE(frames.size() == 10);
  for (const auto& f : frames) {
    REQUIRE(f.ground_truth);
    CHECK(f.ground_truth->empty());
    CHECK(f.detections.empty());
  }
}

TEST_CASE("a parked object stays put in the world") {
  ScenarioConfig c = small_scenario();
  c.object_counts = {1, 0, 0};
  c.stationary_fraction = 1.0;
  c.extent = 20;
  const auto frames = generate_scenario(c);
  REQUIRE(frames[0].ground_truth->size() == 1);
  const Box3D first = ego_to_world((*frames[0].ground_truth)[0].box, frames[0].ego);
  for (const auto& f : frames) {
    REQUIRE(f.ground_truth->size() == 1);
    const Box3D w = ego_to_world((*f.ground_truth)[0].box, f.ego);
    CHECK(w.cx == doctest::Approx(first.cx).epsilon(1e-9));
    CHECK(w.cy == doctest::Approx(first.cy).epsilon(1e-9));
    CHECK(heading_delta(w.yaw, first.yaw) < 1e-9);
    CHECK(std::hypot(w.vx, w.vy) < 1e-12);
  }
}

TEST_CASE("timestamps and ego motion") {
  const auto frames = generate_scenario(small_scenario());
  auto step = [&](std::size_t k) {
    return std::hypot(frames[k].ego.x - frames[k - 1].ego.x, frames[k].ego.y - frames[k - 1].ego.y);
  };
  // ego speed is drawn per sequence within half and one and a half times the nominal speed
  CHECK(step(1) >= 0.5 * 0.6 * 0.99);
  CHECK(step(1) <= 1.5 * 0.6 * 1.01);
  for (std::size_t k = 1; k < frames.size(); ++k) {
    CHECK(frames[k].timestamp == doctest::Approx(frames[k - 1].timestamp + 0.1));
    CHECK(frames[k].index == static_cast<int>(k));
    CHECK(step(k) == doctest::Approx(step(1)).epsilon(1e-3));
  }
}

TEST_CASE("determinism") {
  ScenarioConfig c = small_scenario(9);
  c.sequences = 2;
  const auto a = generate_dataset(c);
  const auto b = generate_dataset(c);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(frame_to_line(a[i]) == frame_to_line(b[i]));
  c.seed = 10;
  const auto d = generate_dataset(c);
  CHECK(frame_to_line(d[3]) != frame_to_line(a[3]));
}

TEST_CASE("silent detector reproduces ground truth") {
  const auto frames = generate_scenario(small_scenario());
  for (const auto& f : frames) {
    const Frame out = emulate_detector(f, silent_noise(), 5);
    CHECK(out.detections.size() == f.ground_truth->size());
    const auto gts = by_id(f);
    for (const auto& d : out.detections) {
      REQUIRE(d.object_id);
      const GroundTruth& g = *gts.at(*d.object_id);
      CHECK(d.box.cx == g.box.cx);
      CHECK(d.box.cy == g.box.cy);
      CHECK(d.box.length == g.box.length);
      CHECK(d.box.yaw == doctest::Approx(g.box.yaw).epsilon(1e-15));
      CHECK(d.label == g.label);
      CHECK(d.basic.size() == kBasicDim);
      CHECK(d.bev.size() == kBevDim);
    }
  }
}

TEST_CASE("certain misses give no detections") {
  NoiseModel n = silent_noise();
  n.fn_rate = 1.0;
  for (const auto& f : generate_scenario(small_scenario())) CHECK(emulate_detector(f, n, 1).detections.empty());
}

TEST_CASE("center noise statistic") {
  ScenarioConfig c = small_scenario();
  c.object_counts = {50, 30, 20};
  c.frames = 1;
  c.extent = 80;
  const Frame f = generate_scenario(c)[0];
  NoiseModel n = silent_noise();
  n.center_sigma = {0.3, 0.3, 0.3};
  const auto gts = by_id(f);
  double sq = 0;
  std::size_t count = 0;
  for (std::uint64_t s = 0; count < 10000; ++s) {
    for (const auto& d : emulate_detector(f, n, s).detections) {
      const GroundTruth& g = *gts.at(*d.object_id);
      sq += (d.box.cx - g.box.cx) * (d.box.cx - g.box.cx) + (d.box.cy - g.box.cy) * (d.box.cy - g.box.cy);
      ++count;
    }
  }
  const double rms = std::sqrt(sq / static_cast<double>(count));
  CHECK(std::abs(rms - 0.3 * std::sqrt(2.0)) < 0.03 * 0.3 * std::sqrt(2.0));
}

TEST_CASE("map-view feature") {
  ScenarioConfig c = small_scenario();
  const Frame gt = generate_scenario(c)[0];
  const Frame f = emulate_detector(gt, NoiseModel{}, 4);
  REQUIRE(f.detections.size() >= 2);

  SUBCASE("zero projection is pure noise") {
    BevFeatureModel m = BevFeatureModel::make(NoiseModel{});
    m.projection.fill(0.0);
    std::mt19937_64 r1(8), r2(8);
    const auto a = synthesize_bev_feature(f, 0, m, r1);
    const auto b = synthesize_bev_feature(f, 1, m, r2);
    CHECK(a == b);
    m.noise_sigma = 0.0;
    for (double v : synthesize_bev_feature(f, 0, m, r1)) CHECK(v == 0.0);
  }
  SUBCASE("duplicates share the mean") {
    Frame dup = f;
    dup.detections.push_back(f.detections[0]);
    dup.detections.back().object_id = f.detections[0].object_id;
    BevFeatureModel m = BevFeatureModel::make(NoiseModel{});
    m.noise_sigma = 0.0;
    std::mt19937_64 rng(1);
    const auto a = synthesize_bev_feature(dup, 0, m, rng);
    const auto b = synthesize_bev_feature(dup, dup.detections.size() - 1, m, rng);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  }
  SUBCASE("feature correlates with the true residual") {
    ScenarioConfig big = small_scenario();
    big.frames = 150;
    big.object_counts = {60, 30, 10};
    NoiseModel n;
    n.fp_per_frame = 0;
    std::vector<std::vector<double>> channels(kBevDim);
    std::vector<double> resid;
    for (const auto& g : generate_scenario(big)) {
      const Frame e = emulate_detector(g, n, static_cast<std::uint64_t>(g.index));
      const auto gts = by_id(g);
      for (const auto& d : e.detections) {
        resid.push_back(gts.at(*d.object_id)->box.cx - d.box.cx);
        for (std::size_t k = 0; k < kBevDim; ++k) channels[k].push_back(d.bev[k]);
      }
      if (resid.size() >= 10000) break;
    }
    REQUIRE(resid.size() >= 10000);
    double best = 0;
    for (const auto& ch : channels) best = std::max(best, std::abs(correlation(ch, resid)));
    CHECK(best > 0.2);
  }
}

TEST_CASE("true positives outnumber false positives") {
  ScenarioConfig c = small_scenario();
  c.object_counts = {40, 20, 6};
  c.extent = 120;
  std::size_t tp = 0, fp = 0;
  for (const auto& f : generate_dataset(c)) {
    CHECK(f.detections.size() <= f.ground_truth->size() + 30);
    for (const auto& d : f.detections) (d.object_id ? tp : fp) += 1;
    for (std::size_t i = 1; i < f.detections.size(); ++i)
      CHECK(f.detections[i - 1].score >= f.detections[i].score);
  }
  CHECK(tp > 3 * fp);
}

TEST_CASE("invalid configuration") {
  ScenarioConfig c = small_scenario();
  c.noise.fn_rate = 1.5;
  CHECK_THROWS(c.validate());
  c = small_scenario();
  c.extent = 0;
  CHECK_THROWS(c.validate());
  c = small_scenario();
  c.noise.center_sigma[1] = -0.1;
  CHECK_THROWS(c.validate());
}
