#pragma once

// Stationary objects seen by a moving ego with i.i.d. center noise. The mean
// of the projected observations is the ideal estimator of the true center.

#include <cmath>
#include <random>
#include <vector>

#include "relrefine/inter.hpp"
#include "relrefine/track.hpp"

namespace averaging {

using namespace relrefine;

struct StationarySeq {
  nk::Tensor2D seq;      // projected basic features, oldest first
  Detection current;     // last observation, current ego frame
  Box3D truth;           // in the current ego frame
};

inline StationarySeq make_sequence(std::mt19937_64& rng, std::size_t length, double sigma) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma);
  Box3D world;
  world.cx = 30 * u(rng);
  world.cy = 30 * u(rng);
  world.cz = 1.0;
  world.length = 4.5;
  world.width = 1.9;
  world.height = 1.6;
  world.yaw = kPi * u(rng);
  Pose2D ego{40 * u(rng), 40 * u(rng), kPi * u(rng)};
  const double speed = 0.6 * (1.0 + u(rng));  // meters per frame
  std::vector<TrackEntry> history;
  for (std::size_t f = 0; f < length; ++f) {
    TrackEntry e;
    e.frame = static_cast<int>(f);
    e.timestamp = 0.1 * static_cast<double>(f);
    e.ego = ego;
    Box3D obs = world_to_ego(world, ego);
    obs.cx += noise(rng);
    obs.cy += noise(rng);
    obs.cz += noise(rng);
    e.det.box = obs;
    e.det.score = 0.8;
    e.det.label = ClassLabel::Vehicle;
    e.det.basic = make_basic_features(obs, 0.8, ClassLabel::Vehicle);
    history.push_back(e);
    ego.x += speed * std::cos(ego.yaw);
    ego.y += speed * std::sin(ego.yaw);
    ego.yaw += 0.02 * u(rng);
  }
  StationarySeq s;
  const Pose2D cur = history.back().ego;
  s.seq = assemble_sequence(history, cur, history.size());
  s.current = history.back().det;
  s.current.basic = std::vector<double>(s.seq.row(s.seq.rows() - 1).begin(),
                                        s.seq.row(s.seq.rows() - 1).end());
  s.truth = world_to_ego(world, cur);
  return s;
}

inline std::vector<InterSample> make_samples(const InterParams& p, std::size_t count,
                                             std::size_t min_len, std::size_t max_len,
                                             double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<InterSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = min_len + rng() % (max_len - min_len + 1);
    const StationarySeq s = make_sequence(rng, len, sigma);
    out.push_back({prepare_sequence(s.seq, p), inter_target(s.current.box, s.truth)});
  }
  return out;
}

struct RmseResult {
  double raw = 0.0;
  double refined = 0.0;
  double mean_oracle = 0.0;
};

// Center RMSE over x, y, z of the raw, refined and sequence-mean estimates.
inline RmseResult evaluate(InterParams& p, std::size_t count, std::size_t length, double sigma,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RmseResult r;
  for (std::size_t i = 0; i < count; ++i) {
    const StationarySeq s = make_sequence(rng, length, sigma);
    const Detection refined = refine_object(s.seq, s.current, p);
    double mx = 0, my = 0, mz = 0;
    for (std::size_t k = 0; k < s.seq.rows(); ++k) {
      mx += s.seq(k, kFieldCx);
      my += s.seq(k, kFieldCy);
      mz += s.seq(k, kFieldCz);
    }
    const double n = static_cast<double>(s.seq.rows());
    auto sq = [&](double x, double y, double z) {
      return (x - s.truth.cx) * (x - s.truth.cx) + (y - s.truth.cy) * (y - s.truth.cy) +
             (z - s.truth.cz) * (z - s.truth.cz);
    };
    r.raw += sq(s.current.box.cx, s.current.box.cy, s.current.box.cz);
    r.refined += sq(refined.box.cx, refined.box.cy, refined.box.cz);
    r.mean_oracle += sq(mx / n, my / n, mz / n);
  }
  const double c = static_cast<double>(count);
  r.raw = std::sqrt(r.raw / c);
  r.refined = std::sqrt(r.refined / c);
  r.mean_oracle = std::sqrt(r.mean_oracle / c);
  return r;
}

}  // namespace averaging
