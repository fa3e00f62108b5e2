#include "relrefine/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace relrefine {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ b); }

struct Kinematics {
  double x0 = 0, y0 = 0, yaw0 = 0, speed = 0, yaw_rate = 0;

  Pose2D at(double t) const {
    if (std::abs(yaw_rate) < 1e-12) {
      return {x0 + speed * std::cos(yaw0) * t, y0 + speed * std::sin(yaw0) * t, yaw0};
    }
    const double yaw = yaw0 + yaw_rate * t;
    const double k = speed / yaw_rate;
    return {x0 + k * (std::sin(yaw) - std::sin(yaw0)), y0 - k * (std::cos(yaw) - std::cos(yaw0)),
            yaw};
  }
};

struct SimObject {
  Kinematics motion;
  ClassLabel label;
  double length, width, height;
};

struct SizePrior {
  double l, w, h, sl, sw, sh;
};
constexpr std::array<SizePrior, kNumClasses> kSizePrior = {{
    {4.6, 1.95, 1.6, 0.35, 0.12, 0.15},
    {0.85, 0.8, 1.75, 0.10, 0.10, 0.10},
    {1.8, 0.75, 1.7, 0.15, 0.08, 0.10},
}};

double positive_normal(std::mt19937_64& rng, double mean, double sigma, double floor) {
  return std::max(floor, std::normal_distribution<double>(mean, sigma)(rng));
}

void draw_size(SimObject& o, std::mt19937_64& rng) {
  const SizePrior& s = kSizePrior[class_index(o.label)];
  o.length = positive_normal(rng, s.l, s.sl, 0.3 * s.l);
  o.width = positive_normal(rng, s.w, s.sw, 0.3 * s.w);
  o.height = positive_normal(rng, s.h, s.sh, 0.3 * s.h);
}

void check_rate(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
}
void check_sigmas(const ClassArray& a, const char* name) {
  for (double v : a)
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(name) + " must be non-negative");
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(extent > 0.0)) throw std::invalid_argument("scenario extent must be positive");
  if (!(rate_hz > 0.0)) throw std::invalid_argument("frame rate must be positive");
  check_rate(stationary_fraction, "stationary_fraction");
  check_rate(noise.fn_rate, "fn_rate");
  check_rate(noise.range_dropout, "range_dropout");
  for (double p : noise.heading_flip_prob) check_rate(p, "heading_flip_prob");
  check_sigmas(noise.center_sigma, "center_sigma");
  check_sigmas(noise.size_sigma, "size_sigma");
  check_sigmas(noise.heading_sigma, "heading_sigma");
  check_sigmas(noise.velocity_sigma, "velocity_sigma");
  if (!(noise.fp_per_frame >= 0.0)) throw std::invalid_argument("fp_per_frame must be non-negative");
  if (!(noise.max_range > 0.0)) throw std::invalid_argument("max_range must be positive");
  if (!(noise.bev_noise_sigma >= 0.0)) throw std::invalid_argument("bev_noise_sigma must be non-negative");
}

std::vector<Frame> generate_scenario(const ScenarioConfig& cfg, int sequence) {
  cfg.validate();
  std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(sequence)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * unit(rng); };

  Kinematics ego;
  ego.yaw0 = uni(-kPi, kPi);
  ego.speed = cfg.ego_speed * uni(0.5, 1.5);
  ego.yaw_rate = uni(-0.05, 0.05);
  const double duration = static_cast<double>(cfg.frames) / cfg.rate_hz;
  const Pose2D mid = ego.at(0.5 * duration);
  const double half = 0.5 * cfg.extent;
  auto spot = [&]() { return std::array<double, 2>{mid.x + uni(-half, half), mid.y + uni(-half, half)}; };

  std::vector<SimObject> objects;
  // Vehicles: parked rows plus independent movers.
  const std::size_t n_veh = cfg.object_counts[0];
  std::size_t parked = static_cast<std::size_t>(std::llround(cfg.stationary_fraction * n_veh));
  while (parked > 0) {
    const std::size_t row = std::min<std::size_t>(parked, 2 + rng() % 4);
    const auto a = spot();
    const double yaw = uni(-kPi, kPi);
    const bool side_by_side = unit(rng) < 0.5;
    const double spacing = side_by_side ? uni(2.4, 3.0) : uni(5.5, 7.0);
    const double dir = side_by_side ? yaw + 0.5 * kPi : yaw;
    for (std::size_t i = 0; i < row; ++i) {
      SimObject o{};
      o.label = ClassLabel::Vehicle;
      o.motion.x0 = a[0] + std::cos(dir) * spacing * static_cast<double>(i);
      o.motion.y0 = a[1] + std::sin(dir) * spacing * static_cast<double>(i);
      o.motion.yaw0 = wrap_angle(yaw + uni(-0.05, 0.05));
      draw_size(o, rng);
      objects.push_back(o);
    }
    parked -= row;
  }
  for (std::size_t i = objects.size(); i < n_veh; ++i) {
    SimObject o{};
    o.label = ClassLabel::Vehicle;
    const auto a = spot();
    o.motion = {a[0], a[1], uni(-kPi, kPi), uni(3.0, 12.0), uni(-0.1, 0.1)};
    draw_size(o, rng);
    objects.push_back(o);
  }
  // Pedestrians walk in small groups sharing one velocity.
  for (std::size_t left = cfg.object_counts[1]; left > 0;) {
    const std::size_t group = std::min<std::size_t>(left, 1 + rng() % 4);
    const auto a = spot();
    const bool still = unit(rng) < 0.3;
    const Kinematics shared{a[0], a[1], uni(-kPi, kPi), still ? 0.0 : uni(0.5, 1.6),
                            still ? 0.0 : uni(-0.1, 0.1)};
    for (std::size_t i = 0; i < group; ++i) {
      SimObject o{};
      o.label = ClassLabel::Pedestrian;
      o.motion = shared;
      o.motion.x0 += uni(-1.2, 1.2);
      o.motion.y0 += uni(-1.2, 1.2);
      draw_size(o, rng);
      objects.push_back(o);
    }
    left -= group;
  }
  for (std::size_t i = 0; i < cfg.object_counts[2]; ++i) {
    SimObject o{};
    o.label = ClassLabel::Cyclist;
    const auto a = spot();
    o.motion = {a[0], a[1], uni(-kPi, kPi), uni(2.0, 6.0), uni(-0.15, 0.15)};
    draw_size(o, rng);
    objects.push_back(o);
  }

  std::vector<Frame> frames;
  frames.reserve(cfg.frames);
  for (std::size_t k = 0; k < cfg.frames; ++k) {
    const double t = static_cast<double>(k) / cfg.rate_hz;
    Frame f;
    f.sequence = sequence;
    f.index = static_cast<int>(k);
    f.timestamp = t;
    f.ego = ego.at(t);
    std::vector<GroundTruth> gts;
    for (std::size_t id = 0; id < objects.size(); ++id) {
      const SimObject& o = objects[id];
      const Pose2D p = o.motion.at(t);
      Box3D w;
      w.cx = p.x;
      w.cy = p.y;
      w.cz = 0.5 * o.height;
      w.length = o.length;
      w.width = o.width;
      w.height = o.height;
      w.yaw = wrap_angle(p.yaw);
      w.vx = o.motion.speed * std::cos(p.yaw);
      w.vy = o.motion.speed * std::sin(p.yaw);
      const Box3D local = world_to_ego(w, f.ego);
      if (std::abs(local.cx) > cfg.noise.max_range || std::abs(local.cy) > cfg.noise.max_range)
        continue;
      gts.push_back({local, o.label, static_cast<int>(id)});
    }
    f.ground_truth = std::move(gts);
    frames.push_back(std::move(f));
  }
  return frames;
}

BevFeatureModel BevFeatureModel::make(const NoiseModel& noise) {
  BevFeatureModel m;
  m.noise_sigma = noise.bev_noise_sigma;
  m.projection = nk::Tensor2D(kBevDim, kBevLatent);
  std::mt19937_64 rng(noise.feature_seed);
  std::normal_distribution<double> n(0.0, noise.bev_signal_scale);
  for (double& v : m.projection.values()) v = n(rng);
  return m;
}

std::array<double, kBevLatent> bev_latent(const Frame& frame, std::size_t det_index,
                                          const GroundTruth* gt) {
  const Detection& d = frame.detections.at(det_index);
  std::array<double, kBevLatent> z{};
  if (gt) {
    const Box3D& a = d.box;
    const Box3D& b = gt->box;
    const double dyaw = wrap_angle(b.yaw - a.yaw);
    z[0] = b.cx - a.cx;
    z[1] = b.cy - a.cy;
    z[2] = b.cz - a.cz;
    z[3] = std::log(b.length / a.length);
    z[4] = std::log(b.width / a.width);
    z[5] = std::log(b.height / a.height);
    z[6] = std::sin(dyaw);
    z[7] = std::cos(dyaw) - 1.0;
  }
  int close = 0;
  for (std::size_t j = 0; j < frame.detections.size(); ++j) {
    if (j != det_index && bev_distance(frame.detections[j].box, d.box) <= 5.0) ++close;
  }
  z[8] = close / 5.0;
  z[9] = std::hypot(d.box.cx, d.box.cy) / 50.0;
  z[10 + class_index(d.label)] = 1.0;
  return z;
}

namespace {

std::vector<double> project_latent(const std::array<double, kBevLatent>& z,
                                   const BevFeatureModel& model, std::mt19937_64& rng) {
  std::vector<double> o(kBevDim, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t c = 0; c < kBevDim; ++c) {
    double acc = 0.0;
    for (std::size_t k = 0; k < kBevLatent; ++k) acc += model.projection(c, k) * z[k];
    o[c] = acc + model.noise_sigma * noise(rng);
  }
  return o;
}

const GroundTruth* find_gt(const Frame& frame, const Detection& d) {
  if (!d.object_id || !frame.ground_truth) return nullptr;
  for (const GroundTruth& g : *frame.ground_truth) {
    if (g.object_id == *d.object_id) return &g;
  }
  return nullptr;
}

}  // namespace

std::vector<double> synthesize_bev_feature(const Frame& frame, std::size_t det_index,
                                           const BevFeatureModel& model, std::mt19937_64& rng) {
  const GroundTruth* gt = find_gt(frame, frame.detections.at(det_index));
  return project_latent(bev_latent(frame, det_index, gt), model, rng);
}

Frame emulate_detector(const Frame& frame, const NoiseModel& noise, std::uint64_t seed) {
  if (!frame.ground_truth) throw std::invalid_argument("emulate_detector: frame has no ground truth");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto clamp_score = [](double s) { return std::clamp(s, 0.02, 0.99); };

  Frame out = frame;
  out.detections.clear();
  for (const GroundTruth& g : *frame.ground_truth) {
    const int c = class_index(g.label);
    const double range = std::hypot(g.box.cx, g.box.cy);
    const double p_miss = noise.fn_rate + noise.range_dropout * std::min(1.0, range / noise.max_range);
    if (unit(rng) < p_miss) continue;
    Detection d;
    d.label = g.label;
    d.object_id = g.object_id;
    Box3D b = g.box;
    const double sc = noise.center_sigma[c];
    b.cx += sc * gauss(rng);
    b.cy += sc * gauss(rng);
    b.cz += sc * gauss(rng);
    const double ss = noise.size_sigma[c];
    b.length *= std::exp(ss * gauss(rng));
    b.width *= std::exp(ss * gauss(rng));
    b.height *= std::exp(ss * gauss(rng));
    b.yaw += noise.heading_sigma[c] * gauss(rng);
    if (unit(rng) < noise.heading_flip_prob[c]) b.yaw += kPi;
    b.yaw = wrap_angle(b.yaw);
    b.vx += noise.velocity_sigma[c] * gauss(rng);
    b.vy += noise.velocity_sigma[c] * gauss(rng);
    d.box = b;
    d.score = clamp_score(noise.tp_score_mean + noise.tp_score_sigma * gauss(rng));
    out.detections.push_back(std::move(d));
  }
  const std::size_t n_fp =
      noise.fp_per_frame > 0.0 ? std::poisson_distribution<int>(noise.fp_per_frame)(rng) : 0;
  constexpr std::array<double, kNumClasses> kFpClassWeight{0.6, 0.3, 0.1};
  for (std::size_t i = 0; i < n_fp; ++i) {
    const double u = unit(rng);
    const int c = u < kFpClassWeight[0] ? 0 : (u < kFpClassWeight[0] + kFpClassWeight[1] ? 1 : 2);
    const SizePrior& s = kSizePrior[c];
    Detection d;
    d.label = static_cast<ClassLabel>(c);
    const double r = noise.max_range * std::sqrt(unit(rng));
    const double th = 2.0 * kPi * unit(rng);
    Box3D b;
    b.cx = r * std::cos(th);
    b.cy = r * std::sin(th);
    b.length = s.l * std::exp(0.1 * gauss(rng));
    b.width = s.w * std::exp(0.1 * gauss(rng));
    b.height = s.h * std::exp(0.1 * gauss(rng));
    b.cz = 0.5 * b.height + 0.2 * gauss(rng);
    b.yaw = wrap_angle(2.0 * kPi * unit(rng));
    b.vx = gauss(rng);
    b.vy = gauss(rng);
    d.box = b;
    d.score = clamp_score(noise.fp_score_mean + noise.fp_score_sigma * gauss(rng));
    out.detections.push_back(std::move(d));
  }
  std::stable_sort(out.detections.begin(), out.detections.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });

  const BevFeatureModel model = BevFeatureModel::make(noise);
  for (std::size_t i = 0; i < out.detections.size(); ++i) {
    Detection& d = out.detections[i];
    d.basic = make_basic_features(d.box, d.score, d.label, 0.0);
  }
  for (std::size_t i = 0; i < out.detections.size(); ++i) {
    out.detections[i].bev = synthesize_bev_feature(out, i, model, rng);
  }
  return out;
}

std::vector<Frame> generate_dataset(const ScenarioConfig& cfg) {
  std::vector<Frame> all;
  for (std::size_t s = 0; s < cfg.sequences; ++s) {
    const auto gt_frames = generate_scenario(cfg, static_cast<int>(s));
    for (const Frame& f : gt_frames) {
      const std::uint64_t seed =
          mix(mix(cfg.seed ^ 0xd3c7ULL, s), static_cast<std::uint64_t>(f.index));
      all.push_back(emulate_detector(f, cfg.noise, seed));
    }
  }
  return all;
}

}  // namespace relrefine
