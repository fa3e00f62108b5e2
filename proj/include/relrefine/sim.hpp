#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "relrefine/core.hpp"
#include "relrefine/numkit/tensor.hpp"

namespace relrefine {

using ClassArray = std::array<double, kNumClasses>;

struct NoiseModel {
  ClassArray center_sigma{0.30, 0.12, 0.15};   // per axis, meters
  ClassArray size_sigma{0.04, 0.05, 0.05};     // log scale
  ClassArray heading_sigma{0.04, 0.15, 0.08};  // radians
  ClassArray velocity_sigma{0.3, 0.2, 0.3};    // m/s per axis
  ClassArray heading_flip_prob{0.05, 0.0, 0.03};
  double fn_rate = 0.05;        // range-independent miss probability
  double range_dropout = 0.3;   // extra miss probability at max_range, linear in range
  double max_range = 75.0;
  double fp_per_frame = 4.0;    // Poisson mean
  double tp_score_mean = 0.70, tp_score_sigma = 0.12;
  double fp_score_mean = 0.35, fp_score_sigma = 0.15;
  // Map-view feature synthesis.
  double bev_signal_scale = 0.09;
  double bev_noise_sigma = 0.1;
  std::uint64_t feature_seed = 7;
};

struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::size_t sequences = 1;
  std::size_t frames = 50;
  double rate_hz = 10.0;
  std::array<std::size_t, kNumClasses> object_counts{40, 20, 6};
  double extent = 120.0;  // side of the square objects are spawned in, meters
  double stationary_fraction = 0.5;  // vehicles only
  double ego_speed = 6.0;
  NoiseModel noise;

  void validate() const;
};

/// Ground-truth frames of one sequence; detections are left empty.
std::vector<Frame> generate_scenario(const ScenarioConfig& cfg, int sequence = 0);

/// Fixed random projection behind the synthesized map-view feature.
struct BevFeatureModel {
  nk::Tensor2D projection;  // kBevDim x kBevLatent
  double noise_sigma = 0.1;

  static BevFeatureModel make(const NoiseModel& noise);
};

/// Latent vector: residual to the matched GT (8, zeros for a false positive),
/// neighbor count within 5 m / 5, range / 50, class one-hot.
inline constexpr std::size_t kBevLatent = 13;

/// `gt` is the detection's source ground truth, or null for a false positive.
std::array<double, kBevLatent> bev_latent(const Frame& frame, std::size_t det_index,
                                          const GroundTruth* gt);

std::vector<double> synthesize_bev_feature(const Frame& frame, std::size_t det_index,
                                           const BevFeatureModel& model, std::mt19937_64& rng);

/// Fills detections from the frame's ground truth. Deterministic in `seed`.
Frame emulate_detector(const Frame& frame, const NoiseModel& noise, std::uint64_t seed);

/// All sequences, detections included, frames ordered by (sequence, index).
std::vector<Frame> generate_dataset(const ScenarioConfig& cfg);

}  // namespace relrefine
