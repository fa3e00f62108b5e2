#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "relrefine/inter.hpp"
#include "relrefine/intra.hpp"
#include "relrefine/metrics.hpp"
#include "relrefine/sim.hpp"
#include "relrefine/track.hpp"

namespace relrefine {

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  ScenarioConfig scenario;
  std::size_t train_sequences = 40;
  std::size_t eval_sequences = 10;
  IntraConfig intra;
  TrainConfig intra_train{5000, 16, {}, 0};
  InterConfig inter;
  TrainConfig inter_train{5000, 64, {}, 0};
  TrackerConfig tracker;
};

/// INI-style text: [section] headers and key = value lines. Unknown keys are
/// an error so typos do not silently fall back to defaults.
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);
std::string config_to_ini(const RunConfig& cfg);

enum class Split { Train, Eval };

/// Scenario for one split; sequence count and seed are derived from the run seed.
ScenarioConfig split_scenario(const RunConfig& cfg, Split split);
std::vector<Frame> simulate(const RunConfig& cfg, Split split);

void save_intra(const std::string& path, const IntraParams& p);
IntraParams load_intra(const std::string& path);
void save_inter(const std::string& path, const InterParams& p);
InterParams load_inter(const std::string& path);

/// Per-iteration seeds for model init and batch sampling.
std::uint64_t stage_seed(std::uint64_t run_seed, int stage, int which);

IntraParams train_intra_stage(const RunConfig& cfg, const std::vector<Frame>& train,
                              std::vector<LossRecord>* log = nullptr);
InterParams train_inter_stage(const RunConfig& cfg, const std::vector<InterSample>& samples,
                              std::vector<LossRecord>* log = nullptr);

/// IntraRM applied frame by frame; frames fan out over `workers` threads.
std::vector<Frame> refine_intra_frames(const std::vector<Frame>& frames, IntraParams& p,
                                       std::size_t workers = 1);

/// Training sequences from tracked frames with ground truth: for each
/// detection assigned to a ground truth, its track history up to that frame.
std::vector<InterSample> make_inter_samples(const std::vector<TrackRecord>& records,
                                            const std::vector<Frame>& frames_with_gt,
                                            const InterParams& p,
                                            const std::array<double, kNumClasses>& assign_radius);

/// Tracks each sequence causally and refines every detection with InterRM.
/// Sequences fan out over `workers` threads.
std::vector<Frame> refine_inter_frames(const std::vector<Frame>& frames, InterParams& p,
                                       const TrackerConfig& tracker, std::size_t workers = 1);

/// Keeps large tensor buffers in the heap between training steps instead of
/// returning them to the OS each time (glibc only; a no-op elsewhere).
void keep_heap_warm();

std::string loss_log_csv(const std::vector<LossRecord>& log);

struct PipelineResult {
  std::vector<StageMetrics> stages;  // raw, intra, inter
  std::vector<LossRecord> intra_log, inter_log;
  std::string report_json;
  double seconds = 0.0;
};

/// simulate -> train IntraRM -> track -> train InterRM -> evaluate.
/// `progress` receives one-line status messages when set.
PipelineResult run_pipeline(const RunConfig& cfg,
                            const std::function<void(const std::string&)>& progress = {},
                            const std::string& artifact_dir = "");

}  // namespace relrefine
