#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relrefine/core.hpp"

namespace relrefine {

inline constexpr std::array<double, kNumClasses> kDefaultIouThresholds{0.7, 0.5, 0.5};

struct ScoredDetection {
  double score = 0.0;
  bool tp = false;
  double heading_weight = 0.0;  // 0 for false positives
  std::size_t frame = 0;
  std::size_t det = 0;
};

struct MatchResult {
  std::array<std::vector<ScoredDetection>, kNumClasses> per_class;
  std::array<std::size_t, kNumClasses> gt_count{};

  void merge(const MatchResult& other);
};

/// Greedy per-class matching in descending score order: each detection takes
/// the unmatched same-class ground truth with the highest BEV IoU at or above
/// the class threshold. Equal scores keep input order.
MatchResult match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                  const std::array<double, kNumClasses>& iou_threshold = kDefaultIouThresholds,
                  std::size_t frame = 0);

struct PRCurve {
  std::vector<double> score;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> heading_precision;
};

/// Cumulative curve over detections sorted by (score desc, frame, det).
PRCurve pr_curve(std::vector<ScoredDetection> results, std::size_t gt_count);

/// All-point interpolated AP; absent when there is no ground truth.
std::optional<double> average_precision(const std::vector<ScoredDetection>& results,
                                        std::size_t gt_count, bool heading_weighted);

struct ClassMetrics {
  std::optional<double> ap;
  std::optional<double> aph;
  std::size_t gt = 0;
  std::size_t detections = 0;
};

struct StageMetrics {
  std::string name;
  std::array<ClassMetrics, kNumClasses> per_class;
  std::optional<double> map;
  std::optional<double> maph;
};

/// Matches every frame (optionally on `workers` threads) and merges in frame order.
MatchResult match_frames(std::span<const Frame> frames,
                         const std::array<double, kNumClasses>& iou_threshold = kDefaultIouThresholds,
                         std::size_t workers = 1);
StageMetrics summarize(const MatchResult& m, std::string name);
StageMetrics evaluate(std::span<const Frame> frames, std::string name,
                      const std::array<double, kNumClasses>& iou_threshold = kDefaultIouThresholds,
                      std::size_t workers = 1);

/// JSON report: one entry per stage, 4-decimal values, plus deltas of each
/// stage against the preceding one.
std::string metrics_report_json(const std::vector<StageMetrics>& stages);
/// CSV with columns stage,class,score,precision,recall,heading_precision.
std::string pr_curve_csv(const std::vector<std::pair<std::string, MatchResult>>& stages);

}  // namespace relrefine
