#include "relrefine/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <thread>
#include <tuple>

#include "relrefine/scene_io.hpp"

namespace relrefine {

void MatchResult::merge(const MatchResult& other) {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    per_class[c].insert(per_class[c].end(), other.per_class[c].begin(), other.per_class[c].end());
    gt_count[c] += other.gt_count[c];
  }
}

MatchResult match(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                  const std::array<double, kNumClasses>& iou_threshold, std::size_t frame) {
  MatchResult res;
  for (const GroundTruth& g : gts) ++res.gt_count[class_index(g.label)];
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (class_index(dets[i].label) == static_cast<int>(c)) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<std::size_t> cand;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (class_index(gts[g].label) == static_cast<int>(c)) cand.push_back(g);
    std::vector<bool> used(cand.size(), false);
    for (std::size_t i : order) {
      double best = -1.0;
      std::size_t best_k = cand.size();
      for (std::size_t k = 0; k < cand.size(); ++k) {
        if (used[k]) continue;
        const double iou = bev_iou(dets[i].box, gts[cand[k]].box);
        if (iou >= iou_threshold[c] && iou > best) {
          best = iou;
          best_k = k;
        }
      }
      ScoredDetection s{dets[i].score, false, 0.0, frame, i};
      if (best_k < cand.size()) {
        used[best_k] = true;
        s.tp = true;
        s.heading_weight = 1.0 - heading_delta(dets[i].box.yaw, gts[cand[best_k]].box.yaw) / kPi;
      }
      res.per_class[c].push_back(s);
    }
  }
  return res;
}

PRCurve pr_curve(std::vector<ScoredDetection> results, std::size_t gt_count) {
  std::sort(results.begin(), results.end(), [](const ScoredDetection& a, const ScoredDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.frame, a.det) < std::tie(b.frame, b.det);
  });
  PRCurve c;
  double tp = 0.0, w = 0.0;
  const double denom = gt_count > 0 ? static_cast<double>(gt_count) : 1.0;
  for (std::size_t k = 0; k < results.size(); ++k) {
    if (results[k].tp) {
      tp += 1.0;
      w += results[k].heading_weight;
    }
    const double n = static_cast<double>(k + 1);
    c.score.push_back(results[k].score);
    c.precision.push_back(tp / n);
    c.recall.push_back(gt_count > 0 ? tp / denom : 0.0);
    c.heading_precision.push_back(w / n);
  }
  return c;
}

std::optional<double> average_precision(const std::vector<ScoredDetection>& results,
                                        std::size_t gt_count, bool heading_weighted) {
  if (gt_count == 0) return std::nullopt;
  const PRCurve c = pr_curve(results, gt_count);
  const auto& p = heading_weighted ? c.heading_precision : c.precision;
  std::vector<double> env(p.size());
  double run = 0.0;
  for (std::size_t k = p.size(); k-- > 0;) {
    run = std::max(run, p[k]);
    env[k] = run;
  }
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    ap += (c.recall[k] - prev_r) * env[k];
    prev_r = c.recall[k];
  }
  return ap;
}

MatchResult match_frames(std::span<const Frame> frames,
                         const std::array<double, kNumClasses>& iou_threshold,
                         std::size_t workers) {
  std::vector<MatchResult> parts(frames.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < frames.size(); i += stride) {
      const Frame& f = frames[i];
      if (!f.ground_truth) throw std::invalid_argument("evaluation frame has no ground truth");
      parts[i] = match(f.detections, *f.ground_truth, iou_threshold, i);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, frames.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  MatchResult all;
  for (const auto& p : parts) all.merge(p);
  return all;
}

StageMetrics summarize(const MatchResult& m, std::string name) {
  StageMetrics s;
  s.name = std::move(name);
  double sum_ap = 0.0, sum_aph = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ClassMetrics& cm = s.per_class[c];
    cm.gt = m.gt_count[c];
    cm.detections = m.per_class[c].size();
    cm.ap = average_precision(m.per_class[c], m.gt_count[c], false);
    cm.aph = average_precision(m.per_class[c], m.gt_count[c], true);
    if (cm.ap) {
      sum_ap += *cm.ap;
      sum_aph += *cm.aph;
      ++present;
    }
  }
  if (present > 0) {
    s.map = sum_ap / present;
    s.maph = sum_aph / present;
  }
  return s;
}

StageMetrics evaluate(std::span<const Frame> frames, std::string name,
                      const std::array<double, kNumClasses>& iou_threshold, std::size_t workers) {
  return summarize(match_frames(frames, iou_threshold, workers), std::move(name));
}

namespace {

void opt_field(JsonWriter& w, std::string_view key, const std::optional<double>& v) {
  if (v) {
    w.field_fixed(key, *v, 4);
  } else {
    w.field_null(key);
  }
}

std::optional<double> diff(const std::optional<double>& a, const std::optional<double>& b) {
  if (!a || !b) return std::nullopt;
  return *a - *b;
}

}  // namespace

std::string metrics_report_json(const std::vector<StageMetrics>& stages) {
  JsonWriter w;
  w.begin_object();
  w.field("metric", std::string_view("all-point AP over BEV IoU; APH weights TPs by 1 - |dyaw|/pi"));
  w.key("iou_threshold").begin_object();
  for (std::size_t c = 0; c < kNumClasses; ++c)
    w.field_fixed(to_string(kAllClasses[c]), kDefaultIouThresholds[c], 2);
  w.end_object();
  w.begin_array("stages");
  for (const StageMetrics& s : stages) {
    w.begin_object();
    w.field("name", std::string_view(s.name));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const ClassMetrics& cm = s.per_class[c];
      w.key(to_string(kAllClasses[c])).begin_object();
      opt_field(w, "AP", cm.ap);
      opt_field(w, "APH", cm.aph);
      w.field("gt", static_cast<long long>(cm.gt));
      w.field("detections", static_cast<long long>(cm.detections));
      w.end_object();
    }
    opt_field(w, "mAP", s.map);
    opt_field(w, "mAPH", s.maph);
    w.end_object();
  }
  w.end_array();
  w.begin_array("deltas");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    const StageMetrics& a = stages[i];
    const StageMetrics& b = stages[i - 1];
    w.begin_object();
    w.field("from", std::string_view(b.name));
    w.field("to", std::string_view(a.name));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      w.key(to_string(kAllClasses[c])).begin_object();
      opt_field(w, "AP", diff(a.per_class[c].ap, b.per_class[c].ap));
      opt_field(w, "APH", diff(a.per_class[c].aph, b.per_class[c].aph));
      w.end_object();
    }
    opt_field(w, "mAP", diff(a.map, b.map));
    opt_field(w, "mAPH", diff(a.maph, b.maph));
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str() + "\n";
}

std::string pr_curve_csv(const std::vector<std::pair<std::string, MatchResult>>& stages) {
  std::ostringstream os;
  os << "stage,class,score,precision,recall,heading_precision\n";
  for (const auto& [name, m] : stages) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const PRCurve curve = pr_curve(m.per_class[c], m.gt_count[c]);
      for (std::size_t k = 0; k < curve.score.size(); ++k) {
        os << name << ',' << to_string(kAllClasses[c]) << ',' << format_real(curve.score[k]) << ','
           << format_real(curve.precision[k]) << ',' << format_real(curve.recall[k]) << ','
           << format_real(curve.heading_precision[k]) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace relrefine
