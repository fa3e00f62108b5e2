#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "relrefine/core.hpp"
#include "relrefine/graph.hpp"
#include "relrefine/numkit/optim.hpp"
#include "relrefine/numkit/tape.hpp"

namespace relrefine {

/// Background plus the three foreground classes.
inline constexpr std::size_t kNumLogits = kNumClasses + 1;
/// dcx, dcy, dcz, dlog l, dlog w, dlog h.
inline constexpr std::size_t kBoxResiduals = 6;
/// Heading residual as (sin d, cos d - 1); all-zero means no rotation.
inline constexpr std::size_t kDirOutputs = 2;

struct IntraConfig {
  std::size_t basic_dim = kBasicDim;
  std::size_t bev_dim = kBevDim;
  std::size_t hidden = 128;     // C_x
  std::size_t iterations = 4;   // m
  double radius = 2.0;          // r, meters
  double lambda_reg = 2.0;
  double lambda_dir = 0.2;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  // Target assignment radius per ground-truth class, meters.
  std::array<double, kNumClasses> assign_radius{2.0, 1.0, 1.0};
};

/// Two-layer edge map H_k: 2*C_x -> C_x -> C_x.
struct EdgeTransform {
  nk::Parameter w1, b1, w2, b2;
};

struct IntraParams {
  IntraConfig cfg;
  /// Fixed per-column scale applied to concat(d, o) before W_x. Not trained.
  std::vector<double> input_scale;
  nk::Parameter w_x;  // no bias: x^0 = lrelu(concat(d, o) W_x)
  std::vector<EdgeTransform> edges;
  nk::Parameter w_cls, b_cls, w_box, b_box, w_dir, b_dir;

  /// Random encoder/edge weights, zero heads (identity refinement).
  static IntraParams init(const IntraConfig& cfg, std::uint64_t seed);
  std::vector<nk::Parameter*> parameters();
  std::vector<const nk::Parameter*> parameters() const;
  void zero_heads();
};

std::vector<double> default_intra_input_scale(std::size_t basic_dim, std::size_t bev_dim);

/// Directed (center, other) pairs grouped by center: self pair first, then
/// neighbors ascending. `offsets` delimits each center's run.
struct PairList {
  std::vector<std::size_t> centers;
  std::vector<std::size_t> others;
  std::vector<std::size_t> offsets{0};

  void append(const SparseGraph& g, std::size_t node_offset);
};

PairList make_pairs(const SparseGraph& g);

/// Scaled concat(d_i, o_i) rows. Throws on inconsistent feature lengths.
nk::Tensor2D node_inputs(std::span<const Detection> dets, const IntraParams& p);

/// Prior logits reproducing each detection's own label and score:
/// softmax gives (1-s) background, s on the label, ~0 elsewhere.
nk::Tensor2D prior_logits(std::span<const Detection> dets);

// Tape-level building blocks. `trainable` binds parameters as gradient leaves.
struct BoundEdge {
  nk::Var w1, b1, w2, b2;
};
BoundEdge bind_edge(nk::Tape& t, EdgeTransform& e, bool trainable);

nk::Var init_nodes(nk::Tape& t, nk::Var inputs, nk::Var w_x);
nk::Var edge_features(nk::Tape& t, nk::Var x, const PairList& pairs, const BoundEdge& h);
nk::Var aggregate(nk::Tape& t, nk::Var edge_feats, const PairList& pairs);

struct IntraBatch {
  nk::Tensor2D inputs;
  nk::Tensor2D prior;
  PairList pairs;
  std::vector<std::size_t> frame_offsets{0};
  std::size_t nodes() const { return inputs.rows(); }
};

/// Block-diagonal batch: one radius graph per frame, node indices offset.
IntraBatch make_intra_batch(std::span<const std::span<const Detection>> frames,
                            const IntraParams& p);

struct IntraOutputs {
  std::vector<nk::Var> hidden;  // x^1..x^m
  nk::Var head_logits;          // residual logits from the head
  nk::Var logits;               // prior + head
  nk::Var box;
  nk::Var dir;
};

IntraOutputs intra_forward(nk::Tape& t, IntraParams& p, const IntraBatch& batch,
                           bool trainable);

/// Non-recording convenience for init_nodes on a detection list.
nk::Tensor2D init_nodes(std::span<const Detection> dets, const IntraParams& p);

struct IntraResult {
  std::vector<Detection> detections;
  nk::Tensor2D class_probs;  // n x kNumLogits
  nk::Tensor2D head_logits;
};

/// Applies box/heading residuals and re-scores from class probabilities.
Detection apply_intra_refinement(const Detection& det, std::span<const double> box_residual,
                                 std::span<const double> dir, std::span<const double> probs);

IntraResult run_intra(std::span<const Detection> dets, IntraParams& p,
                      FlopLedger* ledger = nullptr);
IntraResult run_intra(const Frame& frame, IntraParams& p, FlopLedger* ledger = nullptr);

struct DetectionTarget {
  int cls = 0;  // 0 background, 1 + class index otherwise
  std::optional<std::size_t> gt;
};

/// Nearest ground truth of any class within that class's radius; several
/// detections may share one ground truth.
std::vector<DetectionTarget> assign_targets(std::span<const Detection> dets,
                                            std::span<const GroundTruth> gts,
                                            const std::array<double, kNumClasses>& radius);

std::array<double, kBoxResiduals> box_residual_target(const Box3D& det, const Box3D& gt);
std::array<double, kDirOutputs> heading_residual_target(double det_yaw, double gt_yaw);

/// Dense per-node targets in batch order.
struct IntraTargets {
  std::vector<int> cls;
  std::vector<std::size_t> foreground;  // node rows with a regression target
  nk::Tensor2D box;                     // |foreground| x 6
  nk::Tensor2D dir;                     // |foreground| x 2
};

IntraTargets make_intra_targets(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                const IntraConfig& cfg);
void append_targets(IntraTargets& into, const IntraTargets& part, std::size_t node_offset);

struct IntraLossTerms {
  nk::Var total, cls, reg, dir;
  bool has_foreground = false;
};

IntraLossTerms intra_loss(nk::Tape& t, const IntraOutputs& out, const IntraTargets& targets,
                          double lambda_reg, double lambda_dir, double alpha, double gamma);

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch = 16;
  nk::AdamWConfig optimizer;
  std::uint64_t seed = 1;
};

struct LossRecord {
  std::size_t iteration = 0;
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double dir = 0.0;
};

/// Trains on frames with ground truth; returns one record per iteration.
std::vector<LossRecord> train_intra(IntraParams& p, std::span<const Frame> frames,
                                    const TrainConfig& cfg);

}  // namespace relrefine
