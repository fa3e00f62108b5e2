#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "relrefine/core.hpp"
#include "relrefine/intra.hpp"
#include "relrefine/numkit/tape.hpp"

namespace relrefine {

/// dcx, dcy, dcz, sin d, cos d - 1.
inline constexpr std::size_t kInterOutputs = 5;

struct InterConfig {
  std::size_t basic_dim = kBasicDim;  // T
  std::size_t channels = 256;         // C_enc
  std::size_t heads = 16;
  std::size_t max_sequence = 128;
};

struct InterParams {
  InterConfig cfg;
  /// Fixed per-column scale applied after anchoring. Not trained.
  std::vector<double> input_scale;
  nk::Parameter w_e;              // T x C, no bias
  nk::Parameter w_q, w_k, w_v;    // C x C, heads split column-wise
  nk::Parameter w_o;              // C x C
  nk::Parameter w_f1, b_f1;       // C -> 2C
  nk::Parameter w_f2, b_f2;       // 2C -> C
  nk::Parameter w_r, b_r;         // C -> 5, applied to the current token

  static InterParams init(const InterConfig& cfg, std::uint64_t seed);
  std::vector<nk::Parameter*> parameters();
  std::vector<const nk::Parameter*> parameters() const;
};

std::vector<double> default_inter_input_scale(std::size_t basic_dim);

/// Model input for one track sequence (N x T basic features, oldest first, in
/// current ego coordinates, last row = current detection): positions and time re-expressed relative to
/// the current row, then column-scaled.
nk::Tensor2D prepare_sequence(const nk::Tensor2D& seq, const InterParams& p);

/// Packed prepared sequences for the batched path.
struct SequenceBatch {
  nk::Tensor2D rows;                  // sum N_i x T, prepared
  std::vector<std::size_t> offsets{0};
  std::size_t size() const { return offsets.size() - 1; }
  void append(const nk::Tensor2D& prepared);
  static SequenceBatch pack(std::span<const nk::Tensor2D> prepared);
};

struct BoundInter {
  nk::Var w_e, w_q, w_k, w_v, w_o, w_f1, b_f1, w_f2, b_f2, w_r, b_r;
};
BoundInter bind_inter(nk::Tape& t, InterParams& p, bool trainable);

nk::Var encode_sequence(nk::Tape& t, nk::Var seq, const BoundInter& b);
/// Full bidirectional attention over one sequence, output-projected.
nk::Var self_attention(nk::Tape& t, nk::Var d, const BoundInter& b, std::size_t heads,
                       nk::Tensor2D* probs_out = nullptr);
/// FFN(A + D) + A + D.
nk::Var ffn_refine(nk::Tape& t, nk::Var a, nk::Var d, const BoundInter& b);

struct InterFullOutputs {
  nk::Var d;
  nk::Var a;
  nk::Var refined;  // A', all rows
  nk::Var out;      // 1 x 5 from the current token
};

/// Reference path computing every token of one prepared sequence.
InterFullOutputs inter_forward_full(nk::Tape& t, InterParams& p, const nk::Tensor2D& prepared,
                                    bool trainable, nk::Tensor2D* probs_out = nullptr);

/// Current-token outputs (B x 5) for a packed batch. Only the last row of each
/// sequence is propagated past the key/value projections, which are folded
/// into the encoder (K = S (W_e W_k)). Matches the full path's last row.
nk::Var inter_forward_batch(nk::Tape& t, InterParams& p, const SequenceBatch& batch,
                            bool trainable);

/// Adds the center residual and rotates the heading; everything else is kept.
Detection apply_inter_refinement(const Detection& det, std::span<const double> out);

/// `seq` holds raw basic features in current coordinates; last row is `current`.
Detection refine_object(const nk::Tensor2D& seq, const Detection& current, InterParams& p,
                        FlopLedger* ledger = nullptr);

std::array<double, kInterOutputs> inter_target(const Box3D& det, const Box3D& gt);

/// Mean smooth-L1 over the five regression terms.
nk::Var inter_loss(nk::Tape& t, nk::Var out, nk::Tensor2D targets);
double inter_loss(std::span<const double> out, std::span<const double> target);

struct InterSample {
  nk::Tensor2D prepared;
  std::array<double, kInterOutputs> target{};
};

/// Trains with batches of `cfg.batch` sequences sampled with replacement.
std::vector<LossRecord> train_inter(InterParams& p, std::span<const InterSample> samples,
                                    const TrainConfig& cfg);

}  // namespace relrefine
