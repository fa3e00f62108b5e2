#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relrefine/flop_ledger.hpp"
#include "relrefine/numkit/tensor.hpp"

namespace relrefine::nk {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor2D value;
  Tensor2D grad;

  Parameter() = default;
  Parameter(std::string n, Tensor2D v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad = Tensor2D(value.rows(), value.cols()); }
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

class Tape;
using BackwardFn = std::function<void(Tape&)>;

/// Reverse-mode gradient recorder. Nodes are appended in evaluation order,
/// so reverse insertion order is a valid topological order for backward.
/// A tape is single-threaded.
class Tape {
 public:
  explicit Tape(FlopLedger* ledger = nullptr) : ledger_(ledger) {}

  Var constant(Tensor2D value);
  /// Leaf bound to a parameter; backward() adds into `p.grad`.
  Var param(Parameter& p);

  const Tensor2D& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer, allocated as zeros on first access.
  Tensor2D& grad(Var v);
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty() || nodes_[v.id].value.empty(); }

  /// Appends an op result. `backward` is skipped when no input requires grad.
  Var push(Tensor2D value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var push(Tensor2D value, std::span<const Var> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and runs the reverse sweep.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Operation accounting.
  void count_macs(const std::string& suffix, std::uint64_t macs);
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }
  FlopLedger* ledger() const { return ledger_; }

  // Distance of recorded values from non-differentiable points, tracked only
  // when enabled; finite-difference checks reject points closer than a margin.
  void track_kinks(bool on) { track_kinks_ = on; }
  bool tracking_kinks() const { return track_kinks_; }
  void note_kink(double margin) {
    if (margin < kink_margin_) kink_margin_ = margin;
  }
  double kink_margin() const { return kink_margin_; }
  // Running hash of every branch taken at a kink (sign, argmax, loss region).
  // Two evaluations with equal signatures lie on the same smooth piece.
  void note_branch(std::uint64_t code) {
    branch_sig_ = (branch_sig_ ^ code) * 0x100000001b3ULL;
  }
  std::uint64_t branch_signature() const { return branch_sig_; }

 private:
  struct Node {
    Tensor2D value;
    Tensor2D grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  FlopLedger* ledger_ = nullptr;
  std::string scope_;
  bool track_kinks_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t branch_sig_ = 0xcbf29ce484222325ULL;
};

/// Sets the tape's accounting scope for the lifetime of the guard.
class ScopeGuard {
 public:
  ScopeGuard(Tape& t, std::string scope) : tape_(t), prev_(t.scope()) {
    t.set_scope(std::move(scope));
  }
  ~ScopeGuard() { tape_.set_scope(prev_); }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  Tape& tape_;
  std::string prev_;
};

inline constexpr double kLeakySlope = 0.01;

Var matmul(Tape& t, Var a, Var b);
/// x * W (+ b as a broadcast row).
Var linear(Tape& t, Var x, Var w, std::optional<Var> b = std::nullopt);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double s);
Var leaky_relu(Tape& t, Var x, double slope = kLeakySlope);
Var softmax_rows(Tape& t, Var x);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var gather_rows(Tape& t, Var x, std::vector<std::size_t> rows);
/// Row p = [x[other_p] - x[center_p], x[center_p]].
Var pair_features(Tape& t, Var x, std::vector<std::size_t> centers,
                  std::vector<std::size_t> others);
/// Same value as linear(pair_features(x, ...), w, b) for w of shape 2C x H,
/// but the matrix products run per node and are gathered per pair.
Var pair_linear(Tape& t, Var x, Var w, Var b, std::vector<std::size_t> centers,
                std::vector<std::size_t> others);
/// Channel-wise max over contiguous row segments [offsets[s], offsets[s+1]).
/// Ties route the gradient to the first maximal row.
Var segment_max(Tape& t, Var x, std::vector<std::size_t> offsets);
/// Multi-head scaled dot-product attention. Query rows in segment s attend to
/// key/value rows of the same segment. When `probs_out` is given it receives
/// one row per (query row, head) holding that head's attention distribution
/// over the segment's keys, left-aligned and zero padded.
Var segment_attention(Tape& t, Var q, Var k, Var v, std::vector<std::size_t> q_offsets,
                      std::vector<std::size_t> kv_offsets, std::size_t heads,
                      Tensor2D* probs_out = nullptr);
Var sum_all(Tape& t, Var x);
/// sum_i w_i * terms_i for same-shaped terms.
Var weighted_sum(Tape& t, std::span<const std::pair<Var, double>> terms);
/// Mean over elements of the smooth-L1 penalty (knee `beta`).
Var smooth_l1_loss(Tape& t, Var pred, Tensor2D target, double beta = 1.0);
/// Mean over rows of the softmax focal loss of each row's target class.
Var focal_loss_rows(Tape& t, Var logits, std::vector<int> targets, double alpha, double gamma);

// Non-recording reference versions.
Tensor2D softmax_rows(const Tensor2D& x);
double smooth_l1(std::span<const double> pred, std::span<const double> target,
                 double beta = 1.0);
double focal_loss(std::span<const double> logits, int target_class, double alpha = 0.25,
                  double gamma = 2.0);
double leaky_relu(double v, double slope = kLeakySlope);

}  // namespace relrefine::nk
