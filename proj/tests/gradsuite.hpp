#pragma once

// Random small problems for finite-difference checks of the two full losses.

#include <random>

#include "oracles.hpp"
#include "relrefine/inter.hpp"
#include "relrefine/intra.hpp"
#include "relrefine/numkit/gradcheck.hpp"

namespace gradsuite {

using namespace relrefine;

// A point is usable when no difference stencil crossed a kink.
inline bool non_degenerate(const nk::GradCheckResult& r) { return r.branch_crossings == 0; }

inline void randomize(nk::Parameter& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : p.value.values()) v = g(rng);
}

struct IntraProblem {
  IntraParams params;
  std::vector<Detection> dets;
  std::vector<GroundTruth> gts;
};

// n nodes packed into a few meters so the radius graph has edges.
inline IntraProblem intra_problem(std::uint64_t seed, std::size_t n, std::size_t width = 6) {
  std::mt19937_64 rng(seed);
  IntraConfig cfg;
  cfg.hidden = width;
  IntraProblem pr{IntraParams::init(cfg, seed), {}, {}};
  for (nk::Parameter* p : {&pr.params.w_cls, &pr.params.b_cls, &pr.params.w_box, &pr.params.b_box,
                           &pr.params.w_dir, &pr.params.b_dir}) {
    randomize(*p, rng, 0.5);
  }
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  std::uniform_real_distribution<double> sc(0.1, 0.9);
  std::uniform_real_distribution<double> off(-0.4, 0.4);
  for (std::size_t i = 0; i < n; ++i) {
    Box3D b = oracle::random_box(rng);
    b.cx = u(rng);
    b.cy = u(rng);
    b.vx = off(rng);
    b.vy = off(rng);
    const ClassLabel label = kAllClasses[rng() % 3];
    pr.dets.push_back(oracle::make_detection(b, sc(rng), label, rng));
    if (i % 2 == 0) {
      GroundTruth g;
      g.box = b;
      g.box.cx += off(rng);
      g.box.cy += off(rng);
      g.box.length *= 1.0 + off(rng) * 0.5;
      g.box.yaw += off(rng);
      g.label = label;
      pr.gts.push_back(g);
    }
  }
  return pr;
}

inline nk::GradCheckResult check_intra(IntraProblem& pr) {
  const IntraTargets targets = make_intra_targets(pr.dets, pr.gts, pr.params.cfg);
  const std::span<const Detection> one[] = {pr.dets};
  const IntraBatch batch = make_intra_batch(one, pr.params);
  auto params = pr.params.parameters();
  return nk::grad_check(
      [&](nk::Tape& t) {
        const IntraOutputs out = intra_forward(t, pr.params, batch, true);
        const auto& c = pr.params.cfg;
        return intra_loss(t, out, targets, c.lambda_reg, c.lambda_dir, c.focal_alpha, c.focal_gamma)
            .total;
      },
      params);
}

struct InterProblem {
  InterParams params;
  nk::Tensor2D prepared;
  std::array<double, kInterOutputs> target{};
};

inline InterProblem inter_problem(std::uint64_t seed, std::size_t n, std::size_t channels = 8,
                                  std::size_t heads = 2) {
  std::mt19937_64 rng(seed);
  InterConfig cfg;
  cfg.channels = channels;
  cfg.heads = heads;
  InterProblem pr{InterParams::init(cfg, seed), {}, {}};
  randomize(pr.params.w_r, rng, 0.5);
  randomize(pr.params.b_r, rng, 0.5);
  nk::Tensor2D seq(n, kBasicDim);
  Box3D base = oracle::random_box(rng, 10);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (std::size_t r = 0; r < n; ++r) {
    Box3D b = base;
    b.cx += jitter(rng) + 0.5 * static_cast<double>(r);
    b.cy += jitter(rng);
    b.yaw += 0.1 * jitter(rng);
    const auto f = make_basic_features(b, 0.5 + 0.1 * jitter(rng), ClassLabel::Vehicle,
                                       0.1 * static_cast<double>(r));
    std::copy(f.begin(), f.end(), seq.row(r).begin());
  }
  pr.prepared = prepare_sequence(seq, pr.params);
  for (double& v : pr.target) v = jitter(rng);
  return pr;
}

inline nk::GradCheckResult check_inter(InterProblem& pr) {
  auto params = pr.params.parameters();
  return nk::grad_check(
      [&](nk::Tape& t) {
        const InterFullOutputs o = inter_forward_full(t, pr.params, pr.prepared, true);
        return inter_loss(t, o.out, nk::Tensor2D(1, kInterOutputs,
                                                 std::vector<double>(pr.target.begin(), pr.target.end())));
      },
      params);
}

}  // namespace gradsuite
