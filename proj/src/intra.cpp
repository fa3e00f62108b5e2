#include "relrefine/intra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace relrefine {

using nk::Parameter;
using nk::Tape;
using nk::Tensor2D;
using nk::Var;

namespace {

Tensor2D uniform_init(std::size_t rows, std::size_t cols, std::size_t fan_in,
                      std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor2D t(rows, cols);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Var bind(Tape& t, Parameter& p, bool trainable) {
  return trainable ? t.param(p) : t.constant(p.value);
}

constexpr double kPriorFloor = 1e-6;
constexpr double kScoreClamp = 1e-4;

}  // namespace

std::vector<double> default_intra_input_scale(std::size_t basic_dim, std::size_t bev_dim) {
  std::vector<double> s(basic_dim + bev_dim, 1.0);
  if (basic_dim == kBasicDim) {
    s[kFieldCx] = s[kFieldCy] = 1.0 / 50.0;
    s[kFieldCz] = 0.5;
    s[kFieldLength] = 0.2;
    s[kFieldWidth] = s[kFieldHeight] = 0.5;
    s[kFieldVx] = s[kFieldVy] = 0.1;
    s[kFieldDt] = 0.1;
    s[kFieldClass] = 0.5;
  }
  for (std::size_t i = basic_dim; i < s.size(); ++i) s[i] = 5.0;
  return s;
}

IntraParams IntraParams::init(const IntraConfig& cfg, std::uint64_t seed) {
  if (cfg.hidden == 0 || cfg.iterations == 0) {
    throw std::invalid_argument("IntraParams: hidden width and iterations must be positive");
  }
  std::mt19937_64 rng(seed);
  IntraParams p;
  p.cfg = cfg;
  p.input_scale = default_intra_input_scale(cfg.basic_dim, cfg.bev_dim);
  const std::size_t in = cfg.basic_dim + cfg.bev_dim;
  const std::size_t c = cfg.hidden;
  p.w_x = Parameter("intra.w_x", uniform_init(in, c, in, rng));
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const std::string pre = "intra.edge" + std::to_string(k);
    EdgeTransform e;
    e.w1 = Parameter(pre + ".w1", uniform_init(2 * c, c, 2 * c, rng));
    e.b1 = Parameter(pre + ".b1", uniform_init(1, c, 2 * c, rng));
    e.w2 = Parameter(pre + ".w2", uniform_init(c, c, c, rng));
    e.b2 = Parameter(pre + ".b2", uniform_init(1, c, c, rng));
    p.edges.push_back(std::move(e));
  }
  const std::size_t hc = cfg.iterations * c;
  p.w_cls = Parameter("intra.w_cls", Tensor2D(hc, kNumLogits));
  p.b_cls = Parameter("intra.b_cls", Tensor2D(1, kNumLogits));
  p.w_box = Parameter("intra.w_box", Tensor2D(hc, kBoxResiduals));
  p.b_box = Parameter("intra.b_box", Tensor2D(1, kBoxResiduals));
  p.w_dir = Parameter("intra.w_dir", Tensor2D(hc, kDirOutputs));
  p.b_dir = Parameter("intra.b_dir", Tensor2D(1, kDirOutputs));
  return p;
}

std::vector<Parameter*> IntraParams::parameters() {
  std::vector<Parameter*> out{&w_x};
  for (auto& e : edges) {
    out.insert(out.end(), {&e.w1, &e.b1, &e.w2, &e.b2});
  }
  out.insert(out.end(), {&w_cls, &b_cls, &w_box, &b_box, &w_dir, &b_dir});
  return out;
}

std::vector<const Parameter*> IntraParams::parameters() const {
  auto ps = const_cast<IntraParams*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void IntraParams::zero_heads() {
  for (Parameter* p : {&w_cls, &b_cls, &w_box, &b_box, &w_dir, &b_dir}) p->value.fill(0.0);
}

void PairList::append(const SparseGraph& g, std::size_t node_offset) {
  for (std::size_t i = 0; i < g.n; ++i) {
    centers.push_back(node_offset + i);
    others.push_back(node_offset + i);
    for (std::size_t j : neighbors(g, i)) {
      centers.push_back(node_offset + i);
      others.push_back(node_offset + j);
    }
    offsets.push_back(centers.size());
  }
}

PairList make_pairs(const SparseGraph& g) {
  PairList pl;
  pl.append(g, 0);
  return pl;
}

Tensor2D node_inputs(std::span<const Detection> dets, const IntraParams& p) {
  const std::size_t tb = p.cfg.basic_dim;
  const std::size_t cb = p.cfg.bev_dim;
  Tensor2D out(dets.size(), tb + cb);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (d.basic.size() != tb || d.bev.size() != cb) {
      throw std::invalid_argument("node_inputs: detection " + std::to_string(i) + " has " +
                                  std::to_string(d.basic.size()) + "+" +
                                  std::to_string(d.bev.size()) + " features, expected " +
                                  std::to_string(tb) + "+" + std::to_string(cb));
    }
    auto r = out.row(i);
    for (std::size_t k = 0; k < tb; ++k) r[k] = d.basic[k] * p.input_scale[k];
    for (std::size_t k = 0; k < cb; ++k) r[tb + k] = d.bev[k] * p.input_scale[tb + k];
  }
  return out;
}

Tensor2D prior_logits(std::span<const Detection> dets) {
  Tensor2D out(dets.size(), kNumLogits, std::log(kPriorFloor));
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const double s = std::clamp(dets[i].score, kScoreClamp, 1.0 - kScoreClamp);
    out(i, 0) = std::log1p(-s);
    out(i, 1 + class_index(dets[i].label)) = std::log(s);
  }
  return out;
}

BoundEdge bind_edge(Tape& t, EdgeTransform& e, bool trainable) {
  return {bind(t, e.w1, trainable), bind(t, e.b1, trainable), bind(t, e.w2, trainable),
          bind(t, e.b2, trainable)};
}

Var init_nodes(Tape& t, Var inputs, Var w_x) {
  return nk::leaky_relu(t, nk::linear(t, inputs, w_x));
}

Var edge_features(Tape& t, Var x, const PairList& pairs, const BoundEdge& h) {
  Var z1;
  if (t.ledger()) {
    // Instrumented runs count the per-pair layer as written.
    z1 = nk::linear(t, nk::pair_features(t, x, pairs.centers, pairs.others), h.w1, h.b1);
  } else {
    z1 = nk::pair_linear(t, x, h.w1, h.b1, pairs.centers, pairs.others);
  }
  const Var h1 = nk::leaky_relu(t, z1);
  return nk::leaky_relu(t, nk::linear(t, h1, h.w2, h.b2));
}

Var aggregate(Tape& t, Var edge_feats, const PairList& pairs) {
  return nk::segment_max(t, edge_feats, pairs.offsets);
}

IntraBatch make_intra_batch(std::span<const std::span<const Detection>> frames,
                            const IntraParams& p) {
  std::size_t total = 0;
  for (auto f : frames) total += f.size();
  IntraBatch b;
  b.inputs = Tensor2D(total, p.cfg.basic_dim + p.cfg.bev_dim);
  b.prior = Tensor2D(total, kNumLogits);
  std::size_t off = 0;
  std::vector<Point2> centers;
  for (auto f : frames) {
    const Tensor2D in = node_inputs(f, p);
    const Tensor2D pr = prior_logits(f);
    std::copy(in.values().begin(), in.values().end(), b.inputs.row(off).begin());
    std::copy(pr.values().begin(), pr.values().end(), b.prior.row(off).begin());
    centers.clear();
    for (const Detection& d : f) centers.push_back({d.box.cx, d.box.cy});
    b.pairs.append(build_radius_graph(centers, p.cfg.radius), off);
    off += f.size();
    b.frame_offsets.push_back(off);
  }
  return b;
}

IntraOutputs intra_forward(Tape& t, IntraParams& p, const IntraBatch& batch, bool trainable) {
  if (p.edges.size() != p.cfg.iterations) {
    throw std::invalid_argument("intra_forward: " + std::to_string(p.edges.size()) +
                                " edge transforms for m = " + std::to_string(p.cfg.iterations));
  }
  IntraOutputs out;
  Var x;
  {
    nk::ScopeGuard g(t, "intra.encode");
    x = init_nodes(t, t.constant(batch.inputs), bind(t, p.w_x, trainable));
  }
  {
    nk::ScopeGuard g(t, "intra.edge");
    for (auto& e : p.edges) {
      const BoundEdge h = bind_edge(t, e, trainable);
      x = aggregate(t, edge_features(t, x, batch.pairs, h), batch.pairs);
      out.hidden.push_back(x);
    }
  }
  nk::ScopeGuard g(t, "intra.head");
  const Var cat = nk::concat_cols(t, out.hidden);
  out.head_logits = nk::linear(t, cat, bind(t, p.w_cls, trainable), bind(t, p.b_cls, trainable));
  out.box = nk::linear(t, cat, bind(t, p.w_box, trainable), bind(t, p.b_box, trainable));
  out.dir = nk::linear(t, cat, bind(t, p.w_dir, trainable), bind(t, p.b_dir, trainable));
  out.logits = nk::add(t, t.constant(batch.prior), out.head_logits);
  return out;
}

Tensor2D init_nodes(std::span<const Detection> dets, const IntraParams& p) {
  Tape t;
  const Var x = init_nodes(t, t.constant(node_inputs(dets, p)), t.constant(p.w_x.value));
  return t.value(x);
}

Detection apply_intra_refinement(const Detection& det, std::span<const double> box_residual,
                                 std::span<const double> dir, std::span<const double> probs) {
  Detection out = det;
  Box3D& b = out.box;
  b.cx += box_residual[0];
  b.cy += box_residual[1];
  b.cz += box_residual[2];
  b.length *= std::exp(box_residual[3]);
  b.width *= std::exp(box_residual[4]);
  b.height *= std::exp(box_residual[5]);
  b.yaw = wrap_angle(b.yaw + std::atan2(dir[0], 1.0 + dir[1]));
  std::size_t best = 1;
  for (std::size_t k = 2; k < kNumLogits; ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  out.label = static_cast<ClassLabel>(best - 1);
  out.score = probs[best];
  const double dt = det.basic.size() > kFieldDt ? det.basic[kFieldDt] : 0.0;
  out.basic = make_basic_features(b, out.score, out.label, dt);
  return out;
}

IntraResult run_intra(std::span<const Detection> dets, IntraParams& p, FlopLedger* ledger) {
  IntraResult res;
  res.class_probs = Tensor2D(0, kNumLogits);
  res.head_logits = Tensor2D(0, kNumLogits);
  if (dets.empty()) return res;
  const std::span<const Detection> one[] = {dets};
  const IntraBatch batch = make_intra_batch(one, p);
  Tape t(ledger);
  const IntraOutputs out = intra_forward(t, p, batch, false);
  res.class_probs = nk::softmax_rows(t.value(out.logits));
  res.head_logits = t.value(out.head_logits);
  const Tensor2D& box = t.value(out.box);
  const Tensor2D& dir = t.value(out.dir);
  res.detections.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    res.detections.push_back(
        apply_intra_refinement(dets[i], box.row(i), dir.row(i), res.class_probs.row(i)));
  }
  return res;
}

IntraResult run_intra(const Frame& frame, IntraParams& p, FlopLedger* ledger) {
  return run_intra(std::span<const Detection>(frame.detections), p, ledger);
}

std::vector<DetectionTarget> assign_targets(std::span<const Detection> dets,
                                            std::span<const GroundTruth> gts,
                                            const std::array<double, kNumClasses>& radius) {
  std::vector<DetectionTarget> out(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double d = bev_distance(dets[i].box, gts[g].box);
      if (d <= radius[class_index(gts[g].label)] && d < best) {
        best = d;
        out[i].gt = g;
      }
    }
    if (out[i].gt) out[i].cls = 1 + class_index(gts[*out[i].gt].label);
  }
  return out;
}

std::array<double, kBoxResiduals> box_residual_target(const Box3D& det, const Box3D& gt) {
  return {gt.cx - det.cx,
          gt.cy - det.cy,
          gt.cz - det.cz,
          std::log(gt.length / det.length),
          std::log(gt.width / det.width),
          std::log(gt.height / det.height)};
}

std::array<double, kDirOutputs> heading_residual_target(double det_yaw, double gt_yaw) {
  const double d = wrap_angle(gt_yaw - det_yaw);
  return {std::sin(d), std::cos(d) - 1.0};
}

IntraTargets make_intra_targets(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                const IntraConfig& cfg) {
  const auto assigned = assign_targets(dets, gts, cfg.assign_radius);
  IntraTargets t;
  std::vector<double> box, dir;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    t.cls.push_back(assigned[i].cls);
    if (!assigned[i].gt) continue;
    const GroundTruth& g = gts[*assigned[i].gt];
    t.foreground.push_back(i);
    const auto b = box_residual_target(dets[i].box, g.box);
    const auto h = heading_residual_target(dets[i].box.yaw, g.box.yaw);
    box.insert(box.end(), b.begin(), b.end());
    dir.insert(dir.end(), h.begin(), h.end());
  }
  t.box = Tensor2D(t.foreground.size(), kBoxResiduals, std::move(box));
  t.dir = Tensor2D(t.foreground.size(), kDirOutputs, std::move(dir));
  return t;
}

void append_targets(IntraTargets& into, const IntraTargets& part, std::size_t node_offset) {
  into.cls.insert(into.cls.end(), part.cls.begin(), part.cls.end());
  for (std::size_t f : part.foreground) into.foreground.push_back(node_offset + f);
  auto cat = [](const Tensor2D& a, const Tensor2D& b, std::size_t cols) {
    std::vector<double> v(a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    const std::size_t rows = v.size() / cols;
    return Tensor2D(rows, cols, std::move(v));
  };
  into.box = cat(into.box, part.box, kBoxResiduals);
  into.dir = cat(into.dir, part.dir, kDirOutputs);
}

IntraLossTerms intra_loss(Tape& t, const IntraOutputs& out, const IntraTargets& targets,
                          double lambda_reg, double lambda_dir, double alpha, double gamma) {
  IntraLossTerms l;
  l.cls = nk::focal_loss_rows(t, out.logits, targets.cls, alpha, gamma);
  l.has_foreground = !targets.foreground.empty();
  if (!l.has_foreground) {
    l.reg = t.constant(Tensor2D(1, 1));
    l.dir = t.constant(Tensor2D(1, 1));
    l.total = l.cls;
    return l;
  }
  l.reg = nk::smooth_l1_loss(t, nk::gather_rows(t, out.box, targets.foreground), targets.box);
  l.dir = nk::smooth_l1_loss(t, nk::gather_rows(t, out.dir, targets.foreground), targets.dir);
  const std::pair<Var, double> terms[] = {{l.cls, 1.0}, {l.reg, lambda_reg}, {l.dir, lambda_dir}};
  l.total = nk::weighted_sum(t, terms);
  return l;
}

std::vector<LossRecord> train_intra(IntraParams& p, std::span<const Frame> frames,
                                    const TrainConfig& cfg) {
  struct Cached {
    std::span<const Detection> dets;
    IntraTargets targets;
  };
  std::vector<Cached> pool;
  for (const Frame& f : frames) {
    if (f.detections.empty() || !f.ground_truth) continue;
    pool.push_back({f.detections, make_intra_targets(f.detections, *f.ground_truth, p.cfg)});
  }
  std::vector<LossRecord> log;
  if (cfg.iterations == 0) return log;
  if (pool.empty()) throw std::invalid_argument("train_intra: no frames with detections and ground truth");

  auto params = p.parameters();
  nk::AdamW opt(params, cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::span<const Detection>> picked;
  std::vector<std::size_t> idx;
  log.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    picked.clear();
    idx.clear();
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      idx.push_back(static_cast<std::size_t>(rng() % pool.size()));
      picked.push_back(pool[idx.back()].dets);
    }
    const IntraBatch batch = make_intra_batch(picked, p);
    IntraTargets targets;
    targets.box = Tensor2D(0, kBoxResiduals);
    targets.dir = Tensor2D(0, kDirOutputs);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      append_targets(targets, pool[idx[b]].targets, batch.frame_offsets[b]);
    }
    opt.zero_grad();
    Tape t;
    const IntraOutputs out = intra_forward(t, p, batch, true);
    const IntraLossTerms l = intra_loss(t, out, targets, p.cfg.lambda_reg, p.cfg.lambda_dir,
                                        p.cfg.focal_alpha, p.cfg.focal_gamma);
    t.backward(l.total);
    opt.step();
    log.push_back({it, t.value(l.total)(0, 0), t.value(l.cls)(0, 0), t.value(l.reg)(0, 0),
                   t.value(l.dir)(0, 0)});
  }
  return log;
}

}  // namespace relrefine
