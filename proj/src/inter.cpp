#include "relrefine/inter.hpp"

#include <cmath>
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

}  // namespace

std::vector<double> default_inter_input_scale(std::size_t basic_dim) {
  std::vector<double> s(basic_dim, 1.0);
  if (basic_dim == kBasicDim) {
    s[kFieldCx] = s[kFieldCy] = 0.5;
    s[kFieldCz] = 1.0;
    s[kFieldLength] = 0.2;
    s[kFieldWidth] = s[kFieldHeight] = 0.5;
    s[kFieldVx] = s[kFieldVy] = 0.1;
    s[kFieldDt] = 0.2;
    s[kFieldClass] = 0.5;
  }
  return s;
}

InterParams InterParams::init(const InterConfig& cfg, std::uint64_t seed) {
  if (cfg.heads == 0 || cfg.channels % cfg.heads != 0) {
    throw std::invalid_argument("InterParams: channels " + std::to_string(cfg.channels) +
                                " not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  std::mt19937_64 rng(seed);
  InterParams p;
  p.cfg = cfg;
  p.input_scale = default_inter_input_scale(cfg.basic_dim);
  const std::size_t t = cfg.basic_dim;
  const std::size_t c = cfg.channels;
  p.w_e = Parameter("inter.w_e", uniform_init(t, c, t, rng));
  p.w_q = Parameter("inter.w_q", uniform_init(c, c, c, rng));
  p.w_k = Parameter("inter.w_k", uniform_init(c, c, c, rng));
  p.w_v = Parameter("inter.w_v", uniform_init(c, c, c, rng));
  p.w_o = Parameter("inter.w_o", uniform_init(c, c, c, rng));
  p.w_f1 = Parameter("inter.w_f1", uniform_init(c, 2 * c, c, rng));
  p.b_f1 = Parameter("inter.b_f1", uniform_init(1, 2 * c, c, rng));
  p.w_f2 = Parameter("inter.w_f2", uniform_init(2 * c, c, 2 * c, rng));
  p.b_f2 = Parameter("inter.b_f2", uniform_init(1, c, 2 * c, rng));
  p.w_r = Parameter("inter.w_r", Tensor2D(c, kInterOutputs));
  p.b_r = Parameter("inter.b_r", Tensor2D(1, kInterOutputs));
  return p;
}

std::vector<Parameter*> InterParams::parameters() {
  return {&w_e, &w_q, &w_k, &w_v, &w_o, &w_f1, &b_f1, &w_f2, &b_f2, &w_r, &b_r};
}

std::vector<const Parameter*> InterParams::parameters() const {
  return {&w_e, &w_q, &w_k, &w_v, &w_o, &w_f1, &b_f1, &w_f2, &b_f2, &w_r, &b_r};
}

Tensor2D prepare_sequence(const Tensor2D& seq, const InterParams& p) {
  if (seq.rows() == 0) throw std::invalid_argument("prepare_sequence: empty sequence");
  if (seq.cols() != p.cfg.basic_dim) {
    throw std::invalid_argument("prepare_sequence: sequence has " + std::to_string(seq.cols()) +
                                " columns, expected " + std::to_string(p.cfg.basic_dim));
  }
  Tensor2D out = seq;
  const auto cur = seq.row(seq.rows() - 1);
  const bool anchored = p.cfg.basic_dim == kBasicDim;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (anchored) {
      for (std::size_t k : {kFieldCx, kFieldCy, kFieldCz, kFieldDt}) row[k] -= cur[k];
    }
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= p.input_scale[k];
  }
  return out;
}

void SequenceBatch::append(const Tensor2D& prepared) {
  if (prepared.rows() == 0) throw std::invalid_argument("SequenceBatch: empty sequence");
  if (rows.empty()) {
    rows = prepared;
  } else {
    if (prepared.cols() != rows.cols()) throw std::invalid_argument("SequenceBatch: width mismatch");
    std::vector<double> v(rows.values().begin(), rows.values().end());
    v.insert(v.end(), prepared.values().begin(), prepared.values().end());
    const std::size_t n = v.size() / prepared.cols();
    rows = Tensor2D(n, prepared.cols(), std::move(v));
  }
  offsets.push_back(rows.rows());
}

SequenceBatch SequenceBatch::pack(std::span<const Tensor2D> prepared) {
  SequenceBatch b;
  if (prepared.empty()) return b;
  const std::size_t cols = prepared.front().cols();
  std::vector<double> v;
  for (const Tensor2D& s : prepared) {
    if (s.rows() == 0) throw std::invalid_argument("SequenceBatch: empty sequence");
    if (s.cols() != cols) throw std::invalid_argument("SequenceBatch: width mismatch");
    v.insert(v.end(), s.values().begin(), s.values().end());
    b.offsets.push_back(b.offsets.back() + s.rows());
  }
  b.rows = Tensor2D(b.offsets.back(), cols, std::move(v));
  return b;
}

BoundInter bind_inter(Tape& t, InterParams& p, bool trainable) {
  return {bind(t, p.w_e, trainable),  bind(t, p.w_q, trainable),  bind(t, p.w_k, trainable),
          bind(t, p.w_v, trainable),  bind(t, p.w_o, trainable),  bind(t, p.w_f1, trainable),
          bind(t, p.b_f1, trainable), bind(t, p.w_f2, trainable), bind(t, p.b_f2, trainable),
          bind(t, p.w_r, trainable),  bind(t, p.b_r, trainable)};
}

Var encode_sequence(Tape& t, Var seq, const BoundInter& b) {
  if (t.value(seq).rows() == 0) throw std::invalid_argument("encode_sequence: empty sequence");
  nk::ScopeGuard g(t, "inter.encode");
  return nk::matmul(t, seq, b.w_e);
}

Var self_attention(Tape& t, Var d, const BoundInter& b, std::size_t heads, Tensor2D* probs_out) {
  Var q, k, v;
  {
    nk::ScopeGuard g(t, "inter.qkv");
    q = nk::matmul(t, d, b.w_q);
    k = nk::matmul(t, d, b.w_k);
    v = nk::matmul(t, d, b.w_v);
  }
  const std::size_t n = t.value(d).rows();
  Var ctx;
  {
    nk::ScopeGuard g(t, "inter.attn");
    ctx = nk::segment_attention(t, q, k, v, {0, n}, {0, n}, heads, probs_out);
  }
  nk::ScopeGuard g(t, "inter.out_proj");
  return nk::matmul(t, ctx, b.w_o);
}

Var ffn_refine(Tape& t, Var a, Var d, const BoundInter& b) {
  nk::ScopeGuard g(t, "inter.ffn");
  const Var z = nk::add(t, a, d);
  const Var h = nk::leaky_relu(t, nk::linear(t, z, b.w_f1, b.b_f1));
  return nk::add(t, nk::linear(t, h, b.w_f2, b.b_f2), z);
}

InterFullOutputs inter_forward_full(Tape& t, InterParams& p, const Tensor2D& prepared,
                                    bool trainable, Tensor2D* probs_out) {
  const BoundInter b = bind_inter(t, p, trainable);
  InterFullOutputs o;
  o.d = encode_sequence(t, t.constant(prepared), b);
  o.a = self_attention(t, o.d, b, p.cfg.heads, probs_out);
  o.refined = ffn_refine(t, o.a, o.d, b);
  nk::ScopeGuard g(t, "inter.regress");
  const Var last = nk::gather_rows(t, o.refined, {prepared.rows() - 1});
  o.out = nk::linear(t, last, b.w_r, b.b_r);
  return o;
}

Var inter_forward_batch(Tape& t, InterParams& p, const SequenceBatch& batch, bool trainable) {
  const std::size_t n_seq = batch.size();
  if (n_seq == 0) throw std::invalid_argument("inter_forward_batch: empty batch");
  const BoundInter b = bind_inter(t, p, trainable);
  std::vector<std::size_t> last(n_seq);
  std::vector<std::size_t> q_offsets(n_seq + 1);
  for (std::size_t s = 0; s < n_seq; ++s) {
    last[s] = batch.offsets[s + 1] - 1;
    q_offsets[s + 1] = s + 1;
  }
  const Var s_all = t.constant(batch.rows);
  Tensor2D s_last_v(n_seq, batch.rows.cols());
  for (std::size_t s = 0; s < n_seq; ++s) {
    std::copy(batch.rows.row(last[s]).begin(), batch.rows.row(last[s]).end(),
              s_last_v.row(s).begin());
  }
  const Var s_last = t.constant(std::move(s_last_v));
  const Var w_ek = nk::matmul(t, b.w_e, b.w_k);
  const Var w_ev = nk::matmul(t, b.w_e, b.w_v);
  const Var k = nk::matmul(t, s_all, w_ek);
  const Var v = nk::matmul(t, s_all, w_ev);
  const Var d_last = nk::matmul(t, s_last, b.w_e);
  const Var q = nk::matmul(t, d_last, b.w_q);
  const Var ctx = nk::segment_attention(t, q, k, v, std::move(q_offsets), batch.offsets,
                                        p.cfg.heads);
  const Var a = nk::matmul(t, ctx, b.w_o);
  const Var refined = ffn_refine(t, a, d_last, b);
  return nk::linear(t, refined, b.w_r, b.b_r);
}

Detection apply_inter_refinement(const Detection& det, std::span<const double> out) {
  Detection r = det;
  r.box.cx += out[0];
  r.box.cy += out[1];
  r.box.cz += out[2];
  r.box.yaw = wrap_angle(r.box.yaw + std::atan2(out[3], 1.0 + out[4]));
  const double dt = det.basic.size() > kFieldDt ? det.basic[kFieldDt] : 0.0;
  r.basic = make_basic_features(r.box, r.score, r.label, dt);
  return r;
}

Detection refine_object(const Tensor2D& seq, const Detection& current, InterParams& p,
                        FlopLedger* ledger) {
  Tape t(ledger);
  const InterFullOutputs o = inter_forward_full(t, p, prepare_sequence(seq, p), false);
  return apply_inter_refinement(current, t.value(o.out).row(0));
}

std::array<double, kInterOutputs> inter_target(const Box3D& det, const Box3D& gt) {
  const double d = wrap_angle(gt.yaw - det.yaw);
  return {gt.cx - det.cx, gt.cy - det.cy, gt.cz - det.cz, std::sin(d), std::cos(d) - 1.0};
}

Var inter_loss(Tape& t, Var out, Tensor2D targets) {
  return nk::smooth_l1_loss(t, out, std::move(targets));
}

double inter_loss(std::span<const double> out, std::span<const double> target) {
  return nk::smooth_l1(out, target);
}

std::vector<LossRecord> train_inter(InterParams& p, std::span<const InterSample> samples,
                                    const TrainConfig& cfg) {
  std::vector<LossRecord> log;
  if (cfg.iterations == 0) return log;
  if (samples.empty()) throw std::invalid_argument("train_inter: no training sequences");
  auto params = p.parameters();
  nk::AdamW opt(params, cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  log.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    SequenceBatch batch;
    std::vector<double> targets;
    std::vector<double> rows;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const InterSample& s = samples[rng() % samples.size()];
      rows.insert(rows.end(), s.prepared.values().begin(), s.prepared.values().end());
      batch.offsets.push_back(batch.offsets.back() + s.prepared.rows());
      targets.insert(targets.end(), s.target.begin(), s.target.end());
    }
    batch.rows = Tensor2D(batch.offsets.back(), p.cfg.basic_dim, std::move(rows));
    opt.zero_grad();
    Tape t;
    const Var out = inter_forward_batch(t, p, batch, true);
    const Var loss =
        inter_loss(t, out, Tensor2D(cfg.batch, kInterOutputs, std::move(targets)));
    t.backward(loss);
    opt.step();
    const double l = t.value(loss)(0, 0);
    log.push_back({it, l, 0.0, l, 0.0});
  }
  return log;
}

}  // namespace relrefine
