#include "relrefine/numkit/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relrefine::nk {

Var Tape::constant(Tensor2D value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor2D& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor2D(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Tensor2D value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Tensor2D value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [&](Var v) { return nodes_[v.id].requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (value(loss).rows() != 1 || value(loss).cols() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be 1x1, got " +
                                value(loss).shape_str());
  }
  grad(loss)(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

void Tape::count_macs(const std::string& suffix, std::uint64_t macs) {
  if (!ledger_) return;
  ledger_->add(suffix.empty() ? scope_ : scope_ + "." + suffix, macs);
}

// ---------------------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  Tensor2D out;
  gemm(av, false, bv, false, out);
  t.count_macs("", static_cast<std::uint64_t>(av.rows()) * av.cols() * bv.cols());
  const Var o{t.size()};
  return t.push(std::move(out), {a, b}, [a, b, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    if (tp.requires_grad(a)) gemm(g, false, tp.value(b), true, tp.grad(a), true);
    if (tp.requires_grad(b)) gemm(tp.value(a), true, g, false, tp.grad(b), true);
  });
}

Var linear(Tape& t, Var x, Var w, std::optional<Var> b) {
  const Tensor2D& xv = t.value(x);
  const Tensor2D& wv = t.value(w);
  Tensor2D out;
  gemm(xv, false, wv, false, out);
  if (b) {
    const Tensor2D& bv = t.value(*b);
    if (bv.rows() != 1 || bv.cols() != out.cols()) {
      throw std::invalid_argument("linear: bias shape " + bv.shape_str() + " vs output " +
                                  out.shape_str());
    }
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  }
  t.count_macs("", static_cast<std::uint64_t>(xv.rows()) * xv.cols() * wv.cols());
  const Var o{t.size()};
  std::vector<Var> inputs = {x, w};
  if (b) inputs.push_back(*b);
  return t.push(std::move(out), inputs, [x, w, b, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    if (tp.requires_grad(x)) gemm(g, false, tp.value(w), true, tp.grad(x), true);
    if (tp.requires_grad(w)) gemm(tp.value(x), true, g, false, tp.grad(w), true);
    if (b && tp.requires_grad(*b)) {
      Tensor2D& gb = tp.grad(*b);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw std::invalid_argument("add: shape " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor2D out = av;
  out += bv;
  const Var o{t.size()};
  return t.push(std::move(out), {a, b}, [a, b, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    if (tp.requires_grad(a)) tp.grad(a) += g;
    if (tp.requires_grad(b)) tp.grad(b) += g;
  });
}

Var scale(Tape& t, Var x, double s) {
  Tensor2D out = t.value(x);
  out *= s;
  const Var o{t.size()};
  return t.push(std::move(out), {x}, [x, s, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    Tensor2D& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

double leaky_relu(double v, double slope) { return v > 0.0 ? v : slope * v; }

Var leaky_relu(Tape& t, Var x, double slope) {
  const Tensor2D& xv = t.value(x);
  Tensor2D out = Tensor2D::uninitialized(xv.rows(), xv.cols());
  const std::size_t n = xv.size();
  {
    const double* __restrict in = xv.data();
    double* __restrict o = out.data();
    for (std::size_t i = 0; i < n; ++i) o[i] = in[i] * (in[i] > 0.0 ? 1.0 : slope);
  }
  if (t.tracking_kinks()) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) margin = std::min(margin, std::abs(xv[i]));
    t.note_kink(margin);
    for (std::size_t i = 0; i < n; ++i) t.note_branch(xv[i] > 0.0 ? 1 : 2);
  }
  const Var o{t.size()};
  return t.push(std::move(out), {x}, [x, slope, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    Tensor2D& gx = tp.grad(x);
    const double* __restrict gi = g.data();
    const double* __restrict xi = tp.value(x).data();
    double* __restrict go = gx.data();
    const std::size_t n = g.size();
    for (std::size_t i = 0; i < n; ++i) go[i] += gi[i] * (xi[i] > 0.0 ? 1.0 : slope);
  });
}

Tensor2D softmax_rows(const Tensor2D& x) {
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      z += o[c];
    }
    for (double& v : o) v /= z;
  }
  return out;
}

Var softmax_rows(Tape& t, Var x) {
  Tensor2D out = softmax_rows(t.value(x));
  const Var o{t.size()};
  return t.push(std::move(out), {x}, [x, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    const Tensor2D& p = tp.value(o);
    Tensor2D& gx = tp.grad(x);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) gx(r, c) += p(r, c) * (g(r, c) - dot);
    }
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) {
      throw std::invalid_argument("concat_cols: row mismatch " + t.value(p).shape_str() +
                                  " vs " + t.value(parts[0]).shape_str());
    }
    cols += t.value(p).cols();
  }
  Tensor2D out(rows, cols);
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor2D& pv = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + c0);
    c0 += pv.cols();
  }
  const Var o{t.size()};
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), parts, [ps, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t pc = tp.value(p).cols();
      if (tp.requires_grad(p)) {
        Tensor2D& gp = tp.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, off + c);
      }
      off += pc;
    }
  });
}

Var gather_rows(Tape& t, Var x, std::vector<std::size_t> rows) {
  const Tensor2D& xv = t.value(x);
  Tensor2D out(rows.size(), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy(xv.row(rows[i]).begin(), xv.row(rows[i]).end(), out.row(i).begin());
  }
  const Var o{t.size()};
  return t.push(std::move(out), {x}, [x, rows = std::move(rows), o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    Tensor2D& gx = tp.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto dst = gx.row(rows[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var pair_features(Tape& t, Var x, std::vector<std::size_t> centers,
                  std::vector<std::size_t> others) {
  if (centers.size() != others.size()) {
    throw std::invalid_argument("pair_features: index list length mismatch");
  }
  const Tensor2D& xv = t.value(x);
  const std::size_t c = xv.cols();
  Tensor2D out(centers.size(), 2 * c);
  for (std::size_t p = 0; p < centers.size(); ++p) {
    auto xi = xv.row(centers[p]);
    auto xj = xv.row(others[p]);
    auto o = out.row(p);
    for (std::size_t k = 0; k < c; ++k) {
      o[k] = xj[k] - xi[k];
      o[c + k] = xi[k];
    }
  }
  const Var o{t.size()};
  return t.push(std::move(out), {x},
                [x, centers = std::move(centers), others = std::move(others), c, o](Tape& tp) {
                  const Tensor2D& g = tp.grad(o);
                  Tensor2D& gx = tp.grad(x);
                  for (std::size_t p = 0; p < centers.size(); ++p) {
                    auto gp = g.row(p);
                    auto gi = gx.row(centers[p]);
                    for (std::size_t k = 0; k < c; ++k) gi[k] += gp[c + k] - gp[k];
                    auto gj = gx.row(others[p]);
                    for (std::size_t k = 0; k < c; ++k) gj[k] += gp[k];
                  }
                });
}

Var pair_linear(Tape& t, Var x, Var w, Var b, std::vector<std::size_t> centers,
                std::vector<std::size_t> others) {
  if (centers.size() != others.size()) {
    throw std::invalid_argument("pair_linear: index list length mismatch");
  }
  const Tensor2D& xv = t.value(x);
  const Tensor2D& wv = t.value(w);
  const Tensor2D& bv = t.value(b);
  const std::size_t c = xv.cols();
  const std::size_t h = wv.cols();
  if (wv.rows() != 2 * c || bv.rows() != 1 || bv.cols() != h) {
    throw std::invalid_argument("pair_linear: weight " + wv.shape_str() + " / bias " +
                                bv.shape_str() + " do not fit input " + xv.shape_str());
  }
  // [xj - xi, xi] W = xj Wa + xi (Wb - Wa)
  Tensor2D wa(c, h), wd(c, h);
  for (std::size_t r = 0; r < c; ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      wa(r, k) = wv(r, k);
      wd(r, k) = wv(c + r, k) - wv(r, k);
    }
  }
  Tensor2D pj, pi;
  gemm(xv, false, wa, false, pj);
  gemm(xv, false, wd, false, pi);
  Tensor2D out = Tensor2D::uninitialized(centers.size(), h);
  for (std::size_t p = 0; p < centers.size(); ++p) {
    auto o = out.row(p);
    auto a = pj.row(others[p]);
    auto d = pi.row(centers[p]);
    for (std::size_t k = 0; k < h; ++k) o[k] = a[k] + d[k] + bv(0, k);
  }
  t.count_macs("", static_cast<std::uint64_t>(2) * xv.rows() * c * h);
  const Var o{t.size()};
  return t.push(std::move(out), {x, w, b},
                [x, w, b, o, c, h, wa = std::move(wa), wd = std::move(wd),
                 centers = std::move(centers), others = std::move(others)](Tape& tp) {
                  const Tensor2D& g = tp.grad(o);
                  const std::size_t n = tp.value(x).rows();
                  Tensor2D gj(n, h), gi(n, h);
                  for (std::size_t p = 0; p < centers.size(); ++p) {
                    auto gp = g.row(p);
                    auto a = gj.row(others[p]);
                    auto d = gi.row(centers[p]);
                    for (std::size_t k = 0; k < h; ++k) {
                      a[k] += gp[k];
                      d[k] += gp[k];
                    }
                  }
                  if (tp.requires_grad(x)) {
                    gemm(gj, false, wa, true, tp.grad(x), true);
                    gemm(gi, false, wd, true, tp.grad(x), true);
                  }
                  if (tp.requires_grad(w)) {
                    Tensor2D ga, gd;
                    gemm(tp.value(x), true, gj, false, ga);
                    gemm(tp.value(x), true, gi, false, gd);
                    Tensor2D& gw = tp.grad(w);
                    for (std::size_t r = 0; r < c; ++r) {
                      for (std::size_t k = 0; k < h; ++k) {
                        gw(r, k) += ga(r, k) - gd(r, k);
                        gw(c + r, k) += gd(r, k);
                      }
                    }
                  }
                  if (tp.requires_grad(b)) {
                    Tensor2D& gb = tp.grad(b);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t k = 0; k < h; ++k) gb(0, k) += g(r, k);
                  }
                });
}

Var segment_max(Tape& t, Var x, std::vector<std::size_t> offsets) {
  const Tensor2D& xv = t.value(x);
  if (offsets.empty() || offsets.back() != xv.rows()) {
    throw std::invalid_argument("segment_max: offsets do not cover " + xv.shape_str());
  }
  const std::size_t segs = offsets.size() - 1;
  const std::size_t c = xv.cols();
  Tensor2D out = Tensor2D::uninitialized(segs, c);
  std::vector<std::size_t> arg(segs * c);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw std::invalid_argument("segment_max: empty segment");
    double* __restrict best = out.row(s).data();
    std::size_t* __restrict at = arg.data() + s * c;
    std::copy_n(xv.row(offsets[s]).data(), c, best);
    std::fill_n(at, c, offsets[s]);
    for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r) {
      const double* __restrict v = xv.row(r).data();
      for (std::size_t k = 0; k < c; ++k) {
        if (v[k] > best[k]) {
          best[k] = v[k];
          at[k] = r;
        }
      }
    }
  }
  if (t.tracking_kinks()) {
    // Gap between the winner and the best other row of each segment.
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < segs; ++s) {
      for (std::size_t k = 0; k < c; ++k) {
        double second = -std::numeric_limits<double>::infinity();
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
          if (r != arg[s * c + k]) second = std::max(second, xv(r, k));
        margin = std::min(margin, out(s, k) - second);
      }
    }
    t.note_kink(margin);
    for (std::size_t a : arg) t.note_branch(a + 3);
  }
  const Var o{t.size()};
  return t.push(std::move(out), {x}, [x, arg = std::move(arg), c, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    Tensor2D& gx = tp.grad(x);
    for (std::size_t s = 0; s < g.rows(); ++s)
      for (std::size_t k = 0; k < c; ++k) gx(arg[s * c + k], k) += g(s, k);
  });
}

Var segment_attention(Tape& t, Var q, Var k, Var v, std::vector<std::size_t> q_offsets,
                      std::vector<std::size_t> kv_offsets, std::size_t heads,
                      Tensor2D* probs_out) {
  const Tensor2D& qv = t.value(q);
  const Tensor2D& kv = t.value(k);
  const Tensor2D& vv = t.value(v);
  const std::size_t c = qv.cols();
  if (kv.cols() != c || vv.cols() != c || kv.rows() != vv.rows()) {
    throw std::invalid_argument("segment_attention: q/k/v shapes " + qv.shape_str() + " " +
                                kv.shape_str() + " " + vv.shape_str());
  }
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("segment_attention: channels not divisible by heads");
  }
  if (q_offsets.size() != kv_offsets.size() || q_offsets.empty() ||
      q_offsets.back() != qv.rows() || kv_offsets.back() != kv.rows()) {
    throw std::invalid_argument("segment_attention: inconsistent segment offsets");
  }
  const std::size_t segs = q_offsets.size() - 1;
  const std::size_t dh = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Probabilities stored per (query row, head) at prob_base[row] + h * len.
  std::vector<std::size_t> prob_base(qv.rows() + 1, 0);
  std::size_t max_len = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t len = kv_offsets[s + 1] - kv_offsets[s];
    if (len == 0) throw std::invalid_argument("segment_attention: empty key segment");
    max_len = std::max(max_len, len);
    for (std::size_t i = q_offsets[s]; i < q_offsets[s + 1]; ++i)
      prob_base[i + 1] = prob_base[i] + heads * len;
  }
  std::vector<double> probs(prob_base.back());
  Tensor2D out(qv.rows(), c);
  std::uint64_t score_macs = 0;
  std::vector<double> srow(max_len);
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t k0 = kv_offsets[s];
    const std::size_t len = kv_offsets[s + 1] - k0;
    for (std::size_t i = q_offsets[s]; i < q_offsets[s + 1]; ++i) {
      score_macs += static_cast<std::uint64_t>(len) * c;
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < len; ++r) {
          double acc = 0.0;
          for (std::size_t d = 0; d < dh; ++d) acc += qv(i, c0 + d) * kv(k0 + r, c0 + d);
          srow[r] = acc * sc;
          mx = std::max(mx, srow[r]);
        }
        double z = 0.0;
        for (std::size_t r = 0; r < len; ++r) {
          srow[r] = std::exp(srow[r] - mx);
          z += srow[r];
        }
        double* p = probs.data() + prob_base[i] + h * len;
        for (std::size_t r = 0; r < len; ++r) p[r] = srow[r] / z;
        for (std::size_t r = 0; r < len; ++r) {
          const double pr = p[r];
          for (std::size_t d = 0; d < dh; ++d) out(i, c0 + d) += pr * vv(k0 + r, c0 + d);
        }
      }
    }
  }
  t.count_macs("scores", score_macs);
  t.count_macs("context", score_macs);

  if (probs_out) {
    *probs_out = Tensor2D(qv.rows() * heads, max_len);
    for (std::size_t s = 0; s < segs; ++s) {
      const std::size_t len = kv_offsets[s + 1] - kv_offsets[s];
      for (std::size_t i = q_offsets[s]; i < q_offsets[s + 1]; ++i)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t r = 0; r < len; ++r)
            (*probs_out)(i * heads + h, r) = probs[prob_base[i] + h * len + r];
    }
  }

  const Var o{t.size()};
  return t.push(
      std::move(out), {q, k, v},
      [q, k, v, o, q_offsets = std::move(q_offsets), kv_offsets = std::move(kv_offsets),
       probs = std::move(probs), prob_base = std::move(prob_base), heads, dh, sc,
       max_len](Tape& tp) {
        const Tensor2D& g = tp.grad(o);
        const Tensor2D& qv2 = tp.value(q);
        const Tensor2D& kv2 = tp.value(k);
        const Tensor2D& vv2 = tp.value(v);
        const bool gq_on = tp.requires_grad(q);
        const bool gk_on = tp.requires_grad(k);
        const bool gv_on = tp.requires_grad(v);
        Tensor2D* gq = gq_on ? &tp.grad(q) : nullptr;
        Tensor2D* gk = gk_on ? &tp.grad(k) : nullptr;
        Tensor2D* gv = gv_on ? &tp.grad(v) : nullptr;
        std::vector<double> dp(max_len);
        for (std::size_t s = 0; s + 1 < q_offsets.size(); ++s) {
          const std::size_t k0 = kv_offsets[s];
          const std::size_t len = kv_offsets[s + 1] - k0;
          for (std::size_t i = q_offsets[s]; i < q_offsets[s + 1]; ++i) {
            for (std::size_t h = 0; h < heads; ++h) {
              const std::size_t c0 = h * dh;
              const double* p = probs.data() + prob_base[i] + h * len;
              double dot = 0.0;
              for (std::size_t r = 0; r < len; ++r) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d) acc += g(i, c0 + d) * vv2(k0 + r, c0 + d);
                dp[r] = acc;
                dot += p[r] * acc;
                if (gv) {
                  for (std::size_t d = 0; d < dh; ++d) (*gv)(k0 + r, c0 + d) += p[r] * g(i, c0 + d);
                }
              }
              for (std::size_t r = 0; r < len; ++r) {
                const double ds = p[r] * (dp[r] - dot) * sc;
                if (gq) {
                  for (std::size_t d = 0; d < dh; ++d) (*gq)(i, c0 + d) += ds * kv2(k0 + r, c0 + d);
                }
                if (gk) {
                  for (std::size_t d = 0; d < dh; ++d) (*gk)(k0 + r, c0 + d) += ds * qv2(i, c0 + d);
                }
              }
            }
          }
        }
      });
}

Var sum_all(Tape& t, Var x) {
  const Tensor2D& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const Var o{t.size()};
  return t.push(Tensor2D(1, 1, s), {x}, [x, o](Tape& tp) {
    const double g = tp.grad(o)(0, 0);
    for (double& v : tp.grad(x).values()) v += g;
  });
}

Var weighted_sum(Tape& t, std::span<const std::pair<Var, double>> terms) {
  if (terms.empty()) throw std::invalid_argument("weighted_sum: no terms");
  Tensor2D out(t.value(terms[0].first).rows(), t.value(terms[0].first).cols());
  std::vector<Var> inputs;
  for (const auto& [var, w] : terms) {
    const Tensor2D& tv = t.value(var);
    if (!tv.same_shape(out)) throw std::invalid_argument("weighted_sum: shape mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * tv[i];
    inputs.push_back(var);
  }
  const Var o{t.size()};
  std::vector<std::pair<Var, double>> ts(terms.begin(), terms.end());
  return t.push(std::move(out), inputs, [ts, o](Tape& tp) {
    const Tensor2D& g = tp.grad(o);
    for (const auto& [var, w] : ts) {
      if (!tp.requires_grad(var)) continue;
      Tensor2D& gv = tp.grad(var);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += w * g[i];
    }
  });
}

double smooth_l1(std::span<const double> pred, std::span<const double> target, double beta) {
  if (pred.size() != target.size()) {
    throw std::invalid_argument("smooth_l1: length " + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()));
  }
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred[i] - target[i]);
    acc += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
  }
  return acc / static_cast<double>(pred.size());
}

Var smooth_l1_loss(Tape& t, Var pred, Tensor2D target, double beta) {
  const Tensor2D& pv = t.value(pred);
  if (!pv.same_shape(target)) {
    throw std::invalid_argument("smooth_l1_loss: shape " + pv.shape_str() + " vs " +
                                target.shape_str());
  }
  const double val = smooth_l1(pv.values(), target.values(), beta);
  if (t.tracking_kinks()) {
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pv.size(); ++i)
      margin = std::min(margin, std::abs(std::abs(pv[i] - target[i]) - beta));
    t.note_kink(margin);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = pv[i] - target[i];
      t.note_branch(std::abs(d) < beta ? 1 : (d > 0 ? 2 : 3));
    }
  }
  const Var o{t.size()};
  return t.push(Tensor2D(1, 1, val), {pred}, [pred, target = std::move(target), beta, o](Tape& tp) {
    const double g = tp.grad(o)(0, 0);
    const Tensor2D& pv2 = tp.value(pred);
    Tensor2D& gp = tp.grad(pred);
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, pv2.size()));
    for (std::size_t i = 0; i < pv2.size(); ++i) {
      const double d = pv2[i] - target[i];
      const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      gp[i] += g * inv * dd;
    }
  });
}

namespace {

struct FocalTerm {
  double loss;
  double coeff;  // d loss / d z_k = coeff * (delta_tk - p_k)
};

FocalTerm focal_term(std::span<const double> z, int target, double alpha, double gamma,
                     std::span<double> probs) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    probs[k] = std::exp(z[k] - mx);
    sum += probs[k];
  }
  for (double& p : probs) p /= sum;
  const double log_pt = z[target] - mx - std::log(sum);
  const double pt = probs[target];
  const double one_m = 1.0 - pt;
  const double mod = gamma == 0.0 ? 1.0 : std::pow(one_m, gamma);
  double dmod = 0.0;  // gamma * (1-p)^(gamma-1)
  if (gamma != 0.0 && one_m > 0.0) dmod = gamma * std::pow(one_m, gamma - 1.0);
  const double loss = -alpha * mod * log_pt;
  const double coeff = -alpha * (mod - dmod * pt * log_pt);
  return {loss, coeff};
}

}  // namespace

double focal_loss(std::span<const double> logits, int target_class, double alpha, double gamma) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= logits.size()) {
    throw std::out_of_range("focal_loss: target class " + std::to_string(target_class) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  }
  std::vector<double> probs(logits.size());
  return focal_term(logits, target_class, alpha, gamma, probs).loss;
}

Var focal_loss_rows(Tape& t, Var logits, std::vector<int> targets, double alpha, double gamma) {
  const Tensor2D& zv = t.value(logits);
  if (targets.size() != zv.rows()) throw std::invalid_argument("focal_loss_rows: target count");
  Tensor2D dz(zv.rows(), zv.cols());
  double total = 0.0;
  std::vector<double> probs(zv.cols());
  const double inv = zv.rows() ? 1.0 / static_cast<double>(zv.rows()) : 0.0;
  for (std::size_t r = 0; r < zv.rows(); ++r) {
    const int tc = targets[r];
    if (tc < 0 || static_cast<std::size_t>(tc) >= zv.cols()) {
      throw std::out_of_range("focal_loss_rows: invalid class index " + std::to_string(tc));
    }
    const FocalTerm ft = focal_term(zv.row(r), tc, alpha, gamma, probs);
    total += ft.loss;
    for (std::size_t k = 0; k < zv.cols(); ++k) {
      const double delta = static_cast<int>(k) == tc ? 1.0 : 0.0;
      dz(r, k) = inv * ft.coeff * (delta - probs[k]);
    }
  }
  const Var o{t.size()};
  return t.push(Tensor2D(1, 1, total * inv), {logits}, [logits, dz = std::move(dz), o](Tape& tp) {
    const double g = tp.grad(o)(0, 0);
    Tensor2D& gz = tp.grad(logits);
    for (std::size_t i = 0; i < dz.size(); ++i) gz[i] += g * dz[i];
  });
}

}  // namespace relrefine::nk
