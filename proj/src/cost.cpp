#include "relrefine/cost.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "relrefine/inter.hpp"
#include "relrefine/intra.hpp"

namespace relrefine {

FlopLedger intra_ledger(std::uint64_t n, std::uint64_t c_x, std::uint64_t m, double avg_degree,
                        const IntraCostDims& dims) {
  FlopLedger l;
  if (n == 0) return l;
  const auto pairs = static_cast<std::uint64_t>(std::llround(static_cast<double>(n) * (avg_degree + 1.0)));
  l.add("intra.encode", n * (dims.basic_dim + dims.bev_dim) * c_x);
  l.add("intra.edge", m * pairs * (2 * c_x * c_x + c_x * c_x));
  l.add("intra.head", n * m * c_x * dims.head_outputs);
  return l;
}

FlopLedger inter_ledger(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc,
                        std::uint64_t /*heads*/, std::uint64_t basic_dim) {
  FlopLedger l;
  if (n == 0 || seq_len == 0) return l;
  const std::uint64_t N = seq_len, C = c_enc;
  l.add("inter.encode", n * N * basic_dim * C);
  l.add("inter.qkv", n * 3 * N * C * C);
  l.add("inter.attn.scores", n * N * N * C);
  l.add("inter.attn.context", n * N * N * C);
  l.add("inter.out_proj", n * N * C * C);
  l.add("inter.ffn", n * 4 * N * C * C);
  l.add("inter.regress", n * C * kInterOutputs);
  return l;
}

FlopLedger dense_gnn_ledger(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc) {
  FlopLedger l;
  if (seq_len < 2) return l;
  l.add("dense.edge", n * seq_len * (seq_len - 1) * c_enc * c_enc);
  return l;
}

double count_intra(std::uint64_t n, std::uint64_t c_x, std::uint64_t m, double avg_degree) {
  return intra_ledger(n, c_x, m, avg_degree).total_flops();
}

double count_inter(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc,
                   std::uint64_t heads) {
  return inter_ledger(n, seq_len, c_enc, heads).total_flops();
}

double count_dense_gnn(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc) {
  return dense_gnn_ledger(n, seq_len, c_enc).total_flops();
}

bool CostReport::intra_exact() const {
  return intra_closed.counters() == intra_measured.counters();
}

bool CostReport::inter_exact() const {
  return inter_closed.counters() == inter_measured.counters();
}

double CostReport::dense_to_inter_ratio() const {
  const double inter = inter_closed.total_flops();
  return inter > 0.0 ? dense_closed.total_flops() / inter : 0.0;
}

CostReport measure_costs(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_x,
                         std::uint64_t m, std::uint64_t c_enc, std::uint64_t heads,
                         double target_degree, std::uint64_t seed) {
  CostReport r;
  r.n = n;
  r.seq_len = seq_len;
  r.c_x = c_x;
  r.m = m;
  r.c_enc = c_enc;
  r.heads = heads;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);

  IntraConfig icfg;
  icfg.hidden = c_x;
  icfg.iterations = m;
  IntraParams ip = IntraParams::init(icfg, seed + 1);
  for (auto* p : {&ip.w_cls, &ip.w_box, &ip.w_dir}) {
    for (double& v : p->value.values()) v = 0.01 * g(rng);
  }
  // Uniform scatter at the density that gives the requested expected degree.
  const double side =
      target_degree > 0.0
          ? std::sqrt(static_cast<double>(n) * kPi * icfg.radius * icfg.radius / target_degree)
          : 1e3 * std::max<std::uint64_t>(1, n);
  std::uniform_real_distribution<double> u(0.0, side);
  std::vector<Detection> dets(n);
  for (auto& d : dets) {
    d.box.cx = u(rng);
    d.box.cy = u(rng);
    d.box.yaw = g(rng);
    d.score = 0.5;
    d.basic = make_basic_features(d.box, d.score, d.label);
    d.bev.resize(kBevDim);
    for (double& v : d.bev) v = g(rng);
  }
  std::vector<Point2> centers;
  for (const auto& d : dets) centers.push_back({d.box.cx, d.box.cy});
  const SparseGraph graph = build_radius_graph(centers, icfg.radius);
  r.avg_degree = graph.average_degree();
  r.intra_closed = intra_ledger(n, c_x, m, r.avg_degree);
  if (n > 0) run_intra(dets, ip, &r.intra_measured);

  InterConfig ecfg;
  ecfg.channels = c_enc;
  ecfg.heads = heads;
  ecfg.max_sequence = std::max<std::uint64_t>(seq_len, 1);
  InterParams ep = InterParams::init(ecfg, seed + 2);
  r.inter_closed = inter_ledger(n, seq_len, c_enc, heads);
  r.dense_closed = dense_gnn_ledger(n, seq_len, c_enc);
  if (seq_len > 0) {
    for (std::uint64_t i = 0; i < n; ++i) {
      nk::Tensor2D seq(seq_len, kBasicDim);
      for (double& v : seq.values()) v = g(rng);
      Detection cur;
      refine_object(seq, cur, ep, &r.inter_measured);
    }
  }
  return r;
}

std::string cost_report_text(const CostReport& r) {
  std::ostringstream os;
  os << "# operation counts; 1 MAC = 2 FLOPs\n";
  os << "n " << r.n << " N " << r.seq_len << " C_x " << r.c_x << " m " << r.m << " C_enc "
     << r.c_enc << " heads " << r.heads << " measured_avg_degree " << r.avg_degree << "\n";
  auto block = [&](const char* title, const FlopLedger& closed, const FlopLedger* measured) {
    os << "[" << title << "]\n";
    for (const auto& [k, v] : closed.counters()) {
      os << k << " closed_macs " << v;
      if (measured) os << " measured_macs " << measured->macs(k);
      os << "\n";
    }
    os << "total_flops " << closed.total_flops();
    if (measured) os << " measured_flops " << measured->total_flops();
    os << "\n";
  };
  block("intra", r.intra_closed, &r.intra_measured);
  block("inter", r.inter_closed, &r.inter_measured);
  block("dense_gnn", r.dense_closed, nullptr);
  os << "intra_exact " << (r.intra_exact() ? "yes" : "no") << "\n";
  os << "inter_exact " << (r.inter_exact() ? "yes" : "no") << "\n";
  os << "dense_over_inter " << r.dense_to_inter_ratio() << "\n";
  return os.str();
}

}  // namespace relrefine
