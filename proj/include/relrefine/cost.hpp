#pragma once

#include <cstdint>
#include <string>

#include "relrefine/flop_ledger.hpp"

namespace relrefine {

struct IntraCostDims {
  std::uint64_t basic_dim = 13;
  std::uint64_t bev_dim = 32;
  std::uint64_t head_outputs = 4 + 6 + 2;
};

/// MACs by sub-computation, named like the instrumented tape scopes.
/// Directed pairs per iteration are llround(n * (avg_degree + 1)), self pairs included.
FlopLedger intra_ledger(std::uint64_t n, std::uint64_t c_x, std::uint64_t m, double avg_degree,
                        const IntraCostDims& dims = {});
FlopLedger inter_ledger(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc,
                        std::uint64_t heads, std::uint64_t basic_dim = 13);
/// One message-passing pass over a dense graph of N*n nodes restricted to the
/// N(N-1) directed pairs within each object, one C_enc x C_enc transform each.
FlopLedger dense_gnn_ledger(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc);

// FLOPs (2 per MAC).
double count_intra(std::uint64_t n, std::uint64_t c_x, std::uint64_t m, double avg_degree);
double count_inter(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc, std::uint64_t heads);
double count_dense_gnn(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_enc);

struct CostReport {
  FlopLedger intra_closed, inter_closed, dense_closed;
  FlopLedger intra_measured, inter_measured;
  std::uint64_t n = 0, seq_len = 0, c_x = 0, m = 0, c_enc = 0, heads = 0;
  double avg_degree = 0.0;

  bool intra_exact() const;
  bool inter_exact() const;
  double dense_to_inter_ratio() const;
};

/// Runs both modules on random inputs with the tape ledger attached and pairs
/// the measurements with the closed forms. Measured intra uses the realised
/// graph degree of the random frame.
CostReport measure_costs(std::uint64_t n, std::uint64_t seq_len, std::uint64_t c_x,
                         std::uint64_t m, std::uint64_t c_enc, std::uint64_t heads,
                         double target_degree, std::uint64_t seed);

std::string cost_report_text(const CostReport& r);

}  // namespace relrefine
