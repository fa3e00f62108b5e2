#include "relrefine/numkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace relrefine::nk {

GradCheckResult grad_check(const std::function<Var(Tape&)>& build,
                           std::span<Parameter* const> params, double h, double abs_floor) {
  for (Parameter* p : params) p->zero_grad();
  GradCheckResult res;
  std::uint64_t base_sig = 0;
  {
    Tape tape;
    tape.track_kinks(true);
    const Var loss = build(tape);
    tape.backward(loss);
    res.kink_margin = tape.kink_margin();
    base_sig = tape.branch_signature();
  }
  bool crossed = false;
  auto eval = [&]() {
    Tape tape;
    tape.track_kinks(true);
    const Var loss = build(tape);
    if (tape.branch_signature() != base_sig) crossed = true;
    return tape.value(loss)(0, 0);
  };
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      crossed = false;
      double f[4];
      const double steps[4] = {2.0, 1.0, -1.0, -2.0};
      for (int k = 0; k < 4; ++k) {
        p->value[i] = orig + steps[k] * h;
        f[k] = eval();
      }
      p->value[i] = orig;
      ++res.entries_checked;
      if (crossed) {
        ++res.branch_crossings;
        continue;
      }
      const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
    }
  }
  return res;
}

}  // namespace relrefine::nk
