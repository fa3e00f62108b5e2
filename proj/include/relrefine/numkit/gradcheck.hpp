#pragma once

#include <functional>
#include <span>

#include "relrefine/numkit/tape.hpp"

namespace relrefine::nk {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  /// Smallest distance of any recorded activation from a kink at the base point.
  double kink_margin = 0.0;
  /// Entries whose difference stencil reached a different smooth piece (a
  /// flipped sign, argmax or loss region). Zero means the point is
  /// non-degenerate for this check.
  std::size_t branch_crossings = 0;
};

/// Compares tape gradients with five-point central differences for every
/// entry of every parameter. `build` records a scalar loss on the tape it is
/// handed. Relative error is |analytic - numeric| / max(|analytic|, |numeric|,
/// abs_floor). Entries whose stencil crosses a kink are counted in
/// branch_crossings and left out of max_rel_error.
GradCheckResult grad_check(const std::function<Var(Tape&)>& build,
                           std::span<Parameter* const> params, double h = 1e-4,
                           double abs_floor = 1e-6);

}  // namespace relrefine::nk
