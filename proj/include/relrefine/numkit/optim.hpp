#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "relrefine/numkit/tape.hpp"

namespace relrefine::nk {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam with bias correction.
class AdamW {
 public:
  AdamW(std::span<Parameter* const> params, AdamWConfig cfg = {});

  /// Applies one update from each parameter's `grad`. Gradients are left as is.
  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  AdamWConfig& config() { return cfg_; }
  const Tensor2D& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor2D& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
};

}  // namespace relrefine::nk
