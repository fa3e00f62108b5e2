#include "relrefine/numkit/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace relrefine::nk {

AdamW::AdamW(std::span<Parameter* const> params, AdamWConfig cfg)
    : params_(params.begin(), params.end()), cfg_(cfg) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.grad.same_shape(p.value)) {
      throw std::invalid_argument("AdamW: gradient shape " + p.grad.shape_str() +
                                  " for parameter " + p.name + " " + p.value.shape_str());
    }
    const std::size_t n = p.value.size();
    const double b1 = cfg_.beta1, b2 = cfg_.beta2, lr = cfg_.lr, eps = cfg_.eps;
    const double decay = 1.0 - lr * cfg_.weight_decay;
    const double* __restrict g = p.grad.data();
    double* __restrict m = m_[i].data();
    double* __restrict v = v_[i].data();
    double* __restrict w = p.value.data();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] = w[j] * decay - lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace relrefine::nk
