#pragma once

#include <functional>
#include <vector>

#include "drrnet/finite_difference.hpp"
#include "drrnet/network.hpp"
#include "oracles/oracles.hpp"

namespace oracle {

// Largest infinity-norm relative error between analytic gradients and
// central differences of `loss`, over every parameter tensor and the input.
// `loss` reads the parameters through `params` at call time.
inline double worst_param_fd_error(const std::function<double()>& loss,
                                   std::vector<drr::Tensor64*> params,
                                   const std::vector<drr::Tensor64>& analytic, double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    drr::Tensor64& p = *params[k];
    const drr::Tensor64 saved = p;
    const auto fd = drr::finite_difference_grad(
        [&](const drr::Tensor64& probe) {
          p = probe;
          return loss();
        },
        saved, eps);
    p = saved;
    worst = std::max(worst, rel_error(analytic[k].values(), fd.values()));
  }
  return worst;
}

// sum of logits; its gradient with respect to the logits is all ones.
inline double logit_sum(const drr::Tensor64& logits) {
  double s = 0;
  for (double v : logits.values()) s += v;
  return s;
}

}  // namespace oracle
