#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mico/errors.hpp"

namespace mico {

// Adam with decoupled weight decay. Defaults follow the usual library
// conventions (betas 0.9/0.999, eps 1e-8, weight decay 0.01).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  void update(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) throw InputError("AdamW: parameter/gradient size mismatch");
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    if (m.size() != params.size()) throw InputError("AdamW: optimizer state does not match the parameters");
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      params[i] *= decay;
      params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

}  // namespace mico
