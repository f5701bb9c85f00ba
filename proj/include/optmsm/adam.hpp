// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "optmsm/errors.hpp"
#include "optmsm/params.hpp"

namespace optmsm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2_weight = 0.0;  // added to the gradient as l2_weight * theta
};

/// One bias-corrected Adam update over every parameter in the store.
/// `step` is 1-based. Throws on non-finite gradients so a diverging run
/// stops with the offending tensor named.
inline void adam_step(ParameterStore& store, const AdamConfig& cfg, long step) {
  if (step < 1) throw ConfigError("adam_step: step must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (const std::string& name : store.names()) {
    ParameterStore::Slot& s = store.slot(name);
    for (int i = 0; i < s.value.numel(); ++i) {
      const double g = s.grad.v[i] + cfg.l2_weight * s.value.v[i];
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient in " + name + " at entry " +
                           std::to_string(i));
      s.adam_m.v[i] = cfg.beta1 * s.adam_m.v[i] + (1.0 - cfg.beta1) * g;
      s.adam_v.v[i] = cfg.beta2 * s.adam_v.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = s.adam_m.v[i] / bc1;
      const double vhat = s.adam_v.v[i] / bc2;
      s.value.v[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace optmsm
