#include "ccisac/nn/optim.hpp"

#include <cmath>

#include "ccisac/errors.hpp"

namespace ccisac::nn {

void adam_step(ParamStore& ps, const AdamConfig& cfg, int step) {
  if (step < 1) throw PreconditionViolation("adam step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, step);
  const double c2 = 1.0 - std::pow(cfg.beta2, step);
  for (Tensor* t : ps.tensors()) {
    if (!t->trainable) continue;
    t->adam_m = cfg.beta1 * t->adam_m + (1.0 - cfg.beta1) * t->grad;
    t->adam_v = cfg.beta2 * t->adam_v + (1.0 - cfg.beta2) * t->grad.cwiseAbs2();
    t->value.array() -=
        cfg.lr * (t->adam_m.array() / c1) / ((t->adam_v.array() / c2).sqrt() + cfg.eps);
    if (!t->value.allFinite()) throw DivergenceDetected("non-finite parameter in " + t->name);
  }
}

}  // namespace ccisac::nn
