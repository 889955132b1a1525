#pragma once

#include "ccisac/nn/tensor.hpp"

namespace ccisac::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every trainable tensor; `step` is the 1-based count
// after this update.
void adam_step(ParamStore& ps, const AdamConfig& cfg, int step);

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& ps) { adam_step(ps, cfg_, ++t_); }
  int steps() const { return t_; }
  AdamConfig& config() { return cfg_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
};

}  // namespace ccisac::nn
