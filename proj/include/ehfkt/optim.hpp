#pragma once

#include <vector>

#include "ehfkt/tape.hpp"

namespace ehfkt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments. Aborts with a NumericError naming
/// the offending Param when a gradient goes non-finite.
class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig cfg = {});

  void step();
  void zero_grad();
  int t() const { return t_; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

/// Plain SGD alternative (flag-selectable at the CLI).
class Sgd {
 public:
  Sgd(std::vector<Param*> params, double lr);

  void step();
  void zero_grad();

 private:
  std::vector<Param*> params_;
  double lr_;
};

double global_grad_norm(const std::vector<Param*>& params);

/// Rescales all gradients so the global norm is at most max_norm.
void clip_global_norm(const std::vector<Param*>& params, double max_norm);

}  // namespace ehfkt
