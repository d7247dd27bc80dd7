#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "panoswin/tensor.hpp"

namespace panoswin {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are keyed by parameter name;
/// frozen parameters and parameters without a gradient are skipped.
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  void step(std::span<Param> params);
  void zero_grad(std::span<Param> params) const;

  const AdamHyper& hyper() const { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  long steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamHyper hyper_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace panoswin
