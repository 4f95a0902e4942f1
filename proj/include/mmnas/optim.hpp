#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmnas/param_store.hpp"

namespace mmnas {

/// Plain SGD: p <- p - lr * g. Clears the gradient of each stepped
/// parameter. A selected parameter without a populated gradient is an error.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}

  void step(ParamStore& store, std::span<const std::string> names);
  void step_all(ParamStore& store);

  double lr() const { return lr_; }

 private:
  double lr_;
};

/// Adam with bias correction. Per-parameter moment state is keyed by name
/// and created on first step.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& store, std::span<const std::string> names);
  void step_all(ParamStore& store);

  double lr() const { return lr_; }

 private:
  struct Moments {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };

  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, Moments> state_;
};

}  // namespace mmnas
