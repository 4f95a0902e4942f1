#include "mmnas/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mmnas {

namespace {

std::span<const double> required_grad(ParamStore& store, const std::string& name) {
  Tensor& t = store.get(name);
  if (!t.has_grad()) {
    throw std::runtime_error("optimizer: missing gradient for parameter '" + name + "'");
  }
  return t.grad();
}

}  // namespace

void SgdOptimizer::step(ParamStore& store, std::span<const std::string> names) {
  for (const std::string& name : names) {
    auto g = required_grad(store, name);
    Tensor& t = store.get(name);
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
    t.zero_grad();
  }
}

void SgdOptimizer::step_all(ParamStore& store) {
  const auto names = store.names();
  step(store, names);
}

void AdamOptimizer::step(ParamStore& store, std::span<const std::string> names) {
  for (const std::string& name : names) {
    auto g = required_grad(store, name);
    Tensor& t = store.get(name);
    auto v = t.values();
    Moments& mom = state_[name];
    if (mom.m.empty()) {
      mom.m.assign(v.size(), 0.0);
      mom.v.assign(v.size(), 0.0);
    } else if (mom.m.size() != v.size()) {
      throw std::runtime_error("optimizer: stale Adam state for parameter '" + name + "'");
    }
    mom.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(mom.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(mom.t));
    for (std::size_t i = 0; i < v.size(); ++i) {
      mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
      mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    t.zero_grad();
  }
}

void AdamOptimizer::step_all(ParamStore& store) {
  const auto names = store.names();
  step(store, names);
}

}  // namespace mmnas
