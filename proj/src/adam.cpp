#include "gar/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gar {

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter " +
                                  name);
    }
    if (it->second.shape() != g.shape()) {
      throw std::invalid_argument("adam_step: shape mismatch for " + name +
                                  ": " + shape_string(it->second.shape()) +
                                  " vs " + shape_string(g.shape()));
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    Tensor& m = state.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = state.v.try_emplace(name, p.shape()).first->second;
    auto g_it = grads.find(name);
    const Tensor* g = g_it == grads.end() ? nullptr : &g_it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace gar
