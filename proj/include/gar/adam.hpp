#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "gar/tensor.hpp"

namespace gar {

using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  ParamMap m;  // first moments, keyed like the parameters
  ParamMap v;  // second moments
};

// One bias-corrected Adam update in place. Every gradient must name an
// existing parameter of the same shape; parameters without a gradient are
// treated as having a zero gradient.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state);

}  // namespace gar
