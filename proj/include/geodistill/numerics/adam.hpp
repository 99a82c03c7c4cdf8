#pragma once

#include <cstdint>
#include <vector>

#include "geodistill/numerics/param_store.hpp"

namespace geodistill::nx {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers follow the store's entry order.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg);

  // Applies one update from the gradients currently held by `params`.
  void step(ParamStore& params);

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace geodistill::nx
