#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "raymap/array.hpp"

namespace raymap {

using ParamStore = std::map<std::string, Array>;

// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Array init_params(int rows, int cols, int fan_in, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update over all params; grads missing a name count as zero.
  void step(ParamStore& params, const std::map<std::string, Array>& grads);

  int t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::map<std::string, Array> m_;
  std::map<std::string, Array> v_;
};

}  // namespace raymap
