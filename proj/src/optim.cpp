#include "raymap/optim.hpp"

#include <cmath>

#include "raymap/errors.hpp"
#include "raymap/rng.hpp"

namespace raymap {

Array init_params(int rows, int cols, int fan_in, std::uint64_t seed) {
  if (fan_in <= 0) throw ValidationError("init_params: fan_in must be positive");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Array a(rows, cols);
  for (auto& x : a.data) x = rng.uniform(-bound, bound);
  return a;
}

void Adam::step(ParamStore& params, const std::map<std::string, Array>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& [name, theta] : params) {
    Array& m = m_.try_emplace(name, theta.rows, theta.cols).first->second;
    Array& v = v_.try_emplace(name, theta.rows, theta.cols).first->second;
    if (!m.same_shape(theta)) throw ValidationError("Adam state shape drift for '" + name + "'");
    const auto git = grads.find(name);
    if (git != grads.end() && !git->second.same_shape(theta))
      throw ValidationError("Adam: gradient shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = git == grads.end() ? 0.0 : git->second.data[i];
      m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g;
      v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      theta.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace raymap
