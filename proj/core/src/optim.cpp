#include "lfsynth/optim.hpp"

#include <cmath>

#include "lfsynth/error.hpp"

namespace lfsynth {

template <typename T>
void adam_step(ModelWeights<T>& weights, AdamState<T>& state, const AdamConfig& config) {
  for (const auto& [name, p] : weights.params) {
    for (T g : p.grad()) {
      if (!std::isfinite(g)) throw InvariantError("non-finite gradient in parameter " + name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const auto b1 = static_cast<T>(config.beta1);
  const auto b2 = static_cast<T>(config.beta2);
  for (auto& [name, p] : weights.params) {
    const auto g = p.grad();
    if (g.empty()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (!m.defined()) m = Tensor<T>(p.shape());
    if (!v.defined()) v = Tensor<T>(p.shape());
    auto md = m.mutable_data();
    auto vd = v.mutable_data();
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      md[i] = b1 * md[i] + (T{1} - b1) * g[i];
      vd[i] = b2 * vd[i] + (T{1} - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(md[i]) / c1;
      const double vhat = static_cast<double>(vd[i]) / c2;
      w[i] -= static_cast<T>(config.lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template void adam_step<float>(ModelWeights<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ModelWeights<double>&, AdamState<double>&, const AdamConfig&);

}  // namespace lfsynth
