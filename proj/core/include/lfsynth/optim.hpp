#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "lfsynth/networks.hpp"

namespace lfsynth {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::map<std::string, Tensor<T>> m;  // first moments, keyed like the parameters
  std::map<std::string, Tensor<T>> v;  // second moments
};

// One bias-corrected ADAM update of every parameter that holds a gradient.
// Parameters without a gradient keep their values and moments. Throws
// InvariantError naming the first parameter whose gradient is not finite;
// nothing is modified in that case.
template <typename T>
void adam_step(ModelWeights<T>& weights, AdamState<T>& state, const AdamConfig& config);

}  // namespace lfsynth
