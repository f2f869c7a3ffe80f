#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lfsynth/tensor.hpp"

// Differentiable primitives. Every function here records an adjoint on the
// active tape (see TapeScope) whenever one of its inputs requires a gradient.
// Image tensors are [B,C,H,W].
namespace lfsynth {

enum class NormMode { train, eval };

// Per-channel running statistics consumed in eval mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;  // [C]
  Tensor<T> running_var;   // [C], unbiased
};

inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kBatchNormEpsilon = 1e-5;

// Same-size cross-correlation with dilated taps and zero padding of
// dilation*(k-1)/2. kernel is [Cout,Cin,k,k] with k odd; bias is [Cout] or
// undefined for no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t dilation = 1);

// k x k average pooling with stride k, re-expanded to the input resolution
// by nearest-neighbour upsampling. Partial blocks at the right/bottom edge
// average only the pixels they contain.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, std::size_t k);

// ELU with alpha = 1.
template <typename T>
Tensor<T> elu(const Tensor<T>& input);

template <typename T>
Tensor<T> tanh(const Tensor<T>& input);

// Hard clamp; the gradient is zero where the input lies outside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& input, T lo, T hi);

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, NormMode mode,
                     double momentum = kBatchNormMomentum, double eps = kBatchNormEpsilon);

// Softmax over the channel axis of beta * logits; beta is a [1] tensor.
template <typename T>
Tensor<T> softmax_beta(const Tensor<T>& logits, const Tensor<T>& beta);

// Bilinear lookup of image at (x, y) per output pixel, x along columns and
// y along rows. Coordinates are clamped to the image border. x_coords and
// y_coords are [B,1,H,W].
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& x_coords,
                          const Tensor<T>& y_coords);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// a [B,C,H,W] times m [B,1,H,W] broadcast over channels.
template <typename T>
Tensor<T> mul_channels(const Tensor<T>& a, const Tensor<T>& m);

// Multiplies batch element b by factors[b].
template <typename T>
Tensor<T> scale_batch(const Tensor<T>& a, std::span<const T> factors);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::size_t first, std::size_t count);

template <typename T>
Tensor<T> abs(const Tensor<T>& input);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

template <typename T>
Tensor<T> mean(const Tensor<T>& input);

enum class Axis { rows, cols };

// Forward difference along rows (y) or columns (x); the last row/column is 0
// (replicated boundary).
template <typename T>
Tensor<T> forward_diff(const Tensor<T>& input, Axis axis);

// Convenience: mean(|a - b|).
template <typename T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  return mean(abs(sub(a, b)));
}

// True when every element is finite.
template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace lfsynth
