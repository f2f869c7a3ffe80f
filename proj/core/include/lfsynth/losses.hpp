#pragma once

#include "lfsynth/pipeline.hpp"
#include "lfsynth/tensor.hpp"

namespace lfsynth {

inline constexpr double kGradientWeight = 0.5;
inline constexpr double kWarpWeight = 1.0;
// Weight of each directional warp term in the wide-baseline loss.
inline constexpr double kDirectionalWarpWeight = 0.25;

struct LossTerms {
  bool gradient = true;  // E_g
  bool warp = false;     // E_w
  double lambda_g = kGradientWeight;
  double lambda_w = kWarpWeight;
};

// Mean absolute difference.
template <typename T>
Tensor<T> loss_ed(const Tensor<T>& pred, const Tensor<T>& gt);

// Mean absolute difference of forward differences, rows plus columns.
template <typename T>
Tensor<T> loss_eg(const Tensor<T>& pred, const Tensor<T>& gt);

// Mean over the four corners of loss_ed(warp, gt); warps is [B,12,H,W].
template <typename T>
Tensor<T> loss_ew(const Tensor<T>& warps, const Tensor<T>& gt);

struct LossBreakdown {
  double total = 0.0;
  double ed = 0.0;
  double eg = 0.0;
  double ew = 0.0;
  double directional = 0.0;  // wide baseline only
};

// E_d + lambda_g E_g [+ lambda_w E_w] [+ 0.25 (E_w(h) + E_w(v)) for wide
// results]. Fills `parts` with the unweighted components when given.
template <typename T>
Tensor<T> loss_total(const SynthesisResult<T>& result, const Tensor<T>& gt, const LossTerms& terms,
                     LossBreakdown* parts = nullptr);

}  // namespace lfsynth
