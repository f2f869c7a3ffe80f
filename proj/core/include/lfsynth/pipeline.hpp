#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "lfsynth/image.hpp"
#include "lfsynth/lightfield.hpp"
#include "lfsynth/networks.hpp"

namespace lfsynth {

// Axis convention, used by every module: a view at angular position (p, q)
// sits in grid row p and column q. A disparity d moves content by (i - p) * d
// rows and (j - q) * d columns between the view at (i, j) and the target.
//
// Four-way stacks (corners, disparities, masks, warps) always follow the
// corner order (0,0), (0,N), (N,0), (N,N).
template <typename T>
struct SynthesisResult {
  Tensor<T> predicted;    // [B,3,H,W]
  Tensor<T> disparities;  // [B,4,H,W]; undefined for single_cnn
  Tensor<T> masks;        // [B,4,H,W]; undefined for single_cnn
  Tensor<T> warps;        // [B,12,H,W]; undefined for single_cnn
  // Wide baseline only: directional disparities and the warps they induce.
  Tensor<T> disparities_h;
  Tensor<T> disparities_v;
  Tensor<T> warps_h;
  Tensor<T> warps_v;
  std::vector<ViewCoord> coords;
};

// Replaces network outputs, for oracle harnesses. Shapes match the result
// fields they stand in for.
template <typename T>
struct SynthesisOverrides {
  Tensor<T> disparities;
  Tensor<T> masks;
};

// out(row, col) = view(row + (i - p) d, col + (j - q) d), bilinear with border
// clamp. `view` is [B,C,H,W], `d` is [B,1,H,W] and targets[b] is the target
// position of batch element b.
template <typename T>
Tensor<T> warp_view(const Tensor<T>& view, const Tensor<T>& d, ViewCoord source,
                    const std::vector<ViewCoord>& targets);

// Runs the model held in `weights` on corner batches [B,3,H,W] (corner order
// above) for targets coords[b] inside the square [0,n]^2. Dispatches on
// weights.kind, including the wide-baseline and ablation variants.
template <typename T>
SynthesisResult<T> synthesize(ModelWeights<T>& weights, const std::array<Tensor<T>, 4>& corners,
                              const std::vector<ViewCoord>& coords, std::size_t n, NormMode mode,
                              const SynthesisOverrides<T>& overrides = {});

// Wide-baseline pipeline; synthesize() forwards here for that kind.
template <typename T>
SynthesisResult<T> synthesize_wide(ModelWeights<T>& weights,
                                   const std::array<Tensor<T>, 4>& corners,
                                   const std::vector<ViewCoord>& coords, std::size_t n,
                                   NormMode mode, const SynthesisOverrides<T>& overrides = {});

// Single-view inference in eval mode without recording a tape.
template <typename T>
SynthesisResult<T> synthesize_view(ModelWeights<T>& weights, const std::array<Image, 4>& corners,
                                   ViewCoord coord, std::size_t n,
                                   const SynthesisOverrides<T>& overrides = {});

// Checks mask positivity and normalization (1e-6), |d| <= d_max and the blend
// recomputation. Throws InvariantError describing the first violation.
template <typename T>
void verify_synthesis(const SynthesisResult<T>& result, double d_max);

}  // namespace lfsynth
