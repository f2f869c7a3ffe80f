#include "lfsynth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lfsynth/error.hpp"

namespace lfsynth {

namespace {

template <typename T>
Tensor<T> grid(std::size_t batch, std::size_t height, std::size_t width, bool rows) {
  std::vector<T> v(batch * height * width);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        v[(b * height + y) * width + x] = static_cast<T>(rows ? y : x);
  return Tensor<T>(Shape{batch, 1, height, width}, std::move(v));
}

void check_coords(const std::vector<ViewCoord>& coords, std::size_t n) {
  const auto e = static_cast<double>(n);
  for (const auto& c : coords) {
    if (!(c.p >= 0.0 && c.p <= e && c.q >= 0.0 && c.q <= e)) {
      throw DomainError("view (" + std::to_string(c.p) + "," + std::to_string(c.q) +
                        ") lies outside the corner square [0," + std::to_string(n) + "]^2");
    }
  }
}

template <typename T>
void check_corners(const std::array<Tensor<T>, 4>& corners, std::size_t batch) {
  for (const auto& c : corners) {
    if (c.rank() != 4 || c.dim(1) != 3 || c.shape() != corners[0].shape() || c.dim(0) != batch) {
      throw ShapeError("corners must be four [" + std::to_string(batch) + ",3,H,W] tensors, got " +
                       shape_str(c.shape()));
    }
  }
}

template <typename T>
Tensor<T> blend(const std::vector<Tensor<T>>& warps, const Tensor<T>& masks) {
  Tensor<T> out = mul_channels(warps[0], slice_channels(masks, 0, 1));
  for (std::size_t k = 1; k < 4; ++k) out = add(out, mul_channels(warps[k], slice_channels(masks, k, 1)));
  return out;
}

template <typename T>
std::vector<Tensor<T>> warp_all(const std::array<Tensor<T>, 4>& corners, const Tensor<T>& disparities,
                                const std::vector<ViewCoord>& coords, std::size_t n) {
  const auto sources = corner_coords(n);
  std::vector<Tensor<T>> warps;
  for (std::size_t k = 0; k < 4; ++k)
    warps.push_back(warp_view(corners[k], slice_channels(disparities, k, 1), sources[k], coords));
  return warps;
}

template <typename T>
void check_override(const Tensor<T>& t, std::size_t batch, std::size_t h, std::size_t w,
                    const char* what) {
  if (t.defined() && t.shape() != Shape{batch, 4, h, w}) {
    throw ShapeError(std::string("override ") + what + " has shape " + shape_str(t.shape()));
  }
}

// Selection masks plus the blended view, shared by both pipelines.
template <typename T>
void finish(ModelWeights<T>& weights, SynthesisResult<T>& r, const Tensor<T>& P, const Tensor<T>& Q,
            const std::array<Tensor<T>, 4>& corners, std::size_t n, NormMode mode,
            const SynthesisOverrides<T>& overrides) {
  const std::vector<Tensor<T>> warps = warp_all(corners, r.disparities, r.coords, n);
  r.warps = concat_channels(warps);
  if (overrides.masks.defined()) {
    r.masks = overrides.masks;
  } else if (weights.kind == NetKind::no_selection) {
    r.masks = Tensor<T>(Shape{P.dim(0), 4, P.dim(2), P.dim(3)}, T{0.25});
  } else {
    r.masks = selection_forward(weights, P, Q, r.warps, r.disparities, mode);
  }
  r.predicted = blend(warps, r.masks);
}

}  // namespace

template <typename T>
Tensor<T> warp_view(const Tensor<T>& view, const Tensor<T>& d, ViewCoord source,
                    const std::vector<ViewCoord>& targets) {
  if (view.rank() != 4 || d.rank() != 4 || d.dim(1) != 1 || d.dim(0) != view.dim(0) ||
      d.dim(2) != view.dim(2) || d.dim(3) != view.dim(3) || targets.size() != view.dim(0)) {
    throw ShapeError("warp_view: view " + shape_str(view.shape()) + ", disparity " +
                     shape_str(d.shape()) + ", " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t b = view.dim(0), h = view.dim(2), w = view.dim(3);
  std::vector<T> row_step(b), col_step(b);
  for (std::size_t i = 0; i < b; ++i) {
    row_step[i] = static_cast<T>(source.p - targets[i].p);
    col_step[i] = static_cast<T>(source.q - targets[i].q);
  }
  const Tensor<T> rows = add(grid<T>(b, h, w, true), scale_batch(d, std::span<const T>(row_step)));
  const Tensor<T> cols = add(grid<T>(b, h, w, false), scale_batch(d, std::span<const T>(col_step)));
  return bilinear_sample(view, cols, rows);
}

template <typename T>
SynthesisResult<T> synthesize(ModelWeights<T>& weights, const std::array<Tensor<T>, 4>& corners,
                              const std::vector<ViewCoord>& coords, std::size_t n, NormMode mode,
                              const SynthesisOverrides<T>& overrides) {
  if (weights.kind == NetKind::wide_baseline)
    return synthesize_wide(weights, corners, coords, n, mode, overrides);
  check_coords(coords, n);
  check_corners(corners, coords.size());
  const std::size_t h = corners[0].dim(2), w = corners[0].dim(3);
  check_override(overrides.disparities, coords.size(), h, w, "disparities");
  check_override(overrides.masks, coords.size(), h, w, "masks");

  SynthesisResult<T> r;
  r.coords = coords;
  const Tensor<T> P = plane_tensor<T>(coords, true, h, w);
  const Tensor<T> Q = plane_tensor<T>(coords, false, h, w);

  if (weights.kind == NetKind::single_cnn) {
    r.predicted = single_cnn_forward(
        weights, P, Q, concat_channels<T>({corners[0], corners[1], corners[2], corners[3]}), mode);
    return r;
  }

  if (overrides.disparities.defined()) {
    r.disparities = overrides.disparities;
  } else {
    Tensor<T> volume;
    if (weights.kind == NetKind::no_features) {
      volume = concat_channels<T>({corners[0], corners[1], corners[2], corners[3]});
    } else {
      std::vector<Tensor<T>> feats;
      for (const auto& c : corners) feats.push_back(features_forward(weights, P, Q, c, mode));
      volume = concat_channels(feats);
    }
    r.disparities = disparity_forward(weights, P, Q, volume, mode);
    if (weights.kind == NetKind::single_disparity)
      r.disparities = concat_channels<T>({r.disparities, r.disparities, r.disparities, r.disparities});
  }
  finish(weights, r, P, Q, corners, n, mode, overrides);
  return r;
}

template <typename T>
SynthesisResult<T> synthesize_wide(ModelWeights<T>& weights,
                                   const std::array<Tensor<T>, 4>& corners,
                                   const std::vector<ViewCoord>& coords, std::size_t n,
                                   NormMode mode, const SynthesisOverrides<T>& overrides) {
  if (weights.kind != NetKind::wide_baseline)
    throw InvariantError("synthesize_wide called with a " + std::string(to_string(weights.kind)) + " model");
  check_coords(coords, n);
  check_corners(corners, coords.size());
  const std::size_t h = corners[0].dim(2), w = corners[0].dim(3);
  check_override(overrides.disparities, coords.size(), h, w, "disparities");
  check_override(overrides.masks, coords.size(), h, w, "masks");

  SynthesisResult<T> r;
  r.coords = coords;
  const Tensor<T> P = plane_tensor<T>(coords, true, h, w);
  const Tensor<T> Q = plane_tensor<T>(coords, false, h, w);

  std::vector<Tensor<T>> F;
  for (const auto& c : corners) F.push_back(wide_features_forward(weights, P, Q, c, mode));
  // Horizontal pairs share a grid row, vertical pairs a grid column.
  const Tensor<T> top = pairwise_disparity_forward(weights, P, Q, F[0], F[1], PairAxis::horizontal, mode);
  const Tensor<T> bottom = pairwise_disparity_forward(weights, P, Q, F[2], F[3], PairAxis::horizontal, mode);
  const Tensor<T> left = pairwise_disparity_forward(weights, P, Q, F[0], F[2], PairAxis::vertical, mode);
  const Tensor<T> right = pairwise_disparity_forward(weights, P, Q, F[1], F[3], PairAxis::vertical, mode);
  const std::array<Tensor<T>, 4> dh = {slice_channels(top, 0, 1), slice_channels(top, 1, 1),
                                       slice_channels(bottom, 0, 1), slice_channels(bottom, 1, 1)};
  const std::array<Tensor<T>, 4> dv = {slice_channels(left, 0, 1), slice_channels(right, 0, 1),
                                       slice_channels(left, 1, 1), slice_channels(right, 1, 1)};
  r.disparities_h = concat_channels<T>({dh[0], dh[1], dh[2], dh[3]});
  r.disparities_v = concat_channels<T>({dv[0], dv[1], dv[2], dv[3]});
  r.warps_h = concat_channels(warp_all(corners, r.disparities_h, coords, n));
  r.warps_v = concat_channels(warp_all(corners, r.disparities_v, coords, n));

  if (overrides.disparities.defined()) {
    r.disparities = overrides.disparities;
  } else {
    std::vector<Tensor<T>> fused;
    for (std::size_t k = 0; k < 4; ++k) fused.push_back(fuse_disparity(weights, dh[k], dv[k], mode));
    r.disparities = concat_channels(fused);
  }
  finish(weights, r, P, Q, corners, n, mode, overrides);
  return r;
}

template <typename T>
SynthesisResult<T> synthesize_view(ModelWeights<T>& weights, const std::array<Image, 4>& corners,
                                   ViewCoord coord, std::size_t n,
                                   const SynthesisOverrides<T>& overrides) {
  NoGradScope<T> no_grad;
  std::array<Tensor<T>, 4> c;
  for (std::size_t k = 0; k < 4; ++k) c[k] = to_tensor<T>(corners[k]);
  return synthesize(weights, c, {coord}, n, NormMode::eval, overrides);
}

template <typename T>
void verify_synthesis(const SynthesisResult<T>& r, double d_max) {
  if (!all_finite(r.predicted)) throw InvariantError("synthesized view has non-finite values");
  if (!r.masks.defined()) return;
  const std::size_t b = r.masks.dim(0), hw = r.masks.dim(2) * r.masks.dim(3);
  const auto m = r.masks.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t px = 0; px < hw; ++px) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double v = m[(i * 4 + k) * hw + px];
        if (!(v >= 0.0)) throw InvariantError("negative selection mask value");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-6) {
        throw InvariantError("selection masks sum to " + std::to_string(s) + " at pixel " +
                             std::to_string(px));
      }
    }
  }
  for (T d : r.disparities.data()) {
    if (!(std::abs(static_cast<double>(d)) <= d_max))
      throw InvariantError("disparity " + std::to_string(d) + " exceeds d_max");
  }
  NoGradScope<T> no_grad;
  std::vector<Tensor<T>> warps;
  for (std::size_t k = 0; k < 4; ++k) warps.push_back(slice_channels(r.warps, 3 * k, 3));
  const Tensor<T> again = blend(warps, r.masks);
  if (!std::equal(again.data().begin(), again.data().end(), r.predicted.data().begin()))
    throw InvariantError("predicted view differs from the mask-weighted blend of the warps");
}

#define LFSYNTH_INSTANTIATE(T)                                                                    \
  template Tensor<T> warp_view<T>(const Tensor<T>&, const Tensor<T>&, ViewCoord,                 \
                                  const std::vector<ViewCoord>&);                                 \
  template SynthesisResult<T> synthesize<T>(ModelWeights<T>&, const std::array<Tensor<T>, 4>&,   \
                                            const std::vector<ViewCoord>&, std::size_t, NormMode, \
                                            const SynthesisOverrides<T>&);                        \
  template SynthesisResult<T> synthesize_wide<T>(ModelWeights<T>&,                               \
                                                 const std::array<Tensor<T>, 4>&,                 \
                                                 const std::vector<ViewCoord>&, std::size_t,      \
                                                 NormMode, const SynthesisOverrides<T>&);         \
  template SynthesisResult<T> synthesize_view<T>(ModelWeights<T>&, const std::array<Image, 4>&,  \
                                                 ViewCoord, std::size_t,                          \
                                                 const SynthesisOverrides<T>&);                   \
  template void verify_synthesis<T>(const SynthesisResult<T>&, double);

LFSYNTH_INSTANTIATE(float)
LFSYNTH_INSTANTIATE(double)
#undef LFSYNTH_INSTANTIATE

}  // namespace lfsynth
