#include "lfsynth/losses.hpp"

#include "lfsynth/error.hpp"
#include "lfsynth/ops.hpp"

namespace lfsynth {

namespace {

template <typename T>
void same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(who) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> loss_ed(const Tensor<T>& pred, const Tensor<T>& gt) {
  same_shape(pred, gt, "loss_ed");
  return mean_abs_diff(pred, gt);
}

template <typename T>
Tensor<T> loss_eg(const Tensor<T>& pred, const Tensor<T>& gt) {
  same_shape(pred, gt, "loss_eg");
  const Tensor<T> diff = sub(pred, gt);
  return add(mean(abs(forward_diff(diff, Axis::cols))), mean(abs(forward_diff(diff, Axis::rows))));
}

template <typename T>
Tensor<T> loss_ew(const Tensor<T>& warps, const Tensor<T>& gt) {
  if (warps.rank() != 4 || gt.rank() != 4 || warps.dim(1) != 4 * gt.dim(1))
    throw ShapeError("loss_ew: warps " + shape_str(warps.shape()) + " vs target " + shape_str(gt.shape()));
  const std::size_t c = gt.dim(1);
  Tensor<T> acc = loss_ed(slice_channels(warps, 0, c), gt);
  for (std::size_t k = 1; k < 4; ++k) acc = add(acc, loss_ed(slice_channels(warps, k * c, c), gt));
  return scale(acc, T{0.25});
}

template <typename T>
Tensor<T> loss_total(const SynthesisResult<T>& r, const Tensor<T>& gt, const LossTerms& terms,
                     LossBreakdown* parts) {
  if (terms.lambda_g < 0.0 || terms.lambda_w < 0.0) throw ConfigError("loss weights must be >= 0");
  LossBreakdown b;
  Tensor<T> total = loss_ed(r.predicted, gt);
  b.ed = static_cast<double>(total.item());
  if (terms.gradient) {
    const Tensor<T> eg = loss_eg(r.predicted, gt);
    b.eg = static_cast<double>(eg.item());
    total = add(total, scale(eg, static_cast<T>(terms.lambda_g)));
  }
  if (terms.warp) {
    if (!r.warps.defined()) throw ConfigError("E_w needs warped views; this model has none");
    const Tensor<T> ew = loss_ew(r.warps, gt);
    b.ew = static_cast<double>(ew.item());
    total = add(total, scale(ew, static_cast<T>(terms.lambda_w)));
  }
  if (r.warps_h.defined() && r.warps_v.defined()) {
    const Tensor<T> dir = add(loss_ew(r.warps_h, gt), loss_ew(r.warps_v, gt));
    b.directional = static_cast<double>(dir.item());
    total = add(total, scale(dir, static_cast<T>(kDirectionalWarpWeight)));
  }
  b.total = static_cast<double>(total.item());
  if (parts) *parts = b;
  return total;
}

#define LFSYNTH_INSTANTIATE(T)                                                           \
  template Tensor<T> loss_ed<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> loss_eg<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> loss_ew<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> loss_total<T>(const SynthesisResult<T>&, const Tensor<T>&,         \
                                   const LossTerms&, LossBreakdown*);

LFSYNTH_INSTANTIATE(float)
LFSYNTH_INSTANTIATE(double)
#undef LFSYNTH_INSTANTIATE

}  // namespace lfsynth
