#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lfsynth/ops.hpp"
#include "lfsynth/tensor.hpp"

namespace lfsynth {

enum class NetKind {
  plenoptic,
  wide_baseline,
  single_cnn,        // one 22-layer network from corners straight to the view
  single_disparity,  // one disparity map shared by the four warps
  no_selection,      // uniform blend instead of the selection network
  no_features,       // disparity network fed with raw corner views
};

std::string_view to_string(NetKind kind) noexcept;
NetKind parse_net_kind(std::string_view name);

enum class Activation { elu, tanh, none };

struct ConvSpec {
  std::string name;  // parameter prefix, e.g. "disparity.conv2"
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t dilation = 1;
  Activation act = Activation::elu;
  bool batch_norm = true;

  std::size_t parameter_count() const noexcept {
    return in * out * kernel * kernel + out + (batch_norm ? 2 * out : 0);
  }
  bool operator==(const ConvSpec&) const = default;
};

inline constexpr std::size_t kFeatureChannels = 32;
inline constexpr double kPlenopticMaxDisparity = 4.0;
inline constexpr double kWideMaxDisparity = 60.0;
inline constexpr std::size_t kFusionHiddenChannels = 16;
inline constexpr double kSingleCnnParameterBudget = 1.66e6;

double default_max_disparity(NetKind kind) noexcept;

// Every convolution of a model, grouped by network and in execution order.
// Wide-baseline feature branches are named features.r2 / .r4 / .r8.
std::vector<ConvSpec> architecture(NetKind kind);

// Width of the hidden layers of the single-CNN ablation, chosen so its
// trainable parameter count lands closest to kSingleCnnParameterBudget.
std::size_t single_cnn_width();

// Number of extra 64-channel layers the no-features disparity network gets so
// its model matches the plenoptic parameter count.
std::size_t no_features_extra_layers();

// Trainable parameters implied by architecture(kind), plus the softmax beta.
std::size_t expected_parameter_count(NetKind kind);

// 1 + sum of (k-1)*r along the longest chain of convolutions from an input
// pixel to the synthesized view.
std::size_t receptive_field(NetKind kind);

// Named parameters and batch-norm statistics of one model.
//
// Parameter names are "<layer>.kernel", "<layer>.bias", "<layer>.bn_gamma",
// "<layer>.bn_beta" plus "beta" for the softmax temperature. The first
// dot-separated component is the parameter group.
template <typename T>
struct ModelWeights {
  NetKind kind = NetKind::plenoptic;
  double d_max = kPlenopticMaxDisparity;
  std::vector<std::uint64_t> seed_lineage;
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, BatchNormState<T>> norms;
  // When engaged, train-mode forwards replace the momentum update by a
  // cumulative mean over every call of a layer; the map counts those calls.
  // Not serialized.
  std::optional<std::map<std::string, std::size_t>> norm_calls;

  const Tensor<T>& param(const std::string& name) const;
  Tensor<T>& param(const std::string& name);
  bool has(const std::string& name) const { return params.count(name) != 0; }

  std::size_t parameter_count() const;
  void zero_grad();
  // Group name of a parameter path ("features", "disparity", "beta", ...).
  static std::string group_of(const std::string& name);
  std::vector<std::string> groups() const;
};

// Xavier-uniform kernels, zero biases, unit/zero batch-norm affine, beta = 1.
template <typename T>
ModelWeights<T> make_model(NetKind kind, std::uint64_t seed, double d_max = -1.0);

// Same weights in another precision.
template <typename To, typename From>
ModelWeights<To> cast_model(const ModelWeights<From>& src);

// Applies one table row: conv, activation, then batch norm.
template <typename T>
Tensor<T> apply_conv(ModelWeights<T>& w, const ConvSpec& spec, const Tensor<T>& x, NormMode mode,
                     std::size_t dilation_override = 0);

// Feature extractor on [view, P, Q] (5 channels) -> 32 channels. `prefix`
// selects the weight set and `dilation` the rate of conv0..conv4.
template <typename T>
Tensor<T> features_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                           const Tensor<T>& view, NormMode mode,
                           const std::string& prefix = "features", std::size_t dilation = 1);

// Disparity network on [P, Q, F] -> tanh * d_max. Four channels for the
// plenoptic model, one for the single-disparity ablation.
template <typename T>
Tensor<T> disparity_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                            const Tensor<T>& features, NormMode mode);

// Selection network on [P, Q, warps, disparities] -> softmax_beta masks.
template <typename T>
Tensor<T> selection_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                            const Tensor<T>& warps, const Tensor<T>& disparities, NormMode mode);

template <typename T>
Tensor<T> single_cnn_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                             const Tensor<T>& corners, NormMode mode);

// Three dilated feature branches (rates 2, 4, 8) fused by a 1x1 convolution.
template <typename T>
Tensor<T> wide_features_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                                const Tensor<T>& view, NormMode mode);

enum class PairAxis { horizontal, vertical };

// Disparity network on one pair [P, Q, Fa, Fb] -> 2 channels in +-d_max.
template <typename T>
Tensor<T> pairwise_disparity_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                                     const Tensor<T>& fa, const Tensor<T>& fb, PairAxis axis,
                                     NormMode mode);

// Two-layer fusion of directional disparities [d_h, d_v] -> 1 channel,
// clamped to +-d_max.
template <typename T>
Tensor<T> fuse_disparity(ModelWeights<T>& w, const Tensor<T>& d_h, const Tensor<T>& d_v,
                         NormMode mode);

}  // namespace lfsynth
