#include "lfsynth/networks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <set>

#include "lfsynth/error.hpp"
#include "lfsynth/random.hpp"

namespace lfsynth {

namespace {

constexpr std::size_t kSingleCnnLayers = 22;
constexpr std::size_t kWideRates[] = {2, 4, 8};
constexpr std::size_t kPoolSizes[] = {16, 8};

std::string layer(const std::string& net, std::size_t i) { return net + ".conv" + std::to_string(i); }

void append_features(std::vector<ConvSpec>& out, const std::string& prefix, std::size_t dilation) {
  out.push_back({layer(prefix, 0), 5, kFeatureChannels, 3, dilation});
  for (std::size_t i = 1; i <= 4; ++i)
    out.push_back({layer(prefix, i), kFeatureChannels, kFeatureChannels, 3, dilation});
  out.push_back({layer(prefix, 5), 4 * kFeatureChannels, kFeatureChannels, 3, 1});
}

// Disparity trunk: four dilated 128-channel layers, two 64-channel layers,
// `extra` additional 64-channel layers, then the tanh head.
void append_disparity(std::vector<ConvSpec>& out, const std::string& prefix, std::size_t in,
                      std::size_t heads, std::size_t extra = 0) {
  const std::size_t rates[] = {2, 4, 8, 16};
  for (std::size_t i = 0; i < 4; ++i) out.push_back({layer(prefix, i), i == 0 ? in : 128, 128, 3, rates[i]});
  out.push_back({layer(prefix, 4), 128, 64, 3, 1});
  out.push_back({layer(prefix, 5), 64, 64, 3, 1});
  for (std::size_t i = 0; i < extra; ++i)
    out.push_back({prefix + ".extra" + std::to_string(i), 64, 64, 3, 1});
  out.push_back({layer(prefix, 6), 64, heads, 3, 1, Activation::tanh, false});
}

void append_selection(std::vector<ConvSpec>& out) {
  const std::size_t ch[] = {18, 64, 128, 128, 128, 64, 32, 4};
  for (std::size_t i = 0; i < 7; ++i) {
    const bool head = i == 6;
    out.push_back({layer("selection", i), ch[i], ch[i + 1], 3, 1,
                   head ? Activation::tanh : Activation::elu, !head});
  }
}

std::vector<ConvSpec> single_cnn_architecture(std::size_t width) {
  std::vector<ConvSpec> out;
  for (std::size_t i = 0; i < kSingleCnnLayers; ++i) {
    const bool head = i + 1 == kSingleCnnLayers;
    // Layers four to seven (1-based) are dilated.
    const std::size_t dilation = (i >= 3 && i <= 6) ? (std::size_t{2} << (i - 3)) : 1;
    out.push_back({layer("single_cnn", i), i == 0 ? 14 : width, head ? 3 : width, 3, dilation,
                   head ? Activation::none : Activation::elu, !head});
  }
  return out;
}

std::size_t count(const std::vector<ConvSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.parameter_count();
  return n;
}

bool has_selection(NetKind kind) {
  return kind != NetKind::single_cnn && kind != NetKind::no_selection;
}

const ConvSpec& find_spec(const std::vector<ConvSpec>& specs, const std::string& name) {
  for (const auto& s : specs)
    if (s.name == name) return s;
  throw InvariantError("no layer named " + name);
}

// Architecture tables are immutable; build each kind once.
const std::vector<ConvSpec>& cached_architecture(NetKind kind) {
  static const std::vector<ConvSpec> tables[] = {
      architecture(NetKind::plenoptic),        architecture(NetKind::wide_baseline),
      architecture(NetKind::single_cnn),       architecture(NetKind::single_disparity),
      architecture(NetKind::no_selection),     architecture(NetKind::no_features),
  };
  return tables[static_cast<std::size_t>(kind)];
}

template <typename T>
void require_planes(const Tensor<T>& P, const Tensor<T>& Q, const Tensor<T>& x, const char* who) {
  if (P.rank() != 4 || Q.shape() != P.shape() || P.dim(1) != 1 || x.rank() != 4 ||
      x.dim(0) != P.dim(0) || x.dim(2) != P.dim(2) || x.dim(3) != P.dim(3)) {
    throw ShapeError(std::string(who) + ": planes " + shape_str(P.shape()) + "/" +
                     shape_str(Q.shape()) + " do not match input " + shape_str(x.shape()));
  }
}

}  // namespace

std::string_view to_string(NetKind kind) noexcept {
  switch (kind) {
    case NetKind::plenoptic: return "plenoptic";
    case NetKind::wide_baseline: return "wide_baseline";
    case NetKind::single_cnn: return "single_cnn";
    case NetKind::single_disparity: return "single_disparity";
    case NetKind::no_selection: return "no_selection";
    case NetKind::no_features: return "no_features";
  }
  return "unknown";
}

NetKind parse_net_kind(std::string_view name) {
  for (NetKind k : {NetKind::plenoptic, NetKind::wide_baseline, NetKind::single_cnn,
                    NetKind::single_disparity, NetKind::no_selection, NetKind::no_features}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown net kind '" + std::string(name) + "'");
}

double default_max_disparity(NetKind kind) noexcept {
  return kind == NetKind::wide_baseline ? kWideMaxDisparity : kPlenopticMaxDisparity;
}

std::size_t single_cnn_width() {
  static const std::size_t width = [] {
    std::size_t best = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t w = 1; w <= 512; ++w) {
      const double gap =
          std::abs(static_cast<double>(count(single_cnn_architecture(w))) - kSingleCnnParameterBudget);
      if (gap < best_gap) {
        best_gap = gap;
        best = w;
      }
    }
    return best;
  }();
  return width;
}

std::size_t no_features_extra_layers() {
  static const std::size_t extra = [] {
    const double target = static_cast<double>(count(architecture(NetKind::plenoptic)) + 1);
    std::size_t best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n <= 32; ++n) {
      std::vector<ConvSpec> specs;
      append_disparity(specs, "disparity", 14, 4, n);
      append_selection(specs);
      const double gap = std::abs(static_cast<double>(count(specs) + 1) - target);
      if (gap < best_gap) {
        best_gap = gap;
        best = n;
      }
    }
    return best;
  }();
  return extra;
}

std::vector<ConvSpec> architecture(NetKind kind) {
  std::vector<ConvSpec> out;
  switch (kind) {
    case NetKind::plenoptic:
    case NetKind::no_selection:
      append_features(out, "features", 1);
      append_disparity(out, "disparity", 4 * kFeatureChannels + 2, 4);
      if (kind == NetKind::plenoptic) append_selection(out);
      break;
    case NetKind::single_disparity:
      append_features(out, "features", 1);
      append_disparity(out, "disparity", 4 * kFeatureChannels + 2, 1);
      append_selection(out);
      break;
    case NetKind::no_features:
      append_disparity(out, "disparity", 14, 4, no_features_extra_layers());
      append_selection(out);
      break;
    case NetKind::single_cnn:
      out = single_cnn_architecture(single_cnn_width());
      break;
    case NetKind::wide_baseline:
      for (std::size_t r : kWideRates) append_features(out, "features.r" + std::to_string(r), r);
      out.push_back({"features.fuse", 3 * kFeatureChannels, kFeatureChannels, 1, 1});
      append_disparity(out, "disparity_h", 2 * kFeatureChannels + 2, 2);
      append_disparity(out, "disparity_v", 2 * kFeatureChannels + 2, 2);
      out.push_back({"fusion.conv0", 2, kFusionHiddenChannels, 3, 1, Activation::elu, false});
      out.push_back({"fusion.conv1", kFusionHiddenChannels, 1, 1, 1, Activation::none, false});
      append_selection(out);
      break;
  }
  return out;
}

std::size_t expected_parameter_count(NetKind kind) {
  return count(cached_architecture(kind)) + (has_selection(kind) ? 1 : 0);
}

std::size_t receptive_field(NetKind kind) {
  const auto& specs = cached_architecture(kind);
  auto growth = [](const ConvSpec& s) { return (s.kernel - 1) * s.dilation; };
  auto chain = [&](const std::string& prefix) {
    std::size_t g = 0;
    for (const auto& s : specs)
      if (s.name.rfind(prefix, 0) == 0) g += growth(s);
    return g;
  };
  std::size_t g = 0;
  switch (kind) {
    case NetKind::single_cnn:
      g = chain("single_cnn.");
      break;
    case NetKind::wide_baseline: {
      std::size_t widest = 0;
      for (std::size_t r : kWideRates)
        widest = std::max(widest, chain("features.r" + std::to_string(r) + "."));
      g = widest + chain("features.fuse") +
          std::max(chain("disparity_h."), chain("disparity_v.")) + chain("fusion.") +
          chain("selection.");
      break;
    }
    default:
      g = chain("features.") + chain("disparity.") + chain("selection.");
      break;
  }
  return 1 + g;
}

template <typename T>
const Tensor<T>& ModelWeights<T>::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw InvariantError("model has no parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T>& ModelWeights<T>::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw InvariantError("model has no parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
void ModelWeights<T>::zero_grad() {
  for (auto& [name, t] : params) t.zero_grad();
}

template <typename T>
std::string ModelWeights<T>::group_of(const std::string& name) {
  return name.substr(0, name.find('.'));
}

template <typename T>
std::vector<std::string> ModelWeights<T>::groups() const {
  std::set<std::string> g;
  for (const auto& [name, t] : params) g.insert(group_of(name));
  return {g.begin(), g.end()};
}

template <typename T>
ModelWeights<T> make_model(NetKind kind, std::uint64_t seed, double d_max) {
  ModelWeights<T> w;
  w.kind = kind;
  w.d_max = d_max > 0.0 ? d_max : default_max_disparity(kind);
  w.seed_lineage = {seed};
  const CounterRng root(seed, 0x1417);
  const auto& specs = cached_architecture(kind);
  for (std::size_t li = 0; li < specs.size(); ++li) {
    const ConvSpec& s = specs[li];
    CounterRng rng = root.fork(li);
    const std::size_t taps = s.kernel * s.kernel;
    const double limit = std::sqrt(6.0 / static_cast<double>((s.in + s.out) * taps));
    std::vector<T> k(s.out * s.in * taps);
    for (T& v : k) v = static_cast<T>(rng.uniform(-limit, limit));
    w.params.emplace(s.name + ".kernel",
                     Tensor<T>(Shape{s.out, s.in, s.kernel, s.kernel}, std::move(k)).set_requires_grad(true));
    w.params.emplace(s.name + ".bias", Tensor<T>(Shape{s.out}, T{0}).set_requires_grad(true));
    if (s.batch_norm) {
      w.params.emplace(s.name + ".bn_gamma", Tensor<T>(Shape{s.out}, T{1}).set_requires_grad(true));
      w.params.emplace(s.name + ".bn_beta", Tensor<T>(Shape{s.out}, T{0}).set_requires_grad(true));
      w.norms.emplace(s.name, BatchNormState<T>{Tensor<T>(Shape{s.out}, T{0}),
                                                Tensor<T>(Shape{s.out}, T{1})});
    }
  }
  if (has_selection(kind)) w.params.emplace("beta", Tensor<T>::scalar(T{1}).set_requires_grad(true));
  if (w.parameter_count() != expected_parameter_count(kind)) {
    throw InvariantError("parameter audit failed for " + std::string(to_string(kind)));
  }
  return w;
}

template <typename To, typename From>
ModelWeights<To> cast_model(const ModelWeights<From>& src) {
  auto convert = [](const Tensor<From>& t) {
    std::vector<To> v(t.data().begin(), t.data().end());
    return Tensor<To>(t.shape(), std::move(v));
  };
  ModelWeights<To> out;
  out.kind = src.kind;
  out.d_max = src.d_max;
  out.seed_lineage = src.seed_lineage;
  for (const auto& [name, t] : src.params) out.params.emplace(name, convert(t).set_requires_grad(true));
  for (const auto& [name, s] : src.norms)
    out.norms.emplace(name, BatchNormState<To>{convert(s.running_mean), convert(s.running_var)});
  return out;
}

template <typename T>
Tensor<T> apply_conv(ModelWeights<T>& w, const ConvSpec& spec, const Tensor<T>& x, NormMode mode,
                     std::size_t dilation_override) {
  const std::size_t dilation = dilation_override ? dilation_override : spec.dilation;
  Tensor<T> y = conv2d(x, w.param(spec.name + ".kernel"), w.param(spec.name + ".bias"), dilation);
  switch (spec.act) {
    case Activation::elu: y = elu(y); break;
    case Activation::tanh: y = tanh(y); break;
    case Activation::none: break;
  }
  if (spec.batch_norm) {
    double momentum = kBatchNormMomentum;
    if (w.norm_calls && mode == NormMode::train) {
      const auto k = static_cast<double>((*w.norm_calls)[spec.name]++);
      momentum = k / (k + 1.0);
    }
    y = batch_norm(y, w.param(spec.name + ".bn_gamma"), w.param(spec.name + ".bn_beta"),
                   w.norms[spec.name], mode, momentum);
  }
  return y;
}

namespace {

template <typename T>
Tensor<T> run(ModelWeights<T>& w, const std::string& name, const Tensor<T>& x, NormMode mode,
              std::size_t dilation_override = 0) {
  return apply_conv(w, find_spec(cached_architecture(w.kind), name), x, mode, dilation_override);
}

}  // namespace

template <typename T>
Tensor<T> features_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                           const Tensor<T>& view, NormMode mode, const std::string& prefix,
                           std::size_t dilation) {
  require_planes(P, Q, view, "features");
  if (view.dim(1) != 3) throw ShapeError("features: view needs 3 channels, got " + shape_str(view.shape()));
  if (view.dim(2) < kPoolSizes[0] || view.dim(3) < kPoolSizes[0]) {
    throw ShapeError("features: " + std::to_string(view.dim(2)) + "x" + std::to_string(view.dim(3)) +
                     " is smaller than the 16x16 pooling window");
  }
  Tensor<T> x = run(w, layer(prefix, 0), concat_channels<T>({view, P, Q}), mode, dilation);
  x = run(w, layer(prefix, 1), x, mode, dilation);
  const Tensor<T> c2 = run(w, layer(prefix, 2), x, mode, dilation);
  x = run(w, layer(prefix, 3), c2, mode, dilation);
  const Tensor<T> c4 = add(c2, run(w, layer(prefix, 4), x, mode, dilation));
  const Tensor<T> stacked =
      concat_channels<T>({c2, c4, avg_pool(c4, kPoolSizes[0]), avg_pool(c4, kPoolSizes[1])});
  return run(w, layer(prefix, 5), stacked, mode);
}

template <typename T>
Tensor<T> disparity_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                            const Tensor<T>& features, NormMode mode) {
  require_planes(P, Q, features, "disparity");
  Tensor<T> x = concat_channels<T>({P, Q, features});
  for (std::size_t i = 0; i < 6; ++i) x = run(w, layer("disparity", i), x, mode);
  for (std::size_t i = 0; w.norms.count("disparity.extra" + std::to_string(i)) != 0; ++i)
    x = run(w, "disparity.extra" + std::to_string(i), x, mode);
  x = run(w, layer("disparity", 6), x, mode);
  return scale(x, static_cast<T>(w.d_max));
}

template <typename T>
Tensor<T> selection_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                            const Tensor<T>& warps, const Tensor<T>& disparities, NormMode mode) {
  require_planes(P, Q, warps, "selection");
  Tensor<T> x = concat_channels<T>({P, Q, warps, disparities});
  for (std::size_t i = 0; i < 7; ++i) x = run(w, layer("selection", i), x, mode);
  return softmax_beta(x, w.param("beta"));
}

template <typename T>
Tensor<T> single_cnn_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                             const Tensor<T>& corners, NormMode mode) {
  require_planes(P, Q, corners, "single_cnn");
  Tensor<T> x = concat_channels<T>({P, Q, corners});
  for (std::size_t i = 0; i < kSingleCnnLayers; ++i) x = run(w, layer("single_cnn", i), x, mode);
  return x;
}

template <typename T>
Tensor<T> wide_features_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                                const Tensor<T>& view, NormMode mode) {
  std::vector<Tensor<T>> branches;
  for (std::size_t r : kWideRates)
    branches.push_back(features_forward(w, P, Q, view, mode, "features.r" + std::to_string(r), r));
  return run(w, "features.fuse", concat_channels(branches), mode);
}

template <typename T>
Tensor<T> pairwise_disparity_forward(ModelWeights<T>& w, const Tensor<T>& P, const Tensor<T>& Q,
                                     const Tensor<T>& fa, const Tensor<T>& fb, PairAxis axis,
                                     NormMode mode) {
  require_planes(P, Q, fa, "pairwise disparity");
  const std::string net = axis == PairAxis::horizontal ? "disparity_h" : "disparity_v";
  Tensor<T> x = concat_channels<T>({P, Q, fa, fb});
  for (std::size_t i = 0; i < 7; ++i) x = run(w, layer(net, i), x, mode);
  return scale(x, static_cast<T>(w.d_max));
}

template <typename T>
Tensor<T> fuse_disparity(ModelWeights<T>& w, const Tensor<T>& d_h, const Tensor<T>& d_v,
                         NormMode mode) {
  if (d_h.shape() != d_v.shape() || d_h.rank() != 4 || d_h.dim(1) != 1) {
    throw ShapeError("fuse_disparity: " + shape_str(d_h.shape()) + " vs " + shape_str(d_v.shape()));
  }
  Tensor<T> x = run(w, "fusion.conv0", concat_channels<T>({d_h, d_v}), mode);
  x = run(w, "fusion.conv1", x, mode);
  const auto bound = static_cast<T>(w.d_max);
  return clamp(x, -bound, bound);
}

#define LFSYNTH_INSTANTIATE(T)                                                                   \
  template struct ModelWeights<T>;                                                               \
  template ModelWeights<T> make_model<T>(NetKind, std::uint64_t, double);                        \
  template Tensor<T> apply_conv<T>(ModelWeights<T>&, const ConvSpec&, const Tensor<T>&, NormMode, \
                                   std::size_t);                                                 \
  template Tensor<T> features_forward<T>(ModelWeights<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                         const Tensor<T>&, NormMode, const std::string&,         \
                                         std::size_t);                                           \
  template Tensor<T> disparity_forward<T>(ModelWeights<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          const Tensor<T>&, NormMode);                           \
  template Tensor<T> selection_forward<T>(ModelWeights<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                          const Tensor<T>&, const Tensor<T>&, NormMode);         \
  template Tensor<T> single_cnn_forward<T>(ModelWeights<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&, NormMode);                          \
  template Tensor<T> wide_features_forward<T>(ModelWeights<T>&, const Tensor<T>&,                \
                                              const Tensor<T>&, const Tensor<T>&, NormMode);     \
  template Tensor<T> pairwise_disparity_forward<T>(ModelWeights<T>&, const Tensor<T>&,           \
                                                   const Tensor<T>&, const Tensor<T>&,           \
                                                   const Tensor<T>&, PairAxis, NormMode);        \
  template Tensor<T> fuse_disparity<T>(ModelWeights<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                       NormMode);

LFSYNTH_INSTANTIATE(float)
LFSYNTH_INSTANTIATE(double)
#undef LFSYNTH_INSTANTIATE

template ModelWeights<double> cast_model<double, float>(const ModelWeights<float>&);
template ModelWeights<float> cast_model<float, double>(const ModelWeights<double>&);
template ModelWeights<float> cast_model<float, float>(const ModelWeights<float>&);
template ModelWeights<double> cast_model<double, double>(const ModelWeights<double>&);

}  // namespace lfsynth
