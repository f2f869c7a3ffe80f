#include "lfsynth/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lfsynth/error.hpp"
#include "lfsynth/lightfield.hpp"
#include "lfsynth/losses.hpp"
#include "lfsynth/networks.hpp"
#include "lfsynth/ops.hpp"
#include "lfsynth/pipeline.hpp"

namespace lfsynth {

namespace {

using Td = Tensor<double>;
using Fn = std::function<Td()>;

constexpr std::size_t kMaxRedraws = 8;

Td random_tensor(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Td(std::move(shape), std::move(v));
}

Td leaf(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Td t = random_tensor(rng, std::move(shape), lo, hi);
  t.set_requires_grad(true);
  return t;
}

// Coordinates at least 1e-3 away from any integer.
Td off_grid_coords(CounterRng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x - std::round(x)) < 1e-3);
  }
  Td t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

std::size_t extent(CounterRng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.uniform_index(hi - lo + 1);
}

// Random linear functional of the op output, so every output entry matters.
Fn project(Fn op, const Td& weights) {
  return [op = std::move(op), weights] { return sum(mul(op(), weights)); };
}

struct OpCase {
  Fn loss;
  std::vector<Td> leaves;
};

using CaseFactory = std::function<OpCase(CounterRng&)>;

OpCase projected(CounterRng& rng, Fn op, std::vector<Td> leaves) {
  Td probe_out;
  {
    NoGradScope<double> off;
    probe_out = op();
  }
  const Td weights = random_tensor(rng, probe_out.shape());
  return {project(std::move(op), weights), std::move(leaves)};
}

Shape image_shape(CounterRng& rng, std::size_t min_hw = 2) {
  return {extent(rng, 1, 2), extent(rng, 1, 3), extent(rng, min_hw, 5), extent(rng, min_hw, 5)};
}

std::vector<std::pair<std::string, CaseFactory>> op_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto unary = [&](std::string name, std::function<Td(const Td&)> f, double lo, double hi) {
    cases.emplace_back(std::move(name), [f, lo, hi](CounterRng& rng) {
      Td x = leaf(rng, image_shape(rng), lo, hi);
      return projected(rng, [f, x] { return f(x); }, {x});
    });
  };

  cases.emplace_back("conv2d", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    const std::size_t k = rng.uniform_index(2) ? 3 : 1, cout = extent(rng, 1, 3);
    const std::size_t dilation = extent(rng, 1, 2);
    Td x = leaf(rng, s), kern = leaf(rng, {cout, s[1], k, k}), bias = leaf(rng, {cout});
    return projected(rng, [=] { return conv2d(x, kern, bias, dilation); }, {x, kern, bias});
  });
  cases.emplace_back("avg_pool", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    const std::size_t k = extent(rng, 1, std::max(s[2], s[3]));
    Td x = leaf(rng, s);
    return projected(rng, [=] { return avg_pool(x, k); }, {x});
  });
  unary("elu", [](const Td& x) { return elu(x); }, -2.0, 2.0);
  unary("tanh", [](const Td& x) { return lfsynth::tanh(x); }, -2.0, 2.0);
  unary("clamp", [](const Td& x) { return clamp(x, -0.5, 0.5); }, -1.0, 1.0);
  unary("abs", [](const Td& x) { return lfsynth::abs(x); }, -1.0, 1.0);
  unary("scale", [](const Td& x) { return scale(x, -1.7); }, -1.0, 1.0);
  unary("sum", [](const Td& x) { return scale(sum(x), 1.3); }, -1.0, 1.0);
  unary("mean", [](const Td& x) { return scale(mean(x), 1.3); }, -1.0, 1.0);
  unary("forward_diff.rows", [](const Td& x) { return forward_diff(x, Axis::rows); }, -1.0, 1.0);
  unary("forward_diff.cols", [](const Td& x) { return forward_diff(x, Axis::cols); }, -1.0, 1.0);

  cases.emplace_back("batch_norm.train", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td x = leaf(rng, s), g = leaf(rng, {s[1]}, 0.5, 1.5), b = leaf(rng, {s[1]});
    auto state = std::make_shared<BatchNormState<double>>();
    return projected(rng, [=] { return batch_norm(x, g, b, *state, NormMode::train); }, {x, g, b});
  });
  cases.emplace_back("batch_norm.eval", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td x = leaf(rng, s), g = leaf(rng, {s[1]}, 0.5, 1.5), b = leaf(rng, {s[1]});
    auto state = std::make_shared<BatchNormState<double>>(
        BatchNormState<double>{random_tensor(rng, {s[1]}), random_tensor(rng, {s[1]}, 0.5, 2.0)});
    return projected(rng, [=] { return batch_norm(x, g, b, *state, NormMode::eval); }, {x, g, b});
  });
  cases.emplace_back("softmax_beta", [](CounterRng& rng) {
    Shape s = image_shape(rng);
    s[1] = 4;
    Td x = leaf(rng, s, -2.0, 2.0), beta = leaf(rng, {1}, 0.5, 3.0);
    return projected(rng, [=] { return softmax_beta(x, beta); }, {x, beta});
  });
  cases.emplace_back("bilinear_sample", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    const Shape cs{s[0], 1, s[2], s[3]};
    Td img = leaf(rng, s);
    Td xs = off_grid_coords(rng, cs, -1.0, static_cast<double>(s[3]));
    Td ys = off_grid_coords(rng, cs, -1.0, static_cast<double>(s[2]));
    return projected(rng, [=] { return bilinear_sample(img, xs, ys); }, {img, xs, ys});
  });
  cases.emplace_back("add", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td a = leaf(rng, s), b = leaf(rng, s);
    return projected(rng, [=] { return add(a, b); }, {a, b});
  });
  cases.emplace_back("sub", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td a = leaf(rng, s), b = leaf(rng, s);
    return projected(rng, [=] { return sub(a, b); }, {a, b});
  });
  cases.emplace_back("mul", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td a = leaf(rng, s), b = leaf(rng, s);
    return projected(rng, [=] { return mul(a, b); }, {a, b});
  });
  cases.emplace_back("mul_channels", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td a = leaf(rng, s), m = leaf(rng, {s[0], 1, s[2], s[3]});
    return projected(rng, [=] { return mul_channels(a, m); }, {a, m});
  });
  cases.emplace_back("scale_batch", [](CounterRng& rng) {
    const Shape s = image_shape(rng);
    Td a = leaf(rng, s);
    std::vector<double> f(s[0]);
    for (double& v : f) v = rng.uniform(-2.0, 2.0);
    return projected(rng, [=] { return scale_batch(a, std::span<const double>(f)); }, {a});
  });
  cases.emplace_back("concat_channels", [](CounterRng& rng) {
    Shape s = image_shape(rng), t = s;
    t[1] = extent(rng, 1, 3);
    Td a = leaf(rng, s), b = leaf(rng, t);
    return projected(rng, [=] { return concat_channels<double>({a, b, a}); }, {a, b});
  });
  cases.emplace_back("slice_channels", [](CounterRng& rng) {
    Shape s = image_shape(rng);
    s[1] = extent(rng, 2, 5);
    const std::size_t first = rng.uniform_index(s[1]);
    const std::size_t count = extent(rng, 1, s[1] - first);
    Td a = leaf(rng, s);
    return projected(rng, [=] { return slice_channels(a, first, count); }, {a});
  });
  return cases;
}

}  // namespace

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

std::vector<ProbeStats> check_gradients(const Fn& loss, const std::vector<Td>& leaves,
                                        CounterRng& rng, const GradcheckOptions& options,
                                        const std::vector<std::size_t>& probe_counts) {
  for (Td l : leaves) l.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Td value = loss();
    backward(value, tape);
  }
  auto evaluate = [&] {
    NoGradScope<double> off;
    return loss().item();
  };

  std::vector<ProbeStats> stats(leaves.size());
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Td l = leaves[li];
    const auto g = l.grad();
    std::vector<double> analytic(g.begin(), g.end());
    analytic.resize(l.numel(), 0.0);
    auto data = l.mutable_data();
    const std::size_t wanted = probe_counts.empty() ? options.probes : probe_counts[li];
    const bool exhaustive = data.size() <= wanted;
    const std::size_t total = exhaustive ? data.size() : wanted;
    for (std::size_t p = 0; p < total; ++p) {
      for (std::size_t attempt = 0; attempt <= kMaxRedraws; ++attempt) {
        const std::size_t idx = exhaustive && attempt == 0 ? p : rng.uniform_index(data.size());
        const double x0 = data[idx];
        auto central = [&](double h) {
          data[idx] = x0 + h;
          const double fp = evaluate();
          data[idx] = x0 - h;
          const double fm = evaluate();
          data[idx] = x0;
          return (fp - fm) / (2.0 * h);
        };
        const double fd = central(options.step);
        const double fd_half = central(options.step / 2.0);
        if (relative_error(fd, fd_half) > options.tolerance && attempt < kMaxRedraws) {
          ++stats[li].skipped;
          continue;
        }
        stats[li].max_rel_error = std::max(stats[li].max_rel_error, relative_error(analytic[idx], fd));
        ++stats[li].probes;
        break;
      }
    }
  }
  return stats;
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  const CounterRng root(options.seed, 0x6c);
  std::uint64_t stream = 0;
  auto finalize = [&](GradcheckResult& r) {
    r.passed = r.probes > 0 && r.max_rel_error < options.tolerance && r.skipped <= r.probes;
    results.push_back(r);
  };

  for (const auto& [name, factory] : op_cases()) {
    GradcheckResult r{name, 0.0, 0, 0, 0, false};
    CounterRng rng = root.fork(stream++);
    for (std::size_t i = 0; i < options.instances; ++i) {
      const OpCase c = factory(rng);
      for (const auto& s : check_gradients(c.loss, c.leaves, rng, options)) {
        r.max_rel_error = std::max(r.max_rel_error, s.max_rel_error);
        r.probes += s.probes;
        r.skipped += s.skipped;
      }
      ++r.instances;
    }
    finalize(r);
  }

  if (!options.include_pipeline) return results;
  if (options.pipeline_size < 16) throw ConfigError("pipeline gradcheck needs at least 16x16 inputs");

  // End to end: L1 + gradient loss of the synthesized view, every group.
  std::map<std::string, GradcheckResult> groups;
  CounterRng rng = root.fork(stream++);
  constexpr std::size_t n = 6;
  for (std::size_t i = 0; i < options.instances; ++i) {
    auto model = std::make_shared<ModelWeights<double>>(
        make_model<double>(NetKind::plenoptic, options.seed + 1000 + i));
    const std::size_t s = options.pipeline_size;
    std::array<Td, 4> corners;
    for (auto& c : corners) c = random_tensor(rng, {1, 3, s, s}, 0.0, 1.0);
    const Td target = random_tensor(rng, {1, 3, s, s}, 0.0, 1.0);
    const ViewCoord coord{rng.uniform(0.0, 6.0), rng.uniform(0.0, 6.0)};
    Fn loss = [=] {
      const auto r = synthesize(*model, corners, {coord}, n, NormMode::train);
      return loss_total(r, target, LossTerms{});
    };

    std::vector<Td> leaves;
    std::vector<std::string> names;
    for (const auto& [name, t] : model->params) {
      leaves.push_back(t);
      names.push_back(name);
    }
    // A couple of probes per group, each in a randomly chosen tensor.
    std::vector<std::size_t> counts(leaves.size(), 0);
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t li = 0; li < names.size(); ++li)
      members[ModelWeights<double>::group_of(names[li])].push_back(li);
    for (const auto& [group, idx] : members)
      for (std::size_t k = 0; k < 2; ++k) ++counts[idx[rng.uniform_index(idx.size())]];

    const auto stats = check_gradients(loss, leaves, rng, options, counts);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto& r = groups[ModelWeights<double>::group_of(names[li])];
      r.max_rel_error = std::max(r.max_rel_error, stats[li].max_rel_error);
      r.probes += stats[li].probes;
      r.skipped += stats[li].skipped;
    }
    for (auto& [group, r] : groups) r.instances = i + 1;
  }
  for (auto& [group, r] : groups) {
    r.name = "pipeline." + group;
    finalize(r);
  }
  return results;
}

}  // namespace lfsynth
