#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lfsynth/random.hpp"
#include "lfsynth/tensor.hpp"

namespace lfsynth {

struct GradcheckOptions {
  std::size_t instances = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  // Entries probed per leaf tensor and instance.
  std::size_t probes = 6;
  // Spatial size of the end-to-end pipeline instances (>= 16).
  std::size_t pipeline_size = 16;
  bool include_pipeline = true;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t instances = 0;
  std::size_t probes = 0;
  // Probes dropped because the step straddled a kink.
  std::size_t skipped = 0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric) noexcept;

// Compares reverse-mode gradients of the scalar `loss` with respect to each
// leaf against central differences at randomly chosen entries. A probe whose
// estimates at step h and h/2 disagree by more than the tolerance sits on a
// kink of a piecewise-smooth op and is redrawn (counted in `skipped`).
// `loss` must be a pure function of the leaf values.
struct ProbeStats {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
};

// Returns one entry per leaf. probe_counts overrides options.probes per leaf
// when non-empty.
std::vector<ProbeStats> check_gradients(const std::function<Tensor<double>()>& loss,
                                        const std::vector<Tensor<double>>& leaves, CounterRng& rng,
                                        const GradcheckOptions& options,
                                        const std::vector<std::size_t>& probe_counts = {});

// Every tensor op plus the end-to-end plenoptic pipeline (one entry per
// parameter group), each on options.instances random instances.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace lfsynth
