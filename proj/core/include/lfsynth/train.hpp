#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lfsynth/checkpoint.hpp"
#include "lfsynth/lightfield.hpp"
#include "lfsynth/losses.hpp"
#include "lfsynth/networks.hpp"
#include "lfsynth/optim.hpp"

namespace lfsynth {

struct TrainConfig {
  NetKind net_kind = NetKind::plenoptic;
  AdamConfig adam;
  std::size_t batch = 3;
  std::size_t patch = 192;
  std::size_t iterations = 300000;
  LossTerms loss;
  double d_max = 0.0;  // 0 selects the kind's default
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 5000;
  double gamma = 0.4;
  // Grid positions never used as training targets.
  std::vector<ViewCoord> held_out;

  // Throws ConfigError for values outside their domain.
  void validate() const;
  double effective_d_max() const { return d_max > 0.0 ? d_max : default_max_disparity(net_kind); }
};

// Flat "key = value" text, one entry per line, '#' starts a comment. Keys:
// net_kind, lr, adam_beta1, adam_beta2, adam_eps, batch, patch, iterations,
// lambda_g, lambda_w, loss_terms (comma list of ed, eg, ew), d_max, seed,
// checkpoint_every, gamma, held_out ("p:q" list). Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string to_text(const TrainConfig& config);

struct TrainLogRecord {
  std::size_t iteration = 0;
  LossBreakdown loss;
  double beta = 0.0;  // NaN for kinds without a selection network
  std::map<std::string, double> grad_norms;  // L2 norm per parameter group
  double wall_seconds = 0.0;
};

std::string to_json_line(const TrainLogRecord& record);

struct TrainOptions {
  // Checkpoints (checkpoint_<iter>.lfck, best.lfck, last.lfck), log.jsonl and
  // config.txt land here when set.
  std::optional<std::filesystem::path> out_dir;
  // Continue from a checkpoint written by an earlier run.
  std::optional<std::filesystem::path> resume;
  // Called after every iteration.
  std::function<void(const TrainLogRecord&)> on_step;
  // Called every `probe_every` iterations with the current weights.
  std::size_t probe_every = 0;
  std::function<void(std::size_t iteration, ModelWeights<float>&)> on_probe;
  // Batch-norm statistics are re-estimated before every checkpoint and at
  // the end (see recalibrate_norms). 0 keeps the momentum averages.
  std::size_t recalibration_passes = 24;
  std::size_t recalibration_batch = 8;
};

struct TrainResult {
  ModelWeights<float> weights;
  AdamState<float> adam;
  std::vector<TrainLogRecord> log;
  double best_loss = 0.0;
};

// sample -> synthesize -> loss -> backward -> ADAM, in 32-bit. Deterministic
// for a given config and dataset. Every light field must share the angular
// extent. Aborts with InvariantError on a non-finite loss.
TrainResult train(const std::vector<LightField>& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

// Batch of training examples as tensors.
struct Batch {
  std::array<Tensor<float>, 4> corners;
  Tensor<float> target;
  std::vector<ViewCoord> coords;
};

Batch draw_batch(const std::vector<LightField>& dataset, CounterRng& rng, std::size_t batch,
                 std::size_t patch, const std::vector<ViewCoord>& held_out);

// Replaces the running batch-norm statistics with the plain average over
// `passes` train-mode forwards of `batch` fresh patches at the current
// weights. The momentum averages lag the weights and, at small batch sizes,
// miss the variance between patches; both push eval-mode activations off
// the training distribution. Weights and the training sampler are untouched.
void recalibrate_norms(ModelWeights<float>& weights, const std::vector<LightField>& dataset,
                       const TrainConfig& config, std::size_t passes, std::size_t batch);

}  // namespace lfsynth
