#include "lfsynth/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "lfsynth/error.hpp"
#include "lfsynth/metrics.hpp"
#include "lfsynth/pipeline.hpp"

namespace lfsynth {

namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double group_norm(const ModelWeights<float>& w, const std::string& group) {
  double s = 0.0;
  for (const auto& [name, t] : w.params) {
    if (ModelWeights<float>::group_of(name) != group) continue;
    for (float g : t.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (patch == 0) throw ConfigError("patch must be >= 1");
  if (!(loss.lambda_g >= 0.0) || !(loss.lambda_w >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (!(adam.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0,1)");
  if (!(adam.eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (d_max < 0.0) throw ConfigError("d_max must be >= 0");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
  if (loss.warp && (net_kind == NetKind::single_cnn))
    throw ConfigError("loss term ew needs warped views, which single_cnn does not produce");
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    if (key == "net_kind") c.net_kind = parse_net_kind(value);
    else if (key == "lr") c.adam.lr = parse_number<double>(key, value);
    else if (key == "adam_beta1") c.adam.beta1 = parse_number<double>(key, value);
    else if (key == "adam_beta2") c.adam.beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") c.adam.eps = parse_number<double>(key, value);
    else if (key == "batch") c.batch = parse_number<std::size_t>(key, value);
    else if (key == "patch") c.patch = parse_number<std::size_t>(key, value);
    else if (key == "iterations") c.iterations = parse_number<std::size_t>(key, value);
    else if (key == "lambda_g") c.loss.lambda_g = parse_number<double>(key, value);
    else if (key == "lambda_w") c.loss.lambda_w = parse_number<double>(key, value);
    else if (key == "d_max") c.d_max = parse_number<double>(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::size_t>(key, value);
    else if (key == "gamma") c.gamma = parse_number<double>(key, value);
    else if (key == "loss_terms") {
      c.loss.gradient = c.loss.warp = false;
      bool ed = false;
      for (const auto& t : split(value, ',')) {
        if (t == "ed") ed = true;
        else if (t == "eg") c.loss.gradient = true;
        else if (t == "ew") c.loss.warp = true;
        else throw ConfigError("unknown loss term '" + t + "' (expected ed, eg, ew)");
      }
      if (!ed) throw ConfigError("loss_terms must contain ed");
    } else if (key == "held_out") {
      c.held_out.clear();
      for (const auto& item : split(value, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("held_out entry '" + item + "' is not p:q");
        c.held_out.push_back({parse_number<double>(key, trim(item.substr(0, colon))),
                              parse_number<double>(key, trim(item.substr(colon + 1)))});
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_train_config(ss.str());
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "net_kind = " << to_string(c.net_kind) << '\n'
     << "lr = " << number(c.adam.lr) << '\n'
     << "adam_beta1 = " << number(c.adam.beta1) << '\n'
     << "adam_beta2 = " << number(c.adam.beta2) << '\n'
     << "adam_eps = " << number(c.adam.eps) << '\n'
     << "batch = " << c.batch << '\n'
     << "patch = " << c.patch << '\n'
     << "iterations = " << c.iterations << '\n'
     << "lambda_g = " << number(c.loss.lambda_g) << '\n'
     << "lambda_w = " << number(c.loss.lambda_w) << '\n'
     << "loss_terms = ed" << (c.loss.gradient ? ",eg" : "") << (c.loss.warp ? ",ew" : "") << '\n'
     << "d_max = " << number(c.d_max) << '\n'
     << "seed = " << c.seed << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "gamma = " << number(c.gamma) << '\n'
     << "held_out = ";
  for (std::size_t i = 0; i < c.held_out.size(); ++i)
    os << (i ? "," : "") << number(c.held_out[i].p) << ':' << number(c.held_out[i].q);
  os << '\n';
  return os.str();
}

std::string to_json_line(const TrainLogRecord& r) {
  nlohmann::json j = {{"iteration", r.iteration},
                      {"loss", r.loss.total},
                      {"ed", r.loss.ed},
                      {"eg", r.loss.eg},
                      {"ew", r.loss.ew},
                      {"directional", r.loss.directional},
                      {"beta", std::isfinite(r.beta) ? nlohmann::json(r.beta) : nlohmann::json(nullptr)},
                      {"grad_norms", r.grad_norms},
                      {"wall_seconds", r.wall_seconds}};
  return j.dump();
}

Batch draw_batch(const std::vector<LightField>& dataset, CounterRng& rng, std::size_t batch,
                 std::size_t patch, const std::vector<ViewCoord>& held_out) {
  std::array<std::vector<Image>, 4> corners;
  std::vector<Image> targets;
  Batch out;
  for (std::size_t b = 0; b < batch; ++b) {
    const LightField& lf = dataset[dataset.size() == 1 ? 0 : rng.uniform_index(dataset.size())];
    TrainingExample ex = sample_training_example(lf, rng, patch, held_out);
    for (std::size_t k = 0; k < 4; ++k) corners[k].push_back(std::move(ex.corners[k]));
    targets.push_back(std::move(ex.target));
    out.coords.push_back(ex.coord);
  }
  for (std::size_t k = 0; k < 4; ++k) out.corners[k] = to_tensor<float>(std::span<const Image>(corners[k]));
  out.target = to_tensor<float>(std::span<const Image>(targets));
  return out;
}

void recalibrate_norms(ModelWeights<float>& w, const std::vector<LightField>& dataset,
                       const TrainConfig& config, std::size_t passes, std::size_t batch) {
  if (passes == 0 || batch == 0 || w.norms.empty()) return;
  const std::size_t n = dataset.front().angular_extent();
  // A stream of its own, so recalibrating never shifts the training batches.
  CounterRng rng(config.seed, 2);
  NoGradScope<float> no_grad;
  w.norm_calls.emplace();
  for (std::size_t k = 0; k < passes; ++k) {
    const Batch b = draw_batch(dataset, rng, batch, config.patch, config.held_out);
    synthesize(w, b.corners, b.coords, n, NormMode::train);
  }
  w.norm_calls.reset();
}

TrainResult train(const std::vector<LightField>& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (dataset.empty()) throw ConfigError("training needs at least one light field");
  const std::size_t n = dataset.front().angular_extent();
  for (const auto& lf : dataset) {
    if (lf.angular_extent() != n) throw ConfigError("all light fields must share the angular grid");
    if (config.patch > std::min(lf.height(), lf.width()))
      throw ConfigError("patch " + std::to_string(config.patch) + " exceeds a " +
                        std::to_string(lf.height()) + "x" + std::to_string(lf.width()) + " light field");
  }

  TrainResult result;
  CounterRng sampler(config.seed, 1);
  std::size_t first = 0;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    if (ck.weights.kind != config.net_kind)
      throw ConfigError("checkpoint holds a " + std::string(to_string(ck.weights.kind)) +
                        " model, config asks for " + std::string(to_string(config.net_kind)));
    result.weights = std::move(ck.weights);
    result.adam = std::move(ck.adam);
    first = ck.meta.iteration;
    sampler.seek(ck.meta.sampler_counter);
  } else {
    result.weights = make_model<float>(config.net_kind, config.seed, config.effective_d_max());
  }

  std::ofstream log;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    std::ofstream(*options.out_dir / "config.txt") << to_text(config);
    log.open(*options.out_dir / "log.jsonl", first ? std::ios::app : std::ios::trunc);
    if (!log) throw ConfigError("cannot write training log in " + options.out_dir->string());
  }

  ModelWeights<float>& w = result.weights;
  const auto groups = w.groups();
  const auto start = std::chrono::steady_clock::now();
  double window_sum = 0.0;
  std::size_t window_n = 0;
  result.best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t it = first; it < config.iterations; ++it) {
    const Batch batch = draw_batch(dataset, sampler, config.batch, config.patch, config.held_out);
    TrainLogRecord rec;
    rec.iteration = it;
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const SynthesisResult<float> r = synthesize(w, batch.corners, batch.coords, n, NormMode::train);
      const Tensor<float> loss = loss_total(r, batch.target, config.loss, &rec.loss);
      if (!std::isfinite(rec.loss.total))
        throw InvariantError("non-finite training loss at iteration " + std::to_string(it));
      backward(loss, tape);
    }
    for (const auto& g : groups) rec.grad_norms[g] = group_norm(w, g);
    adam_step(w, result.adam, config.adam);
    w.zero_grad();
    rec.beta = w.has("beta") ? static_cast<double>(w.param("beta").item())
                             : std::numeric_limits<double>::quiet_NaN();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    window_sum += rec.loss.total;
    ++window_n;

    if (log) log << to_json_line(rec) << '\n';
    if (options.on_step) options.on_step(rec);
    result.log.push_back(rec);
    if (options.on_probe && options.probe_every > 0 && (it + 1) % options.probe_every == 0)
      options.on_probe(it + 1, w);

    const bool last = it + 1 == config.iterations;
    if ((it + 1) % config.checkpoint_every == 0 || last) {
      const double window = window_sum / static_cast<double>(window_n);
      window_sum = 0.0;
      window_n = 0;
      const CheckpointMeta meta{it + 1, window, sampler.counter()};
      const bool best = window < result.best_loss;
      if (best) result.best_loss = window;
      recalibrate_norms(w, dataset, config, options.recalibration_passes, options.recalibration_batch);
      if (options.out_dir) {
        const fs::path dir = *options.out_dir;
        save_checkpoint(dir / ("checkpoint_" + std::to_string(it + 1) + ".lfck"), w, result.adam, meta);
        if (best) save_checkpoint(dir / "best.lfck", w, result.adam, meta);
        if (last) save_checkpoint(dir / "last.lfck", w, result.adam, meta);
      }
    }
  }
  if (log) log.flush();
  return result;
}

}  // namespace lfsynth
