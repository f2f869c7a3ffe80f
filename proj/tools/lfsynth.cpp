// lfsynth: command-line front end for training, synthesis and evaluation.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lfsynth/checkpoint.hpp"
#include "lfsynth/error.hpp"
#include "lfsynth/gradcheck.hpp"
#include "lfsynth/image_io.hpp"
#include "lfsynth/lightfield.hpp"
#include "lfsynth/metrics.hpp"
#include "lfsynth/pipeline.hpp"
#include "lfsynth/synthgen.hpp"
#include "lfsynth/train.hpp"

namespace fs = std::filesystem;
using namespace lfsynth;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> datasets;
  std::string checkpoint;
  std::string out;
  double p = 0.0;
  double q = 0.0;
  std::optional<std::uint64_t> seed;
  bool dump_internals = false;
  bool wide = false;
  // gen-data
  std::string preset = "constant";
  double disparity = 1.0;
  double foreground = 3.0;
  std::size_t size = 64;
  std::size_t grid = 6;
  // gradcheck
  std::size_t instances = 20;
  // evaluate
  std::size_t crop = 0;
  double gamma = 0.4;
  // ablate
  std::string matrix = "architecture";
};

std::string sig(double v) { return format_sig(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw LoadError("cannot write " + path.string());
  os << text;
}

TrainConfig resolve_config(const Flags& f) {
  TrainConfig c = f.config.empty() ? TrainConfig{} : load_train_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.wide) c.net_kind = NetKind::wide_baseline;
  c.validate();
  return c;
}

std::vector<LightField> load_datasets(const Flags& f, double gamma) {
  if (f.datasets.empty()) throw ConfigError("--dataset is required");
  std::vector<LightField> out;
  for (const auto& d : f.datasets) out.push_back(load_lightfield(d, gamma));
  return out;
}

EvalOptions eval_options(const Flags& f, const fs::path& dataset,
                         std::optional<RenderedScene>& truth) {
  EvalOptions o;
  o.crop = f.crop;
  truth = load_scene_truth(dataset);
  if (truth) o.regions = [&truth](ViewCoord c) -> std::optional<RegionMasks> { return truth->truth.regions(c); };
  return o;
}

void print_summary(const std::string& label, const EvalReport& r) {
  std::printf("%-18s views %-3zu MAE100 %-8s PSNR %-8s SSIM %-8s", label.c_str(), r.rows.size(),
              sig(r.mean_mae).c_str(), sig(r.mean_psnr).c_str(), sig(r.mean_ssim).c_str());
  if (r.mean_occluded_mae) std::printf(" occl-MAE100 %-8s", sig(*r.mean_occluded_mae).c_str());
  std::printf("\n");
}

int cmd_gradcheck(const Flags& f) {
  GradcheckOptions o;
  o.instances = f.instances;
  o.seed = f.seed.value_or(0);
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(o)) {
    std::printf("%-22s max rel err %-10s probes %-5zu %s\n", r.name.c_str(), sig(r.max_rel_error).c_str(),
                r.probes, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

int cmd_gen_data(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  std::uint64_t seed = f.seed.value_or(0);
  SceneSpec spec;
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    if (!is) throw ConfigError("cannot read scene description " + f.config);
    std::stringstream ss;
    ss << is.rdbuf();
    std::uint64_t file_seed = 0;
    spec = scene_from_json(ss.str(), &file_seed);
    if (!f.seed) seed = file_seed;
  } else if (f.preset == "constant") {
    spec = constant_disparity_scene(f.grid, f.size, f.disparity);
  } else if (f.preset == "occluder") {
    spec = occluder_scene(f.grid, f.size, f.disparity, f.foreground, static_cast<double>(f.size) / 3.0);
  } else {
    throw ConfigError("unknown preset '" + f.preset + "' (constant, occluder)");
  }
  const RenderedScene scene = render_lightfield(spec, seed);
  write_scene(f.out, spec, seed, scene);
  std::printf("wrote %zux%zu views of %zux%zu to %s\n", spec.n + 1, spec.n + 1, spec.height, spec.width,
              f.out.c_str());
  return 0;
}

int cmd_train(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const TrainConfig c = resolve_config(f);
  const auto data = load_datasets(f, c.gamma);
  TrainOptions o;
  o.out_dir = f.out;
  if (!f.checkpoint.empty()) o.resume = f.checkpoint;
  const std::size_t every = std::max<std::size_t>(1, c.iterations / 20);
  o.on_step = [every](const TrainLogRecord& r) {
    if (r.iteration % every == 0)
      std::printf("iter %-7zu loss %-8s beta %-8s %ss\n", r.iteration, sig(r.loss.total).c_str(),
                  sig(r.beta).c_str(), sig(r.wall_seconds).c_str());
  };
  const TrainResult r = train(data, c, o);
  std::printf("done: %zu iterations, best window loss %s, checkpoints in %s\n", c.iterations,
              sig(r.best_loss).c_str(), f.out.c_str());
  return 0;
}

int cmd_synthesize(const Flags& f) {
  if (f.checkpoint.empty() || f.out.empty()) throw ConfigError("--checkpoint and --out are required");
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const LightField lf = load_datasets(f, f.gamma).front();
  const std::size_t n = lf.angular_extent();
  const ViewCoord coord{f.p, f.q};
  if (is_corner(coord, n))
    std::fprintf(stderr, "warning: (%s, %s) is an input corner; the output is its identity warp\n",
                 sig(f.p).c_str(), sig(f.q).c_str());
  else if (f.p != std::floor(f.p) || f.q != std::floor(f.q))
    std::fprintf(stderr, "warning: non-integer position; training only covers integer views\n");

  const auto r = synthesize_view(ck.weights, corner_views(lf), coord, n);
  verify_synthesis(r, ck.weights.d_max);
  fs::create_directories(f.out);
  write_png(fs::path(f.out) / "predicted.png", to_image(r.predicted));
  if (f.dump_internals && r.disparities.defined()) {
    const Image d = to_image(r.disparities), m = to_image(r.masks), w = to_image(r.warps);
    const char* tags[] = {"0_0", "0_N", "N_0", "N_N"};
    for (std::size_t k = 0; k < 4; ++k) {
      const fs::path dir(f.out);
      write_raster(dir / ("disparity_" + std::string(tags[k]) + ".lfr"), channel_slice(d, k, 1));
      write_raster(dir / ("mask_" + std::string(tags[k]) + ".lfr"), channel_slice(m, k, 1));
      write_png(dir / ("warp_" + std::string(tags[k]) + ".png"), channel_slice(w, 3 * k, 3));
    }
  }
  const Manifest manifest = read_manifest(f.datasets.front());
  const nlohmann::json meta = {{"p", f.p},
                               {"q", f.q},
                               {"net_kind", std::string(to_string(ck.weights.kind))},
                               {"gamma", manifest.gamma_applied ? manifest.gamma : f.gamma},
                               {"checkpoint", f.checkpoint}};
  write_text(fs::path(f.out) / "metadata.json", meta.dump(2) + "\n");
  std::printf("wrote %s\n", (fs::path(f.out) / "predicted.png").c_str());
  return 0;
}

int cmd_evaluate(const Flags& f) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(f.checkpoint);
  const LightField lf = load_datasets(f, f.gamma).front();
  std::optional<RenderedScene> truth;
  const EvalReport r = evaluate_grid(ck.weights, lf, eval_options(f, f.datasets.front(), truth));
  print_summary(std::string(to_string(ck.weights.kind)), r);
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "report.csv", r.to_csv());
    write_text(fs::path(f.out) / "report.json", r.to_json() + "\n");
  }
  return 0;
}

int cmd_ablate(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const TrainConfig base = resolve_config(f);
  const auto data = load_datasets(f, base.gamma);
  std::vector<std::pair<std::string, TrainConfig>> variants;
  if (f.matrix == "loss") {
    for (const auto& [label, g, w] : std::vector<std::tuple<std::string, bool, bool>>{
             {"E_d", false, false}, {"E_d+E_g", true, false}, {"E_d+E_w", false, true}, {"E_d+E_g+E_w", true, true}}) {
      TrainConfig c = base;
      c.loss.gradient = g;
      c.loss.warp = w;
      variants.emplace_back(label, c);
    }
  } else if (f.matrix == "architecture") {
    for (NetKind k : {NetKind::plenoptic, NetKind::single_cnn, NetKind::single_disparity,
                      NetKind::no_selection, NetKind::no_features}) {
      TrainConfig c = base;
      c.net_kind = k;
      if (k == NetKind::single_cnn) c.loss.warp = false;
      variants.emplace_back(std::string(to_string(k)), c);
    }
  } else {
    throw ConfigError("unknown ablation matrix '" + f.matrix + "' (loss, architecture)");
  }

  std::ostringstream csv;
  csv << "variant,params,mae100,psnr,ssim,occluded_mae100\n";
  for (auto& [label, c] : variants) {
    TrainOptions o;
    o.out_dir = fs::path(f.out) / label;
    TrainResult tr = train(data, c, o);
    std::optional<RenderedScene> truth;
    const EvalReport r = evaluate_grid(tr.weights, data.front(), eval_options(f, f.datasets.front(), truth));
    print_summary(label, r);
    csv << label << ',' << tr.weights.parameter_count() << ',' << sig(r.mean_mae) << ','
        << sig(r.mean_psnr) << ',' << sig(r.mean_ssim) << ','
        << (r.mean_occluded_mae ? sig(*r.mean_occluded_mae) : "") << '\n';
  }
  write_text(fs::path(f.out) / "ablation.csv", csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Light-field view synthesis from four corner views"};
  app.require_subcommand(1);
  Flags f;

  auto common_dataset = [&](CLI::App* c) {
    c->add_option("--dataset", f.datasets, "Light-field dataset directory")->check(CLI::ExistingDirectory);
  };
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", f.seed, "Random seed");
  gradcheck->add_option("--instances", f.instances, "Random instances per op")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic light field with ground truth");
  gen->add_option("--config", f.config, "Scene description (scene.json format)")->check(CLI::ExistingFile);
  gen->add_option("--out", f.out, "Output dataset directory");
  gen->add_option("--seed", f.seed, "Texture seed");
  gen->add_option("--preset", f.preset, "constant or occluder (without --config)");
  gen->add_option("--disparity", f.disparity, "Background disparity, px per view step");
  gen->add_option("--foreground", f.foreground, "Occluder disparity (occluder preset)");
  gen->add_option("--size", f.size, "Spatial size in pixels")->check(CLI::PositiveNumber);
  gen->add_option("--grid", f.grid, "Angular extent N of the (N+1)x(N+1) grid")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", f.config, "Training config (key = value)")->check(CLI::ExistingFile);
  common_dataset(tr);
  tr->add_option("--out", f.out, "Run directory for checkpoints and log");
  tr->add_option("--checkpoint", f.checkpoint, "Resume from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--seed", f.seed, "Override the config seed");
  tr->add_flag("--wide", f.wide, "Train the wide-baseline model");

  auto* syn = app.add_subcommand("synthesize", "Synthesize one view");
  syn->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  common_dataset(syn);
  syn->add_option("--p", f.p, "Target row position (real)");
  syn->add_option("--q", f.q, "Target column position (real)");
  syn->add_option("--out", f.out, "Output directory");
  syn->add_flag("--dump-internals", f.dump_internals, "Also write disparities, masks and warps");
  syn->add_option("--gamma", f.gamma, "Gamma for datasets stored without correction");

  auto* ev = app.add_subcommand("evaluate", "Score every in-between view");
  ev->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  common_dataset(ev);
  ev->add_option("--out", f.out, "Directory for report.csv and report.json");
  ev->add_option("--crop", f.crop, "Border pixels excluded from the metrics");
  ev->add_option("--gamma", f.gamma, "Gamma for datasets stored without correction");

  auto* ab = app.add_subcommand("ablate", "Train and compare an ablation matrix");
  ab->add_option("--config", f.config, "Base training config")->check(CLI::ExistingFile);
  common_dataset(ab);
  ab->add_option("--out", f.out, "Output directory");
  ab->add_option("--seed", f.seed, "Override the config seed");
  ab->add_option("--matrix", f.matrix, "loss or architecture");
  ab->add_option("--crop", f.crop, "Border pixels excluded from the metrics");
  ab->add_flag("--wide", f.wide, "Use the wide-baseline model as the base");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(f);
    if (*gen) return cmd_gen_data(f);
    if (*tr) return cmd_train(f);
    if (*syn) return cmd_synthesize(f);
    if (*ev) return cmd_evaluate(f);
    if (*ab) return cmd_ablate(f);
  } catch (const UserError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
