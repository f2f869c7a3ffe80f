#include "lfsynth/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lfsynth/error.hpp"
#include "lfsynth/random.hpp"

namespace lfsynth {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// RGB texture on a canvas padded by `margin` pixels around the frame.
struct Canvas {
  std::size_t height = 0;
  std::size_t width = 0;
  double margin = 0.0;
  std::vector<float> rgb;  // CHW

  float sample(std::size_t c, double y, double x) const {
    y += margin;
    x += margin;
    const double fy = std::floor(y), fx = std::floor(x);
    const double ty = y - fy, tx = x - fx;
    const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
    const std::size_t y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
    const float* p = rgb.data() + c * height * width;
    const double top = p[y0 * width + x0] * (1.0 - tx) + p[y0 * width + x1] * tx;
    const double bottom = p[y1 * width + x0] * (1.0 - tx) + p[y1 * width + x1] * tx;
    return static_cast<float>(top * (1.0 - ty) + bottom * ty);
  }
};

std::vector<double> blur_1d(const std::vector<double>& src, std::size_t h, std::size_t w,
                            const std::vector<double>& kernel, bool along_rows) {
  const auto r = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::vector<double> out(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        // Reflecting boundary keeps the statistics uniform up to the edge.
        auto reflect = [](std::ptrdiff_t i, std::size_t n) {
          const auto m = static_cast<std::ptrdiff_t>(n);
          while (i < 0 || i >= m) i = i < 0 ? -i - 1 : 2 * m - i - 1;
          return static_cast<std::size_t>(i);
        };
        const std::size_t yy = along_rows ? reflect(static_cast<std::ptrdiff_t>(y) + k, h) : y;
        const std::size_t xx = along_rows ? x : reflect(static_cast<std::ptrdiff_t>(x) + k, w);
        acc += kernel[static_cast<std::size_t>(k + r)] * src[yy * w + xx];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

Canvas make_canvas(const SceneSpec& spec, const SceneLayer& layer, std::uint64_t seed) {
  const double max_offset = static_cast<double>(spec.n) / 2.0;
  Canvas cv;
  cv.margin = std::ceil(std::abs(layer.disparity) * max_offset) + 2.0;
  const auto pad = static_cast<std::size_t>(cv.margin);
  cv.height = spec.height + 2 * pad + 1;
  cv.width = spec.width + 2 * pad + 1;
  cv.rgb.resize(3 * cv.height * cv.width);

  CounterRng rng(seed, layer.texture_seed);
  std::vector<double> kernel;
  if (spec.texture_sigma > 0.0) {
    const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * spec.texture_sigma));
    double total = 0.0;
    for (std::ptrdiff_t k = -r; k <= r; ++k) {
      kernel.push_back(std::exp(-0.5 * static_cast<double>(k * k) / (spec.texture_sigma * spec.texture_sigma)));
      total += kernel.back();
    }
    for (double& v : kernel) v /= total;
  }
  const std::size_t plane = cv.height * cv.width;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> noise(plane);
    for (double& v : noise) v = rng.uniform01();
    if (!kernel.empty()) {
      noise = blur_1d(noise, cv.height, cv.width, kernel, true);
      noise = blur_1d(noise, cv.height, cv.width, kernel, false);
    }
    double mean = 0.0, sq = 0.0;
    for (double v : noise) mean += v;
    mean /= static_cast<double>(plane);
    for (double v : noise) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(plane));
    // Per-layer base colour and contrast, so layers are distinguishable.
    const double base = rng.uniform(0.3, 0.7);
    const double amp = rng.uniform(0.08, 0.14);
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = base + amp * (noise[i] - mean) / (sd > 0.0 ? sd : 1.0);
      cv.rgb[c * plane + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return cv;
}

float quantize16(double v) {
  const double code = std::round(std::clamp(v, 0.0, 1.0) * 65535.0);
  return static_cast<float>(code) / 65535.0f;
}

// Front-most layer covering pixel (y, x) of the view at grid position (r, c).
std::size_t winner(const SceneSpec& spec, double r, double c, double y, double x) {
  const double m = static_cast<double>(spec.n) / 2.0;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    const SceneLayer& L = spec.layers[l];
    if (!L.region || L.region->contains(y + (m - r) * L.disparity, x + (m - c) * L.disparity)) return l;
  }
  return 0;
}

json layer_json(const SceneLayer& l) {
  json j = {{"texture_seed", l.texture_seed}, {"disparity", l.disparity}, {"region", nullptr}};
  if (l.region) {
    j["region"] = {{"y0", l.region->y0}, {"x0", l.region->x0},
                   {"height", l.region->height}, {"width", l.region->width}};
  }
  return j;
}

}  // namespace

void validate(const SceneSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("scene has no layers");
  if (spec.layers.front().region) throw ConfigError("scene background layer must be a full plane");
  if (spec.n == 0 || spec.height == 0 || spec.width == 0) throw ConfigError("scene has a zero extent");
  if (!(spec.texture_sigma >= 0.0)) throw ConfigError("texture_sigma must be >= 0");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const double d = spec.layers[i].disparity;
    const std::string who = "layer " + std::to_string(i);
    if (!std::isfinite(d) || std::abs(d) > spec.d_max)
      throw ConfigError(who + ": disparity " + format_sig(d) + " outside +-d_max = " + format_sig(spec.d_max));
    if (std::abs(d) * static_cast<double>(spec.n) >= static_cast<double>(std::min(spec.height, spec.width)))
      throw ConfigError(who + ": shift of " + format_sig(std::abs(d) * static_cast<double>(spec.n)) +
                        " px across the grid exceeds the frame");
    if (const auto& r = spec.layers[i].region; r && !(r->height > 0.0 && r->width > 0.0))
      throw ConfigError(who + ": empty region");
  }
}

std::string scene_to_json(const SceneSpec& spec, std::uint64_t seed) {
  json layers = json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_json(l));
  const json j = {{"n", spec.n},
                  {"height", spec.height},
                  {"width", spec.width},
                  {"d_max", spec.d_max},
                  {"texture_sigma", spec.texture_sigma},
                  {"seed", seed},
                  {"layers", layers}};
  return j.dump(2);
}

SceneSpec scene_from_json(const std::string& text, std::uint64_t* seed) {
  SceneSpec s;
  try {
    const json j = json::parse(text);
    s.n = j.at("n").get<std::size_t>();
    s.height = j.at("height").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.d_max = j.value("d_max", kPlenopticMaxDisparity);
    s.texture_sigma = j.value("texture_sigma", 3.0);
    if (seed) *seed = j.value("seed", std::uint64_t{0});
    for (const auto& lj : j.at("layers")) {
      SceneLayer l;
      l.texture_seed = lj.at("texture_seed").get<std::uint64_t>();
      l.disparity = lj.at("disparity").get<double>();
      if (lj.contains("region") && !lj.at("region").is_null()) {
        const json& r = lj.at("region");
        l.region = Rect{r.at("y0").get<double>(), r.at("x0").get<double>(),
                        r.at("height").get<double>(), r.at("width").get<double>()};
      }
      s.layers.push_back(l);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed scene description: ") + e.what());
  }
  validate(s);
  return s;
}

std::size_t GroundTruth::index(ViewCoord c) const {
  const auto e = static_cast<double>(n);
  if (c.p < 0 || c.q < 0 || c.p > e || c.q > e || c.p != std::floor(c.p) || c.q != std::floor(c.q))
    throw DomainError("ground truth exists only for integer grid positions");
  return static_cast<std::size_t>(c.p) * (n + 1) + static_cast<std::size_t>(c.q);
}

Image GroundTruth::occluded_band(ViewCoord c) const {
  const auto& masks = occlusion[index(c)];
  Image band = masks[0];
  for (std::size_t k = 1; k < 4; ++k)
    for (std::size_t i = 0; i < band.data.size(); ++i) band.data[i] = std::max(band.data[i], masks[k].data[i]);
  return band;
}

RegionMasks GroundTruth::regions(ViewCoord c) const { return {occluded_band(c), visible[index(c)]}; }

Image GroundTruth::injected_disparities(ViewCoord c) const {
  const Image& d = disparity[index(c)];
  Image out(4, d.height, d.width);
  for (std::size_t k = 0; k < 4; ++k)
    std::copy(d.data.begin(), d.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(k * d.data.size()));
  return out;
}

RenderedScene render_lightfield(const SceneSpec& spec, std::uint64_t seed) {
  validate(spec);
  const std::size_t g = spec.n + 1, h = spec.height, w = spec.width, hw = h * w;
  const double m = static_cast<double>(spec.n) / 2.0;
  std::vector<Canvas> canvases;
  for (const auto& l : spec.layers) canvases.push_back(make_canvas(spec, l, seed));

  std::vector<Image> views;
  GroundTruth gt;
  gt.n = spec.n;
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      Image view(3, h, w), disp(1, h, w), layer(1, h, w);
      const auto rd = static_cast<double>(r), cd = static_cast<double>(c);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const auto yd = static_cast<double>(y), xd = static_cast<double>(x);
          const std::size_t l = winner(spec, rd, cd, yd, xd);
          const double d = spec.layers[l].disparity;
          for (std::size_t ch = 0; ch < 3; ++ch)
            view.at(ch, y, x) = quantize16(canvases[l].sample(ch, yd + (m - rd) * d, xd + (m - cd) * d));
          disp.at(0, y, x) = static_cast<float>(d);
          layer.at(0, y, x) = static_cast<float>(l);
        }
      }
      views.push_back(std::move(view));
      gt.disparity.push_back(std::move(disp));
      gt.layer.push_back(std::move(layer));
    }
  }

  const auto corners = corner_coords(spec.n);
  for (std::size_t v = 0; v < g * g; ++v) {
    const double vr = static_cast<double>(v / g), vc = static_cast<double>(v % g);
    std::array<Image, 4> occ, oof;
    Image visible(1, h, w, 1.0f);
    for (std::size_t k = 0; k < 4; ++k) {
      occ[k] = Image(1, h, w);
      oof[k] = Image(1, h, w);
      for (std::size_t px = 0; px < hw; ++px) {
        const auto l = static_cast<std::size_t>(gt.layer[v].data[px]);
        const double d = spec.layers[l].disparity;
        const double y = static_cast<double>(px / w) + (corners[k].p - vr) * d;
        const double x = static_cast<double>(px % w) + (corners[k].q - vc) * d;
        if (y < 0.0 || x < 0.0 || y > static_cast<double>(h - 1) || x > static_cast<double>(w - 1)) {
          oof[k].data[px] = 1.0f;
          visible.data[px] = 0.0f;
        } else if (winner(spec, corners[k].p, corners[k].q, y, x) != l) {
          occ[k].data[px] = 1.0f;
          visible.data[px] = 0.0f;
        }
      }
    }
    gt.occlusion.push_back(std::move(occ));
    gt.out_of_frame.push_back(std::move(oof));
    gt.visible.push_back(std::move(visible));
  }
  return {LightField(g, g, std::move(views)), std::move(gt)};
}

SceneSpec constant_disparity_scene(std::size_t n, std::size_t size, double disparity) {
  SceneSpec s;
  s.n = n;
  s.height = s.width = size;
  s.d_max = std::max(kPlenopticMaxDisparity, std::abs(disparity));
  s.layers = {SceneLayer{1, disparity, std::nullopt}};
  return s;
}

SceneSpec occluder_scene(std::size_t n, std::size_t size, double background, double foreground,
                         double square) {
  SceneSpec s = constant_disparity_scene(n, size, background);
  s.d_max = std::max(s.d_max, std::abs(foreground));
  const double origin = (static_cast<double>(size) - square) / 2.0;
  s.layers.push_back(SceneLayer{2, foreground, Rect{origin, origin, square, square}});
  return s;
}

std::pair<std::optional<double>, std::optional<double>> occluded_band_mae(const Image& pred,
                                                                          const Image& gt,
                                                                          const RegionMasks& masks) {
  return {masked_mae100(pred, gt, masks.occluded), masked_mae100(pred, gt, masks.visible)};
}

void write_scene(const fs::path& dir, const SceneSpec& spec, std::uint64_t seed,
                 const RenderedScene& scene) {
  // Synthetic views need no tone correction: they are stored as rendered.
  save_lightfield(scene.lightfield, dir, 1.0, PngDepth::u16);
  const fs::path truth = dir / "ground_truth";
  fs::create_directories(truth);
  const std::size_t g = spec.n + 1;
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) {
      const ViewCoord vc{static_cast<double>(r), static_cast<double>(c)};
      const std::string tag = std::to_string(r) + "_" + std::to_string(c) + ".lfr";
      const std::size_t i = scene.truth.index(vc);
      write_raster(truth / ("disparity_" + tag), scene.truth.disparity[i]);
      write_raster(truth / ("visible_" + tag), scene.truth.visible[i]);
      write_raster(truth / ("occluded_" + tag), scene.truth.occluded_band(vc));
    }
  }
  std::ofstream os(dir / "scene.json");
  if (!os) throw LoadError("cannot write " + (dir / "scene.json").string());
  os << scene_to_json(spec, seed) << '\n';
}

std::optional<RenderedScene> load_scene_truth(const fs::path& dir) {
  const fs::path file = dir / "scene.json";
  if (!fs::exists(file)) return std::nullopt;
  std::ifstream is(file);
  std::stringstream ss;
  ss << is.rdbuf();
  std::uint64_t seed = 0;
  const SceneSpec spec = scene_from_json(ss.str(), &seed);
  return render_lightfield(spec, seed);
}

}  // namespace lfsynth
