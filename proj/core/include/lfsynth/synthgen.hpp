#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lfsynth/lightfield.hpp"
#include "lfsynth/metrics.hpp"

namespace lfsynth {

// Axis-aligned opaque region in layer coordinates, which coincide with pixel
// coordinates of the grid's central viewpoint.
struct Rect {
  double y0 = 0.0;
  double x0 = 0.0;
  double height = 0.0;
  double width = 0.0;
  bool contains(double y, double x) const noexcept {
    return y >= y0 && y < y0 + height && x >= x0 && x < x0 + width;
  }
};

struct SceneLayer {
  std::uint64_t texture_seed = 0;
  double disparity = 0.0;     // pixels per unit of angular offset
  std::optional<Rect> region;  // full plane when absent
};

// Fronto-parallel layers composited back to front: layers.front() is the
// background, layers.back() the closest surface.
struct SceneSpec {
  std::size_t n = 6;  // angular extent of the (n+1) x (n+1) grid
  std::size_t height = 64;
  std::size_t width = 64;
  double d_max = kPlenopticMaxDisparity;
  // Gaussian correlation length of the textures, in pixels.
  double texture_sigma = 3.0;
  std::vector<SceneLayer> layers;
};

// Throws ConfigError unless the scene is renderable: at least one layer, the
// first one a full plane, |disparity| <= d_max and shifts inside the frame.
void validate(const SceneSpec& spec);

std::string scene_to_json(const SceneSpec& spec, std::uint64_t seed);
SceneSpec scene_from_json(const std::string& text, std::uint64_t* seed = nullptr);

struct GroundTruth {
  std::size_t n = 0;
  // Per view, row-major over the grid, 1 x H x W.
  std::vector<Image> disparity;  // disparity of the surface seen at each pixel
  std::vector<Image> layer;      // index of that surface
  // occlusion[v][k]: pixels of view v whose surface is hidden behind another
  // layer in corner k. out_of_frame[v][k]: pixels whose surface falls outside
  // corner k's frame.
  std::vector<std::array<Image, 4>> occlusion;
  std::vector<std::array<Image, 4>> out_of_frame;
  // Pixels of view v whose surface every corner sees inside its frame.
  std::vector<Image> visible;

  std::size_t index(ViewCoord c) const;
  // Union of the four occlusion masks of view c.
  Image occluded_band(ViewCoord c) const;
  RegionMasks regions(ViewCoord c) const;
  // 4 x H x W: view c's disparity map repeated for each corner, i.e. the
  // disparities under which every visible pixel warps exactly.
  Image injected_disparities(ViewCoord c) const;
};

struct RenderedScene {
  LightField lightfield;
  GroundTruth truth;
};

// Renders every view by z-buffered compositing of shifted layers. View
// (r, c) samples a layer with disparity d at (y + (m - r) d, x + (m - c) d),
// m = n / 2. Values are quantized to 16-bit codes so the PNG dataset
// round-trips exactly.
RenderedScene render_lightfield(const SceneSpec& spec, std::uint64_t seed);

// Single full-plane layer with constant disparity.
SceneSpec constant_disparity_scene(std::size_t n, std::size_t size, double disparity);

// Background plane plus a centred square occluder.
SceneSpec occluder_scene(std::size_t n, std::size_t size, double background, double foreground,
                         double square);

// (occluded-band mae100, all-visible mae100); nullopt for an empty region.
std::pair<std::optional<double>, std::optional<double>> occluded_band_mae(
    const Image& pred, const Image& gt, const RegionMasks& masks);

// Dataset directory in the light-field format plus ground_truth/ rasters
// (disparity_R_C.lfr, visible_R_C.lfr, occluded_R_C.lfr) and scene.json.
void write_scene(const std::filesystem::path& dir, const SceneSpec& spec, std::uint64_t seed,
                 const RenderedScene& scene);

// Reads scene.json next to a dataset and re-renders the ground truth.
std::optional<RenderedScene> load_scene_truth(const std::filesystem::path& dir);

}  // namespace lfsynth
