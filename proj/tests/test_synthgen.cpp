#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "lfsynth/error.hpp"
#include "lfsynth/synthgen.hpp"

using namespace lfsynth;
namespace fs = std::filesystem;

TEST(Render, ZeroDisparityViewsAreIdentical) {
  auto s = render_lightfield(constant_disparity_scene(6, 24, 0.0), 1);
  for (const auto& v : s.lightfield.views()) EXPECT_EQ(v, s.lightfield.view(0, 0));
  for (std::size_t i = 0; i < 49; ++i) {
    for (float m : s.truth.occluded_band({double(i / 7), double(i % 7)}).data) EXPECT_EQ(m, 0.0f);
  }
}

TEST(Render, UnitDisparityShiftsAcrossTheRow) {
  auto s = render_lightfield(constant_disparity_scene(6, 32, 1.0), 2);
  const Image& a = s.lightfield.view(0, 0);
  const Image& b = s.lightfield.view(0, 6);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 6; x < 32; ++x) ASSERT_EQ(b.at(c, y, x), a.at(c, y, x - 6));
  // The same shift runs down the columns of the grid.
  const Image& d = s.lightfield.view(6, 0);
  for (std::size_t y = 6; y < 32; ++y) ASSERT_EQ(d.at(1, y, 5), a.at(1, y - 6, 5));
}

TEST(Render, ValuesAreSixteenBitCodes) {
  auto s = render_lightfield(constant_disparity_scene(2, 16, 0.5), 3);
  for (const auto& v : s.lightfield.views())
    for (float x : v.data) {
      ASSERT_GE(x, 0.0f);
      ASSERT_LE(x, 1.0f);
      ASSERT_EQ(std::round(x * 65535.0f) / 65535.0f, x);
    }
}

TEST(Render, DeterministicUnderSeed) {
  auto spec = occluder_scene(4, 32, 0.5, 2.0, 10.0);
  auto a = render_lightfield(spec, 7), b = render_lightfield(spec, 7), c = render_lightfield(spec, 8);
  EXPECT_EQ(a.lightfield.views(), b.lightfield.views());
  EXPECT_NE(a.lightfield.views(), c.lightfield.views());
}

TEST(Render, OcclusionBandWidthFollowsShift) {
  auto s = render_lightfield(occluder_scene(6, 64, 0.0, 3.0, 24.0), 4);
  const auto& occ = s.truth.occlusion[s.truth.index({0, 0})];
  // Corner (0,6) sits six steps away: the background strip it loses is 18 px wide.
  std::size_t width = 0;
  for (std::size_t x = 0; x < 64; ++x) width += occ[1].at(0, 32, x) != 0.0f;
  EXPECT_EQ(width, 18u);
  // Corner (6,6): the same width along both axes.
  std::size_t rows = 0;
  for (std::size_t y = 0; y < 64; ++y) rows += occ[3].at(0, y, 32) != 0.0f;
  EXPECT_EQ(rows, 18u);
  for (float v : occ[0].data) EXPECT_EQ(v, 0.0f);
}

TEST(Render, OcclusionMatchesLayerReplay) {
  // A pixel is occluded for corner k exactly when the layer seen there in
  // corner k differs from the layer seen in the view itself.
  auto spec = occluder_scene(2, 32, 1.0, -2.0, 12.0);
  auto s = render_lightfield(spec, 5);
  const auto corners = corner_coords(2);
  for (std::size_t v = 0; v < 9; ++v) {
    const ViewCoord vc{double(v / 3), double(v % 3)};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& ck = corners[k];
      const Image& layers_k = s.truth.layer[s.truth.index(ck)];
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          const float l = s.truth.layer[v].at(0, y, x);
          const double d = spec.layers[static_cast<std::size_t>(l)].disparity;
          const double ys = y + (ck.p - vc.p) * d, xs = x + (ck.q - vc.q) * d;
          const bool out = ys < 0 || xs < 0 || ys > 31 || xs > 31;
          const bool occluded =
              !out && layers_k.at(0, static_cast<std::size_t>(ys), static_cast<std::size_t>(xs)) != l;
          ASSERT_EQ(s.truth.out_of_frame[v][k].at(0, y, x) != 0.0f, out);
          ASSERT_EQ(s.truth.occlusion[v][k].at(0, y, x) != 0.0f, occluded);
        }
    }
  }
}

TEST(Validate, RejectsBadScenes) {
  SceneSpec s = constant_disparity_scene(6, 32, 1.0);
  s.layers[0].disparity = 5.0;
  EXPECT_THROW(validate(s), ConfigError);
  s = constant_disparity_scene(6, 32, 4.0);
  s.height = s.width = 20;
  EXPECT_THROW(validate(s), ConfigError);
  s = occluder_scene(2, 32, 0.0, 1.0, 8.0);
  std::swap(s.layers[0], s.layers[1]);
  EXPECT_THROW(validate(s), ConfigError);
  s.layers.clear();
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(SceneJson, RoundTrips) {
  auto s = occluder_scene(4, 40, 0.25, -1.5, 12.0);
  s.texture_sigma = 2.0;
  std::uint64_t seed = 0;
  auto back = scene_from_json(scene_to_json(s, 99), &seed);
  EXPECT_EQ(seed, 99u);
  EXPECT_EQ(scene_to_json(back, 99), scene_to_json(s, 99));
  EXPECT_THROW(scene_from_json("{\"n\": 2}"), ConfigError);
}

TEST(OccludedBandMae, Definitional) {
  auto s = render_lightfield(occluder_scene(2, 32, 0.0, 2.0, 10.0), 6);
  const ViewCoord c{1, 1};
  const auto masks = s.truth.regions(c);
  const Image& gt = s.lightfield.view(1, 1);
  auto same = occluded_band_mae(gt, gt, masks);
  ASSERT_TRUE(same.first && same.second);
  EXPECT_EQ(*same.first, 0.0);
  EXPECT_EQ(*same.second, 0.0);
  Image pred = gt;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t px = 0; px < 32 * 32; ++px)
      if (masks.occluded.data[px] != 0.0f) pred.data[ch * 1024 + px] += 0.1f;
  auto off = occluded_band_mae(pred, gt, masks);
  EXPECT_NEAR(*off.first, 10.0, 1e-4);
  EXPECT_EQ(*off.second, 0.0);
  auto flat = render_lightfield(constant_disparity_scene(2, 32, 0.0), 6);
  EXPECT_FALSE(occluded_band_mae(gt, gt, flat.truth.regions(c)).first.has_value());
}

TEST(WriteScene, ReloadsWithTruth) {
  const fs::path dir = fs::temp_directory_path() / "lfsynth_scene_test";
  fs::remove_all(dir);
  auto spec = occluder_scene(2, 24, 0.0, 1.0, 8.0);
  auto s = render_lightfield(spec, 11);
  write_scene(dir, spec, 11, s);
  auto lf = load_lightfield(dir);
  EXPECT_EQ(lf.views(), s.lightfield.views());
  auto truth = load_scene_truth(dir);
  ASSERT_TRUE(truth.has_value());
  EXPECT_EQ(truth->truth.visible, s.truth.visible);
  EXPECT_EQ(read_raster(dir / "ground_truth" / "occluded_1_1.lfr"), s.truth.occluded_band({1, 1}));
  EXPECT_FALSE(load_scene_truth(fs::temp_directory_path() / "lfsynth_no_scene").has_value());
}
