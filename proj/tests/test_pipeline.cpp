#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lfsynth/error.hpp"
#include "lfsynth/losses.hpp"
#include "lfsynth/pipeline.hpp"
#include "lfsynth/synthgen.hpp"

using namespace lfsynth;

namespace {

template <typename T>
Tensor<T> random_image(std::size_t b, std::size_t c, std::size_t h, std::size_t w, CounterRng& rng) {
  Tensor<T> t(Shape{b, c, h, w});
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform01());
  return t;
}

template <typename T>
std::array<Tensor<T>, 4> random_corners(std::size_t b, std::size_t h, std::size_t w, CounterRng& rng) {
  return {random_image<T>(b, 3, h, w, rng), random_image<T>(b, 3, h, w, rng),
          random_image<T>(b, 3, h, w, rng), random_image<T>(b, 3, h, w, rng)};
}

template <typename T>
std::array<Tensor<T>, 4> corner_tensors(const LightField& lf) {
  const auto c = corner_views(lf);
  return {to_tensor<T>(c[0]), to_tensor<T>(c[1]), to_tensor<T>(c[2]), to_tensor<T>(c[3])};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Warp, IdentityAtSourcePosition) {
  CounterRng rng(1);
  auto view = random_image<double>(1, 3, 6, 7, rng);
  auto d = random_image<double>(1, 1, 6, 7, rng);
  for (auto& v : d.mutable_data()) v = 8.0 * v - 4.0;
  auto out = warp_view(view, d, {6, 0}, {{6, 0}});
  EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), view.data().begin()));
}

TEST(Warp, IdentityAtZeroDisparity) {
  CounterRng rng(2);
  auto view = random_image<double>(2, 3, 5, 5, rng);
  Tensor<double> d(Shape{2, 1, 5, 5}, 0.0);
  auto out = warp_view(view, d, {0, 6}, {{2, 3}, {5.5, 0.25}});
  EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), view.data().begin()));
}

TEST(Warp, UnitDisparityShiftsDiagonally) {
  CounterRng rng(3);
  auto view = random_image<double>(1, 1, 6, 6, rng);
  Tensor<double> d(Shape{1, 1, 6, 6}, 1.0);
  auto out = warp_view(view, d, {0, 0}, {{1, 1}});
  for (std::size_t y = 1; y < 6; ++y)
    for (std::size_t x = 1; x < 6; ++x) EXPECT_EQ(out.at(0, 0, y, x), view.at(0, 0, y - 1, x - 1));
}

TEST(Warp, RowOffsetFollowsGridRows) {
  // A vertical ramp distinguishes the axes: moving the source one grid row
  // down must sample one image row further down.
  Tensor<double> view(Shape{1, 1, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) view.mutable_data()[i] = static_cast<double>(i / 5);
  Tensor<double> d(Shape{1, 1, 5, 5}, 1.0);
  auto out = warp_view(view, d, {2, 0}, {{1, 0}});
  EXPECT_EQ(out.at(0, 0, 2, 2), 3.0);
  auto same_row = warp_view(view, d, {1, 2}, {{1, 0}});
  EXPECT_EQ(same_row.at(0, 0, 2, 2), 2.0);
}

TEST(Synthesize, OneHotMaskAtCornerReturnsCorner) {
  auto w = make_model<double>(NetKind::plenoptic, 1);
  CounterRng rng(4);
  auto corners = random_corners<double>(1, 16, 16, rng);
  SynthesisOverrides<double> o;
  o.masks = Tensor<double>(Shape{1, 4, 16, 16}, 0.0);
  std::fill_n(o.masks.mutable_data().begin(), 256, 1.0);
  auto r = synthesize(w, corners, {{0, 0}}, 6, NormMode::eval, o);
  EXPECT_TRUE(std::equal(r.predicted.data().begin(), r.predicted.data().end(),
                         corners[0].data().begin()));
}

TEST(Synthesize, IdenticalCornersWithZeroDisparity) {
  auto w = make_model<double>(NetKind::plenoptic, 2);
  CounterRng rng(5);
  auto view = random_image<double>(1, 3, 16, 16, rng);
  SynthesisOverrides<double> o;
  o.disparities = Tensor<double>(Shape{1, 4, 16, 16}, 0.0);
  auto r = synthesize(w, {view, view, view, view}, {{2, 3}}, 6, NormMode::eval, o);
  EXPECT_LT(max_abs_diff(r.predicted.data(), view.data()), 1e-12);
}

TEST(Synthesize, InjectedGroundTruthReproducesTarget) {
  for (double disparity : {1.0, 2.0, 0.5, -1.25}) {
    auto scene = render_lightfield(constant_disparity_scene(6, 48, disparity), 3);
    auto w = make_model<double>(NetKind::plenoptic, 1);
    for (ViewCoord c : {ViewCoord{3, 2}, ViewCoord{1, 5}, ViewCoord{6, 3}}) {
      const std::size_t hw = 48 * 48;
      SynthesisOverrides<double> o;
      o.disparities = to_tensor<double>(scene.truth.injected_disparities(c));
      o.masks = Tensor<double>(Shape{1, 4, 48, 48}, 0.25);
      auto r = synthesize(w, corner_tensors<double>(scene.lightfield), {c}, 6, NormMode::eval, o);
      const Image pred = to_image(r.predicted);
      const Image& gt = scene.lightfield.view(static_cast<std::size_t>(c.p), static_cast<std::size_t>(c.q));
      const Image& vis = scene.truth.visible[scene.truth.index(c)];
      auto mae = masked_mae100(pred, gt, vis);
      ASSERT_TRUE(mae.has_value());
      EXPECT_LT(*mae, 0.5) << "d=" << disparity;
      if (std::floor(disparity) == disparity) {
        // Each warp alone matches the target on the all-visible pixels.
        for (std::size_t k = 0; k < 4; ++k)
          for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t px = 0; px < hw; ++px) {
              if (vis.data[px] == 0) continue;
              const double wv = r.warps.data()[(3 * k + ch) * hw + px];
              ASSERT_LT(std::abs(wv - gt.data[ch * hw + px]), 2.0 / 255.0);
            }
      }
    }
  }
}

TEST(Synthesize, RandomModelsSatisfyInvariants) {
  for (NetKind kind : {NetKind::plenoptic, NetKind::single_disparity, NetKind::no_selection,
                       NetKind::no_features}) {
    CounterRng rng(6);
    for (int trial = 0; trial < 3; ++trial) {
      auto w = make_model<double>(kind, 100 + trial);
      auto corners = random_corners<double>(2, 16, 16, rng);
      const std::vector<ViewCoord> coords{{rng.uniform(0, 6), rng.uniform(0, 6)},
                                          {rng.uniform(0, 6), rng.uniform(0, 6)}};
      auto r = synthesize(w, corners, coords, 6, NormMode::train);
      EXPECT_NO_THROW(verify_synthesis(r, w.d_max)) << to_string(kind);
      const std::size_t hw = 256;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t px = 0; px < hw; ++px) {
            double lo = 1e9, hi = -1e9;
            for (std::size_t k = 0; k < 4; ++k) {
              const double v = r.warps.data()[((b * 12) + 3 * k + ch) * hw + px];
              lo = std::min(lo, v);
              hi = std::max(hi, v);
            }
            const double p = r.predicted.data()[(b * 3 + ch) * hw + px];
            ASSERT_GE(p, lo - 1e-12);
            ASSERT_LE(p, hi + 1e-12);
          }
    }
  }
}

TEST(Synthesize, SingleDisparityBroadcastsOneMap) {
  auto w = make_model<float>(NetKind::single_disparity, 8);
  CounterRng rng(7);
  auto r = synthesize(w, random_corners<float>(1, 16, 16, rng), {{3, 3}}, 6, NormMode::eval);
  const auto d = r.disparities.data();
  for (std::size_t k = 1; k < 4; ++k)
    for (std::size_t px = 0; px < 256; ++px) EXPECT_EQ(d[k * 256 + px], d[px]);
}

TEST(Synthesize, NoSelectionUsesUniformMasks) {
  auto w = make_model<float>(NetKind::no_selection, 8);
  CounterRng rng(7);
  auto r = synthesize(w, random_corners<float>(1, 16, 16, rng), {{3, 3}}, 6, NormMode::eval);
  for (float v : r.masks.data()) EXPECT_EQ(v, 0.25f);
}

TEST(Synthesize, SingleCnnPredictsDirectly) {
  auto w = make_model<float>(NetKind::single_cnn, 8);
  CounterRng rng(7);
  auto r = synthesize(w, random_corners<float>(1, 16, 16, rng), {{3, 3}}, 6, NormMode::eval);
  EXPECT_EQ(r.predicted.shape(), (Shape{1, 3, 16, 16}));
  EXPECT_FALSE(r.masks.defined());
}

TEST(Synthesize, CoordinateOutsideSquareIsDomainError) {
  auto w = make_model<float>(NetKind::plenoptic, 1);
  CounterRng rng(8);
  auto corners = random_corners<float>(1, 16, 16, rng);
  EXPECT_THROW(synthesize(w, corners, {{7, 0}}, 6, NormMode::eval), DomainError);
  EXPECT_THROW(synthesize(w, corners, {{-0.5, 2}}, 6, NormMode::eval), DomainError);
}

TEST(Synthesize, EveryGroupReceivesGradient) {
  auto w = make_model<double>(NetKind::plenoptic, 9);
  CounterRng rng(9);
  auto corners = random_corners<double>(1, 16, 16, rng);
  auto gt = random_image<double>(1, 3, 16, 16, rng);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto r = synthesize(w, corners, {{2, 4}}, 6, NormMode::train);
    backward(loss_ed(r.predicted, gt), tape);
  }
  for (const auto& g : w.groups()) {
    double norm = 0.0;
    for (const auto& [name, t] : w.params)
      if (ModelWeights<double>::group_of(name) == g && t.has_grad())
        for (double v : t.grad()) norm += v * v;
    EXPECT_GT(norm, 0.0) << g;
  }
}

TEST(Wide, InvariantsWithLargeDisparityBound) {
  auto w = make_model<float>(NetKind::wide_baseline, 10);
  CounterRng rng(10);
  auto corners = random_corners<float>(1, 16, 16, rng);
  auto r = synthesize(w, corners, {{1, 1}}, 2, NormMode::eval);
  EXPECT_NO_THROW(verify_synthesis(r, 60.0));
  EXPECT_EQ(r.disparities_h.dim(1), 4u);
  EXPECT_EQ(r.warps_v.dim(1), 12u);
  SynthesisOverrides<float> o;
  o.masks = Tensor<float>(Shape{1, 4, 16, 16}, 0.0f);
  std::fill_n(o.masks.mutable_data().begin() + 3 * 256, 256, 1.0f);
  auto c = synthesize(w, corners, {{2, 2}}, 2, NormMode::eval, o);
  EXPECT_TRUE(std::equal(c.predicted.data().begin(), c.predicted.data().end(),
                         corners[3].data().begin()));
}

TEST(Wide, AveragingFusionEndToEnd) {
  auto w = make_model<double>(NetKind::wide_baseline, 11);
  auto& k0 = w.param("fusion.conv0.kernel");
  for (auto& v : k0.mutable_data()) v = 0.0;
  k0.mutable_data()[0 * 18 + 4] = 1.0;
  k0.mutable_data()[1 * 18 + 9 + 4] = 1.0;
  for (auto& v : w.param("fusion.conv0.bias").mutable_data()) v = 100.0;
  auto& k1 = w.param("fusion.conv1.kernel");
  for (auto& v : k1.mutable_data()) v = 0.0;
  k1.mutable_data()[0] = k1.mutable_data()[1] = 0.5;
  w.param("fusion.conv1.bias").mutable_data()[0] = -100.0;
  CounterRng rng(11);
  auto r = synthesize(w, random_corners<double>(1, 16, 16, rng), {{1, 0}}, 2, NormMode::eval);
  const auto d = r.disparities.data(), dh = r.disparities_h.data(), dv = r.disparities_v.data();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], 0.5 * (dh[i] + dv[i]), 1e-9);
}
