#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lfsynth/image.hpp"
#include "lfsynth/lightfield.hpp"
#include "lfsynth/networks.hpp"

namespace lfsynth {

// 100 * mean |pred - gt| over all pixels and channels.
double mae100(const Image& pred, const Image& gt);

// 10 log10(1 / MSE) with peak 1; +infinity for identical images.
double psnr(const Image& pred, const Image& gt);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// L = 1, averaged over valid window positions and then over channels.
double ssim(const Image& pred, const Image& gt);

inline constexpr std::size_t kSsimWindow = 11;

// mae100 restricted to pixels where the single-channel `mask` is nonzero;
// nullopt when the mask is empty.
std::optional<double> masked_mae100(const Image& pred, const Image& gt, const Image& mask);

// Formats with `digits` significant digits; "inf" / "nan" for non-finite.
std::string format_sig(double value, int digits = 4);

struct RegionMasks {
  Image occluded;  // 1 x H x W, nonzero inside the occlusion band
  Image visible;   // 1 x H x W, nonzero where every corner sees the surface
};

struct EvalRow {
  ViewCoord coord;
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> occluded_mae;
  std::optional<double> visible_mae;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_mae = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::optional<double> mean_occluded_mae;
  std::optional<double> mean_visible_mae;

  // Recomputes the aggregates from rows; corner rows are never present.
  void aggregate();
  std::string to_csv() const;
  std::string to_json() const;
  // Rows with p == `p`, and rows with p == q.
  std::vector<EvalRow> row_slice(double p) const;
  std::vector<EvalRow> diagonal_slice() const;
};

struct EvalOptions {
  // Pixels dropped from every border before scoring.
  std::size_t crop = 0;
  // Ground-truth occlusion regions per target view, when known.
  std::function<std::optional<RegionMasks>(ViewCoord)> regions;
};

using Synthesizer = std::function<Image(ViewCoord)>;

// Scores every non-corner integer position of a square grid with at least
// 3x3 views against the stored view.
EvalReport evaluate_grid(const LightField& lf, const Synthesizer& synth,
                         const EvalOptions& options = {});

template <typename T>
EvalReport evaluate_grid(ModelWeights<T>& weights, const LightField& lf,
                         const EvalOptions& options = {});

}  // namespace lfsynth
