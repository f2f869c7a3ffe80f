#include "lfsynth/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "lfsynth/error.hpp"
#include "lfsynth/pipeline.hpp"

namespace lfsynth {

namespace {

void same_dims(const Image& a, const Image& b, const char* who) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(who) + ": " + std::to_string(a.channels) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

double mse(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

std::vector<double> gaussian_window() {
  constexpr double sigma = 1.5;
  const int r = static_cast<int>(kSsimWindow / 2);
  std::vector<double> g(kSsimWindow * kSsimWindow);
  double total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      g[static_cast<std::size_t>((y + r) * static_cast<int>(kSsimWindow) + x + r)] = v;
      total += v;
    }
  for (double& v : g) v /= total;
  return g;
}

Image crop_border(const Image& img, std::size_t border) {
  if (border == 0) return img;
  if (2 * border >= img.height || 2 * border >= img.width)
    throw ConfigError("crop of " + std::to_string(border) + " px leaves an empty image");
  return crop(img, border, border, img.height - 2 * border, img.width - 2 * border);
}

double mean_of(const std::vector<EvalRow>& rows, double EvalRow::*field) {
  double s = 0.0;
  for (const auto& r : rows) s += r.*field;
  return s / static_cast<double>(rows.size());
}

std::optional<double> mean_of(const std::vector<EvalRow>& rows,
                              std::optional<double> EvalRow::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if ((r.*field).has_value()) {
      s += *(r.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

}  // namespace

double mae100(const Image& pred, const Image& gt) {
  same_dims(pred, gt, "mae100");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    s += std::abs(static_cast<double>(pred.data[i]) - gt.data[i]);
  return 100.0 * s / static_cast<double>(pred.data.size());
}

double psnr(const Image& pred, const Image& gt) {
  same_dims(pred, gt, "psnr");
  const double m = mse(pred, gt);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(m);
}

double ssim(const Image& pred, const Image& gt) {
  same_dims(pred, gt, "ssim");
  if (pred.height < kSsimWindow || pred.width < kSsimWindow) {
    throw ShapeError("ssim: image " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " is smaller than the 11x11 window");
  }
  static const std::vector<double> g = gaussian_window();
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const std::size_t oh = pred.height - kSsimWindow + 1, ow = pred.width - kSsimWindow + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < pred.channels; ++c) {
    double channel = 0.0;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t u = 0; u < kSsimWindow; ++u) {
          for (std::size_t v = 0; v < kSsimWindow; ++v) {
            const double w = g[u * kSsimWindow + v];
            const double a = pred.at(c, y + u, x + v), b = gt.at(c, y + u, x + v);
            ma += w * a;
            mb += w * b;
            saa += w * a * a;
            sbb += w * b * b;
            sab += w * a * b;
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        channel += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
    total += channel / static_cast<double>(oh * ow);
  }
  return total / static_cast<double>(pred.channels);
}

std::optional<double> masked_mae100(const Image& pred, const Image& gt, const Image& mask) {
  same_dims(pred, gt, "masked_mae100");
  if (mask.channels != 1 || mask.height != pred.height || mask.width != pred.width)
    throw ShapeError("masked_mae100: mask must be 1 x H x W");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t px = 0; px < mask.data.size(); ++px) {
    if (mask.data[px] == 0.0f) continue;
    for (std::size_t c = 0; c < pred.channels; ++c) {
      const std::size_t i = c * mask.data.size() + px;
      s += std::abs(static_cast<double>(pred.data[i]) - gt.data[i]);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return 100.0 * s / static_cast<double>(n);
}

std::string format_sig(double value, int digits) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return buf;
}

void EvalReport::aggregate() {
  if (rows.empty()) throw DomainError("evaluation produced no views");
  mean_mae = mean_of(rows, &EvalRow::mae);
  mean_psnr = mean_of(rows, &EvalRow::psnr);
  mean_ssim = mean_of(rows, &EvalRow::ssim);
  mean_occluded_mae = mean_of(rows, &EvalRow::occluded_mae);
  mean_visible_mae = mean_of(rows, &EvalRow::visible_mae);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "p,q,mae100,psnr,ssim,occluded_mae100,visible_mae100\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_sig(*v) : std::string(); };
  for (const auto& r : rows) {
    os << format_sig(r.coord.p) << ',' << format_sig(r.coord.q) << ',' << format_sig(r.mae) << ','
       << format_sig(r.psnr) << ',' << format_sig(r.ssim) << ',' << opt(r.occluded_mae) << ','
       << opt(r.visible_mae) << '\n';
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  // JSON has no infinity; identical views are reported as the string "inf".
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return format_sig(v);
  };
  auto opt = [&](const std::optional<double>& v) -> nlohmann::json {
    return v ? num(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j = {{"views", rows.size()},
                      {"mae100", num(mean_mae)},
                      {"psnr", num(mean_psnr)},
                      {"ssim", num(mean_ssim)},
                      {"occluded_mae100", opt(mean_occluded_mae)},
                      {"visible_mae100", opt(mean_visible_mae)}};
  return j.dump(2);
}

std::vector<EvalRow> EvalReport::row_slice(double p) const {
  std::vector<EvalRow> out;
  for (const auto& r : rows)
    if (r.coord.p == p) out.push_back(r);
  return out;
}

std::vector<EvalRow> EvalReport::diagonal_slice() const {
  std::vector<EvalRow> out;
  for (const auto& r : rows)
    if (r.coord.p == r.coord.q) out.push_back(r);
  return out;
}

EvalReport evaluate_grid(const LightField& lf, const Synthesizer& synth, const EvalOptions& options) {
  const std::size_t n = lf.angular_extent();
  if (n < 2) throw DomainError("evaluation needs at least a 3x3 grid");
  EvalReport report;
  for (const ViewCoord c : inbetween_coords(n)) {
    const Image pred = synth(c);
    const Image& truth = lf.view(static_cast<std::size_t>(c.p), static_cast<std::size_t>(c.q));
    const Image a = crop_border(pred, options.crop), b = crop_border(truth, options.crop);
    EvalRow row{c, mae100(a, b), psnr(a, b), ssim(a, b), std::nullopt, std::nullopt};
    if (options.regions) {
      if (const auto masks = options.regions(c)) {
        row.occluded_mae = masked_mae100(a, b, crop_border(masks->occluded, options.crop));
        row.visible_mae = masked_mae100(a, b, crop_border(masks->visible, options.crop));
      }
    }
    report.rows.push_back(row);
  }
  report.aggregate();
  return report;
}

template <typename T>
EvalReport evaluate_grid(ModelWeights<T>& weights, const LightField& lf, const EvalOptions& options) {
  const auto corners = corner_views(lf);
  const std::size_t n = lf.angular_extent();
  return evaluate_grid(
      lf,
      [&](ViewCoord c) {
        const auto r = synthesize_view(weights, corners, c, n);
        return to_image(r.predicted);
      },
      options);
}

template EvalReport evaluate_grid<float>(ModelWeights<float>&, const LightField&, const EvalOptions&);
template EvalReport evaluate_grid<double>(ModelWeights<double>&, const LightField&, const EvalOptions&);

}  // namespace lfsynth
