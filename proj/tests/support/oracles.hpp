#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library under test: inputs and outputs are plain vectors.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Planar CHW image of doubles.
struct Planar {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> v;
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return v[(ch * h + y) * w + x]; }
};

inline double mae100(const Planar& a, const Planar& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += std::fabs(a.v[i] - b.v[i]);
  return 100.0 * (s / static_cast<double>(a.v.size()));
}

inline double psnr(const Planar& a, const Planar& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const long double d = static_cast<long double>(a.v[i]) - b.v[i];
    s += d * d;
  }
  const double mse = static_cast<double>(s / a.v.size());
  return 10.0 * std::log10(1.0 / mse);
}

// Direct evaluation of the SSIM formula per window: weighted means,
// variances and covariance computed from their definitions.
inline double ssim(const Planar& a, const Planar& b) {
  const int size = 11;
  const double sigma = 1.5;
  std::vector<double> g(size * size);
  double norm = 0.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      const double dy = i - 5, dx = j - 5;
      g[i * size + j] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      norm += g[i * size + j];
    }
  const double C1 = 0.0001, C2 = 0.0009;
  double total = 0.0;
  for (std::size_t ch = 0; ch < a.c; ++ch) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + size <= a.h; ++y)
      for (std::size_t x = 0; x + size <= a.w; ++x) {
        double mu_a = 0, mu_b = 0;
        for (int i = 0; i < size; ++i)
          for (int j = 0; j < size; ++j) {
            const double wgt = g[i * size + j] / norm;
            mu_a += wgt * a.at(ch, y + i, x + j);
            mu_b += wgt * b.at(ch, y + i, x + j);
          }
        double var_a = 0, var_b = 0, cov = 0;
        for (int i = 0; i < size; ++i)
          for (int j = 0; j < size; ++j) {
            const double wgt = g[i * size + j] / norm;
            const double da = a.at(ch, y + i, x + j) - mu_a, db = b.at(ch, y + i, x + j) - mu_b;
            var_a += wgt * da * da;
            var_b += wgt * db * db;
            cov += wgt * da * db;
          }
        acc += (2 * mu_a * mu_b + C1) * (2 * cov + C2) /
               ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(a.c);
}

// Zero-padded dilated cross-correlation, [B,Cin,H,W] x [Cout,Cin,k,k].
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t B, std::size_t Cin,
                                  std::size_t H, std::size_t W, const std::vector<double>& k,
                                  std::size_t Cout, std::size_t K, const std::vector<double>& bias,
                                  std::size_t dil) {
  std::vector<double> out(B * Cout * H * W, 0.0);
  const long pad = static_cast<long>(dil * (K - 1) / 2);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (std::size_t i = 0; i < Cin; ++i)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v) {
                const long yy = static_cast<long>(y) + static_cast<long>(u * dil) - pad;
                const long xs = static_cast<long>(xx) + static_cast<long>(v * dil) - pad;
                if (yy < 0 || xs < 0 || yy >= static_cast<long>(H) || xs >= static_cast<long>(W)) continue;
                s += k[((o * Cin + i) * K + u) * K + v] *
                     x[((b * Cin + i) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xs)];
              }
          out[((b * Cout + o) * H + y) * W + xx] = s;
        }
  return out;
}

}  // namespace oracle
