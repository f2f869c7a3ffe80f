#include "lfsynth/ops.hpp"

#include <Eigen/Core>
#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lfsynth/error.hpp"

namespace lfsynth {
namespace {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// OpenBLAS 0.3.20 picks a Cooperlake DGEMM kernel on AVX-512 BF16 machines that
// returns wrong products, so the float64 path (used by gradient checks) goes
// through Eigen instead.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
          int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  Eigen::Map<Mat, 0, Stride> cm(c, m, n, Stride(ldc));
  if (beta == 0.0) cm.setZero();
  else if (beta != 1.0) cm *= beta;
  const Eigen::Map<const Mat, 0, Stride> am(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
  const Eigen::Map<const Mat, 0, Stride> bm(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
  if (trans_a && trans_b) cm.noalias() += alpha * am.transpose() * bm.transpose();
  else if (trans_a) cm.noalias() += alpha * am.transpose() * bm;
  else if (trans_b) cm.noalias() += alpha * am * bm.transpose();
  else cm.noalias() += alpha * am * bm;
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

template <typename T>
void require_rank4(const Tensor<T>& t, const char* op) {
  if (!t.defined() || t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected a [B,C,H,W] tensor, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width, k, dilation;
  std::ptrdiff_t pad;
};

// Lays out the dilated k x k neighbourhoods of one image as rows of `col`:
// col[(c*k + ki)*k + kj][y*W + x] = img[c][y + ki*r - pad][x + kj*r - pad].
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const std::size_t hw = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* dst = col + ((c * g.k + ki) * g.k + kj) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki * g.dilation) - g.pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj * g.dilation) - g.pad;
        const std::ptrdiff_t x_lo = std::clamp<std::ptrdiff_t>(-dx, 0, w);
        const std::ptrdiff_t x_hi = std::clamp<std::ptrdiff_t>(w - dx, 0, w);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          T* row = dst + y * w;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(row, row + w, T{0});
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(sy)) * g.width;
          std::fill(row, row + x_lo, T{0});
          std::copy(src + x_lo + dx, src + x_hi + dx, row + x_lo);
          std::fill(row + x_hi, row + w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into the image gradient.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const std::size_t hw = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* src = col + ((c * g.k + ki) * g.k + kj) * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki * g.dilation) - g.pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj * g.dilation) - g.pad;
        const std::ptrdiff_t x_lo = std::clamp<std::ptrdiff_t>(-dx, 0, w);
        const std::ptrdiff_t x_hi = std::clamp<std::ptrdiff_t>(w - dx, 0, w);
        if (x_lo >= x_hi) continue;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* row = src + y * w;
          T* out = img + (c * g.height + static_cast<std::size_t>(sy)) * g.width + dx;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) out[x] += row[x];
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t dilation) {
  require_rank4(input, "conv2d");
  require_rank4(kernel, "conv2d kernel");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but kernel " +
                     shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  }
  if (k % 2 == 0 || kernel.dim(3) != k) {
    throw ShapeError("conv2d: kernel must be square with odd extent, got " +
                     shape_str(kernel.shape()));
  }
  if (dilation < 1) throw ShapeError("conv2d: dilation must be >= 1");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }

  const ConvGeometry geo{cin, h, w, k, dilation,
                         static_cast<std::ptrdiff_t>(dilation * (k - 1) / 2)};
  const std::size_t hw = h * w;
  const std::size_t ckk = cin * k * k;
  const bool pointwise = (k == 1);

  Tensor<T> out(Shape{batch, cout, h, w});
  {
    auto y = out.mutable_data();
    const auto x = input.data();
    const auto kw = kernel.data();
    std::vector<T> col(pointwise ? 0 : ckk * hw);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xb = x.data() + b * cin * hw;
      const T* src = xb;
      if (!pointwise) {
        im2col(xb, geo, col.data());
        src = col.data();
      }
      T* yb = y.data() + b * cout * hw;
      gemm(false, false, static_cast<int>(cout), static_cast<int>(hw), static_cast<int>(ckk),
           T{1}, kw.data(), static_cast<int>(ckk), src, static_cast<int>(hw), T{0}, yb,
           static_cast<int>(hw));
      if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t o = 0; o < cout; ++o) {
          T* row = yb + o * hw;
          const T bo = bv[o];
          for (std::size_t i = 0; i < hw; ++i) row[i] += bo;
        }
      }
    }
  }

  if (recording<T>({&input, &kernel, &bias})) {
    out.mark_op_output();
    active_tape<T>()->record(
        "conv2d", [input, kernel, bias, out, geo, batch, cin, cout, hw, ckk, pointwise]() mutable {
          const auto gy = out.grad();
          if (gy.empty()) return;
          const auto x = input.data();
          const auto kw = kernel.data();
          std::vector<T> col(pointwise ? 0 : ckk * hw);
          std::vector<T> dcol(pointwise ? 0 : ckk * hw);
          for (std::size_t b = 0; b < batch; ++b) {
            const T* gyb = gy.data() + b * cout * hw;
            const T* xb = x.data() + b * cin * hw;
            if (kernel.requires_grad()) {
              const T* src = xb;
              if (!pointwise) {
                im2col(xb, geo, col.data());
                src = col.data();
              }
              gemm(false, true, static_cast<int>(cout), static_cast<int>(ckk),
                   static_cast<int>(hw), T{1}, gyb, static_cast<int>(hw), src,
                   static_cast<int>(hw), T{1}, kernel.grad_buffer().data(),
                   static_cast<int>(ckk));
            }
            if (bias.defined() && bias.requires_grad()) {
              auto gb = bias.grad_buffer();
              for (std::size_t o = 0; o < cout; ++o) {
                const T* row = gyb + o * hw;
                gb[o] += std::accumulate(row, row + hw, T{0});
              }
            }
            if (input.requires_grad()) {
              T* gxb = input.grad_buffer().data() + b * cin * hw;
              if (pointwise) {
                gemm(true, false, static_cast<int>(cin), static_cast<int>(hw),
                     static_cast<int>(cout), T{1}, kw.data(), static_cast<int>(ckk), gyb,
                     static_cast<int>(hw), T{1}, gxb, static_cast<int>(hw));
              } else {
                gemm(true, false, static_cast<int>(ckk), static_cast<int>(hw),
                     static_cast<int>(cout), T{1}, kw.data(), static_cast<int>(ckk), gyb,
                     static_cast<int>(hw), T{0}, dcol.data(), static_cast<int>(hw));
                col2im_add(dcol.data(), geo, gxb);
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// avg_pool

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& input, std::size_t k) {
  require_rank4(input, "avg_pool");
  if (k < 1) throw ShapeError("avg_pool: kernel must be >= 1");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (k > h && k > w) {
    throw ShapeError("avg_pool: degenerate pooling, kernel " + std::to_string(k) +
                     " exceeds both spatial extents " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::size_t by = (h + k - 1) / k, bx = (w + k - 1) / k;

  // Visits each block with its pixel extent.
  auto for_blocks = [=](auto&& fn) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t iy = 0; iy < by; ++iy) {
        const std::size_t y0 = iy * k, y1 = std::min(h, y0 + k);
        for (std::size_t ix = 0; ix < bx; ++ix) {
          const std::size_t x0 = ix * k, x1 = std::min(w, x0 + k);
          fn(p * h * w, y0, y1, x0, x1);
        }
      }
    }
  };

  Tensor<T> out(input.shape());
  {
    const auto x = input.data();
    auto y = out.mutable_data();
    for_blocks([&](std::size_t base, std::size_t y0, std::size_t y1, std::size_t x0,
                   std::size_t x1) {
      T acc{0};
      for (std::size_t r = y0; r < y1; ++r)
        for (std::size_t c = x0; c < x1; ++c) acc += x[base + r * w + c];
      const T avg = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      for (std::size_t r = y0; r < y1; ++r)
        for (std::size_t c = x0; c < x1; ++c) y[base + r * w + c] = avg;
    });
  }

  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record("avg_pool", [input, out, for_blocks, w]() mutable {
      const auto gy = out.grad();
      if (gy.empty()) return;
      auto gx = input.grad_buffer();
      for_blocks([&](std::size_t base, std::size_t y0, std::size_t y1, std::size_t x0,
                     std::size_t x1) {
        T acc{0};
        for (std::size_t r = y0; r < y1; ++r)
          for (std::size_t c = x0; c < x1; ++c) acc += gy[base + r * w + c];
        const T share = acc / static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t r = y0; r < y1; ++r)
          for (std::size_t c = x0; c < x1; ++c) gx[base + r * w + c] += share;
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pointwise activations

namespace {

// Builds out = f(in) and, when recording, gx += gy * df(in, out).
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* name, const Tensor<T>& input, F f, DF df) {
  Tensor<T> out(input.shape());
  {
    const auto x = input.data();
    auto y = out.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  }
  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record(name, [input, out, df]() mutable {
      const auto gy = out.grad();
      if (gy.empty()) return;
      const auto x = input.data();
      const auto y = out.data();
      auto gx = input.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> elu(const Tensor<T>& input) {
  return unary<T>(
      "elu", input, [](T x) { return x > T{0} ? x : std::expm1(x); },
      [](T x, T y) { return x > T{0} ? T{1} : y + T{1}; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& input) {
  return unary<T>(
      "tanh", input, [](T x) { return std::tanh(x); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& input, T lo, T hi) {
  return unary<T>(
      "clamp", input, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x < lo || x > hi) ? T{0} : T{1}; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& input) {
  return unary<T>(
      "abs", input, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>(
      "scale", a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

// ---------------------------------------------------------------------------
// batch_norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, NormMode mode, double momentum, double eps) {
  require_rank4(input, "batch_norm");
  const std::size_t batch = input.dim(0), ch = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != ch || beta.numel() != ch) {
    throw ShapeError("batch_norm: affine parameters do not match " + std::to_string(ch) +
                     " channels");
  }
  if (!state.running_mean.defined()) state.running_mean = Tensor<T>(Shape{ch}, T{0});
  if (!state.running_var.defined()) state.running_var = Tensor<T>(Shape{ch}, T{1});
  if (state.running_mean.numel() != ch || state.running_var.numel() != ch) {
    throw ShapeError("batch_norm: running statistics do not match channel count");
  }
  const std::size_t count = batch * hw;
  if (mode == NormMode::train && count < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel");
  }

  const auto x = input.data();
  std::vector<T> mean_c(ch), invstd(ch);
  if (mode == NormMode::train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean_c[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[c] = static_cast<T>(momentum * rm[c] + (1.0 - momentum) * mu);
      rv[c] = static_cast<T>(momentum * rv[c] + (1.0 - momentum) * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      mean_c[c] = rm[c];
      invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + eps));
    }
  }

  Tensor<T> out(input.shape());
  {
    auto y = out.mutable_data();
    const auto g = gamma.data();
    const auto bt = beta.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t off = (b * ch + c) * hw;
        const T m = mean_c[c], is = invstd[c], gc = g[c], bc = bt[c];
        for (std::size_t i = 0; i < hw; ++i) y[off + i] = gc * ((x[off + i] - m) * is) + bc;
      }
    }
  }

  if (recording<T>({&input, &gamma, &beta})) {
    out.mark_op_output();
    active_tape<T>()->record("batch_norm", [input, gamma, beta, out, mean_c, invstd, mode, batch,
                                            ch, hw, count]() mutable {
      const auto gy = out.grad();
      if (gy.empty()) return;
      const auto x = input.data();
      const auto g = gamma.data();
      for (std::size_t c = 0; c < ch; ++c) {
        const T m = mean_c[c], is = invstd[c];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * ch + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * ((x[off + i] - m) * is);
          }
        }
        if (gamma.requires_grad()) gamma.grad_buffer()[c] += static_cast<T>(sum_gy_xhat);
        if (beta.requires_grad()) beta.grad_buffer()[c] += static_cast<T>(sum_gy);
        if (!input.requires_grad()) continue;
        auto gx = input.grad_buffer();
        const T scale_c = g[c] * is;
        if (mode == NormMode::eval) {
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * ch + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[off + i] += scale_c * gy[off + i];
          }
          continue;
        }
        const T mean_gy = static_cast<T>(sum_gy / static_cast<double>(count));
        const T mean_gy_xhat = static_cast<T>(sum_gy_xhat / static_cast<double>(count));
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t off = (b * ch + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (x[off + i] - m) * is;
            gx[off + i] += scale_c * (gy[off + i] - mean_gy - xhat * mean_gy_xhat);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax_beta

template <typename T>
Tensor<T> softmax_beta(const Tensor<T>& logits, const Tensor<T>& beta) {
  require_rank4(logits, "softmax_beta");
  if (beta.numel() != 1) throw ShapeError("softmax_beta: beta must be a scalar tensor");
  const std::size_t batch = logits.dim(0), ch = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  const T bv = beta.item();
  if (!std::isfinite(bv)) throw InvariantError("softmax_beta: beta is not finite");

  Tensor<T> out(logits.shape());
  {
    const auto v = logits.data();
    auto s = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        T zmax = bv * v[base + i];
        for (std::size_t c = 1; c < ch; ++c) zmax = std::max(zmax, bv * v[base + c * hw + i]);
        T denom{0};
        for (std::size_t c = 0; c < ch; ++c) {
          const T e = std::exp(bv * v[base + c * hw + i] - zmax);
          s[base + c * hw + i] = e;
          denom += e;
        }
        for (std::size_t c = 0; c < ch; ++c) s[base + c * hw + i] /= denom;
      }
    }
  }

  if (recording<T>({&logits, &beta})) {
    out.mark_op_output();
    active_tape<T>()->record("softmax_beta", [logits, beta, out, batch, ch, hw]() mutable {
      const auto gy = out.grad();
      if (gy.empty()) return;
      const auto v = logits.data();
      const auto s = out.data();
      const T bv = beta.item();
      std::span<T> gv;
      if (logits.requires_grad()) gv = logits.grad_buffer();
      double gbeta = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * ch * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          T dot{0};
          for (std::size_t c = 0; c < ch; ++c) dot += gy[base + c * hw + i] * s[base + c * hw + i];
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t j = base + c * hw + i;
            const T dz = s[j] * (gy[j] - dot);
            if (!gv.empty()) gv[j] += bv * dz;
            gbeta += dz * v[j];
          }
        }
      }
      if (beta.requires_grad()) beta.grad_buffer()[0] += static_cast<T>(gbeta);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bilinear_sample

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& x_coords,
                          const Tensor<T>& y_coords) {
  require_rank4(image, "bilinear_sample");
  require_rank4(x_coords, "bilinear_sample x");
  require_same_shape(x_coords, y_coords, "bilinear_sample coordinates");
  const std::size_t batch = image.dim(0), ch = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (x_coords.dim(0) != batch || x_coords.dim(1) != 1 || x_coords.dim(2) != h ||
      x_coords.dim(3) != w) {
    throw ShapeError("bilinear_sample: coordinates " + shape_str(x_coords.shape()) +
                     " do not match image " + shape_str(image.shape()));
  }
  const std::size_t hw = h * w;
  const T xmax = static_cast<T>(w - 1), ymax = static_cast<T>(h - 1);

  struct Tap {
    std::size_t i00, i01, i10, i11;
    T fx, fy;
    bool x_inside, y_inside;
  };
  auto tap_at = [=](T xc, T yc) {
    Tap t{};
    t.x_inside = xc >= T{0} && xc <= xmax;
    t.y_inside = yc >= T{0} && yc <= ymax;
    xc = std::clamp(xc, T{0}, xmax);
    yc = std::clamp(yc, T{0}, ymax);
    const auto x0 = static_cast<std::size_t>(std::floor(xc));
    const auto y0 = static_cast<std::size_t>(std::floor(yc));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    t.fx = xc - static_cast<T>(x0);
    t.fy = yc - static_cast<T>(y0);
    t.i00 = y0 * w + x0;
    t.i01 = y0 * w + x1;
    t.i10 = y1 * w + x0;
    t.i11 = y1 * w + x1;
    return t;
  };

  Tensor<T> out(image.shape());
  {
    const auto img = image.data();
    const auto xs = x_coords.data();
    const auto ys = y_coords.data();
    auto o = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < hw; ++i) {
        const Tap t = tap_at(xs[b * hw + i], ys[b * hw + i]);
        const T w00 = (T{1} - t.fy) * (T{1} - t.fx), w01 = (T{1} - t.fy) * t.fx;
        const T w10 = t.fy * (T{1} - t.fx), w11 = t.fy * t.fx;
        for (std::size_t c = 0; c < ch; ++c) {
          const T* p = img.data() + (b * ch + c) * hw;
          o[(b * ch + c) * hw + i] = w00 * p[t.i00] + w01 * p[t.i01] + w10 * p[t.i10] +
                                     w11 * p[t.i11];
        }
      }
    }
  }

  if (recording<T>({&image, &x_coords, &y_coords})) {
    out.mark_op_output();
    active_tape<T>()->record(
        "bilinear_sample", [image, x_coords, y_coords, out, tap_at, batch, ch, hw]() mutable {
          const auto gy = out.grad();
          if (gy.empty()) return;
          const auto img = image.data();
          const auto xs = x_coords.data();
          const auto ys = y_coords.data();
          std::span<T> gimg, gx, gyc;
          if (image.requires_grad()) gimg = image.grad_buffer();
          if (x_coords.requires_grad()) gx = x_coords.grad_buffer();
          if (y_coords.requires_grad()) gyc = y_coords.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < hw; ++i) {
              const Tap t = tap_at(xs[b * hw + i], ys[b * hw + i]);
              T dx{0}, dy{0};
              for (std::size_t c = 0; c < ch; ++c) {
                const std::size_t base = (b * ch + c) * hw;
                const T g = gy[base + i];
                const T* p = img.data() + base;
                if (!gimg.empty()) {
                  gimg[base + t.i00] += g * (T{1} - t.fy) * (T{1} - t.fx);
                  gimg[base + t.i01] += g * (T{1} - t.fy) * t.fx;
                  gimg[base + t.i10] += g * t.fy * (T{1} - t.fx);
                  gimg[base + t.i11] += g * t.fy * t.fx;
                }
                dx += g * ((T{1} - t.fy) * (p[t.i01] - p[t.i00]) + t.fy * (p[t.i11] - p[t.i10]));
                dy += g * ((T{1} - t.fx) * (p[t.i10] - p[t.i00]) + t.fx * (p[t.i11] - p[t.i01]));
              }
              if (!gx.empty() && t.x_inside) gx[b * hw + i] += dx;
              if (!gyc.empty() && t.y_inside) gyc[b * hw + i] += dy;
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise arithmetic

namespace {

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  Tensor<T> out(a.shape());
  {
    const auto x = a.data();
    const auto y = b.data();
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
  }
  if (recording<T>({&a, &b})) {
    out.mark_op_output();
    active_tape<T>()->record(name, [a, b, out, da, db]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      const auto x = a.data();
      const auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> mul_channels(const Tensor<T>& a, const Tensor<T>& m) {
  require_rank4(a, "mul_channels");
  require_rank4(m, "mul_channels mask");
  const std::size_t batch = a.dim(0), ch = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (m.dim(0) != batch || m.dim(1) != 1 || m.dim(2) != a.dim(2) || m.dim(3) != a.dim(3)) {
    throw ShapeError("mul_channels: mask " + shape_str(m.shape()) + " cannot broadcast over " +
                     shape_str(a.shape()));
  }
  Tensor<T> out(a.shape());
  {
    const auto x = a.data();
    const auto mv = m.data();
    auto o = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          o[(b * ch + c) * hw + i] = x[(b * ch + c) * hw + i] * mv[b * hw + i];
  }
  if (recording<T>({&a, &m})) {
    out.mark_op_output();
    active_tape<T>()->record("mul_channels", [a, m, out, batch, ch, hw]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      const auto x = a.data();
      const auto mv = m.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t i = 0; i < hw; ++i)
              ga[(b * ch + c) * hw + i] += g[(b * ch + c) * hw + i] * mv[b * hw + i];
      }
      if (m.requires_grad()) {
        auto gm = m.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t i = 0; i < hw; ++i)
              gm[b * hw + i] += g[(b * ch + c) * hw + i] * x[(b * ch + c) * hw + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_batch(const Tensor<T>& a, std::span<const T> factors) {
  if (a.rank() < 1 || factors.size() != a.dim(0)) {
    throw ShapeError("scale_batch: " + std::to_string(factors.size()) +
                     " factors for batch of " + shape_str(a.shape()));
  }
  const std::size_t per = a.numel() / a.dim(0);
  std::vector<T> f(factors.begin(), factors.end());
  Tensor<T> out(a.shape());
  {
    const auto x = a.data();
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f[i / per] * x[i];
  }
  if (recording<T>({&a})) {
    out.mark_op_output();
    active_tape<T>()->record("scale_batch", [a, out, f, per]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f[i / per] * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  for (const auto& p : parts) require_rank4(p, "concat_channels");
  const std::size_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(parts[0].shape()));
    }
    total += p.dim(1);
  }
  const std::size_t hw = h * w;
  Tensor<T> out(Shape{batch, total, h, w});
  {
    auto o = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t c0 = 0;
      for (const auto& p : parts) {
        const std::size_t pc = p.dim(1);
        const auto src = p.data().subspan(b * pc * hw, pc * hw);
        std::copy(src.begin(), src.end(), o.begin() + static_cast<std::ptrdiff_t>((b * total + c0) * hw));
        c0 += pc;
      }
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && active_tape<T>() != nullptr) {
    out.mark_op_output();
    active_tape<T>()->record("concat_channels", [parts, out, batch, total, hw]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      std::size_t c0 = 0;
      for (auto& p : parts) {
        const std::size_t pc = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < pc * hw; ++i)
              gp[b * pc * hw + i] += g[(b * total + c0) * hw + i];
        }
        c0 += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::size_t first, std::size_t count) {
  require_rank4(input, "slice_channels");
  const std::size_t batch = input.dim(0), ch = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (count == 0 || first + count > ch) {
    throw ShapeError("slice_channels: [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of range for " +
                     shape_str(input.shape()));
  }
  Tensor<T> out(Shape{batch, count, input.dim(2), input.dim(3)});
  {
    const auto x = input.data();
    auto o = out.mutable_data();
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((b * ch + first) * hw), count * hw,
                  o.begin() + static_cast<std::ptrdiff_t>(b * count * hw));
  }
  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record("slice_channels", [input, out, batch, ch, hw, first, count]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      auto gx = input.grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < count * hw; ++i)
          gx[(b * ch + first) * hw + i] += g[b * count * hw + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  const auto x = input.data();
  double acc = 0.0;
  for (T v : x) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record("sum", [input, out]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      auto gx = input.grad_buffer();
      for (auto& v : gx) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& input) {
  const auto x = input.data();
  if (x.empty()) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (T v : x) acc += v;
  const T n = static_cast<T>(x.size());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(x.size())));
  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record("mean", [input, out, n]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      auto gx = input.grad_buffer();
      const T share = g[0] / n;
      for (auto& v : gx) v += share;
    });
  }
  return out;
}

template <typename T>
Tensor<T> forward_diff(const Tensor<T>& input, Axis axis) {
  require_rank4(input, "forward_diff");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t step = axis == Axis::rows ? w : 1;
  auto has_next = [=](std::size_t y, std::size_t x) {
    return axis == Axis::rows ? y + 1 < h : x + 1 < w;
  };
  Tensor<T> out(input.shape());
  {
    const auto v = input.data();
    auto o = out.mutable_data();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = (p * h + y) * w + x;
          o[i] = has_next(y, x) ? v[i + step] - v[i] : T{0};
        }
  }
  if (recording<T>({&input})) {
    out.mark_op_output();
    active_tape<T>()->record("forward_diff", [input, out, planes, h, w, step, has_next]() mutable {
      const auto g = out.grad();
      if (g.empty()) return;
      auto gx = input.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = (p * h + y) * w + x;
            if (!has_next(y, x)) continue;
            gx[i + step] += g[i];
            gx[i] -= g[i];
          }
    });
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  const auto x = t.data();
  return std::all_of(x.begin(), x.end(), [](T v) { return std::isfinite(v); });
}

#define LFSYNTH_INSTANTIATE_OPS(T)                                                            \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                               std::size_t);                                                  \
  template Tensor<T> avg_pool<T>(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> elu<T>(const Tensor<T>&);                                                \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                               \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                        \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                   BatchNormState<T>&, NormMode, double, double);             \
  template Tensor<T> softmax_beta<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> bilinear_sample<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                           \
  template Tensor<T> mul_channels<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> scale_batch<T>(const Tensor<T>&, std::span<const T>);                    \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                       \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                \
  template Tensor<T> mean<T>(const Tensor<T>&);                                               \
  template Tensor<T> forward_diff<T>(const Tensor<T>&, Axis);                                 \
  template bool all_finite<T>(const Tensor<T>&);

LFSYNTH_INSTANTIATE_OPS(float)
LFSYNTH_INSTANTIATE_OPS(double)

#undef LFSYNTH_INSTANTIATE_OPS

}  // namespace lfsynth
