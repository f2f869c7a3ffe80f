#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "lfsynth/image.hpp"
#include "lfsynth/image_io.hpp"
#include "lfsynth/random.hpp"

namespace lfsynth {

// Angular position of a view. p indexes grid rows (vertical parallax) and
// q indexes grid columns (horizontal parallax). Inference accepts
// non-integer positions inside the corner square.
struct ViewCoord {
  double p = 0.0;
  double q = 0.0;
  bool operator==(const ViewCoord&) const = default;
};

struct CoordinatePlanes {
  Image P;  // 1 x H x W, constant p
  Image Q;  // 1 x H x W, constant q
};

CoordinatePlanes make_planes(ViewCoord coord, std::size_t height, std::size_t width);

// [B,1,H,W] constant planes for a batch of coordinates (P when `rows` is
// true, Q otherwise).
template <typename T>
Tensor<T> plane_tensor(const std::vector<ViewCoord>& coords, bool rows, std::size_t height,
                       std::size_t width);

// Grid of co-registered RGB views with values in [0,1].
class LightField {
 public:
  LightField() = default;
  // `views` is row-major: views[row * cols + col].
  LightField(std::size_t rows, std::size_t cols, std::vector<Image> views);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t height() const noexcept { return views_.empty() ? 0 : views_.front().height; }
  std::size_t width() const noexcept { return views_.empty() ? 0 : views_.front().width; }
  // N, for a square (N+1) x (N+1) grid.
  std::size_t angular_extent() const;

  const Image& view(std::size_t row, std::size_t col) const;
  const std::vector<Image>& views() const noexcept { return views_; }

  // Square n x n sub-grid starting at (row0, col0).
  LightField subgrid(std::size_t row0, std::size_t col0, std::size_t n) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Image> views_;
};

struct Manifest {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string file_pattern = "view_{row}_{col}.png";
  bool gamma_applied = false;
  // Exponent already baked into the stored values, when gamma_applied.
  double gamma = 1.0;
};

Manifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);
std::string view_filename(const std::string& pattern, std::size_t row, std::size_t col);

// Element-wise v -> v^gamma.
void apply_gamma(Image& image, double gamma);

// Loads `dir/manifest.json` and every view it names. Views are scaled to
// [0,1] and raised to `gamma` unless the manifest says the correction was
// already applied.
LightField load_lightfield(const std::filesystem::path& dir, double gamma = 0.4);

// Writes views as PNG (16-bit by default) plus a manifest with
// gamma_applied = true and the recorded gamma.
void save_lightfield(const LightField& lf, const std::filesystem::path& dir, double gamma,
                     PngDepth depth = PngDepth::u16);

// Corner views in model order (0,0), (0,N), (N,0), (N,N).
std::array<Image, 4> corner_views(const LightField& lf);
std::array<ViewCoord, 4> corner_coords(std::size_t n);
bool is_corner(ViewCoord coord, std::size_t n) noexcept;

// Integer positions of the grid that are not corners, row-major.
std::vector<ViewCoord> inbetween_coords(std::size_t n);

struct TrainingExample {
  std::array<Image, 4> corners;
  Image target;
  ViewCoord coord;
  std::size_t y0 = 0;
  std::size_t x0 = 0;
};

// Draws a non-corner integer (p,q) uniformly, minus any `excluded` positions,
// then one patch x patch window shared by the corners and the target.
TrainingExample sample_training_example(const LightField& lf, CounterRng& rng, std::size_t patch,
                                        const std::vector<ViewCoord>& excluded = {});

}  // namespace lfsynth
