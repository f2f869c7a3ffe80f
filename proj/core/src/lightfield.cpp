#include "lfsynth/lightfield.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "lfsynth/error.hpp"

namespace lfsynth {

namespace fs = std::filesystem;
using nlohmann::json;

CoordinatePlanes make_planes(ViewCoord coord, std::size_t height, std::size_t width) {
  return {Image(1, height, width, static_cast<float>(coord.p)),
          Image(1, height, width, static_cast<float>(coord.q))};
}

template <typename T>
Tensor<T> plane_tensor(const std::vector<ViewCoord>& coords, bool rows, std::size_t height,
                       std::size_t width) {
  const std::size_t hw = height * width;
  std::vector<T> values(coords.size() * hw);
  for (std::size_t b = 0; b < coords.size(); ++b) {
    const T v = static_cast<T>(rows ? coords[b].p : coords[b].q);
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(b * hw), hw, v);
  }
  return Tensor<T>(Shape{coords.size(), 1, height, width}, std::move(values));
}

template Tensor<float> plane_tensor<float>(const std::vector<ViewCoord>&, bool, std::size_t,
                                           std::size_t);
template Tensor<double> plane_tensor<double>(const std::vector<ViewCoord>&, bool, std::size_t,
                                             std::size_t);

LightField::LightField(std::size_t rows, std::size_t cols, std::vector<Image> views)
    : rows_(rows), cols_(cols), views_(std::move(views)) {
  if (rows == 0 || cols == 0 || views_.size() != rows * cols) {
    throw ShapeError("light field: " + std::to_string(views_.size()) + " views for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  const Image& first = views_.front();
  for (std::size_t i = 0; i < views_.size(); ++i) {
    const Image& v = views_[i];
    if (v.channels != 3 || v.height != first.height || v.width != first.width) {
      throw ShapeError("light field: view (" + std::to_string(i / cols) + "," +
                       std::to_string(i % cols) + ") is " + std::to_string(v.channels) + "x" +
                       std::to_string(v.height) + "x" + std::to_string(v.width) +
                       ", expected 3x" + std::to_string(first.height) + "x" +
                       std::to_string(first.width));
    }
  }
}

std::size_t LightField::angular_extent() const {
  if (rows_ != cols_) {
    throw DomainError("light field: angular grid " + std::to_string(rows_) + "x" +
                      std::to_string(cols_) + " is not square");
  }
  return rows_ - 1;
}

const Image& LightField::view(std::size_t row, std::size_t col) const {
  if (row >= rows_ || col >= cols_) {
    throw DomainError("light field: view (" + std::to_string(row) + "," + std::to_string(col) +
                      ") outside the grid");
  }
  return views_[row * cols_ + col];
}

LightField LightField::subgrid(std::size_t row0, std::size_t col0, std::size_t n) const {
  if (row0 + n > rows_ || col0 + n > cols_ || n == 0) {
    throw DomainError("light field: sub-grid out of range");
  }
  std::vector<Image> views;
  views.reserve(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) views.push_back(view(row0 + r, col0 + c));
  return LightField(n, n, std::move(views));
}

std::string view_filename(const std::string& pattern, std::size_t row, std::size_t col) {
  std::string out = pattern;
  auto replace = [&out](const std::string& key, const std::string& value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
      out.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace("{row}", std::to_string(row));
  replace("{col}", std::to_string(col));
  return out;
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  std::ifstream is(file);
  if (!is) throw LoadError("missing manifest: " + file.string());
  Manifest m;
  try {
    const json j = json::parse(is);
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.file_pattern = j.at("file_pattern").get<std::string>();
    m.gamma_applied = j.at("gamma_applied").get<bool>();
    m.gamma = j.value("gamma", 1.0);
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + file.string() + ": " + e.what());
  }
  if (m.rows == 0 || m.cols == 0 || m.height == 0 || m.width == 0) {
    throw LoadError("malformed manifest " + file.string() + ": zero extent");
  }
  if (m.file_pattern.find("{row}") == std::string::npos ||
      m.file_pattern.find("{col}") == std::string::npos) {
    throw LoadError("malformed manifest " + file.string() +
                    ": file_pattern needs {row} and {col}");
  }
  return m;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  json j = {{"rows", m.rows},
            {"cols", m.cols},
            {"height", m.height},
            {"width", m.width},
            {"file_pattern", m.file_pattern},
            {"gamma_applied", m.gamma_applied},
            {"gamma", m.gamma}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw LoadError("cannot write manifest in " + dir.string());
  os << j.dump(2) << '\n';
}

void apply_gamma(Image& image, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  for (float& v : image.data) v = static_cast<float>(std::pow(static_cast<double>(v), gamma));
}

LightField load_lightfield(const fs::path& dir, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  const Manifest m = read_manifest(dir);
  std::vector<Image> views;
  views.reserve(m.rows * m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      const fs::path file = dir / view_filename(m.file_pattern, r, c);
      const std::string who = "view (" + std::to_string(r) + "," + std::to_string(c) + ")";
      if (!fs::exists(file)) throw LoadError("missing " + who + ": " + file.string());
      Image img;
      try {
        img = read_png(file);
      } catch (const LoadError& e) {
        throw LoadError(who + ": " + e.what());
      }
      if (img.height != m.height || img.width != m.width) {
        throw LoadError(who + " is " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + ", manifest says " +
                        std::to_string(m.height) + "x" + std::to_string(m.width));
      }
      if (!m.gamma_applied) apply_gamma(img, gamma);
      views.push_back(std::move(img));
    }
  }
  return LightField(m.rows, m.cols, std::move(views));
}

void save_lightfield(const LightField& lf, const fs::path& dir, double gamma, PngDepth depth) {
  fs::create_directories(dir);
  Manifest m;
  m.rows = lf.rows();
  m.cols = lf.cols();
  m.height = lf.height();
  m.width = lf.width();
  m.gamma_applied = true;
  m.gamma = gamma;
  for (std::size_t r = 0; r < lf.rows(); ++r)
    for (std::size_t c = 0; c < lf.cols(); ++c)
      write_png(dir / view_filename(m.file_pattern, r, c), lf.view(r, c), depth);
  write_manifest(dir, m);
}

std::array<ViewCoord, 4> corner_coords(std::size_t n) {
  const auto e = static_cast<double>(n);
  return {ViewCoord{0, 0}, ViewCoord{0, e}, ViewCoord{e, 0}, ViewCoord{e, e}};
}

bool is_corner(ViewCoord coord, std::size_t n) noexcept {
  const auto e = static_cast<double>(n);
  return (coord.p == 0.0 || coord.p == e) && (coord.q == 0.0 || coord.q == e);
}

std::array<Image, 4> corner_views(const LightField& lf) {
  const std::size_t n = lf.angular_extent();
  return {lf.view(0, 0), lf.view(0, n), lf.view(n, 0), lf.view(n, n)};
}

std::vector<ViewCoord> inbetween_coords(std::size_t n) {
  std::vector<ViewCoord> out;
  for (std::size_t p = 0; p <= n; ++p)
    for (std::size_t q = 0; q <= n; ++q) {
      const ViewCoord c{static_cast<double>(p), static_cast<double>(q)};
      if (!is_corner(c, n)) out.push_back(c);
    }
  return out;
}

TrainingExample sample_training_example(const LightField& lf, CounterRng& rng, std::size_t patch,
                                        const std::vector<ViewCoord>& excluded) {
  const std::size_t n = lf.angular_extent();
  if (patch == 0 || patch > std::min(lf.height(), lf.width())) {
    throw ConfigError("patch " + std::to_string(patch) + " does not fit a " +
                      std::to_string(lf.height()) + "x" + std::to_string(lf.width()) +
                      " light field");
  }
  std::vector<ViewCoord> pool = inbetween_coords(n);
  std::erase_if(pool, [&](const ViewCoord& c) {
    return std::find(excluded.begin(), excluded.end(), c) != excluded.end();
  });
  if (pool.empty()) {
    throw DomainError("light field with a " + std::to_string(n + 1) + "x" +
                      std::to_string(n + 1) + " grid has no trainable in-between views");
  }

  TrainingExample ex;
  ex.coord = pool[rng.uniform_index(pool.size())];
  ex.y0 = static_cast<std::size_t>(rng.uniform_index(lf.height() - patch + 1));
  ex.x0 = static_cast<std::size_t>(rng.uniform_index(lf.width() - patch + 1));
  const auto corners = corner_views(lf);
  for (std::size_t i = 0; i < 4; ++i) ex.corners[i] = crop(corners[i], ex.y0, ex.x0, patch, patch);
  ex.target = crop(lf.view(static_cast<std::size_t>(ex.coord.p), static_cast<std::size_t>(ex.coord.q)),
                   ex.y0, ex.x0, patch, patch);
  return ex;
}

}  // namespace lfsynth
