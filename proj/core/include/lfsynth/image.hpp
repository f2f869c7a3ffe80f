#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lfsynth/tensor.hpp"

namespace lfsynth {

// Planar (CHW) float image.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  std::size_t plane_size() const noexcept { return height * width; }
  bool same_dims(const Image& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image&) const = default;
};

// Crop of a spatial window [y0, y0+h) x [x0, x0+w).
Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);

// Channels [first, first+count).
Image channel_slice(const Image& img, std::size_t first, std::size_t count);

// Stacks equally sized images into a [B,C,H,W] tensor.
template <typename T>
Tensor<T> to_tensor(std::span<const Image> images);

template <typename T>
Tensor<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::span<const Image>(&image, 1));
}

// Batch element `b` of a [B,C,H,W] tensor.
template <typename T>
Image to_image(const Tensor<T>& t, std::size_t b = 0);

}  // namespace lfsynth
