#include "lfsynth/image.hpp"

#include <algorithm>

#include "lfsynth/error.hpp"

namespace lfsynth {

Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > img.height || x0 + w > img.width) {
    throw ShapeError("crop: window exceeds image bounds");
  }
  Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = img.data.data() + (c * img.height + y0 + y) * img.width + x0;
      std::copy(src, src + w, out.data.data() + (c * h + y) * w);
    }
  return out;
}

Image channel_slice(const Image& img, std::size_t first, std::size_t count) {
  if (first + count > img.channels) throw ShapeError("channel_slice: channels out of range");
  Image out(count, img.height, img.width);
  const auto begin = img.data.begin() + static_cast<std::ptrdiff_t>(first * img.plane_size());
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(count * img.plane_size()), out.data.begin());
  return out;
}

template <typename T>
Tensor<T> to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const Image& first = images.front();
  for (const Image& im : images) {
    if (!im.same_dims(first)) throw ShapeError("to_tensor: images differ in size");
  }
  const std::size_t per = first.data.size();
  std::vector<T> values(images.size() * per);
  for (std::size_t b = 0; b < images.size(); ++b)
    std::copy(images[b].data.begin(), images[b].data.end(), values.begin() + static_cast<std::ptrdiff_t>(b * per));
  return Tensor<T>(Shape{images.size(), first.channels, first.height, first.width},
                   std::move(values));
}

template <typename T>
Image to_image(const Tensor<T>& t, std::size_t b) {
  if (t.rank() != 4 || b >= t.dim(0)) throw ShapeError("to_image: expected [B,C,H,W] tensor");
  Image out(t.dim(1), t.dim(2), t.dim(3));
  const auto src = t.data().subspan(b * out.data.size(), out.data.size());
  std::transform(src.begin(), src.end(), out.data.begin(),
                 [](T v) { return static_cast<float>(v); });
  return out;
}

template Tensor<float> to_tensor<float>(std::span<const Image>);
template Tensor<double> to_tensor<double>(std::span<const Image>);
template Image to_image<float>(const Tensor<float>&, std::size_t);
template Image to_image<double>(const Tensor<double>&, std::size_t);

}  // namespace lfsynth
