#include "lfsynth/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "lfsynth/error.hpp"

namespace lfsynth {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw LoadError("cannot open " + path.string());

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw LoadError(path.string() + " is not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw LoadError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw LoadError("libpng initialisation failed");
  }

  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG data in " + path.string());
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth < 8) depth = 8;
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(3, height, width);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  if (depth == 16) {
    for (std::size_t y = 0; y < height; ++y) {
      const auto* row = reinterpret_cast<const std::uint16_t*>(buffer.data() + y * rowbytes);
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.data[c * plane + y * width + x] = static_cast<float>(row[x * 3 + c]) / 65535.0f;
    }
  } else {
    for (std::size_t y = 0; y < height; ++y) {
      const unsigned char* row = buffer.data() + y * rowbytes;
      for (std::size_t x = 0; x < width; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.data[c * plane + y * width + x] = static_cast<float>(row[x * 3 + c]) / 255.0f;
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image, PngDepth depth) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("write_png: expected 1 or 3 channels, got " +
                     std::to_string(image.channels));
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw LoadError("cannot create " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw LoadError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw LoadError("libpng initialisation failed");
  }

  const bool wide = depth == PngDepth::u16;
  const std::size_t w = image.width, h = image.height, ch = image.channels;
  const std::size_t bytes = wide ? 2 : 1;
  const double maxcode = wide ? 65535.0 : 255.0;
  std::vector<unsigned char> buffer(w * h * ch * bytes);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(c, y, x)), 0.0, 1.0);
        const auto code = static_cast<std::uint32_t>(std::lround(v * maxcode));
        const std::size_t i = ((y * w + x) * ch + c) * bytes;
        if (wide) {
          buffer[i] = static_cast<unsigned char>(code >> 8);  // PNG is big endian
          buffer[i + 1] = static_cast<unsigned char>(code & 0xff);
        } else {
          buffer[i] = static_cast<unsigned char>(code);
        }
      }
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * w * ch * bytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw LoadError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h),
               wide ? 16 : 8, ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_raster(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot create " + path.string());
  os.write("LFRF", 4);
  put_u32(os, static_cast<std::uint32_t>(image.channels));
  put_u32(os, static_cast<std::uint32_t>(image.height));
  put_u32(os, static_cast<std::uint32_t>(image.width));
  for (float v : image.data) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw LoadError("failed writing " + path.string());
}

Image read_raster(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "LFRF", 4) != 0) {
    throw LoadError(path.string() + " is not a float raster");
  }
  const std::uint32_t c = get_u32(is), h = get_u32(is), w = get_u32(is);
  Image img(c, h, w);
  for (float& v : img.data) v = std::bit_cast<float>(get_u32(is));
  if (!is) throw LoadError(path.string() + " is truncated");
  return img;
}

}  // namespace lfsynth
