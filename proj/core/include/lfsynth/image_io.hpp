#pragma once

#include <filesystem>

#include "lfsynth/image.hpp"

namespace lfsynth {

// Decodes an 8- or 16-bit PNG into RGB values in [0,1]. Grey inputs are
// expanded to three channels, alpha is dropped.
Image read_png(const std::filesystem::path& path);

enum class PngDepth { u8 = 8, u16 = 16 };

// Writes a 1- or 3-channel image, clamping values to [0,1] and rounding to
// the nearest code.
void write_png(const std::filesystem::path& path, const Image& image,
               PngDepth depth = PngDepth::u16);

// Float raster: "LFRF" magic, uint32 channels, height, width (little
// endian), then channels*height*width little-endian float32 values in CHW
// order.
void write_raster(const std::filesystem::path& path, const Image& image);
Image read_raster(const std::filesystem::path& path);

}  // namespace lfsynth
