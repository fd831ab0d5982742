#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace condisr {

/// 8-bit RGB image, interleaved rows (HWC).
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height*width*3
};

/// Decodes a PNG to 8-bit RGB; throws DataError naming the file on failure.
ImageU8 read_png(const std::string& path);

/// Writes 8-bit RGB with fixed settings so output bytes are reproducible.
void write_png(const std::string& path, const ImageU8& img);

}  // namespace condisr
