#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bodycomp {

// 8-bit raster, row-major, channel-interleaved. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  static Image make(int width, int height, int channels, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

struct ImageHeader {
  int width = 0;
  int height = 0;
  int channels = 0;
};

// Reads a binary PGM ("P5") or PPM ("P6") file with maxval 255.
// Throws std::runtime_error naming the offending header field on malformed
// input and on truncated pixel data.
Image read_image(const std::filesystem::path& path);

// Header-only read; cheap way to learn dimensions without pixel I/O.
ImageHeader read_image_header(const std::filesystem::path& path);

// Writes binary PGM (1 channel) or PPM (3 channels) with the canonical
// header "P5\n<w> <h>\n255\n". read_image inverts it bit-exactly.
void write_image(const Image& img, const std::filesystem::path& path);

}  // namespace bodycomp
