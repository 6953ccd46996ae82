#include "bodycomp/image.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace bodycomp {
namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

// Reads one netpbm header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in) {
  std::string token;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  while (ch != EOF && !std::isspace(ch)) {
    token.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  // The single whitespace byte after the token is consumed here; after the
  // maxval token that byte is the header/raster separator.
  return token;
}

int parse_header_int(std::istream& in, const std::filesystem::path& path,
                     const char* field, int min_value, int max_value) {
  const std::string token = next_token(in);
  if (token.empty()) fail(path, std::string("missing ") + field + " in header");
  long value = 0;
  try {
    std::size_t used = 0;
    value = std::stol(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
  } catch (const std::exception&) {
    fail(path, std::string("invalid ") + field + " '" + token + "'");
  }
  if (value < min_value || value > max_value) {
    fail(path, std::string(field) + " out of range: " + std::to_string(value));
  }
  return static_cast<int>(value);
}

struct ParsedHeader {
  int width, height, channels;
  std::streamoff data_offset;
};

ParsedHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    fail(path, "unsupported magic '" + magic + "' (expected P5 or P6)");
  }
  const int width = parse_header_int(in, path, "width", 1, 1 << 24);
  const int height = parse_header_int(in, path, "height", 1, 1 << 24);
  const int maxval = parse_header_int(in, path, "maxval", 1,
                                      std::numeric_limits<int>::max());
  if (maxval != 255) {
    fail(path, "maxval must be 255, got " + std::to_string(maxval));
  }
  return {width, height, channels, in.tellg()};
}

}  // namespace

Image Image::make(int width, int height, int channels, std::uint8_t fill) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(
      static_cast<std::size_t>(width) * height * channels, fill);
  return img;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  const ParsedHeader header = parse_header(in, path);

  Image img;
  img.width = header.width;
  img.height = header.height;
  img.channels = header.channels;
  const std::size_t n_bytes = static_cast<std::size_t>(img.width) *
                              img.height * img.channels;
  img.pixels.resize(n_bytes);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(n_bytes));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got != n_bytes) {
    fail(path, "truncated pixel data: expected " + std::to_string(n_bytes) +
                   " bytes, got " + std::to_string(got));
  }
  return img;
}

ImageHeader read_image_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  const ParsedHeader header = parse_header(in, path);
  return {header.width, header.height, header.channels};
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) {
    fail(path, "image channels must be 1 or 3, got " +
                   std::to_string(img.channels));
  }
  if (img.width < 1 || img.height < 1) {
    fail(path, "image dimensions must be positive");
  }
  const std::size_t expected = static_cast<std::size_t>(img.width) *
                               img.height * img.channels;
  if (img.pixels.size() != expected) {
    fail(path, "pixel buffer length " + std::to_string(img.pixels.size()) +
                   " does not match " + std::to_string(expected));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open file for writing");
  out << (img.channels == 1 ? "P5" : "P6") << '\n'
      << img.width << ' ' << img.height << '\n'
      << "255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) fail(path, "write failed");
}

}  // namespace bodycomp
