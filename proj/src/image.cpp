#include "densforge/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "densforge/error.hpp"
#include "densforge/io.hpp"

namespace densforge {

GrayImage::GrayImage(int h, int w, int c, double fill) : height(h), width(w), channels(c) {
  if (h < 0 || w < 0 || (c != 1 && c != 3)) throw InvalidInput("bad image shape");
  pixels.assign(static_cast<std::size_t>(h) * w * c, fill);
}

void GrayImage::validate() const {
  if (height < 0 || width < 0 || (channels != 1 && channels != 3))
    throw InvalidInput("bad image shape");
  if (pixels.size() != static_cast<std::size_t>(height) * width * channels)
    throw InvalidInput("pixel buffer length does not match image shape");
  for (double p : pixels)
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("image intensity outside [0,1]");
}

unsigned char quantize(double intensity) {
  const double v = std::round(std::clamp(intensity, 0.0, 1.0) * 255.0);
  return static_cast<unsigned char>(v);
}

std::string encode_netpbm(const GrayImage& image) {
  image.validate();
  std::string out = image.channels == 1 ? "P5\n" : "P6\n";
  out += std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double p : image.pixels) out.push_back(static_cast<char>(quantize(p)));
  return out;
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char ch = bytes[pos];
    if (ch == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

}  // namespace

GrayImage decode_netpbm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw InvalidInput("not a binary PGM/PPM image");
  }
  const long long width = parse_int(next_token(bytes, pos), "image width");
  const long long height = parse_int(next_token(bytes, pos), "image height");
  const long long maxval = parse_int(next_token(bytes, pos), "image maxval");
  if (width < 0 || height < 0 || maxval != 255)
    throw InvalidInput("unsupported image header (maxval must be 255)");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(width * height * channels);
  if (bytes.size() < pos + n) throw InvalidInput("truncated image raster");
  GrayImage image(static_cast<int>(height), static_cast<int>(width), channels);
  for (std::size_t i = 0; i < n; ++i)
    image.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return image;
}

void write_image(const std::filesystem::path& path, const GrayImage& image) {
  write_file_atomic(path, encode_netpbm(image));
}

GrayImage read_image(const std::filesystem::path& path) {
  try {
    return decode_netpbm(read_file(path));
  } catch (const InvalidInput& e) {
    throw IoError(path.string(), e.what());
  }
}

}  // namespace densforge
