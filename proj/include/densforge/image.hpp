#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace densforge {

// Row-major, channel-interleaved image with intensities in [0, 1].
struct GrayImage {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, int c = 1, double fill = 0.0);

  std::size_t size() const { return pixels.size(); }
  double& at(int row, int col, int ch = 0) {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  double at(int row, int col, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
  bool same_shape(const GrayImage& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  // Throws InvalidInput when the buffer length or an intensity breaks the invariants.
  void validate() const;

  bool operator==(const GrayImage&) const = default;
};

// Binary PGM (P5) for one channel, PPM (P6) for three, maxval 255.
std::string encode_netpbm(const GrayImage& image);
GrayImage decode_netpbm(const std::string& bytes);

void write_image(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_image(const std::filesystem::path& path);

// round(i * 255) with clamping, the export quantizer.
unsigned char quantize(double intensity);

}  // namespace densforge
