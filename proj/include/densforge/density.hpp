#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace densforge {

struct HeadPoint {
  double row = 0.0;
  double col = 0.0;
  bool operator==(const HeadPoint&) const = default;
};

// Head annotations for one image, in pixel coordinates.
struct HeadPointSet {
  std::vector<HeadPoint> points;
  int image_height = 0;
  int image_width = 0;

  std::size_t count() const { return points.size(); }
  // Every point must lie inside [0, height) x [0, width).
  void validate() const;
  bool operator==(const HeadPointSet&) const = default;
};

struct DotMap {
  int height = 0;
  int width = 0;
  std::vector<int> grid;

  int at(int row, int col) const { return grid[static_cast<std::size_t>(row) * width + col]; }
};

struct DensityMap {
  int height = 0;
  int width = 0;
  std::vector<double> grid;

  DensityMap() = default;
  DensityMap(int h, int w, double fill = 0.0)
      : height(h), width(w), grid(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int row, int col) { return grid[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return grid[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const DensityMap&) const = default;
};

struct GaussianKernelSpec {
  double beta = 0.3;
  int k_neighbors = 3;
  double truncation_radius = 4.0;  // in multiples of sigma
  double sigma_fallback = 4.0;     // pixels, used when a head has no neighbors
  bool normalize_per_head = true;

  void validate() const;
  bool operator==(const GaussianKernelSpec&) const = default;
};

// Round-half-up pixel index used for every point-to-pixel snap.
int snap(double coord);

DotMap build_dot_map(const HeadPointSet& points);

// Mean Euclidean distance from each head to its min(k, c-1) nearest other heads.
std::vector<double> mean_neighbor_distance(const HeadPointSet& points, int k_neighbors);

std::vector<double> adaptive_sigma(const HeadPointSet& points, const GaussianKernelSpec& spec);

DensityMap render_density_map(const HeadPointSet& points, const GaussianKernelSpec& spec);

double count_from_density(const DensityMap& z);

// Sums factor x factor blocks; dimensions must be divisible by factor. Mass is preserved.
DensityMap sum_pool(const DensityMap& z, int factor);

// "DMAP1" binary density format: magic, u32le H, u32le W, H*W f32le row-major.
std::string encode_dmap(const DensityMap& z);
DensityMap decode_dmap(const std::string& bytes);
void write_density(const std::filesystem::path& path, const DensityMap& z);
DensityMap read_density(const std::filesystem::path& path);

// Text point format: count line, then "row col" per line.
std::string encode_points(const HeadPointSet& points);
HeadPointSet decode_points(const std::string& text, int image_height, int image_width);
void write_points(const std::filesystem::path& path, const HeadPointSet& points);
HeadPointSet read_points(const std::filesystem::path& path, int image_height, int image_width);

}  // namespace densforge
