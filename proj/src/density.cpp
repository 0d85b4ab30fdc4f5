#include "densforge/density.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "densforge/error.hpp"
#include "densforge/io.hpp"

namespace densforge {

void HeadPointSet::validate() const {
  if (image_height < 0 || image_width < 0) throw InvalidInput("negative image dimensions");
  for (const auto& p : points) {
    if (!(p.row >= 0.0 && p.row < image_height && p.col >= 0.0 && p.col < image_width))
      throw InvalidInput("head point (" + format_double(p.row) + ", " + format_double(p.col) +
                         ") outside " + std::to_string(image_height) + "x" +
                         std::to_string(image_width) + " image");
  }
}

void GaussianKernelSpec::validate() const {
  if (!(beta > 0.0)) throw ConfigError("kernel beta must be > 0");
  if (k_neighbors < 1) throw ConfigError("kernel k_neighbors must be >= 1");
  if (!(truncation_radius >= 2.0)) throw ConfigError("kernel truncation radius must be >= 2");
  if (!(sigma_fallback > 0.0)) throw ConfigError("kernel sigma_fallback must be > 0");
}

int snap(double coord) { return static_cast<int>(std::floor(coord + 0.5)); }

DotMap build_dot_map(const HeadPointSet& points) {
  points.validate();
  DotMap m{points.image_height, points.image_width,
           std::vector<int>(static_cast<std::size_t>(points.image_height) * points.image_width, 0)};
  for (const auto& p : points.points) {
    const int r = snap(p.row);
    const int c = snap(p.col);
    if (r >= m.height || c >= m.width)
      throw InvalidInput("head point (" + format_double(p.row) + ", " + format_double(p.col) +
                         ") rounds outside the image");
    ++m.grid[static_cast<std::size_t>(r) * m.width + c];
  }
  return m;
}

std::vector<double> mean_neighbor_distance(const HeadPointSet& points, int k_neighbors) {
  const std::size_t n = points.count();
  std::vector<double> result(n, 0.0);
  if (n < 2) return result;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_neighbors), n - 1);
  std::vector<double> dist;
  dist.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dr = points.points[i].row - points.points[j].row;
      const double dc = points.points[i].col - points.points[j].col;
      dist.push_back(std::sqrt(dr * dr + dc * dc));
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += dist[j];
    result[i] = sum / static_cast<double>(k);
  }
  return result;
}

std::vector<double> adaptive_sigma(const HeadPointSet& points, const GaussianKernelSpec& spec) {
  spec.validate();
  if (points.count() == 1) return {spec.sigma_fallback};
  std::vector<double> sigma = mean_neighbor_distance(points, spec.k_neighbors);
  for (double& s : sigma) s *= spec.beta;
  return sigma;
}

namespace {

// Below this sigma the kernel underflows on the pixel grid; the head collapses to a delta.
constexpr double kMinSigma = 1e-3;

void add_delta(DensityMap& z, const HeadPoint& p) {
  const int r = std::clamp(snap(p.row), 0, z.height - 1);
  const int c = std::clamp(snap(p.col), 0, z.width - 1);
  z.at(r, c) += 1.0;
}

}  // namespace

DensityMap render_density_map(const HeadPointSet& points, const GaussianKernelSpec& spec) {
  points.validate();
  DensityMap z(points.image_height, points.image_width);
  if (points.count() == 0) return z;
  const std::vector<double> sigma = adaptive_sigma(points, spec);

  std::vector<double> weights;
  for (std::size_t i = 0; i < points.count(); ++i) {
    const HeadPoint& p = points.points[i];
    const double s = sigma[i];
    if (s < kMinSigma) {
      add_delta(z, p);
      continue;
    }
    const double radius = spec.truncation_radius * s;
    const int r0 = std::max(0, static_cast<int>(std::ceil(p.row - radius)));
    const int r1 = std::min(z.height - 1, static_cast<int>(std::floor(p.row + radius)));
    const int c0 = std::max(0, static_cast<int>(std::ceil(p.col - radius)));
    const int c1 = std::min(z.width - 1, static_cast<int>(std::floor(p.col + radius)));
    if (r0 > r1 || c0 > c1) {
      add_delta(z, p);
      continue;
    }
    const int wh = r1 - r0 + 1;
    const int ww = c1 - c0 + 1;
    weights.assign(static_cast<std::size_t>(wh) * ww, 0.0);
    const double inv2s2 = 1.0 / (2.0 * s * s);
    double total = 0.0;
    for (int r = r0; r <= r1; ++r) {
      const double dr = r - p.row;
      for (int c = c0; c <= c1; ++c) {
        const double dc = c - p.col;
        const double w = std::exp(-(dr * dr + dc * dc) * inv2s2);
        weights[static_cast<std::size_t>(r - r0) * ww + (c - c0)] = w;
        total += w;
      }
    }
    if (!(total > 0.0)) {
      add_delta(z, p);
      continue;
    }
    const double scale = spec.normalize_per_head ? 1.0 / total : inv2s2 / M_PI;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        z.at(r, c) += weights[static_cast<std::size_t>(r - r0) * ww + (c - c0)] * scale;
  }
  return z;
}

double count_from_density(const DensityMap& z) {
  double sum = 0.0;
  for (double v : z.grid) sum += v;
  return sum;
}

DensityMap sum_pool(const DensityMap& z, int factor) {
  if (factor < 1 || z.height % factor != 0 || z.width % factor != 0)
    throw InvalidInput("density map " + std::to_string(z.height) + "x" + std::to_string(z.width) +
                       " not divisible by pooling factor " + std::to_string(factor));
  DensityMap out(z.height / factor, z.width / factor);
  for (int r = 0; r < z.height; ++r)
    for (int c = 0; c < z.width; ++c) out.at(r / factor, c / factor) += z.at(r, c);
  return out;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_dmap(const DensityMap& z) {
  std::string out = "DMAP1";
  put_u32(out, static_cast<std::uint32_t>(z.height));
  put_u32(out, static_cast<std::uint32_t>(z.width));
  out.reserve(out.size() + z.grid.size() * 4);
  for (double v : z.grid) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

DensityMap decode_dmap(const std::string& bytes) {
  if (bytes.size() < 13 || bytes.compare(0, 5, "DMAP1") != 0)
    throw InvalidInput("missing DMAP1 header");
  const std::uint32_t h = get_u32(bytes, 5);
  const std::uint32_t w = get_u32(bytes, 9);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 13 + 4 * n) throw InvalidInput("DMAP1 payload length mismatch");
  DensityMap z(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < n; ++i)
    z.grid[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, 13 + 4 * i)));
  return z;
}

void write_density(const std::filesystem::path& path, const DensityMap& z) {
  write_file_atomic(path, encode_dmap(z));
}

DensityMap read_density(const std::filesystem::path& path) {
  try {
    return decode_dmap(read_file(path));
  } catch (const InvalidInput& e) {
    throw IoError(path.string(), e.what());
  }
}

std::string encode_points(const HeadPointSet& points) {
  std::string out = std::to_string(points.count()) + "\n";
  for (const auto& p : points.points) out += format_double(p.row) + " " + format_double(p.col) + "\n";
  return out;
}

HeadPointSet decode_points(const std::string& text, int image_height, int image_width) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty point file");
  const long long count = parse_int(line, "head count");
  if (count < 0) throw InvalidInput("negative head count");
  HeadPointSet set;
  set.image_height = image_height;
  set.image_width = image_width;
  set.points.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw InvalidInput("point file ends before declared count");
    const auto space = line.find(' ');
    if (space == std::string::npos) throw InvalidInput("point line must be 'row col'");
    set.points.push_back({parse_double(std::string_view(line).substr(0, space), "row"),
                          parse_double(std::string_view(line).substr(space + 1), "col")});
  }
  set.validate();
  return set;
}

void write_points(const std::filesystem::path& path, const HeadPointSet& points) {
  write_file_atomic(path, encode_points(points));
}

HeadPointSet read_points(const std::filesystem::path& path, int image_height, int image_width) {
  try {
    return decode_points(read_file(path), image_height, image_width);
  } catch (const InvalidInput& e) {
    throw IoError(path.string(), e.what());
  }
}

}  // namespace densforge
