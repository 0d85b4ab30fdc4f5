#include "densforge/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "densforge/dataset.hpp"
#include "densforge/error.hpp"
#include "densforge/parallel.hpp"
#include "densforge/random.hpp"

namespace densforge {

std::string to_string(Background background) {
  switch (background) {
    case Background::flat: return "flat";
    case Background::gradient: return "gradient";
    case Background::noise_texture: return "noise-texture";
  }
  return "unknown";
}

Background parse_background(const std::string& name) {
  if (name == "flat") return Background::flat;
  if (name == "gradient") return Background::gradient;
  if (name == "noise-texture" || name == "noise_texture") return Background::noise_texture;
  throw ConfigError("unknown background '" + name + "'");
}

void SceneSpec::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("scene dimensions must be positive");
  if (min_count < 0 || min_count > max_count) throw ConfigError("scene count range must satisfy 0 <= min <= max");
  if (!(min_head_spacing >= 1.0)) throw ConfigError("min_head_spacing must be >= 1");
  if (!(min_head_radius > 0.0) || min_head_radius > max_head_radius)
    throw ConfigError("head radius range must satisfy 0 < min <= max");
  if (!(noise_amplitude >= 0.0 && noise_amplitude <= 1.0)) throw ConfigError("noise_amplitude must lie in [0,1]");
}

std::size_t placement_capacity(const SceneSpec& spec) {
  const double s = spec.min_head_spacing;
  const double area = (spec.height - 1.0 + s) * (spec.width - 1.0 + s);
  const double packing = M_PI / (2.0 * std::sqrt(3.0));
  return static_cast<std::size_t>(std::floor(packing * area / (M_PI * s * s / 4.0)));
}

namespace {

void draw_background(GrayImage& img, const SceneSpec& spec, Rng& rng) {
  const double base = rng.uniform(0.5, 0.7);
  switch (spec.background) {
    case Background::flat:
      std::fill(img.pixels.begin(), img.pixels.end(), base);
      break;
    case Background::gradient: {
      const double angle = rng.uniform(0.0, 2.0 * M_PI);
      const double amp = rng.uniform(0.1, 0.3);
      const double norm = std::abs(std::cos(angle)) * img.width + std::abs(std::sin(angle)) * img.height;
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
          const double t = ((c - img.width / 2.0) * std::cos(angle) + (r - img.height / 2.0) * std::sin(angle)) / norm;
          img.at(r, c) = base + amp * t;
        }
      break;
    }
    case Background::noise_texture: {
      constexpr int kCells = 8;
      std::vector<double> lattice((kCells + 1) * (kCells + 1));
      for (double& v : lattice) v = rng.uniform(-0.15, 0.15);
      for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
          const double fy = static_cast<double>(r) / img.height * kCells;
          const double fx = static_cast<double>(c) / img.width * kCells;
          const int y0 = static_cast<int>(fy);
          const int x0 = static_cast<int>(fx);
          const double ty = fy - y0;
          const double tx = fx - x0;
          auto L = [&](int y, int x) { return lattice[y * (kCells + 1) + x]; };
          const double top = L(y0, x0) + (L(y0, x0 + 1) - L(y0, x0)) * tx;
          const double bot = L(y0 + 1, x0) + (L(y0 + 1, x0 + 1) - L(y0 + 1, x0)) * tx;
          img.at(r, c) = base + top + (bot - top) * ty;
        }
      break;
    }
  }
  for (double& p : img.pixels) p = std::clamp(p + spec.noise_amplitude * rng.uniform(-1.0, 1.0), 0.0, 1.0);
}

bool far_enough(const std::vector<HeadPoint>& placed, double row, double col, double spacing) {
  const double s2 = spacing * spacing;
  for (const auto& p : placed) {
    const double dr = p.row - row;
    const double dc = p.col - col;
    if (dr * dr + dc * dc < s2) return false;
  }
  return true;
}

void draw_head(GrayImage& img, const HeadPoint& p, double radius, double dark, double rim) {
  const int reach = static_cast<int>(std::ceil(radius + 1.0));
  const int r0 = std::max(0, static_cast<int>(p.row) - reach);
  const int r1 = std::min(img.height - 1, static_cast<int>(p.row) + reach + 1);
  const int c0 = std::max(0, static_cast<int>(p.col) - reach);
  const int c1 = std::min(img.width - 1, static_cast<int>(p.col) + reach + 1);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double d = std::hypot(r - p.row, c - p.col);
      if (d <= radius) {
        img.at(r, c) = dark;
      } else if (d <= radius + 1.0) {
        img.at(r, c) = rim;
      }
    }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_id) {
  spec.validate();
  Rng rng(hash64(spec.seed, scene_id));
  Scene scene;
  scene.image = GrayImage(spec.height, spec.width, 1);
  scene.heads.image_height = spec.height;
  scene.heads.image_width = spec.width;
  draw_background(scene.image, spec, rng);

  const auto target = static_cast<std::size_t>(rng.between(spec.min_count, spec.max_count));
  if (target > placement_capacity(spec))
    throw GenerationError(0, "cannot fit " + std::to_string(target) + " heads at spacing " +
                                 std::to_string(spec.min_head_spacing) + " in " +
                                 std::to_string(spec.height) + "x" + std::to_string(spec.width));
  auto& placed = scene.heads.points;
  placed.reserve(target);
  const std::size_t budget = 10 * target * 100;
  for (std::size_t attempt = 0; attempt < budget && placed.size() < target; ++attempt) {
    const double row = rng.uniform(0.0, spec.height - 1.0);
    const double col = rng.uniform(0.0, spec.width - 1.0);
    if (far_enough(placed, row, col, spec.min_head_spacing)) placed.push_back({row, col});
  }
  // Best effort: sweep the pixel grid for any remaining feasible positions.
  for (int r = 0; r < spec.height && placed.size() < target; ++r)
    for (int c = 0; c < spec.width && placed.size() < target; ++c)
      if (far_enough(placed, r, c, spec.min_head_spacing)) placed.push_back({double(r), double(c)});
  if (placed.size() < target)
    throw GenerationError(placed.size(), "placed only " + std::to_string(placed.size()) + " of " +
                                             std::to_string(target) + " heads");

  for (const auto& p : placed) {
    const double radius = rng.uniform(spec.min_head_radius, spec.max_head_radius);
    const double dark = rng.uniform(0.08, 0.2);
    const double rim = rng.uniform(0.85, 0.95);
    draw_head(scene.image, p, radius, dark, rim);
  }
  return scene;
}

namespace {

std::string scene_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05zu", index);
  return buf;
}

}  // namespace

DatasetManifest generate_dataset(const SceneSpec& spec, std::size_t n_scenes, const SplitSpec& split,
                                 const std::filesystem::path& root, const GaussianKernelSpec& kernel,
                                 unsigned workers) {
  spec.validate();
  kernel.validate();
  if (split.train_fraction < 0.0 || split.test_fraction < 0.0 ||
      std::abs(split.train_fraction + split.test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(split.train_fraction * static_cast<double>(n_scenes)));

  DatasetManifest manifest;
  manifest.name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  manifest.kernel = kernel;
  manifest.root = root;
  manifest.samples.resize(n_scenes);
  parallel_for(n_scenes, workers, [&](std::size_t i) {
    const Scene scene = generate_scene(spec, i);
    SampleRecord rec;
    rec.id = scene_name(i);
    rec.split = i < n_train ? Split::train : Split::test;
    rec.image_path = "images/" + rec.id + ".pgm";
    rec.points_path = "points/" + rec.id + ".txt";
    rec.density_path = "density/" + rec.id + ".dmap";
    write_image(root / rec.image_path, scene.image);
    write_points(root / rec.points_path, scene.heads);
    write_density(root / rec.density_path, render_density_map(scene.heads, kernel));
    manifest.samples[i] = std::move(rec);
  });
  std::filesystem::create_directories(root);
  write_manifest(manifest);
  return manifest;
}

}  // namespace densforge
