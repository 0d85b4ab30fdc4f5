#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "densforge/density.hpp"
#include "densforge/image.hpp"

namespace densforge {

struct DatasetManifest;

enum class Background { flat, gradient, noise_texture };

std::string to_string(Background background);
Background parse_background(const std::string& name);

struct SceneSpec {
  int height = 128;
  int width = 128;
  int min_count = 20;
  int max_count = 60;
  double min_head_spacing = 6.0;
  double min_head_radius = 2.0;
  double max_head_radius = 3.0;
  Background background = Background::gradient;
  double noise_amplitude = 0.04;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  GrayImage image;
  HeadPointSet heads;
};

// Upper bound on how many points with pairwise spacing >= s fit in the image
// (disc packing density bound over the image grown by s/2 on each side).
std::size_t placement_capacity(const SceneSpec& spec);

Scene generate_scene(const SceneSpec& spec, std::uint64_t scene_id);

struct SplitSpec {
  double train_fraction = 0.8;
  double test_fraction = 0.2;
};

// Writes images/, points/, density/ and manifest.tsv under `root`.
DatasetManifest generate_dataset(const SceneSpec& spec, std::size_t n_scenes, const SplitSpec& split,
                                 const std::filesystem::path& root, const GaussianKernelSpec& kernel,
                                 unsigned workers = 1);

}  // namespace densforge
