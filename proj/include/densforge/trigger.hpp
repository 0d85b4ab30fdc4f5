#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "densforge/image.hpp"

namespace densforge {

enum class TriggerKind { rain, snow, light, patch, custom_file };

std::string to_string(TriggerKind kind);
TriggerKind parse_trigger_kind(const std::string& name);

struct TriggerParams {
  // rain
  int rain_streaks = 400;
  double rain_angle_deg = 70.0;  // from the horizontal
  int rain_length = 10;
  // snow
  int snow_flakes = 300;
  double snow_radius = 1.5;
  // light
  double light_center_row = 0.35;  // fraction of height
  double light_center_col = 0.6;   // fraction of width
  double light_falloff = 0.25;     // gaussian width as a fraction of min(height, width)
  double light_peak = 1.0;
  // patch
  int patch_side = 5;
  int patch_cell = 1;
  // Side of the square region (top-left corner) that carries the pattern; 0 covers
  // the full canvas. Ignored by patch, which always uses patch_side.
  int region_height = 0;
  int region_width = 0;
  // custom_file
  std::string custom_path;

  bool operator==(const TriggerParams&) const = default;
};

// A trigger image plus the footprint it occupies. Blending only touches pixels
// inside the footprint; an empty footprint means the whole canvas.
struct TriggerPattern {
  GrayImage image;
  std::vector<std::uint8_t> footprint;
  TriggerKind kind = TriggerKind::rain;
  TriggerParams params;

  bool full_canvas() const { return footprint.empty(); }
  bool covers(int row, int col) const {
    return footprint.empty() ||
           footprint[static_cast<std::size_t>(row) * image.width + col] != 0;
  }
};

enum class ResizeFilter { nearest, bilinear };

struct BlendSpec {
  double lambda = 0.3;
  ResizeFilter resize_filter = ResizeFilter::bilinear;

  void validate() const;
};

TriggerPattern generate_trigger(TriggerKind kind, const TriggerParams& params, int height,
                                int width, std::uint64_t seed);

GrayImage resize_image(const GrayImage& image, int height, int width, ResizeFilter filter);

// Resizes the trigger image to the target's spatial size. Intensities stay in [0,1].
GrayImage resize_trigger(const TriggerPattern& trigger, const GrayImage& target,
                         const BlendSpec& spec);

// x' = (1 - lambda) x + lambda y' inside the trigger footprint, x elsewhere.
GrayImage blend(const GrayImage& image, const TriggerPattern& trigger, const BlendSpec& spec);

}  // namespace densforge

namespace densforge {

// Everything needed to regenerate a trigger at any canvas size.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::rain;
  TriggerParams params;
  std::uint64_t seed = 0;

  TriggerPattern make(int height, int width) const {
    return generate_trigger(kind, params, height, width, seed);
  }
};

}  // namespace densforge
