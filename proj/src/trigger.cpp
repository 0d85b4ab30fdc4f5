#include "densforge/trigger.hpp"

#include <algorithm>
#include <cmath>

#include "densforge/error.hpp"
#include "densforge/random.hpp"

namespace densforge {

std::string to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::rain: return "rain";
    case TriggerKind::snow: return "snow";
    case TriggerKind::light: return "light";
    case TriggerKind::patch: return "patch";
    case TriggerKind::custom_file: return "custom-file";
  }
  return "unknown";
}

TriggerKind parse_trigger_kind(const std::string& name) {
  if (name == "rain") return TriggerKind::rain;
  if (name == "snow") return TriggerKind::snow;
  if (name == "light") return TriggerKind::light;
  if (name == "patch") return TriggerKind::patch;
  if (name == "custom-file" || name == "custom_file" || name == "custom") return TriggerKind::custom_file;
  throw ConfigError("unknown trigger kind '" + name + "'");
}

void BlendSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("blend lambda must lie in [0,1]");
}

namespace {

struct Region {
  int height;
  int width;
};

Region pattern_region(const TriggerParams& params, int height, int width) {
  Region r{params.region_height > 0 ? std::min(params.region_height, height) : height,
           params.region_width > 0 ? std::min(params.region_width, width) : width};
  return r;
}

void plot_max(GrayImage& img, const Region& region, int row, int col, double value) {
  if (row < 0 || col < 0 || row >= region.height || col >= region.width) return;
  double& px = img.at(row, col);
  px = std::max(px, value);
}

// Keeps the per-pixel density of streaks/flakes constant when the region shrinks.
int scaled_count(int count, const Region& region, int height, int width) {
  const double frac = static_cast<double>(region.height) * region.width /
                      (static_cast<double>(height) * width);
  return std::max(1, static_cast<int>(std::lround(count * frac)));
}

void draw_rain(GrayImage& img, const TriggerParams& p, const Region& region, Rng& rng) {
  const int streaks = scaled_count(p.rain_streaks, region, img.height, img.width);
  for (int s = 0; s < streaks; ++s) {
    const double r0 = rng.uniform(0.0, region.height);
    const double c0 = rng.uniform(0.0, region.width);
    const double angle = (p.rain_angle_deg + rng.uniform(-5.0, 5.0)) * M_PI / 180.0;
    const double length = p.rain_length * rng.uniform(0.6, 1.0);
    const double value = rng.uniform(0.7, 1.0);
    // Streaks fall down and to the left: +row, -col in image coordinates.
    const double dr = std::sin(angle);
    const double dc = -std::cos(angle);
    for (double t = 0.0; t <= length; t += 0.5)
      plot_max(img, region, static_cast<int>(std::floor(r0 + t * dr)),
               static_cast<int>(std::floor(c0 + t * dc)), value);
  }
}

void draw_snow(GrayImage& img, const TriggerParams& p, const Region& region, Rng& rng) {
  const int flakes = scaled_count(p.snow_flakes, region, img.height, img.width);
  for (int f = 0; f < flakes; ++f) {
    const double r0 = rng.uniform(0.0, region.height);
    const double c0 = rng.uniform(0.0, region.width);
    const double radius = p.snow_radius * rng.uniform(0.6, 1.4);
    const double value = rng.uniform(0.8, 1.0);
    const int reach = static_cast<int>(std::ceil(radius));
    for (int r = static_cast<int>(r0) - reach; r <= static_cast<int>(r0) + reach; ++r)
      for (int c = static_cast<int>(c0) - reach; c <= static_cast<int>(c0) + reach; ++c) {
        const double d = std::hypot(r + 0.5 - r0, c + 0.5 - c0);
        if (d <= radius) plot_max(img, region, r, c, value);
      }
  }
}

void draw_light(GrayImage& img, const TriggerParams& p, const Region& region) {
  const double cr = p.light_center_row * region.height;
  const double cc = p.light_center_col * region.width;
  const double width = std::max(1e-6, p.light_falloff * std::min(region.height, region.width));
  for (int r = 0; r < region.height; ++r)
    for (int c = 0; c < region.width; ++c) {
      const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
      img.at(r, c) = std::clamp(p.light_peak * std::exp(-d2 / (2.0 * width * width)), 0.0, 1.0);
    }
}

std::vector<std::uint8_t> region_footprint(const Region& region, int height, int width) {
  if (region.height == height && region.width == width) return {};
  std::vector<std::uint8_t> fp(static_cast<std::size_t>(height) * width, 0);
  for (int r = 0; r < region.height; ++r)
    for (int c = 0; c < region.width; ++c) fp[static_cast<std::size_t>(r) * width + c] = 1;
  return fp;
}

GrayImage to_channels(const GrayImage& img, int channels) {
  if (img.channels == channels) return img;
  GrayImage out(img.height, img.width, channels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      if (channels == 3) {
        for (int k = 0; k < 3; ++k) out.at(r, c, k) = img.at(r, c, 0);
      } else {
        out.at(r, c, 0) = (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / 3.0;
      }
    }
  return out;
}

}  // namespace

TriggerPattern generate_trigger(TriggerKind kind, const TriggerParams& params, int height,
                                int width, std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw InvalidInput("trigger dimensions must be positive");
  TriggerPattern t;
  t.kind = kind;
  t.params = params;
  t.image = GrayImage(height, width, 1, 0.0);
  Rng rng(hash64(seed, static_cast<std::uint64_t>(kind)));
  const Region region = pattern_region(params, height, width);
  switch (kind) {
    case TriggerKind::rain:
      draw_rain(t.image, params, region, rng);
      t.footprint = region_footprint(region, height, width);
      break;
    case TriggerKind::snow:
      draw_snow(t.image, params, region, rng);
      t.footprint = region_footprint(region, height, width);
      break;
    case TriggerKind::light:
      draw_light(t.image, params, region);
      t.footprint = region_footprint(region, height, width);
      break;
    case TriggerKind::patch: {
      if (params.patch_side <= 0 || params.patch_cell <= 0)
        throw ConfigError("patch side and cell size must be positive");
      const Region square{std::min(params.patch_side, height), std::min(params.patch_side, width)};
      for (int r = 0; r < square.height; ++r)
        for (int c = 0; c < square.width; ++c)
          t.image.at(r, c) = ((r / params.patch_cell + c / params.patch_cell) % 2 == 0) ? 1.0 : 0.0;
      t.footprint = region_footprint(square, height, width);
      if (t.footprint.empty()) t.footprint.assign(static_cast<std::size_t>(height) * width, 1);
      break;
    }
    case TriggerKind::custom_file: {
      if (params.custom_path.empty()) throw ConfigError("custom trigger needs a file path");
      GrayImage loaded = to_channels(read_image(params.custom_path), 1);
      t.image = resize_image(loaded, height, width, ResizeFilter::bilinear);
      break;
    }
  }
  return t;
}

GrayImage resize_image(const GrayImage& image, int height, int width, ResizeFilter filter) {
  if (height <= 0 || width <= 0 || image.height <= 0 || image.width <= 0)
    throw InvalidInput("resize needs non-empty source and target");
  if (image.height == height && image.width == width) return image;
  GrayImage out(height, width, image.channels);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  if (filter == ResizeFilter::nearest) {
    for (int r = 0; r < height; ++r) {
      const int yr = std::min(image.height - 1, static_cast<int>(std::floor((r + 0.5) * sy)));
      for (int c = 0; c < width; ++c) {
        const int xc = std::min(image.width - 1, static_cast<int>(std::floor((c + 0.5) * sx)));
        for (int k = 0; k < image.channels; ++k) out.at(r, c, k) = image.at(yr, xc, k);
      }
    }
    return out;
  }
  for (int r = 0; r < height; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int c = 0; c < width; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int k = 0; k < image.channels; ++k) {
        const double top = image.at(y0, x0, k) + (image.at(y0, x1, k) - image.at(y0, x0, k)) * tx;
        const double bot = image.at(y1, x0, k) + (image.at(y1, x1, k) - image.at(y1, x0, k)) * tx;
        out.at(r, c, k) = std::clamp(top + (bot - top) * ty, 0.0, 1.0);
      }
    }
  }
  return out;
}

GrayImage resize_trigger(const TriggerPattern& trigger, const GrayImage& target,
                         const BlendSpec& spec) {
  return resize_image(trigger.image, target.height, target.width, spec.resize_filter);
}

GrayImage blend(const GrayImage& image, const TriggerPattern& trigger, const BlendSpec& spec) {
  spec.validate();
  const GrayImage y = to_channels(resize_trigger(trigger, image, spec), image.channels);

  std::vector<std::uint8_t> footprint;
  if (!trigger.full_canvas()) {
    GrayImage mask(trigger.image.height, trigger.image.width, 1);
    for (std::size_t i = 0; i < trigger.footprint.size(); ++i) mask.pixels[i] = trigger.footprint[i];
    const GrayImage scaled = resize_image(mask, image.height, image.width, ResizeFilter::nearest);
    footprint.resize(scaled.pixels.size());
    for (std::size_t i = 0; i < scaled.pixels.size(); ++i) footprint[i] = scaled.pixels[i] > 0.5;
  }

  const double lambda = spec.lambda;
  GrayImage out = image;
  const int ch = image.channels;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (!footprint.empty() && !footprint[i / static_cast<std::size_t>(ch)]) continue;
    const double v = (1.0 - lambda) * image.pixels[i] + lambda * y.pixels[i];
    out.pixels[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

}  // namespace densforge
