#include "densforge/altering.hpp"

#include <cmath>
#include <iostream>
#include <unordered_set>

#include "densforge/error.hpp"
#include "densforge/io.hpp"
#include "densforge/random.hpp"

namespace densforge {

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::dmba_minus: return "dmba-minus";
    case Strategy::dmba_plus: return "dmba-plus";
    case Strategy::dmba_plus_plus: return "dmba-plus-plus";
    case Strategy::tri_only: return "tri-only";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  std::string n = name;
  for (char& ch : n)
    if (ch == '_') ch = '-';
  if (n == "dmba-minus") return Strategy::dmba_minus;
  if (n == "dmba-plus") return Strategy::dmba_plus;
  if (n == "dmba-plus-plus") return Strategy::dmba_plus_plus;
  if (n == "tri-only" || n == "trioly") return Strategy::tri_only;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::optional<std::string> regime_warning(const AlterSpec& spec) {
  const std::string rho = format_double(spec.rho);
  switch (spec.strategy) {
    case Strategy::dmba_minus:
      if (spec.rho < 0.0 || spec.rho > 1.0) return "dmba-minus expects rho in [0,1], got " + rho;
      break;
    case Strategy::dmba_plus:
      if (spec.rho <= 1.0 || spec.rho >= 2.0) return "dmba-plus expects 1 < rho < 2, got " + rho;
      break;
    case Strategy::dmba_plus_plus:
      if (spec.rho < 2.0) return "dmba-plus-plus expects rho >= 2, got " + rho;
      break;
    case Strategy::tri_only:
      break;
  }
  return std::nullopt;
}

HeadPointSet dmba_minus_erase(const HeadPointSet& points, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw InvalidInput("dmba-minus retention ratio must lie in [0,1], got " + format_double(rho));
  const std::size_t c = points.count();
  const auto keep = static_cast<std::size_t>(std::llround(rho * static_cast<double>(c)));
  Rng rng(seed);
  HeadPointSet out;
  out.image_height = points.image_height;
  out.image_width = points.image_width;
  for (std::size_t idx : sample_without_replacement(c, keep, rng)) out.points.push_back(points.points[idx]);
  return out;
}

std::vector<int> boost_radii(const HeadPointSet& points, const GaussianKernelSpec& spec) {
  if (points.count() == 1) return {3};
  std::vector<double> dbar = mean_neighbor_distance(points, spec.k_neighbors);
  std::vector<int> radii(dbar.size());
  for (std::size_t i = 0; i < dbar.size(); ++i)
    radii[i] = std::max(1, static_cast<int>(std::floor(dbar[i] / 2.0)));
  return radii;
}

namespace {

struct Offset {
  int dr;
  int dc;
};

// Ring candidate at angle `deg` in the (x = col, y = -row) frame. Components are
// rounded to the nearest pixel, falling back to truncation when rounding would push
// the candidate more than half a pixel beyond the ring.
Offset ring_offset(int radius, int deg) {
  const double a = deg * M_PI / 180.0;
  const double x = radius * std::cos(a);
  const double y = radius * std::sin(a);
  auto clean = [](double v) { return std::abs(v) < 1e-9 ? 0.0 : v; };
  Offset o{static_cast<int>(std::lround(-clean(y))), static_cast<int>(std::lround(clean(x)))};
  if (std::hypot(o.dr, o.dc) > radius + 0.5)
    o = {static_cast<int>(std::trunc(-clean(y))), static_cast<int>(std::trunc(clean(x)))};
  return o;
}

}  // namespace

HeadPointSet dmba_plus_boost(const HeadPointSet& points, double rho, const GaussianKernelSpec& spec,
                             [[maybe_unused]] std::uint64_t seed) {
  points.validate();
  if (!(rho >= 1.0) || !std::isfinite(rho))
    throw InvalidInput("dmba-plus needs rho >= 1, got " + format_double(rho));
  const std::size_t c = points.count();
  const auto extra = static_cast<std::size_t>(std::llround((rho - 1.0) * static_cast<double>(c)));
  HeadPointSet out = points;
  if (extra == 0) return out;

  const int h = points.image_height;
  const int w = points.image_width;
  auto key = [w](int r, int col) { return static_cast<long long>(r) * w + col; };
  std::unordered_set<long long> occupied;
  for (const auto& p : points.points) occupied.insert(key(snap(p.row), snap(p.col)));

  std::vector<int> radius = boost_radii(points, spec);
  std::vector<bool> exhausted(c, false);
  std::size_t placed = 0;
  std::size_t live = c;
  while (placed < extra) {
    if (live == 0)
      throw SaturationError(extra - placed,
                            "neighbor boosting saturated: placed " + std::to_string(placed) + " of " +
                                std::to_string(extra) + " extra heads, short by " +
                                std::to_string(extra - placed));
    for (std::size_t i = 0; i < c && placed < extra; ++i) {
      if (exhausted[i]) continue;
      const int hr = snap(points.points[i].row);
      const int hc = snap(points.points[i].col);
      bool found = false;
      for (int deg = 90; deg < 450 && !found; deg += 45) {
        const Offset o = ring_offset(radius[i], deg);
        const int r = hr + o.dr;
        const int col = hc + o.dc;
        if (r < 0 || col < 0 || r >= h || col >= w) continue;
        if (!occupied.insert(key(r, col)).second) continue;
        out.points.push_back({static_cast<double>(r), static_cast<double>(col)});
        ++placed;
        found = true;
      }
      if (!found) {
        if (radius[i] > 1) {
          --radius[i];
        } else {
          exhausted[i] = true;
          --live;
        }
      }
    }
  }
  return out;
}

DensityMap dmba_plus_plus_scale(const DensityMap& z, double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho))
    throw InvalidInput("density scaling needs a finite rho >= 0, got " + format_double(rho));
  DensityMap out = z;
  for (double& v : out.grid) v *= rho;
  return out;
}

AlterResult alter(const HeadPointSet& points, const DensityMap& z, const AlterSpec& spec,
                  const GaussianKernelSpec& kernel) {
  if (auto warning = regime_warning(spec); warning && spec.strategy != Strategy::dmba_minus)
    std::cerr << "densforge: warning: " << *warning << "\n";
  switch (spec.strategy) {
    case Strategy::tri_only:
      return {points, z};
    case Strategy::dmba_minus: {
      HeadPointSet kept = dmba_minus_erase(points, spec.rho, spec.seed);
      DensityMap rendered = render_density_map(kept, kernel);
      return {std::move(kept), std::move(rendered)};
    }
    case Strategy::dmba_plus: {
      HeadPointSet boosted = dmba_plus_boost(points, spec.rho, kernel, spec.seed);
      DensityMap rendered = render_density_map(boosted, kernel);
      return {std::move(boosted), std::move(rendered)};
    }
    case Strategy::dmba_plus_plus:
      return {points, dmba_plus_plus_scale(z, spec.rho)};
  }
  throw ConfigError("unhandled strategy");
}

}  // namespace densforge
