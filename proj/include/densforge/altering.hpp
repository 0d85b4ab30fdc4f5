#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "densforge/density.hpp"

namespace densforge {

enum class Strategy { dmba_minus, dmba_plus, dmba_plus_plus, tri_only };

std::string to_string(Strategy strategy);
// Accepts both "dmba-minus" and "dmba_minus" spellings.
Strategy parse_strategy(const std::string& name);

struct AlterSpec {
  Strategy strategy = Strategy::dmba_minus;
  double rho = 0.2;
  std::uint64_t seed = 0;
};

// Message describing a rho outside the strategy's intended regime, if any.
std::optional<std::string> regime_warning(const AlterSpec& spec);

// Random head erasing: keeps exactly round(rho * c) heads, chosen uniformly.
HeadPointSet dmba_minus_erase(const HeadPointSet& points, double rho, std::uint64_t seed);

// Starting ring radius per head for neighbor boosting: max(1, floor(mean KNN distance / 2)),
// or 3 for a lone head.
std::vector<int> boost_radii(const HeadPointSet& points, const GaussianKernelSpec& spec);

// Neighbor boosting: appends round((rho - 1) * c) heads on free integer pixels around
// the existing heads, scanning rings counterclockwise from straight up.
HeadPointSet dmba_plus_boost(const HeadPointSet& points, double rho, const GaussianKernelSpec& spec,
                             std::uint64_t seed);

DensityMap dmba_plus_plus_scale(const DensityMap& z, double rho);

struct AlterResult {
  HeadPointSet points;
  DensityMap density;
};

AlterResult alter(const HeadPointSet& points, const DensityMap& z, const AlterSpec& spec,
                  const GaussianKernelSpec& kernel);

}  // namespace densforge
