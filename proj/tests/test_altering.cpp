#include <doctest.h>

#include <cmath>
#include <set>

#include "densforge/altering.hpp"
#include "densforge/error.hpp"
#include "densforge/random.hpp"

using namespace densforge;

namespace {

HeadPointSet random_set(Rng& rng, int h, int w, int c) {
  HeadPointSet s;
  s.image_height = h;
  s.image_width = w;
  for (int i = 0; i < c; ++i) s.points.push_back({rng.uniform(0, h - 1), rng.uniform(0, w - 1)});
  return s;
}

bool contains(const HeadPointSet& s, const HeadPoint& p) {
  return std::find(s.points.begin(), s.points.end(), p) != s.points.end();
}

}  // namespace

TEST_CASE("erase keeps exactly round(rho c) original heads") {
  Rng rng(1);
  const HeadPointSet pts = random_set(rng, 64, 64, 10);
  const HeadPointSet out = dmba_minus_erase(pts, 0.2, 99);
  REQUIRE(out.count() == 2);
  for (const auto& p : out.points) CHECK(contains(pts, p));
  for (int c : {0, 1, 3, 7, 33}) {
    const HeadPointSet s = random_set(rng, 32, 32, c);
    for (double rho : {0.0, 0.15, 0.5, 0.85, 1.0})
      CHECK(dmba_minus_erase(s, rho, 5).count() == static_cast<std::size_t>(std::lround(rho * c)));
  }
}

TEST_CASE("erase endpoints") {
  Rng rng(2);
  const HeadPointSet pts = random_set(rng, 64, 64, 12);
  CHECK(dmba_minus_erase(pts, 1.0, 3) == pts);
  CHECK(dmba_minus_erase(pts, 0.0, 3).count() == 0);
  CHECK_THROWS_AS(dmba_minus_erase(pts, 1.2, 3), InvalidInput);
}

TEST_CASE("erase retention is uniform over heads") {
  Rng rng(3);
  const HeadPointSet pts = random_set(rng, 64, 64, 10);
  std::vector<int> kept(10, 0);
  const int trials = 2000;
  for (int s = 0; s < trials; ++s) {
    const HeadPointSet out = dmba_minus_erase(pts, 0.5, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < pts.count(); ++i) kept[i] += contains(out, pts.points[i]) ? 1 : 0;
  }
  for (int k : kept) CHECK(static_cast<double>(k) / trials == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("boost of a lone head starts straight up") {
  HeadPointSet s;
  s.image_height = 32;
  s.image_width = 32;
  s.points = {{10, 10}};
  CHECK(boost_radii(s, {}) == std::vector<int>{3});
  const HeadPointSet out = dmba_plus_boost(s, 2.0, {}, 0);
  REQUIRE(out.count() == 2);
  CHECK(out.points[0] == HeadPoint{10, 10});
  CHECK(out.points[1] == HeadPoint{7, 10});
}

TEST_CASE("boost cardinality and locality") {
  Rng rng(4);
  const GaussianKernelSpec kernel;
  for (int trial = 0; trial < 20; ++trial) {
    const int c = static_cast<int>(rng.between(1, 40));
    const HeadPointSet pts = random_set(rng, 96, 96, c);
    const HeadPointSet out = dmba_plus_boost(pts, 1.5, kernel, 0);
    REQUIRE(out.count() == pts.count() + static_cast<std::size_t>(std::lround(0.5 * c)));
    const std::vector<int> radii = boost_radii(pts, kernel);
    for (std::size_t j = pts.count(); j < out.count(); ++j) {
      bool near = false;
      for (std::size_t i = 0; i < pts.count() && !near; ++i) {
        const double d = std::hypot(out.points[j].row - snap(pts.points[i].row), out.points[j].col - snap(pts.points[i].col));
        near = d <= radii[i] + 0.5;
      }
      CHECK(near);
    }
  }
}

TEST_CASE("boost with rho 1.5 on four heads adds two") {
  HeadPointSet s;
  s.image_height = 64;
  s.image_width = 64;
  s.points = {{10, 10}, {10, 30}, {40, 10}, {40, 40}};
  CHECK(dmba_plus_boost(s, 1.5, {}, 0).count() == 6);
}

TEST_CASE("boost never doubles up a pixel") {
  Rng rng(6);
  const HeadPointSet pts = random_set(rng, 48, 48, 25);
  const HeadPointSet out = dmba_plus_boost(pts, 1.8, {}, 0);
  std::set<std::pair<int, int>> seen;
  for (const auto& p : pts.points) seen.insert({snap(p.row), snap(p.col)});
  for (std::size_t j = pts.count(); j < out.count(); ++j)
    CHECK(seen.insert({snap(out.points[j].row), snap(out.points[j].col)}).second);
}

TEST_CASE("boost saturates on a tiny image") {
  HeadPointSet s;
  s.image_height = 2;
  s.image_width = 2;
  s.points = {{0, 0}};
  CHECK_THROWS_AS(dmba_plus_boost(s, 10.0, {}, 0), SaturationError);
}

TEST_CASE("scaling multiplies the count") {
  DensityMap z(1, 1);
  z.at(0, 0) = 0.25;
  CHECK(dmba_plus_plus_scale(z, 3.0).at(0, 0) == doctest::Approx(0.75));
  DensityMap m(2, 3);
  for (std::size_t i = 0; i < m.grid.size(); ++i) m.grid[i] = 5.0 / 6.0;
  CHECK(count_from_density(dmba_plus_plus_scale(m, 2.0)) == doctest::Approx(10.0));
  CHECK_THROWS_AS(dmba_plus_plus_scale(m, -1.0), InvalidInput);
}

TEST_CASE("alter dispatches per strategy") {
  Rng rng(7);
  const HeadPointSet pts = random_set(rng, 128, 128, 100);
  const GaussianKernelSpec kernel;
  const DensityMap z = render_density_map(pts, kernel);

  AlterSpec tri{Strategy::tri_only, 0.2, 1};
  const AlterResult t = alter(pts, z, tri, kernel);
  CHECK(t.points == pts);
  CHECK(t.density == z);

  AlterSpec minus{Strategy::dmba_minus, 0.2, 1};
  const AlterResult m = alter(pts, z, minus, kernel);
  CHECK(m.points.count() == 20);
  CHECK(std::abs(count_from_density(m.density) - 20.0) <= 2e-4);

  AlterSpec pp{Strategy::dmba_plus_plus, 2.0, 1};
  const AlterResult p = alter(pts, z, pp, kernel);
  CHECK(p.points == pts);
  CHECK(count_from_density(p.density) == doctest::Approx(2.0 * count_from_density(z)).epsilon(1e-12));
}

TEST_CASE("regime warnings flag rho outside the strategy's range") {
  CHECK(regime_warning({Strategy::dmba_minus, 0.2, 0}) == std::nullopt);
  CHECK(regime_warning({Strategy::dmba_plus, 0.5, 0}).has_value());
  CHECK(regime_warning({Strategy::dmba_plus_plus, 0.5, 0}).has_value());
}

TEST_CASE("strategy names round-trip") {
  for (Strategy s : {Strategy::dmba_minus, Strategy::dmba_plus, Strategy::dmba_plus_plus, Strategy::tri_only})
    CHECK(parse_strategy(to_string(s)) == s);
  CHECK(parse_strategy("dmba_minus") == Strategy::dmba_minus);
  CHECK_THROWS_AS(parse_strategy("dmba"), ConfigError);
}
