#include <doctest.h>

#include <cmath>

#include "densforge/dataset.hpp"
#include "densforge/error.hpp"
#include "densforge/scene.hpp"
#include "test_util.hpp"

using namespace densforge;

TEST_CASE("scene honors count and spacing") {
  SceneSpec spec;
  spec.height = 256;
  spec.width = 256;
  spec.min_count = 50;
  spec.max_count = 50;
  spec.min_head_spacing = 6.0;
  const Scene s = generate_scene(spec, 0);
  REQUIRE(s.heads.count() == 50);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t j = i + 1; j < 50; ++j)
      CHECK(std::hypot(s.heads.points[i].row - s.heads.points[j].row,
                       s.heads.points[i].col - s.heads.points[j].col) >= 6.0);
  CHECK(s.image.height == 256);
  for (double v : s.image.pixels) REQUIRE((v >= 0.0 && v <= 1.0));
}

TEST_CASE("scenes are deterministic per seed and id") {
  SceneSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.min_count = 5;
  spec.max_count = 15;
  spec.seed = 4;
  const Scene a = generate_scene(spec, 3), b = generate_scene(spec, 3), c = generate_scene(spec, 4);
  CHECK(a.image == b.image);
  CHECK(a.heads == b.heads);
  CHECK_FALSE(a.heads == c.heads);
}

TEST_CASE("impossible counts fail generation") {
  SceneSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.min_count = 200;
  spec.max_count = 200;
  CHECK(placement_capacity(spec) < 200);
  CHECK_THROWS_AS(generate_scene(spec, 0), GenerationError);
}

TEST_CASE("invalid scene specs are rejected") {
  SceneSpec spec;
  spec.min_count = 10;
  spec.max_count = 5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("generated dataset layout and counts") {
  testing::TempDir dir("synth");
  SceneSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.min_count = 5;
  spec.max_count = 15;
  const DatasetManifest m = generate_dataset(spec, 20, {0.75, 0.25}, dir.path(), {});
  CHECK(m.samples.size() == 20);
  CHECK(m.split(Split::train).size() == 15);
  CHECK(m.split(Split::test).size() == 5);
  const DatasetManifest back = read_manifest(dir.path());
  CHECK(back.samples == m.samples);
  for (const auto& s : load_split(back, Split::train)) {
    CHECK(s.heads.count() >= 5);
    CHECK(s.heads.count() <= 15);
    CHECK(std::abs(count_from_density(s.density) - static_cast<double>(s.heads.count())) <= 1e-6);
  }
}

TEST_CASE("dataset generation is independent of worker count") {
  testing::TempDir a("synth_a"), b("synth_b");
  SceneSpec spec;
  spec.height = 48;
  spec.width = 48;
  spec.min_count = 3;
  spec.max_count = 9;
  spec.seed = 12;
  generate_dataset(spec, 12, {}, a / "data", {}, 1);
  generate_dataset(spec, 12, {}, b / "data", {}, 3);
  CHECK(testing::tree_digest(a / "data") == testing::tree_digest(b / "data"));
}
