#include <doctest.h>

#include <cmath>
#include <set>

#include "densforge/dataset.hpp"
#include "densforge/error.hpp"
#include "densforge/scene.hpp"
#include "test_util.hpp"

using namespace densforge;

namespace {

DatasetManifest small_dataset(const std::filesystem::path& root, std::size_t n, int min_c, int max_c,
                              int side = 64, double train_fraction = 0.8) {
  SceneSpec spec;
  spec.height = side;
  spec.width = side;
  spec.min_count = min_c;
  spec.max_count = max_c;
  spec.seed = 21;
  return generate_dataset(spec, n, {train_fraction, 1.0 - train_fraction}, root, {});
}

PoisonSpec minus_spec(double gamma) {
  PoisonSpec p;
  p.alter = {Strategy::dmba_minus, 0.2, 5};
  p.gamma = gamma;
  p.trigger.seed = 5;
  return p;
}

}  // namespace

TEST_CASE("poison subset size is round(gamma N_train)") {
  testing::TempDir dir("subset");
  const DatasetManifest m = small_dataset(dir.path(), 125, 2, 4, 32);
  REQUIRE(m.split(Split::train).size() == 100);
  const auto ids = select_poison_subset(m, 0.2, 1);
  CHECK(ids.size() == 20);
  std::set<std::string> unique(ids.begin(), ids.end());
  CHECK(unique.size() == 20);
  for (const auto& id : ids) CHECK(m.find(id)->split == Split::train);
  CHECK(select_poison_subset(m, 0.2, 1) == ids);
  CHECK(select_poison_subset(m, 0.0, 1).empty());
  CHECK(select_poison_subset(m, 1.0, 1).size() == 100);
}

TEST_CASE("poisoning partitions the train split and leaves the source untouched") {
  testing::TempDir dir("poison");
  const DatasetManifest clean = small_dataset(dir / "clean", 30, 5, 12);
  const std::string before = testing::tree_digest(clean.root);
  const DatasetManifest p = poison_dataset(clean, minus_spec(0.3), dir / "poisoned");
  CHECK(testing::tree_digest(clean.root) == before);
  CHECK(p.provenance == Provenance::poisoned);
  REQUIRE(p.samples.size() == clean.samples.size());
  std::size_t poisoned = 0;
  for (std::size_t i = 0; i < p.samples.size(); ++i) {
    const SampleRecord& r = p.samples[i];
    CHECK(r.id == clean.samples[i].id);
    CHECK(r.split == clean.samples[i].split);
    if (r.poisoned) {
      ++poisoned;
      CHECK(r.split == Split::train);
      CHECK(r.achieved_rho.has_value());
    } else {
      CHECK(read_file(p.root / r.image_path) == read_file(clean.root / clean.samples[i].image_path));
    }
  }
  CHECK(poisoned == static_cast<std::size_t>(std::lround(0.3 * 24)));
  const DatasetManifest back = read_manifest(p.root);
  CHECK(back.samples == p.samples);
  REQUIRE(back.poison.has_value());
  CHECK(back.poison->alter.rho == 0.2);
  CHECK(back.poison->trigger.kind == TriggerKind::rain);
}

TEST_CASE("erasing fifty heads leaves ten") {
  testing::TempDir dir("fifty");
  const DatasetManifest clean = small_dataset(dir / "clean", 2, 50, 50, 128, 1.0);
  const DatasetManifest p = poison_dataset(clean, minus_spec(1.0), dir / "poisoned");
  for (const auto& r : p.samples) {
    REQUIRE(r.poisoned);
    const LoadedSample s = load_sample(p.root, r, p.kernel);
    CHECK(s.heads.count() == 10);
    CHECK(*r.achieved_rho == doctest::Approx(0.2));
    CHECK(std::abs(count_from_density(s.density) - 10.0) <= 1e-4);
  }
}

TEST_CASE("trigger-only poisoning keeps annotations byte-identical") {
  testing::TempDir dir("trioly");
  const DatasetManifest clean = small_dataset(dir / "clean", 10, 5, 12);
  PoisonSpec spec = minus_spec(1.0);
  spec.alter.strategy = Strategy::tri_only;
  const DatasetManifest p = poison_dataset(clean, spec, dir / "poisoned");
  for (std::size_t i = 0; i < p.samples.size(); ++i) {
    const auto& r = p.samples[i];
    const auto& c = clean.samples[i];
    CHECK(read_file(p.root / r.points_path) == read_file(clean.root / c.points_path));
    CHECK(read_file(p.root / r.density_path) == read_file(clean.root / c.density_path));
    if (r.poisoned) CHECK(read_file(p.root / r.image_path) != read_file(clean.root / c.image_path));
  }
}

TEST_CASE("poisoning is independent of worker count") {
  testing::TempDir dir("poison_par");
  const DatasetManifest clean = small_dataset(dir / "clean", 20, 5, 12);
  PoisonSpec spec = minus_spec(0.5);
  spec.alter = {Strategy::dmba_plus, 1.5, 9};
  poison_dataset(clean, spec, dir / "serial" / "out", 1);
  poison_dataset(clean, spec, dir / "parallel" / "out", 4);
  const std::string a = testing::tree_digest(dir / "serial" / "out");
  CHECK(a == testing::tree_digest(dir / "parallel" / "out"));
  CHECK(a.find("manifest.tsv") != std::string::npos);
}

TEST_CASE("triggered test set blends every test image per the blend formula") {
  testing::TempDir dir("trigtest");
  const DatasetManifest clean = small_dataset(dir / "clean", 10, 5, 12);
  TriggerSpec trig;
  trig.seed = 3;
  const BlendSpec blend_spec;
  const DatasetManifest t = trigger_test_set(clean, trig, blend_spec, dir / "triggered");
  CHECK(t.provenance == Provenance::triggered);
  CHECK(t.samples.size() == clean.split(Split::test).size());
  const TriggerPattern pattern = trig.make(64, 64);
  for (const auto& r : t.samples) {
    CHECK(r.split == Split::test);
    const GrayImage x = read_image(clean.root / clean.find(r.id)->image_path);
    const GrayImage y = read_image(t.root / r.image_path);
    // One sampled pixel against the reference arithmetic, within export quantization.
    const double expected = 0.7 * x.at(17, 23) + 0.3 * pattern.image.at(17, 23);
    CHECK(std::abs(y.at(17, 23) - expected) <= 0.5 / 255 + 1e-12);
    CHECK(read_file(t.root / r.points_path) == read_file(clean.root / clean.find(r.id)->points_path));
  }
}

TEST_CASE("manifest codec round-trips and rejects corruption") {
  std::vector<SampleRecord> recs{{"a", Split::train, true, "images/a.pgm", "points/a.txt", "density/a.dmap", 0.25},
                                 {"b", Split::test, false, "images/b.pgm", "points/b.txt", "", std::nullopt}};
  DatasetManifest m;
  m.samples = recs;
  CHECK(decode_manifest(encode_manifest(m)) == recs);
  CHECK_THROWS_AS(decode_manifest("nonsense\n"), InvalidInput);
  CHECK_THROWS_AS(decode_manifest("DENSFORGE-MANIFEST v1\na\ttrain\n"), InvalidInput);
}

TEST_CASE("missing referenced files are reported") {
  testing::TempDir dir("missing");
  const DatasetManifest clean = small_dataset(dir.path(), 4, 2, 3, 32);
  std::filesystem::remove(dir.path() / clean.samples[0].image_path);
  CHECK_THROWS_AS(read_manifest(dir.path()), IoError);
}

TEST_CASE("poisoning into the source directory is refused") {
  testing::TempDir dir("inplace");
  const DatasetManifest clean = small_dataset(dir.path(), 4, 2, 3, 32);
  CHECK_THROWS_AS(poison_dataset(clean, minus_spec(0.5), dir.path()), ConfigError);
}
