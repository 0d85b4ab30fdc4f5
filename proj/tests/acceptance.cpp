// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "densforge/altering.hpp"
#include "densforge/cli.hpp"
#include "densforge/experiment.hpp"
#include "densforge/io.hpp"
#include "densforge/random.hpp"
#include "densforge/trigger.hpp"
#include "reference_net.hpp"
#include "test_util.hpp"

using namespace densforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

HeadPointSet random_set(Rng& rng, int h, int w, int c) {
  HeadPointSet s;
  s.image_height = h;
  s.image_width = w;
  for (int i = 0; i < c; ++i) s.points.push_back({rng.uniform(0, h - 1), rng.uniform(0, w - 1)});
  return s;
}

Outcome density_mass() {
  Rng rng(101);
  double worst = 0.0;
  bool ok = true;
  for (int t = 0; t < 100; ++t) {
    const int c = static_cast<int>(rng.between(0, 100));
    const DensityMap z = render_density_map(random_set(rng, 128, 128, c), {});
    const double err = std::abs(count_from_density(z) - c);
    ok = ok && err <= c * 1e-5 + 1e-6;
    worst = std::max(worst, err);
  }
  return {ok, "max |sum - c| = " + fmt(worst)};
}

Outcome blend_exactness() {
  Rng rng(102);
  GrayImage x(64, 64), y(48, 80);
  for (auto& v : x.pixels) v = rng.uniform();
  for (auto& v : y.pixels) v = rng.uniform();
  TriggerPattern t;
  t.image = y;
  double worst = 0.0;
  for (double lambda : {0.0, 0.3, 1.0}) {
    BlendSpec spec;
    spec.lambda = lambda;
    const GrayImage resized = resize_trigger(t, x, spec);
    const GrayImage out = blend(x, t, spec);
    for (int n = 0; n < 1000; ++n) {
      const int r = static_cast<int>(rng.below(64)), c = static_cast<int>(rng.below(64));
      const double expected = (1.0 - lambda) * x.at(r, c) + lambda * resized.at(r, c);
      worst = std::max(worst, std::abs(out.at(r, c) - expected));
    }
  }
  return {worst <= 1e-12, "max deviation = " + fmt(worst)};
}

Outcome erase_uniformity() {
  Rng rng(103);
  bool exact = true;
  for (int t = 0; t < 200; ++t) {
    const int c = static_cast<int>(rng.between(0, 100));
    const double rho = rng.uniform();
    exact = exact && dmba_minus_erase(random_set(rng, 64, 64, c), rho, t).count() ==
                         static_cast<std::size_t>(std::lround(rho * c));
  }
  const HeadPointSet ten = random_set(rng, 64, 64, 10);
  std::vector<int> kept(10, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const HeadPointSet out = dmba_minus_erase(ten, 0.5, seed);
    for (std::size_t i = 0; i < 10; ++i)
      kept[i] += std::find(out.points.begin(), out.points.end(), ten.points[i]) != out.points.end() ? 1 : 0;
  }
  double lo = 1.0, hi = 0.0;
  for (int k : kept) {
    lo = std::min(lo, k / 10000.0);
    hi = std::max(hi, k / 10000.0);
  }
  const bool uniform = lo >= 0.48 && hi <= 0.52;
  return {exact && uniform, std::string("cardinality ") + (exact ? "exact" : "WRONG") + ", retention in [" + fmt(lo) +
                                ", " + fmt(hi) + "]"};
}

Outcome boost_geometry() {
  Rng rng(104);
  const GaussianKernelSpec kernel;
  bool card = true, local = true;
  for (int t = 0; t < 100; ++t) {
    const int c = static_cast<int>(rng.between(1, 60));
    const HeadPointSet pts = random_set(rng, 128, 128, c);
    const HeadPointSet out = dmba_plus_boost(pts, 1.5, kernel, t);
    card = card && out.count() == pts.count() + static_cast<std::size_t>(std::lround(0.5 * c));
    const auto dbar = mean_neighbor_distance(pts, kernel.k_neighbors);
    for (std::size_t j = pts.count(); j < out.count(); ++j) {
      bool near = false;
      for (std::size_t i = 0; i < pts.count() && !near; ++i) {
        const double bound = (c == 1 ? 3.0 : std::max(1.0, std::floor(dbar[i] / 2.0))) + 0.5;
        near = std::hypot(out.points[j].row - snap(pts.points[i].row), out.points[j].col - snap(pts.points[i].col)) <=
               bound;
      }
      local = local && near;
    }
  }
  HeadPointSet lone;
  lone.image_height = 32;
  lone.image_width = 32;
  lone.points = {{10, 10}};
  const HeadPointSet first = dmba_plus_boost(lone, 2.0, kernel, 0);
  const bool up = first.count() == 2 && first.points[1] == HeadPoint{7, 10};
  return {card && local && up, std::string("cardinality ") + (card ? "exact" : "WRONG") + ", locality " +
                                   (local ? "ok" : "VIOLATED") + ", first insertion " + (up ? "(7,10)" : "WRONG")};
}

Outcome scale_linearity() {
  Rng rng(105);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const DensityMap z = render_density_map(random_set(rng, 64, 64, static_cast<int>(rng.between(1, 80))), {});
    for (double rho : {1.0, 2.0, 3.0}) {
      const double base = count_from_density(z);
      worst = std::max(worst, std::abs(count_from_density(dmba_plus_plus_scale(z, rho)) - rho * base) / (rho * base));
    }
  }
  return {worst <= 1e-9, "max relative error = " + fmt(worst)};
}

Outcome gradient_check() {
  const RegressorSpec spec = RegressorSpec::default_spec();
  auto p = RegressorParams<float>::initialize(spec, 106).cast<double>();
  Rng rng(106);
  for (auto& c : p.conv)
    for (auto& b : c.bias) b = rng.uniform(-0.1, 0.1);
  Tensor<double> x(1, 16, 16), z(1, 4, 4);
  for (auto& v : x.data) v = rng.uniform();
  for (auto& v : z.data) v = rng.uniform(0.0, 0.3);
  const Gradients<double> g = backward(p, x, z);
  const testing::GradientCheck r = testing::check_gradients(p, x, z, g, 200, 1e-5, rng);
  return {r.worst < 1e-4 && r.forward_gap < 1e-12,
          "max relative error over " + std::to_string(r.checked) + " parameters = " + fmt(r.worst) + ", " +
              std::to_string(r.resampled) + " kink-straddling probes redrawn, reference forward gap " +
              fmt(r.forward_gap)};
}

// Shared state for the end-to-end criteria.
struct Campaign {
  fs::path root;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<DatasetManifest> clean;
  std::vector<AttackRun> minus_runs;

  ExperimentSetup base() const {
    ExperimentSetup s;
    s.workers = 1;
    return s;
  }

  const DatasetManifest& clean_for(std::size_t i) {
    while (clean.size() <= i)
      clean.push_back(prepare_clean_dataset(base(), seeds[clean.size()], root / ("clean_" + std::to_string(clean.size()))));
    return clean[i];
  }

  std::vector<MetricsReport> run(const std::string& tag, const ExperimentSetup& setup, std::vector<AttackRun>* keep) {
    std::vector<MetricsReport> reports;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      AttackRun r = run_attack(setup, clean_for(i), seeds[i], root / (tag + "_" + std::to_string(i)));
      std::cout << "  " << tag << " seed " << seeds[i] << ": rho_clean " << fmt(r.metrics.rho_clean) << ", rho_dirty "
                << fmt(r.metrics.rho_dirty) << ", cmae " << fmt(r.metrics.cmae) << std::endl;
      reports.push_back(r.metrics);
      if (keep) keep->push_back(std::move(r));
    }
    return reports;
  }
};

Outcome end_to_end(Campaign& c) {
  const MetricsReport m = average(c.run("dmba-minus", c.base(), &c.minus_runs));
  const bool ok = m.rho_clean >= 0.75 && m.rho_clean <= 1.25 && m.rho_dirty < 0.6;
  return {ok, "mean rho_clean = " + fmt(m.rho_clean) + ", mean rho_dirty = " + fmt(m.rho_dirty)};
}

Outcome trigger_only(Campaign& c) {
  ExperimentSetup s = c.base();
  s.poison.alter.strategy = Strategy::tri_only;
  const MetricsReport m = average(c.run("tri-only", s, nullptr));
  return {m.rho_dirty > 0.8, "mean rho_dirty = " + fmt(m.rho_dirty) + " (rho_clean " + fmt(m.rho_clean) + ")"};
}

Outcome trigger_size(Campaign& c) {
  if (c.minus_runs.size() != c.seeds.size()) c.run("dmba-minus", c.base(), &c.minus_runs);
  std::vector<MetricsReport> full;
  for (const auto& r : c.minus_runs) full.push_back(r.metrics);
  ExperimentSetup s = c.base();
  s.poison.trigger.kind = TriggerKind::patch;
  s.poison.trigger.params.patch_side = 5;
  const MetricsReport patch = average(c.run("patch-5x5", s, nullptr));
  const MetricsReport whole = average(full);
  return {whole.rho_dirty < patch.rho_dirty,
          "full-image rho_dirty = " + fmt(whole.rho_dirty) + ", 5x5 patch rho_dirty = " + fmt(patch.rho_dirty)};
}

Outcome defenses(Campaign& c) {
  if (c.minus_runs.empty()) c.run("dmba-minus", c.base(), &c.minus_runs);
  const AttackRun& run = c.minus_runs.front();
  DefenseSetup setup;
  setup.anp_config.outer_steps = 200;
  AnpResult mask;
  const auto rows = run_defenses(run.params, run.clean, run.triggered, setup, &mask);
  DefenseSetup prune_only = setup;
  prune_only.fine_prune = false;
  prune_only.anp = false;
  const auto again = run_defenses(run.params, run.clean, run.triggered, prune_only);

  std::vector<DefenseRow> sweep;
  const DefenseRow* anp = nullptr;
  for (const auto& r : rows) {
    if (r.defense == "prune") sweep.push_back(r);
    if (r.defense == "anp") anp = &r;
  }
  const bool complete = sweep.size() == 10 && sweep.front().parameter == 0.0 && sweep.back().parameter == 0.9;
  const bool deterministic = defense_csv(sweep) == defense_csv(again);
  const bool degrades = complete && sweep.back().clean_mae > sweep.front().clean_mae;
  bool anp_ok = anp != nullptr && std::isfinite(anp->dirty_rho) && std::isfinite(anp->clean_mae);

  for (const auto& layer : mask.continuous.layers)
    for (double m : layer) anp_ok = anp_ok && m >= 0.0 && m <= 1.0;
  anp_ok = anp_ok && mask.objective.size() == 200;

  std::cout << defense_csv(rows);
  std::string detail = "sweep " + std::string(complete ? "complete" : "INCOMPLETE") + ", " +
                       (deterministic ? "deterministic" : "NONDETERMINISTIC") + ", clean MAE " +
                       fmt(complete ? sweep.front().clean_mae : 0) + " -> " + fmt(complete ? sweep.back().clean_mae : 0);
  if (anp) detail += ", ANP rho_dirty " + fmt(anp->dirty_rho) + " clean MAE " + fmt(anp->clean_mae);
  return {complete && deterministic && degrades && anp_ok, detail};
}

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> store{"densforge"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : store) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// Every recipe at a small scale, once serially and once with several workers.
Outcome cli_determinism(const fs::path& root) {
  const std::vector<std::string> scale{"--n-train", "8", "--n-test", "4", "--height", "32", "--width", "32",
                                       "--min-count", "3", "--max-count", "8"};
  auto recipes = [&](const fs::path& dir, const std::string& workers) {
    auto with = [&](std::vector<std::string> a, bool scaled) {
      if (scaled) a.insert(a.end(), scale.begin(), scale.end());
      a.insert(a.end(), {"--workers", workers});
      return cli(a);
    };
    const std::string d = dir.string();
    int bad = 0;
    bad += with({"synth", "--seed", "7", "--out", d + "/clean"}, true) != 0;
    bad += with({"poison", "--in", d + "/clean", "--out", d + "/poisoned", "--strategy", "dmba-plus", "--rho", "1.5",
                 "--gamma", "0.5", "--trigger", "snow", "--seed", "7"},
                false) != 0;
    bad += with({"trigger-test", "--in", d + "/clean", "--out", d + "/triggered", "--trigger", "snow", "--seed", "7"},
                false) != 0;
    bad += with({"train", "--in", d + "/poisoned", "--out", d + "/model", "--epochs", "2", "--batch", "4", "--seed",
                 "7"},
                false) != 0;
    bad += with({"eval", "--model", d + "/model/model.dfparam", "--clean", d + "/clean", "--triggered",
                 d + "/triggered", "--rho", "1.5", "--out", d + "/metrics.csv"},
                false) != 0;
    bad += with({"defend", "--model", d + "/model/model.dfparam", "--clean", d + "/clean", "--triggered",
                 d + "/triggered", "--out", d + "/defense", "--n-clean", "4", "--finetune-epochs", "1", "--anp-steps",
                 "3", "--seed", "7"},
                false) != 0;
    for (const std::string kind : {"trigger-type", "trigger-size", "rho-sweep", "gamma-sweep"})
      bad += with({"ablate", kind, "--seeds", "1,2", "--epochs", "1", "--batch", "4", "--out", d + "/ablate"}, true) !=
             0;
    bad += cli({"report", d + "/ablate/trigger-type.csv", d + "/ablate/trigger-size.csv", d + "/ablate/rho-sweep.csv",
                d + "/ablate/gamma-sweep.csv", d + "/defense/defense.csv", "--out", d + "/report"}) != 0;
    return bad;
  };
  const int bad_serial = recipes(root / "serial", "1");
  const int bad_parallel = recipes(root / "parallel", "4");
  if (bad_serial || bad_parallel) return {false, "a recipe failed"};

  std::size_t compared = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "serial")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "serial");
    const fs::path other = root / "parallel" / rel;
    ++compared;
    if (!fs::exists(other) || read_file(e.path()) != read_file(other)) {
      ++differing;
      std::cout << "  differs: " << rel.string() << std::endl;
    }
  }
  std::size_t parallel_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "parallel")) parallel_files += e.is_regular_file();
  const bool ok = differing == 0 && compared == parallel_files && compared > 0;
  return {ok, std::to_string(compared) + " output files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"densforge acceptance run"};
  std::vector<int> only;
  std::string work;
  bool keep = false;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--work-dir", work, "Directory for generated data (temporary by default)");
  app.add_flag("--keep", keep, "Keep generated data");
  CLI11_PARSE(app, argc, argv);

  std::optional<testing::TempDir> scratch;
  fs::path root;
  if (work.empty()) {
    scratch.emplace("acceptance");
    root = scratch->path();
  } else {
    root = work;
    fs::create_directories(root);
  }

  Campaign campaign;
  campaign.root = root / "campaign";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"density mass conservation", density_mass},
      {"blend exactness", blend_exactness},
      {"head erasing cardinality and uniformity", erase_uniformity},
      {"neighbor boosting geometry", boost_geometry},
      {"density scaling linearity", scale_linearity},
      {"gradient check", gradient_check},
      {"end-to-end backdoor", [&] { return end_to_end(campaign); }},
      {"trigger-only control", [&] { return trigger_only(campaign); }},
      {"trigger size direction", [&] { return trigger_size(campaign); }},
      {"defense trade-off report", [&] { return defenses(campaign); }},
      {"cli determinism", [&] { return cli_determinism(root / "cli"); }},
  };

  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string line = "criterion " + std::to_string(id) + " [" + criteria[i].first + "]: " +
                       (o.pass ? "PASS" : "FAIL") + " (" + o.detail + "; " + fmt(secs, 3) + " s)";
    std::cout << line << std::endl;
    lines.push_back(line);
    failures += o.pass ? 0 : 1;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << "\n";
  if (keep && scratch) std::cout << "data kept only with --work-dir\n";
  return failures == 0 ? 0 : 1;
}
