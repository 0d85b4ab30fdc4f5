#include "densforge/experiment.hpp"

#include <cmath>
#include <sstream>

#include "densforge/error.hpp"
#include "densforge/io.hpp"
#include "densforge/parallel.hpp"
#include "densforge/random.hpp"
#include "densforge/svg.hpp"

namespace densforge {

namespace fs = std::filesystem;

DatasetManifest prepare_clean_dataset(const ExperimentSetup& setup, std::uint64_t seed, const fs::path& root) {
  SceneSpec scene = setup.scene;
  scene.seed = seed;
  const std::size_t n = setup.n_train + setup.n_test;
  SplitSpec split;
  split.train_fraction = n == 0 ? 1.0 : static_cast<double>(setup.n_train) / static_cast<double>(n);
  split.test_fraction = 1.0 - split.train_fraction;
  return generate_dataset(scene, n, split, root, setup.kernel, setup.workers);
}

AttackRun run_attack(const ExperimentSetup& setup, const DatasetManifest& clean, std::uint64_t seed,
                     const fs::path& work_dir) {
  PoisonSpec poison = setup.poison;
  poison.alter.seed = hash64(seed, std::string_view("poison"));
  poison.trigger.seed = hash64(seed, std::string_view("trigger"));
  TrainConfig train_config = setup.train;
  train_config.seed = hash64(seed, std::string_view("train"));
  train_config.workers = setup.workers;

  AttackRun run;
  run.clean = clean;
  run.poisoned = poison_dataset(clean, poison, work_dir / "poisoned", setup.workers);
  run.triggered = trigger_test_set(clean, poison.trigger, poison.blend, work_dir / "triggered", setup.workers);
  run.params = train(run.poisoned, setup.network, train_config, &run.log);
  run.metrics = evaluate(run.params, clean, run.triggered, poison.alter.rho, setup.workers);
  return run;
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::trigger_type: return "trigger-type";
    case AblationKind::trigger_size: return "trigger-size";
    case AblationKind::rho_sweep: return "rho-sweep";
    case AblationKind::gamma_sweep: return "gamma-sweep";
  }
  return "unknown";
}

AblationKind parse_ablation_kind(const std::string& name) {
  if (name == "trigger-type") return AblationKind::trigger_type;
  if (name == "trigger-size") return AblationKind::trigger_size;
  if (name == "rho-sweep") return AblationKind::rho_sweep;
  if (name == "gamma-sweep") return AblationKind::gamma_sweep;
  throw ConfigError("unknown ablation '" + name + "'");
}

std::vector<AblationConfig> ablation_configs(AblationKind kind, const ExperimentSetup& base) {
  std::vector<AblationConfig> configs;
  switch (kind) {
    case AblationKind::trigger_type:
      for (TriggerKind k : {TriggerKind::rain, TriggerKind::snow, TriggerKind::light}) {
        ExperimentSetup s = base;
        s.poison.trigger.kind = k;
        configs.push_back({to_string(k), s});
      }
      break;
    case AblationKind::trigger_size: {
      // Square-ish regions covering the given fraction of the image area.
      const std::pair<const char*, double> sizes[] = {{"0", 0.0}, {"1/16", 1.0 / 16}, {"1/4", 0.25}, {"1/2", 0.5}, {"full", 1.0}};
      for (const auto& [label, area] : sizes) {
        ExperimentSetup s = base;
        if (area == 0.0) {
          s.poison.blend.lambda = 0.0;
        } else if (area < 1.0) {
          s.poison.trigger.params.region_height = static_cast<int>(std::lround(base.scene.height * std::sqrt(area)));
          s.poison.trigger.params.region_width = static_cast<int>(std::lround(base.scene.width * std::sqrt(area)));
        }
        configs.push_back({label, s});
      }
      ExperimentSetup patch = base;
      patch.poison.trigger.kind = TriggerKind::patch;
      patch.poison.trigger.params.patch_side = 5;
      configs.push_back({"patch-5x5", patch});
      break;
    }
    case AblationKind::rho_sweep: {
      std::vector<double> rhos;
      switch (base.poison.alter.strategy) {
        case Strategy::dmba_plus: rhos = {1.2, 1.4, 1.6, 1.8}; break;
        case Strategy::dmba_plus_plus: rhos = {2.0, 3.0, 4.0}; break;
        default: rhos = {0.2, 0.3, 0.4, 0.5}; break;
      }
      for (double rho : rhos) {
        ExperimentSetup s = base;
        s.poison.alter.rho = rho;
        configs.push_back({"rho=" + format_double(rho), s});
      }
      break;
    }
    case AblationKind::gamma_sweep:
      for (double gamma : {0.05, 0.1, 0.15, 0.2}) {
        ExperimentSetup s = base;
        s.poison.gamma = gamma;
        configs.push_back({"gamma=" + format_double(gamma), s});
      }
      break;
  }
  return configs;
}

MetricsReport average(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InvalidInput("nothing to average");
  MetricsReport m;
  m.target_rho = reports.front().target_rho;
  for (const auto& r : reports) {
    m.rho_clean += r.rho_clean;
    m.rho_dirty += r.rho_dirty;
    m.cmae += r.cmae;
    m.crmse += r.crmse;
    m.amae += r.amae;
    m.armse += r.armse;
    m.n_test += r.n_test;
  }
  const double n = static_cast<double>(reports.size());
  m.rho_clean /= n;
  m.rho_dirty /= n;
  m.cmae /= n;
  m.crmse /= n;
  m.amae /= n;
  m.armse /= n;
  return m;
}

std::vector<AblationRow> run_ablation(AblationKind kind, const ExperimentSetup& base,
                                      const std::vector<std::uint64_t>& seeds, const fs::path& work_dir) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto configs = ablation_configs(kind, base);
  std::vector<std::vector<MetricsReport>> reports(configs.size());
  for (std::uint64_t seed : seeds) {
    const fs::path seed_dir = work_dir / ("seed_" + std::to_string(seed));
    const DatasetManifest clean = prepare_clean_dataset(base, seed, seed_dir / "clean");
    for (std::size_t c = 0; c < configs.size(); ++c) {
      const AttackRun run = run_attack(configs[c].setup, clean, seed, seed_dir / ("config_" + std::to_string(c)));
      reports[c].push_back(run.metrics);
    }
  }
  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < configs.size(); ++c) rows.push_back({configs[c].label, average(reports[c])});
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,rho_clean,rho_dirty,cmae,amae,crmse,armse\n";
  for (const auto& r : rows)
    out += r.config + "," + format_double(r.mean.rho_clean) + "," + format_double(r.mean.rho_dirty) + "," +
           format_double(r.mean.cmae) + "," + format_double(r.mean.amae) + "," + format_double(r.mean.crmse) + "," +
           format_double(r.mean.armse) + "\n";
  return out;
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "config,rho_clean,rho_dirty,cmae,amae,crmse,armse")
    throw InvalidInput("not an ablation CSV");
  std::vector<AblationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw InvalidInput("ablation CSV row needs 7 columns: " + line);
    AblationRow r;
    r.config = f[0];
    r.mean.rho_clean = parse_double(f[1], "rho_clean");
    r.mean.rho_dirty = parse_double(f[2], "rho_dirty");
    r.mean.cmae = parse_double(f[3], "cmae");
    r.mean.amae = parse_double(f[4], "amae");
    r.mean.crmse = parse_double(f[5], "crmse");
    r.mean.armse = parse_double(f[6], "armse");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string ablation_svg(const std::string& title, const std::vector<AblationRow>& rows) {
  std::vector<std::string> labels;
  ChartSeries clean{"rho_clean", {}}, dirty{"rho_dirty", {}};
  for (const auto& r : rows) {
    labels.push_back(r.config);
    clean.values.push_back(r.mean.rho_clean);
    dirty.values.push_back(r.mean.rho_dirty);
  }
  const double one = 1.0;
  return bar_chart_svg(title, labels, {clean, dirty}, "count ratio", &one);
}

namespace {

DefenseRow defense_row(const std::string& name, double parameter, const RegressorParams<float>& model,
                       const DatasetManifest& clean, const DatasetManifest& triggered, double rho) {
  const MetricsReport m = evaluate(model, clean, triggered, rho);
  return {name, parameter, m.cmae, m.rho_clean, m.rho_dirty};
}

}  // namespace

std::vector<DefenseRow> run_defenses(const RegressorParams<float>& params, const DatasetManifest& clean,
                                     const DatasetManifest& triggered, const DefenseSetup& setup,
                                     AnpResult* anp_out) {
  const auto train_records = clean.split(Split::train);
  const std::size_t n = std::min(setup.n_clean, train_records.size());
  if (n == 0) throw InvalidInput("defenses need clean training samples");
  std::vector<GrayImage> images;
  std::vector<TrainSample> samples;
  for (std::size_t i = 0; i < n; ++i) {
    LoadedSample s = load_sample(clean.root, *train_records[i], clean.kernel);
    samples.push_back(make_train_sample(s.image, s.density, params.spec));
    images.push_back(std::move(s.image));
  }
  const ChannelProfile profile = activation_profile(params, images);

  const std::size_t nf = setup.fractions.size();
  std::vector<DefenseRow> pruned_rows(nf), finetuned_rows(nf);
  parallel_for(nf, setup.workers, [&](std::size_t i) {
    const double f = setup.fractions[i];
    const RegressorParams<float> pruned = prune(params, profile, f);
    pruned_rows[i] = defense_row("prune", f, pruned, clean, triggered, setup.target_rho);
    if (setup.fine_prune) {
      TrainConfig cfg = setup.finetune;
      cfg.workers = 1;
      const RegressorParams<float> tuned = fine_prune(pruned, samples, cfg);
      finetuned_rows[i] = defense_row("fine-prune", f, tuned, clean, triggered, setup.target_rho);
    }
  });

  std::vector<DefenseRow> rows = pruned_rows;
  if (setup.fine_prune) rows.insert(rows.end(), finetuned_rows.begin(), finetuned_rows.end());
  if (setup.anp) {
    const AnpResult anp = anp_optimize_mask(params, samples, setup.anp_config);
    RegressorParams<float> masked = params;
    masked.mask = params.mask * anp.binary;
    rows.push_back(defense_row("anp", setup.anp_config.alpha, masked, clean, triggered, setup.target_rho));
    if (anp_out) *anp_out = anp;
  }
  return rows;
}

}  // namespace densforge
