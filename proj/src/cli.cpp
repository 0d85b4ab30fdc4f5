#include "densforge/cli.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "densforge/error.hpp"
#include "densforge/experiment.hpp"
#include "densforge/io.hpp"
#include "densforge/svg.hpp"

namespace densforge {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Flags shared by several subcommands. Defaults match the library defaults.
struct Options {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string strategy = "dmba-minus";
  double rho = 0.2;
  double gamma = 0.2;
  std::string trigger = "rain";
  double lambda = 0.3;
  double trigger_area = 1.0;
  int patch_side = 5;
  std::string trigger_file;
  std::string out;
  std::string in;
  std::string clean;
  std::string triggered;
  std::string model;
  unsigned workers = 1;

  std::size_t n_train = 200;
  std::size_t n_test = 50;
  int height = 128;
  int width = 128;
  int min_count = 20;
  int max_count = 60;

  int epochs = 50;
  int batch = 8;
  double lr = 1e-3;
  std::string optimizer = "adam";

  std::vector<double> fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t n_clean = 20;
  int finetune_epochs = 20;
  int anp_steps = 2000;
  double anp_eps = 0.4;
  double anp_alpha = 0.2;
  bool no_fine_prune = false;
  bool no_anp = false;

  std::string ablation;
  std::vector<std::string> inputs;
};

void add_seed(CLI::App* app, Options& o) { app->add_option("--seed", o.seed, "Random seed")->capture_default_str(); }
void add_workers(CLI::App* app, Options& o) {
  app->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

void add_scale(CLI::App* app, Options& o) {
  app->add_option("--n-train", o.n_train, "Training scenes")->capture_default_str();
  app->add_option("--n-test", o.n_test, "Test scenes")->capture_default_str();
  app->add_option("--height", o.height, "Scene height")->capture_default_str();
  app->add_option("--width", o.width, "Scene width")->capture_default_str();
  app->add_option("--min-count", o.min_count, "Minimum heads per scene")->capture_default_str();
  app->add_option("--max-count", o.max_count, "Maximum heads per scene")->capture_default_str();
}

void add_trigger(CLI::App* app, Options& o) {
  app->add_option("--trigger", o.trigger, "rain, snow, light, patch or custom-file")->capture_default_str();
  app->add_option("--lambda", o.lambda, "Blend weight")->capture_default_str();
  app->add_option("--trigger-area", o.trigger_area, "Fraction of the image area the trigger covers")
      ->capture_default_str();
  app->add_option("--patch-side", o.patch_side, "Side of the patch trigger")->capture_default_str();
  app->add_option("--trigger-file", o.trigger_file, "Image used by the custom-file trigger");
}

void add_poison(CLI::App* app, Options& o) {
  app->add_option("--strategy", o.strategy, "dmba-minus, dmba-plus, dmba-plus-plus or tri-only")
      ->capture_default_str();
  app->add_option("--rho", o.rho, "Targeted manipulation ratio")->capture_default_str();
  app->add_option("--gamma", o.gamma, "Poisoning rate")->capture_default_str();
  add_trigger(app, o);
}

void add_training(CLI::App* app, Options& o) {
  app->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  app->add_option("--batch", o.batch, "Batch size")->capture_default_str();
  app->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  app->add_option("--optimizer", o.optimizer, "adam or sgd")->capture_default_str();
}

void add_defense(CLI::App* app, Options& o) {
  app->add_option("--fractions", o.fractions, "Pruning fractions")->delimiter(',');
  app->add_option("--n-clean", o.n_clean, "Defender clean samples")->capture_default_str();
  app->add_option("--finetune-epochs", o.finetune_epochs, "Fine-pruning epochs")->capture_default_str();
  app->add_option("--anp-steps", o.anp_steps, "ANP outer steps")->capture_default_str();
  app->add_option("--anp-eps", o.anp_eps, "ANP perturbation budget")->capture_default_str();
  app->add_option("--anp-alpha", o.anp_alpha, "ANP clean-loss weight")->capture_default_str();
  app->add_flag("--no-fine-prune", o.no_fine_prune, "Skip fine-pruning");
  app->add_flag("--no-anp", o.no_anp, "Skip ANP");
}

TriggerSpec trigger_spec(const Options& o) {
  TriggerSpec t;
  t.kind = parse_trigger_kind(o.trigger);
  t.seed = o.seed;
  t.params.patch_side = o.patch_side;
  t.params.custom_path = o.trigger_file;
  if (!(o.trigger_area > 0.0 && o.trigger_area <= 1.0)) throw ConfigError("--trigger-area must be in (0, 1]");
  if (o.trigger_area < 1.0) {
    t.params.region_height = std::max(1, static_cast<int>(std::lround(o.height * std::sqrt(o.trigger_area))));
    t.params.region_width = std::max(1, static_cast<int>(std::lround(o.width * std::sqrt(o.trigger_area))));
  }
  return t;
}

BlendSpec blend_spec(const Options& o) {
  BlendSpec b;
  b.lambda = o.lambda;
  b.validate();
  return b;
}

PoisonSpec poison_spec(const Options& o) {
  PoisonSpec p;
  p.alter.strategy = parse_strategy(o.strategy);
  p.alter.rho = o.rho;
  p.alter.seed = o.seed;
  p.gamma = o.gamma;
  p.trigger = trigger_spec(o);
  p.blend = blend_spec(o);
  p.validate();
  return p;
}

TrainConfig train_config(const Options& o) {
  TrainConfig c;
  c.epochs = o.epochs;
  c.batch_size = o.batch;
  c.seed = o.seed;
  c.workers = o.workers;
  if (o.optimizer == "adam") {
    c.optimizer.kind = OptimizerKind::adam;
  } else if (o.optimizer == "sgd") {
    c.optimizer.kind = OptimizerKind::sgd;
  } else {
    throw ConfigError("unknown optimizer '" + o.optimizer + "'");
  }
  c.optimizer.learning_rate = o.lr;
  return c;
}

SceneSpec scene_spec(const Options& o) {
  SceneSpec s;
  s.height = o.height;
  s.width = o.width;
  s.min_count = o.min_count;
  s.max_count = o.max_count;
  s.seed = o.seed;
  s.validate();
  return s;
}

ExperimentSetup experiment_setup(const Options& o) {
  ExperimentSetup s;
  s.scene = scene_spec(o);
  s.n_train = o.n_train;
  s.n_test = o.n_test;
  s.poison = poison_spec(o);
  s.train = train_config(o);
  s.workers = o.workers;
  return s;
}

DefenseSetup defense_setup(const Options& o) {
  DefenseSetup d;
  d.fractions = o.fractions;
  d.fine_prune = !o.no_fine_prune;
  d.anp = !o.no_anp;
  d.n_clean = o.n_clean;
  d.finetune.epochs = o.finetune_epochs;
  d.finetune.seed = o.seed;
  d.anp_config.outer_steps = o.anp_steps;
  d.anp_config.epsilon = o.anp_eps;
  d.anp_config.alpha = o.anp_alpha;
  d.anp_config.validate();
  d.target_rho = o.rho;
  d.workers = o.workers;
  return d;
}

void cmd_synth(const Options& o) {
  ExperimentSetup s = experiment_setup(o);
  const DatasetManifest m = prepare_clean_dataset(s, o.seed, o.out);
  std::cout << "wrote " << m.samples.size() << " scenes to " << o.out << "\n";
}

void cmd_poison(const Options& o) {
  const DatasetManifest clean = read_manifest(o.in);
  const DatasetManifest m = poison_dataset(clean, poison_spec(o), o.out, o.workers);
  std::size_t poisoned = 0;
  for (const auto& r : m.samples) poisoned += r.poisoned ? 1 : 0;
  std::cout << "poisoned " << poisoned << " of " << m.split(Split::train).size() << " training samples into "
            << o.out << "\n";
}

void cmd_trigger_test(const Options& o) {
  const DatasetManifest clean = read_manifest(o.in);
  const DatasetManifest m = trigger_test_set(clean, trigger_spec(o), blend_spec(o), o.out, o.workers);
  std::cout << "triggered " << m.samples.size() << " test samples into " << o.out << "\n";
}

void cmd_train(const Options& o) {
  const DatasetManifest data = read_manifest(o.in);
  TrainLog log;
  const auto params = train(data, RegressorSpec::default_spec(), train_config(o), &log);
  const fs::path out = o.out;
  save_checkpoint(out / "model.dfparam", params);
  write_file_atomic(out / "train_log.csv", log.to_csv());
  std::cout << "final loss " << format_double(log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()) << "\n";
}

void cmd_eval(const Options& o) {
  const auto params = load_checkpoint(o.model);
  const MetricsReport r = evaluate(params, read_manifest(o.clean), read_manifest(o.triggered), o.rho, o.workers);
  const std::string csv = r.to_csv();
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    write_file_atomic(o.out, csv);
  }
}

void cmd_defend(const Options& o) {
  const auto params = load_checkpoint(o.model);
  const auto rows = run_defenses(params, read_manifest(o.clean), read_manifest(o.triggered), defense_setup(o));
  write_file_atomic(fs::path(o.out) / "defense.csv", defense_csv(rows));
  std::cout << "wrote " << rows.size() << " defense rows to " << (fs::path(o.out) / "defense.csv").string() << "\n";
}

void cmd_ablate(const Options& o) {
  const AblationKind kind = parse_ablation_kind(o.ablation);
  const fs::path out = o.out;
  const auto rows = run_ablation(kind, experiment_setup(o), o.seeds, out / "work");
  const std::string name = to_string(kind);
  write_file_atomic(out / (name + ".csv"), ablation_csv(rows));
  write_file_atomic(out / (name + ".svg"), ablation_svg(name, rows));
  std::cout << ablation_csv(rows);
}

bool starts_with(const std::string& text, const std::string& prefix) { return text.rfind(prefix, 0) == 0; }

// Defense CSV -> line chart of clean MAE and dirty ratio against the pruned fraction.
std::string defense_svg(const std::string& title, const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> labels;
  ChartSeries mae{"clean_mae", {}}, dirty{"dirty_rho", {}};
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw InvalidInput("defense CSV row needs 5 columns: " + line);
    if (f[0] != "prune") continue;
    labels.push_back(f[1]);
    mae.values.push_back(parse_double(f[2], "clean_mae"));
    dirty.values.push_back(parse_double(f[4], "dirty_rho"));
  }
  return line_chart_svg(title, labels, {mae, dirty}, "value");
}

void cmd_report(const Options& o) {
  const fs::path out = o.out;
  std::string ablations = "ablation,config,rho_clean,rho_dirty,cmae,amae,crmse,armse\n";
  std::string defenses = "source,defense,fraction_or_alpha,clean_mae,clean_rho,dirty_rho\n";
  bool any_ablation = false, any_defense = false;
  for (const auto& input : o.inputs) {
    const fs::path path = input;
    const std::string text = read_file(path);
    const std::string stem = path.stem().string();
    if (starts_with(text, "config,")) {
      const auto rows = parse_ablation_csv(text);
      std::istringstream in(ablation_csv(rows));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) ablations += stem + "," + line + "\n";
      write_file_atomic(out / (stem + ".svg"), ablation_svg(stem, rows));
      any_ablation = true;
    } else if (starts_with(text, "defense,")) {
      std::istringstream in(text);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line))
        if (!line.empty()) defenses += stem + "," + line + "\n";
      write_file_atomic(out / (stem + ".svg"), defense_svg(stem, text));
      any_defense = true;
    } else {
      throw InvalidInput("unrecognized CSV: " + path.string());
    }
  }
  if (any_ablation) write_file_atomic(out / "ablations.csv", ablations);
  if (any_defense) write_file_atomic(out / "defenses.csv", defenses);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"densforge: density-manipulation backdoor toolkit for crowd counting"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic crowd dataset");
  add_seed(synth, o);
  add_scale(synth, o);
  add_workers(synth, o);
  synth->add_option("--out", o.out, "Dataset directory")->required();

  auto* poison = app.add_subcommand("poison", "Poison the training split of a dataset");
  add_seed(poison, o);
  add_poison(poison, o);
  add_workers(poison, o);
  poison->add_option("--in", o.in, "Clean dataset directory")->required();
  poison->add_option("--out", o.out, "Poisoned dataset directory")->required();

  auto* trig = app.add_subcommand("trigger-test", "Blend the trigger into every test image");
  add_seed(trig, o);
  add_trigger(trig, o);
  add_workers(trig, o);
  trig->add_option("--in", o.in, "Clean dataset directory")->required();
  trig->add_option("--out", o.out, "Triggered dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train the toy density regressor");
  add_seed(tr, o);
  add_training(tr, o);
  add_workers(tr, o);
  tr->add_option("--in", o.in, "Training dataset directory")->required();
  tr->add_option("--out", o.out, "Output directory for the checkpoint and loss log")->required();

  auto* ev = app.add_subcommand("eval", "Attack and accuracy metrics");
  ev->add_option("--model", o.model, "Checkpoint")->required();
  ev->add_option("--clean", o.clean, "Clean dataset directory")->required();
  ev->add_option("--triggered", o.triggered, "Triggered test set directory")->required();
  ev->add_option("--rho", o.rho, "Target ratio")->capture_default_str();
  ev->add_option("--out", o.out, "Metrics CSV (stdout if omitted)");
  add_workers(ev, o);

  auto* def = app.add_subcommand("defend", "Pruning, fine-pruning and ANP against a checkpoint");
  add_seed(def, o);
  add_defense(def, o);
  add_workers(def, o);
  def->add_option("--model", o.model, "Checkpoint")->required();
  def->add_option("--clean", o.clean, "Clean dataset directory")->required();
  def->add_option("--triggered", o.triggered, "Triggered test set directory")->required();
  def->add_option("--rho", o.rho, "Target ratio")->capture_default_str();
  def->add_option("--out", o.out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablate", "Run an ablation recipe over several seeds");
  abl->add_option("kind", o.ablation, "trigger-type, trigger-size, rho-sweep or gamma-sweep")
      ->required()
      ->check(CLI::IsMember({"trigger-type", "trigger-size", "rho-sweep", "gamma-sweep"}));
  abl->add_option("--seeds", o.seeds, "Seeds to average over")->delimiter(',');
  add_seed(abl, o);
  add_poison(abl, o);
  add_scale(abl, o);
  add_training(abl, o);
  add_workers(abl, o);
  abl->add_option("--out", o.out, "Output directory")->required();

  auto* rep = app.add_subcommand("report", "Merge ablation and defense CSVs and chart them");
  rep->add_option("inputs", o.inputs, "CSV files")->required();
  rep->add_option("--out", o.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failing->help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) cmd_synth(o);
    else if (poison->parsed()) cmd_poison(o);
    else if (trig->parsed()) cmd_trigger_test(o);
    else if (tr->parsed()) cmd_train(o);
    else if (ev->parsed()) cmd_eval(o);
    else if (def->parsed()) cmd_defend(o);
    else if (abl->parsed()) cmd_ablate(o);
    else if (rep->parsed()) cmd_report(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace densforge
