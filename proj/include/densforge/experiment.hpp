#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "densforge/dataset.hpp"
#include "densforge/defense.hpp"
#include "densforge/metrics.hpp"
#include "densforge/regressor.hpp"
#include "densforge/scene.hpp"

namespace densforge {

// One end-to-end attack configuration: synthesize, poison, train, evaluate.
struct ExperimentSetup {
  SceneSpec scene;
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  GaussianKernelSpec kernel;
  PoisonSpec poison;
  RegressorSpec network = RegressorSpec::default_spec();
  TrainConfig train;
  unsigned workers = 1;
};

struct AttackRun {
  MetricsReport metrics;
  RegressorParams<float> params;
  TrainLog log;
  DatasetManifest clean;
  DatasetManifest poisoned;
  DatasetManifest triggered;
};

// Clean synthetic dataset for one repeat; the scene seed is `seed`.
DatasetManifest prepare_clean_dataset(const ExperimentSetup& setup, std::uint64_t seed,
                                      const std::filesystem::path& root);

// Poisons `clean`, triggers its test split, trains and evaluates. Poisoning, trigger
// and training seeds are derived from `seed`.
AttackRun run_attack(const ExperimentSetup& setup, const DatasetManifest& clean, std::uint64_t seed,
                     const std::filesystem::path& work_dir);

enum class AblationKind { trigger_type, trigger_size, rho_sweep, gamma_sweep };

std::string to_string(AblationKind kind);
AblationKind parse_ablation_kind(const std::string& name);

struct AblationConfig {
  std::string label;
  ExperimentSetup setup;
};

// The configurations a sweep runs, derived from `base`.
std::vector<AblationConfig> ablation_configs(AblationKind kind, const ExperimentSetup& base);

struct AblationRow {
  std::string config;
  MetricsReport mean;  // averaged over seeds
};

std::vector<AblationRow> run_ablation(AblationKind kind, const ExperimentSetup& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::filesystem::path& work_dir);

// "config,rho_clean,rho_dirty,cmae,amae,crmse,armse"
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::vector<AblationRow> parse_ablation_csv(const std::string& text);
std::string ablation_svg(const std::string& title, const std::vector<AblationRow>& rows);

MetricsReport average(const std::vector<MetricsReport>& reports);

struct DefenseSetup {
  std::vector<double> fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  bool fine_prune = true;
  bool anp = true;
  std::size_t n_clean = 20;  // defender's clean samples, taken from the clean train split
  TrainConfig finetune{20, 4, 0, 1, {}};
  AnpConfig anp_config;
  double target_rho = 0.2;
  unsigned workers = 1;
};

// Pruning sweep, fine-pruning sweep and ANP against a trained model. The ANP mask is
// copied to `anp_out` when given.
std::vector<DefenseRow> run_defenses(const RegressorParams<float>& params, const DatasetManifest& clean,
                                     const DatasetManifest& triggered, const DefenseSetup& setup,
                                     AnpResult* anp_out = nullptr);

}  // namespace densforge
