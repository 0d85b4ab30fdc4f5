#pragma once

#include <string>
#include <vector>

#include "densforge/regressor.hpp"

namespace densforge {

struct DatasetManifest;

struct MetricsReport {
  double rho_clean = 0.0;
  double rho_dirty = 0.0;
  double cmae = 0.0;
  double crmse = 0.0;
  double amae = 0.0;
  double armse = 0.0;
  std::size_t n_test = 0;
  double target_rho = 1.0;

  // "metric,value" rows.
  std::string to_csv() const;
};

// Mean of predicted / true count, skipping samples whose true count is 0.
double rho_clean(const std::vector<double>& predicted, const std::vector<double>& truth);

// Same ratio on triggered inputs against the original counts, so a successful
// attack lands near target_rho. target_rho does not enter the value.
double rho_dirty(const std::vector<double>& predicted_on_triggered, const std::vector<double>& truth,
                 double target_rho);

struct ErrorPair {
  double mae = 0.0;
  double rmse = 0.0;
};

ErrorPair mae_rmse(const std::vector<double>& predicted, const std::vector<double>& reference);

std::vector<double> predict_counts(const RegressorParams<float>& params, const DatasetManifest& manifest,
                                   unsigned workers = 1);

// Runs the model on the test split of both manifests (matched by sample id).
MetricsReport evaluate(const RegressorParams<float>& params, const DatasetManifest& clean_test,
                       const DatasetManifest& triggered_test, double target_rho, unsigned workers = 1);

}  // namespace densforge
