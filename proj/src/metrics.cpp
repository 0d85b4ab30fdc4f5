#include "densforge/metrics.hpp"

#include <cmath>

#include "densforge/dataset.hpp"
#include "densforge/error.hpp"
#include "densforge/io.hpp"
#include "densforge/parallel.hpp"

namespace densforge {

std::string MetricsReport::to_csv() const {
  std::string out = "metric,value\n";
  auto row = [&](const char* name, double v) { out += std::string(name) + "," + format_double(v) + "\n"; };
  row("rho_clean", rho_clean);
  row("rho_dirty", rho_dirty);
  row("cmae", cmae);
  row("crmse", crmse);
  row("amae", amae);
  row("armse", armse);
  out += "n_test," + std::to_string(n_test) + "\n";
  row("target_rho", target_rho);
  return out;
}

namespace {

double mean_ratio(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size()) throw InvalidInput("prediction and ground-truth lengths differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] <= 0.0) continue;
    sum += predicted[i] / truth[i];
    ++n;
  }
  if (n == 0) throw InvalidInput("ratio metric needs at least one sample with a positive count");
  return sum / static_cast<double>(n);
}

}  // namespace

double rho_clean(const std::vector<double>& predicted, const std::vector<double>& truth) {
  return mean_ratio(predicted, truth);
}

double rho_dirty(const std::vector<double>& predicted_on_triggered, const std::vector<double>& truth,
                 [[maybe_unused]] double target_rho) {
  return mean_ratio(predicted_on_triggered, truth);
}

ErrorPair mae_rmse(const std::vector<double>& predicted, const std::vector<double>& reference) {
  if (predicted.size() != reference.size()) throw InvalidInput("prediction and reference lengths differ");
  if (predicted.empty()) throw InvalidInput("error metrics need at least one sample");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted[i] - reference[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(predicted.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::vector<double> predict_counts(const RegressorParams<float>& params, const DatasetManifest& manifest,
                                   unsigned workers) {
  const auto tests = manifest.split(Split::test);
  std::vector<double> out(tests.size());
  parallel_for(tests.size(), workers,
               [&](std::size_t i) { out[i] = predict_count(params, read_image(manifest.root / tests[i]->image_path)); });
  return out;
}

MetricsReport evaluate(const RegressorParams<float>& params, const DatasetManifest& clean_test,
                       const DatasetManifest& triggered_test, double target_rho, unsigned workers) {
  const auto clean = clean_test.split(Split::test);
  if (clean.empty()) throw InvalidInput("clean manifest has no test samples");
  std::vector<const SampleRecord*> triggered;
  for (const SampleRecord* rec : clean) {
    const SampleRecord* match = triggered_test.find(rec->id);
    if (!match || match->split != Split::test)
      throw InvalidInput("triggered manifest lacks test sample '" + rec->id + "'");
    triggered.push_back(match);
  }
  if (triggered_test.split(Split::test).size() != clean.size())
    throw InvalidInput("clean and triggered manifests have different test ids");

  const std::size_t n = clean.size();
  std::vector<double> truth(n), pred_clean(n), pred_dirty(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const GrayImage image = read_image(clean_test.root / clean[i]->image_path);
    truth[i] = static_cast<double>(
        read_points(clean_test.root / clean[i]->points_path, image.height, image.width).count());
    pred_clean[i] = predict_count(params, image);
    pred_dirty[i] = predict_count(params, read_image(triggered_test.root / triggered[i]->image_path));
  });

  MetricsReport r;
  r.n_test = n;
  r.target_rho = target_rho;
  r.rho_clean = rho_clean(pred_clean, truth);
  r.rho_dirty = rho_dirty(pred_dirty, truth, target_rho);
  const ErrorPair c = mae_rmse(pred_clean, truth);
  std::vector<double> altered(n);
  for (std::size_t i = 0; i < n; ++i) altered[i] = target_rho * truth[i];
  const ErrorPair a = mae_rmse(pred_dirty, altered);
  r.cmae = c.mae;
  r.crmse = c.rmse;
  r.amae = a.mae;
  r.armse = a.rmse;
  return r;
}

}  // namespace densforge
