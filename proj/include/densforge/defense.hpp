#pragma once

#include <string>
#include <vector>

#include "densforge/metrics.hpp"
#include "densforge/regressor.hpp"

namespace densforge {

// Mean |post-activation| per channel for every conv layer.
using ChannelProfile = std::vector<std::vector<double>>;

ChannelProfile activation_profile(const RegressorParams<float>& params, const std::vector<GrayImage>& clean_images);

// Conv layers pruned by default: the last two before the output layer.
std::vector<std::size_t> default_prune_layers(const RegressorSpec& spec);

// Masks floor(fraction * channels) lowest-profile channels in each designated layer,
// ties broken by lower channel index first.
RegressorParams<float> prune(const RegressorParams<float>& params, const ChannelProfile& profile, double fraction,
                             const std::vector<std::size_t>& layers);
RegressorParams<float> prune(const RegressorParams<float>& params, const ChannelProfile& profile, double fraction);

// Finetunes the unmasked parameters on clean data; masked channels stay masked.
RegressorParams<float> fine_prune(const RegressorParams<float>& pruned, const std::vector<TrainSample>& clean,
                                  const TrainConfig& config);

// Mean per-sample 0.5 * ||F(x) - z||^2 over a validation set.
double validation_loss(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                       const NeuronPerturbation* perturbation = nullptr);

struct PerturbationResult {
  NeuronPerturbation perturbation;
  double loss = 0.0;       // validation loss at the returned perturbation
  double base_loss = 0.0;  // validation loss without perturbation
};

// Projected signed-gradient ascent on per-channel weight scales and bias shifts of the
// hidden conv layers, both kept in [-epsilon, epsilon]. Returns the best iterate seen,
// including the zero starting point.
PerturbationResult anp_perturb(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                               double epsilon, int steps);

struct AnpConfig {
  double epsilon = 0.4;
  double alpha = 0.2;
  int inner_steps = 1;
  int outer_steps = 2000;
  double mask_learning_rate = 0.2;
  double threshold = 0.5;

  void validate() const;
};

struct AnpResult {
  ChannelMask continuous;
  ChannelMask binary;  // continuous thresholded at config.threshold
  std::vector<double> objective;  // per outer step
};

AnpResult anp_optimize_mask(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                            const AnpConfig& config);

struct DefenseRow {
  std::string defense;
  double parameter = 0.0;  // pruned fraction or ANP alpha
  double clean_mae = 0.0;
  double clean_rho = 0.0;
  double dirty_rho = 0.0;
};

// "defense,fraction_or_alpha,clean_mae,clean_rho,dirty_rho"
std::string defense_csv(const std::vector<DefenseRow>& rows);

}  // namespace densforge
