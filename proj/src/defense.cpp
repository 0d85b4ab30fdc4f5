#include "densforge/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densforge/error.hpp"
#include "densforge/io.hpp"

namespace densforge {

ChannelProfile activation_profile(const RegressorParams<float>& params, const std::vector<GrayImage>& clean_images) {
  if (clean_images.empty()) throw InvalidInput("activation profile needs at least one clean image");
  ChannelProfile total;
  for (const auto& image : clean_images) {
    const auto means = channel_activation_means(params, to_tensor<float>(image));
    if (total.empty()) {
      total = means;
    } else {
      for (std::size_t l = 0; l < total.size(); ++l)
        for (std::size_t c = 0; c < total[l].size(); ++c) total[l][c] += means[l][c];
    }
  }
  for (auto& layer : total)
    for (double& v : layer) v /= static_cast<double>(clean_images.size());
  return total;
}

std::vector<std::size_t> default_prune_layers(const RegressorSpec& spec) {
  const std::size_t n = spec.conv_count();
  std::vector<std::size_t> layers;
  if (n >= 3) layers.push_back(n - 3);
  if (n >= 2) layers.push_back(n - 2);
  return layers;
}

RegressorParams<float> prune(const RegressorParams<float>& params, const ChannelProfile& profile, double fraction,
                             const std::vector<std::size_t>& layers) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidInput("prune fraction must lie in [0,1]");
  RegressorParams<float> out = params;
  for (std::size_t l : layers) {
    if (l >= profile.size() || l >= out.mask.layers.size()) throw InvalidInput("prune layer index out of range");
    const std::size_t n = profile[l].size();
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return profile[l][a] < profile[l][b]; });
    for (std::size_t i = 0; i < k; ++i) out.mask.layers[l][order[i]] = 0.0;
  }
  return out;
}

RegressorParams<float> prune(const RegressorParams<float>& params, const ChannelProfile& profile, double fraction) {
  return prune(params, profile, fraction, default_prune_layers(params.spec));
}

RegressorParams<float> fine_prune(const RegressorParams<float>& pruned, const std::vector<TrainSample>& clean,
                                  const TrainConfig& config) {
  return train(pruned, clean, config);
}

double validation_loss(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                       const NeuronPerturbation* perturbation) {
  if (validation.empty()) throw InvalidInput("validation set is empty");
  double sum = 0.0;
  for (const auto& s : validation) {
    const Tensor<float> out = forward(params, s.input, perturbation);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const double d = static_cast<double>(out.data[i]) - static_cast<double>(s.target.data[i]);
      sum += 0.5 * d * d;
    }
  }
  return sum / static_cast<double>(validation.size());
}

namespace {

Gradients<float> mean_gradient(const RegressorParams<float>& params, const std::vector<TrainSample>& set,
                               const NeuronPerturbation* perturbation) {
  Gradients<float> total = Gradients<float>::zeros_like(params);
  for (const auto& s : set) total.add(backward(params, s.input, s.target, perturbation));
  total.scale(1.0 / static_cast<double>(set.size()));
  return total;
}

// Hidden conv layers: every conv layer except the output one.
std::size_t hidden_layers(const RegressorParams<float>& params) { return params.conv.size() - 1; }

}  // namespace

PerturbationResult anp_perturb(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                               double epsilon, int steps) {
  if (!(epsilon >= 0.0)) throw InvalidInput("perturbation budget must be >= 0");
  PerturbationResult best;
  best.perturbation = NeuronPerturbation::zeros(params.spec);
  best.base_loss = validation_loss(params, validation);
  best.loss = best.base_loss;
  if (epsilon == 0.0 || steps <= 0) return best;

  NeuronPerturbation current = best.perturbation;
  const double step = 2.0 * epsilon / steps;
  for (int it = 0; it < steps; ++it) {
    const Gradients<float> g = mean_gradient(params, validation, &current);
    for (std::size_t l = 0; l < hidden_layers(params); ++l)
      for (std::size_t c = 0; c < current.weight_scale[l].size(); ++c) {
        auto ascend = [&](double& v, double grad) {
          const double dir = grad > 0.0 ? 1.0 : (grad < 0.0 ? -1.0 : 0.0);
          v = std::clamp(v + step * dir, -epsilon, epsilon);
        };
        ascend(current.weight_scale[l][c], g.weight_scale[l][c]);
        ascend(current.bias_shift[l][c], g.bias_shift[l][c]);
      }
    const double loss = validation_loss(params, validation, &current);
    if (loss > best.loss) {
      best.loss = loss;
      best.perturbation = current;
    }
  }
  return best;
}

void AnpConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("ANP epsilon must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ANP alpha must lie in [0,1]");
  if (inner_steps < 0 || outer_steps < 0) throw ConfigError("ANP step counts must be >= 0");
  if (!(mask_learning_rate > 0.0)) throw ConfigError("ANP mask learning rate must be positive");
}

AnpResult anp_optimize_mask(const RegressorParams<float>& params, const std::vector<TrainSample>& validation,
                            const AnpConfig& config) {
  config.validate();
  retain_large_allocations();
  if (validation.empty()) throw InvalidInput("ANP needs a clean validation set");
  RegressorParams<float> model = params;
  const std::size_t hidden = hidden_layers(model);
  AnpResult result;
  for (int step = 0; step < config.outer_steps; ++step) {
    Gradients<float> g = mean_gradient(model, validation, nullptr);
    double objective = config.alpha * g.loss;
    for (auto& layer : g.mask)
      for (double& v : layer) v *= config.alpha;
    if (config.alpha < 1.0) {
      const PerturbationResult worst = anp_perturb(model, validation, config.epsilon, config.inner_steps);
      Gradients<float> gp = mean_gradient(model, validation, &worst.perturbation);
      objective += (1.0 - config.alpha) * gp.loss;
      for (std::size_t l = 0; l < g.mask.size(); ++l)
        for (std::size_t c = 0; c < g.mask[l].size(); ++c) g.mask[l][c] += (1.0 - config.alpha) * gp.mask[l][c];
    }
    if (!std::isfinite(objective))
      throw TrainingError("non-finite ANP objective at step " + std::to_string(step + 1));
    result.objective.push_back(objective);
    for (std::size_t l = 0; l < hidden; ++l)
      for (std::size_t c = 0; c < model.mask.layers[l].size(); ++c) {
        double& m = model.mask.layers[l][c];
        m = std::clamp(m - config.mask_learning_rate * g.mask[l][c], 0.0, 1.0);
      }
  }
  result.continuous = model.mask;
  result.binary = model.mask;
  for (std::size_t l = 0; l < hidden; ++l)
    for (double& m : result.binary.layers[l]) m = m >= config.threshold ? 1.0 : 0.0;
  return result;
}

std::string defense_csv(const std::vector<DefenseRow>& rows) {
  std::string out = "defense,fraction_or_alpha,clean_mae,clean_rho,dirty_rho\n";
  for (const auto& r : rows)
    out += r.defense + "," + format_double(r.parameter) + "," + format_double(r.clean_mae) + "," +
           format_double(r.clean_rho) + "," + format_double(r.dirty_rho) + "\n";
  return out;
}

}  // namespace densforge
