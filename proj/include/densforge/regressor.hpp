#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "densforge/density.hpp"
#include "densforge/image.hpp"

namespace densforge {

struct DatasetManifest;

enum class Activation { relu, identity };

struct ConvLayer {
  int out_channels = 1;
  int kernel_size = 3;
  int stride = 1;
  Activation activation = Activation::relu;
  bool operator==(const ConvLayer&) const = default;
};

// Average pooling over factor x factor blocks.
struct DownsampleLayer {
  int factor = 2;
  bool operator==(const DownsampleLayer&) const = default;
};

using LayerSpec = std::variant<ConvLayer, DownsampleLayer>;

struct RegressorSpec {
  int input_channels = 1;
  std::vector<LayerSpec> layers;

  // conv(8,5) relu, avg/2, conv(16,3) relu, avg/2, conv(16,3) relu, conv(1,1) identity.
  static RegressorSpec default_spec(int input_channels = 1);

  void validate() const;
  // Total spatial reduction between input and output.
  int downsample_factor() const;
  std::size_t conv_count() const;
  // Output channel count of each conv layer, in order.
  std::vector<int> conv_channels() const;
  bool operator==(const RegressorSpec&) const = default;
};

// Channels-first dense tensor.
template <typename T>
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}
  T& at(int c, int r, int col) { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  T at(int c, int r, int col) const { return data[(static_cast<std::size_t>(c) * height + r) * width + col]; }
  T sum() const {
    T s(0);
    for (T v : data) s += v;
    return s;
  }
};

template <typename T>
Tensor<T> to_tensor(const GrayImage& image);
template <typename T>
Tensor<T> to_tensor(const DensityMap& z);
DensityMap to_density(const Tensor<float>& t);
DensityMap to_density(const Tensor<double>& t);

template <typename T>
struct ConvWeights {
  int out_channels = 0;
  int in_channels = 0;
  int kernel_size = 0;
  std::vector<T> weight;  // [out][in][k][k]
  std::vector<T> bias;    // [out]
};

// Per-channel multipliers on each conv layer's post-activation output.
struct ChannelMask {
  std::vector<std::vector<double>> layers;

  static ChannelMask ones(const RegressorSpec& spec);
  bool all_ones() const;
  // Elementwise product of two masks of the same shape.
  ChannelMask operator*(const ChannelMask& other) const;
};

// Per-channel neuron perturbation: each channel's conv weights are scaled by
// (1 + weight_scale) and bias_shift is added to its bias.
struct NeuronPerturbation {
  std::vector<std::vector<double>> weight_scale;
  std::vector<std::vector<double>> bias_shift;

  static NeuronPerturbation zeros(const RegressorSpec& spec);
};

template <typename T>
struct RegressorParams {
  RegressorSpec spec;
  std::vector<ConvWeights<T>> conv;
  ChannelMask mask;

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias, all-ones mask.
  static RegressorParams initialize(const RegressorSpec& spec, std::uint64_t seed);
  static RegressorParams zeros(const RegressorSpec& spec);

  template <typename U>
  RegressorParams<U> cast() const {
    RegressorParams<U> out;
    out.spec = spec;
    out.mask = mask;
    for (const auto& c : conv) {
      ConvWeights<U> w;
      w.out_channels = c.out_channels;
      w.in_channels = c.in_channels;
      w.kernel_size = c.kernel_size;
      w.weight.assign(c.weight.begin(), c.weight.end());
      w.bias.assign(c.bias.begin(), c.bias.end());
      out.conv.push_back(std::move(w));
    }
    return out;
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
};

template <typename T>
struct Gradients {
  std::vector<std::vector<T>> weight;
  std::vector<std::vector<T>> bias;
  std::vector<std::vector<double>> mask;
  std::vector<std::vector<double>> weight_scale;
  std::vector<std::vector<double>> bias_shift;
  double loss = 0.0;

  static Gradients zeros_like(const RegressorParams<T>& params);
  void add(const Gradients& other);
  void scale(double factor);
};

template <typename T>
Tensor<T> forward(const RegressorParams<T>& params, const Tensor<T>& input,
                  const NeuronPerturbation* perturbation = nullptr);

// Mean |post-activation| per conv channel, before the channel mask.
template <typename T>
std::vector<std::vector<double>> channel_activation_means(const RegressorParams<T>& params,
                                                          const Tensor<T>& input);

// Loss 0.5 * ||prediction - target||^2 for one sample plus exact gradients with respect
// to the weights, biases, channel mask and neuron perturbation.
template <typename T>
Gradients<T> backward(const RegressorParams<T>& params, const Tensor<T>& input, const Tensor<T>& target,
                      const NeuronPerturbation* perturbation = nullptr);

// (1 / 2B) * sum over the batch of squared L2 residuals.
template <typename T>
double batch_loss(const std::vector<Tensor<T>>& predicted, const std::vector<Tensor<T>>& target);

template <typename T>
double predict_count(const RegressorParams<T>& params, const GrayImage& image);

struct TrainSample {
  Tensor<float> input;
  Tensor<float> target;  // at output resolution
};

// Image to input tensor, density map sum-pooled to the network's output resolution.
TrainSample make_train_sample(const GrayImage& image, const DensityMap& density, const RegressorSpec& spec);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment buffers and step counter; buffers mirror the conv weights and biases.
struct OptimizerState {
  OptimizerConfig config;
  std::vector<std::vector<double>> m_weight, v_weight, m_bias, v_bias;
  long long step = 0;

  static OptimizerState create(const OptimizerConfig& config, const RegressorParams<float>& params);
  // Channels whose mask entry is 0 are left untouched.
  void apply(RegressorParams<float>& params, const Gradients<float>& grad);
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  OptimizerConfig optimizer;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
  std::string to_csv() const;
};

// Stops glibc from unmapping large per-sample buffers after every free, which otherwise
// dominates training time. No-op on other C libraries.
void retain_large_allocations();

// Mixed-batch minibatch training; per-sample gradients are reduced in sample-index
// order so any worker count gives bit-identical parameters.
RegressorParams<float> train(RegressorParams<float> params, const std::vector<TrainSample>& samples,
                             const TrainConfig& config, TrainLog* log = nullptr);

// Loads the manifest's train split and trains a freshly initialized network.
RegressorParams<float> train(const DatasetManifest& manifest, const RegressorSpec& spec, const TrainConfig& config,
                             TrainLog* log = nullptr);

// "DFPARAM v1" checkpoint.
std::string encode_checkpoint(const RegressorParams<float>& params);
RegressorParams<float> decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const RegressorParams<float>& params);
RegressorParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace densforge
