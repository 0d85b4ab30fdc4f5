#include "densforge/regressor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "densforge/dataset.hpp"
#include "densforge/error.hpp"
#include "densforge/io.hpp"
#include "densforge/parallel.hpp"
#include "densforge/random.hpp"

namespace densforge {

RegressorSpec RegressorSpec::default_spec(int input_channels) {
  RegressorSpec spec;
  spec.input_channels = input_channels;
  spec.layers = {ConvLayer{8, 5, 1, Activation::relu},   DownsampleLayer{2},
                 ConvLayer{16, 3, 1, Activation::relu},  DownsampleLayer{2},
                 ConvLayer{16, 3, 1, Activation::relu},  ConvLayer{1, 1, 1, Activation::identity}};
  return spec;
}

void RegressorSpec::validate() const {
  if (input_channels < 1) throw ConfigError("regressor needs at least one input channel");
  if (layers.empty()) throw ConfigError("regressor needs at least one layer");
  const ConvLayer* last = nullptr;
  for (const auto& layer : layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      if (conv->out_channels < 1 || conv->kernel_size < 1 || conv->kernel_size % 2 == 0 || conv->stride < 1)
        throw ConfigError("conv layers need positive channels, an odd kernel size and stride >= 1");
      last = conv;
    } else if (std::get<DownsampleLayer>(layer).factor < 1) {
      throw ConfigError("downsample factor must be >= 1");
    }
  }
  if (!std::holds_alternative<ConvLayer>(layers.back()) || last->out_channels != 1)
    throw ConfigError("final layer must be a conv layer with one output channel");
}

int RegressorSpec::downsample_factor() const {
  int f = 1;
  for (const auto& layer : layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) f *= conv->stride;
    else f *= std::get<DownsampleLayer>(layer).factor;
  }
  return f;
}

std::size_t RegressorSpec::conv_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return std::holds_alternative<ConvLayer>(l); }));
}

std::vector<int> RegressorSpec::conv_channels() const {
  std::vector<int> out;
  for (const auto& layer : layers)
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) out.push_back(conv->out_channels);
  return out;
}

template <typename T>
Tensor<T> to_tensor(const GrayImage& image) {
  Tensor<T> t(image.channels, image.height, image.width);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int k = 0; k < image.channels; ++k) t.at(k, r, c) = static_cast<T>(image.at(r, c, k));
  return t;
}

template <typename T>
Tensor<T> to_tensor(const DensityMap& z) {
  Tensor<T> t(1, z.height, z.width);
  for (std::size_t i = 0; i < z.grid.size(); ++i) t.data[i] = static_cast<T>(z.grid[i]);
  return t;
}

template <typename T>
static DensityMap tensor_to_density(const Tensor<T>& t) {
  if (t.channels != 1) throw InvalidInput("density tensor must have one channel");
  DensityMap z(t.height, t.width);
  for (std::size_t i = 0; i < t.data.size(); ++i) z.grid[i] = static_cast<double>(t.data[i]);
  return z;
}

DensityMap to_density(const Tensor<float>& t) { return tensor_to_density(t); }
DensityMap to_density(const Tensor<double>& t) { return tensor_to_density(t); }

ChannelMask ChannelMask::ones(const RegressorSpec& spec) {
  ChannelMask m;
  for (int c : spec.conv_channels()) m.layers.emplace_back(static_cast<std::size_t>(c), 1.0);
  return m;
}

bool ChannelMask::all_ones() const {
  for (const auto& l : layers)
    for (double v : l)
      if (v != 1.0) return false;
  return true;
}

ChannelMask ChannelMask::operator*(const ChannelMask& other) const {
  if (layers.size() != other.layers.size()) throw InvalidInput("mask shapes differ");
  ChannelMask out = *this;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].size() != other.layers[l].size()) throw InvalidInput("mask shapes differ");
    for (std::size_t c = 0; c < layers[l].size(); ++c) out.layers[l][c] *= other.layers[l][c];
  }
  return out;
}

NeuronPerturbation NeuronPerturbation::zeros(const RegressorSpec& spec) {
  NeuronPerturbation p;
  for (int c : spec.conv_channels()) {
    p.weight_scale.emplace_back(static_cast<std::size_t>(c), 0.0);
    p.bias_shift.emplace_back(static_cast<std::size_t>(c), 0.0);
  }
  return p;
}

template <typename T>
RegressorParams<T> RegressorParams<T>::zeros(const RegressorSpec& spec) {
  spec.validate();
  RegressorParams<T> p;
  p.spec = spec;
  p.mask = ChannelMask::ones(spec);
  int in = spec.input_channels;
  for (const auto& layer : spec.layers) {
    const auto* conv = std::get_if<ConvLayer>(&layer);
    if (!conv) continue;
    ConvWeights<T> w;
    w.out_channels = conv->out_channels;
    w.in_channels = in;
    w.kernel_size = conv->kernel_size;
    w.weight.assign(static_cast<std::size_t>(w.out_channels) * in * w.kernel_size * w.kernel_size, T(0));
    w.bias.assign(static_cast<std::size_t>(w.out_channels), T(0));
    p.conv.push_back(std::move(w));
    in = conv->out_channels;
  }
  return p;
}

template <typename T>
RegressorParams<T> RegressorParams<T>::initialize(const RegressorSpec& spec, std::uint64_t seed) {
  RegressorParams<T> p = zeros(spec);
  Rng rng(hash64(seed, std::string_view("regressor-init")));
  for (auto& w : p.conv) {
    const double k2 = static_cast<double>(w.kernel_size) * w.kernel_size;
    const double limit = std::sqrt(6.0 / (w.in_channels * k2 + w.out_channels * k2));
    for (T& v : w.weight) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  return p;
}

template <typename T>
std::size_t RegressorParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : conv) n += w.weight.size() + w.bias.size();
  return n;
}

template <typename T>
bool RegressorParams<T>::all_finite() const {
  for (const auto& w : conv) {
    for (T v : w.weight)
      if (!std::isfinite(v)) return false;
    for (T v : w.bias)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Gradients<T> Gradients<T>::zeros_like(const RegressorParams<T>& params) {
  Gradients<T> g;
  for (const auto& w : params.conv) {
    g.weight.emplace_back(w.weight.size(), T(0));
    g.bias.emplace_back(w.bias.size(), T(0));
    g.mask.emplace_back(w.bias.size(), 0.0);
    g.weight_scale.emplace_back(w.bias.size(), 0.0);
    g.bias_shift.emplace_back(w.bias.size(), 0.0);
  }
  return g;
}

template <typename T>
void Gradients<T>::add(const Gradients& other) {
  auto acc = [](auto& dst, const auto& src) {
    for (std::size_t l = 0; l < dst.size(); ++l)
      for (std::size_t i = 0; i < dst[l].size(); ++i) dst[l][i] += src[l][i];
  };
  acc(weight, other.weight);
  acc(bias, other.bias);
  acc(mask, other.mask);
  acc(weight_scale, other.weight_scale);
  acc(bias_shift, other.bias_shift);
  loss += other.loss;
}

template <typename T>
void Gradients<T>::scale(double factor) {
  auto mul = [factor](auto& dst) {
    for (auto& layer : dst)
      for (auto& v : layer) v = static_cast<std::remove_reference_t<decltype(v)>>(v * factor);
  };
  mul(weight);
  mul(bias);
  mul(mask);
  mul(weight_scale);
  mul(bias_shift);
  loss *= factor;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  int in_channels, in_height, in_width;
  int kernel, stride, pad;
  int out_height, out_width;

  int rows() const { return in_channels * kernel * kernel; }
  int positions() const { return out_height * out_width; }
};

ConvGeometry conv_geometry(int channels, int height, int width, const ConvLayer& layer) {
  ConvGeometry g{channels, height, width, layer.kernel_size, layer.stride, layer.kernel_size / 2, 0, 0};
  g.out_height = (height + 2 * g.pad - g.kernel) / g.stride + 1;
  g.out_width = (width + 2 * g.pad - g.kernel) / g.stride + 1;
  return g;
}

template <typename T>
void im2col(const Tensor<T>& in, const ConvGeometry& g, std::vector<T>& cols) {
  const int P = g.positions();
  cols.assign(static_cast<std::size_t>(g.rows()) * P, T(0));
  for (int c = 0; c < g.in_channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols.data() + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * P;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          const T* src = &in.data[(static_cast<std::size_t>(c) * g.in_height + iy) * g.in_width];
          T* dst = row + static_cast<std::size_t>(oy) * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_width) dst[ox] = src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvGeometry& g, Tensor<T>& out) {
  out = Tensor<T>(g.in_channels, g.in_height, g.in_width);
  const int P = g.positions();
  for (int c = 0; c < g.in_channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols.data() + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * P;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          T* dst = &out.data[(static_cast<std::size_t>(c) * g.in_height + iy) * g.in_width];
          const T* src = row + static_cast<std::size_t>(oy) * g.out_width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_width) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
struct LayerTrace {
  Tensor<T> input;
  std::vector<T> cols;
  std::vector<T> linear;  // W * cols
  std::vector<T> pre;     // after scale, bias and shift
  std::vector<T> act;     // after the activation, before the mask
  ConvGeometry geometry{};
  int conv_index = -1;
};

template <typename T>
Tensor<T> run_forward(const RegressorParams<T>& params, const Tensor<T>& input,
                      const NeuronPerturbation* pert, std::vector<LayerTrace<T>>* trace) {
  if (input.channels != params.spec.input_channels)
    throw InvalidInput("input has " + std::to_string(input.channels) + " channels, network expects " +
                       std::to_string(params.spec.input_channels));
  Tensor<T> x = input;
  std::size_t conv_index = 0;
  if (trace) trace->clear();
  std::vector<T> cols, linear;
  for (const auto& layer : params.spec.layers) {
    LayerTrace<T> rec;
    if (trace) rec.input = x;
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const ConvWeights<T>& w = params.conv[conv_index];
      if (w.in_channels != x.channels) throw InvalidInput("conv input channel mismatch");
      const ConvGeometry g = conv_geometry(x.channels, x.height, x.width, *conv);
      if (g.out_height < 1 || g.out_width < 1) throw InvalidInput("input too small for conv layer");
      const int P = g.positions();
      im2col(x, g, cols);
      linear.resize(static_cast<std::size_t>(w.out_channels) * P);
      Eigen::Map<const RowMat<T>> wm(w.weight.data(), w.out_channels, g.rows());
      Eigen::Map<const RowMat<T>> cm(cols.data(), g.rows(), P);
      Eigen::Map<RowMat<T>> lm(linear.data(), w.out_channels, P);
      lm.noalias() = wm * cm;

      Tensor<T> y(w.out_channels, g.out_height, g.out_width);
      std::vector<T> pre, act;
      if (trace) {
        pre.resize(linear.size());
        act.resize(linear.size());
      }
      const auto& mask = params.mask.layers[conv_index];
      for (int o = 0; o < w.out_channels; ++o) {
        T scale = T(1);
        T shift = w.bias[o];
        if (pert) {
          scale = static_cast<T>(1.0 + pert->weight_scale[conv_index][o]);
          shift += static_cast<T>(pert->bias_shift[conv_index][o]);
        }
        const T m = static_cast<T>(mask[o]);
        const std::size_t base = static_cast<std::size_t>(o) * P;
        for (int p = 0; p < P; ++p) {
          const T z = scale * linear[base + p] + shift;
          const T a = (conv->activation == Activation::relu && z < T(0)) ? T(0) : z;
          y.data[base + p] = m * a;
          if (trace) {
            pre[base + p] = z;
            act[base + p] = a;
          }
        }
      }
      if (trace) {
        rec.cols = std::move(cols);
        rec.linear = std::move(linear);
        rec.pre = std::move(pre);
        rec.act = std::move(act);
        rec.geometry = g;
        rec.conv_index = static_cast<int>(conv_index);
      }
      x = std::move(y);
      ++conv_index;
    } else {
      const int f = std::get<DownsampleLayer>(layer).factor;
      if (x.height % f != 0 || x.width % f != 0)
        throw InvalidInput("feature map " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                           " not divisible by downsample factor " + std::to_string(f));
      Tensor<T> y(x.channels, x.height / f, x.width / f);
      const T inv = T(1) / static_cast<T>(f * f);
      for (int c = 0; c < x.channels; ++c)
        for (int r = 0; r < x.height; ++r)
          for (int col = 0; col < x.width; ++col) y.at(c, r / f, col / f) += x.at(c, r, col) * inv;
      x = std::move(y);
    }
    if (trace) trace->push_back(std::move(rec));
  }
  return x;
}

}  // namespace

template <typename T>
Tensor<T> forward(const RegressorParams<T>& params, const Tensor<T>& input, const NeuronPerturbation* perturbation) {
  return run_forward<T>(params, input, perturbation, nullptr);
}

template <typename T>
std::vector<std::vector<double>> channel_activation_means(const RegressorParams<T>& params, const Tensor<T>& input) {
  std::vector<LayerTrace<T>> trace;
  run_forward(params, input, nullptr, &trace);
  std::vector<std::vector<double>> out;
  for (const auto& rec : trace) {
    if (rec.conv_index < 0) continue;
    const int channels = params.conv[rec.conv_index].out_channels;
    const int P = rec.geometry.positions();
    std::vector<double> means(static_cast<std::size_t>(channels), 0.0);
    for (int o = 0; o < channels; ++o) {
      double s = 0.0;
      for (int p = 0; p < P; ++p) s += std::abs(static_cast<double>(rec.act[static_cast<std::size_t>(o) * P + p]));
      means[o] = s / P;
    }
    out.push_back(std::move(means));
  }
  return out;
}

template <typename T>
Gradients<T> backward(const RegressorParams<T>& params, const Tensor<T>& input, const Tensor<T>& target,
                      const NeuronPerturbation* perturbation) {
  std::vector<LayerTrace<T>> trace;
  const Tensor<T> out = run_forward(params, input, perturbation, &trace);
  if (out.channels != target.channels || out.height != target.height || out.width != target.width)
    throw InvalidInput("target shape " + std::to_string(target.height) + "x" + std::to_string(target.width) +
                       " does not match prediction " + std::to_string(out.height) + "x" + std::to_string(out.width));

  Gradients<T> grad = Gradients<T>::zeros_like(params);
  Tensor<T> g = out;
  double loss = 0.0;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    g.data[i] = out.data[i] - target.data[i];
    loss += 0.5 * static_cast<double>(g.data[i]) * static_cast<double>(g.data[i]);
  }
  grad.loss = loss;

  std::vector<T> g_lin, g_cols;
  for (std::size_t li = trace.size(); li-- > 0;) {
    const LayerTrace<T>& rec = trace[li];
    const LayerSpec& layer = params.spec.layers[li];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const int ci = rec.conv_index;
      const ConvWeights<T>& w = params.conv[ci];
      const ConvGeometry& geo = rec.geometry;
      const int P = geo.positions();
      const auto& mask = params.mask.layers[ci];
      g_lin.assign(static_cast<std::size_t>(w.out_channels) * P, T(0));
      for (int o = 0; o < w.out_channels; ++o) {
        const T m = static_cast<T>(mask[o]);
        const T scale = perturbation ? static_cast<T>(1.0 + perturbation->weight_scale[ci][o]) : T(1);
        const std::size_t base = static_cast<std::size_t>(o) * P;
        double g_mask = 0.0, g_bias = 0.0, g_scale = 0.0;
        for (int p = 0; p < P; ++p) {
          const T go = g.data[base + p];
          g_mask += static_cast<double>(rec.act[base + p]) * static_cast<double>(go);
          T gp = m * go;
          if (conv->activation == Activation::relu && rec.pre[base + p] <= T(0)) gp = T(0);
          g_bias += static_cast<double>(gp);
          g_scale += static_cast<double>(gp) * static_cast<double>(rec.linear[base + p]);
          g_lin[base + p] = scale * gp;
        }
        grad.mask[ci][o] = g_mask;
        grad.bias[ci][o] = static_cast<T>(g_bias);
        grad.bias_shift[ci][o] = g_bias;
        grad.weight_scale[ci][o] = g_scale;
      }
      Eigen::Map<const RowMat<T>> glm(g_lin.data(), w.out_channels, P);
      Eigen::Map<const RowMat<T>> cm(rec.cols.data(), geo.rows(), P);
      Eigen::Map<RowMat<T>> gwm(grad.weight[ci].data(), w.out_channels, geo.rows());
      gwm.noalias() = glm * cm.transpose();
      if (li == 0) break;  // no gradient needed for the network input
      Eigen::Map<const RowMat<T>> wm(w.weight.data(), w.out_channels, geo.rows());
      g_cols.resize(static_cast<std::size_t>(geo.rows()) * P);
      Eigen::Map<RowMat<T>> gcm(g_cols.data(), geo.rows(), P);
      gcm.noalias() = wm.transpose() * glm;
      col2im(g_cols, geo, g);
    } else {
      const int f = std::get<DownsampleLayer>(layer).factor;
      const Tensor<T>& in = rec.input;
      Tensor<T> gi(in.channels, in.height, in.width);
      const T inv = T(1) / static_cast<T>(f * f);
      for (int c = 0; c < in.channels; ++c)
        for (int r = 0; r < in.height; ++r)
          for (int col = 0; col < in.width; ++col) gi.at(c, r, col) = g.at(c, r / f, col / f) * inv;
      if (li == 0) break;
      g = std::move(gi);
    }
  }
  return grad;
}

template <typename T>
double batch_loss(const std::vector<Tensor<T>>& predicted, const std::vector<Tensor<T>>& target) {
  if (predicted.size() != target.size() || predicted.empty()) throw InvalidInput("batch sizes differ or are empty");
  double sum = 0.0;
  for (std::size_t b = 0; b < predicted.size(); ++b) {
    if (predicted[b].data.size() != target[b].data.size() || predicted[b].height != target[b].height)
      throw InvalidInput("prediction and target shapes differ");
    for (std::size_t i = 0; i < predicted[b].data.size(); ++i) {
      const double d = static_cast<double>(predicted[b].data[i]) - static_cast<double>(target[b].data[i]);
      sum += d * d;
    }
  }
  return sum / (2.0 * static_cast<double>(predicted.size()));
}

template <typename T>
double predict_count(const RegressorParams<T>& params, const GrayImage& image) {
  const Tensor<T> out = forward(params, to_tensor<T>(image));
  double s = 0.0;
  for (T v : out.data) s += static_cast<double>(v);
  return s;
}

TrainSample make_train_sample(const GrayImage& image, const DensityMap& density, const RegressorSpec& spec) {
  if (image.height != density.height || image.width != density.width)
    throw InvalidInput("image and density map sizes differ");
  return {to_tensor<float>(image), to_tensor<float>(sum_pool(density, spec.downsample_factor()))};
}

OptimizerState OptimizerState::create(const OptimizerConfig& config, const RegressorParams<float>& params) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  OptimizerState s;
  s.config = config;
  for (const auto& w : params.conv) {
    s.m_weight.emplace_back(w.weight.size(), 0.0);
    s.v_weight.emplace_back(w.weight.size(), 0.0);
    s.m_bias.emplace_back(w.bias.size(), 0.0);
    s.v_bias.emplace_back(w.bias.size(), 0.0);
  }
  return s;
}

void OptimizerState::apply(RegressorParams<float>& params, const Gradients<float>& grad) {
  ++step;
  const double lr = config.learning_rate;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  auto update = [&](float& p, double g, double& m, double& v) {
    if (config.kind == OptimizerKind::sgd) {
      p = static_cast<float>(p - lr * g);
      return;
    }
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g * g;
    p = static_cast<float>(p - lr * (m / c1) / (std::sqrt(v / c2) + config.epsilon));
  };
  for (std::size_t l = 0; l < params.conv.size(); ++l) {
    auto& w = params.conv[l];
    const std::size_t per_channel = w.weight.size() / static_cast<std::size_t>(w.out_channels);
    for (int o = 0; o < w.out_channels; ++o) {
      if (params.mask.layers[l][o] == 0.0) continue;
      for (std::size_t i = o * per_channel; i < (o + 1) * per_channel; ++i)
        update(w.weight[i], grad.weight[l][i], m_weight[l][i], v_weight[l][i]);
      update(w.bias[o], grad.bias[l][o], m_bias[l][o], v_bias[l][o]);
    }
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < epoch_loss.size(); ++e)
    out += std::to_string(e + 1) + "," + format_double(epoch_loss[e]) + "\n";
  return out;
}

void retain_large_allocations() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

RegressorParams<float> train(RegressorParams<float> params, const std::vector<TrainSample>& samples,
                             const TrainConfig& config, TrainLog* log) {
  retain_large_allocations();
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("epochs must be >= 0 and batch size >= 1");
  if (config.epochs > 0 && samples.empty()) throw InvalidInput("training set is empty");
  OptimizerState opt = OptimizerState::create(config.optimizer, params);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(hash64(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Gradients<float>> per_sample(end - start);
      parallel_for(end - start, config.workers, [&](std::size_t i) {
        const TrainSample& s = samples[order[start + i]];
        per_sample[i] = backward(params, s.input, s.target);
      });
      Gradients<float> total = Gradients<float>::zeros_like(params);
      for (const auto& g : per_sample) total.add(g);
      if (!std::isfinite(total.loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                            std::to_string(start));
      epoch_sum += total.loss;
      total.scale(1.0 / static_cast<double>(end - start));
      opt.apply(params, total);
    }
    if (log) log->epoch_loss.push_back(epoch_sum / static_cast<double>(samples.size()));
  }
  return params;
}

RegressorParams<float> train(const DatasetManifest& manifest, const RegressorSpec& spec, const TrainConfig& config,
                             TrainLog* log) {
  const auto loaded = load_split(manifest, Split::train, config.workers);
  std::vector<TrainSample> samples;
  samples.reserve(loaded.size());
  for (const auto& s : loaded) samples.push_back(make_train_sample(s.image, s.density, spec));
  return train(RegressorParams<float>::initialize(spec, config.seed), samples, config, log);
}

namespace {

void put_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw InvalidInput("checkpoint truncated");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return std::bit_cast<float>(bits);
}

std::string get_line(const std::string& in, std::size_t& pos) {
  const auto nl = in.find('\n', pos);
  if (nl == std::string::npos) throw InvalidInput("checkpoint truncated");
  std::string line = in.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

}  // namespace

std::string encode_checkpoint(const RegressorParams<float>& params) {
  std::string out = "DFPARAM v1\n";
  std::size_t conv_index = 0;
  for (std::size_t li = 0; li < params.spec.layers.size(); ++li) {
    const auto& layer = params.spec.layers[li];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const auto& w = params.conv[conv_index++];
      out += "layer " + std::to_string(li) + " conv " + std::to_string(w.out_channels) + " " +
             std::to_string(w.in_channels) + " " + std::to_string(w.kernel_size) + " " + std::to_string(conv->stride) +
             " " + (conv->activation == Activation::relu ? "relu" : "identity") + "\n";
      for (float v : w.weight) put_f32(out, v);
      for (float v : w.bias) put_f32(out, v);
    } else {
      out += "layer " + std::to_string(li) + " downsample avg " +
             std::to_string(std::get<DownsampleLayer>(layer).factor) + "\n";
    }
  }
  if (!params.mask.all_ones()) {
    for (std::size_t l = 0; l < params.mask.layers.size(); ++l) {
      out += "mask " + std::to_string(l) + " " + std::to_string(params.mask.layers[l].size()) + "\n";
      for (double v : params.mask.layers[l]) put_f32(out, v);
    }
  }
  return out;
}

RegressorParams<float> decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  if (get_line(bytes, pos) != "DFPARAM v1") throw InvalidInput("missing DFPARAM v1 header");
  RegressorSpec spec;
  std::vector<ConvWeights<float>> convs;
  std::vector<std::pair<std::size_t, std::vector<double>>> masks;
  while (pos < bytes.size()) {
    std::istringstream line(get_line(bytes, pos));
    std::string tag;
    line >> tag;
    if (tag == "layer") {
      std::size_t index = 0;
      std::string kind;
      line >> index >> kind;
      if (index != spec.layers.size()) throw InvalidInput("checkpoint layers out of order");
      if (kind == "conv") {
        ConvLayer c;
        ConvWeights<float> w;
        std::string act;
        line >> w.out_channels >> w.in_channels >> w.kernel_size >> c.stride >> act;
        if (!line || w.out_channels < 1 || w.in_channels < 1 || w.kernel_size < 1)
          throw InvalidInput("bad conv layer header in checkpoint");
        c.out_channels = w.out_channels;
        c.kernel_size = w.kernel_size;
        c.activation = act == "relu" ? Activation::relu : Activation::identity;
        if (convs.empty()) spec.input_channels = w.in_channels;
        w.weight.resize(static_cast<std::size_t>(w.out_channels) * w.in_channels * w.kernel_size * w.kernel_size);
        w.bias.resize(static_cast<std::size_t>(w.out_channels));
        for (float& v : w.weight) v = get_f32(bytes, pos);
        for (float& v : w.bias) v = get_f32(bytes, pos);
        spec.layers.push_back(c);
        convs.push_back(std::move(w));
      } else if (kind == "downsample") {
        std::string mode;
        int factor = 0;
        line >> mode >> factor;
        if (mode != "avg" || factor < 1) throw InvalidInput("bad downsample layer in checkpoint");
        spec.layers.push_back(DownsampleLayer{factor});
      } else {
        throw InvalidInput("unknown layer kind '" + kind + "' in checkpoint");
      }
    } else if (tag == "mask") {
      std::size_t index = 0, n = 0;
      line >> index >> n;
      std::vector<double> m(n);
      for (double& v : m) v = get_f32(bytes, pos);
      masks.emplace_back(index, std::move(m));
    } else {
      throw InvalidInput("unexpected checkpoint line '" + tag + "'");
    }
  }
  spec.validate();
  RegressorParams<float> params = RegressorParams<float>::zeros(spec);
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (convs[i].in_channels != params.conv[i].in_channels) throw InvalidInput("checkpoint channel chain mismatch");
    params.conv[i] = std::move(convs[i]);
  }
  for (auto& [index, m] : masks) {
    if (index >= params.mask.layers.size() || m.size() != params.mask.layers[index].size())
      throw InvalidInput("checkpoint mask shape mismatch");
    params.mask.layers[index] = std::move(m);
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const RegressorParams<float>& params) {
  write_file_atomic(path, encode_checkpoint(params));
}

RegressorParams<float> load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const InvalidInput& e) {
    throw IoError(path.string(), e.what());
  }
}

#define DENSFORGE_INSTANTIATE(T)                                                                              \
  template Tensor<T> to_tensor<T>(const GrayImage&);                                                          \
  template Tensor<T> to_tensor<T>(const DensityMap&);                                                         \
  template struct RegressorParams<T>;                                                                         \
  template struct Gradients<T>;                                                                               \
  template Tensor<T> forward<T>(const RegressorParams<T>&, const Tensor<T>&, const NeuronPerturbation*);      \
  template std::vector<std::vector<double>> channel_activation_means<T>(const RegressorParams<T>&,            \
                                                                        const Tensor<T>&);                    \
  template Gradients<T> backward<T>(const RegressorParams<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                    const NeuronPerturbation*);                                               \
  template double batch_loss<T>(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&);                \
  template double predict_count<T>(const RegressorParams<T>&, const GrayImage&);

DENSFORGE_INSTANTIATE(float)
DENSFORGE_INSTANTIATE(double)

#undef DENSFORGE_INSTANTIATE

}  // namespace densforge
