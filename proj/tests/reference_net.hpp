#pragma once

// Direct-loop reference of the regressor forward pass, independent of the library's
// im2col/GEMM path. Used as the finite-difference oracle in gradient checks.

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include "densforge/regressor.hpp"

namespace densforge::testing {

struct ReferencePass {
  Tensor<double> output;
  std::vector<double> relu_inputs;  // every pre-activation that feeds a relu
};

inline ReferencePass reference_forward(const RegressorParams<double>& p, const Tensor<double>& input) {
  ReferencePass pass;
  Tensor<double> x = input;
  std::size_t li = 0;
  for (const auto& layer : p.spec.layers) {
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      const auto& w = p.conv[li];
      const int k = conv->kernel_size, s = conv->stride, pad = k / 2;
      const int oh = (x.height + 2 * pad - k) / s + 1, ow = (x.width + 2 * pad - k) / s + 1;
      Tensor<double> y(w.out_channels, oh, ow);
      for (int o = 0; o < w.out_channels; ++o)
        for (int r = 0; r < oh; ++r)
          for (int c = 0; c < ow; ++c) {
            double acc = w.bias[o];
            for (int i = 0; i < w.in_channels; ++i)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = r * s - pad + ky, ix = c * s - pad + kx;
                  if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) continue;
                  acc += w.weight[((static_cast<std::size_t>(o) * w.in_channels + i) * k + ky) * k + kx] * x.at(i, iy, ix);
                }
            if (conv->activation == Activation::relu) {
              pass.relu_inputs.push_back(acc);
              acc = std::max(acc, 0.0);
            }
            y.at(o, r, c) = p.mask.layers[li][o] * acc;
          }
      x = std::move(y);
      ++li;
    } else {
      const int f = std::get<DownsampleLayer>(layer).factor;
      Tensor<double> y(x.channels, x.height / f, x.width / f);
      for (int c = 0; c < x.channels; ++c)
        for (int r = 0; r < y.height; ++r)
          for (int col = 0; col < y.width; ++col) {
            double acc = 0.0;
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx) acc += x.at(c, r * f + dy, col * f + dx);
            y.at(c, r, col) = acc / (f * f);
          }
      x = std::move(y);
    }
  }
  pass.output = std::move(x);
  return pass;
}

inline double reference_loss(const ReferencePass& pass, const Tensor<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    const double d = pass.output.data[i] - target.data[i];
    s += d * d;
  }
  return 0.5 * s;
}

// True when some relu input changes sign between the two passes, i.e. the loss is not
// differentiable somewhere inside the probe interval.
inline bool crosses_kink(const ReferencePass& a, const ReferencePass& b) {
  for (std::size_t i = 0; i < a.relu_inputs.size(); ++i)
    if ((a.relu_inputs[i] > 0.0) != (b.relu_inputs[i] > 0.0)) return true;
  return false;
}

struct GradientCheck {
  double worst = 0.0;  // max relative error over the checked parameters
  int checked = 0;
  int resampled = 0;   // probes discarded because they straddled a relu kink
  double forward_gap = 0.0;  // max |library - reference| on the unperturbed output
};

// Central differences with step h on `count` randomly drawn weights and biases.
template <typename Rng>
GradientCheck check_gradients(RegressorParams<double>& p, const Tensor<double>& x, const Tensor<double>& z,
                              const Gradients<double>& g, int count, double h, Rng& rng) {
  GradientCheck out;
  const Tensor<double> lib = forward(p, x);
  const ReferencePass ref = reference_forward(p, x);
  for (std::size_t i = 0; i < lib.data.size(); ++i)
    out.forward_gap = std::max(out.forward_gap, std::abs(lib.data[i] - ref.output.data[i]));
  while (out.checked < count) {
    const std::size_t l = rng.below(p.conv.size());
    const bool bias = rng.below(4) == 0;
    auto& vec = bias ? p.conv[l].bias : p.conv[l].weight;
    const std::size_t i = rng.below(vec.size());
    const double saved = vec[i];
    vec[i] = saved + h;
    const ReferencePass up = reference_forward(p, x);
    vec[i] = saved - h;
    const ReferencePass down = reference_forward(p, x);
    vec[i] = saved;
    if (crosses_kink(up, down)) {
      ++out.resampled;
      continue;
    }
    const double numeric = (reference_loss(up, z) - reference_loss(down, z)) / (2 * h);
    const double analytic = bias ? g.bias[l][i] : g.weight[l][i];
    out.worst = std::max(out.worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
    ++out.checked;
  }
  return out;
}

}  // namespace densforge::testing
