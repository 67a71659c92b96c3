// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward passes. Storage is float32; every dot product and
// batch reduction accumulates in double.

#include <cmath>
#include <limits>

#include "tinyreptile/nn.hpp"

namespace tinyreptile::nn {
namespace {

void check_input(const ModelConfig& cfg, std::size_t x_len) {
  if (x_len != cfg.input_dim())
    throw DimensionError("input has " + std::to_string(x_len) + " features, model expects " +
                         std::to_string(cfg.input_dim()));
}

void check_target(const ModelConfig& cfg, std::size_t y_len) {
  if (y_len != cfg.output_dim())
    throw DimensionError("target has " + std::to_string(y_len) + " entries, model expects " +
                         std::to_string(cfg.output_dim()));
}

void check_weights(const ModelWeights& w) {
  if (!w.shape) throw DimensionError("weights carry no shape");
  if (w.values.size() != w.shape->param_count())
    throw DimensionError("weights hold " + std::to_string(w.values.size()) + " values, shape needs " +
                         std::to_string(w.shape->param_count()));
}

// z = W x + b for one sample, then the activation into `a`.
void dense_forward(const LayerSpec& l, const float* weights, const float* x, float* z, float* a,
                   std::size_t layer_index) {
  const float* bias = weights + l.input_dim * l.output_dim;
  for (std::size_t o = 0; o < l.output_dim; ++o) {
    const float* row = weights + o * l.input_dim;
    double acc = bias[o];
    for (std::size_t i = 0; i < l.input_dim; ++i) acc += static_cast<double>(row[i]) * x[i];
    z[o] = static_cast<float>(acc);
    if (!std::isfinite(z[o])) throw NumericalError(layer_index, "non-finite pre-activation");
  }
  switch (l.activation) {
    case Activation::Tanh:
      for (std::size_t o = 0; o < l.output_dim; ++o) a[o] = std::tanh(z[o]);
      break;
    case Activation::ReLU:
      for (std::size_t o = 0; o < l.output_dim; ++o) a[o] = z[o] > 0.0f ? z[o] : 0.0f;
      break;
    case Activation::Identity:
      for (std::size_t o = 0; o < l.output_dim; ++o) a[o] = z[o];
      break;
    case Activation::Softmax: {
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t o = 0; o < l.output_dim; ++o) zmax = std::max(zmax, static_cast<double>(z[o]));
      double total = 0.0;
      for (std::size_t o = 0; o < l.output_dim; ++o) total += std::exp(z[o] - zmax);
      for (std::size_t o = 0; o < l.output_dim; ++o)
        a[o] = static_cast<float>(std::exp(z[o] - zmax) / total);
      break;
    }
  }
}

float activation_slope(Activation act, float z, float a) {
  switch (act) {
    case Activation::Tanh: return 1.0f - a * a;
    case Activation::ReLU: return z > 0.0f ? 1.0f : 0.0f;
    case Activation::Identity: return 1.0f;
    case Activation::Softmax: break;  // only valid as head, handled with the loss
  }
  return 1.0f;
}

// Cross-entropy from logits so the log never sees an underflowed probability.
double cross_entropy_from_logits(std::span<const float> z, std::span<const float> y) {
  double zmax = -std::numeric_limits<double>::infinity();
  for (float v : z) zmax = std::max(zmax, static_cast<double>(v));
  double total = 0.0;
  for (float v : z) total += std::exp(v - zmax);
  const double log_norm = zmax + std::log(total);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (y[i] != 0.0f) loss -= static_cast<double>(y[i]) * (z[i] - log_norm);
  return loss;
}

double squared_error(std::span<const float> pred, std::span<const float> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

// Shared batched pass; `input(s)` / `target(s)` return spans for sample s.
template <typename InputFn, typename TargetFn>
BackwardResult propagate(const ModelWeights& w, std::size_t batch, InputFn input, TargetFn target) {
  const ModelConfig& cfg = *w.shape;
  const auto& layers = cfg.layers();
  const std::size_t depth = layers.size();
  const double inv_batch = 1.0 / static_cast<double>(batch);

  std::vector<std::vector<float>> pre(depth), post(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    pre[l].resize(batch * layers[l].output_dim);
    post[l].resize(batch * layers[l].output_dim);
  }

  double loss_sum = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t l = 0; l < depth; ++l) {
      const auto& spec = layers[l];
      const float* x = l == 0 ? input(s).data() : post[l - 1].data() + s * spec.input_dim;
      dense_forward(spec, w.values.data() + cfg.layer_offset(l), x, pre[l].data() + s * spec.output_dim,
                    post[l].data() + s * spec.output_dim, l);
    }
    const std::size_t out = cfg.output_dim();
    std::span<const float> y = target(s);
    if (cfg.loss() == Loss::CrossEntropy)
      loss_sum += cross_entropy_from_logits({pre[depth - 1].data() + s * out, out}, y);
    else
      loss_sum += squared_error({post[depth - 1].data() + s * out, out}, y);
  }
  if (!std::isfinite(loss_sum)) throw NumericalError(depth - 1, "non-finite loss");

  // dL/dz of the head.
  const std::size_t out = cfg.output_dim();
  std::vector<float> delta(batch * out);
  for (std::size_t s = 0; s < batch; ++s) {
    std::span<const float> y = target(s);
    const float* a = post[depth - 1].data() + s * out;
    float* d = delta.data() + s * out;
    if (cfg.loss() == Loss::CrossEntropy) {
      double ysum = 0.0;
      for (float v : y) ysum += v;
      for (std::size_t o = 0; o < out; ++o) d[o] = static_cast<float>(a[o] * ysum - y[o]);
    } else {
      const double scale = 2.0 / static_cast<double>(out);
      for (std::size_t o = 0; o < out; ++o)
        d[o] = static_cast<float>(scale * (static_cast<double>(a[o]) - y[o]));
    }
  }

  BackwardResult result;
  result.loss = loss_sum * inv_batch;
  result.gradient.values.resize(cfg.param_count());
  for (std::size_t l = depth; l-- > 0;) {
    const auto& spec = layers[l];
    const float* weights = w.values.data() + cfg.layer_offset(l);
    float* gw = result.gradient.values.data() + cfg.layer_offset(l);
    float* gb = gw + spec.input_dim * spec.output_dim;
    for (std::size_t o = 0; o < spec.output_dim; ++o) {
      for (std::size_t i = 0; i < spec.input_dim; ++i) {
        double acc = 0.0;
        for (std::size_t s = 0; s < batch; ++s) {
          const float* x = l == 0 ? input(s).data() : post[l - 1].data() + s * spec.input_dim;
          acc += static_cast<double>(delta[s * spec.output_dim + o]) * x[i];
        }
        gw[o * spec.input_dim + i] = static_cast<float>(acc * inv_batch);
      }
      double acc = 0.0;
      for (std::size_t s = 0; s < batch; ++s) acc += delta[s * spec.output_dim + o];
      gb[o] = static_cast<float>(acc * inv_batch);
    }
    for (std::size_t j = 0; j < spec.input_dim * spec.output_dim + spec.output_dim; ++j)
      if (!std::isfinite(gw[j])) throw NumericalError(l, "non-finite gradient");
    if (l == 0) break;

    const auto& below = layers[l - 1];
    std::vector<float> next(batch * spec.input_dim);
    for (std::size_t s = 0; s < batch; ++s) {
      const float* d = delta.data() + s * spec.output_dim;
      for (std::size_t i = 0; i < spec.input_dim; ++i) {
        double acc = 0.0;
        for (std::size_t o = 0; o < spec.output_dim; ++o)
          acc += static_cast<double>(weights[o * spec.input_dim + i]) * d[o];
        const std::size_t k = s * spec.input_dim + i;
        next[k] = static_cast<float>(acc) * activation_slope(below.activation, pre[l - 1][k], post[l - 1][k]);
      }
    }
    delta = std::move(next);
  }
  return result;
}

}  // namespace

std::vector<float> forward(const ModelWeights& w, std::span<const float> x) {
  check_weights(w);
  const ModelConfig& cfg = *w.shape;
  check_input(cfg, x.size());
  std::vector<float> in(x.begin(), x.end());
  std::vector<float> z, a;
  for (std::size_t l = 0; l < cfg.layers().size(); ++l) {
    const auto& spec = cfg.layers()[l];
    z.assign(spec.output_dim, 0.0f);
    a.assign(spec.output_dim, 0.0f);
    dense_forward(spec, w.values.data() + cfg.layer_offset(l), in.data(), z.data(), a.data(), l);
    in.swap(a);
  }
  return in;
}

double loss_value(Loss loss, std::span<const float> prediction, std::span<const float> target) {
  if (prediction.size() != target.size()) throw DimensionError("prediction and target lengths differ");
  if (loss == Loss::MeanSquaredError) return squared_error(prediction, target);
  double l = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    if (target[i] == 0.0f) continue;
    const double p = std::max(static_cast<double>(prediction[i]), std::numeric_limits<double>::min());
    l -= static_cast<double>(target[i]) * std::log(p);
  }
  return l;
}

BackwardResult backward(const ModelWeights& w, std::span<const float> x, std::span<const float> y) {
  check_weights(w);
  check_input(*w.shape, x.size());
  check_target(*w.shape, y.size());
  return propagate(
      w, 1, [x](std::size_t) { return x; }, [y](std::size_t) { return y; });
}

BackwardResult batch_backward(const ModelWeights& w, std::span<const Sample> batch) {
  check_weights(w);
  if (batch.empty()) throw std::invalid_argument("batch_backward needs at least one sample");
  for (const auto& s : batch) {
    check_input(*w.shape, s.input.size());
    check_target(*w.shape, s.target.size());
  }
  return propagate(
      w, batch.size(), [batch](std::size_t s) { return std::span<const float>(batch[s].input); },
      [batch](std::size_t s) { return std::span<const float>(batch[s].target); });
}

}  // namespace tinyreptile::nn
