// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace tinyreptile::nn {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Softmax: return "softmax";
  }
  return "?";
}

const char* to_string(Loss l) {
  return l == Loss::MeanSquaredError ? "mse" : "cross_entropy";
}

NumericalError::NumericalError(std::size_t layer, const std::string& what)
    : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

ModelConfig::ModelConfig(std::vector<LayerSpec> layers, Loss loss)
    : layers_(std::move(layers)), loss_(loss) {
  if (layers_.empty()) throw std::invalid_argument("model needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.input_dim == 0 || l.output_dim == 0)
      throw std::invalid_argument("layer " + std::to_string(i) + " has a zero dimension");
    if (l.activation == Activation::Softmax && i + 1 != layers_.size())
      throw std::invalid_argument("softmax is only allowed on the final layer");
    if (i > 0 && layers_[i - 1].output_dim != l.input_dim)
      throw std::invalid_argument("layer " + std::to_string(i) + " input does not match previous output");
  }
  const auto head = layers_.back().activation;
  if (loss_ == Loss::CrossEntropy && head != Activation::Softmax)
    throw std::invalid_argument("cross-entropy requires a softmax head");
  if (loss_ == Loss::MeanSquaredError && head != Activation::Identity)
    throw std::invalid_argument("mean squared error requires an identity head");

  offsets_.reserve(layers_.size());
  for (const auto& l : layers_) {
    offsets_.push_back(param_count_);
    param_count_ += l.input_dim * l.output_dim + l.output_dim;
  }
}

ModelConfig ModelConfig::mlp(const std::vector<std::size_t>& dims, Activation hidden, Loss loss) {
  if (dims.size() < 2) throw std::invalid_argument("mlp needs at least input and output sizes");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    Activation act = hidden;
    if (last) act = loss == Loss::CrossEntropy ? Activation::Softmax : Activation::Identity;
    layers.push_back({dims[i], dims[i + 1], act});
  }
  return ModelConfig(std::move(layers), loss);
}

ModelConfig ModelConfig::sine_regressor() {
  return mlp({1, 32, 32, 1}, Activation::Tanh, Loss::MeanSquaredError);
}

std::size_t ModelConfig::max_width() const noexcept {
  std::size_t w = input_dim();
  for (const auto& l : layers_) w = std::max(w, l.output_dim);
  return w;
}

bool ModelConfig::operator==(const ModelConfig& other) const {
  if (loss_ != other.loss_ || layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.input_dim != b.input_dim || a.output_dim != b.output_dim || a.activation != b.activation)
      return false;
  }
  return true;
}

std::size_t param_count(const ModelConfig& config) { return config.param_count(); }

bool ModelWeights::all_finite() const noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

ModelWeights init_weights(ShapePtr config, std::uint64_t seed) {
  ModelWeights w{config, std::vector<float>(config->param_count(), 0.0f)};
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < config->layers().size(); ++i) {
    const auto& l = config->layers()[i];
    const double limit = std::sqrt(6.0 / static_cast<double>(l.input_dim + l.output_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t base = config->layer_offset(i);
    for (std::size_t j = 0; j < l.input_dim * l.output_dim; ++j)
      w.values[base + j] = static_cast<float>(dist(rng));
  }
  return w;
}

ModelWeights zero_weights(ShapePtr config) {
  return ModelWeights{config, std::vector<float>(config->param_count(), 0.0f)};
}

ModelWeights sgd_step(ModelWeights w, const Gradient& g, float beta) {
  apply_sgd(w, g, beta);
  return w;
}

void apply_sgd(ModelWeights& w, const Gradient& g, float beta) {
  if (w.values.size() != g.values.size())
    throw DimensionError("gradient length " + std::to_string(g.values.size()) +
                         " does not match weights length " + std::to_string(w.values.size()));
  for (std::size_t i = 0; i < w.values.size(); ++i) w.values[i] -= beta * g.values[i];
}

void serialize_weights_into(std::span<const float> values, std::vector<std::uint8_t>& out) {
  const auto n = static_cast<std::uint32_t>(values.size());
  const std::size_t start = out.size();
  out.resize(start + serialized_weights_size(values.size()));
  std::uint8_t* p = out.data() + start;
  for (int b = 0; b < 4; ++b) *p++ = static_cast<std::uint8_t>(n >> (8 * b));
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) *p++ = static_cast<std::uint8_t>(bits >> (8 * b));
  }
}

std::vector<std::uint8_t> serialize_weights(std::span<const float> values) {
  std::vector<std::uint8_t> out;
  out.reserve(serialized_weights_size(values.size()));
  serialize_weights_into(values, out);
  return out;
}

std::vector<float> deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw DimensionError("weight block shorter than its count field");
  std::uint32_t n = 0;
  for (int b = 0; b < 4; ++b) n |= static_cast<std::uint32_t>(bytes[b]) << (8 * b);
  if ((bytes.size() - 4) / 4 != n || (bytes.size() - 4) % 4 != 0)
    throw DimensionError("weight block declares " + std::to_string(n) + " values but carries " +
                         std::to_string(bytes.size() - 4) + " bytes");
  std::vector<float> values(n);
  const std::uint8_t* p = bytes.data() + 4;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(*p++) << (8 * b);
    std::memcpy(&values[i], &bits, 4);
  }
  return values;
}

std::size_t argmax(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace tinyreptile::nn
