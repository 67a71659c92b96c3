// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense network: forward, exact backpropagation, SGD and the flat
// little-endian weight layout shared with the wire protocol.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinyreptile::nn {

enum class Activation { Tanh, ReLU, Identity, Softmax };
enum class Loss { MeanSquaredError, CrossEntropy };

const char* to_string(Activation a);
const char* to_string(Loss l);

/// Raised when a vector does not match the shape it is used with.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward or backward pass produces NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::size_t layer, const std::string& what);
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

struct LayerSpec {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  Activation activation = Activation::Identity;
};

/// Ordered stack of dense layers plus the training loss. Validated on
/// construction, immutable afterwards.
class ModelConfig {
 public:
  ModelConfig(std::vector<LayerSpec> layers, Loss loss);

  /// Fully connected net through `dims` with `hidden` between layers. The
  /// head is Identity for MSE and Softmax for cross-entropy.
  static ModelConfig mlp(const std::vector<std::size_t>& dims, Activation hidden, Loss loss);

  /// The 1 -> 32 -> 32 -> 1 tanh regressor used for the sine-wave tasks.
  static ModelConfig sine_regressor();

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  Loss loss() const noexcept { return loss_; }
  std::size_t input_dim() const noexcept { return layers_.front().input_dim; }
  std::size_t output_dim() const noexcept { return layers_.back().output_dim; }
  std::size_t param_count() const noexcept { return param_count_; }
  /// Offset of layer `i`'s weight block inside the flat vector; its biases
  /// follow immediately after `in * out` weights.
  std::size_t layer_offset(std::size_t i) const { return offsets_.at(i); }
  std::size_t max_width() const noexcept;

  bool operator==(const ModelConfig& other) const;

 private:
  std::vector<LayerSpec> layers_;
  Loss loss_;
  std::vector<std::size_t> offsets_;
  std::size_t param_count_ = 0;
};

using ShapePtr = std::shared_ptr<const ModelConfig>;

std::size_t param_count(const ModelConfig& config);

/// Flat parameter vector. Layer by layer: weights row-major by output
/// neuron, then that layer's biases.
struct ModelWeights {
  ShapePtr shape;
  std::vector<float> values;

  std::size_t size() const noexcept { return values.size(); }
  bool all_finite() const noexcept;
};

struct Gradient {
  std::vector<float> values;

  std::size_t size() const noexcept { return values.size(); }
};

struct Sample {
  std::vector<float> input;
  std::vector<float> target;

  bool operator==(const Sample&) const = default;
};

struct BackwardResult {
  double loss = 0.0;
  Gradient gradient;
};

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
ModelWeights init_weights(ShapePtr config, std::uint64_t seed);
ModelWeights zero_weights(ShapePtr config);

std::vector<float> forward(const ModelWeights& w, std::span<const float> x);

/// Loss of a single prediction against its target under `loss`.
double loss_value(Loss loss, std::span<const float> prediction, std::span<const float> target);

BackwardResult backward(const ModelWeights& w, std::span<const float> x, std::span<const float> y);

/// Mean loss and mean gradient over the batch. The whole batch is carried
/// through the network at once (activations have a batch dimension).
BackwardResult batch_backward(const ModelWeights& w, std::span<const Sample> batch);

/// w - beta * g. Takes the weights by value so callers can move their only
/// copy through.
ModelWeights sgd_step(ModelWeights w, const Gradient& g, float beta);
void apply_sgd(ModelWeights& w, const Gradient& g, float beta);

/// u32 count followed by `count` little-endian float32 values.
std::vector<std::uint8_t> serialize_weights(std::span<const float> values);
void serialize_weights_into(std::span<const float> values, std::vector<std::uint8_t>& out);
/// Inverse of serialize_weights. Rejects truncated or oversized input.
std::vector<float> deserialize_weights(std::span<const std::uint8_t> bytes);

/// Bytes used by serialize_weights for `n` parameters.
constexpr std::size_t serialized_weights_size(std::size_t n) noexcept { return 4 + 4 * n; }

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const float> v);

}  // namespace tinyreptile::nn
