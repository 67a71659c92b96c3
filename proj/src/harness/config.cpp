// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/harness/config.hpp"

#include <cmath>

namespace tinyreptile::harness {
namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& field, const std::string& s, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  std::string known;
  for (const auto& [name, value] : table) known += (known.empty() ? "" : ", ") + std::string(name);
  throw ConfigError(field, "unknown value '" + s + "' (expected one of: " + known + ")");
}

constexpr std::pair<const char*, Algorithm> kAlgorithms[] = {
    {"tinyreptile", Algorithm::TinyReptile}, {"reptile_serial", Algorithm::ReptileSerial},
    {"reptile_batched", Algorithm::ReptileBatched}, {"fedavg", Algorithm::FedAvg},
    {"fedsgd", Algorithm::FedSgd}, {"joint", Algorithm::Joint}};
constexpr std::pair<const char*, TaskKind> kTasks[] = {{"sine", TaskKind::Sine},
                                                       {"fewshot", TaskKind::SyntheticFewShot}};
constexpr std::pair<const char*, TransportKind> kTransports[] = {{"inprocess", TransportKind::InProcess},
                                                                 {"tcp", TransportKind::Tcp}};
constexpr std::pair<const char*, EvalMode> kEvalModes[] = {
    {"auto", EvalMode::Auto}, {"streaming", EvalMode::Streaming}, {"batched", EvalMode::Batched}};
constexpr std::pair<const char*, ClientSampling> kSampling[] = {{"uniform", ClientSampling::Uniform},
                                                                {"round_robin", ClientSampling::RoundRobin}};

template <typename Enum, std::size_t N>
const char* name_of(Enum v, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (v == value) return name;
  return "?";
}

void check_range(const char* field, const tasks::Range& r) {
  if (!(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi))
    throw ConfigError(field, "range must be finite with lo <= hi");
}

}  // namespace

const char* to_string(Algorithm a) { return name_of(a, kAlgorithms); }
const char* to_string(TaskKind t) { return name_of(t, kTasks); }
const char* to_string(TransportKind t) { return name_of(t, kTransports); }
const char* to_string(EvalMode m) { return name_of(m, kEvalModes); }
const char* to_string(ClientSampling s) { return name_of(s, kSampling); }

Algorithm parse_algorithm(const std::string& s) { return parse_enum("algorithm", s, kAlgorithms); }
TaskKind parse_task(const std::string& s) { return parse_enum("task", s, kTasks); }
TransportKind parse_transport(const std::string& s) { return parse_enum("transport", s, kTransports); }
EvalMode parse_eval_mode(const std::string& s) { return parse_enum("eval_mode", s, kEvalModes); }
ClientSampling parse_sampling(const std::string& s) { return parse_enum("sampling", s, kSampling); }

bool is_serial(Algorithm a) {
  return a == Algorithm::TinyReptile || a == Algorithm::ReptileSerial;
}

void ExperimentConfig::validate() const {
  if (s_training == 0) throw ConfigError("s_training", "must be at least 1");
  if (q == 0) throw ConfigError("q", "must be at least 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha", "must lie in (0, 1]");
  if (!(beta > 0.0 && beta <= 1.0)) throw ConfigError("beta", "must lie in (0, 1]");
  if (epochs == 0) throw ConfigError("epochs", "must be at least 1");
  if (clients_per_round == 0) throw ConfigError("clients_per_round", "must be at least 1");
  if (training_clients == 0) throw ConfigError("training_clients", "must be at least 1");
  if (clients_per_round > training_clients)
    throw ConfigError("clients_per_round", "cannot exceed training_clients");
  if (eval_every == 0) throw ConfigError("eval_every", "must be at least 1");
  if (testing_clients == 0) throw ConfigError("testing_clients", "must be at least 1");
  if (repeats == 0) throw ConfigError("repeats", "must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate", "must lie in [0, 1)");
  if (timeout_ms == 0) throw ConfigError("timeout_ms", "must be positive");
  if (hidden.empty()) throw ConfigError("hidden", "needs at least one hidden layer");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("hidden", "layer widths must be positive");
  if (transport == TransportKind::Tcp && tcp_host.empty()) throw ConfigError("tcp_host", "must not be empty");
  if (task == TaskKind::Sine) {
    check_range("sine.amplitude", sine.amplitude);
    check_range("sine.frequency", sine.frequency);
    check_range("sine.phase", sine.phase);
    check_range("sine.x", sine.x);
  } else {
    if (universe == 0) throw ConfigError("universe", "must be at least 1");
    if (ways == 0 || ways > universe) throw ConfigError("ways", "must lie in [1, universe]");
    if (feature_dim == 0) throw ConfigError("feature_dim", "must be at least 1");
    if (!(noise >= 0.0 && std::isfinite(noise))) throw ConfigError("noise", "must be finite and non-negative");
  }
}

nn::ModelConfig ExperimentConfig::model() const {
  std::vector<std::size_t> dims;
  if (task == TaskKind::Sine) {
    dims.push_back(1);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    return nn::ModelConfig::mlp(dims, nn::Activation::Tanh, nn::Loss::MeanSquaredError);
  }
  dims.push_back(feature_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(ways);
  return nn::ModelConfig::mlp(dims, nn::Activation::ReLU, nn::Loss::CrossEntropy);
}

meta::AlgoConfig ExperimentConfig::algo(double alpha_now) const {
  meta::AlgoConfig a;
  a.alpha = alpha_now;
  a.beta = static_cast<float>(beta);
  a.k = k;
  a.epochs = epochs;
  a.clients_per_round = clients_per_round;
  return a;
}

meta::FinetuneMode ExperimentConfig::finetune_mode() const {
  switch (eval_mode) {
    case EvalMode::Streaming: return meta::FinetuneMode::Streaming;
    case EvalMode::Batched: return meta::FinetuneMode::Batched;
    case EvalMode::Auto: break;
  }
  return algorithm == Algorithm::TinyReptile || algorithm == Algorithm::Joint ? meta::FinetuneMode::Streaming
                                                                               : meta::FinetuneMode::Batched;
}

bool is_sweep_axis(const std::string& axis) {
  return axis == "beta" || axis == "s_training" || axis == "s_testing" || axis == "k";
}

void apply_axis(ExperimentConfig& cfg, const std::string& axis, double value) {
  auto as_count = [&](const char* field) {
    if (!(value >= 0.0) || value != std::floor(value)) throw ConfigError(field, "sweep value must be a whole number");
    return static_cast<std::size_t>(value);
  };
  if (axis == "beta")
    cfg.beta = value;
  else if (axis == "s_training")
    cfg.s_training = as_count("s_training");
  else if (axis == "s_testing")
    cfg.s_testing = as_count("s_testing");
  else if (axis == "k")
    cfg.k = as_count("k");
  else
    throw ConfigError("axis", "'" + axis + "' is not sweepable (beta, s_training, s_testing, k)");
}

}  // namespace tinyreptile::harness
