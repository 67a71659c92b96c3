// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinyreptile/meta.hpp"
#include "tinyreptile/tasks.hpp"

namespace tinyreptile::harness {

enum class Algorithm { TinyReptile, ReptileSerial, ReptileBatched, FedAvg, FedSgd, Joint };
enum class TaskKind { Sine, SyntheticFewShot };
enum class TransportKind { InProcess, Tcp };
enum class EvalMode { Auto, Streaming, Batched };
enum class ClientSampling { Uniform, RoundRobin };

const char* to_string(Algorithm a);
const char* to_string(TaskKind t);
const char* to_string(TransportKind t);
const char* to_string(EvalMode m);
const char* to_string(ClientSampling s);

Algorithm parse_algorithm(const std::string& s);
TaskKind parse_task(const std::string& s);
TransportKind parse_transport(const std::string& s);
EvalMode parse_eval_mode(const std::string& s);
ClientSampling parse_sampling(const std::string& s);

bool is_serial(Algorithm a);

/// Validation failure tied to one configuration key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::TinyReptile;
  TaskKind task = TaskKind::Sine;
  std::size_t rounds = 2000;
  std::size_t s_training = 32;  ///< support size (shots per class for few-shot)
  std::size_t s_testing = 8;
  std::size_t q = 32;
  double alpha = 1.0;
  bool alpha_decay = true;
  double beta = 0.01;
  std::size_t k = 8;
  std::size_t epochs = 8;
  std::size_t clients_per_round = 5;
  std::uint64_t master_seed = 0;
  std::size_t eval_every = 50;
  std::size_t testing_clients = 20;
  std::size_t training_clients = 1000;
  TransportKind transport = TransportKind::InProcess;
  std::string tcp_host = "127.0.0.1";
  std::uint16_t tcp_port = 0;
  std::size_t repeats = 1;
  EvalMode eval_mode = EvalMode::Auto;
  ClientSampling sampling = ClientSampling::Uniform;
  double dropout_rate = 0.0;
  std::size_t timeout_ms = 30'000;
  std::vector<std::size_t> hidden{32, 32};

  tasks::SineRanges sine;

  std::size_t ways = 5;
  std::size_t universe = 100;
  std::size_t feature_dim = 64;
  double noise = 0.1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  nn::ModelConfig model() const;
  meta::AlgoConfig algo(double alpha_now) const;
  meta::FinetuneMode finetune_mode() const;
};

/// Sweepable keys: beta, s_training, s_testing, k.
bool is_sweep_axis(const std::string& axis);
void apply_axis(ExperimentConfig& cfg, const std::string& axis, double value);

}  // namespace tinyreptile::harness
