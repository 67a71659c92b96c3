// SPDX-License-Identifier: Apache-2.0
//
// Federated meta-learning rounds: TinyReptile (serial, streaming), Reptile
// (serial and batched), FedAVG, FedSGD, a joint-training baseline, and the
// fine-tune-then-score evaluation of an initialization.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tinyreptile/nn.hpp"
#include "tinyreptile/tasks.hpp"

namespace tinyreptile::meta {

using nn::Gradient;
using nn::ModelWeights;
using tasks::SupportQuerySplit;

enum class ClientRole { Training, Testing };
enum class FinetuneMode { Streaming, Batched };

struct AlgoConfig {
  double alpha = 1.0;  ///< server (meta) learning rate
  float beta = 0.01f;  ///< client learning rate
  std::size_t k = 8;   ///< fine-tune steps at evaluation
  std::size_t epochs = 8;
  std::size_t clients_per_round = 5;

  void validate() const;
};

struct ClientHandle {
  std::uint64_t id = 0;
  ClientRole role = ClientRole::Training;
  SupportQuerySplit data;
  std::uint64_t stream_seed = 0;  ///< order in which the support set streams in
  /// Simulated dropout: the client disappears after consuming this many
  /// support samples.
  std::optional<std::size_t> drop_after = std::nullopt;
};

enum class RoundStatus { Completed, Aborted };

struct LocalTrainResult {
  ModelWeights weights;
  double last_loss = 0.0;              ///< loss of the final SGD step
  std::size_t steps = 0;
  std::size_t peak_resident_samples = 0;
  bool dropped = false;
};

struct RoundResult {
  RoundStatus status = RoundStatus::Completed;
  ModelWeights weights;
  double local_loss = 0.0;
  std::size_t peak_resident_samples = 0;

  bool aborted() const noexcept { return status == RoundStatus::Aborted; }
};

/// phi + alpha * (phi_hat - phi)
ModelWeights meta_update(const ModelWeights& phi, const ModelWeights& phi_hat, double alpha);

/// Linear decay alpha * (1 - round / total_rounds) for round in [0, total).
double scheduled_alpha(double alpha, bool decay, std::size_t round, std::size_t total_rounds);

/// One SGD step per streamed sample, a single pass, at most one sample held.
LocalTrainResult streaming_local_train(ModelWeights phi, tasks::SampleStream& stream, float beta,
                                       std::optional<std::size_t> drop_after = std::nullopt);

/// Buffers the whole support set, then `epochs` full-batch SGD steps.
LocalTrainResult batched_local_train(ModelWeights phi, tasks::SampleStream& stream, float beta,
                                     std::size_t epochs);

/// Algorithm 1 round against one training client.
RoundResult tinyreptile_round(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg);

/// Client half of Reptile: E epochs of full-batch SGD on the stored support.
ModelWeights reptile_local_train(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg);

RoundResult reptile_serial_round(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg);

/// Every client trains from phi; the server moves toward the mean phi_hat.
/// Dropped clients are excluded; the round aborts only if all drop.
RoundResult reptile_batched_round(const ModelWeights& phi, std::span<const ClientHandle> clients,
                                  const AlgoConfig& cfg);

/// Equal-weight average of each client's E-epoch local model.
RoundResult fedavg_round(const ModelWeights& phi, std::span<const ClientHandle> clients, const AlgoConfig& cfg);

/// One server SGD step (rate beta) along the mean full-batch client gradient.
RoundResult fedsgd_round(const ModelWeights& phi, std::span<const ClientHandle> clients, const AlgoConfig& cfg);

/// Plain SGD over the pooled support data of all clients: `epochs` shuffled
/// passes in mini-batches of `batch_size` samples, starting from phi.
/// Dropped clients contribute nothing.
ModelWeights joint_training_baseline(const ModelWeights& phi, std::span<const ClientHandle> clients,
                                     const AlgoConfig& cfg, std::size_t epochs, std::uint64_t seed,
                                     std::size_t batch_size = 1);

struct FinetuneResult {
  ModelWeights weights;
  bool zero_shot = false;  ///< no update happened (k == 0 or empty support)
};

/// Streaming: k per-sample passes over the support. Batched: k full-batch steps.
FinetuneResult finetune(const ModelWeights& phi, std::span<const tasks::Sample> support, std::size_t k,
                        float beta, FinetuneMode mode);

struct QueryScore {
  double loss = 0.0;
  std::optional<double> accuracy;
};

/// Mean loss over the query set, plus argmax accuracy for classifiers.
QueryScore score_query(const ModelWeights& w, std::span<const tasks::Sample> query);

struct EvalConfig {
  std::size_t k = 8;
  float beta = 0.01f;
  FinetuneMode mode = FinetuneMode::Streaming;
};

struct EvalReport {
  double mean_query_loss = 0.0;
  std::optional<double> mean_query_accuracy;
  std::vector<double> per_client_losses;
  std::size_t k_used = 0;
  std::size_t s_testing_used = 0;
};

EvalReport evaluate_meta(const ModelWeights& phi, std::span<const ClientHandle> testing_clients,
                         const EvalConfig& cfg);

}  // namespace tinyreptile::meta
