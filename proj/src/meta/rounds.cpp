// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tinyreptile/meta.hpp"

namespace tinyreptile::meta {
namespace {

void require_training(const ClientHandle& c) {
  if (c.role != ClientRole::Training)
    throw std::invalid_argument("client " + std::to_string(c.id) + " is a testing client");
}

void require_same_length(const ModelWeights& a, const ModelWeights& b) {
  if (a.values.size() != b.values.size())
    throw nn::DimensionError("weight vectors differ in length: " + std::to_string(a.values.size()) + " vs " +
                             std::to_string(b.values.size()));
}

// Client results reduced in id order so the mean is independent of arrival order.
struct ClientOutput {
  std::uint64_t id;
  std::vector<float> values;
  double loss;
};

std::vector<float> mean_of(std::vector<ClientOutput>& outputs) {
  std::sort(outputs.begin(), outputs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const std::size_t n = outputs.front().values.size();
  std::vector<float> mean(n);
  const double inv = 1.0 / static_cast<double>(outputs.size());
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (const auto& o : outputs) acc += o.values[j];
    mean[j] = static_cast<float>(acc * inv);
  }
  return mean;
}

double mean_loss(const std::vector<ClientOutput>& outputs) {
  double acc = 0.0;
  for (const auto& o : outputs) acc += o.loss;
  return acc / static_cast<double>(outputs.size());
}

RoundResult aborted(const ModelWeights& phi) {
  return RoundResult{RoundStatus::Aborted, phi, 0.0, 0};
}

}  // namespace

void AlgoConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(beta > 0.0f)) throw std::invalid_argument("beta must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (clients_per_round == 0) throw std::invalid_argument("clients_per_round must be positive");
}

ModelWeights meta_update(const ModelWeights& phi, const ModelWeights& phi_hat, double alpha) {
  require_same_length(phi, phi_hat);
  // Evaluated in double and rounded once, so alpha = 0 and alpha = 1 land
  // exactly on phi and phi_hat.
  ModelWeights out = phi;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double p = phi.values[i];
    out.values[i] = static_cast<float>(p + alpha * (static_cast<double>(phi_hat.values[i]) - p));
  }
  return out;
}

double scheduled_alpha(double alpha, bool decay, std::size_t round, std::size_t total_rounds) {
  if (!decay || total_rounds == 0) return alpha;
  const double frac = static_cast<double>(std::min(round, total_rounds)) / static_cast<double>(total_rounds);
  return alpha * (1.0 - frac);
}

LocalTrainResult streaming_local_train(ModelWeights phi, tasks::SampleStream& stream, float beta,
                                       std::optional<std::size_t> drop_after) {
  LocalTrainResult r{std::move(phi)};
  while (true) {
    if (drop_after && r.steps >= *drop_after) {
      r.dropped = true;
      break;
    }
    std::optional<tasks::Sample> sample = stream.next();
    if (!sample) break;
    r.peak_resident_samples = std::max<std::size_t>(r.peak_resident_samples, 1);
    auto [loss, grad] = nn::backward(r.weights, sample->input, sample->target);
    nn::apply_sgd(r.weights, grad, beta);
    r.last_loss = loss;
    ++r.steps;
  }
  return r;
}

LocalTrainResult batched_local_train(ModelWeights phi, tasks::SampleStream& stream, float beta,
                                     std::size_t epochs) {
  std::vector<tasks::Sample> buffer;
  buffer.reserve(stream.remaining());
  while (auto s = stream.next()) buffer.push_back(std::move(*s));
  if (buffer.empty()) throw std::invalid_argument("batched local training needs a non-empty support set");

  LocalTrainResult r{std::move(phi)};
  r.peak_resident_samples = buffer.size();
  for (std::size_t e = 0; e < epochs; ++e) {
    auto [loss, grad] = nn::batch_backward(r.weights, buffer);
    nn::apply_sgd(r.weights, grad, beta);
    r.last_loss = loss;
    ++r.steps;
  }
  return r;
}

RoundResult tinyreptile_round(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg) {
  require_training(client);
  tasks::SampleStream s = tasks::stream(client.data, client.stream_seed);
  LocalTrainResult local = streaming_local_train(phi, s, cfg.beta, client.drop_after);
  if (local.dropped) return aborted(phi);
  return RoundResult{RoundStatus::Completed, meta_update(phi, local.weights, cfg.alpha), local.last_loss,
                     local.peak_resident_samples};
}

ModelWeights reptile_local_train(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg) {
  require_training(client);
  tasks::SampleStream s = tasks::stream(client.data, client.stream_seed);
  return batched_local_train(phi, s, cfg.beta, cfg.epochs).weights;
}

RoundResult reptile_serial_round(const ModelWeights& phi, const ClientHandle& client, const AlgoConfig& cfg) {
  require_training(client);
  if (client.drop_after && *client.drop_after < client.data.support.size()) return aborted(phi);
  tasks::SampleStream s = tasks::stream(client.data, client.stream_seed);
  LocalTrainResult local = batched_local_train(phi, s, cfg.beta, cfg.epochs);
  return RoundResult{RoundStatus::Completed, meta_update(phi, local.weights, cfg.alpha), local.last_loss,
                     local.peak_resident_samples};
}

RoundResult reptile_batched_round(const ModelWeights& phi, std::span<const ClientHandle> clients,
                                  const AlgoConfig& cfg) {
  if (clients.empty()) throw std::invalid_argument("batched round needs at least one client");
  std::vector<ClientOutput> outputs;
  std::size_t peak = 0;
  for (const auto& c : clients) {
    require_training(c);
    if (c.drop_after && *c.drop_after < c.data.support.size()) continue;
    tasks::SampleStream s = tasks::stream(c.data, c.stream_seed);
    LocalTrainResult local = batched_local_train(phi, s, cfg.beta, cfg.epochs);
    peak = std::max(peak, local.peak_resident_samples);
    outputs.push_back({c.id, std::move(local.weights.values), local.last_loss});
  }
  if (outputs.empty()) return aborted(phi);
  ModelWeights target{phi.shape, mean_of(outputs)};
  return RoundResult{RoundStatus::Completed, meta_update(phi, target, cfg.alpha), mean_loss(outputs), peak};
}

RoundResult fedavg_round(const ModelWeights& phi, std::span<const ClientHandle> clients, const AlgoConfig& cfg) {
  if (clients.empty()) throw std::invalid_argument("FedAVG round needs at least one client");
  std::vector<ClientOutput> outputs;
  std::size_t peak = 0;
  for (const auto& c : clients) {
    require_training(c);
    if (c.drop_after && *c.drop_after < c.data.support.size()) continue;
    tasks::SampleStream s = tasks::stream(c.data, c.stream_seed);
    LocalTrainResult local = batched_local_train(phi, s, cfg.beta, cfg.epochs);
    peak = std::max(peak, local.peak_resident_samples);
    outputs.push_back({c.id, std::move(local.weights.values), local.last_loss});
  }
  if (outputs.empty()) return aborted(phi);
  return RoundResult{RoundStatus::Completed, ModelWeights{phi.shape, mean_of(outputs)}, mean_loss(outputs), peak};
}

RoundResult fedsgd_round(const ModelWeights& phi, std::span<const ClientHandle> clients, const AlgoConfig& cfg) {
  if (clients.empty()) throw std::invalid_argument("FedSGD round needs at least one client");
  std::vector<ClientOutput> outputs;
  std::size_t peak = 0;
  for (const auto& c : clients) {
    require_training(c);
    if (c.drop_after && *c.drop_after < c.data.support.size()) continue;
    auto [loss, grad] = nn::batch_backward(phi, c.data.support);
    peak = std::max(peak, c.data.support.size());
    outputs.push_back({c.id, std::move(grad.values), loss});
  }
  if (outputs.empty()) return aborted(phi);
  Gradient mean{mean_of(outputs)};
  return RoundResult{RoundStatus::Completed, nn::sgd_step(phi, mean, cfg.beta), mean_loss(outputs), peak};
}

ModelWeights joint_training_baseline(const ModelWeights& phi, std::span<const ClientHandle> clients,
                                     const AlgoConfig& cfg, std::size_t epochs, std::uint64_t seed,
                                     std::size_t batch_size) {
  if (clients.empty()) throw std::invalid_argument("joint training needs at least one client");
  if (batch_size == 0) throw std::invalid_argument("joint training batch size must be positive");
  std::vector<tasks::Sample> pool;
  for (const auto& c : clients) {
    require_training(c);
    if (c.drop_after) continue;
    pool.insert(pool.end(), c.data.support.begin(), c.data.support.end());
  }
  std::mt19937_64 rng(seed);
  ModelWeights w = phi;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < pool.size(); i += batch_size) {
      const std::size_t n = std::min(batch_size, pool.size() - i);
      const auto step = nn::batch_backward(w, std::span<const tasks::Sample>(pool).subspan(i, n));
      nn::apply_sgd(w, step.gradient, cfg.beta);
    }
  }
  return w;
}

}  // namespace tinyreptile::meta
