// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>

#include "tinyreptile/meta.hpp"

namespace tinyreptile::meta {

FinetuneResult finetune(const ModelWeights& phi, std::span<const tasks::Sample> support, std::size_t k,
                        float beta, FinetuneMode mode) {
  if (k == 0 || support.empty()) return {phi, true};
  ModelWeights w = phi;
  if (mode == FinetuneMode::Streaming) {
    for (std::size_t pass = 0; pass < k; ++pass)
      for (const auto& s : support) {
        auto [loss, grad] = nn::backward(w, s.input, s.target);
        nn::apply_sgd(w, grad, beta);
      }
  } else {
    for (std::size_t step = 0; step < k; ++step) {
      auto [loss, grad] = nn::batch_backward(w, support);
      nn::apply_sgd(w, grad, beta);
    }
  }
  return {std::move(w), false};
}

QueryScore score_query(const ModelWeights& w, std::span<const tasks::Sample> query) {
  if (query.empty()) throw std::invalid_argument("query set is empty");
  const nn::Loss loss = w.shape->loss();
  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& s : query) {
    const std::vector<float> out = nn::forward(w, s.input);
    total += nn::loss_value(loss, out, s.target);
    if (loss == nn::Loss::CrossEntropy && nn::argmax(out) == nn::argmax(s.target)) ++correct;
  }
  QueryScore score;
  score.loss = total / static_cast<double>(query.size());
  if (loss == nn::Loss::CrossEntropy) score.accuracy = static_cast<double>(correct) / static_cast<double>(query.size());
  return score;
}

EvalReport evaluate_meta(const ModelWeights& phi, std::span<const ClientHandle> testing_clients,
                         const EvalConfig& cfg) {
  if (testing_clients.empty()) throw std::invalid_argument("evaluation needs at least one testing client");
  EvalReport report;
  report.k_used = cfg.k;
  report.s_testing_used = testing_clients.front().data.support.size();
  double loss_sum = 0.0;
  double acc_sum = 0.0;
  bool has_accuracy = false;
  for (const auto& c : testing_clients) {
    const FinetuneResult tuned = finetune(phi, c.data.support, cfg.k, cfg.beta, cfg.mode);
    const QueryScore score = score_query(tuned.weights, c.data.query);
    report.per_client_losses.push_back(score.loss);
    loss_sum += score.loss;
    if (score.accuracy) {
      has_accuracy = true;
      acc_sum += *score.accuracy;
    }
  }
  const double n = static_cast<double>(testing_clients.size());
  report.mean_query_loss = loss_sum / n;
  if (has_accuracy) report.mean_query_accuracy = acc_sum / n;
  return report;
}

}  // namespace tinyreptile::meta
