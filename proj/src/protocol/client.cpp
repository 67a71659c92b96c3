// SPDX-License-Identifier: Apache-2.0

#include <chrono>

#include "tinyreptile/protocol/session.hpp"

namespace tinyreptile::protocol {
namespace {

void try_send(Transport& t, const Message& m) {
  try {
    send_message(t, m);
  } catch (const TransportError&) {
  }
}

}  // namespace

ClientStats client_loop(Transport& transport, const nn::ShapePtr& shape, const tasks::SupportQuerySplit& data,
                        const ClientConfig& cfg) {
  ClientStats stats;
  auto finish = [&](AbortReason reason) {
    stats.ended_by = reason;
    stats.bytes_sent = transport.bytes_sent();
    stats.bytes_received = transport.bytes_received();
    transport.close();
    return stats;
  };
  auto refuse = [&](std::uint64_t round_id, AbortReason reason) {
    try_send(transport, Abort{round_id, reason});
    return finish(reason);
  };

  try {
    send_message(transport, Hello{cfg.client_id, cfg.role, kProtocolVersion});
  } catch (const TransportError& e) {
    return finish(e.kind() == TransportError::Kind::Timeout ? AbortReason::Timeout : AbortReason::Disconnect);
  }

  while (true) {
    Message m;
    try {
      m = receive_message(transport, cfg.timeout);
    } catch (const TransportError& e) {
      return finish(e.kind() == TransportError::Kind::Timeout ? AbortReason::Timeout : AbortReason::Disconnect);
    } catch (const VersionMismatch&) {
      return refuse(0, AbortReason::VersionMismatch);
    } catch (const MalformedFrame&) {
      return refuse(0, AbortReason::Malformed);
    }

    try {
      if (auto* down = std::get_if<WeightsDown>(&m)) {
        if (cfg.drop_on_weights) {
          stats.dropped = true;
          return finish(AbortReason::Disconnect);
        }
        if (down->weights.size() != shape->param_count()) return refuse(down->round_id, AbortReason::ProtocolViolation);
        const auto t0 = std::chrono::steady_clock::now();
        tasks::SampleStream s = tasks::stream(data, cfg.stream_seed);
        meta::LocalTrainResult local =
            meta::streaming_local_train(nn::ModelWeights{shape, std::move(down->weights)}, s, cfg.beta);
        stats.local_train_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        stats.peak_resident_samples = std::max(stats.peak_resident_samples, local.peak_resident_samples);
        stats.last_local_loss = local.last_loss;
        ++stats.rounds_trained;
        send_message(transport, WeightsUp{down->round_id, std::move(local.weights.values), local.last_loss});
      } else if (auto* req = std::get_if<EvalRequest>(&m)) {
        if (req->weights.size() != shape->param_count()) return refuse(req->round_id, AbortReason::ProtocolViolation);
        const nn::ModelWeights phi{shape, std::move(req->weights)};
        const auto tuned = meta::finetune(phi, data.support, req->k, cfg.beta, meta::FinetuneMode::Streaming);
        const auto score = meta::score_query(tuned.weights, data.query);
        ++stats.evals_answered;
        send_message(transport, EvalReport{req->round_id, score.loss, score.accuracy});
      } else if (std::holds_alternative<Bye>(m)) {
        return finish(AbortReason::None);
      } else if (auto* abort = std::get_if<Abort>(&m)) {
        return finish(abort->reason);
      } else {
        return refuse(0, AbortReason::ProtocolViolation);
      }
    } catch (const TransportError& e) {
      return finish(e.kind() == TransportError::Kind::Timeout ? AbortReason::Timeout : AbortReason::Disconnect);
    } catch (const nn::NumericalError&) {
      return refuse(0, AbortReason::ClientError);
    }
  }
}

}  // namespace tinyreptile::protocol
