// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "tinyreptile/protocol/session.hpp"

namespace tinyreptile::protocol {
namespace {

AbortReason reason_for(const TransportError& e) {
  return e.kind() == TransportError::Kind::Timeout ? AbortReason::Timeout : AbortReason::Disconnect;
}

void try_send(Transport& t, const Message& m) {
  try {
    send_message(t, m);
  } catch (const TransportError&) {
  }
}

bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

const char* to_string(SessionPhase p) {
  switch (p) {
    case SessionPhase::Idle: return "idle";
    case SessionPhase::AwaitHello: return "await_hello";
    case SessionPhase::Training: return "training";
    case SessionPhase::AwaitingWeights: return "awaiting_weights";
    case SessionPhase::Evaluating: return "evaluating";
    case SessionPhase::Closed: return "closed";
  }
  return "?";
}

Server::Server(nn::ShapePtr shape, ServerOptions options) : shape_(std::move(shape)), options_(options) {}

OpenResult Server::open_session(std::unique_ptr<Transport> transport) {
  if (busy()) {
    try_send(*transport, Abort{0, AbortReason::Busy});
    transport->close();
    return {nullptr, AbortReason::Busy};
  }
  AbortReason refusal = AbortReason::None;
  Hello hello;
  try {
    Message m = receive_message(*transport, options_.timeout);
    if (const auto* h = std::get_if<Hello>(&m)) {
      hello = *h;
      if (hello.protocol_version != kProtocolVersion) refusal = AbortReason::VersionMismatch;
    } else {
      refusal = AbortReason::ProtocolViolation;
    }
  } catch (const TransportError& e) {
    refusal = reason_for(e);
  } catch (const VersionMismatch&) {
    refusal = AbortReason::VersionMismatch;
  } catch (const MalformedFrame&) {
    refusal = AbortReason::Malformed;
  }
  if (refusal != AbortReason::None) {
    if (refusal != AbortReason::Timeout && refusal != AbortReason::Disconnect)
      try_send(*transport, Abort{0, refusal});
    transport->close();
    return {nullptr, refusal};
  }
  std::unique_ptr<ServerSession> session(new ServerSession(*this, std::move(transport), hello));
  active_ = session.get();
  return {std::move(session), AbortReason::None};
}

ServerSession::ServerSession(Server& server, std::unique_ptr<Transport> transport, Hello hello)
    : server_(&server), transport_(std::move(transport)), hello_(hello) {}

ServerSession::~ServerSession() { close(); }

void ServerSession::close() {
  if (phase_ == SessionPhase::Closed) return;
  try_send(*transport_, Bye{});
  transport_->close();
  phase_ = SessionPhase::Closed;
  if (server_->active_ == this) server_->active_ = nullptr;
}

RoundOutcome ServerSession::fail(RoundOutcome out, AbortReason reason, bool notify_client) {
  out.updated = false;
  out.reason = reason;
  if (notify_client) try_send(*transport_, Abort{out.round_id, reason});
  transport_->close();
  phase_ = SessionPhase::Closed;
  if (server_->active_ == this) server_->active_ = nullptr;
  return out;
}

RoundOutcome ServerSession::serve_round(const nn::ModelWeights& phi, double alpha) {
  if (phase_ != SessionPhase::Idle)
    throw std::logic_error(std::string("serve_round needs an idle session, phase is ") + to_string(phase_));
  if (phi.values.size() != server_->shape()->param_count())
    throw nn::DimensionError("phi does not match the negotiated parameter count");

  RoundOutcome out;
  out.weights = phi;
  out.round_id = server_->next_round_id();
  const std::uint64_t sent0 = transport_->bytes_sent();
  const std::uint64_t recv0 = transport_->bytes_received();
  auto account = [&] {
    out.bytes_down = transport_->bytes_sent() - sent0;
    out.bytes_up = transport_->bytes_received() - recv0;
  };

  Message reply;
  try {
    phase_ = SessionPhase::Training;
    send_message(*transport_, WeightsDown{out.round_id, phi.values});
    phase_ = SessionPhase::AwaitingWeights;
    reply = receive_message(*transport_, server_->options().timeout);
  } catch (const TransportError& e) {
    account();
    return fail(std::move(out), reason_for(e), false);
  } catch (const VersionMismatch&) {
    account();
    return fail(std::move(out), AbortReason::VersionMismatch, true);
  } catch (const MalformedFrame&) {
    account();
    return fail(std::move(out), AbortReason::Malformed, true);
  }
  account();

  if (std::holds_alternative<Abort>(reply)) return fail(std::move(out), AbortReason::ClientError, false);
  auto* up = std::get_if<WeightsUp>(&reply);
  if (up == nullptr || up->round_id != out.round_id || up->weights.size() != phi.values.size())
    return fail(std::move(out), AbortReason::ProtocolViolation, true);
  if (!all_finite(up->weights)) return fail(std::move(out), AbortReason::ClientError, true);

  const nn::ModelWeights phi_hat{phi.shape, std::move(up->weights)};
  out.weights = meta::meta_update(phi, phi_hat, alpha);
  out.client_loss = up->local_loss;
  out.updated = true;
  phase_ = SessionPhase::Idle;
  return out;
}

EvalOutcome ServerSession::request_eval(const nn::ModelWeights& phi, std::uint32_t k) {
  if (phase_ != SessionPhase::Idle)
    throw std::logic_error(std::string("request_eval needs an idle session, phase is ") + to_string(phase_));
  EvalOutcome out;
  const std::uint64_t round_id = server_->next_round_id();
  Message reply;
  try {
    phase_ = SessionPhase::Evaluating;
    send_message(*transport_, EvalRequest{round_id, k, phi.values});
    reply = receive_message(*transport_, server_->options().timeout);
  } catch (const TransportError& e) {
    out.reason = reason_for(e);
  } catch (const ProtocolError&) {
    out.reason = AbortReason::Malformed;
  }
  if (out.reason == AbortReason::None) {
    auto* report = std::get_if<EvalReport>(&reply);
    if (report != nullptr && report->round_id == round_id) {
      out.ok = true;
      out.report = *report;
      phase_ = SessionPhase::Idle;
      return out;
    }
    out.reason = std::holds_alternative<Abort>(reply) ? AbortReason::ClientError : AbortReason::ProtocolViolation;
  }
  RoundOutcome scratch;
  scratch.round_id = round_id;
  fail(std::move(scratch), out.reason, out.reason == AbortReason::ProtocolViolation);
  return out;
}

}  // namespace tinyreptile::protocol
