// SPDX-License-Identifier: Apache-2.0
//
// Serial server/client state machines. The server talks to at most one
// client at a time; a second client that arrives while a session is open
// is told Busy and disconnected.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "tinyreptile/meta.hpp"
#include "tinyreptile/protocol/transport.hpp"

namespace tinyreptile::protocol {

enum class SessionPhase { Idle, AwaitHello, Training, AwaitingWeights, Evaluating, Closed };

const char* to_string(SessionPhase p);

struct ServerOptions {
  Millis timeout{30'000};
};

struct RoundOutcome {
  bool updated = false;
  nn::ModelWeights weights;  ///< phi' when updated, otherwise phi untouched
  AbortReason reason = AbortReason::None;
  std::uint64_t round_id = 0;
  double client_loss = 0.0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
};

struct EvalOutcome {
  bool ok = false;
  AbortReason reason = AbortReason::None;
  EvalReport report;
};

class Server;

class ServerSession {
 public:
  ~ServerSession();
  ServerSession(const ServerSession&) = delete;
  ServerSession& operator=(const ServerSession&) = delete;

  /// One serial round: WeightsDown, wait for WeightsUp, meta-update with
  /// `alpha`. Any failure leaves phi untouched and closes the session.
  RoundOutcome serve_round(const nn::ModelWeights& phi, double alpha);

  /// Asks the client to fine-tune `k` steps on its support and report its
  /// query loss.
  EvalOutcome request_eval(const nn::ModelWeights& phi, std::uint32_t k);

  /// Sends Bye (best effort) and releases the server's session slot.
  void close();

  SessionPhase phase() const noexcept { return phase_; }
  std::uint64_t client_id() const noexcept { return hello_.client_id; }
  PeerRole client_role() const noexcept { return hello_.role; }
  Transport& transport() noexcept { return *transport_; }

 private:
  friend class Server;
  ServerSession(Server& server, std::unique_ptr<Transport> transport, Hello hello);

  RoundOutcome fail(RoundOutcome out, AbortReason reason, bool notify_client);

  Server* server_;
  std::unique_ptr<Transport> transport_;
  Hello hello_;
  SessionPhase phase_ = SessionPhase::Idle;
};

struct OpenResult {
  std::unique_ptr<ServerSession> session;
  AbortReason refused = AbortReason::None;
};

class Server {
 public:
  Server(nn::ShapePtr shape, ServerOptions options = {});

  /// Runs the Hello handshake on `transport`. Refuses with Busy when a
  /// session is already open.
  OpenResult open_session(std::unique_ptr<Transport> transport);

  bool busy() const noexcept { return active_ != nullptr; }
  const nn::ShapePtr& shape() const noexcept { return shape_; }
  const ServerOptions& options() const noexcept { return options_; }
  std::uint64_t last_round_id() const noexcept { return round_id_; }

 private:
  friend class ServerSession;
  std::uint64_t next_round_id() noexcept { return ++round_id_; }

  nn::ShapePtr shape_;
  ServerOptions options_;
  ServerSession* active_ = nullptr;
  std::uint64_t round_id_ = 0;
};

struct ClientConfig {
  std::uint64_t client_id = 0;
  PeerRole role = PeerRole::Training;
  float beta = 0.01f;
  std::uint64_t stream_seed = 0;
  Millis timeout{30'000};
  /// Simulated dropout: vanish right after receiving WeightsDown.
  bool drop_on_weights = false;
};

struct ClientStats {
  std::size_t rounds_trained = 0;
  std::size_t evals_answered = 0;
  std::size_t peak_resident_samples = 0;
  double last_local_loss = 0.0;
  double local_train_seconds = 0.0;
  bool dropped = false;
  AbortReason ended_by = AbortReason::None;  ///< None after a clean Bye
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
};

/// Client side: Hello, then serve WeightsDown / EvalRequest until Bye.
/// Training streams the support set one sample at a time.
ClientStats client_loop(Transport& transport, const nn::ShapePtr& shape, const tasks::SupportQuerySplit& data,
                        const ClientConfig& cfg);

}  // namespace tinyreptile::protocol
