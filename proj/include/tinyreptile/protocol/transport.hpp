// SPDX-License-Identifier: Apache-2.0
//
// Byte-stream transports. The in-process channel and TCP share this
// interface so frames travel through the same codec path either way.

#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

#include "tinyreptile/protocol/codec.hpp"

namespace tinyreptile::protocol {

using Millis = std::chrono::milliseconds;

class TransportError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Disconnected, Io };
  TransportError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class Transport {
 public:
  virtual ~Transport() = default;

  /// Writes all of `bytes` or throws TransportError.
  virtual void send(std::span<const std::uint8_t> bytes) = 0;
  /// Fills `out` completely or throws TransportError (Timeout when nothing
  /// completes the read within `timeout`).
  virtual void receive(std::span<std::uint8_t> out, Millis timeout) = 0;
  virtual void close() = 0;

  std::uint64_t bytes_sent() const noexcept { return bytes_sent_; }
  std::uint64_t bytes_received() const noexcept { return bytes_received_; }

 protected:
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
};

void send_message(Transport& t, const Message& m);

/// Reads one frame: the header first, then exactly the announced body.
Message receive_message(Transport& t, Millis timeout);

/// Two connected endpoints backed by in-memory queues.
std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_inprocess_pair();

class TcpListener {
 public:
  /// Binds and listens; port 0 picks an ephemeral port.
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<Transport> accept(Millis timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port, Millis timeout);

}  // namespace tinyreptile::protocol
