// SPDX-License-Identifier: Apache-2.0

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "tinyreptile/protocol/transport.hpp"

namespace tinyreptile::protocol {
namespace {

using Clock = std::chrono::steady_clock;

[[noreturn]] void throw_io(const std::string& what) {
  throw TransportError(TransportError::Kind::Io, what + ": " + std::strerror(errno));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

// Waits for `events` on fd; false on timeout.
bool wait_for(int fd, short events, Clock::time_point deadline) {
  while (true) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw_io("poll");
  }
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    throw TransportError(TransportError::Kind::Io, "cannot resolve host " + host);
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpTransport() override { close(); }

  void send(std::span<const std::uint8_t> bytes) override {
    if (fd_ < 0) throw TransportError(TransportError::Kind::Disconnected, "socket closed");
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        if (errno == EPIPE || errno == ECONNRESET)
          throw TransportError(TransportError::Kind::Disconnected, "peer closed the connection");
        throw_io("send");
      }
      off += static_cast<std::size_t>(n);
    }
    bytes_sent_ += bytes.size();
  }

  void receive(std::span<std::uint8_t> out, Millis timeout) override {
    if (fd_ < 0) throw TransportError(TransportError::Kind::Disconnected, "socket closed");
    const auto deadline = Clock::now() + timeout;
    std::size_t got = 0;
    while (got < out.size()) {
      if (!wait_for(fd_, POLLIN, deadline)) throw TransportError(TransportError::Kind::Timeout, "receive timed out");
      const ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
      if (n == 0) throw TransportError(TransportError::Kind::Disconnected, "peer closed the connection");
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        if (errno == ECONNRESET) throw TransportError(TransportError::Kind::Disconnected, "connection reset");
        throw_io("recv");
      }
      got += static_cast<std::size_t>(n);
    }
    bytes_received_ += out.size();
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
};

}  // namespace

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw_io("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    const int err = errno;
    ::close(fd_);
    errno = err;
    throw_io("bind " + host + ":" + std::to_string(port));
  }
  if (::listen(fd_, 16) < 0) throw_io("listen");
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept(Millis timeout) {
  if (!wait_for(fd_, POLLIN, Clock::now() + timeout))
    throw TransportError(TransportError::Kind::Timeout, "no client connected in time");
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) throw_io("accept");
  return std::make_unique<TcpTransport>(fd);
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port, Millis timeout) {
  sockaddr_in addr = resolve(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw_io("socket");
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  if (rc < 0 && errno != EINPROGRESS) {
    ::close(fd);
    throw TransportError(TransportError::Kind::Disconnected, "connect to " + host + " refused");
  }
  if (rc < 0) {
    if (!wait_for(fd, POLLOUT, Clock::now() + timeout)) {
      ::close(fd);
      throw TransportError(TransportError::Kind::Timeout, "connect timed out");
    }
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      ::close(fd);
      throw TransportError(TransportError::Kind::Disconnected, "connect failed: " + std::string(std::strerror(err)));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  return std::make_unique<TcpTransport>(fd);
}

}  // namespace tinyreptile::protocol
