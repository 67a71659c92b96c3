// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/protocol/transport.hpp"

#include <array>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <vector>

namespace tinyreptile::protocol {

void send_message(Transport& t, const Message& m) {
  const std::vector<std::uint8_t> frame = encode(m);
  t.send(frame);
}

Message receive_message(Transport& t, Millis timeout) {
  std::array<std::uint8_t, kHeaderSize> header{};
  t.receive(header, timeout);
  const FrameHeader h = decode_header(header);
  std::vector<std::uint8_t> body(h.payload_len + kTrailerSize);
  t.receive(body, timeout);
  return decode_body(h, body);
}

namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> bytes;
  bool closed = false;
};

struct Channel {
  Pipe a_to_b;
  Pipe b_to_a;
};

class InProcessTransport final : public Transport {
 public:
  InProcessTransport(std::shared_ptr<Channel> ch, Pipe& out, Pipe& in) : ch_(std::move(ch)), out_(out), in_(in) {}
  ~InProcessTransport() override { close(); }

  void send(std::span<const std::uint8_t> bytes) override {
    {
      std::lock_guard lock(out_.mu);
      if (out_.closed) throw TransportError(TransportError::Kind::Disconnected, "peer closed the channel");
      out_.bytes.insert(out_.bytes.end(), bytes.begin(), bytes.end());
    }
    out_.cv.notify_all();
    bytes_sent_ += bytes.size();
  }

  void receive(std::span<std::uint8_t> out, Millis timeout) override {
    std::unique_lock lock(in_.mu);
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::size_t got = 0;
    while (got < out.size()) {
      if (!in_.cv.wait_until(lock, deadline, [&] { return !in_.bytes.empty() || in_.closed; }))
        throw TransportError(TransportError::Kind::Timeout, "receive timed out");
      while (got < out.size() && !in_.bytes.empty()) {
        out[got++] = in_.bytes.front();
        in_.bytes.pop_front();
      }
      if (got < out.size() && in_.bytes.empty() && in_.closed)
        throw TransportError(TransportError::Kind::Disconnected, "peer closed the channel");
    }
    bytes_received_ += out.size();
  }

  void close() override {
    for (Pipe* p : {&out_, &in_}) {
      {
        std::lock_guard lock(p->mu);
        p->closed = true;
      }
      p->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Channel> ch_;
  Pipe& out_;
  Pipe& in_;
};

}  // namespace

std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>> make_inprocess_pair() {
  auto ch = std::make_shared<Channel>();
  auto a = std::make_unique<InProcessTransport>(ch, ch->a_to_b, ch->b_to_a);
  auto b = std::make_unique<InProcessTransport>(ch, ch->b_to_a, ch->a_to_b);
  return {std::move(a), std::move(b)};
}

}  // namespace tinyreptile::protocol
