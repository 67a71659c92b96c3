// SPDX-License-Identifier: Apache-2.0

#include "tinyreptile/protocol/codec.hpp"

#include <zlib.h>

#include <bit>

#include "tinyreptile/nn.hpp"

namespace tinyreptile::protocol {
namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void weights(const std::vector<float>& w) { nn::serialize_weights_into(w, out_); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * b);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<float> weights() {
    const std::size_t start = pos_;
    const std::uint32_t n = u32();
    if (n > (in_.size() - pos_) / 4)
      throw MalformedFrame(MalformedFrame::Reason::BadPayload, "weight count exceeds payload");
    pos_ += 4 * static_cast<std::size_t>(n);
    return nn::deserialize_weights(in_.subspan(start, pos_ - start));
  }
  void finish() const {
    if (pos_ != in_.size())
      throw MalformedFrame(MalformedFrame::Reason::TrailingBytes,
                           std::to_string(in_.size() - pos_) + " unread payload bytes");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw MalformedFrame(MalformedFrame::Reason::BadPayload, "payload ends early");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::size_t payload_size(const Message& m) {
  struct Visitor {
    std::size_t operator()(const Hello&) const { return 10; }
    std::size_t operator()(const WeightsDown& w) const { return 8 + 4 + 4 * w.weights.size(); }
    std::size_t operator()(const WeightsUp& w) const { return 8 + 8 + 4 + 4 * w.weights.size(); }
    std::size_t operator()(const EvalRequest& w) const { return 8 + 4 + 4 + 4 * w.weights.size(); }
    std::size_t operator()(const EvalReport& r) const { return r.query_accuracy ? 25 : 17; }
    std::size_t operator()(const Abort&) const { return 9; }
    std::size_t operator()(const Bye&) const { return 0; }
  };
  return std::visit(Visitor{}, m);
}

void write_payload(Writer& w, const Message& m) {
  struct Visitor {
    Writer& w;
    void operator()(const Hello& h) const {
      w.u64(h.client_id);
      w.u8(static_cast<std::uint8_t>(h.role));
      w.u8(h.protocol_version);
    }
    void operator()(const WeightsDown& m) const {
      w.u64(m.round_id);
      w.weights(m.weights);
    }
    void operator()(const WeightsUp& m) const {
      w.u64(m.round_id);
      w.f64(m.local_loss);
      w.weights(m.weights);
    }
    void operator()(const EvalRequest& m) const {
      w.u64(m.round_id);
      w.u32(m.k);
      w.weights(m.weights);
    }
    void operator()(const EvalReport& m) const {
      w.u64(m.round_id);
      w.f64(m.query_loss);
      w.u8(m.query_accuracy ? 1 : 0);
      if (m.query_accuracy) w.f64(*m.query_accuracy);
    }
    void operator()(const Abort& m) const {
      w.u64(m.round_id);
      w.u8(static_cast<std::uint8_t>(m.reason));
    }
    void operator()(const Bye&) const {}
  };
  std::visit(Visitor{w}, m);
}

Message read_payload(MessageType type, std::span<const std::uint8_t> payload) {
  Reader r(payload);
  Message m;
  switch (type) {
    case MessageType::Hello: {
      Hello h;
      h.client_id = r.u64();
      const std::uint8_t role = r.u8();
      if (role > 1) throw MalformedFrame(MalformedFrame::Reason::BadPayload, "unknown peer role");
      h.role = static_cast<PeerRole>(role);
      h.protocol_version = r.u8();
      m = h;
      break;
    }
    case MessageType::WeightsDown: {
      WeightsDown d;
      d.round_id = r.u64();
      d.weights = r.weights();
      m = std::move(d);
      break;
    }
    case MessageType::WeightsUp: {
      WeightsUp u;
      u.round_id = r.u64();
      u.local_loss = r.f64();
      u.weights = r.weights();
      m = std::move(u);
      break;
    }
    case MessageType::EvalRequest: {
      EvalRequest e;
      e.round_id = r.u64();
      e.k = r.u32();
      e.weights = r.weights();
      m = std::move(e);
      break;
    }
    case MessageType::EvalReport: {
      EvalReport e;
      e.round_id = r.u64();
      e.query_loss = r.f64();
      const std::uint8_t has_acc = r.u8();
      if (has_acc > 1) throw MalformedFrame(MalformedFrame::Reason::BadPayload, "bad accuracy flag");
      if (has_acc) e.query_accuracy = r.f64();
      m = e;
      break;
    }
    case MessageType::Abort: {
      Abort a;
      a.round_id = r.u64();
      const std::uint8_t reason = r.u8();
      if (reason > static_cast<std::uint8_t>(AbortReason::VersionMismatch))
        throw MalformedFrame(MalformedFrame::Reason::BadPayload, "unknown abort reason");
      a.reason = static_cast<AbortReason>(reason);
      m = a;
      break;
    }
    case MessageType::Bye:
      m = Bye{};
      break;
  }
  r.finish();
  return m;
}

}  // namespace

const char* to_string(AbortReason r) {
  switch (r) {
    case AbortReason::None: return "none";
    case AbortReason::Timeout: return "timeout";
    case AbortReason::Disconnect: return "disconnect";
    case AbortReason::ProtocolViolation: return "protocol_violation";
    case AbortReason::Malformed: return "malformed";
    case AbortReason::Busy: return "busy";
    case AbortReason::ClientError: return "client_error";
    case AbortReason::VersionMismatch: return "version_mismatch";
  }
  return "?";
}

const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::Hello: return "Hello";
    case MessageType::WeightsDown: return "WeightsDown";
    case MessageType::WeightsUp: return "WeightsUp";
    case MessageType::EvalRequest: return "EvalRequest";
    case MessageType::EvalReport: return "EvalReport";
    case MessageType::Abort: return "Abort";
    case MessageType::Bye: return "Bye";
  }
  return "?";
}

const char* to_string(MalformedFrame::Reason r) {
  using R = MalformedFrame::Reason;
  switch (r) {
    case R::Truncated: return "truncated";
    case R::BadMagic: return "bad magic";
    case R::BadHeaderChecksum: return "bad header checksum";
    case R::UnknownType: return "unknown message type";
    case R::Oversized: return "payload too large";
    case R::BadChecksum: return "bad payload checksum";
    case R::BadPayload: return "bad payload";
    case R::TrailingBytes: return "trailing bytes";
  }
  return "?";
}

MalformedFrame::MalformedFrame(Reason reason, const std::string& detail)
    : ProtocolError(std::string("malformed frame (") + to_string(reason) + "): " + detail), reason_(reason) {}

VersionMismatch::VersionMismatch(std::uint8_t got)
    : ProtocolError("protocol version " + std::to_string(got) + " is not supported (expected " +
                    std::to_string(kProtocolVersion) + ")"),
      version_(got) {}

MessageType type_of(const Message& m) { return static_cast<MessageType>(m.index() + 1); }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> encode(const Message& m) {
  const std::size_t len = payload_size(m);
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + len + kTrailerSize);
  Writer w(out);
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(type_of(m)));
  w.u32(static_cast<std::uint32_t>(len));
  w.u32(crc32({out.data(), 8}));
  write_payload(w, m);
  w.u32(crc32({out.data() + kHeaderSize, len}));
  return out;
}

FrameHeader decode_header(std::span<const std::uint8_t> header) {
  using R = MalformedFrame::Reason;
  if (header.size() < kHeaderSize) throw MalformedFrame(R::Truncated, "header needs 12 bytes");
  if (header[0] != kMagic0 || header[1] != kMagic1) throw MalformedFrame(R::BadMagic, "not a frame");
  if (header[2] != kProtocolVersion) throw VersionMismatch(header[2]);
  if (read_u32(header.data() + 8) != crc32(header.first(8)))
    throw MalformedFrame(R::BadHeaderChecksum, "header checksum mismatch");
  const std::uint8_t type = header[3];
  if (type < 1 || type > 7) throw MalformedFrame(R::UnknownType, "type " + std::to_string(type));
  const std::uint32_t len = read_u32(header.data() + 4);
  if (len > kMaxPayload) throw MalformedFrame(R::Oversized, std::to_string(len) + " bytes");
  return {static_cast<MessageType>(type), len};
}

Message decode_body(const FrameHeader& header, std::span<const std::uint8_t> body) {
  using R = MalformedFrame::Reason;
  if (body.size() < header.payload_len + kTrailerSize)
    throw MalformedFrame(R::Truncated, "frame body ends early");
  if (body.size() > header.payload_len + kTrailerSize)
    throw MalformedFrame(R::TrailingBytes, "bytes after frame checksum");
  const auto payload = body.first(header.payload_len);
  if (read_u32(body.data() + header.payload_len) != crc32(payload))
    throw MalformedFrame(R::BadChecksum, "payload checksum mismatch");
  return read_payload(header.type, payload);
}

Message decode(std::span<const std::uint8_t> frame) {
  const FrameHeader h = decode_header(frame);
  return decode_body(h, frame.subspan(kHeaderSize));
}

std::size_t frame_size(const Message& m) { return kHeaderSize + payload_size(m) + kTrailerSize; }

std::size_t weights_down_frame_size(std::size_t params) { return kHeaderSize + 8 + 4 + 4 * params + kTrailerSize; }

std::size_t weights_up_frame_size(std::size_t params) {
  return kHeaderSize + 8 + 8 + 4 + 4 * params + kTrailerSize;
}

std::size_t control_frame_size(MessageType t, bool with_accuracy) {
  switch (t) {
    case MessageType::Hello: return frame_size(Hello{});
    case MessageType::EvalReport: {
      EvalReport r;
      if (with_accuracy) r.query_accuracy = 0.0;
      return frame_size(r);
    }
    case MessageType::Abort: return frame_size(Abort{});
    case MessageType::Bye: return frame_size(Bye{});
    default: throw std::invalid_argument(std::string(to_string(t)) + " is not a control frame");
  }
}

}  // namespace tinyreptile::protocol
