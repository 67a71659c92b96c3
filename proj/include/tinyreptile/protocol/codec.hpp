// SPDX-License-Identifier: Apache-2.0
//
// Wire format. Every frame is
//
//   offset  size  field
//   0       2     magic "TR"
//   2       1     protocol version (1)
//   3       1     message type
//   4       4     payload length, u32 little-endian
//   8       4     CRC32 of bytes 0..7
//   12      n     payload
//   12+n    4     CRC32 of the payload
//
// All integers and floats are little-endian. Weight blocks use the nn
// layout: u32 count followed by float32 values.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tinyreptile::protocol {

inline constexpr std::uint8_t kMagic0 = 'T';
inline constexpr std::uint8_t kMagic1 = 'R';
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kTrailerSize = 4;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MessageType : std::uint8_t {
  Hello = 1,
  WeightsDown = 2,
  WeightsUp = 3,
  EvalRequest = 4,
  EvalReport = 5,
  Abort = 6,
  Bye = 7,
};

enum class PeerRole : std::uint8_t { Training = 0, Testing = 1 };

enum class AbortReason : std::uint8_t {
  None = 0,
  Timeout = 1,
  Disconnect = 2,
  ProtocolViolation = 3,
  Malformed = 4,
  Busy = 5,
  ClientError = 6,
  VersionMismatch = 7,
};

const char* to_string(AbortReason r);

struct Hello {
  std::uint64_t client_id = 0;
  PeerRole role = PeerRole::Training;
  std::uint8_t protocol_version = kProtocolVersion;
  bool operator==(const Hello&) const = default;
};

struct WeightsDown {
  std::uint64_t round_id = 0;
  std::vector<float> weights;
  bool operator==(const WeightsDown&) const = default;
};

struct WeightsUp {
  std::uint64_t round_id = 0;
  std::vector<float> weights;
  double local_loss = 0.0;
  bool operator==(const WeightsUp&) const = default;
};

struct EvalRequest {
  std::uint64_t round_id = 0;
  std::uint32_t k = 0;
  std::vector<float> weights;
  bool operator==(const EvalRequest&) const = default;
};

struct EvalReport {
  std::uint64_t round_id = 0;
  double query_loss = 0.0;
  std::optional<double> query_accuracy;
  bool operator==(const EvalReport&) const = default;
};

struct Abort {
  std::uint64_t round_id = 0;
  AbortReason reason = AbortReason::None;
  bool operator==(const Abort&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using Message = std::variant<Hello, WeightsDown, WeightsUp, EvalRequest, EvalReport, Abort, Bye>;

MessageType type_of(const Message& m);
const char* to_string(MessageType t);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedFrame : public ProtocolError {
 public:
  enum class Reason {
    Truncated,
    BadMagic,
    BadHeaderChecksum,
    UnknownType,
    Oversized,
    BadChecksum,
    BadPayload,
    TrailingBytes,
  };
  MalformedFrame(Reason reason, const std::string& detail);
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

const char* to_string(MalformedFrame::Reason r);

class VersionMismatch : public ProtocolError {
 public:
  explicit VersionMismatch(std::uint8_t got);
  std::uint8_t version() const noexcept { return version_; }

 private:
  std::uint8_t version_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const Message& m);

/// Decodes exactly one complete frame. Throws MalformedFrame or
/// VersionMismatch; never reads outside `frame`.
Message decode(std::span<const std::uint8_t> frame);

struct FrameHeader {
  MessageType type;
  std::uint32_t payload_len;
};

/// Validates the 12-byte header on its own so a stream reader knows how
/// much to read next.
FrameHeader decode_header(std::span<const std::uint8_t> header);

/// Decodes payload + trailing CRC for an already validated header.
Message decode_body(const FrameHeader& header, std::span<const std::uint8_t> body);

/// Size of encode(m) without encoding it.
std::size_t frame_size(const Message& m);
std::size_t weights_down_frame_size(std::size_t params);
std::size_t weights_up_frame_size(std::size_t params);
std::size_t control_frame_size(MessageType t, bool with_accuracy = false);

}  // namespace tinyreptile::protocol
