// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <random>

#include "doctest.h"
#include "random_messages.hpp"
#include "tinyreptile/protocol/codec.hpp"

using namespace tinyreptile;
using namespace tinyreptile::protocol;

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void reseal_header(std::vector<std::uint8_t>& frame) {
  const std::uint32_t c = crc32(std::span<const std::uint8_t>(frame).first(8));
  for (int i = 0; i < 4; ++i) frame[8 + i] = static_cast<std::uint8_t>(c >> (8 * i));
}

/// A frame with valid checksums around an arbitrary payload.
std::vector<std::uint8_t> raw_frame(MessageType type, std::vector<std::uint8_t> payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> f{'T', 'R', kProtocolVersion, static_cast<std::uint8_t>(type), static_cast<std::uint8_t>(n),
                              static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n >> 16),
                              static_cast<std::uint8_t>(n >> 24), 0, 0, 0, 0};
  reseal_header(f);
  const std::uint32_t c = crc32(payload);
  f.insert(f.end(), payload.begin(), payload.end());
  for (int i = 0; i < 4; ++i) f.push_back(static_cast<std::uint8_t>(c >> (8 * i)));
  return f;
}

MalformedFrame::Reason reason_of(std::span<const std::uint8_t> bytes) {
  try {
    decode(bytes);
  } catch (const MalformedFrame& e) {
    return e.reason();
  }
  FAIL("frame was accepted");
  return MalformedFrame::Reason::Truncated;
}

}  // namespace

TEST_CASE("crc32 check value") {
  const char* s = "123456789";
  CHECK(crc32({reinterpret_cast<const std::uint8_t*>(s), 9}) == 0xCBF43926u);
}

TEST_CASE("frame layout") {
  const auto bye = encode(Bye{});
  REQUIRE(bye.size() == 16);
  CHECK(bye[0] == 'T');
  CHECK(bye[1] == 'R');
  CHECK(bye[2] == kProtocolVersion);
  CHECK(bye[3] == static_cast<std::uint8_t>(MessageType::Bye));
  CHECK(read_u32(bye, 4) == 0);
  CHECK(read_u32(bye, 8) == crc32(std::span<const std::uint8_t>(bye).first(8)));
  CHECK(read_u32(bye, 12) == crc32({}));

  const auto down = encode(WeightsDown{7, std::vector<float>(1153, 0.5f)});
  CHECK(down.size() == 12 + 8 + 4 + 4 * 1153 + 4);
  CHECK(read_u32(down, 4) == 8 + 4 + 4 * 1153);
  CHECK(read_u32(down, 12) == 7);
  CHECK(read_u32(down, 20) == 1153);
  CHECK(down.size() == weights_down_frame_size(1153));
  CHECK(encode(WeightsUp{7, std::vector<float>(1153), 0.25}).size() == weights_up_frame_size(1153));

  CHECK(encode(Hello{}).size() == control_frame_size(MessageType::Hello));
  CHECK(encode(Abort{}).size() == control_frame_size(MessageType::Abort));
  CHECK(encode(EvalReport{1, 2.0, std::nullopt}).size() == control_frame_size(MessageType::EvalReport));
  CHECK(encode(EvalReport{1, 2.0, 0.5}).size() == control_frame_size(MessageType::EvalReport, true));
}

TEST_CASE("random messages survive a round trip") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 2000; ++i) {
    const Message m = testing::random_message(rng);
    const auto bytes = encode(m);
    CHECK(bytes.size() == frame_size(m));
    const Message back = decode(bytes);
    REQUIRE(back == m);
    const auto header = decode_header(std::span<const std::uint8_t>(bytes).first(kHeaderSize));
    CHECK(header.type == type_of(m));
    CHECK(decode_body(header, std::span<const std::uint8_t>(bytes).subspan(kHeaderSize)) == m);
  }
}

TEST_CASE("special float values keep their bits") {
  const std::vector<float> w{-0.0f, std::numeric_limits<float>::infinity(), std::numeric_limits<float>::denorm_min()};
  const auto back = std::get<WeightsDown>(decode(encode(WeightsDown{1, w})));
  CHECK(std::memcmp(back.weights.data(), w.data(), sizeof(float) * w.size()) == 0);
}

TEST_CASE("corrupted frames are rejected") {
  const auto good = encode(WeightsUp{3, {1.0f, 2.0f, 3.0f}, 0.5});
  using R = MalformedFrame::Reason;

  SUBCASE("every single flipped byte") {
    for (std::size_t i = 0; i < good.size(); ++i) {
      auto bad = good;
      bad[i] ^= 0x5A;
      CAPTURE(i);
      CHECK_THROWS_AS(decode(bad), ProtocolError);
    }
  }
  SUBCASE("specific reasons") {
    auto bad = good;
    bad[0] = 'X';
    CHECK(reason_of(bad) == R::BadMagic);
    bad = good;
    bad[3] = 42;
    CHECK(reason_of(bad) == R::BadHeaderChecksum);
    reseal_header(bad);
    CHECK(reason_of(bad) == R::UnknownType);
    bad = good;
    bad.back() ^= 1;
    CHECK(reason_of(bad) == R::BadChecksum);
    CHECK(reason_of(std::span<const std::uint8_t>(good).first(good.size() - 1)) == R::Truncated);
    CHECK(reason_of(std::span<const std::uint8_t>(good).first(5)) == R::Truncated);
    bad = good;
    bad.push_back(0);
    CHECK(reason_of(bad) == R::TrailingBytes);
    bad = good;
    bad[4] = 0xFF;
    bad[5] = 0xFF;
    bad[6] = 0xFF;
    bad[7] = 0x7F;
    reseal_header(bad);
    CHECK(reason_of(bad) == R::Oversized);
  }
  SUBCASE("version mismatch") {
    auto bad = good;
    bad[2] = 2;
    reseal_header(bad);
    try {
      decode(bad);
      FAIL("accepted a foreign version");
    } catch (const VersionMismatch& e) {
      CHECK(e.version() == 2);
    }
  }
  SUBCASE("payload that disagrees with its type") {
    CHECK(reason_of(raw_frame(MessageType::Bye, {0xAB})) == R::TrailingBytes);
    CHECK(reason_of(raw_frame(MessageType::Abort, {1, 0, 0, 0, 0, 0, 0, 0, 200})) == R::BadPayload);
    CHECK(reason_of(raw_frame(MessageType::Hello, {1, 0, 0, 0, 0, 0, 0, 0, 9, kProtocolVersion})) == R::BadPayload);
    CHECK(reason_of(raw_frame(MessageType::WeightsDown, {1, 0, 0, 0, 0, 0, 0, 0, 5, 0, 0, 0})) == R::BadPayload);
    CHECK(reason_of(raw_frame(MessageType::EvalReport, std::vector<std::uint8_t>(17, 7))) == R::BadPayload);
  }
}

TEST_CASE("random bytes never crash the decoder") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(0, 64);
  std::size_t accepted = 0;
  for (int i = 0; i < 10'000; ++i) {
    std::vector<std::uint8_t> buf(len(rng));
    for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
    if (i % 2 && buf.size() >= 2) buf[0] = 'T', buf[1] = 'R';
    try {
      decode(buf);
      ++accepted;
    } catch (const ProtocolError&) {
    }
  }
  CHECK(accepted == 0);
}
