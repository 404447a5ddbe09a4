#include "../support/random_messages.hpp"
#include "doctest.h"
#include "v2xlab/codec.hpp"

using namespace v2xlab;
using namespace v2xlab::codec;

namespace {

DecodeErrorKind decode_error(std::span<const std::uint8_t> b) {
  try {
    decode(b);
  } catch (const DecodeError& e) {
    return e.kind();
  }
  FAIL("decode accepted the input");
  return DecodeErrorKind::Truncated;
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("unavailable CAM header bytes") {
    CamPayload cam;
    cam.heading = kHeadingUnavailable;
    cam.speed = kSpeedUnavailable;
    const auto b = encode(make_message(100, cam));
    const std::vector<std::uint8_t> head{0x07, 0xD1, 0x00, 0x00, 0x02, 0x02, 0x00, 0x00, 0x00, 0x64};
    REQUIRE(b.size() == kBtpHeaderSize + kItsHeaderSize + kCamBodySize);
    CHECK(std::equal(head.begin(), head.end(), b.begin()));
    // heading at body offset 10, speed at 12
    CHECK(b[10 + 10] == 0x0E);
    CHECK(b[10 + 11] == 0x11);
    CHECK(b[10 + 12] == 0x3F);
    CHECK(b[10 + 13] == 0xFF);
  }

  TEST_CASE("empty CPM is the fixed prefix with a zero count") {
    const auto b = encode(make_message(300, CpmPayload{}));
    REQUIRE(b.size() == kBtpHeaderSize + kItsHeaderSize + kCpmPrefixSize);
    CHECK(b.back() == 0x00);
    CHECK(b[0] == 0x07);
    CHECK(b[1] == 0xD9);
  }

  TEST_CASE("random messages round trip") {
    testing::MessageGen gen(7);
    for (int i = 0; i < 10000; ++i) {
      const auto m = gen.message(i);
      const auto b = encode(m);
      REQUIRE(b.size() == encoded_size(m));
      REQUIRE(decode(b) == m);
    }
  }

  TEST_CASE("port follows the message type") {
    testing::MessageGen gen(8);
    for (int t = 0; t < 4; ++t) {
      const auto m = gen.message(t);
      const auto b = encode(m);
      const std::uint16_t port = static_cast<std::uint16_t>((b[0] << 8) | b[1]);
      CHECK(port == port_for(m.header.message_id));
    }
    CHECK(port_for(MessageId::Denm) == kPortDenm);
  }

  TEST_CASE("empty input is truncated") {
    CHECK(decode_error({}) == DecodeErrorKind::Truncated);
  }

  TEST_CASE("CAM rewritten to the CPM port is a mismatch") {
    auto b = encode(make_message(5, CamPayload{}));
    b[0] = 0x07;
    b[1] = 0xD9;
    CHECK(decode_error(b) == DecodeErrorKind::PortMessageMismatch);
  }

  TEST_CASE("bad version, unknown port, reserved DENM port") {
    auto b = encode(make_message(5, CamPayload{}));
    auto v = b;
    v[4] = 3;
    CHECK(decode_error(v) == DecodeErrorKind::BadVersion);
    auto p = b;
    p[1] = 0x00;
    CHECK(decode_error(p) == DecodeErrorKind::BadPort);
    auto d = b;
    d[1] = 0xD2;
    CHECK(decode_error(d) == DecodeErrorKind::BadPort);
  }

  TEST_CASE("truncation and trailing bytes") {
    testing::MessageGen gen(9);
    const auto m = gen.message(1);
    auto b = encode(m);
    auto shortb = b;
    shortb.pop_back();
    CHECK(decode_error(shortb) == DecodeErrorKind::Truncated);
    b.push_back(0);
    CHECK(decode_error(b) == DecodeErrorKind::TrailingBytes);
  }

  TEST_CASE("out-of-range fields are rejected before encoding") {
    CamPayload c;
    c.mission_progress = 1001;
    CHECK_THROWS_AS(encode(make_message(1, c)), InvariantViolation);
    SpatemPayload s;
    s.movements = {{1, EventState::StopAndRemain, 0}, {1, EventState::ProtectedClearance, 0}};
    CHECK_THROWS_AS(encode(make_message(1, s)), InvariantViolation);
    MapemPayload map;
    map.lanes.push_back({1, LaneType::Vehicle, 1, {{0, 0}}});
    CHECK_THROWS_AS(encode(make_message(1, map)), InvariantViolation);
    CpmPayload cpm;
    cpm.objects.resize(129);
    CHECK_THROWS_AS(encode(make_message(1, cpm)), InvariantViolation);
  }

  TEST_CASE("decoder never crashes on random bytes") {
    testing::MessageGen gen(10);
    for (int i = 0; i < 20000; ++i) {
      const auto b = gen.bytes(i % 50 == 0 ? 65536 : 64);
      try {
        const auto m = decode(b);
        CHECK(encode(m) == b);
      } catch (const DecodeError&) {
      }
    }
  }

  TEST_CASE("mutating a valid message's bytes yields a message or an error") {
    testing::MessageGen gen(11);
    for (int i = 0; i < 2000; ++i) {
      auto b = encode(gen.message(i));
      b[gen.uni<std::size_t>(0, b.size() - 1)] ^= static_cast<std::uint8_t>(1u << gen.uni<int>(0, 7));
      try {
        decode(b);
      } catch (const DecodeError&) {
      }
    }
  }

  TEST_CASE("generation time unwrapping") {
    CHECK(unwrap_generation_time(100, 65536 * 3 + 50) == 65536 * 3 + 100);
    CHECK(unwrap_generation_time(65500, 65536 * 3 + 20) == 65536 * 2 + 65500);
    CHECK(unwrap_generation_time(10, 65536 * 2 + 65530) == 65536 * 3 + 10);
  }
}
