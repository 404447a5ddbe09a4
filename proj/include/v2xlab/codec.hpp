#pragma once

// Fixed-layout big-endian wire format for CAM, CPM, SPATEM and MAPEM carried
// behind a BTP-style destination port header.
//
//   BTP  = port(2) | port_info(2)
//   ITS  = version(1) | message_id(1) | station_id(4)
//   CAM  = gen_delta_time(2) | lat(4) | lon(4) | heading(2) | speed(2) |
//          door_status(1) | indicator(1) | mission_id(2) | mission_progress(2)
//   CPM  = reference_time(8) | lat(4) | lon(4) | count(1) |
//          count x [object_id(2) | dx(2) | dy(2) | vx(2) | vy(2) | radius(2) | class(1) | confidence(1)]
//   SPAT = intersection_id(2) | revision(1) | count(1) | count x [group(1) | state(1) | time_to_change(2)]
//   MAP  = intersection_id(2) | lat(4) | lon(4) | lane_count(1) |
//          per lane [lane_id(1) | lane_type(1) | signal_group(1) | node_count(1) | node_count x (x_cm(2) | y_cm(2))]

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace v2xlab::codec {

enum class MessageId : std::uint8_t { Denm = 1, Cam = 2, Spatem = 4, Mapem = 5, Cpm = 14 };

inline constexpr std::uint8_t kProtocolVersion = 2;

inline constexpr std::uint16_t kPortCam = 2001;
inline constexpr std::uint16_t kPortDenm = 2002;
inline constexpr std::uint16_t kPortMapem = 2003;
inline constexpr std::uint16_t kPortSpatem = 2004;
inline constexpr std::uint16_t kPortCpm = 2009;

inline constexpr std::uint16_t kHeadingUnavailable = 3601;
inline constexpr std::uint16_t kSpeedUnavailable = 16383;
inline constexpr std::uint16_t kTimeToChangeUnknown = 36001;
inline constexpr std::size_t kMaxCpmObjects = 128;

inline constexpr std::size_t kBtpHeaderSize = 4;
inline constexpr std::size_t kItsHeaderSize = 6;
inline constexpr std::size_t kCamBodySize = 20;
inline constexpr std::size_t kCpmPrefixSize = 17;
inline constexpr std::size_t kCpmObjectSize = 14;

std::uint16_t port_for(MessageId id);

struct ItsHeader {
  std::uint8_t protocol_version = kProtocolVersion;
  MessageId message_id = MessageId::Cam;
  std::uint32_t station_id = 0;
  bool operator==(const ItsHeader&) const = default;
};

struct BtpHeader {
  std::uint16_t destination_port = 0;
  std::uint16_t destination_port_info = 0;
  bool operator==(const BtpHeader&) const = default;
};

namespace door {
inline constexpr std::uint8_t kFrontOpen = 0x01;
inline constexpr std::uint8_t kRearOpen = 0x02;
}  // namespace door

enum class Indicator : std::uint8_t { Off = 0, Left = 1, Right = 2, Hazard = 3 };

struct CamPayload {
  std::uint16_t generation_delta_time = 0;  // ms mod 65536
  std::int32_t latitude = 0;                // 0.1 microdegree
  std::int32_t longitude = 0;
  std::uint16_t heading = 0;   // 0.1 deg, 3601 unavailable
  std::uint16_t speed = 0;     // 0.01 m/s, 16383 unavailable
  std::uint8_t door_status = 0;
  Indicator indicator_status = Indicator::Off;
  std::uint16_t mission_id = 0;
  std::uint16_t mission_progress = 0;  // 0.1 %
  bool operator==(const CamPayload&) const = default;
};

enum class ObjectClass : std::uint8_t { Unknown = 0, Pedestrian = 1, Vehicle = 2 };

struct PerceivedObject {
  std::uint16_t object_id = 0;
  std::int16_t dx = 0;  // 0.01 m
  std::int16_t dy = 0;
  std::int16_t vx = 0;  // 0.01 m/s
  std::int16_t vy = 0;
  std::uint16_t footprint_radius = 0;  // 0.01 m
  ObjectClass classification = ObjectClass::Unknown;
  std::uint8_t confidence = 0;
  bool operator==(const PerceivedObject&) const = default;
};

struct CpmPayload {
  std::uint64_t reference_time = 0;  // ms since epoch
  std::int32_t latitude = 0;
  std::int32_t longitude = 0;
  std::vector<PerceivedObject> objects;
  bool operator==(const CpmPayload&) const = default;
};

enum class EventState : std::uint8_t {
  StopAndRemain = 3,
  ProtectedMovementAllowed = 6,
  ProtectedClearance = 8,
};

struct MovementState {
  std::uint8_t signal_group_id = 0;
  EventState event_state = EventState::StopAndRemain;
  std::uint16_t time_to_change = kTimeToChangeUnknown;  // 0.1 s
  bool operator==(const MovementState&) const = default;
};

struct SpatemPayload {
  std::uint16_t intersection_id = 0;
  std::uint8_t revision = 0;
  std::vector<MovementState> movements;
  bool operator==(const SpatemPayload&) const = default;
};

enum class LaneType : std::uint8_t { Vehicle = 0, Crosswalk = 3 };

struct LaneNode {
  std::int16_t x_cm = 0;
  std::int16_t y_cm = 0;
  bool operator==(const LaneNode&) const = default;
};

struct MapLane {
  std::uint8_t lane_id = 0;
  LaneType lane_type = LaneType::Vehicle;
  std::uint8_t signal_group_id = 0;  // 0 = unsignalized
  std::vector<LaneNode> nodes;
  bool operator==(const MapLane&) const = default;
};

struct MapemPayload {
  std::uint16_t intersection_id = 0;
  std::int32_t latitude = 0;
  std::int32_t longitude = 0;
  std::vector<MapLane> lanes;
  bool operator==(const MapemPayload&) const = default;
};

using Payload = std::variant<CamPayload, CpmPayload, SpatemPayload, MapemPayload>;

struct V2xMessage {
  ItsHeader header;
  Payload payload;
  bool operator==(const V2xMessage&) const = default;
};

MessageId message_id_of(const Payload& payload);

/// Builds a message with a header consistent with the payload type.
V2xMessage make_message(std::uint32_t station_id, Payload payload);

class InvariantViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DecodeErrorKind {
  Truncated,
  BadPort,
  PortMessageMismatch,
  BadVersion,
  TrailingBytes,
  InvalidField,
};

const char* to_string(DecodeErrorKind kind);

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

/// Throws InvariantViolation when any field is out of range.
void validate(const V2xMessage& message);

/// Canonical encoded length; a pure function of message type and list counts.
std::size_t encoded_size(const V2xMessage& message);

std::vector<std::uint8_t> encode(const V2xMessage& message);

/// Inverse of encode on its image; throws DecodeError for anything else.
V2xMessage decode(std::span<const std::uint8_t> bytes);

/// Reconstructs absolute milliseconds from a 16-bit generation delta time,
/// choosing the candidate closest to the local receive time (within +-32 s).
std::uint64_t unwrap_generation_time(std::uint16_t delta, std::uint64_t receive_time_ms);

}  // namespace v2xlab::codec
