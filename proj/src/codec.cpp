#include "v2xlab/codec.hpp"

#include <cstdlib>
#include <set>

namespace v2xlab::codec {

std::uint16_t port_for(MessageId id) {
  switch (id) {
    case MessageId::Cam: return kPortCam;
    case MessageId::Denm: return kPortDenm;
    case MessageId::Mapem: return kPortMapem;
    case MessageId::Spatem: return kPortSpatem;
    case MessageId::Cpm: return kPortCpm;
  }
  throw InvariantViolation("unknown message id");
}

MessageId message_id_of(const Payload& payload) {
  struct Visitor {
    MessageId operator()(const CamPayload&) const { return MessageId::Cam; }
    MessageId operator()(const CpmPayload&) const { return MessageId::Cpm; }
    MessageId operator()(const SpatemPayload&) const { return MessageId::Spatem; }
    MessageId operator()(const MapemPayload&) const { return MessageId::Mapem; }
  };
  return std::visit(Visitor{}, payload);
}

V2xMessage make_message(std::uint32_t station_id, Payload payload) {
  V2xMessage m;
  m.header.protocol_version = kProtocolVersion;
  m.header.message_id = message_id_of(payload);
  m.header.station_id = station_id;
  m.payload = std::move(payload);
  return m;
}

const char* to_string(DecodeErrorKind kind) {
  switch (kind) {
    case DecodeErrorKind::Truncated: return "Truncated";
    case DecodeErrorKind::BadPort: return "BadPort";
    case DecodeErrorKind::PortMessageMismatch: return "PortMessageMismatch";
    case DecodeErrorKind::BadVersion: return "BadVersion";
    case DecodeErrorKind::TrailingBytes: return "TrailingBytes";
    case DecodeErrorKind::InvalidField: return "InvalidField";
  }
  return "Unknown";
}

namespace {

// Returns an empty string when the payload is valid, otherwise a reason.
std::string check(const CamPayload& c) {
  if (c.heading > kHeadingUnavailable) return "CAM heading out of range";
  if (c.speed > kSpeedUnavailable) return "CAM speed out of range";
  if (c.mission_progress > 1000) return "CAM mission_progress out of range";
  if (std::abs(static_cast<std::int64_t>(c.latitude)) > 900'000'000) return "CAM latitude out of range";
  if (std::abs(static_cast<std::int64_t>(c.longitude)) > 1'800'000'000) return "CAM longitude out of range";
  if (c.door_status > (door::kFrontOpen | door::kRearOpen)) return "CAM door_status has unknown bits";
  if (static_cast<std::uint8_t>(c.indicator_status) > 3) return "CAM indicator out of range";
  return {};
}

std::string check(const CpmPayload& c) {
  if (std::abs(static_cast<std::int64_t>(c.latitude)) > 900'000'000) return "CPM latitude out of range";
  if (std::abs(static_cast<std::int64_t>(c.longitude)) > 1'800'000'000) return "CPM longitude out of range";
  if (c.objects.size() > kMaxCpmObjects) return "CPM carries more than 128 objects";
  for (const auto& o : c.objects) {
    if (o.confidence > 100) return "CPM object confidence above 100";
    if (static_cast<std::uint8_t>(o.classification) > 2) return "CPM object classification unknown";
  }
  return {};
}

std::string check(const SpatemPayload& s) {
  if (s.movements.size() > 255) return "SPATEM has too many movements";
  std::set<std::uint8_t> groups;
  for (const auto& m : s.movements) {
    if (!groups.insert(m.signal_group_id).second) return "SPATEM signal group ids not distinct";
    const auto st = static_cast<std::uint8_t>(m.event_state);
    if (st != 3 && st != 6 && st != 8) return "SPATEM event_state not in {3,6,8}";
    if (m.time_to_change > kTimeToChangeUnknown) return "SPATEM time_to_change out of range";
  }
  return {};
}

std::string check(const MapemPayload& m) {
  if (std::abs(static_cast<std::int64_t>(m.latitude)) > 900'000'000) return "MAPEM latitude out of range";
  if (std::abs(static_cast<std::int64_t>(m.longitude)) > 1'800'000'000) return "MAPEM longitude out of range";
  if (m.lanes.size() > 255) return "MAPEM has too many lanes";
  std::set<std::uint8_t> ids;
  for (const auto& lane : m.lanes) {
    if (!ids.insert(lane.lane_id).second) return "MAPEM lane ids not unique";
    const auto t = static_cast<std::uint8_t>(lane.lane_type);
    if (t != 0 && t != 3) return "MAPEM lane_type not in {0,3}";
    if (lane.nodes.size() < 2) return "MAPEM lane has fewer than 2 nodes";
    if (lane.nodes.size() > 255) return "MAPEM lane has too many nodes";
  }
  return {};
}

std::string check_message(const V2xMessage& m) {
  if (m.header.protocol_version != kProtocolVersion) return "protocol_version must be 2";
  if (m.header.message_id != message_id_of(m.payload)) return "message_id does not match payload";
  return std::visit([](const auto& p) { return check(p); }, m.payload);
}

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
    out_.push_back(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v >> 32));
    u32(static_cast<std::uint32_t>(v));
  }
  void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>((in_[pos_] << 8) | in_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    const std::uint32_t hi = u16();
    return (hi << 16) | u16();
  }
  std::uint64_t u64() {
    const std::uint64_t hi = u32();
    return (hi << 32) | u32();
  }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DecodeError(DecodeErrorKind::Truncated, "input truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_body(Writer& w, const CamPayload& c) {
  w.u16(c.generation_delta_time);
  w.i32(c.latitude);
  w.i32(c.longitude);
  w.u16(c.heading);
  w.u16(c.speed);
  w.u8(c.door_status);
  w.u8(static_cast<std::uint8_t>(c.indicator_status));
  w.u16(c.mission_id);
  w.u16(c.mission_progress);
}

void write_body(Writer& w, const CpmPayload& c) {
  w.u64(c.reference_time);
  w.i32(c.latitude);
  w.i32(c.longitude);
  w.u8(static_cast<std::uint8_t>(c.objects.size()));
  for (const auto& o : c.objects) {
    w.u16(o.object_id);
    w.i16(o.dx);
    w.i16(o.dy);
    w.i16(o.vx);
    w.i16(o.vy);
    w.u16(o.footprint_radius);
    w.u8(static_cast<std::uint8_t>(o.classification));
    w.u8(o.confidence);
  }
}

void write_body(Writer& w, const SpatemPayload& s) {
  w.u16(s.intersection_id);
  w.u8(s.revision);
  w.u8(static_cast<std::uint8_t>(s.movements.size()));
  for (const auto& m : s.movements) {
    w.u8(m.signal_group_id);
    w.u8(static_cast<std::uint8_t>(m.event_state));
    w.u16(m.time_to_change);
  }
}

void write_body(Writer& w, const MapemPayload& m) {
  w.u16(m.intersection_id);
  w.i32(m.latitude);
  w.i32(m.longitude);
  w.u8(static_cast<std::uint8_t>(m.lanes.size()));
  for (const auto& lane : m.lanes) {
    w.u8(lane.lane_id);
    w.u8(static_cast<std::uint8_t>(lane.lane_type));
    w.u8(lane.signal_group_id);
    w.u8(static_cast<std::uint8_t>(lane.nodes.size()));
    for (const auto& n : lane.nodes) {
      w.i16(n.x_cm);
      w.i16(n.y_cm);
    }
  }
}

CamPayload read_cam(Reader& r) {
  CamPayload c;
  c.generation_delta_time = r.u16();
  c.latitude = r.i32();
  c.longitude = r.i32();
  c.heading = r.u16();
  c.speed = r.u16();
  c.door_status = r.u8();
  c.indicator_status = static_cast<Indicator>(r.u8());
  c.mission_id = r.u16();
  c.mission_progress = r.u16();
  return c;
}

CpmPayload read_cpm(Reader& r) {
  CpmPayload c;
  c.reference_time = r.u64();
  c.latitude = r.i32();
  c.longitude = r.i32();
  const std::size_t count = r.u8();
  if (r.remaining() < count * kCpmObjectSize) throw DecodeError(DecodeErrorKind::Truncated, "CPM object list truncated");
  c.objects.resize(count);
  for (auto& o : c.objects) {
    o.object_id = r.u16();
    o.dx = r.i16();
    o.dy = r.i16();
    o.vx = r.i16();
    o.vy = r.i16();
    o.footprint_radius = r.u16();
    o.classification = static_cast<ObjectClass>(r.u8());
    o.confidence = r.u8();
  }
  return c;
}

SpatemPayload read_spatem(Reader& r) {
  SpatemPayload s;
  s.intersection_id = r.u16();
  s.revision = r.u8();
  const std::size_t count = r.u8();
  if (r.remaining() < count * 4) throw DecodeError(DecodeErrorKind::Truncated, "SPATEM movement list truncated");
  s.movements.resize(count);
  for (auto& m : s.movements) {
    m.signal_group_id = r.u8();
    m.event_state = static_cast<EventState>(r.u8());
    m.time_to_change = r.u16();
  }
  return s;
}

MapemPayload read_mapem(Reader& r) {
  MapemPayload m;
  m.intersection_id = r.u16();
  m.latitude = r.i32();
  m.longitude = r.i32();
  const std::size_t lanes = r.u8();
  m.lanes.resize(lanes);
  for (auto& lane : m.lanes) {
    lane.lane_id = r.u8();
    lane.lane_type = static_cast<LaneType>(r.u8());
    lane.signal_group_id = r.u8();
    const std::size_t nodes = r.u8();
    if (r.remaining() < nodes * 4) throw DecodeError(DecodeErrorKind::Truncated, "MAPEM node list truncated");
    lane.nodes.resize(nodes);
    for (auto& n : lane.nodes) {
      n.x_cm = r.i16();
      n.y_cm = r.i16();
    }
  }
  return m;
}

}  // namespace

void validate(const V2xMessage& message) {
  if (auto reason = check_message(message); !reason.empty()) throw InvariantViolation(reason);
}

std::size_t encoded_size(const V2xMessage& message) {
  struct Visitor {
    std::size_t operator()(const CamPayload&) const { return kCamBodySize; }
    std::size_t operator()(const CpmPayload& c) const {
      return kCpmPrefixSize + kCpmObjectSize * c.objects.size();
    }
    std::size_t operator()(const SpatemPayload& s) const { return 4 + 4 * s.movements.size(); }
    std::size_t operator()(const MapemPayload& m) const {
      std::size_t n = 11;
      for (const auto& lane : m.lanes) n += 4 + 4 * lane.nodes.size();
      return n;
    }
  };
  return kBtpHeaderSize + kItsHeaderSize + std::visit(Visitor{}, message.payload);
}

std::vector<std::uint8_t> encode(const V2xMessage& message) {
  validate(message);
  Writer w(encoded_size(message));
  w.u16(port_for(message.header.message_id));
  w.u16(0);
  w.u8(message.header.protocol_version);
  w.u8(static_cast<std::uint8_t>(message.header.message_id));
  w.u32(message.header.station_id);
  std::visit([&w](const auto& p) { write_body(w, p); }, message.payload);
  return w.take();
}

V2xMessage decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint16_t port = r.u16();
  MessageId expected;
  switch (port) {
    case kPortCam: expected = MessageId::Cam; break;
    case kPortMapem: expected = MessageId::Mapem; break;
    case kPortSpatem: expected = MessageId::Spatem; break;
    case kPortCpm: expected = MessageId::Cpm; break;
    case kPortDenm:
      throw DecodeError(DecodeErrorKind::BadPort, "DENM port is reserved; payload not supported");
    default:
      throw DecodeError(DecodeErrorKind::BadPort, "unknown BTP destination port " + std::to_string(port));
  }
  if (r.u16() != 0) throw DecodeError(DecodeErrorKind::InvalidField, "BTP destination_port_info must be 0");

  V2xMessage m;
  m.header.protocol_version = r.u8();
  const std::uint8_t raw_id = r.u8();
  m.header.station_id = r.u32();
  if (m.header.protocol_version != kProtocolVersion) {
    throw DecodeError(DecodeErrorKind::BadVersion, "protocol_version must be 2");
  }
  if (raw_id != static_cast<std::uint8_t>(expected)) {
    throw DecodeError(DecodeErrorKind::PortMessageMismatch, "message_id does not match BTP port");
  }
  m.header.message_id = expected;

  switch (expected) {
    case MessageId::Cam: m.payload = read_cam(r); break;
    case MessageId::Cpm: m.payload = read_cpm(r); break;
    case MessageId::Spatem: m.payload = read_spatem(r); break;
    case MessageId::Mapem: m.payload = read_mapem(r); break;
    case MessageId::Denm: break;
  }
  if (r.remaining() != 0) throw DecodeError(DecodeErrorKind::TrailingBytes, "bytes after message body");
  if (auto reason = check_message(m); !reason.empty()) {
    throw DecodeError(DecodeErrorKind::InvalidField, reason);
  }
  return m;
}

std::uint64_t unwrap_generation_time(std::uint16_t delta, std::uint64_t receive_time_ms) {
  constexpr std::int64_t kWrap = 65536;
  const auto rx = static_cast<std::int64_t>(receive_time_ms);
  const std::int64_t base = rx - (rx % kWrap);
  std::int64_t best = base + delta;
  for (std::int64_t cand : {base - kWrap + delta, base + kWrap + delta}) {
    if (cand >= 0 && std::llabs(cand - rx) < std::llabs(best - rx)) best = cand;
  }
  return static_cast<std::uint64_t>(best);
}

}  // namespace v2xlab::codec
