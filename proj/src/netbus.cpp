#include "v2xlab/netbus.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace v2xlab::net {

const char* to_string(StationRole role) {
  switch (role) {
    case StationRole::Shuttle: return "shuttle";
    case StationRole::RsuCrossing: return "rsu_crossing";
    case StationRole::RsuBusStop0: return "rsu_bus_stop_0";
    case StationRole::RsuBusStop1: return "rsu_bus_stop_1";
  }
  return "unknown";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform01(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= 1099511628211ull;
  }
}

bool probability_ok(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void LossModel::validate() const {
  if (!probability_ok(base_loss)) throw std::invalid_argument("base_loss must lie in [0,1]");
  if (latency_mean_ms < 0 || latency_jitter_ms < 0) throw std::invalid_argument("latency must be non-negative");
  for (const auto& z : zones) {
    if (!probability_ok(z.extra_loss)) throw std::invalid_argument("zone '" + z.name + "' extra_loss must lie in [0,1]");
    if (!geom::is_simple_polygon(z.polygon)) throw std::invalid_argument("zone '" + z.name + "' polygon is not simple");
  }
}

bool LossModel::zone_applies(const LossZone& zone, geom::Vec2 sender, geom::Vec2 receiver) const {
  switch (zone.mode) {
    case ZoneMode::SenderIn: return geom::point_in_polygon(sender, zone.polygon);
    case ZoneMode::ReceiverIn: return geom::point_in_polygon(receiver, zone.polygon);
    case ZoneMode::SegmentCrosses: return geom::segment_crosses_polygon(sender, receiver, zone.polygon);
  }
  return false;
}

double LossModel::effective_loss(geom::Vec2 sender, geom::Vec2 receiver) const {
  double keep = 1.0 - base_loss;
  for (const auto& z : zones) {
    if (zone_applies(z, sender, receiver)) keep *= 1.0 - z.extra_loss;
  }
  return 1.0 - keep;
}

Delivery decide_delivery(const LossModel& model, std::uint64_t global_sequence,
                         std::uint32_t receiver, geom::Vec2 sender_pos,
                         geom::Vec2 receiver_pos, SimTime sent_at) {
  Delivery d;
  d.receiver = receiver;
  d.p_effective = model.effective_loss(sender_pos, receiver_pos);
  const std::uint64_t key = splitmix64(model.rng_seed ^ splitmix64(global_sequence * 0x100000001B3ull + receiver));
  const double u_drop = uniform01(splitmix64(key));
  const double u_lat = uniform01(splitmix64(key + 1));
  d.delivered = u_drop >= d.p_effective;
  const double latency_ms =
      std::max(0.0, model.latency_mean_ms + model.latency_jitter_ms * (2.0 * u_lat - 1.0));
  d.deliver_at = sent_at + static_cast<SimTime>(latency_ms * 1e6);
  return d;
}

NetBus::NetBus(LossModel model, bool retain_logs) : model_(std::move(model)), retain_logs_(retain_logs) {
  model_.validate();
}

NetBus::StationState& NetBus::state(std::uint32_t station_id) {
  auto it = stations_.find(station_id);
  if (it == stations_.end()) throw std::out_of_range("unknown station " + std::to_string(station_id));
  return it->second;
}

StationEndpoint& NetBus::add_station(std::uint32_t station_id, StationRole role, geom::Vec2 position) {
  if (stations_.count(station_id)) throw std::invalid_argument("duplicate station id " + std::to_string(station_id));
  auto& s = stations_[station_id];
  s.endpoint.station_id = station_id;
  s.endpoint.role = role;
  s.endpoint.position = position;
  return s.endpoint;
}

void NetBus::set_position(std::uint32_t station_id, geom::Vec2 position) {
  state(station_id).endpoint.position = position;
}

const StationEndpoint& NetBus::station(std::uint32_t station_id) const {
  auto it = stations_.find(station_id);
  if (it == stations_.end()) throw std::out_of_range("unknown station " + std::to_string(station_id));
  return it->second.endpoint;
}

std::vector<std::uint32_t> NetBus::station_ids() const {
  std::vector<std::uint32_t> ids;
  for (const auto& [id, _] : stations_) ids.push_back(id);
  return ids;
}

NetBus::BroadcastResult NetBus::broadcast(std::uint32_t sender, const codec::V2xMessage& message, SimTime now) {
  auto& tx = state(sender);
  if (message.header.station_id != sender) {
    throw codec::InvariantViolation("message station_id does not match sender");
  }
  const std::size_t size = codec::encode(message).size();
  auto shared = std::make_shared<const codec::V2xMessage>(message);

  BroadcastResult result;
  result.sequence = tx.next_sequence++;
  result.size_bytes = size;
  const std::uint64_t global = global_sequence_++;

  fnv_mix(tx.digest, 0x7478);
  fnv_mix(tx.digest, static_cast<std::uint64_t>(now));
  fnv_mix(tx.digest, result.sequence);
  fnv_mix(tx.digest, size);
  if (retain_logs_) tx.endpoint.tx_log.push_back({now, result.sequence, shared, size});

  for (auto& [rid, rx] : stations_) {
    if (rid == sender) continue;
    Delivery d = decide_delivery(model_, global, rid, tx.endpoint.position, rx.endpoint.position, now);
    if (d.delivered) {
      auto& last = last_delivery_[{sender, rid}];
      d.deliver_at = std::max(d.deliver_at, last);
      last = d.deliver_at;
      RxEntry e{d.deliver_at, now, sender, result.sequence, shared, size};
      rx.inbox.push_back({d.deliver_at, global, std::move(e)});
    }
    result.deliveries.push_back(d);
  }
  return result;
}

std::vector<RxEntry> NetBus::poll(std::uint32_t station_id, SimTime now) {
  auto& s = state(station_id);
  auto due_end = std::stable_partition(s.inbox.begin(), s.inbox.end(),
                                       [now](const Pending& p) { return p.deliver_at <= now; });
  std::vector<Pending> due(std::make_move_iterator(s.inbox.begin()), std::make_move_iterator(due_end));
  s.inbox.erase(s.inbox.begin(), due_end);
  std::sort(due.begin(), due.end(), [](const Pending& a, const Pending& b) {
    if (a.deliver_at != b.deliver_at) return a.deliver_at < b.deliver_at;
    return a.global_sequence < b.global_sequence;
  });
  std::vector<RxEntry> out;
  out.reserve(due.size());
  for (auto& p : due) {
    fnv_mix(s.digest, 0x7278);
    fnv_mix(s.digest, static_cast<std::uint64_t>(p.entry.time));
    fnv_mix(s.digest, p.entry.sender);
    fnv_mix(s.digest, p.entry.sequence);
    ++s.rx_total;
    if (retain_logs_) s.endpoint.rx_log.push_back(p.entry);
    out.push_back(std::move(p.entry));
  }
  return out;
}

std::uint64_t NetBus::log_digest(std::uint32_t station_id) const {
  return stations_.at(station_id).digest;
}

std::uint64_t NetBus::tx_count(std::uint32_t station_id) const {
  return stations_.at(station_id).next_sequence;
}

std::uint64_t NetBus::rx_count(std::uint32_t station_id) const {
  return stations_.at(station_id).rx_total;
}

UdpRelay::UdpRelay(LossModel model, std::uint16_t listen_port) : model_(std::move(model)) {
  model_.validate();
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw std::runtime_error("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(listen_port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    throw std::runtime_error("bind() failed for relay port " + std::to_string(listen_port));
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

UdpRelay::~UdpRelay() {
  if (fd_ >= 0) ::close(fd_);
}

void UdpRelay::register_station(std::uint32_t station_id, geom::Vec2 position, std::uint16_t udp_port) {
  peers_[station_id] = Peer{position, udp_port};
}

bool UdpRelay::relay_once(int timeout_ms) {
  pollfd pfd{fd_, POLLIN, 0};
  if (::poll(&pfd, 1, timeout_ms) <= 0) return false;
  std::vector<std::uint8_t> buf(65536);
  const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
  if (n < 0) return false;
  buf.resize(static_cast<std::size_t>(n));
  ++stats_.received;

  codec::V2xMessage msg;
  try {
    msg = codec::decode(buf);
  } catch (const codec::DecodeError&) {
    ++stats_.malformed;
    return true;
  }
  auto sender = peers_.find(msg.header.station_id);
  if (sender == peers_.end()) {
    ++stats_.unknown_sender;
    return true;
  }
  const std::uint64_t global = global_sequence_++;
  for (const auto& [rid, peer] : peers_) {
    if (rid == sender->first) continue;
    const Delivery d = decide_delivery(model_, global, rid, sender->second.position, peer.position, 0);
    if (!d.delivered) {
      ++stats_.dropped;
      continue;
    }
    sockaddr_in to{};
    to.sin_family = AF_INET;
    to.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    to.sin_port = htons(peer.udp_port);
    ::sendto(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&to), sizeof to);
    ++stats_.forwarded;
  }
  return true;
}

}  // namespace v2xlab::net
