#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "v2xlab/codec.hpp"
#include "v2xlab/geometry.hpp"
#include "v2xlab/time.hpp"

namespace v2xlab::net {

enum class StationRole { Shuttle, RsuCrossing, RsuBusStop0, RsuBusStop1 };

const char* to_string(StationRole role);

using MessagePtr = std::shared_ptr<const codec::V2xMessage>;

struct TxEntry {
  SimTime time = 0;
  std::uint64_t sequence = 0;  // per-sender, starting at 0
  MessagePtr message;
  std::size_t size_bytes = 0;
};

struct RxEntry {
  SimTime time = 0;  // delivery time
  SimTime sent_at = 0;
  std::uint32_t sender = 0;
  std::uint64_t sequence = 0;
  MessagePtr message;
  std::size_t size_bytes = 0;
};

struct StationEndpoint {
  std::uint32_t station_id = 0;
  geom::Vec2 position;
  StationRole role = StationRole::Shuttle;
  std::vector<TxEntry> tx_log;
  std::vector<RxEntry> rx_log;
};

enum class ZoneMode { SenderIn, ReceiverIn, SegmentCrosses };

struct LossZone {
  std::string name;
  geom::Polygon polygon;
  double extra_loss = 0.0;
  ZoneMode mode = ZoneMode::SegmentCrosses;
};

struct LossModel {
  double base_loss = 0.0;
  std::vector<LossZone> zones;
  double latency_mean_ms = 5.0;
  double latency_jitter_ms = 2.0;
  std::uint64_t rng_seed = 1;

  /// Throws std::invalid_argument on out-of-range probabilities or non-simple polygons.
  void validate() const;

  bool zone_applies(const LossZone& zone, geom::Vec2 sender, geom::Vec2 receiver) const;

  /// 1 - (1 - base) * prod(1 - extra) over matching zones.
  double effective_loss(geom::Vec2 sender, geom::Vec2 receiver) const;
};

struct Delivery {
  std::uint32_t receiver = 0;
  bool delivered = false;
  SimTime deliver_at = 0;
  double p_effective = 0.0;
};

/// Deterministic drop/latency decision for one (transmission, receiver) pair.
/// `global_sequence` is the bus-wide transmission counter.
Delivery decide_delivery(const LossModel& model, std::uint64_t global_sequence,
                         std::uint32_t receiver, geom::Vec2 sender_pos,
                         geom::Vec2 receiver_pos, SimTime sent_at);

/// Single-writer broadcast medium. Messages become visible to a receiver
/// through poll() once the simulation clock reaches their delivery time.
class NetBus {
 public:
  explicit NetBus(LossModel model, bool retain_logs = true);

  StationEndpoint& add_station(std::uint32_t station_id, StationRole role, geom::Vec2 position);
  void set_position(std::uint32_t station_id, geom::Vec2 position);

  const StationEndpoint& station(std::uint32_t station_id) const;
  std::vector<std::uint32_t> station_ids() const;
  const LossModel& loss_model() const { return model_; }

  struct BroadcastResult {
    std::uint64_t sequence = 0;
    std::size_t size_bytes = 0;
    std::vector<Delivery> deliveries;
  };

  /// Encodes (validating) and schedules delivery to every other station.
  BroadcastResult broadcast(std::uint32_t sender, const codec::V2xMessage& message, SimTime now);

  /// Returns messages for `station_id` with delivery time <= now, in delivery order.
  std::vector<RxEntry> poll(std::uint32_t station_id, SimTime now);

  /// FNV-1a digest over the station's tx and rx history (kept even when logs are not retained).
  std::uint64_t log_digest(std::uint32_t station_id) const;

  std::uint64_t tx_count(std::uint32_t station_id) const;
  std::uint64_t rx_count(std::uint32_t station_id) const;

 private:
  struct Pending {
    SimTime deliver_at;
    std::uint64_t global_sequence;
    RxEntry entry;
  };
  struct StationState {
    StationEndpoint endpoint;
    std::uint64_t next_sequence = 0;
    std::uint64_t rx_total = 0;
    std::uint64_t digest = 1469598103934665603ull;
    std::vector<Pending> inbox;
  };

  StationState& state(std::uint32_t station_id);

  LossModel model_;
  bool retain_logs_;
  std::uint64_t global_sequence_ = 0;
  std::map<std::uint32_t, StationState> stations_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, SimTime> last_delivery_;
};

/// Live mode: relays UDP datagrams carrying the codec wire format between
/// registered station sockets on the loopback interface, applying the loss model
/// before forwarding. Latency is not emulated in live mode.
class UdpRelay {
 public:
  UdpRelay(LossModel model, std::uint16_t listen_port);
  ~UdpRelay();
  UdpRelay(const UdpRelay&) = delete;
  UdpRelay& operator=(const UdpRelay&) = delete;

  std::uint16_t port() const { return port_; }

  void register_station(std::uint32_t station_id, geom::Vec2 position, std::uint16_t udp_port);

  struct Stats {
    std::uint64_t received = 0;
    std::uint64_t malformed = 0;
    std::uint64_t unknown_sender = 0;
    std::uint64_t forwarded = 0;
    std::uint64_t dropped = 0;
  };

  /// Waits up to timeout_ms for one datagram and relays it. Returns false on timeout.
  bool relay_once(int timeout_ms);
  const Stats& stats() const { return stats_; }

 private:
  struct Peer {
    geom::Vec2 position;
    std::uint16_t udp_port;
  };
  LossModel model_;
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::uint64_t global_sequence_ = 0;
  std::map<std::uint32_t, Peer> peers_;
  Stats stats_;
};

}  // namespace v2xlab::net
