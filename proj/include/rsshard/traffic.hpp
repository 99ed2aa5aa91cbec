#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rsshard/bits.hpp"
#include "rsshard/packet.hpp"

namespace rsshard {

/// Rank exponent calibrated so the 48 most popular of 1000 flows carry 80%
/// of the packets.
constexpr double kDefaultZipfExponent = 1.2612;

struct TrafficSpec {
  enum class Dist : uint8_t { Uniform, Zipf } dist = Dist::Uniform;
  enum class Arrival : uint8_t { Iface0, Iface1, ByFlowParity } arrival = Arrival::Iface0;

  uint64_t packets = 50000;
  uint64_t flows = 1000;
  double zipf_exponent = kDefaultZipfExponent;
  uint64_t churn_per_1000 = 0; // flow replacements per 1000 packets
  uint32_t packet_size = 64;
  double symmetric_ratio = 0.0; // probability an original packet is answered
  double noise_ratio = 0.0;     // unsolicited low-port packets at the reply iface
  uint32_t reply_interface = 1;
  uint32_t src_hosts = 0; // 0 = unconstrained address pool
  uint32_t dst_hosts = 0;

  void validate() const {
    if (flows == 0)
      throw std::invalid_argument("traffic spec needs at least one flow");
    if (packets == 0)
      throw std::invalid_argument("traffic spec needs at least one packet");
  }
};

namespace detail {

struct FlowTuple {
  uint32_t src, dst;
  uint16_t sport, dport;
  uint8_t proto;
};

inline FlowTuple make_flow_tuple(uint64_t index, const TrafficSpec &spec) {
  uint64_t h = splitmix64(0xf10a5 + index);
  FlowTuple f;
  f.src = spec.src_hosts ? 0x0a000000u + static_cast<uint32_t>(index % spec.src_hosts)
                         : 0x0a000000u | (static_cast<uint32_t>(h) & 0xffffffu);
  f.dst = spec.dst_hosts
              ? 0xac100000u + static_cast<uint32_t>((index / std::max<uint32_t>(1, spec.src_hosts)) % spec.dst_hosts)
              : 0xac100000u | (static_cast<uint32_t>(h >> 24) & 0xfffffu);
  // ports embed the flow index so tuples are pairwise distinct
  f.sport = static_cast<uint16_t>(1024 + index % 61440);
  f.dport = static_cast<uint16_t>(1024 + (index / 61440 + (h >> 48)) % 61440);
  f.proto = (h >> 40) & 1 ? kProtoTcp : kProtoUdp;
  return f;
}

inline uint64_t mac_of_ip(uint32_t ip) { return 0x020000000000ull | ip; }

} // namespace detail

/// Deterministic trace synthesis. Uniform or Zipf flow popularity; optional
/// flow churn with replacements spread evenly through the trace; optional
/// symmetric replies and unsolicited noise from the peer interface.
///
/// Churn traces are cyclic when replacements >= flows: flow slots live on a
/// ring, so the flows retired at the start of the trace are exactly the ones
/// created near the end and looped replay reaches equilibrium. With fewer
/// replacements than flows a full ring rotation is impossible and fresh
/// tuples are used instead (the arrival pattern is still loop-invariant).
inline Trace gen_traffic(const TrafficSpec &spec, uint64_t seed) {
  spec.validate();
  Rng rng(splitmix64(seed ^ 0x7a4ff1cull));
  Trace trace;
  trace.packets.reserve(spec.packets);

  uint64_t replacements =
      spec.churn_per_1000 * spec.packets / 1000; // total window advances
  // a ring needs more slots than the window covers, or retired tuples would
  // be re-created with no absence gap
  bool ring = replacements > spec.flows;
  uint64_t ring_size = ring ? replacements : 0;

  // popularity weights by rank
  std::vector<double> cumulative;
  if (spec.dist == TrafficSpec::Dist::Zipf) {
    cumulative.resize(spec.flows);
    double acc = 0;
    for (uint64_t r = 0; r < spec.flows; ++r) {
      acc += std::pow(static_cast<double>(r + 1), -spec.zipf_exponent);
      cumulative[r] = acc;
    }
  }

  auto sample_rank = [&]() -> uint64_t {
    if (spec.dist == TrafficSpec::Dist::Uniform)
      return rng.below(spec.flows);
    double total = cumulative.back();
    double x = static_cast<double>(rng.next() >> 11) /
               static_cast<double>(1ull << 53) * total;
    auto it = std::lower_bound(cumulative.begin(), cumulative.end(), x);
    return static_cast<uint64_t>(it - cumulative.begin());
  };

  uint64_t window_start = 0;
  uint64_t next_id = 0;

  auto emit = [&](const detail::FlowTuple &f, uint32_t iface, bool reversed) {
    Packet p;
    p.id = next_id;
    p.time = static_cast<int64_t>(next_id);
    ++next_id;
    p.in_interface = iface;
    uint32_t s = reversed ? f.dst : f.src;
    uint32_t d = reversed ? f.src : f.dst;
    p.ipv4_src = s;
    p.ipv4_dst = d;
    p.eth_src = detail::mac_of_ip(s);
    p.eth_dst = detail::mac_of_ip(d);
    p.sport = reversed ? f.dport : f.sport;
    p.dport = reversed ? f.sport : f.dport;
    p.proto = f.proto;
    p.size_bytes = spec.packet_size;
    trace.packets.push_back(p);
  };

  while (trace.packets.size() < spec.packets) {
    uint64_t pos = trace.packets.size();
    if (replacements) {
      // advance the window so that replacements are evenly spread
      uint64_t due = (pos + 1) * replacements / spec.packets;
      window_start = std::min(due, replacements);
    }

    if (spec.noise_ratio > 0 && rng.chance(static_cast<uint64_t>(spec.noise_ratio * 1000), 1000)) {
      detail::FlowTuple n;
      uint64_t h = rng.next();
      n.src = 0xc0a80000u | (static_cast<uint32_t>(h) & 0xffff);
      n.dst = 0x0a000001u;
      n.sport = static_cast<uint16_t>(1024 + (h >> 16) % 61440);
      n.dport = static_cast<uint16_t>(1 + (h >> 40) % 1023); // below any pool
      n.proto = kProtoUdp;
      emit(n, spec.reply_interface, false);
      continue;
    }

    uint64_t slot = window_start + sample_rank();
    uint64_t tuple_index = ring ? slot % ring_size : slot;
    detail::FlowTuple f = detail::make_flow_tuple(tuple_index, spec);

    uint32_t iface = 0;
    switch (spec.arrival) {
    case TrafficSpec::Arrival::Iface0: iface = 0; break;
    case TrafficSpec::Arrival::Iface1: iface = 1; break;
    case TrafficSpec::Arrival::ByFlowParity:
      iface = static_cast<uint32_t>(tuple_index % 2);
      break;
    }
    emit(f, iface, false);

    if (spec.symmetric_ratio > 0 && trace.packets.size() < spec.packets &&
        rng.chance(static_cast<uint64_t>(spec.symmetric_ratio * 1000), 1000)) {
      uint32_t reply_iface = iface == 0 ? spec.reply_interface : 0;
      emit(f, reply_iface, true);
    }
  }

  trace.validate();
  return trace;
}

} // namespace rsshard
