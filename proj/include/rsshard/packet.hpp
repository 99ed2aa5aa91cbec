#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsshard/bits.hpp"

namespace rsshard {

/// Packet header fields the toolkit knows about, in canonical order:
/// addresses before ports, sources before destinations.
enum class Field : uint8_t {
  EthSrc = 0,
  EthDst,
  Ipv4Src,
  Ipv4Dst,
  Proto,
  Sport,
  Dport,
};

constexpr size_t kFieldCount = 7;

inline size_t field_width_bits(Field f) {
  switch (f) {
  case Field::EthSrc:
  case Field::EthDst:
    return 48;
  case Field::Ipv4Src:
  case Field::Ipv4Dst:
    return 32;
  case Field::Proto:
    return 8;
  case Field::Sport:
  case Field::Dport:
    return 16;
  }
  return 0;
}

inline const char *field_name(Field f) {
  switch (f) {
  case Field::EthSrc:
    return "eth_src";
  case Field::EthDst:
    return "eth_dst";
  case Field::Ipv4Src:
    return "ipv4_src";
  case Field::Ipv4Dst:
    return "ipv4_dst";
  case Field::Proto:
    return "proto";
  case Field::Sport:
    return "sport";
  case Field::Dport:
    return "dport";
  }
  return "?";
}

inline std::optional<Field> field_from_name(const std::string &s) {
  for (size_t i = 0; i < kFieldCount; ++i) {
    Field f = static_cast<Field>(i);
    if (s == field_name(f))
      return f;
  }
  return std::nullopt;
}

constexpr uint8_t kProtoTcp = 6;
constexpr uint8_t kProtoUdp = 17;

struct Packet {
  uint64_t id = 0;
  int64_t time = 0;       // logical ticks, non-decreasing by id within a trace
  uint32_t in_interface = 0;
  uint64_t eth_src = 0;   // low 48 bits
  uint64_t eth_dst = 0;
  uint32_t ipv4_src = 0;
  uint32_t ipv4_dst = 0;
  uint8_t proto = kProtoUdp;
  uint16_t sport = 0;
  uint16_t dport = 0;
  uint32_t size_bytes = 64;

  bool has_l4() const { return proto == kProtoTcp || proto == kProtoUdp; }

  bool has_field(Field f) const {
    if (f == Field::Sport || f == Field::Dport)
      return has_l4();
    return true;
  }

  uint64_t field(Field f) const {
    switch (f) {
    case Field::EthSrc:
      return eth_src;
    case Field::EthDst:
      return eth_dst;
    case Field::Ipv4Src:
      return ipv4_src;
    case Field::Ipv4Dst:
      return ipv4_dst;
    case Field::Proto:
      return proto;
    case Field::Sport:
      return sport;
    case Field::Dport:
      return dport;
    }
    return 0;
  }

  void set_field(Field f, uint64_t v) {
    switch (f) {
    case Field::EthSrc:
      eth_src = v & 0xffffffffffffull;
      break;
    case Field::EthDst:
      eth_dst = v & 0xffffffffffffull;
      break;
    case Field::Ipv4Src:
      ipv4_src = static_cast<uint32_t>(v);
      break;
    case Field::Ipv4Dst:
      ipv4_dst = static_cast<uint32_t>(v);
      break;
    case Field::Proto:
      proto = static_cast<uint8_t>(v);
      break;
    case Field::Sport:
      sport = static_cast<uint16_t>(v);
      break;
    case Field::Dport:
      dport = static_cast<uint16_t>(v);
      break;
    }
  }
};

struct Trace {
  std::vector<Packet> packets;

  void validate() const {
    int64_t last = 0;
    uint64_t expect_distinct = 0;
    (void)expect_distinct;
    for (size_t i = 0; i < packets.size(); ++i) {
      if (i > 0) {
        if (packets[i].id <= packets[i - 1].id)
          throw std::runtime_error("trace packet ids must be strictly increasing");
        if (packets[i].time < last)
          throw std::runtime_error("trace times must be non-decreasing");
      }
      last = packets[i].time;
    }
  }
};

namespace detail {

inline void put_le(std::string &out, uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint64_t get_le(const char *p, int bytes) {
  uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i)
    v = (v << 8) | static_cast<uint8_t>(p[i]);
  return v;
}

} // namespace detail

constexpr char kTraceBinaryMagic[] = "RSTB1\n";
constexpr size_t kTraceRecordBytes = 8 + 8 + 1 + 8 + 8 + 4 + 4 + 1 + 2 + 2 + 4;

inline std::string trace_to_binary(const Trace &t) {
  std::string out(kTraceBinaryMagic, 6);
  detail::put_le(out, t.packets.size(), 8);
  for (const Packet &p : t.packets) {
    detail::put_le(out, p.id, 8);
    detail::put_le(out, static_cast<uint64_t>(p.time), 8);
    detail::put_le(out, p.in_interface, 1);
    detail::put_le(out, p.eth_src, 8);
    detail::put_le(out, p.eth_dst, 8);
    detail::put_le(out, p.ipv4_src, 4);
    detail::put_le(out, p.ipv4_dst, 4);
    detail::put_le(out, p.proto, 1);
    detail::put_le(out, p.sport, 2);
    detail::put_le(out, p.dport, 2);
    detail::put_le(out, p.size_bytes, 4);
  }
  return out;
}

/// Text form: a header line, a column comment, then one row per packet.
/// Columns: id time iface eth_src eth_dst ipv4_src ipv4_dst proto sport dport size
inline std::string trace_to_text(const Trace &t) {
  std::ostringstream os;
  os << "trace v1 tick=1\n";
  os << "# id time iface eth_src eth_dst ipv4_src ipv4_dst proto sport dport size\n";
  for (const Packet &p : t.packets) {
    os << p.id << ' ' << p.time << ' ' << p.in_interface << ' ' << std::hex
       << p.eth_src << ' ' << p.eth_dst << ' ' << p.ipv4_src << ' '
       << p.ipv4_dst << std::dec << ' ' << unsigned(p.proto) << ' ' << p.sport
       << ' ' << p.dport << ' ' << p.size_bytes << '\n';
  }
  return os.str();
}

inline Trace trace_from_binary(const std::string &data) {
  if (data.size() < 14 || data.compare(0, 6, kTraceBinaryMagic, 6) != 0)
    throw std::runtime_error("not a binary trace (bad magic)");
  uint64_t n = detail::get_le(data.data() + 6, 8);
  if (data.size() != 14 + n * kTraceRecordBytes)
    throw std::runtime_error("binary trace is truncated");
  Trace t;
  t.packets.reserve(n);
  const char *p = data.data() + 14;
  for (uint64_t i = 0; i < n; ++i) {
    Packet pk;
    pk.id = detail::get_le(p, 8); p += 8;
    pk.time = static_cast<int64_t>(detail::get_le(p, 8)); p += 8;
    pk.in_interface = static_cast<uint32_t>(detail::get_le(p, 1)); p += 1;
    pk.eth_src = detail::get_le(p, 8); p += 8;
    pk.eth_dst = detail::get_le(p, 8); p += 8;
    pk.ipv4_src = static_cast<uint32_t>(detail::get_le(p, 4)); p += 4;
    pk.ipv4_dst = static_cast<uint32_t>(detail::get_le(p, 4)); p += 4;
    pk.proto = static_cast<uint8_t>(detail::get_le(p, 1)); p += 1;
    pk.sport = static_cast<uint16_t>(detail::get_le(p, 2)); p += 2;
    pk.dport = static_cast<uint16_t>(detail::get_le(p, 2)); p += 2;
    pk.size_bytes = static_cast<uint32_t>(detail::get_le(p, 4)); p += 4;
    t.packets.push_back(pk);
  }
  t.validate();
  return t;
}

inline Trace trace_from_text(const std::string &data) {
  std::istringstream is(data);
  std::string line;
  if (!std::getline(is, line) || line.rfind("trace v1", 0) != 0)
    throw std::runtime_error("not a text trace (missing header)");
  Trace t;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ls(line);
    Packet p;
    unsigned proto;
    ls >> p.id >> p.time >> p.in_interface >> std::hex >> p.eth_src >>
        p.eth_dst >> p.ipv4_src >> p.ipv4_dst >> std::dec >> proto >>
        p.sport >> p.dport >> p.size_bytes;
    if (ls.fail())
      throw std::runtime_error("malformed trace row: " + line);
    p.proto = static_cast<uint8_t>(proto);
    t.packets.push_back(p);
  }
  t.validate();
  return t;
}

inline Trace load_trace(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open trace file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string data = ss.str();
  if (data.rfind(kTraceBinaryMagic, 0) == 0)
    return trace_from_binary(data);
  return trace_from_text(data);
}

inline void save_trace(const Trace &t, const std::string &path, bool text = false) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot write trace file: " + path);
  std::string data = text ? trace_to_text(t) : trace_to_binary(t);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

} // namespace rsshard
