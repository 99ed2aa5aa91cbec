#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsshard/bits.hpp"
#include "rsshard/packet.hpp"

namespace rsshard {

constexpr size_t kDefaultKeyBits = 416; // 52 bytes
constexpr size_t kDefaultTableSize = 512;
constexpr size_t kHashBits = 32;

/// Hash key, most significant bit first. Steering keys must be nonzero;
/// the raw hash routine accepts any key so degenerate cases stay testable.
struct RssKey {
  BitString bits;

  static RssKey zeros(size_t key_bits = kDefaultKeyBits) {
    return RssKey{BitString::zeros(key_bits)};
  }

  static RssKey random(Rng &rng, size_t key_bits = kDefaultKeyBits) {
    RssKey k = zeros(key_bits);
    for (size_t i = 0; i < key_bits; ++i)
      k.bits.set_bit(i, rng.chance(1, 2));
    if (k.bits.is_zero())
      k.bits.set_bit(0, true);
    return k;
  }

  size_t size() const { return bits.size(); }
  std::string to_hex() const { return bits.to_hex(); }
};

/// Ordered selection of packet fields hashed by the NIC. Order is canonical
/// (Field enum order) and enforced at construction.
struct FieldSet {
  std::string id;
  std::vector<Field> fields;

  FieldSet() = default;
  FieldSet(std::string id_, std::vector<Field> fields_)
      : id(std::move(id_)), fields(std::move(fields_)) {
    std::sort(fields.begin(), fields.end(),
              [](Field a, Field b) { return static_cast<int>(a) < static_cast<int>(b); });
    for (size_t i = 1; i < fields.size(); ++i)
      if (fields[i] == fields[i - 1])
        throw std::invalid_argument("fieldset has duplicate fields");
  }

  size_t total_bits() const {
    size_t n = 0;
    for (Field f : fields)
      n += field_width_bits(f);
    return n;
  }

  bool contains(Field f) const {
    return std::find(fields.begin(), fields.end(), f) != fields.end();
  }

  /// Bit offset of a field within the concatenated hash input.
  size_t field_offset_bits(Field f) const {
    size_t off = 0;
    for (Field g : fields) {
      if (g == f)
        return off;
      off += field_width_bits(g);
    }
    throw std::out_of_range("field not in fieldset");
  }
};

using HashInput = BitString;
using HashValue = uint32_t;

/// Extracts the fieldset's values from a packet, network byte order, fields
/// concatenated in canonical order. Returns nullopt when the packet lacks a
/// selected field (e.g. an L4 fieldset on a non-TCP/UDP packet).
inline std::optional<HashInput> extract_hash_input(const Packet &p,
                                                   const FieldSet &fs) {
  for (Field f : fs.fields)
    if (!p.has_field(f))
      return std::nullopt;
  HashInput in;
  for (Field f : fs.fields)
    in.append_bits(p.field(f), field_width_bits(f));
  return in;
}

/// The rotating-window hash: a running 32-bit value is XORed with the
/// current top-of-key 32-bit window whenever the corresponding input bit is
/// set, the window sliding one key bit per input bit.
inline HashValue toeplitz_hash(const RssKey &key, const HashInput &input) {
  if (input.size() + kHashBits > key.size())
    throw std::invalid_argument("hash input too long for key");
  uint32_t window = static_cast<uint32_t>(key.bits.slice_u64(0, kHashBits));
  uint32_t hash = 0;
  for (size_t i = 0; i < input.size(); ++i) {
    if (input.bit(i))
      hash ^= window;
    window = (window << 1) | (key.bits.bit(i + kHashBits) ? 1u : 0u);
  }
  return hash;
}

/// Byte-indexed lookup table for one key: hash(input) is the XOR of one
/// table entry per input byte. Exact same function as toeplitz_hash,
/// precomputed for the hot paths (verification sampling, simulation).
class ToeplitzTable {
public:
  ToeplitzTable() = default;

  ToeplitzTable(const RssKey &key, size_t max_input_bytes) {
    if (max_input_bytes * 8 + kHashBits > key.size())
      max_input_bytes = (key.size() - kHashBits) / 8;
    table_.assign(max_input_bytes, {});
    for (size_t pos = 0; pos < max_input_bytes; ++pos) {
      // contribution of bit (pos*8 + b) set alone
      std::array<uint32_t, 8> bit_contrib{};
      for (int b = 0; b < 8; ++b) {
        size_t off = pos * 8 + static_cast<size_t>(b);
        bit_contrib[static_cast<size_t>(b)] =
            static_cast<uint32_t>(key.bits.slice_u64(off, kHashBits));
      }
      for (unsigned v = 0; v < 256; ++v) {
        uint32_t h = 0;
        for (int b = 0; b < 8; ++b)
          if (v & (0x80u >> b))
            h ^= bit_contrib[static_cast<size_t>(b)];
        table_[pos][v] = h;
      }
    }
  }

  HashValue hash(const HashInput &input) const {
    const auto &bytes = input.bytes();
    uint32_t h = 0;
    for (size_t i = 0; i < bytes.size(); ++i)
      h ^= table_[i][bytes[i]];
    return h;
  }

  bool empty() const { return table_.empty(); }

private:
  std::vector<std::array<uint32_t, 256>> table_;
};

using CoreId = uint32_t;

/// Hash-indexed array of core ids; size is a power of two and indexing uses
/// the hash's low-order bits.
struct IndirectionTable {
  std::vector<CoreId> entries;

  static IndirectionTable round_robin(size_t size, uint32_t cores) {
    if (size == 0 || (size & (size - 1)) != 0)
      throw std::invalid_argument("indirection table size must be a power of two");
    if (cores == 0)
      throw std::invalid_argument("core count must be positive");
    IndirectionTable t;
    t.entries.resize(size);
    for (size_t i = 0; i < size; ++i)
      t.entries[i] = static_cast<CoreId>(i % cores);
    return t;
  }

  size_t size() const { return entries.size(); }

  uint32_t core_count() const {
    CoreId m = 0;
    for (CoreId c : entries)
      m = std::max(m, c);
    return m + 1;
  }

  void validate(uint32_t cores) const {
    if (entries.empty() || (entries.size() & (entries.size() - 1)) != 0)
      throw std::runtime_error("indirection table size must be a power of two");
    for (CoreId c : entries)
      if (c >= cores)
        throw std::runtime_error("indirection table entry exceeds core count");
  }

  size_t index_of(HashValue h) const { return h & (entries.size() - 1); }
  CoreId lookup(HashValue h) const { return entries[index_of(h)]; }
};

/// What a NIC supports: which fieldsets it can hash, key length, table size.
struct NicProfile {
  std::string name = "default";
  std::vector<FieldSet> supported_fieldsets;
  size_t key_length_bits = kDefaultKeyBits;
  size_t table_size = kDefaultTableSize;

  void validate() const {
    if (supported_fieldsets.empty())
      throw std::runtime_error("nic profile needs at least one fieldset");
    for (const FieldSet &fs : supported_fieldsets)
      if (fs.total_bits() + kHashBits > key_length_bits)
        throw std::runtime_error("fieldset too wide for key length");
  }

  const FieldSet *fieldset(const std::string &id) const {
    for (const FieldSet &fs : supported_fieldsets)
      if (fs.id == id)
        return &fs;
    return nullptr;
  }

  bool hashable(Field f) const {
    for (const FieldSet &fs : supported_fieldsets)
      if (fs.contains(f))
        return true;
    return false;
  }

  /// IP+port hashing but no address-only or MAC options, mirroring common
  /// 100G hardware defaults.
  static NicProfile default_profile() {
    NicProfile p;
    p.name = "e810-like";
    p.supported_fieldsets.push_back(FieldSet(
        "ip4-tcpudp",
        {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport}));
    return p;
  }
};

inline NicProfile load_nic_profile(const std::string &path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open nic profile: " + path);
  NicProfile p;
  p.supported_fieldsets.clear();
  std::string line;
  bool has_header = false;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word) || word[0] == '#')
      continue;
    if (word == "profile") {
      ls >> p.name;
      has_header = true;
    } else if (word == "key_bits") {
      ls >> p.key_length_bits;
    } else if (word == "table_size") {
      ls >> p.table_size;
    } else if (word == "fieldset") {
      std::string id;
      ls >> id;
      std::vector<Field> fields;
      std::string fname;
      while (ls >> fname) {
        auto fv = field_from_name(fname);
        if (!fv)
          throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                   ": unknown field " + fname);
        fields.push_back(*fv);
      }
      p.supported_fieldsets.push_back(FieldSet(id, std::move(fields)));
    } else {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unknown directive " + word);
    }
  }
  if (!has_header)
    throw std::runtime_error(path + ": missing 'profile' header line");
  p.validate();
  return p;
}

/// Per-interface steering state. All interfaces must be configured before
/// packets are steered.
class RssEngine {
public:
  struct InterfaceConfig {
    RssKey key;
    FieldSet fieldset;
    IndirectionTable table;
    ToeplitzTable fast;
  };

  void configure(uint32_t iface, RssKey key, FieldSet fieldset,
                 IndirectionTable table) {
    if (key.bits.is_zero())
      throw std::invalid_argument("steering key must not be all-zero");
    if (fieldset.total_bits() + kHashBits > key.size())
      throw std::invalid_argument("fieldset wider than the key allows");
    if (iface >= configs_.size())
      configs_.resize(iface + 1);
    InterfaceConfig cfg;
    cfg.fast = ToeplitzTable(key, (fieldset.total_bits() + 7) / 8);
    cfg.key = std::move(key);
    cfg.fieldset = std::move(fieldset);
    cfg.table = std::move(table);
    configs_[iface] = std::move(cfg);
  }

  bool configured(uint32_t iface) const {
    return iface < configs_.size() && configs_[iface].has_value();
  }

  const InterfaceConfig &config(uint32_t iface) const {
    if (!configured(iface))
      throw std::logic_error("interface not configured for steering");
    return *configs_[iface];
  }

  /// Steers a packet: hash the selected fields, index the table with the low
  /// bits. Packets the fieldset does not apply to go to core 0.
  CoreId steer(uint32_t iface, const Packet &p, size_t *entry_out = nullptr) const {
    const InterfaceConfig &cfg = config(iface);
    auto input = extract_hash_input(p, cfg.fieldset);
    if (!input) {
      if (entry_out)
        *entry_out = 0;
      return 0; // fieldset inapplicable: default queue
    }
    HashValue h = cfg.fast.hash(*input);
    size_t idx = cfg.table.index_of(h);
    if (entry_out)
      *entry_out = idx;
    return cfg.table.entries[idx];
  }

  size_t interface_count() const { return configs_.size(); }

private:
  std::vector<std::optional<InterfaceConfig>> configs_;
};

/// Greedy static rebalance: repeatedly move the heaviest movable entry off
/// the most loaded core onto the least loaded one, while that strictly
/// lowers the maximum core load. Entry loads themselves never change, only
/// their owners.
inline IndirectionTable rebalance_table(const IndirectionTable &table,
                                        const std::vector<uint64_t> &per_entry_load,
                                        uint32_t cores) {
  if (per_entry_load.size() != table.size())
    throw std::invalid_argument("histogram must have one bucket per table entry");
  IndirectionTable out = table;
  out.validate(cores);

  std::vector<uint64_t> core_load(cores, 0);
  for (size_t i = 0; i < out.size(); ++i)
    core_load[out.entries[i]] += per_entry_load[i];

  for (;;) {
    uint32_t heavy = 0, light = 0;
    for (uint32_t c = 1; c < cores; ++c) {
      if (core_load[c] > core_load[heavy])
        heavy = c;
      if (core_load[c] < core_load[light])
        light = c;
    }
    if (heavy == light)
      break;
    uint64_t max_load = core_load[heavy];

    // entries of the heavy core, heaviest first; take the first move that helps
    std::vector<size_t> owned;
    for (size_t i = 0; i < out.size(); ++i)
      if (out.entries[i] == heavy)
        owned.push_back(i);
    std::sort(owned.begin(), owned.end(), [&](size_t a, size_t b) {
      if (per_entry_load[a] != per_entry_load[b])
        return per_entry_load[a] > per_entry_load[b];
      return a < b;
    });

    bool moved = false;
    for (size_t e : owned) {
      uint64_t w = per_entry_load[e];
      if (w == 0)
        continue;
      uint64_t new_heavy = core_load[heavy] - w;
      uint64_t new_light = core_load[light] + w;
      if (std::max(new_heavy, new_light) < max_load) {
        out.entries[e] = light;
        core_load[heavy] = new_heavy;
        core_load[light] = new_light;
        moved = true;
        break;
      }
    }
    if (!moved)
      break;
  }
  return out;
}

/// Deployable steering configuration: key + fieldset + table per interface,
/// plus provenance so runs can be reproduced.
struct RssConfigBundle {
  struct PerInterface {
    std::string interface_name;
    RssKey key;
    FieldSet fieldset;
    IndirectionTable table;
  };
  std::vector<PerInterface> interfaces;
  std::string strategy = "shared-nothing"; // or "locks"
  uint64_t seed = 0;
  uint64_t constraints_hash = 0;

  void validate() const {
    for (const auto &ic : interfaces) {
      if (ic.key.bits.is_zero())
        throw std::runtime_error("bundle contains an all-zero key");
      if (ic.fieldset.total_bits() + kHashBits > ic.key.size())
        throw std::runtime_error("bundle fieldset too wide for its key");
    }
  }
};

inline std::string rss_config_to_text(const RssConfigBundle &b) {
  std::ostringstream os;
  os << "rss-config v1\n";
  os << "# key: hex digits, byte 0 first, most significant bit first within a byte\n";
  os << "# table: core id per entry, entry index = hash & (size - 1)\n";
  os << "strategy " << b.strategy << "\n";
  os << "seed " << b.seed << "\n";
  os << "constraints_hash " << std::hex << b.constraints_hash << std::dec << "\n";
  for (const auto &ic : b.interfaces) {
    os << "interface " << ic.interface_name << "\n";
    os << "key " << ic.key.to_hex() << "\n";
    os << "fieldset " << ic.fieldset.id;
    for (Field f : ic.fieldset.fields)
      os << ' ' << field_name(f);
    os << "\n";
    os << "table";
    for (CoreId c : ic.table.entries)
      os << ' ' << c;
    os << "\n";
  }
  return os.str();
}

inline RssConfigBundle rss_config_from_text(const std::string &text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("rss-config v1", 0) != 0)
    throw std::runtime_error("not an rss config (missing header)");
  RssConfigBundle b;
  RssConfigBundle::PerInterface *cur = nullptr;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "strategy") {
      ls >> b.strategy;
    } else if (word == "seed") {
      ls >> b.seed;
    } else if (word == "constraints_hash") {
      ls >> std::hex >> b.constraints_hash >> std::dec;
    } else if (word == "interface") {
      b.interfaces.emplace_back();
      cur = &b.interfaces.back();
      ls >> cur->interface_name;
    } else if (word == "key") {
      if (!cur)
        throw std::runtime_error("config key line outside an interface block");
      std::string hex;
      ls >> hex;
      cur->key.bits = BitString::from_hex(hex);
    } else if (word == "fieldset") {
      if (!cur)
        throw std::runtime_error("config fieldset line outside an interface block");
      std::string id;
      ls >> id;
      std::vector<Field> fields;
      std::string fname;
      while (ls >> fname) {
        auto fv = field_from_name(fname);
        if (!fv)
          throw std::runtime_error("config references unknown field " + fname);
        fields.push_back(*fv);
      }
      cur->fieldset = FieldSet(id, std::move(fields));
    } else if (word == "table") {
      if (!cur)
        throw std::runtime_error("config table line outside an interface block");
      cur->table.entries.clear();
      CoreId c;
      while (ls >> c)
        cur->table.entries.push_back(c);
    } else {
      throw std::runtime_error("unknown rss config directive: " + word);
    }
  }
  b.validate();
  return b;
}

inline RssConfigBundle load_rss_config(const std::string &path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open rss config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return rss_config_from_text(ss.str());
}

inline void save_rss_config(const RssConfigBundle &b, const std::string &path) {
  std::ofstream f(path);
  if (!f)
    throw std::runtime_error("cannot write rss config: " + path);
  f << rss_config_to_text(b);
}

/// Builds a steering engine from a bundle. Tables referencing cores beyond
/// the requested count are regenerated round-robin; keys and fieldsets are
/// the contract and carry over unchanged.
inline RssEngine engine_from_bundle(const RssConfigBundle &b, uint32_t cores) {
  RssEngine e;
  for (size_t i = 0; i < b.interfaces.size(); ++i) {
    const auto &ic = b.interfaces[i];
    IndirectionTable t = ic.table;
    if (t.entries.empty() || t.core_count() > cores)
      t = IndirectionTable::round_robin(
          t.entries.empty() ? kDefaultTableSize : t.entries.size(), cores);
    t.validate(cores);
    e.configure(static_cast<uint32_t>(i), ic.key, ic.fieldset, std::move(t));
  }
  return e;
}

} // namespace rsshard
