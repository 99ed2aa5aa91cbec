#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rsshard/exec.hpp"
#include "rsshard/model.hpp"
#include "rsshard/rss.hpp"
#include "rsshard/state.hpp"

namespace rsshard {

struct SimConfig {
  uint32_t cores = 1;
  enum class Capacity : uint8_t { Shard, Replicate } capacity = Capacity::Shard;
  uint64_t seed = 0;

  void validate() const {
    if (cores == 0)
      throw std::invalid_argument("core count must be at least 1");
  }
};

struct Metrics {
  std::vector<uint64_t> per_core_packets;
  uint64_t cross_core_accesses = 0;
  uint64_t read_lock_acquisitions = 0;
  uint64_t write_lock_acquisitions = 0;
  uint64_t restarted_packets = 0;
  uint64_t expiry_write_locks = 0;
  uint64_t global_clears = 0;
  std::vector<uint64_t> table_entry_hits;

  uint64_t total_packets() const {
    uint64_t n = 0;
    for (uint64_t c : per_core_packets)
      n += c;
    return n;
  }

  double max_mean_ratio() const {
    if (per_core_packets.empty())
      return 0.0;
    uint64_t mx = *std::max_element(per_core_packets.begin(), per_core_packets.end());
    double mean = static_cast<double>(total_packets()) /
                  static_cast<double>(per_core_packets.size());
    return mean > 0 ? static_cast<double>(mx) / mean : 0.0;
  }
};

namespace detail {

/// Counts accesses arriving at a store from a core other than its owner.
/// Shared-nothing dispatch routes every access to the owner, so the counter
/// is asserted to stay zero.
class OwnedStore : public StateBackend {
public:
  OwnedStore(const NfModel &model, uint64_t capacity_divisor, uint32_t owner,
             uint64_t *cross_counter)
      : inner_(model, capacity_divisor), owner_(owner), cross_(cross_counter) {}

  OpResult map_get(size_t o, const std::string &k, int64_t now, uint32_t c) override {
    note(c);
    return inner_.map_get(o, k, now, c);
  }
  OpResult map_put(size_t o, const std::string &k, uint64_t v, int64_t now,
                   uint32_t c) override {
    note(c);
    return inner_.map_put(o, k, v, now, c);
  }
  OpResult vector_get(size_t o, uint64_t i, uint32_t c) override {
    note(c);
    return inner_.vector_get(o, i, c);
  }
  OpResult vector_put(size_t o, uint64_t i, uint64_t v, uint32_t c) override {
    note(c);
    return inner_.vector_put(o, i, v, c);
  }
  OpResult dchain_allocate(size_t o, int64_t now, uint32_t c) override {
    note(c);
    return inner_.dchain_allocate(o, now, c);
  }
  OpResult dchain_rejuvenate(size_t o, uint64_t i, int64_t now, uint32_t c) override {
    note(c);
    return inner_.dchain_rejuvenate(o, i, now, c);
  }
  OpResult sketch_touch(size_t o, const std::string &k, uint32_t c) override {
    note(c);
    return inner_.sketch_touch(o, k, c);
  }
  OpResult sketch_query(size_t o, const std::string &k, uint32_t c) override {
    note(c);
    return inner_.sketch_query(o, k, c);
  }

private:
  void note(uint32_t core) {
    if (core != owner_)
      ++*cross_;
  }
  PlainStateStore inner_;
  uint32_t owner_;
  uint64_t *cross_;
};

} // namespace detail

using SteerFn = std::function<CoreId(const Packet &)>;

/// Shared-nothing execution with an arbitrary steering function; state is
/// allocated per core and each packet runs against its core's instances
/// only. Packets are dispatched in trace order (each core's queue is FIFO),
/// which makes the log deterministic.
inline std::pair<BehaviorLog, Metrics>
exec_shared_nothing_steered(const NfModel &model, const SteerFn &steer,
                            const Trace &trace, const SimConfig &cfg,
                            const ExecHooks *hooks = nullptr,
                            std::function<void(uint32_t, uint64_t)> on_dispatch = {}) {
  cfg.validate();
  Metrics m;
  m.per_core_packets.assign(cfg.cores, 0);
  uint64_t divisor = cfg.capacity == SimConfig::Capacity::Shard ? cfg.cores : 1;
  std::vector<detail::OwnedStore> stores;
  stores.reserve(cfg.cores);
  for (uint32_t c = 0; c < cfg.cores; ++c)
    stores.emplace_back(model, divisor, c, &m.cross_core_accesses);
  PacketInterpreter interp(model, hooks);
  BehaviorLog log;
  log.records.reserve(trace.packets.size());
  for (const Packet &p : trace.packets) {
    CoreId core = steer(p);
    if (core >= cfg.cores)
      throw std::logic_error("steering produced an out-of-range core");
    m.per_core_packets[core] += 1;
    if (on_dispatch)
      on_dispatch(core, p.id);
    log.records.push_back(interp.run(p, stores[core], core));
  }
  if (m.cross_core_accesses != 0)
    throw std::logic_error("shared-nothing run touched a foreign core's state");
  return {std::move(log), std::move(m)};
}

/// Shared-nothing execution steered by the RSS engine built from `bundle`.
inline std::pair<BehaviorLog, Metrics>
exec_shared_nothing(const NfModel &model, const RssConfigBundle &bundle,
                    const Trace &trace, const SimConfig &cfg,
                    const ExecHooks *hooks = nullptr,
                    std::function<void(uint32_t, uint64_t)> on_dispatch = {}) {
  cfg.validate();
  RssEngine engine = engine_from_bundle(bundle, cfg.cores);
  if (engine.interface_count() < model.interfaces.size())
    throw std::runtime_error("rss config does not cover all model interfaces");
  size_t table_size = engine.config(0).table.size();
  std::vector<uint64_t> entry_hits(table_size, 0);
  SteerFn steer = [&](const Packet &p) {
    size_t entry = 0;
    CoreId core = engine.steer(p.in_interface, p, &entry);
    entry_hits[entry] += 1;
    return core;
  };
  auto result = exec_shared_nothing_steered(model, steer, trace, cfg, hooks,
                                            std::move(on_dispatch));
  result.second.table_entry_hits = std::move(entry_hits);
  return result;
}

/// Lock-based execution over shared state. Packets are processed
/// speculatively as read-only; the first attempted write releases the read
/// lock, takes every core's lock, and restarts the packet. Entry aging is
/// kept per core so plain reads never lock (see LockStateStore).
inline std::pair<BehaviorLog, Metrics>
exec_lock_based(const NfModel &model, const Trace &trace, const SimConfig &cfg,
                const RssConfigBundle *bundle = nullptr,
                const ExecHooks *hooks = nullptr) {
  cfg.validate();
  RssConfigBundle local;
  if (!bundle) {
    // lock mode steers for load balancing only: random key, widest fields
    Rng rng(splitmix64(cfg.seed ^ 0x10c4b41ull));
    NicProfile profile = NicProfile::default_profile();
    const FieldSet *widest = &profile.supported_fieldsets.front();
    for (const FieldSet &fs : profile.supported_fieldsets)
      if (fs.total_bits() > widest->total_bits())
        widest = &fs;
    for (const std::string &iface : model.interfaces) {
      RssConfigBundle::PerInterface ic;
      ic.interface_name = iface;
      ic.key = RssKey::random(rng, profile.key_length_bits);
      ic.fieldset = *widest;
      ic.table = IndirectionTable::round_robin(profile.table_size, cfg.cores);
      local.interfaces.push_back(std::move(ic));
    }
    local.strategy = "locks";
    bundle = &local;
  }
  RssEngine engine = engine_from_bundle(*bundle, cfg.cores);

  Metrics m;
  m.per_core_packets.assign(cfg.cores, 0);
  m.table_entry_hits.assign(engine.config(0).table.size(), 0);
  LockCounters counters;
  LockStateStore store(model, cfg.cores, &counters);
  PacketInterpreter interp(model, hooks);
  BehaviorLog log;
  log.records.reserve(trace.packets.size());
  for (const Packet &p : trace.packets) {
    size_t entry = 0;
    CoreId core = engine.steer(p.in_interface, p, &entry);
    m.per_core_packets[core] += 1;
    m.table_entry_hits[entry] += 1;
    m.read_lock_acquisitions += 1;
    try {
      log.records.push_back(interp.run(p, store, core, true));
    } catch (const WriteAttempt &) {
      m.restarted_packets += 1;
      m.write_lock_acquisitions += 1;
      log.records.push_back(interp.run(p, store, core, false));
    }
  }
  m.expiry_write_locks = counters.expiry_write_locks;
  m.global_clears = counters.global_clears;
  return {std::move(log), std::move(m)};
}

// ---------------------------------------------------------------------------
// Equivalence checking

struct Mismatch {
  uint64_t packet_id = 0;
  LogRecord sequential, parallel;
  std::string reason;
};

struct EquivalenceReport {
  bool equivalent = true;
  uint64_t compared = 0;
  uint64_t total_mismatches = 0;
  std::vector<Mismatch> first_mismatches; // capped

  std::string to_text() const {
    std::ostringstream os;
    os << (equivalent ? "equivalent" : "NOT equivalent") << " over " << compared
       << " packets";
    if (!equivalent) {
      os << "; " << total_mismatches << " mismatches, first "
         << first_mismatches.size() << ":";
      for (const Mismatch &mm : first_mismatches)
        os << "\n  packet " << mm.packet_id << ": " << mm.reason;
    }
    os << "\n";
    return os.str();
  }
};

/// Compares two behavior logs packet by packet. Fields declared abstract in
/// the model are compared up to a renaming that must be consistent (same
/// context and sequential value always map to the same parallel value) and
/// injective within a context (distinct sequential values stay distinct).
/// The context is the record's action, output interface and non-abstract
/// final fields. Dropped packets are compared by action alone.
inline EquivalenceReport check_equivalence(const BehaviorLog &seq,
                                           const BehaviorLog &par,
                                           const NfModel &model,
                                           size_t max_reported = 8) {
  if (seq.records.size() != par.records.size())
    throw std::invalid_argument("logs cover different packet sets");
  EquivalenceReport rep;
  rep.compared = seq.records.size();

  struct Renaming {
    std::map<std::string, uint64_t> forward; // context+seqval -> parval
    std::map<std::string, uint64_t> reverse; // context+parval -> seqval
  };
  std::map<Field, Renaming> renamings;

  auto context_of = [&](const LogRecord &r) {
    std::ostringstream os;
    os << r.out_interface;
    for (size_t f = 0; f < kFieldCount; ++f)
      if (!model.field_abstract(static_cast<Field>(f)))
        os << ':' << r.final_fields[f];
    return os.str();
  };

  auto report = [&](const LogRecord &s, const LogRecord &p, std::string why) {
    rep.equivalent = false;
    rep.total_mismatches += 1;
    if (rep.first_mismatches.size() < max_reported)
      rep.first_mismatches.push_back({s.packet_id, s, p, std::move(why)});
  };

  for (size_t i = 0; i < seq.records.size(); ++i) {
    const LogRecord &s = seq.records[i];
    const LogRecord &p = par.records[i];
    if (s.packet_id != p.packet_id)
      throw std::invalid_argument("logs are not aligned by packet id");
    if (s.forwarded != p.forwarded) {
      report(s, p, s.forwarded ? "forwarded sequentially but dropped in parallel"
                               : "dropped sequentially but forwarded in parallel");
      continue;
    }
    if (!s.forwarded)
      continue;
    if (s.out_interface != p.out_interface) {
      report(s, p, "diverging output interface");
      continue;
    }
    std::string ctx = context_of(s);
    bool bad = false;
    for (size_t f = 0; f < kFieldCount && !bad; ++f) {
      Field field = static_cast<Field>(f);
      uint64_t sv = s.final_fields[f], pv = p.final_fields[f];
      if (!model.field_abstract(field)) {
        if (sv != pv) {
          report(s, p, std::string("field ") + field_name(field) + " differs");
          bad = true;
        }
        continue;
      }
      Renaming &rn = renamings[field];
      std::string fkey = ctx + '#' + std::to_string(sv);
      std::string rkey = ctx + '#' + std::to_string(pv);
      auto fit = rn.forward.find(fkey);
      if (fit != rn.forward.end() && fit->second != pv) {
        report(s, p, std::string("abstract field ") + field_name(field) +
                         " renamed inconsistently");
        bad = true;
        continue;
      }
      auto rit = rn.reverse.find(rkey);
      if (rit != rn.reverse.end() && rit->second != sv) {
        report(s, p, std::string("abstract field ") + field_name(field) +
                         " renaming is not injective in its context");
        bad = true;
        continue;
      }
      rn.forward[fkey] = pv;
      rn.reverse[rkey] = sv;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Skew

struct SkewReport {
  std::vector<double> core_shares;
  double max_mean_ratio = 0.0;
  uint64_t max_core_load = 0;
  std::vector<uint64_t> table_histogram;

  std::string to_csv() const {
    std::ostringstream os;
    os << "core,share\n";
    for (size_t i = 0; i < core_shares.size(); ++i)
      os << i << ',' << core_shares[i] << '\n';
    return os.str();
  }
};

inline SkewReport measure_skew(const Metrics &m) {
  SkewReport r;
  uint64_t total = m.total_packets();
  r.core_shares.reserve(m.per_core_packets.size());
  for (uint64_t c : m.per_core_packets) {
    r.core_shares.push_back(total ? static_cast<double>(c) / static_cast<double>(total) : 0.0);
    r.max_core_load = std::max(r.max_core_load, c);
  }
  r.max_mean_ratio = m.max_mean_ratio();
  r.table_histogram = m.table_entry_hits;
  return r;
}

inline std::string metrics_to_text(const Metrics &m) {
  std::ostringstream os;
  os << "packets " << m.total_packets() << "\n";
  os << "per_core";
  for (uint64_t c : m.per_core_packets)
    os << ' ' << c;
  os << "\n";
  os << "cross_core_accesses " << m.cross_core_accesses << "\n";
  os << "read_lock_acquisitions " << m.read_lock_acquisitions << "\n";
  os << "write_lock_acquisitions " << m.write_lock_acquisitions << "\n";
  os << "restarted_packets " << m.restarted_packets << "\n";
  os << "expiry_write_locks " << m.expiry_write_locks << "\n";
  os << "global_clears " << m.global_clears << "\n";
  return os.str();
}

inline std::string metrics_to_csv(const Metrics &m) {
  std::ostringstream os;
  os << "core,packets\n";
  for (size_t i = 0; i < m.per_core_packets.size(); ++i)
    os << i << ',' << m.per_core_packets[i] << '\n';
  return os.str();
}

} // namespace rsshard
