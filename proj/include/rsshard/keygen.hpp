#pragma once

#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsshard/gf2.hpp"
#include "rsshard/rss.hpp"
#include "rsshard/sharding.hpp"

namespace rsshard {

struct KeySearchConfig {
  uint32_t workers = 4;
  uint32_t max_restarts = 64; // total randomized candidates before giving up
  uint64_t seed = 1;
  uint32_t soft_one_permille = 500; // chance a soft bit target is 1
  double quality_threshold = 1.5;   // max/mean core load gate
  uint32_t quality_cores = 16;
  uint64_t quality_flows = 10000;

  void validate() const {
    if (workers == 0)
      throw std::invalid_argument("need at least one search worker");
  }
};

struct DistributionScore {
  std::vector<double> shares; // per-core, for the worst-balanced interface
  double max_mean_ratio = 0.0;

  bool accepted(double threshold) const { return max_mean_ratio <= threshold; }
};

struct VerificationReport {
  uint64_t constrained_samples = 0;
  uint64_t violations = 0;
  uint64_t control_samples = 0;
  uint64_t control_collisions = 0;
  std::string first_violation; // empty when none

  double control_collision_rate() const {
    return control_samples
               ? static_cast<double>(control_collisions) /
                     static_cast<double>(control_samples)
               : 0.0;
  }
};

class FieldsetInfeasible : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NoAcceptableKey : public std::runtime_error {
public:
  NoAcceptableKey(const std::string &msg, RssConfigBundle best, double ratio)
      : std::runtime_error(msg), best_rejected(std::move(best)),
        best_ratio(ratio) {}
  RssConfigBundle best_rejected;
  double best_ratio;
};

/// Per interface, the smallest supported fieldset covering the constraint
/// atoms; interfaces without constraints get the widest option so steering
/// keeps its entropy. Extra covered fields are fine, the key cancels them.
inline std::vector<FieldSet> select_fieldsets(const PairConstraintSet &constraints,
                                              const NicProfile &profile,
                                              size_t interface_count) {
  std::vector<std::set<Field>> needed(interface_count);
  for (const auto &p : constraints.pairs)
    for (const auto &d : p.disjuncts)
      for (const auto &atom : d) {
        needed[p.iface_a].insert(atom.a.field);
        needed[p.iface_b].insert(atom.b.field);
      }

  const FieldSet *widest = &profile.supported_fieldsets.front();
  for (const FieldSet &fs : profile.supported_fieldsets)
    if (fs.total_bits() > widest->total_bits())
      widest = &fs;

  std::vector<FieldSet> out;
  for (size_t i = 0; i < interface_count; ++i) {
    if (needed[i].empty()) {
      out.push_back(*widest);
      continue;
    }
    const FieldSet *best = nullptr;
    for (const FieldSet &fs : profile.supported_fieldsets) {
      bool covers = true;
      for (Field f : needed[i])
        if (!fs.contains(f))
          covers = false;
      if (!covers)
        continue;
      if (!best || fs.total_bits() < best->total_bits() ||
          (fs.total_bits() == best->total_bits() && fs.id < best->id))
        best = &fs;
    }
    if (!best) {
      std::string fields;
      for (Field f : needed[i])
        fields += std::string(fields.empty() ? "" : ", ") + field_name(f);
      throw FieldsetInfeasible("no supported fieldset covers { " + fields +
                               " } on interface " + std::to_string(i));
    }
    out.push_back(*best);
  }
  return out;
}

namespace detail {

/// Hard equations over the concatenated key bits: for every constraint
/// disjunct, the hash-difference map must vanish on a spanning set of the
/// subspace of packet pairs the disjunct admits. Each equality atom glues
/// input coordinates together; the glued groups are the spanning set.
/// Disjuncts whose subspace lies entirely on the diagonal (the constraint
/// forces the two inputs to be bit-identical) are skipped, honoring the
/// distinct-inputs guard of the hash-equality statement.
inline void build_hash_equations(Gf2System &sys,
                                 const PairConstraintSet &constraints,
                                 const std::vector<FieldSet> &fieldsets,
                                 size_t key_bits) {
  auto key_var = [&](uint32_t iface, size_t bit) {
    return static_cast<size_t>(iface) * key_bits + bit;
  };

  for (const auto &p : constraints.pairs) {
    size_t len_a = fieldsets[p.iface_a].total_bits();
    size_t len_b = fieldsets[p.iface_b].total_bits();
    for (const auto &disjunct : p.disjuncts) {
      // union-find over the two inputs' bit coordinates
      std::vector<size_t> parent(len_a + len_b);
      for (size_t i = 0; i < parent.size(); ++i)
        parent[i] = i;
      std::function<size_t(size_t)> find = [&](size_t x) {
        while (parent[x] != x) {
          parent[x] = parent[parent[x]];
          x = parent[x];
        }
        return x;
      };
      auto unite = [&](size_t x, size_t y) { parent[find(x)] = find(y); };

      for (const auto &atom : disjunct) {
        size_t off_a =
            fieldsets[p.iface_a].field_offset_bits(atom.a.field) + atom.a.offset;
        size_t off_b =
            fieldsets[p.iface_b].field_offset_bits(atom.b.field) + atom.b.offset;
        if (atom.a.width != atom.b.width)
          throw std::logic_error("constraint atom width mismatch");
        for (size_t t = 0; t < atom.a.width; ++t)
          unite(off_a + t, len_a + off_b + t);
      }

      std::map<size_t, std::vector<size_t>> groups;
      for (size_t i = 0; i < parent.size(); ++i)
        groups[find(i)].push_back(i);

      bool all_diagonal = len_a == len_b;
      if (all_diagonal) {
        for (const auto &[root, members] : groups) {
          std::vector<size_t> in_a, in_b;
          for (size_t m : members)
            (m < len_a ? in_a : in_b).push_back(m < len_a ? m : m - len_a);
          if (in_a != in_b) {
            all_diagonal = false;
            break;
          }
        }
      }
      if (all_diagonal)
        continue; // only bit-identical pairs satisfy this disjunct

      for (const auto &[root, members] : groups) {
        for (size_t b = 0; b < kHashBits; ++b) {
          std::vector<size_t> vars;
          for (size_t m : members) {
            if (m < len_a)
              vars.push_back(key_var(p.iface_a, m + b));
            else
              vars.push_back(key_var(p.iface_b, (m - len_a) + b));
          }
          sys.add_hard(vars, false);
        }
      }
    }
  }
}

inline std::optional<std::vector<RssKey>>
solve_key_candidate(const Gf2System &sys, size_t interfaces, size_t key_bits,
                    uint64_t seed, uint32_t soft_one_permille) {
  Rng rng(seed);
  std::vector<Gf2System::SoftTarget> alive;
  alive.reserve(sys.unknowns());
  for (size_t c = 0; c < sys.unknowns(); ++c)
    alive.push_back({c, rng.chance(soft_one_permille, 1000)});

  while (true) {
    Gf2System::Attempt a = sys.attempt(alive);
    if (a.ok) {
      std::vector<RssKey> keys;
      keys.reserve(interfaces);
      for (size_t i = 0; i < interfaces; ++i) {
        RssKey k = RssKey::zeros(key_bits);
        for (size_t b = 0; b < key_bits; ++b)
          if (a.assignment[i * key_bits + b])
            k.bits.set_bit(b, true);
        if (k.bits.is_zero())
          return std::nullopt; // degenerate draw, try another seed
        keys.push_back(std::move(k));
      }
      return keys;
    }
    if (a.conflict_core.empty())
      return std::nullopt; // hard rows alone are inconsistent
    // diagnosis step: drop a random half of the conflicting soft targets
    std::vector<size_t> core = a.conflict_core;
    size_t discard = (core.size() + 1) / 2;
    std::set<size_t> dropped;
    while (dropped.size() < discard)
      dropped.insert(core[rng.below(core.size())]);
    std::vector<Gf2System::SoftTarget> next;
    next.reserve(alive.size());
    for (size_t idx = 0; idx < alive.size(); ++idx)
      if (!dropped.count(idx))
        next.push_back(alive[idx]);
    if (next.size() == alive.size())
      return std::nullopt; // no progress; should not happen
    alive = std::move(next);
  }
}

} // namespace detail

/// Steers a free (unconstrained) flow population through each interface's
/// key and table; the score is the worst interface's max/mean core load.
inline DistributionScore score_distribution(const RssConfigBundle &bundle,
                                            uint64_t flow_sample,
                                            uint32_t cores, uint64_t seed) {
  DistributionScore score;
  Rng rng(splitmix64(seed ^ 0x5c04eull));
  std::vector<Packet> flows;
  flows.reserve(flow_sample);
  for (uint64_t f = 0; f < flow_sample; ++f) {
    Packet p;
    uint64_t h1 = rng.next(), h2 = rng.next();
    p.ipv4_src = static_cast<uint32_t>(h1);
    p.ipv4_dst = static_cast<uint32_t>(h1 >> 32);
    p.sport = static_cast<uint16_t>(h2);
    p.dport = static_cast<uint16_t>(h2 >> 16);
    p.proto = (h2 >> 32) & 1 ? kProtoTcp : kProtoUdp;
    p.eth_src = detail::mac_of_ip(p.ipv4_src);
    p.eth_dst = detail::mac_of_ip(p.ipv4_dst);
    flows.push_back(p);
  }
  RssEngine engine = engine_from_bundle(bundle, cores);
  for (size_t i = 0; i < bundle.interfaces.size(); ++i) {
    std::vector<uint64_t> load(cores, 0);
    for (Packet &p : flows) {
      p.in_interface = static_cast<uint32_t>(i);
      load[engine.steer(p.in_interface, p)] += 1;
    }
    uint64_t mx = *std::max_element(load.begin(), load.end());
    double mean = static_cast<double>(flow_sample) / cores;
    double ratio = static_cast<double>(mx) / mean;
    if (ratio > score.max_mean_ratio) {
      score.max_mean_ratio = ratio;
      score.shares.clear();
      for (uint64_t l : load)
        score.shares.push_back(static_cast<double>(l) /
                               static_cast<double>(flow_sample));
    }
  }
  return score;
}

/// Independent sampling oracle: draws packet pairs constrained to satisfy
/// each disjunct and checks the two steering hashes agree, plus free control
/// pairs whose collision rate is reported as a statistic.
inline VerificationReport verify_keys(const RssConfigBundle &bundle,
                                      const PairConstraintSet &constraints,
                                      uint64_t sample_count, uint64_t seed) {
  VerificationReport rep;
  Rng rng(splitmix64(seed ^ 0x0b5e7full));

  std::vector<ToeplitzTable> tables;
  for (const auto &ic : bundle.interfaces)
    tables.emplace_back(ic.key, (ic.fieldset.total_bits() + 7) / 8);

  auto random_packet = [&](uint32_t iface) {
    Packet p;
    uint64_t h1 = rng.next(), h2 = rng.next();
    p.in_interface = iface;
    p.ipv4_src = static_cast<uint32_t>(h1);
    p.ipv4_dst = static_cast<uint32_t>(h1 >> 32);
    p.sport = static_cast<uint16_t>(h2);
    p.dport = static_cast<uint16_t>(h2 >> 16);
    p.eth_src = rng.next() & 0xffffffffffffull;
    p.eth_dst = rng.next() & 0xffffffffffffull;
    p.proto = (h2 >> 33) & 1 ? kProtoTcp : kProtoUdp;
    return p;
  };

  auto hash_of = [&](const Packet &p, uint32_t iface) -> HashValue {
    auto input = extract_hash_input(p, bundle.interfaces[iface].fieldset);
    return tables[iface].hash(*input);
  };

  for (const auto &pair : constraints.pairs) {
    for (const auto &disjunct : pair.disjuncts) {
      for (uint64_t s = 0; s < sample_count; ++s) {
        Packet pa = random_packet(pair.iface_a);
        Packet pb = random_packet(pair.iface_b);
        for (const auto &atom : disjunct) {
          size_t fw_a = field_width_bits(atom.a.field);
          size_t fw_b = field_width_bits(atom.b.field);
          uint64_t va = pa.field(atom.a.field);
          uint64_t mask =
              atom.a.width == 64 ? ~0ull : ((1ull << atom.a.width) - 1);
          uint64_t slice = (va >> (fw_a - atom.a.offset - atom.a.width)) & mask;
          uint64_t vb = pb.field(atom.b.field);
          size_t shift_b = fw_b - atom.b.offset - atom.b.width;
          vb &= ~(mask << shift_b);
          vb |= slice << shift_b;
          pb.set_field(atom.b.field, vb);
        }
        if (hash_of(pa, pair.iface_a) != hash_of(pb, pair.iface_b)) {
          rep.violations += 1;
          if (rep.first_violation.empty()) {
            std::ostringstream os;
            os << "ifaces (" << pair.iface_a << "," << pair.iface_b
               << ") src=" << pa.ipv4_src << " dst=" << pa.ipv4_dst
               << " sport=" << pa.sport << " dport=" << pa.dport;
            rep.first_violation = os.str();
          }
        }
        rep.constrained_samples += 1;
      }
      // free controls for the collision statistic
      uint64_t controls = std::max<uint64_t>(1, sample_count / 100);
      for (uint64_t s = 0; s < controls; ++s) {
        Packet pa = random_packet(pair.iface_a);
        Packet pb = random_packet(pair.iface_b);
        if (hash_of(pa, pair.iface_a) == hash_of(pb, pair.iface_b))
          rep.control_collisions += 1;
        rep.control_samples += 1;
      }
    }
  }
  return rep;
}

/// Finds per-interface keys under which any two packets satisfying the
/// constraints hash equally. The hard side is a homogeneous linear system
/// over the key bits; soft per-bit targets bias the solution toward a
/// random, mostly-set key, thinned by the conflict core when contradictory.
/// Independent workers race with derived seeds; the first candidate that
/// passes the distribution gate (in worker order) wins, which keeps the
/// result reproducible for a fixed seed.
inline RssConfigBundle synthesize_keys(const PairConstraintSet &constraints,
                                       const std::vector<FieldSet> &fieldsets,
                                       const std::vector<std::string> &interfaces,
                                       const NicProfile &profile,
                                       const KeySearchConfig &config) {
  config.validate();
  size_t key_bits = profile.key_length_bits;
  for (const FieldSet &fs : fieldsets)
    if (fs.total_bits() + kHashBits > key_bits)
      throw std::invalid_argument("fieldset too wide for the key length");

  Gf2System sys(interfaces.size() * key_bits);
  detail::build_hash_equations(sys, constraints, fieldsets, key_bits);
  if (!sys.finalize())
    throw std::logic_error("equality constraints produced an inconsistent system");

  auto make_bundle = [&](std::vector<RssKey> keys) {
    RssConfigBundle b;
    for (size_t i = 0; i < interfaces.size(); ++i) {
      RssConfigBundle::PerInterface ic;
      ic.interface_name = interfaces[i];
      ic.key = std::move(keys[i]);
      ic.fieldset = fieldsets[i];
      ic.table =
          IndirectionTable::round_robin(profile.table_size, config.quality_cores);
      b.interfaces.push_back(std::move(ic));
    }
    b.seed = config.seed;
    b.constraints_hash = constraint_set_fingerprint(constraints);
    return b;
  };

  RssConfigBundle best_rejected;
  double best_ratio = -1.0;

  uint32_t rounds = (config.max_restarts + config.workers - 1) / config.workers;
  for (uint32_t round = 0; round < rounds; ++round) {
    std::vector<std::future<std::optional<RssConfigBundle>>> futures;
    for (uint32_t w = 0; w < config.workers; ++w) {
      uint64_t attempt_seed =
          splitmix64(config.seed ^ (0x9e37ull + round * config.workers + w));
      futures.push_back(std::async(std::launch::async, [&, attempt_seed]() {
        auto keys = detail::solve_key_candidate(sys, interfaces.size(), key_bits,
                                                attempt_seed,
                                                config.soft_one_permille);
        if (!keys)
          return std::optional<RssConfigBundle>{};
        return std::optional<RssConfigBundle>(make_bundle(std::move(*keys)));
      }));
    }
    for (auto &f : futures) {
      auto candidate = f.get();
      if (!candidate)
        continue;
      DistributionScore score = score_distribution(
          *candidate, config.quality_flows, config.quality_cores, config.seed);
      if (score.accepted(config.quality_threshold))
        return *candidate;
      if (score.max_mean_ratio > best_ratio) {
        best_ratio = score.max_mean_ratio;
        best_rejected = *candidate;
      }
    }
  }
  throw NoAcceptableKey(
      "no acceptable key within " + std::to_string(config.max_restarts) +
          " candidates (best rejected max/mean " + std::to_string(best_ratio) + ")",
      best_rejected, best_ratio);
}

} // namespace rsshard
