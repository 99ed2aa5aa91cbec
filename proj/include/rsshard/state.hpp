#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rsshard/bits.hpp"
#include "rsshard/model.hpp"

namespace rsshard {

/// Result of one stateful operation; which components are meaningful
/// depends on the operation.
struct OpResult {
  uint64_t hit = 0;
  uint64_t ok = 0;
  uint64_t value = 0;
  uint64_t index = 0;
  uint64_t estimate = 0;

  uint64_t component(const std::string &c) const {
    if (c == "hit") return hit;
    if (c == "ok") return ok;
    if (c == "value") return value;
    if (c == "index") return index;
    if (c == "estimate") return estimate;
    throw std::logic_error("unknown result component " + c);
  }
};

/// Counters a lock-mode store reports into.
struct LockCounters {
  uint64_t expiry_write_locks = 0;
  uint64_t global_clears = 0;
};

/// Uniform interface the packet interpreter drives. `core` identifies the
/// calling core; single-instance stores ignore it, lock-mode stores use it
/// for the per-core aging copies.
class StateBackend {
public:
  virtual ~StateBackend() = default;
  virtual OpResult map_get(size_t obj, const std::string &key, int64_t now,
                           uint32_t core) = 0;
  virtual OpResult map_put(size_t obj, const std::string &key, uint64_t value,
                           int64_t now, uint32_t core) = 0;
  virtual OpResult vector_get(size_t obj, uint64_t index, uint32_t core) = 0;
  virtual OpResult vector_put(size_t obj, uint64_t index, uint64_t value,
                              uint32_t core) = 0;
  virtual OpResult dchain_allocate(size_t obj, int64_t now, uint32_t core) = 0;
  virtual OpResult dchain_rejuvenate(size_t obj, uint64_t index, int64_t now,
                                     uint32_t core) = 0;
  virtual OpResult sketch_touch(size_t obj, const std::string &key,
                                uint32_t core) = 0;
  virtual OpResult sketch_query(size_t obj, const std::string &key,
                                uint32_t core) = 0;
};

namespace detail {

inline uint64_t sketch_row_hash(const std::string &key, uint32_t row,
                                uint64_t width) {
  uint64_t h = fnv1a(key, 0xcbf29ce484222325ull ^ splitmix64(0x6b6574636853ull + row));
  return splitmix64(h) % width;
}

} // namespace detail

/// Single-instance store with plain sequential semantics. Used directly by
/// the sequential executor and as the per-core instance in shared-nothing
/// runs. Expiring structures age out lazily, checked at access time.
class PlainStateStore : public StateBackend {
public:
  PlainStateStore(const NfModel &model, uint64_t capacity_divisor = 1)
      : model_(&model) {
    maps_.resize(model.states.size());
    vectors_.resize(model.states.size());
    dchains_.resize(model.states.size());
    sketches_.resize(model.states.size());
    capacities_.resize(model.states.size());
    for (size_t i = 0; i < model.states.size(); ++i) {
      const StateObjectDecl &d = model.states[i];
      uint64_t cap = d.capacity;
      if (capacity_divisor > 1 && d.kind != StateKind::Sketch)
        cap = std::max<uint64_t>(1, cap / capacity_divisor);
      capacities_[i] = cap;
      switch (d.kind) {
      case StateKind::Vector:
        vectors_[i].assign(cap, 0);
        break;
      case StateKind::Dchain:
        for (uint64_t s = 0; s < cap; ++s)
          dchains_[i].free_slots.insert(s);
        dchains_[i].slots.assign(cap, {});
        break;
      case StateKind::Sketch:
        sketches_[i].assign(static_cast<size_t>(d.sketch_depth) * d.capacity, 0);
        break;
      case StateKind::Map:
        break;
      }
    }
    for (const auto &init : model.map_inits) {
      std::string key(init.key.bytes().begin(), init.key.bytes().end());
      maps_[init.object][key] = {init.value, 0};
    }
    for (const auto &init : model.vector_inits) {
      uint64_t cap = capacities_[init.object];
      vectors_[init.object][init.index % cap] = init.value;
    }
  }

  OpResult map_get(size_t obj, const std::string &key, int64_t now,
                   uint32_t) override {
    auto &m = maps_[obj];
    auto it = m.find(key);
    OpResult r;
    if (it == m.end())
      return r;
    int64_t expiry = model_->states[obj].expiry_ticks;
    if (expiry > 0 && now > it->second.last_touch + expiry) {
      m.erase(it);
      return r;
    }
    if (expiry > 0)
      it->second.last_touch = now;
    r.hit = 1;
    r.value = it->second.value;
    return r;
  }

  OpResult map_put(size_t obj, const std::string &key, uint64_t value,
                   int64_t now, uint32_t) override {
    guard_write(obj);
    auto &m = maps_[obj];
    int64_t expiry = model_->states[obj].expiry_ticks;
    OpResult r;
    auto it = m.find(key);
    if (it != m.end()) {
      it->second.value = value;
      it->second.last_touch = now;
      r.ok = 1;
      return r;
    }
    if (m.size() >= capacities_[obj] && expiry > 0) {
      // reclaim aged-out entries before declaring the map full
      for (auto sweep = m.begin(); sweep != m.end();) {
        if (now > sweep->second.last_touch + expiry)
          sweep = m.erase(sweep);
        else
          ++sweep;
      }
    }
    if (m.size() >= capacities_[obj])
      return r; // full
    m.emplace(key, MapEntry{value, now});
    r.ok = 1;
    return r;
  }

  OpResult vector_get(size_t obj, uint64_t index, uint32_t) override {
    OpResult r;
    r.value = vectors_[obj][index % capacities_[obj]];
    return r;
  }

  OpResult vector_put(size_t obj, uint64_t index, uint64_t value,
                      uint32_t) override {
    guard_write(obj);
    vectors_[obj][index % capacities_[obj]] = value;
    return {};
  }

  OpResult dchain_allocate(size_t obj, int64_t now, uint32_t) override {
    guard_write(obj);
    Dchain &d = dchains_[obj];
    int64_t expiry = model_->states[obj].expiry_ticks;
    OpResult r;
    if (d.free_slots.empty() && expiry > 0) {
      for (uint64_t s = 0; s < capacities_[obj]; ++s)
        if (d.slots[s].allocated && now > d.slots[s].last_touch + expiry) {
          d.slots[s].allocated = false;
          d.free_slots.insert(s);
        }
    }
    if (d.free_slots.empty())
      return r; // exhausted
    uint64_t idx = *d.free_slots.begin();
    d.free_slots.erase(d.free_slots.begin());
    d.slots[idx] = {true, now};
    r.ok = 1;
    r.index = idx;
    return r;
  }

  OpResult dchain_rejuvenate(size_t obj, uint64_t index, int64_t now,
                             uint32_t) override {
    guard_write(obj);
    Dchain &d = dchains_[obj];
    uint64_t idx = index % capacities_[obj];
    int64_t expiry = model_->states[obj].expiry_ticks;
    OpResult r;
    if (!d.slots[idx].allocated)
      return r;
    if (expiry > 0 && now > d.slots[idx].last_touch + expiry) {
      d.slots[idx].allocated = false;
      d.free_slots.insert(idx);
      return r; // lapsed before this access
    }
    d.slots[idx].last_touch = now;
    r.ok = 1;
    return r;
  }

  OpResult sketch_touch(size_t obj, const std::string &key, uint32_t) override {
    guard_write(obj);
    const StateObjectDecl &decl = model_->states[obj];
    for (uint32_t row = 0; row < decl.sketch_depth; ++row) {
      uint64_t col = detail::sketch_row_hash(key, row, decl.capacity);
      sketches_[obj][row * decl.capacity + col] += 1;
    }
    return {};
  }

  OpResult sketch_query(size_t obj, const std::string &key, uint32_t) override {
    const StateObjectDecl &decl = model_->states[obj];
    uint64_t est = ~0ull;
    for (uint32_t row = 0; row < decl.sketch_depth; ++row) {
      uint64_t col = detail::sketch_row_hash(key, row, decl.capacity);
      est = std::min(est, sketches_[obj][row * decl.capacity + col]);
    }
    OpResult r;
    r.estimate = est;
    return r;
  }

private:
  struct MapEntry {
    uint64_t value = 0;
    int64_t last_touch = 0;
  };
  struct DchainSlot {
    bool allocated = false;
    int64_t last_touch = 0;
  };
  struct Dchain {
    std::set<uint64_t> free_slots;
    std::vector<DchainSlot> slots;
  };

  void guard_write(size_t obj) const {
    if (model_->states[obj].read_only)
      throw std::logic_error("write to read-only object " +
                             model_->states[obj].name);
  }

  const NfModel *model_;
  std::vector<std::unordered_map<std::string, MapEntry>> maps_;
  std::vector<std::vector<uint64_t>> vectors_;
  std::vector<Dchain> dchains_;
  std::vector<std::vector<uint64_t>> sketches_;
  std::vector<uint64_t> capacities_;
};

/// Shared store for the lock-based executor. Values live in one instance;
/// expiring structures keep one aging timestamp per core so that reads
/// rejuvenate locally. A core that suspects an entry lapsed takes a write
/// lock, inspects every core's copy, and either clears the entry globally
/// or re-syncs its own timestamp with the newest.
class LockStateStore : public StateBackend {
public:
  LockStateStore(const NfModel &model, uint32_t cores, LockCounters *counters)
      : model_(&model), cores_(cores), counters_(counters), plain_(model, 1) {
    aged_.resize(model.states.size());
    for (const auto &init : model.map_inits) {
      if (model.states[init.object].expiry_ticks <= 0)
        continue; // already seeded in the plain store
      AgedEntry e;
      e.value = init.value;
      e.age.assign(cores_, 0);
      std::string key(init.key.bytes().begin(), init.key.bytes().end());
      aged_[init.object].emplace(std::move(key), std::move(e));
    }
  }

  OpResult map_get(size_t obj, const std::string &key, int64_t now,
                   uint32_t core) override {
    int64_t expiry = model_->states[obj].expiry_ticks;
    if (expiry <= 0)
      return plain_.map_get(obj, key, now, core);
    auto &m = aged_maps(obj);
    auto it = m.find(key);
    OpResult r;
    if (it == m.end())
      return r;
    AgedEntry &e = it->second;
    if (now > e.age[core] + expiry) {
      counters_->expiry_write_locks += 1;
      int64_t newest = *std::max_element(e.age.begin(), e.age.end());
      if (now > newest + expiry) {
        m.erase(it);
        counters_->global_clears += 1;
        return r;
      }
    }
    e.age[core] = now;
    r.hit = 1;
    r.value = e.value;
    return r;
  }

  OpResult map_put(size_t obj, const std::string &key, uint64_t value,
                   int64_t now, uint32_t core) override {
    int64_t expiry = model_->states[obj].expiry_ticks;
    if (expiry <= 0)
      return plain_.map_put(obj, key, value, now, core);
    if (model_->states[obj].read_only)
      throw std::logic_error("write to read-only object " +
                             model_->states[obj].name);
    auto &m = aged_maps(obj);
    OpResult r;
    auto it = m.find(key);
    if (it != m.end()) {
      it->second.value = value;
      std::fill(it->second.age.begin(), it->second.age.end(), now);
      r.ok = 1;
      return r;
    }
    if (m.size() >= model_->states[obj].capacity) {
      for (auto sweep = m.begin(); sweep != m.end();) {
        int64_t newest =
            *std::max_element(sweep->second.age.begin(), sweep->second.age.end());
        if (now > newest + expiry) {
          sweep = m.erase(sweep);
          counters_->global_clears += 1;
        } else {
          ++sweep;
        }
      }
    }
    if (m.size() >= model_->states[obj].capacity)
      return r;
    AgedEntry e;
    e.value = value;
    e.age.assign(cores_, now);
    m.emplace(key, std::move(e));
    r.ok = 1;
    return r;
  }

  OpResult vector_get(size_t obj, uint64_t index, uint32_t core) override {
    return plain_.vector_get(obj, index, core);
  }
  OpResult vector_put(size_t obj, uint64_t index, uint64_t value,
                      uint32_t core) override {
    return plain_.vector_put(obj, index, value, core);
  }

  OpResult dchain_allocate(size_t obj, int64_t now, uint32_t core) override {
    // allocation happens under the full write lock; plain semantics match
    return plain_.dchain_allocate(obj, now, core);
  }
  OpResult dchain_rejuvenate(size_t obj, uint64_t index, int64_t now,
                             uint32_t core) override {
    return plain_.dchain_rejuvenate(obj, index, now, core);
  }

  OpResult sketch_touch(size_t obj, const std::string &key,
                        uint32_t core) override {
    return plain_.sketch_touch(obj, key, core);
  }
  OpResult sketch_query(size_t obj, const std::string &key,
                        uint32_t core) override {
    return plain_.sketch_query(obj, key, core);
  }

private:
  struct AgedEntry {
    uint64_t value = 0;
    std::vector<int64_t> age;
  };

  std::unordered_map<std::string, AgedEntry> &aged_maps(size_t obj) {
    return aged_[obj];
  }

  const NfModel *model_;
  uint32_t cores_;
  LockCounters *counters_;
  PlainStateStore plain_; // non-expiring structures share plain semantics
  std::vector<std::unordered_map<std::string, AgedEntry>> aged_;
};

} // namespace rsshard
