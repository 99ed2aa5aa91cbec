#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "rsshard/pipeline.hpp"

using namespace rsshard;

namespace {

std::string corpus(const std::string &name) {
  return std::string(RSSHARD_CORPUS_DIR) + "/" + name;
}

struct Analyzed {
  NfModel model;
  AnalysisReport report;
};

Analyzed analyze(const std::string &file, uint64_t seed = 3) {
  Analyzed a{load_model(corpus(file)), {}};
  AnalyzeOptions opts = AnalyzeOptions::with_seed(seed);
  opts.verify_samples = 2000;
  a.report = analyze_model(a.model, NicProfile::default_profile(), opts);
  return a;
}

TrafficSpec corpus_traffic(const std::string &name) {
  for (const CorpusEntry &e : load_corpus_manifest(RSSHARD_CORPUS_DIR))
    if (e.name == name)
      return e.traffic;
  throw std::runtime_error("no corpus entry " + name);
}

Packet flow_packet(uint64_t id, int64_t t, uint32_t iface, uint32_t src,
                   uint32_t dst, uint16_t sp, uint16_t dp) {
  Packet p;
  p.id = id;
  p.time = t;
  p.in_interface = iface;
  p.ipv4_src = src;
  p.ipv4_dst = dst;
  p.sport = sp;
  p.dport = dp;
  p.proto = kProtoUdp;
  p.eth_src = 0x020000000000ull | src;
  p.eth_dst = 0x020000000000ull | dst;
  return p;
}

} // namespace

TEST_CASE("one core reproduces the sequential log exactly") {
  Analyzed a = analyze("fw.nf");
  TrafficSpec spec = corpus_traffic("fw");
  spec.packets = 5000;
  Trace trace = gen_traffic(spec, 5);
  BehaviorLog seq = exec_sequential(a.model, trace);
  SimConfig cfg;
  cfg.cores = 1;
  cfg.capacity = SimConfig::Capacity::Replicate;
  auto [log, metrics] = exec_shared_nothing(a.model, *a.report.bundle, trace, cfg);
  REQUIRE(metrics.cross_core_accesses == 0);
  EquivalenceReport eq = check_equivalence(seq, log, a.model);
  REQUIRE(eq.equivalent);
}

TEST_CASE("firewall shared-nothing equivalence across core counts") {
  Analyzed a = analyze("fw.nf");
  TrafficSpec spec = corpus_traffic("fw");
  spec.packets = 20000;
  Trace trace = gen_traffic(spec, 6);
  BehaviorLog seq = exec_sequential(a.model, trace);
  for (uint32_t cores : {2u, 4u, 8u, 16u}) {
    SimConfig cfg;
    cfg.cores = cores;
    cfg.capacity = SimConfig::Capacity::Replicate;
    auto [log, metrics] = exec_shared_nothing(a.model, *a.report.bundle, trace, cfg);
    REQUIRE(metrics.cross_core_accesses == 0);
    REQUIRE(metrics.total_packets() == trace.packets.size());
    EquivalenceReport eq = check_equivalence(seq, log, a.model);
    INFO(cores << " cores: " << eq.to_text());
    REQUIRE(eq.equivalent);
  }
}

TEST_CASE("nat shared-nothing equivalence holds modulo the port abstraction") {
  Analyzed a = analyze("nat.nf");
  REQUIRE(a.report.strategy == "shared-nothing");
  TrafficSpec spec = corpus_traffic("nat");
  spec.packets = 20000;
  Trace trace = gen_traffic(spec, 7);
  BehaviorLog seq = exec_sequential(a.model, trace);
  SimConfig cfg;
  cfg.cores = 8;
  cfg.capacity = SimConfig::Capacity::Replicate;
  auto [log, metrics] = exec_shared_nothing(a.model, *a.report.bundle, trace, cfg);
  REQUIRE(metrics.cross_core_accesses == 0);
  REQUIRE(check_equivalence(seq, log, a.model).equivalent);

  // and the exact-comparison version must fail: ports really do differ
  NfModel no_abstraction = a.model;
  no_abstraction.abstract_fields.clear();
  REQUIRE_FALSE(check_equivalence(seq, log, no_abstraction).equivalent);
}

TEST_CASE("every flow lands on exactly one core in shared-nothing mode") {
  Analyzed a = analyze("fw.nf");
  TrafficSpec spec = corpus_traffic("fw");
  spec.packets = 8000;
  Trace trace = gen_traffic(spec, 8);
  SimConfig cfg;
  cfg.cores = 8;
  cfg.capacity = SimConfig::Capacity::Replicate;

  // canonical flow identity: the unordered endpoint pair
  auto flow_of = [](const Packet &p) {
    uint64_t a = (static_cast<uint64_t>(p.ipv4_src) << 16) | p.sport;
    uint64_t b = (static_cast<uint64_t>(p.ipv4_dst) << 16) | p.dport;
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  };
  std::map<std::pair<uint64_t, uint64_t>, std::set<uint32_t>> cores_of_flow;
  std::map<uint64_t, const Packet *> by_id;
  for (const Packet &p : trace.packets)
    by_id[p.id] = &p;
  std::vector<std::vector<uint64_t>> order_per_core(cfg.cores);
  exec_shared_nothing(a.model, *a.report.bundle, trace, cfg, nullptr,
                      [&](uint32_t core, uint64_t id) {
                        cores_of_flow[flow_of(*by_id[id])].insert(core);
                        order_per_core[core].push_back(id);
                      });
  for (const auto &[flow, cores] : cores_of_flow)
    REQUIRE(cores.size() == 1);
  for (const auto &seq : order_per_core)
    for (size_t i = 1; i < seq.size(); ++i)
      REQUIRE(seq[i - 1] < seq[i]); // per-core processing keeps trace order
}

TEST_CASE("lock-based execution preserves sequential behavior for all models") {
  for (const char *name : {"nop", "sbridge", "dbridge", "fw", "policer", "psd",
                           "nat", "cl", "lb"}) {
    INFO(name);
    NfModel model = load_model(corpus(std::string(name) + ".nf"));
    TrafficSpec spec = corpus_traffic(name);
    spec.packets = 4000;
    Trace trace = gen_traffic(spec, 9);
    BehaviorLog seq = exec_sequential(model, trace);
    SimConfig cfg;
    cfg.cores = 8;
    cfg.capacity = SimConfig::Capacity::Replicate;
    cfg.seed = 9;
    auto [log, metrics] = exec_lock_based(model, trace, cfg);
    REQUIRE(metrics.total_packets() == trace.packets.size());
    REQUIRE(check_equivalence(seq, log, model).equivalent);
  }
}

TEST_CASE("policer under locks: every download packet takes a write lock") {
  NfModel model = load_model(corpus("policer.nf"));
  TrafficSpec spec = corpus_traffic("policer");
  spec.packets = 5000;
  Trace trace = gen_traffic(spec, 10);
  SimConfig cfg;
  cfg.cores = 16;
  cfg.seed = 10;
  auto [log, metrics] = exec_lock_based(model, trace, cfg);
  (void)log;
  REQUIRE(metrics.write_lock_acquisitions == trace.packets.size());
  REQUIRE(metrics.restarted_packets == trace.packets.size());
}

TEST_CASE("firewall under locks: only first packets of flows write") {
  NfModel model = load_model(corpus("fw.nf"));
  TrafficSpec spec = corpus_traffic("fw");
  spec.packets = 6000;
  spec.symmetric_ratio = 0; // lan-only so inserts are exactly one per flow
  spec.flows = 500;
  Trace trace = gen_traffic(spec, 11);
  SimConfig cfg;
  cfg.cores = 8;
  cfg.seed = 11;
  auto [log, metrics] = exec_lock_based(model, trace, cfg);
  (void)log;
  REQUIRE(metrics.write_lock_acquisitions == spec.flows);
  REQUIRE(metrics.expiry_write_locks == 0);
  REQUIRE(metrics.read_lock_acquisitions == trace.packets.size());
}

TEST_CASE("lock write pressure grows strictly with churn") {
  NfModel model = load_model(corpus("fw.nf"));
  uint64_t previous = 0;
  bool first = true;
  for (uint64_t churn : {0ull, 1ull, 10ull, 100ull}) {
    TrafficSpec spec = corpus_traffic("fw");
    spec.packets = 10000;
    spec.symmetric_ratio = 0;
    spec.churn_per_1000 = churn;
    Trace trace = gen_traffic(spec, 12);
    SimConfig cfg;
    cfg.cores = 8;
    cfg.seed = 12;
    auto [log, metrics] = exec_lock_based(model, trace, cfg);
    (void)log;
    if (!first)
      REQUIRE(metrics.write_lock_acquisitions > previous);
    previous = metrics.write_lock_acquisitions;
    first = false;
  }
}

namespace {

// aging cache keyed coarser than the steering: one destination aggregates
// packets that land on every core
const char *kAgeCacheText = R"(model agecache 1
interface lan
interface wan
state map seen capacity 1024 key ip4 expiry 100
pipeline lan
  r = map_get seen [ipv4_dst]
  if r.hit
    forward wan
  else
    map_put seen [ipv4_dst] 1
    forward wan
  end
end
pipeline wan
  forward lan
end
)";

Trace spread_trace(uint32_t dst, uint64_t packets, int64_t start, int64_t step,
                   uint64_t first_id) {
  Trace t;
  for (uint64_t i = 0; i < packets; ++i)
    t.packets.push_back(flow_packet(first_id + i, start + step * static_cast<int64_t>(i), 0,
                                    0x0a000000u + static_cast<uint32_t>(i * 131),
                                    dst, static_cast<uint16_t>(1024 + i * 7),
                                    static_cast<uint16_t>(2048 + i * 13)));
  return t;
}

} // namespace

TEST_CASE("rejuvenation: an entry touched on every core never takes expiry locks") {
  NfModel model = parse_model_or_throw(kAgeCacheText);
  Trace trace = spread_trace(0xac100001, 600, 0, 1, 0);
  SimConfig cfg;
  cfg.cores = 4;
  cfg.seed = 13;
  auto [log, metrics] = exec_lock_based(model, trace, cfg);
  (void)log;
  // varying sources spread the one destination's packets over all cores
  for (uint64_t c : metrics.per_core_packets)
    REQUIRE(c > 0);
  REQUIRE(metrics.expiry_write_locks == 0);
  REQUIRE(metrics.global_clears == 0);
  REQUIRE(metrics.write_lock_acquisitions == 1); // the initial insert
}

TEST_CASE("rejuvenation: a silent entry is cleared globally exactly once") {
  NfModel model = parse_model_or_throw(kAgeCacheText);
  Trace active = spread_trace(0xac100001, 200, 0, 1, 0);
  // silence from t=200 to t=400, far beyond the expiry of 100, then revisit
  Trace tail = spread_trace(0xac100001, 50, 400, 1, 200);
  Trace trace = active;
  for (const Packet &p : tail.packets)
    trace.packets.push_back(p);
  SimConfig cfg;
  cfg.cores = 4;
  cfg.seed = 13;
  BehaviorLog seq = exec_sequential(model, trace);
  auto [log, metrics] = exec_lock_based(model, trace, cfg);
  REQUIRE(metrics.global_clears == 1);
  REQUIRE(metrics.expiry_write_locks == 1);
  // two inserts: the initial one and the revival after the clear
  REQUIRE(metrics.write_lock_acquisitions == 2);
  REQUIRE(check_equivalence(seq, log, model).equivalent);
}

TEST_CASE("equivalence checker: identical logs pass") {
  NfModel model = load_model(corpus("nop.nf"));
  BehaviorLog a, b;
  for (uint64_t i = 0; i < 10; ++i) {
    LogRecord r;
    r.packet_id = i;
    r.forwarded = true;
    r.out_interface = 1;
    r.final_fields[0] = i;
    a.records.push_back(r);
    b.records.push_back(r);
  }
  REQUIRE(check_equivalence(a, b, model).equivalent);
}

TEST_CASE("equivalence checker: consistent renaming of an abstract field passes") {
  NfModel model = load_model(corpus("nat.nf")); // declares sport abstract
  BehaviorLog seq, par;
  auto rec = [](uint64_t id, uint64_t sport) {
    LogRecord r;
    r.packet_id = id;
    r.forwarded = true;
    r.out_interface = 1;
    r.final_fields[static_cast<size_t>(Field::Sport)] = sport;
    r.final_fields[static_cast<size_t>(Field::Ipv4Dst)] = 0xac100001;
    return r;
  };
  // flow A: 1000 -> 7, flow B: 1001 -> 9, repeated consistently
  seq.records = {rec(0, 1000), rec(1, 1001), rec(2, 1000)};
  par.records = {rec(0, 7), rec(1, 9), rec(2, 7)};
  REQUIRE(check_equivalence(seq, par, model).equivalent);

  // inconsistent renaming: same sequential port maps to two parallel ports
  par.records = {rec(0, 7), rec(1, 9), rec(2, 8)};
  REQUIRE_FALSE(check_equivalence(seq, par, model).equivalent);

  // non-injective renaming: two distinct flows share a parallel port in the
  // same context
  par.records = {rec(0, 7), rec(1, 7), rec(2, 7)};
  REQUIRE_FALSE(check_equivalence(seq, par, model).equivalent);
}

TEST_CASE("equivalence checker: drop-versus-forward divergence is reported") {
  NfModel model = load_model(corpus("nop.nf"));
  BehaviorLog a, b;
  LogRecord fwd;
  fwd.packet_id = 5;
  fwd.forwarded = true;
  fwd.out_interface = 1;
  LogRecord drop;
  drop.packet_id = 5;
  drop.forwarded = false;
  a.records.push_back(fwd);
  b.records.push_back(drop);
  EquivalenceReport eq = check_equivalence(a, b, model);
  REQUIRE_FALSE(eq.equivalent);
  REQUIRE(eq.first_mismatches.size() == 1);
  REQUIRE(eq.first_mismatches[0].packet_id == 5);
}

TEST_CASE("zipf traffic: the top 48 of 1000 flows carry about 80 percent") {
  TrafficSpec spec;
  spec.dist = TrafficSpec::Dist::Zipf;
  spec.packets = 50000;
  spec.flows = 1000;
  Trace trace = gen_traffic(spec, 14);
  std::map<std::tuple<uint32_t, uint32_t, uint16_t, uint16_t>, uint64_t> counts;
  for (const Packet &p : trace.packets)
    counts[{p.ipv4_src, p.ipv4_dst, p.sport, p.dport}] += 1;
  std::vector<uint64_t> sorted;
  for (const auto &[k, c] : counts)
    sorted.push_back(c);
  std::sort(sorted.rbegin(), sorted.rend());
  uint64_t top48 = 0;
  for (size_t i = 0; i < 48 && i < sorted.size(); ++i)
    top48 += sorted[i];
  double share = static_cast<double>(top48) / trace.packets.size();
  REQUIRE(share > 0.75);
  REQUIRE(share < 0.85);
}

TEST_CASE("zero churn keeps the flow set constant") {
  TrafficSpec spec;
  spec.packets = 10000;
  spec.flows = 100;
  Trace trace = gen_traffic(spec, 15);
  std::set<std::tuple<uint32_t, uint32_t, uint16_t, uint16_t>> flows;
  for (const Packet &p : trace.packets)
    flows.insert({p.ipv4_src, p.ipv4_dst, p.sport, p.dport});
  REQUIRE(flows.size() == 100);
}

TEST_CASE("heavy churn cycles flows through a ring") {
  TrafficSpec spec;
  spec.packets = 10000;
  spec.flows = 100;
  spec.churn_per_1000 = 100; // 1000 replacements over 100 flows: a full ring
  Trace trace = gen_traffic(spec, 16);
  std::set<std::tuple<uint32_t, uint32_t, uint16_t, uint16_t>> flows;
  for (const Packet &p : trace.packets)
    flows.insert({p.ipv4_src, p.ipv4_dst, p.sport, p.dport});
  REQUIRE(flows.size() <= 1000); // ring size bounds the distinct tuples

  // the ring wraps: tuples from the start window reappear near the end
  std::set<std::tuple<uint32_t, uint32_t, uint16_t, uint16_t>> head, tail;
  for (size_t i = 0; i < 500; ++i) {
    const Packet &p = trace.packets[i];
    head.insert({p.ipv4_src, p.ipv4_dst, p.sport, p.dport});
  }
  for (size_t i = trace.packets.size() - 500; i < trace.packets.size(); ++i) {
    const Packet &p = trace.packets[i];
    tail.insert({p.ipv4_src, p.ipv4_dst, p.sport, p.dport});
  }
  size_t shared = 0;
  for (const auto &f : head)
    if (tail.count(f))
      ++shared;
  REQUIRE(shared > 0);
}

TEST_CASE("churn traces replay with an identical arrival pattern") {
  TrafficSpec spec;
  spec.packets = 5000;
  spec.flows = 100;
  spec.churn_per_1000 = 10;
  Trace a = gen_traffic(spec, 17);
  Trace b = gen_traffic(spec, 17);
  REQUIRE(trace_to_binary(a) == trace_to_binary(b));
}

TEST_CASE("a single elephant flow cannot be split by rebalancing") {
  Analyzed a = analyze("fw.nf");
  TrafficSpec spec;
  spec.packets = 5000;
  spec.flows = 1;
  Trace trace = gen_traffic(spec, 18);
  SimConfig cfg;
  cfg.cores = 16;
  cfg.capacity = SimConfig::Capacity::Replicate;
  auto [log, metrics] = exec_shared_nothing(a.model, *a.report.bundle, trace, cfg);
  (void)log;
  SkewReport skew = measure_skew(metrics);
  REQUIRE(skew.max_mean_ratio == Catch::Approx(16.0));
  IndirectionTable balanced = rebalance_table(
      engine_from_bundle(*a.report.bundle, 16).config(0).table,
      metrics.table_entry_hits, 16);
  // nothing to move: one entry holds all the load
  std::vector<uint64_t> per_core(16, 0);
  for (size_t i = 0; i < balanced.size(); ++i)
    per_core[balanced.entries[i]] += metrics.table_entry_hits[i];
  REQUIRE(*std::max_element(per_core.begin(), per_core.end()) ==
          trace.packets.size());
}

TEST_CASE("rebalancing a zipf-loaded table lowers the maximum core load") {
  Analyzed a = analyze("fw.nf");
  TrafficSpec spec = corpus_traffic("fw");
  spec.dist = TrafficSpec::Dist::Zipf;
  spec.packets = 20000;
  spec.symmetric_ratio = 0;
  Trace trace = gen_traffic(spec, 19);
  SimConfig cfg;
  cfg.cores = 16;
  cfg.capacity = SimConfig::Capacity::Replicate;
  auto [log, metrics] = exec_shared_nothing(a.model, *a.report.bundle, trace, cfg);
  (void)log;
  uint64_t before = *std::max_element(metrics.per_core_packets.begin(),
                                      metrics.per_core_packets.end());

  RssConfigBundle rebalanced = *a.report.bundle;
  IndirectionTable balanced =
      rebalance_table(engine_from_bundle(rebalanced, 16).config(0).table,
                      metrics.table_entry_hits, 16);
  for (auto &ic : rebalanced.interfaces)
    ic.table = balanced;
  auto [log2, metrics2] = exec_shared_nothing(a.model, rebalanced, trace, cfg);
  (void)log2;
  uint64_t after = *std::max_element(metrics2.per_core_packets.begin(),
                                     metrics2.per_core_packets.end());
  REQUIRE(after < before);
}

TEST_CASE("shard capacity mode divides per-core capacity") {
  std::string text = R"(model tiny 1
interface a
state map m capacity 8 key ip4
pipeline a
  r = map_get m [ipv4_src]
  if r.hit
    forward a
  else
    p = map_put m [ipv4_src] 1
    if p.ok
      forward a
    else
      drop
    end
  end
end
)";
  NfModel model = parse_model_or_throw(text);
  Trace trace;
  for (uint64_t i = 0; i < 8; ++i)
    trace.packets.push_back(flow_packet(i, static_cast<int64_t>(i), 0,
                                        0x0a000000u + static_cast<uint32_t>(i),
                                        0xac100001, 1000, 2000));
  SimConfig cfg;
  cfg.cores = 4;
  cfg.capacity = SimConfig::Capacity::Shard; // per-core capacity 2
  SteerFn steer = [](const Packet &p) { return p.ipv4_src % 4; };
  auto [log, metrics] = exec_shared_nothing_steered(model, steer, trace, cfg);
  (void)metrics;
  // 8 sources spread 2 per core exactly fill the shards; all forwarded
  for (const auto &r : log.records)
    REQUIRE(r.forwarded);

  // squeeze everything onto one core: its 2-slot shard fills and drops appear
  SteerFn one_core = [](const Packet &) { return 0u; };
  auto [log2, metrics2] = exec_shared_nothing_steered(model, one_core, trace, cfg);
  (void)metrics2;
  size_t drops = 0;
  for (const auto &r : log2.records)
    if (!r.forwarded)
      ++drops;
  REQUIRE(drops == 6);
}
