#include <catch2/catch_amalgamated.hpp>

#include "rsshard/keygen.hpp"
#include "rsshard/pipeline.hpp"

using namespace rsshard;

namespace {

std::string corpus(const std::string &name) {
  return std::string(RSSHARD_CORPUS_DIR) + "/" + name;
}

PairAtom same_field(Field f) {
  KeyAtom a;
  a.field = f;
  a.width = field_width_bits(f);
  return {a, a};
}

PairAtom cross_field(Field at_a, Field at_b) {
  KeyAtom a, b;
  a.field = at_a;
  a.width = field_width_bits(at_a);
  b.field = at_b;
  b.width = field_width_bits(at_b);
  return {a, b};
}

PairConstraintSet analyze_constraints(const std::string &file) {
  NfModel m = load_model(corpus(file));
  StatefulReport rep = filter_readonly(build_report(enumerate_paths(m)), m);
  SolveResult s = solve_sharding(rep, m, NicProfile::default_profile());
  REQUIRE(s.feasible());
  return emit_constraints(*s.solution, m);
}

Packet random_l4_packet(Rng &rng) {
  Packet p;
  p.ipv4_src = static_cast<uint32_t>(rng.next());
  p.ipv4_dst = static_cast<uint32_t>(rng.next());
  p.sport = static_cast<uint16_t>(rng.next());
  p.dport = static_cast<uint16_t>(rng.next());
  p.proto = rng.chance(1, 2) ? kProtoTcp : kProtoUdp;
  return p;
}

} // namespace

TEST_CASE("fieldset selection: address-only requirement on an address+port nic") {
  PairConstraintSet c = analyze_constraints("policer.nf");
  auto fieldsets = select_fieldsets(c, NicProfile::default_profile(), 2);
  REQUIRE(fieldsets[1].id == "ip4-tcpudp"); // smallest covering option
  REQUIRE(fieldsets[1].contains(Field::Ipv4Dst));
  REQUIRE(fieldsets[1].contains(Field::Sport));
}

TEST_CASE("fieldset selection prefers an exact cover when the nic has one") {
  NicProfile profile = NicProfile::default_profile();
  profile.supported_fieldsets.push_back(
      FieldSet("ip4-only", {Field::Ipv4Src, Field::Ipv4Dst}));
  PairConstraintSet c;
  PairConstraints pc;
  pc.iface_a = 0;
  pc.iface_b = 0;
  pc.disjuncts.push_back({same_field(Field::Ipv4Dst)});
  c.pairs.push_back(pc);
  auto fieldsets = select_fieldsets(c, profile, 1);
  REQUIRE(fieldsets[0].id == "ip4-only");
}

TEST_CASE("fieldset selection fails for fields the nic cannot hash") {
  PairConstraintSet c;
  PairConstraints pc;
  pc.iface_a = 0;
  pc.iface_b = 0;
  pc.disjuncts.push_back({same_field(Field::EthDst)});
  c.pairs.push_back(pc);
  REQUIRE_THROWS_AS(select_fieldsets(c, NicProfile::default_profile(), 1),
                    FieldsetInfeasible);
}

TEST_CASE("empty constraints: any quality random key is accepted, deterministically") {
  PairConstraintSet none;
  NicProfile profile = NicProfile::default_profile();
  auto fieldsets = select_fieldsets(none, profile, 2);
  KeySearchConfig cfg;
  cfg.seed = 5;
  RssConfigBundle a = synthesize_keys(none, fieldsets, {"lan", "wan"}, profile, cfg);
  RssConfigBundle b = synthesize_keys(none, fieldsets, {"lan", "wan"}, profile, cfg);
  REQUIRE_FALSE(a.interfaces[0].key.bits.is_zero());
  REQUIRE(a.interfaces[0].key.to_hex() == b.interfaces[0].key.to_hex());
  REQUIRE(a.interfaces[1].key.to_hex() == b.interfaces[1].key.to_hex());
  DistributionScore score = score_distribution(a, 10000, 16, 5);
  REQUIRE(score.accepted(1.5));
}

TEST_CASE("firewall keys: constrained pairs always hash equally") {
  PairConstraintSet c = analyze_constraints("fw.nf");
  NicProfile profile = NicProfile::default_profile();
  auto fieldsets = select_fieldsets(c, profile, 2);
  KeySearchConfig cfg;
  cfg.seed = 7;
  RssConfigBundle bundle =
      synthesize_keys(c, fieldsets, {"lan", "wan"}, profile, cfg);
  VerificationReport rep = verify_keys(bundle, c, 100000, 7);
  REQUIRE(rep.violations == 0);
  REQUIRE(rep.constrained_samples >= 300000); // three constrained pairs
  // swapped-pair spot check on the raw hashes
  Rng rng(70);
  ToeplitzTable lan(bundle.interfaces[0].key, 12);
  ToeplitzTable wan(bundle.interfaces[1].key, 12);
  for (int i = 0; i < 2000; ++i) {
    Packet p = random_l4_packet(rng);
    Packet q = p;
    std::swap(q.ipv4_src, q.ipv4_dst);
    std::swap(q.sport, q.dport);
    auto in_p = extract_hash_input(p, bundle.interfaces[0].fieldset);
    auto in_q = extract_hash_input(q, bundle.interfaces[1].fieldset);
    REQUIRE(lan.hash(*in_p) == wan.hash(*in_q));
  }
}

TEST_CASE("policer key cancels everything but the destination address") {
  PairConstraintSet c = analyze_constraints("policer.nf");
  NicProfile profile = NicProfile::default_profile();
  auto fieldsets = select_fieldsets(c, profile, 2);
  KeySearchConfig cfg;
  cfg.seed = 11;
  RssConfigBundle bundle =
      synthesize_keys(c, fieldsets, {"lan", "wan"}, profile, cfg);
  Rng rng(71);
  ToeplitzTable wan(bundle.interfaces[1].key, 12);
  for (int i = 0; i < 5000; ++i) {
    Packet p = random_l4_packet(rng);
    Packet q = random_l4_packet(rng); // different src and ports
    q.ipv4_dst = p.ipv4_dst;
    auto in_p = extract_hash_input(p, bundle.interfaces[1].fieldset);
    auto in_q = extract_hash_input(q, bundle.interfaces[1].fieldset);
    REQUIRE(wan.hash(*in_p) == wan.hash(*in_q));
  }
  VerificationReport rep = verify_keys(bundle, c, 100000, 11);
  REQUIRE(rep.violations == 0);
}

TEST_CASE("single-interface symmetric tuple constraint") {
  PairConstraintSet c;
  PairConstraints pc;
  pc.iface_a = 0;
  pc.iface_b = 0;
  pc.disjuncts.push_back({cross_field(Field::Ipv4Src, Field::Ipv4Dst),
                          cross_field(Field::Ipv4Dst, Field::Ipv4Src),
                          cross_field(Field::Sport, Field::Dport),
                          cross_field(Field::Dport, Field::Sport)});
  c.pairs.push_back(pc);
  NicProfile profile = NicProfile::default_profile();
  auto fieldsets = select_fieldsets(c, profile, 1);
  KeySearchConfig cfg;
  cfg.seed = 13;
  RssConfigBundle bundle = synthesize_keys(c, fieldsets, {"port0"}, profile, cfg);
  Rng rng(72);
  ToeplitzTable t(bundle.interfaces[0].key, 12);
  for (int i = 0; i < 5000; ++i) {
    Packet p = random_l4_packet(rng);
    Packet q = p;
    std::swap(q.ipv4_src, q.ipv4_dst);
    std::swap(q.sport, q.dport);
    auto in_p = extract_hash_input(p, fieldsets[0]);
    auto in_q = extract_hash_input(q, fieldsets[0]);
    REQUIRE(t.hash(*in_p) == t.hash(*in_q));
  }
}

TEST_CASE("a uniformly random key fails the symmetric constraint quickly") {
  PairConstraintSet c;
  PairConstraints pc;
  pc.iface_a = 0;
  pc.iface_b = 0;
  pc.disjuncts.push_back({cross_field(Field::Ipv4Src, Field::Ipv4Dst),
                          cross_field(Field::Ipv4Dst, Field::Ipv4Src),
                          cross_field(Field::Sport, Field::Dport),
                          cross_field(Field::Dport, Field::Sport)});
  c.pairs.push_back(pc);
  Rng rng(73);
  RssConfigBundle bundle;
  RssConfigBundle::PerInterface ic;
  ic.interface_name = "port0";
  ic.key = RssKey::random(rng);
  ic.fieldset = FieldSet("ip4-tcpudp", {Field::Ipv4Src, Field::Ipv4Dst,
                                        Field::Sport, Field::Dport});
  ic.table = IndirectionTable::round_robin(512, 16);
  bundle.interfaces.push_back(std::move(ic));
  VerificationReport rep = verify_keys(bundle, c, 10000, 73);
  REQUIRE(rep.violations > 0);
}

TEST_CASE("zero-window key: zero violations but total collisions, caught by score") {
  PairConstraintSet c = analyze_constraints("fw.nf");
  RssConfigBundle bundle;
  for (const char *name : {"lan", "wan"}) {
    RssConfigBundle::PerInterface ic;
    ic.interface_name = name;
    ic.key = RssKey::zeros();
    // bits beyond the 96+32 window keep the key legal but never hashed
    for (size_t b = 96 + 32; b < ic.key.size(); ++b)
      ic.key.bits.set_bit(b, true);
    ic.fieldset = FieldSet("ip4-tcpudp", {Field::Ipv4Src, Field::Ipv4Dst,
                                          Field::Sport, Field::Dport});
    ic.table = IndirectionTable::round_robin(512, 16);
    bundle.interfaces.push_back(std::move(ic));
  }
  VerificationReport rep = verify_keys(bundle, c, 20000, 99);
  REQUIRE(rep.violations == 0);
  REQUIRE(rep.control_collision_rate() > 0.99);
  DistributionScore score = score_distribution(bundle, 10000, 16, 99);
  REQUIRE_FALSE(score.accepted(1.5));
  REQUIRE(score.max_mean_ratio >= 8.0);
}

TEST_CASE("degenerate first-bit key is rejected by the distribution gate") {
  RssConfigBundle bundle;
  RssConfigBundle::PerInterface ic;
  ic.interface_name = "lan";
  ic.key = RssKey::zeros();
  ic.key.bits.set_bit(0, true);
  ic.fieldset = FieldSet("ip4-tcpudp", {Field::Ipv4Src, Field::Ipv4Dst,
                                        Field::Sport, Field::Dport});
  ic.table = IndirectionTable::round_robin(512, 16);
  bundle.interfaces.push_back(std::move(ic));
  DistributionScore score = score_distribution(bundle, 10000, 16, 3);
  REQUIRE_FALSE(score.accepted(1.5));
  REQUIRE(score.max_mean_ratio >= 8.0);
}

TEST_CASE("a one-core indirection table is a table pathology, not a key one") {
  Rng rng(74);
  RssConfigBundle bundle;
  RssConfigBundle::PerInterface ic;
  ic.interface_name = "lan";
  ic.key = RssKey::random(rng);
  ic.fieldset = FieldSet("ip4-tcpudp", {Field::Ipv4Src, Field::Ipv4Dst,
                                        Field::Sport, Field::Dport});
  ic.table.entries.assign(512, 0);
  bundle.interfaces.push_back(std::move(ic));
  DistributionScore score = score_distribution(bundle, 10000, 16, 74);
  REQUIRE(score.max_mean_ratio == Catch::Approx(16.0));
}

TEST_CASE("all-zero-window keys satisfy every equality constraint") {
  // the hard side of the search is homogeneous, so the zero-window family
  // is always a solution; only quality rejection may remain
  PairConstraintSet c = analyze_constraints("fw.nf");
  Gf2System sys(2 * 416);
  detail::build_hash_equations(sys, c,
                               {FieldSet("ip4-tcpudp",
                                         {Field::Ipv4Src, Field::Ipv4Dst,
                                          Field::Sport, Field::Dport}),
                                FieldSet("ip4-tcpudp",
                                         {Field::Ipv4Src, Field::Ipv4Dst,
                                          Field::Sport, Field::Dport})},
                               416);
  REQUIRE(sys.finalize()); // consistent: all-zero assignment satisfies it
}

TEST_CASE("longer keys never hurt feasibility") {
  PairConstraintSet c = analyze_constraints("fw.nf");
  NicProfile profile = NicProfile::default_profile();
  profile.key_length_bits = 544; // 68 bytes
  auto fieldsets = select_fieldsets(c, profile, 2);
  KeySearchConfig cfg;
  cfg.seed = 15;
  RssConfigBundle bundle =
      synthesize_keys(c, fieldsets, {"lan", "wan"}, profile, cfg);
  REQUIRE(bundle.interfaces[0].key.size() == 544);
  REQUIRE(verify_keys(bundle, c, 20000, 15).violations == 0);
}

TEST_CASE("same seed reproduces the same bundle") {
  PairConstraintSet c = analyze_constraints("fw.nf");
  NicProfile profile = NicProfile::default_profile();
  auto fieldsets = select_fieldsets(c, profile, 2);
  KeySearchConfig cfg;
  cfg.seed = 21;
  RssConfigBundle a = synthesize_keys(c, fieldsets, {"lan", "wan"}, profile, cfg);
  RssConfigBundle b = synthesize_keys(c, fieldsets, {"lan", "wan"}, profile, cfg);
  REQUIRE(rss_config_to_text(a) == rss_config_to_text(b));
}

TEST_CASE("gf2 solver: conflict cores name the participating softs") {
  // x0 ^ x1 = 0 (hard); soft targets x0=1, x1=0 conflict through the hard row
  Gf2System sys(2);
  sys.add_hard({0, 1}, false);
  REQUIRE(sys.finalize());
  Gf2System::Attempt a = sys.attempt({{0, true}, {1, false}});
  REQUIRE_FALSE(a.ok);
  REQUIRE(a.conflict_core.size() == 2);

  // dropping either soft resolves it
  Gf2System::Attempt b = sys.attempt({{0, true}});
  REQUIRE(b.ok);
  REQUIRE(b.assignment[0]);
  REQUIRE(b.assignment[1]); // forced equal by the hard row
}

TEST_CASE("gf2 solver: inconsistent hard rows are detected") {
  Gf2System sys(2);
  sys.add_hard({0, 1}, false);
  sys.add_hard({0, 1}, true);
  REQUIRE_FALSE(sys.finalize());
}
