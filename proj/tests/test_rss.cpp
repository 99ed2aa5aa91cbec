#include <catch2/catch_amalgamated.hpp>

#include "rsshard/rss.hpp"

using namespace rsshard;

namespace {

// Reference evaluator, written straight from the rotating-key description:
// hash bit b (b = 0 is the most significant) is the XOR over all input bits
// x of input[x] AND key[x + b]. Kept independent of the library routine.
uint32_t reference_toeplitz(const BitString &key, const BitString &input) {
  uint32_t h = 0;
  for (size_t b = 0; b < 32; ++b) {
    unsigned acc = 0;
    for (size_t x = 0; x < input.size(); ++x)
      acc ^= (input.bit(x) & key.bit(x + b)) ? 1u : 0u;
    if (acc)
      h |= 0x80000000u >> b;
  }
  return h;
}

BitString random_bits(Rng &rng, size_t n) {
  BitString b = BitString::zeros(n);
  for (size_t i = 0; i < n; ++i)
    b.set_bit(i, rng.chance(1, 2));
  return b;
}

Packet sample_packet() {
  Packet p;
  p.ipv4_src = 0x01020304;
  p.ipv4_dst = 0x05060708;
  p.sport = 0x1111;
  p.dport = 0x2222;
  p.proto = kProtoTcp;
  return p;
}

} // namespace

TEST_CASE("zero key annihilates every input") {
  Rng rng(7);
  RssKey zero = RssKey::zeros();
  for (int i = 0; i < 32; ++i) {
    HashInput in = random_bits(rng, 96);
    REQUIRE(toeplitz_hash(zero, in) == 0u);
  }
}

TEST_CASE("zero input hashes to zero under any key") {
  Rng rng(8);
  for (int i = 0; i < 32; ++i) {
    RssKey k = RssKey::random(rng);
    REQUIRE(toeplitz_hash(k, BitString::zeros(96)) == 0u);
  }
}

TEST_CASE("input with only the first bit set selects the first key window") {
  Rng rng(9);
  RssKey k = RssKey::random(rng);
  HashInput in = BitString::zeros(96);
  in.set_bit(0, true);
  uint32_t expected = static_cast<uint32_t>(k.bits.slice_u64(0, 32));
  REQUIRE(toeplitz_hash(k, in) == expected);
}

TEST_CASE("1000 random pairs agree with the bit-at-a-time reference") {
  Rng rng(0xacce55);
  for (int i = 0; i < 1000; ++i) {
    RssKey k = RssKey::random(rng);
    size_t len = 8 * (1 + rng.below(48)); // up to 384 bits
    HashInput in = random_bits(rng, len);
    REQUIRE(toeplitz_hash(k, in) == reference_toeplitz(k.bits, in));
  }
}

TEST_CASE("byte-table evaluation equals the canonical routine") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    RssKey k = RssKey::random(rng);
    ToeplitzTable t(k, 12);
    HashInput in = random_bits(rng, 96);
    REQUIRE(t.hash(in) == toeplitz_hash(k, in));
  }
}

TEST_CASE("hash is linear in the input") {
  Rng rng(12);
  for (int i = 0; i < 64; ++i) {
    RssKey k = RssKey::random(rng);
    HashInput a = random_bits(rng, 96);
    HashInput b = random_bits(rng, 96);
    HashInput x = a;
    for (size_t j = 0; j < 96; ++j)
      x.set_bit(j, a.bit(j) != b.bit(j));
    REQUIRE(toeplitz_hash(k, x) ==
            (toeplitz_hash(k, a) ^ toeplitz_hash(k, b)));
  }
}

TEST_CASE("key bits beyond the input window never matter") {
  Rng rng(13);
  RssKey k = RssKey::random(rng);
  HashInput in = random_bits(rng, 96);
  uint32_t before = toeplitz_hash(k, in);
  for (size_t bit = 96 + 32; bit < k.size(); ++bit)
    k.bits.set_bit(bit, !k.bits.bit(bit));
  REQUIRE(toeplitz_hash(k, in) == before);
}

TEST_CASE("hash input extraction concatenates fields in canonical order") {
  Packet p = sample_packet();
  FieldSet four("ip4-tcpudp",
                {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport});
  auto in = extract_hash_input(p, four);
  REQUIRE(in);
  REQUIRE(in->size() == 96);
  REQUIRE(in->to_hex() == "010203040506070811112222");

  FieldSet dst_only("ip4-dst", {Field::Ipv4Dst});
  auto in2 = extract_hash_input(p, dst_only);
  REQUIRE(in2);
  REQUIRE(in2->size() == 32);
  REQUIRE(in2->to_hex() == "05060708");
}

TEST_CASE("swapped packets produce block-permuted inputs") {
  Rng rng(14);
  FieldSet four("ip4-tcpudp",
                {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport});
  for (int i = 0; i < 32; ++i) {
    Packet p;
    p.ipv4_src = static_cast<uint32_t>(rng.next());
    p.ipv4_dst = static_cast<uint32_t>(rng.next());
    p.sport = static_cast<uint16_t>(rng.next());
    p.dport = static_cast<uint16_t>(rng.next());
    p.proto = kProtoUdp;
    Packet q = p;
    std::swap(q.ipv4_src, q.ipv4_dst);
    std::swap(q.sport, q.dport);
    auto a = extract_hash_input(p, four);
    auto b = extract_hash_input(q, four);
    REQUIRE(a->slice_u64(0, 32) == b->slice_u64(32, 32));
    REQUIRE(a->slice_u64(32, 32) == b->slice_u64(0, 32));
    REQUIRE(a->slice_u64(64, 16) == b->slice_u64(80, 16));
    REQUIRE(a->slice_u64(80, 16) == b->slice_u64(64, 16));
  }
}

TEST_CASE("non-l4 packets fall back to the default queue") {
  Rng rng(15);
  RssEngine e;
  FieldSet four("ip4-tcpudp",
                {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport});
  e.configure(0, RssKey::random(rng), four,
              IndirectionTable::round_robin(512, 8));
  Packet p = sample_packet();
  p.proto = 1; // icmp
  REQUIRE(e.steer(0, p) == 0u);
}

TEST_CASE("steering uses the table and is deterministic") {
  Rng rng(16);
  FieldSet four("ip4-tcpudp",
                {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport});
  IndirectionTable all3;
  all3.entries.assign(512, 3);
  RssEngine e;
  e.configure(0, RssKey::random(rng), four, all3);
  for (int i = 0; i < 16; ++i) {
    Packet p = sample_packet();
    p.ipv4_src = static_cast<uint32_t>(rng.next());
    REQUIRE(e.steer(0, p) == 3u);
    REQUIRE(e.steer(0, p) == e.steer(0, p));
  }
}

TEST_CASE("an all-zero steering key is rejected at configuration") {
  FieldSet four("ip4-tcpudp",
                {Field::Ipv4Src, Field::Ipv4Dst, Field::Sport, Field::Dport});
  RssEngine e;
  REQUIRE_THROWS_AS(e.configure(0, RssKey::zeros(), four,
                                IndirectionTable::round_robin(512, 4)),
                    std::invalid_argument);
}

namespace {

uint64_t exhaustive_best_max_load(const std::vector<uint64_t> &loads,
                                  uint32_t cores) {
  size_t n = loads.size();
  uint64_t best = ~0ull;
  std::vector<uint32_t> assign(n, 0);
  for (;;) {
    std::vector<uint64_t> per_core(cores, 0);
    for (size_t i = 0; i < n; ++i)
      per_core[assign[i]] += loads[i];
    best = std::min(best, *std::max_element(per_core.begin(), per_core.end()));
    size_t k = 0;
    while (k < n && ++assign[k] == cores) {
      assign[k] = 0;
      ++k;
    }
    if (k == n)
      break;
  }
  return best;
}

} // namespace

TEST_CASE("rebalance leaves a balanced table unchanged") {
  IndirectionTable t = IndirectionTable::round_robin(8, 4);
  std::vector<uint64_t> loads(8, 5);
  IndirectionTable out = rebalance_table(t, loads, 4);
  REQUIRE(out.entries == t.entries);
}

TEST_CASE("rebalance matches the exhaustive optimum on one-core pile-up") {
  IndirectionTable t;
  t.entries.assign(8, 0); // everything owned by core 0
  std::vector<uint64_t> loads(8, 3);
  IndirectionTable out = rebalance_table(t, loads, 4);
  std::vector<uint64_t> per_core(4, 0);
  for (size_t i = 0; i < 8; ++i)
    per_core[out.entries[i]] += loads[i];
  uint64_t got = *std::max_element(per_core.begin(), per_core.end());
  REQUIRE(got == exhaustive_best_max_load(loads, 4));
  // within one entry load of the mean
  REQUIRE(got <= 24 / 4 + 3);
}

TEST_CASE("rebalance never raises the maximum and only moves ownership") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    IndirectionTable t;
    t.entries.resize(16);
    for (auto &e : t.entries)
      e = static_cast<CoreId>(rng.below(4));
    std::vector<uint64_t> loads(16);
    for (auto &l : loads)
      l = rng.below(100);
    auto max_load = [&](const IndirectionTable &tbl) {
      std::vector<uint64_t> per_core(4, 0);
      for (size_t i = 0; i < tbl.size(); ++i)
        per_core[tbl.entries[i]] += loads[i];
      return *std::max_element(per_core.begin(), per_core.end());
    };
    IndirectionTable out = rebalance_table(t, loads, 4);
    REQUIRE(max_load(out) <= max_load(t));
    REQUIRE(out.size() == t.size());
  }
}

TEST_CASE("rebalance strictly improves a skewed pile") {
  IndirectionTable t = IndirectionTable::round_robin(8, 4);
  std::vector<uint64_t> loads = {100, 90, 1, 1, 1, 1, 1, 1};
  // entries 0 and 4 belong to core 0; pile the weight there
  t.entries = {0, 1, 2, 3, 0, 1, 2, 3};
  loads = {100, 1, 1, 1, 90, 1, 1, 1};
  IndirectionTable out = rebalance_table(t, loads, 4);
  std::vector<uint64_t> per_core(4, 0);
  for (size_t i = 0; i < 8; ++i)
    per_core[out.entries[i]] += loads[i];
  REQUIRE(*std::max_element(per_core.begin(), per_core.end()) < 190);
}

TEST_CASE("rss config files round-trip byte for byte") {
  Rng rng(18);
  RssConfigBundle b;
  for (int i = 0; i < 2; ++i) {
    RssConfigBundle::PerInterface ic;
    ic.interface_name = i == 0 ? "lan" : "wan";
    ic.key = RssKey::random(rng);
    ic.fieldset = FieldSet("ip4-tcpudp", {Field::Ipv4Src, Field::Ipv4Dst,
                                          Field::Sport, Field::Dport});
    ic.table = IndirectionTable::round_robin(512, 16);
    b.interfaces.push_back(std::move(ic));
  }
  b.seed = 42;
  b.constraints_hash = 0xdeadbeef;
  std::string text = rss_config_to_text(b);
  RssConfigBundle back = rss_config_from_text(text);
  REQUIRE(rss_config_to_text(back) == text);
  REQUIRE(back.interfaces[0].key.to_hex() == b.interfaces[0].key.to_hex());
  REQUIRE(back.interfaces[1].table.entries == b.interfaces[1].table.entries);
}

TEST_CASE("nic profile file loads and validates") {
  NicProfile p = load_nic_profile(std::string(RSSHARD_CORPUS_DIR) +
                                  "/../profiles/e810.profile");
  REQUIRE(p.key_length_bits == 416);
  REQUIRE(p.table_size == 512);
  REQUIRE(p.supported_fieldsets.size() == 1);
  REQUIRE(p.hashable(Field::Ipv4Dst));
  REQUIRE_FALSE(p.hashable(Field::EthSrc));
}
