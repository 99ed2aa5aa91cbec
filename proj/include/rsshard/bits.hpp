#pragma once

#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsshard {

/// Bit string with MSB-first addressing: bit 0 is the most significant bit
/// of byte 0. Hash keys and hash inputs are carried in this form.
class BitString {
public:
  BitString() = default;

  static BitString zeros(size_t bits) {
    BitString b;
    b.bits_ = bits;
    b.bytes_.assign((bits + 7) / 8, 0);
    return b;
  }

  static BitString from_bytes(std::vector<uint8_t> bytes) {
    BitString b;
    b.bits_ = bytes.size() * 8;
    b.bytes_ = std::move(bytes);
    return b;
  }

  static BitString from_hex(const std::string &hex) {
    if (hex.size() % 2 != 0)
      throw std::invalid_argument("hex string must have an even digit count");
    std::vector<uint8_t> bytes;
    bytes.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2)
      bytes.push_back(static_cast<uint8_t>((hex_digit(hex[i]) << 4) |
                                           hex_digit(hex[i + 1])));
    return from_bytes(std::move(bytes));
  }

  size_t size() const { return bits_; }
  bool empty() const { return bits_ == 0; }
  const std::vector<uint8_t> &bytes() const { return bytes_; }

  bool bit(size_t i) const {
    return (bytes_[i / 8] >> (7 - (i % 8))) & 1;
  }

  void set_bit(size_t i, bool v) {
    uint8_t mask = static_cast<uint8_t>(1u << (7 - (i % 8)));
    if (v)
      bytes_[i / 8] |= mask;
    else
      bytes_[i / 8] &= static_cast<uint8_t>(~mask);
  }

  /// Appends the low `width` bits of `value`, most significant first.
  void append_bits(uint64_t value, size_t width) {
    for (size_t i = 0; i < width; ++i) {
      bool v = (value >> (width - 1 - i)) & 1;
      if (bits_ % 8 == 0)
        bytes_.push_back(0);
      ++bits_;
      set_bit(bits_ - 1, v);
    }
  }

  /// Copies `width` bits from `src` starting at src_off into this string at
  /// dst_off. Ranges must already exist.
  void copy_bits(size_t dst_off, const BitString &src, size_t src_off,
                 size_t width) {
    for (size_t i = 0; i < width; ++i)
      set_bit(dst_off + i, src.bit(src_off + i));
  }

  uint64_t slice_u64(size_t off, size_t width) const {
    uint64_t v = 0;
    for (size_t i = 0; i < width; ++i)
      v = (v << 1) | (bit(off + i) ? 1u : 0u);
    return v;
  }

  bool is_zero() const {
    for (uint8_t b : bytes_)
      if (b)
        return false;
    return true;
  }

  std::string to_hex() const {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes_.size() * 2);
    for (uint8_t b : bytes_) {
      out.push_back(digits[b >> 4]);
      out.push_back(digits[b & 0xf]);
    }
    return out;
  }

  friend bool operator==(const BitString &a, const BitString &b) {
    return a.bits_ == b.bits_ && a.bytes_ == b.bytes_;
  }
  friend bool operator!=(const BitString &a, const BitString &b) {
    return !(a == b);
  }

private:
  static unsigned hex_digit(char c) {
    if (c >= '0' && c <= '9')
      return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f')
      return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F')
      return static_cast<unsigned>(c - 'A' + 10);
    throw std::invalid_argument("bad hex digit");
  }

  std::vector<uint8_t> bytes_;
  size_t bits_ = 0;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic PRNG used everywhere randomness is needed. Hand-rolled so
/// that identical seeds reproduce identical artifacts regardless of the
/// standard library in use.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x5eed5eed5eed5eedull) {}

  uint64_t next() {
    state_ = splitmix64(state_);
    return state_;
  }

  /// Uniform in [0, bound).
  uint64_t below(uint64_t bound) {
    return bound ? next() % bound : 0;
  }

  /// True with probability num/den.
  bool chance(uint64_t num, uint64_t den) { return below(den) < num; }

  /// Child generator for an independent purpose; stable derivation.
  Rng fork(uint64_t tag) const { return Rng(splitmix64(state_ ^ tag)); }

private:
  uint64_t state_;
};

/// FNV-1a over a byte view; used for content fingerprints in reports.
inline uint64_t fnv1a(const void *data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const uint8_t *p = static_cast<const uint8_t *>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string &s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

} // namespace rsshard
