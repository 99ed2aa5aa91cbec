#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rsshard {

/// Linear equation system over GF(2) with hard XOR equations and soft
/// per-variable unit equations. Hard rows are eliminated once; attempts then
/// layer soft targets on top and either produce a full assignment or name
/// the soft equations participating in the contradiction (the conflict
/// core), which the caller can thin and retry.
class Gf2System {
public:
  explicit Gf2System(size_t unknowns)
      : cols_(unknowns), words_((unknowns + 63) / 64) {}

  size_t unknowns() const { return cols_; }

  /// XOR of the listed variables equals rhs.
  void add_hard(const std::vector<size_t> &vars, bool rhs) {
    Row r = empty_row();
    for (size_t v : vars) {
      if (v >= cols_)
        throw std::out_of_range("gf2 variable out of range");
      r.bits[v / 64] ^= 1ull << (v % 64);
    }
    r.rhs = rhs;
    hard_pending_.push_back(std::move(r));
  }

  size_t hard_rows() const { return hard_pending_.size(); }

  /// Eliminates the hard rows. Returns false if they are inconsistent.
  bool finalize() {
    base_rows_.clear();
    base_pivot_.assign(cols_, -1);
    for (Row &r : hard_pending_)
      if (!insert(base_rows_, base_pivot_, std::move(r), nullptr))
        return false;
    hard_pending_.clear();
    finalized_ = true;
    return true;
  }

  size_t rank() const { return base_rows_.size(); }

  struct SoftTarget {
    size_t var;
    bool target;
  };

  struct Attempt {
    bool ok = false;
    std::vector<bool> assignment;      // when ok
    std::vector<size_t> conflict_core; // soft indices (into the softs argument)
  };

  /// Adds unit equations var=target for every soft, in order. On the first
  /// contradiction, reports which softs combined into it.
  Attempt attempt(const std::vector<SoftTarget> &softs) const {
    if (!finalized_)
      throw std::logic_error("gf2 system not finalized");
    size_t soft_words = (softs.size() + 63) / 64;
    std::vector<Row> rows = base_rows_;
    std::vector<int> pivot = base_pivot_;
    for (Row &r : rows)
      r.soft.assign(soft_words, 0);

    Attempt out;
    for (size_t i = 0; i < softs.size(); ++i) {
      Row r = empty_row();
      r.soft.assign(soft_words, 0);
      if (softs[i].var >= cols_)
        throw std::out_of_range("soft variable out of range");
      r.bits[softs[i].var / 64] ^= 1ull << (softs[i].var % 64);
      r.rhs = softs[i].target;
      r.soft[i / 64] |= 1ull << (i % 64);
      Row conflict = empty_row();
      if (!insert(rows, pivot, std::move(r), &conflict)) {
        for (size_t w = 0; w < conflict.soft.size(); ++w) {
          uint64_t bits = conflict.soft[w];
          while (bits) {
            unsigned b = static_cast<unsigned>(__builtin_ctzll(bits));
            out.conflict_core.push_back(w * 64 + b);
            bits &= bits - 1;
          }
        }
        return out;
      }
    }

    // back-substitute, highest pivot column first. An installed row's first
    // set bit is its pivot, so every other set column is larger and already
    // resolved; soft units give every column a pivot.
    out.ok = true;
    out.assignment.assign(cols_, false);
    for (size_t ci = cols_; ci-- > 0;) {
      int ri = pivot[ci];
      if (ri < 0)
        continue;
      const Row &r = rows[static_cast<size_t>(ri)];
      bool v = r.rhs;
      for (size_t w = 0; w < words_; ++w) {
        uint64_t bits = r.bits[w];
        while (bits) {
          unsigned b = static_cast<unsigned>(__builtin_ctzll(bits));
          size_t col = w * 64 + b;
          if (col != ci && out.assignment[col])
            v = !v;
          bits &= bits - 1;
        }
      }
      out.assignment[ci] = v;
    }
    return out;
  }

private:
  struct Row {
    std::vector<uint64_t> bits;
    std::vector<uint64_t> soft;
    bool rhs = false;
  };

  Row empty_row() const {
    Row r;
    r.bits.assign(words_, 0);
    return r;
  }

  static void xor_into(Row &dst, const Row &src) {
    for (size_t w = 0; w < dst.bits.size(); ++w)
      dst.bits[w] ^= src.bits[w];
    for (size_t w = 0; w < dst.soft.size() && w < src.soft.size(); ++w)
      dst.soft[w] ^= src.soft[w];
    dst.rhs = dst.rhs != src.rhs;
  }

  int first_set(const Row &r) const {
    for (size_t w = 0; w < words_; ++w)
      if (r.bits[w])
        return static_cast<int>(w * 64 +
                                static_cast<unsigned>(__builtin_ctzll(r.bits[w])));
    return -1;
  }

  /// Reduces `r` against existing pivots; installs it at its first free
  /// column or detects the zero row. Returns false on contradiction, with
  /// the combined row left in *conflict.
  bool insert(std::vector<Row> &rows, std::vector<int> &pivot, Row r,
              Row *conflict) const {
    for (;;) {
      int c = first_set(r);
      if (c < 0) {
        if (!r.rhs)
          return true; // implied, no new information
        if (conflict)
          *conflict = std::move(r);
        return false;
      }
      int existing = pivot[static_cast<size_t>(c)];
      if (existing < 0) {
        pivot[static_cast<size_t>(c)] = static_cast<int>(rows.size());
        rows.push_back(std::move(r));
        return true;
      }
      xor_into(r, rows[static_cast<size_t>(existing)]);
    }
  }

  size_t cols_;
  size_t words_;
  bool finalized_ = false;
  std::vector<Row> hard_pending_;
  std::vector<Row> base_rows_;
  std::vector<int> base_pivot_;
};

} // namespace rsshard
