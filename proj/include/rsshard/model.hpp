#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsshard/packet.hpp"

namespace rsshard {

// ---------------------------------------------------------------------------
// State object declarations

enum class StateKind : uint8_t { Map, Vector, Dchain, Sketch };

inline const char *state_kind_name(StateKind k) {
  switch (k) {
  case StateKind::Map:
    return "map";
  case StateKind::Vector:
    return "vector";
  case StateKind::Dchain:
    return "dchain";
  case StateKind::Sketch:
    return "sketch";
  }
  return "?";
}

struct StateObjectDecl {
  std::string name;
  StateKind kind = StateKind::Map;
  uint64_t capacity = 0;            // sketch: per-row width
  uint32_t sketch_depth = 5;
  std::vector<size_t> key_layout;   // widths in bits, map/sketch only
  int64_t expiry_ticks = 0;         // 0 = entries never age out
  bool read_only = false;

  size_t key_bits() const {
    size_t n = 0;
    for (size_t w : key_layout)
      n += w;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Expressions

struct KeyAtom {
  bool is_const = false;
  Field field = Field::Ipv4Src;
  size_t offset = 0; // bit offset within the field, from the MSB
  size_t width = 0;
  uint64_t value = 0; // constant atoms

  bool whole_field() const {
    return !is_const && offset == 0 && width == field_width_bits(field);
  }

  friend bool operator==(const KeyAtom &a, const KeyAtom &b) {
    if (a.is_const != b.is_const || a.width != b.width)
      return false;
    if (a.is_const)
      return a.value == b.value;
    return a.field == b.field && a.offset == b.offset;
  }
  friend bool operator<(const KeyAtom &a, const KeyAtom &b) {
    if (a.is_const != b.is_const)
      return !a.is_const; // fields order before constants
    if (a.is_const)
      return std::tie(a.value, a.width) < std::tie(b.value, b.width);
    return std::tie(a.field, a.offset, a.width) <
           std::tie(b.field, b.offset, b.width);
  }
};

struct KeyExpr {
  std::vector<KeyAtom> atoms;

  size_t total_bits() const {
    size_t n = 0;
    for (const KeyAtom &a : atoms)
      n += a.width;
    return n;
  }

  bool has_packet_fields() const {
    for (const KeyAtom &a : atoms)
      if (!a.is_const)
        return true;
    return false;
  }

  std::vector<KeyAtom> field_atoms() const {
    std::vector<KeyAtom> out;
    for (const KeyAtom &a : atoms)
      if (!a.is_const)
        out.push_back(a);
    return out;
  }

  friend bool operator==(const KeyExpr &a, const KeyExpr &b) {
    return a.atoms == b.atoms;
  }
};

inline std::string key_atom_to_string(const KeyAtom &a) {
  std::ostringstream os;
  if (a.is_const) {
    os << "0x" << std::hex << a.value << std::dec << ":" << a.width;
  } else {
    os << field_name(a.field);
    if (!a.whole_field())
      os << '[' << a.offset << ':' << a.width << ']';
  }
  return os.str();
}

inline std::string key_expr_to_string(const KeyExpr &k) {
  std::string s = "[";
  for (size_t i = 0; i < k.atoms.size(); ++i) {
    if (i)
      s += ", ";
    s += key_atom_to_string(k.atoms[i]);
  }
  return s + "]";
}

enum class BinOp : uint8_t { Add, Sub, And, Or, Xor, Shl, Shr };

struct ValueExpr;
using ValueExprPtr = std::shared_ptr<const ValueExpr>;

struct ValueExpr {
  enum class Kind : uint8_t { Const, FieldRef, ResultRef, Now, PacketSize, Binary };
  Kind kind = Kind::Const;
  uint64_t value = 0;             // Const
  Field field = Field::Ipv4Src;   // FieldRef
  std::string var, component;     // ResultRef
  BinOp op = BinOp::Add;          // Binary
  ValueExprPtr lhs, rhs;

  static ValueExprPtr constant(uint64_t v) {
    auto e = std::make_shared<ValueExpr>();
    e->kind = Kind::Const;
    e->value = v;
    return e;
  }
  static ValueExprPtr field_ref(Field f) {
    auto e = std::make_shared<ValueExpr>();
    e->kind = Kind::FieldRef;
    e->field = f;
    return e;
  }
  static ValueExprPtr result_ref(std::string var, std::string component) {
    auto e = std::make_shared<ValueExpr>();
    e->kind = Kind::ResultRef;
    e->var = std::move(var);
    e->component = std::move(component);
    return e;
  }
  static ValueExprPtr binary(BinOp op, ValueExprPtr l, ValueExprPtr r) {
    auto e = std::make_shared<ValueExpr>();
    e->kind = Kind::Binary;
    e->op = op;
    e->lhs = std::move(l);
    e->rhs = std::move(r);
    return e;
  }
};

inline std::string value_expr_to_string(const ValueExpr &e) {
  switch (e.kind) {
  case ValueExpr::Kind::Const: {
    std::ostringstream os;
    os << e.value;
    return os.str();
  }
  case ValueExpr::Kind::FieldRef:
    return field_name(e.field);
  case ValueExpr::Kind::ResultRef:
    return e.var + "." + e.component;
  case ValueExpr::Kind::Now:
    return "now";
  case ValueExpr::Kind::PacketSize:
    return "size";
  case ValueExpr::Kind::Binary: {
    const char *ops[] = {"+", "-", "&", "|", "^", "<<", ">>"};
    return "(" + value_expr_to_string(*e.lhs) + " " +
           ops[static_cast<int>(e.op)] + " " + value_expr_to_string(*e.rhs) + ")";
  }
  }
  return "?";
}

enum class Cmp : uint8_t { Eq, Ne, Lt, Le, Gt, Ge };

struct Condition {
  ValueExprPtr lhs;
  Cmp cmp = Cmp::Ne;
  ValueExprPtr rhs;
};

inline const char *cmp_name(Cmp c) {
  switch (c) {
  case Cmp::Eq: return "==";
  case Cmp::Ne: return "!=";
  case Cmp::Lt: return "<";
  case Cmp::Le: return "<=";
  case Cmp::Gt: return ">";
  case Cmp::Ge: return ">=";
  }
  return "?";
}

inline Cmp cmp_negate(Cmp c) {
  switch (c) {
  case Cmp::Eq: return Cmp::Ne;
  case Cmp::Ne: return Cmp::Eq;
  case Cmp::Lt: return Cmp::Ge;
  case Cmp::Le: return Cmp::Gt;
  case Cmp::Gt: return Cmp::Le;
  case Cmp::Ge: return Cmp::Lt;
  }
  return Cmp::Ne;
}

inline std::string condition_to_string(const Condition &c) {
  return value_expr_to_string(*c.lhs) + " " + cmp_name(c.cmp) + " " +
         value_expr_to_string(*c.rhs);
}

// ---------------------------------------------------------------------------
// Pipeline steps

enum class StateOpKind : uint8_t {
  MapGet,
  MapPut,
  VectorGet,
  VectorPut,
  DchainAllocate,
  DchainRejuvenate,
  SketchTouch,
  SketchQuery,
};

inline const char *state_op_name(StateOpKind k) {
  switch (k) {
  case StateOpKind::MapGet: return "map_get";
  case StateOpKind::MapPut: return "map_put";
  case StateOpKind::VectorGet: return "vector_get";
  case StateOpKind::VectorPut: return "vector_put";
  case StateOpKind::DchainAllocate: return "dchain_allocate";
  case StateOpKind::DchainRejuvenate: return "dchain_rejuvenate";
  case StateOpKind::SketchTouch: return "sketch_touch";
  case StateOpKind::SketchQuery: return "sketch_query";
  }
  return "?";
}

inline bool state_op_is_write(StateOpKind k) {
  switch (k) {
  case StateOpKind::MapGet:
  case StateOpKind::VectorGet:
  case StateOpKind::SketchQuery:
    return false;
  default:
    return true;
  }
}

struct Step;

struct StateOpStep {
  StateOpKind op;
  size_t object = 0;      // index into NfModel::states
  KeyExpr key;            // map/sketch ops
  ValueExprPtr index;     // vector ops, dchain_rejuvenate
  ValueExprPtr value;     // map_put, vector_put
  std::string result_var; // may be empty
};

struct BranchStep {
  Condition cond;
  std::vector<Step> then_steps;
  std::vector<Step> else_steps;
};

struct RewriteStep {
  Field field;
  ValueExprPtr value;
};

struct TerminalStep {
  bool forward = false;
  uint32_t out_interface = 0;
};

struct Step {
  enum class Kind : uint8_t { StateOp, Branch, Rewrite, Terminal } kind;
  StateOpStep state_op;
  std::shared_ptr<BranchStep> branch;
  RewriteStep rewrite;
  TerminalStep terminal;
};

// ---------------------------------------------------------------------------
// Whole-model structures

struct MapInitEntry {
  size_t object;
  BitString key;
  uint64_t value;
};

struct VectorInitEntry {
  size_t object;
  uint64_t index;
  uint64_t value;
};

/// Declared group of accesses whose sharding constraint may be replaced by
/// per-interface alternatives with identical externally visible behavior.
struct InterchangeableGroup {
  std::string name;
  std::vector<size_t> objects;
  std::map<uint32_t, KeyExpr> alternatives; // interface -> replacement key
};

struct NfModel {
  std::string name;
  int version = 1;
  std::vector<std::string> interfaces;
  std::vector<StateObjectDecl> states;
  std::vector<std::vector<Step>> pipelines; // one per interface
  std::vector<MapInitEntry> map_inits;
  std::vector<VectorInitEntry> vector_inits;
  std::vector<InterchangeableGroup> interchangeables;
  std::vector<Field> abstract_fields; // compared up to consistent renaming

  std::optional<uint32_t> interface_index(const std::string &n) const {
    for (size_t i = 0; i < interfaces.size(); ++i)
      if (interfaces[i] == n)
        return static_cast<uint32_t>(i);
    return std::nullopt;
  }

  std::optional<size_t> state_index(const std::string &n) const {
    for (size_t i = 0; i < states.size(); ++i)
      if (states[i].name == n)
        return i;
    return std::nullopt;
  }

  bool field_abstract(Field f) const {
    for (Field a : abstract_fields)
      if (a == f)
        return true;
    return false;
  }
};

struct ParseResult {
  std::optional<NfModel> model;
  std::vector<std::string> violations;

  bool ok() const { return model.has_value() && violations.empty(); }
};

class ParseError : public std::runtime_error {
public:
  explicit ParseError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string> &violations() const { return violations_; }

private:
  static std::string join(const std::vector<std::string> &v) {
    std::string s = "model has schema violations:";
    for (const auto &x : v)
      s += "\n  " + x;
    return s;
  }
  std::vector<std::string> violations_;
};

// ---------------------------------------------------------------------------
// Parser

namespace detail {

struct Token {
  std::string text;
};

inline bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_' || c == '.';
}

inline std::vector<Token> tokenize_line(const std::string &line) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (c == '#')
      break;
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (is_ident_char(c)) {
      size_t j = i;
      while (j < line.size() && is_ident_char(line[j]))
        ++j;
      out.push_back({line.substr(i, j - i)});
      i = j;
      continue;
    }
    // multi-char operators
    static const char *two[] = {"==", "!=", "<=", ">=", "<<", ">>"};
    bool matched = false;
    for (const char *t : two) {
      if (line.compare(i, 2, t) == 0) {
        out.push_back({t});
        i += 2;
        matched = true;
        break;
      }
    }
    if (matched)
      continue;
    out.push_back({std::string(1, c)});
    ++i;
  }
  return out;
}

struct LineCursor {
  const std::vector<Token> *tokens;
  size_t pos = 0;

  bool done() const { return pos >= tokens->size(); }
  const std::string &peek() const {
    static const std::string empty;
    return done() ? empty : (*tokens)[pos].text;
  }
  std::string take() {
    std::string t = peek();
    if (!done())
      ++pos;
    return t;
  }
  bool accept(const std::string &t) {
    if (peek() == t) {
      ++pos;
      return true;
    }
    return false;
  }
};

inline bool parse_number(const std::string &s, uint64_t &out) {
  if (s.empty())
    return false;
  try {
    size_t used = 0;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
      out = std::stoull(s.substr(2), &used, 16), used += 2;
    else
      out = std::stoull(s, &used, 10);
    return used == s.size();
  } catch (...) {
    return false;
  }
}

} // namespace detail

class ModelParser {
public:
  ParseResult parse(const std::string &text) {
    std::istringstream is(text);
    std::string raw;
    while (std::getline(is, raw)) {
      ++lineno_;
      auto toks = detail::tokenize_line(raw);
      if (toks.empty())
        continue;
      lines_.push_back({lineno_, std::move(toks)});
    }
    cursor_ = 0;
    parse_top_level();
    finish_validation();
    ParseResult r;
    r.violations = violations_;
    if (violations_.empty())
      r.model = std::move(model_);
    return r;
  }

private:
  struct Line {
    int number;
    std::vector<detail::Token> tokens;
  };

  void fail(int line, const std::string &msg) {
    violations_.push_back("line " + std::to_string(line) + ": " + msg);
  }

  bool at_end() const { return cursor_ >= lines_.size(); }
  const Line &line() const { return lines_[cursor_]; }

  void parse_top_level() {
    while (!at_end()) {
      detail::LineCursor c{&line().tokens};
      int ln = line().number;
      std::string head = c.take();
      if (head == "model") {
        model_.name = c.take();
        if (model_.name.empty())
          fail(ln, "model needs a name");
        if (!c.done()) {
          uint64_t v;
          if (detail::parse_number(c.take(), v))
            model_.version = static_cast<int>(v);
          else
            fail(ln, "model version must be an integer");
        }
        ++cursor_;
      } else if (head == "interface") {
        std::string n = c.take();
        if (n.empty())
          fail(ln, "interface needs a name");
        else if (model_.interface_index(n))
          fail(ln, "duplicate interface " + n);
        else
          model_.interfaces.push_back(n);
        ++cursor_;
      } else if (head == "state") {
        parse_state(c, ln);
        ++cursor_;
      } else if (head == "init") {
        parse_init(c, ln);
        ++cursor_;
      } else if (head == "abstract") {
        std::string fname = c.take();
        auto f = field_from_name(fname);
        if (!f)
          fail(ln, "abstract references unknown field " + fname);
        else
          model_.abstract_fields.push_back(*f);
        ++cursor_;
      } else if (head == "interchangeable") {
        parse_interchangeable(c, ln);
        ++cursor_;
      } else if (head == "pipeline") {
        std::string iface = c.take();
        ++cursor_;
        parse_pipeline(iface, ln);
      } else {
        fail(ln, "unknown directive " + head);
        ++cursor_;
      }
    }
  }

  size_t layout_width_of(const std::string &tok, int ln) {
    if (tok == "ip4")
      return 32;
    if (tok == "port")
      return 16;
    if (tok == "mac")
      return 48;
    if (tok == "u8")
      return 8;
    uint64_t v;
    if (detail::parse_number(tok, v) && v > 0 && v <= 64)
      return static_cast<size_t>(v);
    fail(ln, "bad key layout token " + tok);
    return 0;
  }

  void parse_state(detail::LineCursor &c, int ln) {
    StateObjectDecl d;
    std::string kind = c.take();
    if (kind == "map")
      d.kind = StateKind::Map;
    else if (kind == "vector")
      d.kind = StateKind::Vector;
    else if (kind == "dchain")
      d.kind = StateKind::Dchain;
    else if (kind == "sketch")
      d.kind = StateKind::Sketch;
    else {
      fail(ln, "unknown state kind " + kind);
      return;
    }
    d.name = c.take();
    if (d.name.empty()) {
      fail(ln, "state needs a name");
      return;
    }
    if (model_.state_index(d.name)) {
      fail(ln, "duplicate state object " + d.name);
      return;
    }
    while (!c.done()) {
      std::string w = c.take();
      uint64_t v;
      if (w == "capacity" || w == "width") {
        if (!detail::parse_number(c.take(), v))
          fail(ln, "bad " + w + " value");
        else
          d.capacity = v;
      } else if (w == "depth") {
        if (!detail::parse_number(c.take(), v))
          fail(ln, "bad depth value");
        else
          d.sketch_depth = static_cast<uint32_t>(v);
      } else if (w == "expiry") {
        if (!detail::parse_number(c.take(), v))
          fail(ln, "bad expiry value");
        else
          d.expiry_ticks = static_cast<int64_t>(v);
      } else if (w == "readonly") {
        d.read_only = true;
      } else if (w == "key") {
        auto is_attribute = [](const std::string &t) {
          return t == "capacity" || t == "width" || t == "depth" ||
                 t == "expiry" || t == "readonly" || t == "key";
        };
        while (!c.done() && !is_attribute(c.peek())) {
          size_t width = layout_width_of(c.take(), ln);
          if (width)
            d.key_layout.push_back(width);
        }
      } else {
        fail(ln, "unknown state attribute " + w);
      }
    }
    if (d.capacity == 0)
      fail(ln, "state " + d.name + " must have capacity > 0");
    if ((d.kind == StateKind::Map || d.kind == StateKind::Sketch) &&
        d.key_layout.empty())
      fail(ln, "state " + d.name + " needs a non-empty key layout");
    if (d.kind == StateKind::Sketch && d.sketch_depth == 0)
      fail(ln, "sketch depth must be positive");
    model_.states.push_back(std::move(d));
  }

  void parse_init(detail::LineCursor &c, int ln) {
    std::string kind = c.take();
    std::string name = c.take();
    auto idx = model_.state_index(name);
    if (!idx) {
      fail(ln, "init references unknown state " + name);
      return;
    }
    const StateObjectDecl &d = model_.states[*idx];
    if (kind == "map") {
      if (d.kind != StateKind::Map) {
        fail(ln, "init map on non-map object " + name);
        return;
      }
      std::string keyhex = c.take();
      if (keyhex.rfind("0x", 0) == 0)
        keyhex = keyhex.substr(2);
      uint64_t value;
      if (!detail::parse_number(c.take(), value)) {
        fail(ln, "bad init value");
        return;
      }
      BitString key;
      try {
        key = BitString::from_hex(keyhex);
      } catch (const std::exception &) {
        fail(ln, "bad init key hex");
        return;
      }
      if (key.size() != d.key_bits()) {
        fail(ln, "init key width mismatch for " + name);
        return;
      }
      model_.map_inits.push_back({*idx, std::move(key), value});
    } else if (kind == "vector") {
      if (d.kind != StateKind::Vector) {
        fail(ln, "init vector on non-vector object " + name);
        return;
      }
      uint64_t index, value;
      if (!detail::parse_number(c.take(), index) ||
          !detail::parse_number(c.take(), value)) {
        fail(ln, "bad init vector index/value");
        return;
      }
      if (index >= d.capacity) {
        fail(ln, "init vector index out of range");
        return;
      }
      model_.vector_inits.push_back({*idx, index, value});
    } else {
      fail(ln, "init supports map and vector only");
    }
  }

  void parse_interchangeable(detail::LineCursor &c, int ln) {
    InterchangeableGroup g;
    g.name = c.take();
    if (!c.accept("objects")) {
      fail(ln, "interchangeable needs: name objects A B ... alt IFACE [..]");
      return;
    }
    while (!c.done() && c.peek() != "alt") {
      auto idx = model_.state_index(c.take());
      if (!idx) {
        fail(ln, "interchangeable references unknown state");
        return;
      }
      g.objects.push_back(*idx);
    }
    while (c.accept("alt")) {
      std::string iface = c.take();
      auto iidx = model_.interface_index(iface);
      if (!iidx) {
        fail(ln, "interchangeable references unknown interface " + iface);
        return;
      }
      auto key = parse_key_expr(c, ln);
      if (!key)
        return;
      g.alternatives[*iidx] = std::move(*key);
    }
    if (g.objects.empty() || g.alternatives.empty()) {
      fail(ln, "interchangeable group needs objects and at least one alt");
      return;
    }
    model_.interchangeables.push_back(std::move(g));
  }

  // [atom, atom, ...] where atom is a field, field[off:width] or value:width
  std::optional<KeyExpr> parse_key_expr(detail::LineCursor &c, int ln) {
    if (!c.accept("[")) {
      fail(ln, "expected [key expression]");
      return std::nullopt;
    }
    KeyExpr out;
    while (!c.accept("]")) {
      if (c.done()) {
        fail(ln, "unterminated key expression");
        return std::nullopt;
      }
      std::string tok = c.take();
      if (tok == ",")
        continue;
      KeyAtom atom;
      auto f = field_from_name(tok);
      if (f) {
        atom.field = *f;
        atom.width = field_width_bits(*f);
        if (c.accept("[")) {
          uint64_t off, width;
          std::string offs = c.take();
          bool ok = detail::parse_number(offs, off) && c.accept(":");
          ok = ok && detail::parse_number(c.take(), width) && c.accept("]");
          if (!ok || off + width > field_width_bits(*f) || width == 0) {
            fail(ln, "bad field slice in key expression");
            return std::nullopt;
          }
          atom.offset = static_cast<size_t>(off);
          atom.width = static_cast<size_t>(width);
        }
      } else {
        uint64_t v, w;
        if (!detail::parse_number(tok, v) || !c.accept(":") ||
            !detail::parse_number(c.take(), w) || w == 0 || w > 64) {
          fail(ln, "bad key atom " + tok);
          return std::nullopt;
        }
        atom.is_const = true;
        atom.value = v;
        atom.width = static_cast<size_t>(w);
      }
      out.atoms.push_back(atom);
    }
    if (out.atoms.empty()) {
      fail(ln, "empty key expression");
      return std::nullopt;
    }
    return out;
  }

  // --- value expressions -------------------------------------------------

  ValueExprPtr parse_primary(detail::LineCursor &c, int ln) {
    if (c.accept("(")) {
      auto e = parse_value(c, ln);
      if (!c.accept(")")) {
        fail(ln, "missing )");
        return nullptr;
      }
      return e;
    }
    std::string tok = c.take();
    if (tok.empty()) {
      fail(ln, "expected an expression");
      return nullptr;
    }
    uint64_t v;
    if (detail::parse_number(tok, v))
      return ValueExpr::constant(v);
    if (tok == "now") {
      auto e = std::make_shared<ValueExpr>();
      e->kind = ValueExpr::Kind::Now;
      return e;
    }
    if (tok == "size") {
      auto e = std::make_shared<ValueExpr>();
      e->kind = ValueExpr::Kind::PacketSize;
      return e;
    }
    auto dot = tok.find('.');
    if (dot != std::string::npos)
      return ValueExpr::result_ref(tok.substr(0, dot), tok.substr(dot + 1));
    auto f = field_from_name(tok);
    if (f)
      return ValueExpr::field_ref(*f);
    fail(ln, "unknown expression token " + tok);
    return nullptr;
  }

  // precedence, loosest first: | ^ & << >> + -
  int binop_level(const std::string &t) {
    if (t == "|") return 1;
    if (t == "^") return 2;
    if (t == "&") return 3;
    if (t == "<<" || t == ">>") return 4;
    if (t == "+" || t == "-") return 5;
    return 0;
  }

  BinOp binop_of(const std::string &t) {
    if (t == "|") return BinOp::Or;
    if (t == "^") return BinOp::Xor;
    if (t == "&") return BinOp::And;
    if (t == "<<") return BinOp::Shl;
    if (t == ">>") return BinOp::Shr;
    if (t == "+") return BinOp::Add;
    return BinOp::Sub;
  }

  ValueExprPtr parse_binary(detail::LineCursor &c, int ln, int min_level) {
    ValueExprPtr lhs = parse_primary(c, ln);
    if (!lhs)
      return nullptr;
    for (;;) {
      int level = binop_level(c.peek());
      if (level == 0 || level < min_level)
        return lhs;
      BinOp op = binop_of(c.take());
      ValueExprPtr rhs = parse_binary(c, ln, level + 1);
      if (!rhs)
        return nullptr;
      lhs = ValueExpr::binary(op, std::move(lhs), std::move(rhs));
    }
  }

  ValueExprPtr parse_value(detail::LineCursor &c, int ln) {
    return parse_binary(c, ln, 1);
  }

  std::optional<Condition> parse_condition(detail::LineCursor &c, int ln) {
    ValueExprPtr lhs = parse_value(c, ln);
    if (!lhs)
      return std::nullopt;
    Condition cond;
    cond.lhs = std::move(lhs);
    std::string t = c.peek();
    if (t == "==" || t == "!=" || t == "<" || t == "<=" || t == ">" || t == ">=") {
      c.take();
      cond.cmp = t == "==" ? Cmp::Eq
               : t == "!=" ? Cmp::Ne
               : t == "<"  ? Cmp::Lt
               : t == "<=" ? Cmp::Le
               : t == ">"  ? Cmp::Gt
                           : Cmp::Ge;
      cond.rhs = parse_value(c, ln);
      if (!cond.rhs)
        return std::nullopt;
    } else {
      // bare expression means "nonzero"
      cond.cmp = Cmp::Ne;
      cond.rhs = ValueExpr::constant(0);
    }
    if (!c.done()) {
      fail(ln, "trailing tokens after condition");
      return std::nullopt;
    }
    return cond;
  }

  // --- pipeline parsing ---------------------------------------------------

  void parse_pipeline(const std::string &iface_name, int ln) {
    auto iidx = model_.interface_index(iface_name);
    if (!iidx)
      fail(ln, "pipeline for unknown interface " + iface_name);
    std::vector<Step> steps = parse_block(ln);
    if (iidx) {
      if (model_.pipelines.size() < model_.interfaces.size())
        model_.pipelines.resize(model_.interfaces.size());
      if (!model_.pipelines[*iidx].empty())
        fail(ln, "duplicate pipeline for interface " + iface_name);
      model_.pipelines[*iidx] = std::move(steps);
    }
  }

  /// Parses statement lines until the matching `end`/`else`; consumes the
  /// terminator only when it is `end`.
  std::vector<Step> parse_block(int opened_at, bool *saw_else = nullptr) {
    std::vector<Step> steps;
    while (!at_end()) {
      detail::LineCursor c{&line().tokens};
      int ln = line().number;
      std::string head = c.peek();
      if (head == "end") {
        ++cursor_;
        return steps;
      }
      if (head == "else" && saw_else) {
        *saw_else = true;
        ++cursor_;
        return steps;
      }
      ++cursor_;
      c.take();
      if (head == "if") {
        auto cond = parse_condition(c, ln);
        Step s;
        s.kind = Step::Kind::Branch;
        s.branch = std::make_shared<BranchStep>();
        if (cond)
          s.branch->cond = std::move(*cond);
        bool got_else = false;
        s.branch->then_steps = parse_block(ln, &got_else);
        if (got_else)
          s.branch->else_steps = parse_block(ln);
        steps.push_back(std::move(s));
      } else if (head == "set") {
        Step s;
        s.kind = Step::Kind::Rewrite;
        auto f = field_from_name(c.take());
        if (!f) {
          fail(ln, "set targets an unknown field");
          continue;
        }
        s.rewrite.field = *f;
        s.rewrite.value = parse_value(c, ln);
        if (!s.rewrite.value)
          continue;
        if (!c.done())
          fail(ln, "trailing tokens after set");
        steps.push_back(std::move(s));
      } else if (head == "forward" || head == "drop") {
        Step s;
        s.kind = Step::Kind::Terminal;
        s.terminal.forward = head == "forward";
        if (s.terminal.forward) {
          std::string target = c.take();
          auto iidx = model_.interface_index(target);
          if (!iidx) {
            fail(ln, "forward targets unknown interface " + target);
            continue;
          }
          s.terminal.out_interface = *iidx;
        }
        if (!c.done())
          fail(ln, "trailing tokens after terminal action");
        steps.push_back(std::move(s));
      } else {
        // VAR = op ... | op ...
        std::string result_var;
        std::string op_tok = head;
        if (c.peek() == "=") {
          result_var = head;
          c.take();
          op_tok = c.take();
        }
        auto op = op_kind_of(op_tok);
        if (!op) {
          fail(ln, "unknown statement " + op_tok);
          continue;
        }
        Step s;
        s.kind = Step::Kind::StateOp;
        s.state_op.op = *op;
        s.state_op.result_var = result_var;
        std::string obj = c.take();
        auto oidx = model_.state_index(obj);
        if (!oidx) {
          fail(ln, "state op on unknown object " + obj);
          continue;
        }
        s.state_op.object = *oidx;
        if (!parse_op_args(s.state_op, c, ln))
          continue;
        if (!c.done()) {
          fail(ln, "trailing tokens after state operation");
          continue;
        }
        steps.push_back(std::move(s));
      }
    }
    fail(opened_at, "unterminated block (missing end)");
    return steps;
  }

  std::optional<StateOpKind> op_kind_of(const std::string &t) {
    if (t == "map_get") return StateOpKind::MapGet;
    if (t == "map_put") return StateOpKind::MapPut;
    if (t == "vector_get") return StateOpKind::VectorGet;
    if (t == "vector_put") return StateOpKind::VectorPut;
    if (t == "dchain_allocate") return StateOpKind::DchainAllocate;
    if (t == "dchain_rejuvenate") return StateOpKind::DchainRejuvenate;
    if (t == "sketch_touch") return StateOpKind::SketchTouch;
    if (t == "sketch_query") return StateOpKind::SketchQuery;
    return std::nullopt;
  }

  bool parse_op_args(StateOpStep &op, detail::LineCursor &c, int ln) {
    const StateObjectDecl &d = model_.states[op.object];
    auto expect_kind = [&](StateKind k) {
      if (d.kind != k) {
        fail(ln, std::string(state_op_name(op.op)) + " on " +
                     state_kind_name(d.kind) + " object " + d.name);
        return false;
      }
      return true;
    };
    switch (op.op) {
    case StateOpKind::MapGet:
    case StateOpKind::MapPut: {
      if (!expect_kind(StateKind::Map))
        return false;
      auto key = parse_key_expr(c, ln);
      if (!key)
        return false;
      if (key->total_bits() != d.key_bits()) {
        fail(ln, "key width mismatch for " + d.name + ": expression has " +
                     std::to_string(key->total_bits()) + " bits, layout has " +
                     std::to_string(d.key_bits()));
        return false;
      }
      op.key = std::move(*key);
      if (op.op == StateOpKind::MapPut) {
        op.value = parse_value(c, ln);
        if (!op.value)
          return false;
      }
      return true;
    }
    case StateOpKind::SketchTouch:
    case StateOpKind::SketchQuery: {
      if (!expect_kind(StateKind::Sketch))
        return false;
      auto key = parse_key_expr(c, ln);
      if (!key)
        return false;
      if (key->total_bits() != d.key_bits()) {
        fail(ln, "key width mismatch for " + d.name);
        return false;
      }
      op.key = std::move(*key);
      return true;
    }
    case StateOpKind::VectorGet:
    case StateOpKind::VectorPut: {
      if (!expect_kind(StateKind::Vector))
        return false;
      op.index = parse_value(c, ln);
      if (!op.index)
        return false;
      if (op.op == StateOpKind::VectorPut) {
        op.value = parse_value(c, ln);
        if (!op.value)
          return false;
      }
      return true;
    }
    case StateOpKind::DchainAllocate:
      return expect_kind(StateKind::Dchain);
    case StateOpKind::DchainRejuvenate: {
      if (!expect_kind(StateKind::Dchain))
        return false;
      op.index = parse_value(c, ln);
      return op.index != nullptr;
    }
    }
    return false;
  }

  // --- post-parse validation ----------------------------------------------

  static bool result_has_component(StateOpKind op, const std::string &comp) {
    switch (op) {
    case StateOpKind::MapGet:
      return comp == "hit" || comp == "value";
    case StateOpKind::MapPut:
      return comp == "ok";
    case StateOpKind::VectorGet:
      return comp == "value";
    case StateOpKind::DchainAllocate:
      return comp == "ok" || comp == "index";
    case StateOpKind::DchainRejuvenate:
      return comp == "ok";
    case StateOpKind::SketchQuery:
      return comp == "estimate";
    default:
      return false;
    }
  }

  struct Scope {
    std::map<std::string, StateOpKind> vars;
  };

  void check_value_expr(const ValueExpr &e, const Scope &scope, int approx_line) {
    switch (e.kind) {
    case ValueExpr::Kind::ResultRef: {
      auto it = scope.vars.find(e.var);
      if (it == scope.vars.end())
        fail(approx_line, "use of undefined result variable " + e.var);
      else if (!result_has_component(it->second, e.component))
        fail(approx_line, "result " + e.var + " has no component " + e.component);
      break;
    }
    case ValueExpr::Kind::Binary:
      check_value_expr(*e.lhs, scope, approx_line);
      check_value_expr(*e.rhs, scope, approx_line);
      break;
    default:
      break;
    }
  }

  /// Returns true when every path through `steps` ends in a terminal.
  bool check_steps(const std::vector<Step> &steps, Scope scope) {
    bool terminated = false;
    for (size_t i = 0; i < steps.size(); ++i) {
      const Step &s = steps[i];
      if (terminated) {
        fail(0, "unreachable steps after a terminal action");
        return true;
      }
      switch (s.kind) {
      case Step::Kind::StateOp: {
        const StateOpStep &op = s.state_op;
        const StateObjectDecl &d = model_.states[op.object];
        if (d.read_only && state_op_is_write(op.op))
          fail(0, "write operation on read-only object " + d.name);
        if (op.index)
          check_value_expr(*op.index, scope, 0);
        if (op.value)
          check_value_expr(*op.value, scope, 0);
        if (!op.result_var.empty()) {
          if (scope.vars.count(op.result_var))
            fail(0, "result variable " + op.result_var + " redefined");
          scope.vars[op.result_var] = op.op;
        }
        break;
      }
      case Step::Kind::Branch: {
        check_value_expr(*s.branch->cond.lhs, scope, 0);
        check_value_expr(*s.branch->cond.rhs, scope, 0);
        bool t1 = check_steps(s.branch->then_steps, scope);
        bool t2 = check_steps(s.branch->else_steps, scope);
        terminated = t1 && t2;
        break;
      }
      case Step::Kind::Rewrite:
        check_value_expr(*s.rewrite.value, scope, 0);
        break;
      case Step::Kind::Terminal:
        terminated = true;
        break;
      }
    }
    return terminated;
  }

  void finish_validation() {
    if (model_.name.empty())
      fail(0, "missing model header");
    if (model_.interfaces.empty())
      fail(0, "model declares no interfaces");
    model_.pipelines.resize(model_.interfaces.size());
    for (size_t i = 0; i < model_.interfaces.size(); ++i) {
      if (model_.pipelines[i].empty()) {
        fail(0, "interface " + model_.interfaces[i] + " has no pipeline");
        continue;
      }
      if (!check_steps(model_.pipelines[i], Scope{}))
        fail(0, "pipeline " + model_.interfaces[i] +
                    " has a path without a terminal action");
    }
    for (const auto &g : model_.interchangeables) {
      size_t arity = 0;
      for (const auto &[iface, key] : g.alternatives) {
        if (!key.has_packet_fields())
          fail(0, "interchangeable alternative for group " + g.name +
                      " must reference packet fields");
        if (arity == 0)
          arity = key.atoms.size();
        else if (key.atoms.size() != arity)
          fail(0, "interchangeable alternatives for group " + g.name +
                      " must have matching atom counts");
      }
    }
  }

  NfModel model_;
  std::vector<std::string> violations_;
  std::vector<Line> lines_;
  size_t cursor_ = 0;
  int lineno_ = 0;
};

inline ParseResult parse_model(const std::string &text) {
  ModelParser p;
  return p.parse(text);
}

inline NfModel parse_model_or_throw(const std::string &text) {
  ParseResult r = parse_model(text);
  if (!r.ok())
    throw ParseError(r.violations);
  return std::move(*r.model);
}

inline NfModel load_model(const std::string &path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open model file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_model_or_throw(ss.str());
}

} // namespace rsshard
