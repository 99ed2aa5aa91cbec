#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rsshard/model.hpp"
#include "rsshard/parsim.hpp"
#include "rsshard/paths.hpp"
#include "rsshard/rss.hpp"
#include "rsshard/traffic.hpp"

namespace rsshard {

// ---------------------------------------------------------------------------
// Stateful report

struct StatefulReportEntry {
  int tree_node = -1;
  const StateOpStep *op = nullptr;
  size_t object = 0;
  uint32_t interface = 0;
  bool is_write = false;
  KeyExpr key;                  // packet-derived key expression, possibly empty
  bool packet_derived = false;  // false: constant key, op-result key, or none
  std::vector<PathConstraint> path_constraints;
};

struct StatefulReport {
  std::vector<StatefulReportEntry> entries;
};

namespace detail {

inline bool value_expr_packet_only(const ValueExpr &e, std::vector<Field> *fields) {
  switch (e.kind) {
  case ValueExpr::Kind::Const:
    return true;
  case ValueExpr::Kind::FieldRef:
    if (fields)
      fields->push_back(e.field);
    return true;
  case ValueExpr::Kind::Binary:
    return value_expr_packet_only(*e.lhs, fields) &&
           value_expr_packet_only(*e.rhs, fields);
  default:
    return false; // op results, time, size: not a stable packet property
  }
}

inline KeyExpr key_from_index_expr(const ValueExpr &e, bool *derived) {
  std::vector<Field> fields;
  KeyExpr k;
  if (!value_expr_packet_only(e, &fields) || fields.empty()) {
    *derived = false;
    return k;
  }
  std::sort(fields.begin(), fields.end());
  fields.erase(std::unique(fields.begin(), fields.end()), fields.end());
  for (Field f : fields) {
    KeyAtom a;
    a.field = f;
    a.width = field_width_bits(f);
    k.atoms.push_back(a);
  }
  *derived = true;
  return k;
}

} // namespace detail

/// One entry per stateful node of the tree, with the key derivation and the
/// full path constraints at the call site.
inline StatefulReport build_report(const ExecutionTree &tree) {
  StatefulReport rep;
  for (size_t id = 0; id < tree.nodes.size(); ++id) {
    const ExecTreeNode &n = tree.nodes[id];
    if (n.kind != ExecTreeNode::Kind::StateOp)
      continue;
    StatefulReportEntry e;
    e.tree_node = static_cast<int>(id);
    e.op = n.op;
    e.object = n.op->object;
    e.interface = n.interface;
    e.is_write = state_op_is_write(n.op->op);
    e.path_constraints = n.constraints;
    switch (n.op->op) {
    case StateOpKind::MapGet:
    case StateOpKind::MapPut:
    case StateOpKind::SketchTouch:
    case StateOpKind::SketchQuery:
      e.key = *(&n.op->key);
      e.packet_derived = e.key.has_packet_fields();
      break;
    case StateOpKind::VectorGet:
    case StateOpKind::VectorPut:
    case StateOpKind::DchainRejuvenate:
      e.key = detail::key_from_index_expr(*n.op->index, &e.packet_derived);
      break;
    case StateOpKind::DchainAllocate:
      e.packet_derived = false;
      break;
    }
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

/// Drops entries on read-only objects: declared read-only, or never written
/// on any path of the tree.
inline StatefulReport filter_readonly(const StatefulReport &report,
                                      const NfModel &model) {
  std::vector<bool> written(model.states.size(), false);
  for (const auto &e : report.entries)
    if (e.is_write)
      written[e.object] = true;
  StatefulReport out;
  for (const auto &e : report.entries) {
    if (model.states[e.object].read_only || !written[e.object])
      continue;
    out.entries.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnosis and solution types

struct DiagnosisReason {
  std::string rule; // "R1".."R5"
  std::string object;
  std::string explanation;
};

struct Diagnosis {
  enum class Verdict : uint8_t { SharedNothing, NoConstraints, Infeasible };
  Verdict verdict = Verdict::Infeasible;
  std::vector<DiagnosisReason> reasons;

  std::string to_text() const {
    std::ostringstream os;
    switch (verdict) {
    case Verdict::SharedNothing: os << "shared-nothing"; break;
    case Verdict::NoConstraints: os << "no-constraints"; break;
    case Verdict::Infeasible: os << "infeasible"; break;
    }
    for (const auto &r : reasons)
      os << "\n  [" << r.rule << "] " << r.object << ": " << r.explanation;
    return os.str();
  }
};

inline const char *verdict_name(Diagnosis::Verdict v) {
  switch (v) {
  case Diagnosis::Verdict::SharedNothing: return "shared-nothing";
  case Diagnosis::Verdict::NoConstraints: return "no-constraints";
  case Diagnosis::Verdict::Infeasible: return "infeasible";
  }
  return "?";
}

/// Cross-interface coordinate of one object's key: the atom each interface
/// contributes at one key position.
struct ObjectCoords {
  size_t object = 0;
  std::vector<std::map<uint32_t, KeyAtom>> coords;

  std::set<KeyAtom> atoms_at(uint32_t iface) const {
    std::set<KeyAtom> s;
    for (const auto &c : coords) {
      auto it = c.find(iface);
      if (it != c.end())
        s.insert(it->second);
    }
    return s;
  }

  bool spans(uint32_t iface) const {
    for (const auto &c : coords)
      if (c.count(iface))
        return true;
    return false;
  }
};

struct ShardingSolution {
  std::vector<std::vector<KeyAtom>> shard_fields; // per interface, canonical order
  std::vector<DiagnosisReason> justifications;     // per-object rule citations
  std::vector<ObjectCoords> coords;                // retained for emission
};

struct PairAtom {
  KeyAtom a; // packet arriving at iface_a
  KeyAtom b; // packet arriving at iface_b

  friend bool operator<(const PairAtom &x, const PairAtom &y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  }
  friend bool operator==(const PairAtom &x, const PairAtom &y) {
    return !(x < y) && !(y < x);
  }
};

struct PairConstraints {
  uint32_t iface_a = 0; // iface_b <= iface_a
  uint32_t iface_b = 0;
  std::vector<std::vector<PairAtom>> disjuncts;
};

struct PairConstraintSet {
  std::vector<PairConstraints> pairs;

  const PairConstraints *find(uint32_t a, uint32_t b) const {
    uint32_t hi = std::max(a, b), lo = std::min(a, b);
    for (const auto &p : pairs)
      if (p.iface_a == hi && p.iface_b == lo)
        return &p;
    return nullptr;
  }
};

inline std::string pair_constraints_to_text(const PairConstraintSet &set,
                                            const std::vector<std::string> &ifaces) {
  std::ostringstream os;
  for (const auto &p : set.pairs) {
    os << "C[" << ifaces[p.iface_a] << "," << ifaces[p.iface_b] << "] = ";
    if (p.disjuncts.empty()) {
      os << "(unconstrained)\n";
      continue;
    }
    for (size_t d = 0; d < p.disjuncts.size(); ++d) {
      if (d)
        os << "  OR  ";
      for (size_t i = 0; i < p.disjuncts[d].size(); ++i) {
        if (i)
          os << " and ";
        os << "d." << key_atom_to_string(p.disjuncts[d][i].a)
           << " == d'." << key_atom_to_string(p.disjuncts[d][i].b);
      }
    }
    os << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Interchangeability oracle

/// Simulates sharding by each candidate (a virtual steering that hashes the
/// candidate's key bytes) and accepts only if every run reproduces the
/// sequential behavior. Candidates without packet fields cannot steer and
/// are skipped; the replacement candidate must always be simulable.
inline bool check_interchangeable(const NfModel &model,
                                  const std::map<uint32_t, KeyExpr> &constraint_a,
                                  const std::map<uint32_t, KeyExpr> &constraint_b,
                                  int trials = 3, uint64_t seed = 1) {
  auto simulable = [](const std::map<uint32_t, KeyExpr> &cand) {
    if (cand.empty())
      return false;
    for (const auto &[iface, key] : cand)
      if (!key.has_packet_fields())
        return false;
    return true;
  };
  if (!simulable(constraint_b))
    return false;

  std::vector<const std::map<uint32_t, KeyExpr> *> candidates;
  if (simulable(constraint_a))
    candidates.push_back(&constraint_a);
  candidates.push_back(&constraint_b);

  for (int trial = 0; trial < trials; ++trial) {
    TrafficSpec spec;
    spec.packets = 2000;
    spec.flows = 64;
    spec.src_hosts = 8;
    spec.dst_hosts = 4;
    spec.arrival = TrafficSpec::Arrival::ByFlowParity;
    // Models with abstract fields emit values the environment cannot know
    // ahead of time; synthetic replies would forge them and probe raw state
    // the abstraction hides, so such models get noise probes instead.
    if (model.abstract_fields.empty()) {
      spec.symmetric_ratio = 0.4;
    } else {
      spec.noise_ratio = 0.15;
    }
    Trace trace = gen_traffic(spec, splitmix64(seed + 977 * trial));
    BehaviorLog seq = exec_sequential(model, trace);

    for (const auto *cand : candidates) {
      for (uint32_t cores : {2u, 3u, 5u}) {
        SimConfig cfg;
        cfg.cores = cores;
        cfg.capacity = SimConfig::Capacity::Replicate;
        SteerFn steer = [&](const Packet &p) -> CoreId {
          auto it = cand->find(p.in_interface);
          if (it == cand->end())
            return 0;
          std::string key = detail::concrete_key(it->second, p);
          return static_cast<CoreId>(splitmix64(fnv1a(key)) % cores);
        };
        auto [log, metrics] =
            exec_shared_nothing_steered(model, steer, trace, cfg);
        (void)metrics;
        if (!check_equivalence(seq, log, model).equivalent)
          return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Solver: rules R1 to R5

struct SolveOptions {
  uint64_t seed = 1;
  int oracle_trials = 3;
};

struct SolveResult {
  std::optional<ShardingSolution> solution;
  Diagnosis diagnosis;

  bool feasible() const { return solution.has_value(); }
};

namespace detail {

struct ObjectSummary {
  size_t object;
  // distinct packet-derived key expressions per interface, first-seen order
  std::map<uint32_t, std::vector<KeyExpr>> exprs;
  std::vector<DiagnosisReason> blockers;
  bool fully_packet_derived = true;
};

inline bool atoms_hashable(const KeyExpr &k, const NicProfile &profile,
                           std::string *offender) {
  for (const KeyAtom &a : k.atoms) {
    if (a.is_const)
      continue;
    if (!profile.hashable(a.field)) {
      if (offender)
        *offender = field_name(a.field);
      return false;
    }
  }
  return true;
}

/// Positionwise merge of several same-interface key expressions: keeps the
/// positions where all expressions agree. Returns nullopt when the
/// expressions have mismatched shapes or no common position.
inline std::optional<KeyExpr> merge_same_interface(const std::vector<KeyExpr> &exprs) {
  const KeyExpr &first = exprs.front();
  for (const KeyExpr &e : exprs)
    if (e.atoms.size() != first.atoms.size())
      return std::nullopt;
  KeyExpr out;
  for (size_t p = 0; p < first.atoms.size(); ++p) {
    bool same = true;
    for (const KeyExpr &e : exprs) {
      if (e.atoms[p].width != first.atoms[p].width)
        return std::nullopt;
      if (!(e.atoms[p] == first.atoms[p]))
        same = false;
    }
    if (same)
      out.atoms.push_back(first.atoms[p]);
  }
  if (!out.has_packet_fields())
    return std::nullopt;
  return out;
}

} // namespace detail

/// Applies the sharding rules to a filtered report:
///  R1 builds per-object key-equality requirements,
///  R2 lets coarser (subset) requirements subsume finer ones,
///  R3 rejects disjoint requirements that no single field choice covers,
///  R4 rejects keys with non-hashable fields or no packet fields at all,
///  R5 replaces an R3/R4-blocked requirement with a declared or discovered
///     alternative that the differential oracle accepts.
inline SolveResult solve_sharding(const StatefulReport &report,
                                  const NfModel &model,
                                  const NicProfile &profile,
                                  const SolveOptions &opts = {}) {
  SolveResult result;
  if (report.entries.empty()) {
    result.diagnosis.verdict = Diagnosis::Verdict::NoConstraints;
    return result;
  }

  // gather per-object summaries
  std::map<size_t, detail::ObjectSummary> objects;
  for (const auto &e : report.entries) {
    auto &s = objects[e.object];
    s.object = e.object;
    auto add_blocker = [&](const std::string &what) {
      for (auto &b : s.blockers)
        if (b.rule == "R4" && b.explanation == what)
          return;
      s.blockers.push_back({"R4", model.states[e.object].name, what});
    };
    if (!e.packet_derived) {
      s.fully_packet_derived = false;
      add_blocker(e.op && e.op->op == StateOpKind::DchainAllocate
                      ? "allocation is not tied to any packet field"
                      : (e.key.atoms.empty()
                             ? "access key carries no packet fields"
                             : "access key is constant"));
      continue;
    }
    std::string offender;
    if (!detail::atoms_hashable(e.key, profile, &offender))
      add_blocker("field " + offender + " is not hashable on this nic");
    auto &lst = s.exprs[e.interface];
    bool seen = false;
    for (const auto &k : lst)
      if (k == e.key)
        seen = true;
    if (!seen)
      lst.push_back(e.key);
  }

  // resolve each object's requirement: one expression per interface
  struct Requirement {
    size_t object;
    std::map<uint32_t, KeyExpr> expr;
    std::string rule;
  };
  std::vector<Requirement> requirements;
  std::vector<DiagnosisReason> fatal;

  auto try_rescue = [&](detail::ObjectSummary &s,
                        const std::vector<DiagnosisReason> &why) -> std::optional<Requirement> {
    // the blocked constraint itself is only simulable when every access
    // derives its key from packet fields, one expression per interface
    std::map<uint32_t, KeyExpr> original;
    if (s.fully_packet_derived) {
      bool unambiguous = true;
      for (const auto &[iface, lst] : s.exprs) {
        if (lst.size() != 1)
          unambiguous = false;
        else
          original[iface] = lst.front();
      }
      if (!unambiguous)
        original.clear();
    }

    // declared groups first
    for (const auto &g : model.interchangeables) {
      if (std::find(g.objects.begin(), g.objects.end(), s.object) == g.objects.end())
        continue;
      if (check_interchangeable(model, original, g.alternatives,
                                opts.oracle_trials, opts.seed)) {
        Requirement r;
        r.object = s.object;
        r.expr = g.alternatives;
        r.rule = "R5";
        return r;
      }
    }
    // bounded automatic search: hashable expressions other entries derive on
    // the same interfaces
    std::map<uint32_t, KeyExpr> candidate;
    for (const auto &e : report.entries) {
      if (!e.packet_derived)
        continue;
      if (!detail::atoms_hashable(e.key, profile, nullptr))
        continue;
      if (!candidate.count(e.interface))
        candidate[e.interface] = e.key;
    }
    if (!candidate.empty() &&
        check_interchangeable(model, original, candidate, opts.oracle_trials,
                              opts.seed)) {
      Requirement r;
      r.object = s.object;
      r.expr = candidate;
      r.rule = "R5";
      return r;
    }
    (void)why;
    return std::nullopt;
  };

  for (auto &[oid, s] : objects) {
    std::vector<DiagnosisReason> why = s.blockers;
    if (why.empty()) {
      // merge same-interface variants positionally
      Requirement r;
      r.object = oid;
      r.rule = "R1";
      bool merged_ok = true;
      bool narrowed = false;
      for (auto &[iface, lst] : s.exprs) {
        auto merged = detail::merge_same_interface(lst);
        if (!merged) {
          merged_ok = false;
          break;
        }
        if (merged->atoms.size() != lst.front().atoms.size())
          narrowed = true;
        r.expr[iface] = std::move(*merged);
      }
      if (merged_ok) {
        // cross-interface shape check
        size_t arity = r.expr.begin()->second.atoms.size();
        for (const auto &[iface, k] : r.expr)
          if (k.atoms.size() != arity)
            merged_ok = false;
      }
      if (merged_ok) {
        if (narrowed)
          r.rule = "R1+R3-merge";
        requirements.push_back(std::move(r));
        continue;
      }
      why.push_back({"R3", model.states[oid].name,
                     "accesses derive keys from irreconcilable field sets"});
    }
    auto rescued = try_rescue(s, why);
    if (rescued) {
      requirements.push_back(std::move(*rescued));
      continue;
    }
    for (auto &b : why)
      fatal.push_back(b);
  }

  if (!fatal.empty()) {
    result.diagnosis.verdict = Diagnosis::Verdict::Infeasible;
    result.diagnosis.reasons = std::move(fatal);
    return result;
  }

  // build aligned coordinates per object, dropping constant positions
  ShardingSolution sol;
  for (const Requirement &r : requirements) {
    ObjectCoords oc;
    oc.object = r.object;
    size_t arity = r.expr.begin()->second.atoms.size();
    for (size_t p = 0; p < arity; ++p) {
      std::map<uint32_t, KeyAtom> coord;
      bool constant = false;
      for (const auto &[iface, k] : r.expr) {
        if (k.atoms[p].is_const) {
          constant = true;
          break;
        }
        coord[iface] = k.atoms[p];
      }
      if (!constant && !coord.empty())
        oc.coords.push_back(std::move(coord));
    }
    sol.coords.push_back(std::move(oc));
    sol.justifications.push_back(
        {r.rule, model.states[r.object].name,
         r.rule == "R5" ? "requirement replaced by an interchangeable alternative"
                        : "key equality on the object's packet fields"});
  }

  // per-interface sharding atoms: intersection across the objects using the
  // interface (coarser subsets win, which is the subsumption rule)
  size_t n_ifaces = model.interfaces.size();
  sol.shard_fields.assign(n_ifaces, {});
  for (uint32_t i = 0; i < n_ifaces; ++i) {
    bool any = false;
    std::set<KeyAtom> acc;
    const ObjectCoords *narrowest = nullptr;
    for (const auto &oc : sol.coords) {
      if (!oc.spans(i))
        continue;
      std::set<KeyAtom> s = oc.atoms_at(i);
      if (!any) {
        acc = s;
        any = true;
        narrowest = &oc;
      } else {
        std::set<KeyAtom> inter;
        std::set_intersection(acc.begin(), acc.end(), s.begin(), s.end(),
                              std::inserter(inter, inter.begin()));
        if (inter.size() < acc.size())
          narrowest = &oc;
        acc = std::move(inter);
      }
    }
    if (any && acc.empty()) {
      // two objects with no common field: name a witness pair
      std::string w1 = narrowest ? model.states[narrowest->object].name : "?";
      result.diagnosis.verdict = Diagnosis::Verdict::Infeasible;
      result.diagnosis.reasons.push_back(
          {"R3", w1,
           "objects on interface " + model.interfaces[i] +
               " require disjoint packet-field sets; no single sharding covers both"});
      return result;
    }
    sol.shard_fields[i].assign(acc.begin(), acc.end());
    std::sort(sol.shard_fields[i].begin(), sol.shard_fields[i].end());
  }

  // note subsumption in the justifications
  for (size_t k = 0; k < sol.coords.size(); ++k) {
    const auto &oc = sol.coords[k];
    for (uint32_t i = 0; i < n_ifaces; ++i) {
      if (!oc.spans(i))
        continue;
      if (oc.atoms_at(i).size() > sol.shard_fields[i].size() &&
          sol.justifications[k].rule == "R1") {
        sol.justifications[k].rule = "R2";
        sol.justifications[k].explanation =
            "subsumed by a coarser requirement; sharding on the common subset";
      }
    }
  }

  result.solution = std::move(sol);
  result.diagnosis.verdict = Diagnosis::Verdict::SharedNothing;
  return result;
}

/// Derives the per-interface-pair packet constraints from a solution: for
/// each pair, the conjunction of field equalities the chosen sharding
/// enforces, aligned across interfaces by each object's key positions.
inline PairConstraintSet emit_constraints(const ShardingSolution &sol,
                                          const NfModel &model) {
  PairConstraintSet out;
  size_t n = model.interfaces.size();
  for (uint32_t i = 0; i < n; ++i) {
    for (uint32_t j = 0; j <= i; ++j) {
      std::set<PairAtom> atoms;
      if (i == j) {
        for (const KeyAtom &a : sol.shard_fields[i])
          atoms.insert({a, a});
      } else {
        for (const auto &oc : sol.coords) {
          if (!oc.spans(i) || !oc.spans(j))
            continue;
          for (const auto &coord : oc.coords) {
            auto ai = coord.find(i);
            auto aj = coord.find(j);
            if (ai == coord.end() || aj == coord.end())
              continue;
            bool in_i =
                std::find(sol.shard_fields[i].begin(), sol.shard_fields[i].end(),
                          ai->second) != sol.shard_fields[i].end();
            if (in_i)
              atoms.insert({ai->second, aj->second});
          }
        }
      }
      PairConstraints pc;
      pc.iface_a = i;
      pc.iface_b = j;
      if (!atoms.empty())
        pc.disjuncts.push_back(
            std::vector<PairAtom>(atoms.begin(), atoms.end()));
      out.pairs.push_back(std::move(pc));
    }
  }
  return out;
}

inline uint64_t constraint_set_fingerprint(const PairConstraintSet &set) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto &p : set.pairs) {
    h = fnv1a(&p.iface_a, sizeof(p.iface_a), h);
    h = fnv1a(&p.iface_b, sizeof(p.iface_b), h);
    for (const auto &d : p.disjuncts)
      for (const auto &a : d) {
        std::string s = key_atom_to_string(a.a) + "=" + key_atom_to_string(a.b);
        h = fnv1a(s, h);
      }
  }
  return h;
}

} // namespace rsshard
