#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rsshard/exec.hpp"
#include "rsshard/model.hpp"

namespace rsshard {

struct PathConstraint {
  Condition cond;
  bool negated = false;
};

inline std::string path_constraint_to_string(const PathConstraint &pc) {
  Condition c = pc.cond;
  if (pc.negated)
    c.cmp = cmp_negate(c.cmp);
  return condition_to_string(c);
}

/// One node of the enumerated execution tree. Every node carries the
/// conjunction of branch constraints on the path from its interface's root.
struct ExecTreeNode {
  enum class Kind : uint8_t { Branch, StateOp, Terminal } kind;
  uint32_t interface = 0;
  int then_child = -1; // Branch
  int else_child = -1;
  int next_child = -1;             // StateOp
  const StateOpStep *op = nullptr; // StateOp
  Condition cond;                  // Branch
  TerminalStep terminal;           // Terminal
  std::vector<PathConstraint> constraints;
};

struct ExecutionTree {
  std::vector<ExecTreeNode> nodes;
  std::vector<int> roots;                     // per interface, -1 if empty
  std::vector<std::vector<int>> leaves;       // per interface

  const ExecTreeNode &node(int id) const { return nodes[static_cast<size_t>(id)]; }

  size_t leaf_count(uint32_t iface) const { return leaves[iface].size(); }

  /// State-op nodes in execution order for the path ending at `leaf`.
  std::vector<int> state_ops_on_path(int leaf) const {
    std::vector<int> out;
    collect_ops(roots_of(leaf), leaf, out);
    return out;
  }

private:
  int roots_of(int leaf) const { return roots[nodes[static_cast<size_t>(leaf)].interface]; }

  bool collect_ops(int id, int leaf, std::vector<int> &out) const {
    if (id < 0)
      return false;
    const ExecTreeNode &n = nodes[static_cast<size_t>(id)];
    if (id == leaf)
      return true;
    if (n.kind == ExecTreeNode::Kind::StateOp) {
      out.push_back(id);
      if (collect_ops(n.next_child, leaf, out))
        return true;
      out.pop_back();
      return false;
    }
    if (n.kind == ExecTreeNode::Kind::Branch)
      return collect_ops(n.then_child, leaf, out) ||
             collect_ops(n.else_child, leaf, out);
    return false;
  }
};

namespace detail {

class TreeBuilder {
public:
  explicit TreeBuilder(const NfModel &model) : model_(&model) {}

  ExecutionTree build() {
    ExecutionTree t;
    t.roots.assign(model_->interfaces.size(), -1);
    t.leaves.resize(model_->interfaces.size());
    for (uint32_t i = 0; i < model_->interfaces.size(); ++i) {
      tree_ = &t;
      iface_ = i;
      constraints_.clear();
      t.roots[i] =
          build_seq(model_->pipelines[i], 0, std::vector<Continuation>{});
    }
    return t;
  }

private:
  // remaining steps of an enclosing sequence, resumed on branch fall-through
  struct Continuation {
    const std::vector<Step> *steps;
    size_t index;
  };

  int new_node(ExecTreeNode::Kind kind) {
    ExecTreeNode n;
    n.kind = kind;
    n.interface = iface_;
    n.constraints = constraints_;
    tree_->nodes.push_back(std::move(n));
    return static_cast<int>(tree_->nodes.size() - 1);
  }

  int build_seq(const std::vector<Step> &steps, size_t idx,
                std::vector<Continuation> conts) {
    if (idx >= steps.size()) {
      if (conts.empty())
        throw std::logic_error("path fell off the pipeline"); // validated away
      Continuation c = conts.back();
      conts.pop_back();
      return build_seq(*c.steps, c.index, std::move(conts));
    }
    const Step &s = steps[idx];
    switch (s.kind) {
    case Step::Kind::StateOp: {
      int id = new_node(ExecTreeNode::Kind::StateOp);
      tree_->nodes[static_cast<size_t>(id)].op = &s.state_op;
      int child = build_seq(steps, idx + 1, std::move(conts));
      tree_->nodes[static_cast<size_t>(id)].next_child = child;
      return id;
    }
    case Step::Kind::Rewrite:
      // rewrites neither branch nor touch state; transparent in the tree
      return build_seq(steps, idx + 1, std::move(conts));
    case Step::Kind::Terminal: {
      int id = new_node(ExecTreeNode::Kind::Terminal);
      tree_->nodes[static_cast<size_t>(id)].terminal = s.terminal;
      tree_->leaves[iface_].push_back(id);
      return id;
    }
    case Step::Kind::Branch: {
      int id = new_node(ExecTreeNode::Kind::Branch);
      tree_->nodes[static_cast<size_t>(id)].cond = s.branch->cond;
      std::vector<Continuation> inner = conts;
      inner.push_back({&steps, idx + 1});

      constraints_.push_back({s.branch->cond, false});
      int then_id = build_seq(s.branch->then_steps, 0, inner);
      constraints_.back().negated = true;
      int else_id = build_seq(s.branch->else_steps, 0, inner);
      constraints_.pop_back();

      tree_->nodes[static_cast<size_t>(id)].then_child = then_id;
      tree_->nodes[static_cast<size_t>(id)].else_child = else_id;
      return id;
    }
    }
    return -1;
  }

  const NfModel *model_;
  ExecutionTree *tree_ = nullptr;
  uint32_t iface_ = 0;
  std::vector<PathConstraint> constraints_;
};

} // namespace detail

/// Exhaustively expands every syntactic path of a loop-free model into a
/// tree. Complete by construction: branching is finite and each path ends in
/// exactly one terminal.
inline ExecutionTree enumerate_paths(const NfModel &model) {
  return detail::TreeBuilder(model).build();
}

/// Replays a packet with the op results observed during execution and
/// returns the unique leaf whose constraints it satisfies.
inline int replay_to_leaf(const ExecutionTree &tree, const Packet &packet,
                          const std::vector<OpResult> &results) {
  detail::Env env;
  Packet copy = packet;
  env.pkt = &copy;
  size_t next_result = 0;
  int id = tree.roots[packet.in_interface];
  while (id >= 0) {
    const ExecTreeNode &n = tree.node(id);
    switch (n.kind) {
    case ExecTreeNode::Kind::Terminal:
      return id;
    case ExecTreeNode::Kind::StateOp: {
      if (next_result >= results.size())
        throw std::logic_error("replay ran out of recorded op results");
      if (!n.op->result_var.empty())
        env.vars[n.op->result_var] = results[next_result];
      ++next_result;
      id = n.next_child;
      break;
    }
    case ExecTreeNode::Kind::Branch:
      id = detail::eval_condition(n.cond, env) ? n.then_child : n.else_child;
      break;
    }
  }
  throw std::logic_error("replay fell off the tree");
}

/// Randomized satisfiability probe for a constraint conjunction over small
/// domains: samples assignments to packet fields and op results, returns
/// true if any satisfies all constraints. Result symbols are drawn per
/// result variable name (unambiguous along one path).
inline bool path_constraints_satisfiable(const ExecutionTree &tree, int leaf,
                                         uint64_t domain_bits, Rng &rng,
                                         int attempts = 4096) {
  const ExecTreeNode &leaf_node = tree.node(leaf);
  // collect result vars referenced by the constraints
  std::vector<std::string> vars;
  std::function<void(const ValueExpr &)> scan = [&](const ValueExpr &e) {
    if (e.kind == ValueExpr::Kind::ResultRef) {
      bool seen = false;
      for (const auto &v : vars)
        if (v == e.var)
          seen = true;
      if (!seen)
        vars.push_back(e.var);
    } else if (e.kind == ValueExpr::Kind::Binary) {
      scan(*e.lhs);
      scan(*e.rhs);
    }
  };
  for (const PathConstraint &pc : leaf_node.constraints) {
    scan(*pc.cond.lhs);
    scan(*pc.cond.rhs);
  }

  uint64_t mask = domain_bits >= 64 ? ~0ull : ((1ull << domain_bits) - 1);
  for (int a = 0; a < attempts; ++a) {
    Packet p;
    p.in_interface = leaf_node.interface;
    for (size_t f = 0; f < kFieldCount; ++f)
      p.set_field(static_cast<Field>(f), rng.next() & mask);
    p.time = static_cast<int64_t>(rng.below(1u << 16));
    p.size_bytes = static_cast<uint32_t>(rng.below(2048));
    detail::Env env;
    env.pkt = &p;
    // op results mix the reduced domain, wider draws and copies of packet
    // fields, so both threshold comparisons and field equalities stay
    // reachable
    auto result_sample = [&]() -> uint64_t {
      switch (rng.below(3)) {
      case 0:
        return rng.next() & mask;
      case 1:
        return rng.below(1u << 13);
      default:
        return p.field(static_cast<Field>(rng.below(kFieldCount)));
      }
    };
    for (const auto &v : vars) {
      OpResult r;
      r.hit = rng.below(2);
      r.ok = rng.below(2);
      r.value = result_sample();
      r.index = result_sample();
      r.estimate = result_sample();
      env.vars[v] = r;
    }
    bool all = true;
    for (const PathConstraint &pc : leaf_node.constraints) {
      bool v = detail::eval_condition(pc.cond, env);
      if (pc.negated)
        v = !v;
      if (!v) {
        all = false;
        break;
      }
    }
    if (all)
      return true;
  }
  return false;
}

} // namespace rsshard
