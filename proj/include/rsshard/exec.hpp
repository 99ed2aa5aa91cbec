#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rsshard/model.hpp"
#include "rsshard/packet.hpp"
#include "rsshard/state.hpp"

namespace rsshard {

/// Externally visible outcome of processing one packet.
struct LogRecord {
  uint64_t packet_id = 0;
  bool forwarded = false;
  uint32_t out_interface = 0;
  std::array<uint64_t, kFieldCount> final_fields{};

  friend bool operator==(const LogRecord &a, const LogRecord &b) {
    if (a.packet_id != b.packet_id || a.forwarded != b.forwarded)
      return false;
    if (!a.forwarded)
      return true; // drops are compared by action alone
    return a.out_interface == b.out_interface && a.final_fields == b.final_fields;
  }
};

struct BehaviorLog {
  std::vector<LogRecord> records; // trace order, one per packet
};

/// Raised by the interpreter when a write is attempted in read-only
/// speculation; the lock-based executor catches it and restarts the packet.
struct WriteAttempt {};

struct ExecHooks {
  /// Concrete key bytes per state access; used by analysis soundness checks.
  std::function<void(const Packet &, const StateOpStep &, const std::string &)>
      on_state_access;
  /// Ordered op results for one packet; drives execution-tree replay checks.
  std::function<void(const Packet &, const std::vector<OpResult> &)> on_results;
};

namespace detail {

struct Env {
  const Packet *pkt = nullptr;
  Packet *mutable_pkt = nullptr;
  std::map<std::string, OpResult> vars;
};

inline uint64_t eval_value(const ValueExpr &e, const Env &env) {
  switch (e.kind) {
  case ValueExpr::Kind::Const:
    return e.value;
  case ValueExpr::Kind::FieldRef:
    return env.pkt->field(e.field);
  case ValueExpr::Kind::ResultRef:
    return env.vars.at(e.var).component(e.component);
  case ValueExpr::Kind::Now:
    return static_cast<uint64_t>(env.pkt->time);
  case ValueExpr::Kind::PacketSize:
    return env.pkt->size_bytes;
  case ValueExpr::Kind::Binary: {
    uint64_t l = eval_value(*e.lhs, env);
    uint64_t r = eval_value(*e.rhs, env);
    switch (e.op) {
    case BinOp::Add: return l + r;
    case BinOp::Sub: return l - r;
    case BinOp::And: return l & r;
    case BinOp::Or: return l | r;
    case BinOp::Xor: return l ^ r;
    case BinOp::Shl: return r >= 64 ? 0 : l << r;
    case BinOp::Shr: return r >= 64 ? 0 : l >> r;
    }
    return 0;
  }
  }
  return 0;
}

inline bool eval_condition(const Condition &c, const Env &env) {
  uint64_t l = eval_value(*c.lhs, env);
  uint64_t r = eval_value(*c.rhs, env);
  switch (c.cmp) {
  case Cmp::Eq: return l == r;
  case Cmp::Ne: return l != r;
  case Cmp::Lt: return l < r;
  case Cmp::Le: return l <= r;
  case Cmp::Gt: return l > r;
  case Cmp::Ge: return l >= r;
  }
  return false;
}

inline std::string concrete_key(const KeyExpr &k, const Packet &p) {
  BitString bits;
  for (const KeyAtom &a : k.atoms) {
    if (a.is_const) {
      bits.append_bits(a.value, a.width);
    } else {
      uint64_t v = p.field(a.field);
      size_t fw = field_width_bits(a.field);
      // slice [offset, offset+width) counted from the field's MSB
      uint64_t sliced = (v >> (fw - a.offset - a.width)) &
                        (a.width == 64 ? ~0ull : ((1ull << a.width) - 1));
      bits.append_bits(sliced, a.width);
    }
  }
  return std::string(bits.bytes().begin(), bits.bytes().end());
}

} // namespace detail

/// Walks one packet through its interface's pipeline against the given
/// store. In speculation mode the first write raises WriteAttempt before
/// taking effect.
class PacketInterpreter {
public:
  PacketInterpreter(const NfModel &model, const ExecHooks *hooks = nullptr)
      : model_(&model), hooks_(hooks) {}

  LogRecord run(const Packet &packet, StateBackend &store, uint32_t core,
                bool speculate_read_only = false) const {
    Packet working = packet;
    detail::Env env;
    env.pkt = &working;
    env.mutable_pkt = &working;
    LogRecord rec;
    rec.packet_id = packet.id;
    std::vector<OpResult> results;
    bool done = exec_steps(model_->pipelines[packet.in_interface], env, store,
                           core, speculate_read_only, rec, results);
    if (!done)
      throw std::logic_error("pipeline ended without a terminal action");
    for (size_t f = 0; f < kFieldCount; ++f)
      rec.final_fields[f] = working.field(static_cast<Field>(f));
    if (hooks_ && hooks_->on_results)
      hooks_->on_results(packet, results);
    return rec;
  }

private:
  bool exec_steps(const std::vector<Step> &steps, detail::Env &env,
                  StateBackend &store, uint32_t core, bool speculate,
                  LogRecord &rec, std::vector<OpResult> &results) const {
    for (const Step &s : steps) {
      switch (s.kind) {
      case Step::Kind::StateOp: {
        OpResult r = exec_state_op(s.state_op, env, store, core, speculate);
        results.push_back(r);
        if (!s.state_op.result_var.empty())
          env.vars[s.state_op.result_var] = r;
        break;
      }
      case Step::Kind::Branch: {
        const BranchStep &b = *s.branch;
        const auto &arm = detail::eval_condition(b.cond, env) ? b.then_steps
                                                              : b.else_steps;
        if (exec_steps(arm, env, store, core, speculate, rec, results))
          return true;
        break;
      }
      case Step::Kind::Rewrite:
        env.mutable_pkt->set_field(s.rewrite.field,
                                   detail::eval_value(*s.rewrite.value, env));
        break;
      case Step::Kind::Terminal:
        rec.forwarded = s.terminal.forward;
        rec.out_interface = s.terminal.out_interface;
        return true;
      }
    }
    return false;
  }

  OpResult exec_state_op(const StateOpStep &op, detail::Env &env,
                         StateBackend &store, uint32_t core,
                         bool speculate) const {
    if (speculate && state_op_is_write(op.op))
      throw WriteAttempt{};
    int64_t now = env.pkt->time;
    switch (op.op) {
    case StateOpKind::MapGet:
    case StateOpKind::MapPut:
    case StateOpKind::SketchTouch:
    case StateOpKind::SketchQuery: {
      std::string key = detail::concrete_key(op.key, *env.pkt);
      if (hooks_ && hooks_->on_state_access)
        hooks_->on_state_access(*env.pkt, op, key);
      switch (op.op) {
      case StateOpKind::MapGet:
        return store.map_get(op.object, key, now, core);
      case StateOpKind::MapPut:
        return store.map_put(op.object, key, detail::eval_value(*op.value, env),
                             now, core);
      case StateOpKind::SketchTouch:
        return store.sketch_touch(op.object, key, core);
      default:
        return store.sketch_query(op.object, key, core);
      }
    }
    case StateOpKind::VectorGet:
    case StateOpKind::VectorPut: {
      uint64_t idx = detail::eval_value(*op.index, env);
      if (hooks_ && hooks_->on_state_access)
        hooks_->on_state_access(*env.pkt, op, std::string());
      if (op.op == StateOpKind::VectorGet)
        return store.vector_get(op.object, idx, core);
      return store.vector_put(op.object, idx,
                              detail::eval_value(*op.value, env), core);
    }
    case StateOpKind::DchainAllocate:
      if (hooks_ && hooks_->on_state_access)
        hooks_->on_state_access(*env.pkt, op, std::string());
      return store.dchain_allocate(op.object, now, core);
    case StateOpKind::DchainRejuvenate: {
      uint64_t idx = detail::eval_value(*op.index, env);
      if (hooks_ && hooks_->on_state_access)
        hooks_->on_state_access(*env.pkt, op, std::string());
      return store.dchain_rejuvenate(op.object, idx, now, core);
    }
    }
    return {};
  }

  const NfModel *model_;
  const ExecHooks *hooks_;
};

/// Reference semantics: packets strictly in trace order against single
/// state instances.
inline BehaviorLog exec_sequential(const NfModel &model, const Trace &trace,
                                   const ExecHooks *hooks = nullptr) {
  PlainStateStore store(model);
  PacketInterpreter interp(model, hooks);
  BehaviorLog log;
  log.records.reserve(trace.packets.size());
  for (const Packet &p : trace.packets)
    log.records.push_back(interp.run(p, store, 0));
  return log;
}

} // namespace rsshard
