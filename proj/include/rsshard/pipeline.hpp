#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsshard/keygen.hpp"
#include "rsshard/model.hpp"
#include "rsshard/parsim.hpp"
#include "rsshard/paths.hpp"
#include "rsshard/rss.hpp"
#include "rsshard/sharding.hpp"
#include "rsshard/traffic.hpp"

namespace rsshard {

enum class Strategy : uint8_t { Auto, SharedNothing, Locks };

struct AnalyzeOptions {
  Strategy strategy = Strategy::Auto;
  uint64_t seed = 1;
  uint64_t verify_samples = 100000;
  KeySearchConfig keygen;
  SolveOptions solve;

  static AnalyzeOptions with_seed(uint64_t s) {
    AnalyzeOptions o;
    o.seed = s;
    o.keygen.seed = s;
    o.solve.seed = s;
    return o;
  }
};

struct AnalysisReport {
  std::string model_name;
  std::vector<std::string> interfaces;
  Diagnosis diagnosis;
  std::optional<ShardingSolution> solution;
  PairConstraintSet constraints;
  std::vector<FieldSet> fieldsets;
  std::optional<RssConfigBundle> bundle;
  std::optional<VerificationReport> verification;
  std::optional<DistributionScore> distribution;
  std::string strategy; // "shared-nothing" or "locks"
  bool fallback = false;
  uint64_t seed = 0;
  std::string error; // non-empty when the pipeline could not produce a config
};

namespace detail {

inline PairConstraintSet empty_constraints(size_t interfaces) {
  PairConstraintSet set;
  for (uint32_t i = 0; i < interfaces; ++i)
    for (uint32_t j = 0; j <= i; ++j) {
      PairConstraints pc;
      pc.iface_a = i;
      pc.iface_b = j;
      set.pairs.push_back(pc);
    }
  return set;
}

inline RssConfigBundle lock_bundle(const NfModel &model,
                                   const NicProfile &profile,
                                   const AnalyzeOptions &opts) {
  PairConstraintSet none = empty_constraints(model.interfaces.size());
  std::vector<FieldSet> fieldsets =
      select_fieldsets(none, profile, model.interfaces.size());
  KeySearchConfig kc = opts.keygen;
  kc.seed = opts.seed;
  RssConfigBundle b =
      synthesize_keys(none, fieldsets, model.interfaces, profile, kc);
  b.strategy = "locks";
  return b;
}

} // namespace detail

/// Full analysis pipeline: enumerate paths, build and filter the stateful
/// report, solve the sharding rules, then synthesize, verify and score keys
/// (or fall back to a lock-mode config when requested or unavoidable).
inline AnalysisReport analyze_model(const NfModel &model,
                                    const NicProfile &profile,
                                    const AnalyzeOptions &opts) {
  AnalysisReport rep;
  rep.model_name = model.name;
  rep.interfaces = model.interfaces;
  rep.seed = opts.seed;

  ExecutionTree tree = enumerate_paths(model);
  StatefulReport report = filter_readonly(build_report(tree), model);

  SolveResult solved;
  if (report.entries.empty()) {
    solved.diagnosis.verdict = Diagnosis::Verdict::NoConstraints;
  } else {
    SolveOptions so = opts.solve;
    so.seed = opts.seed;
    solved = solve_sharding(report, model, profile, so);
  }
  rep.diagnosis = solved.diagnosis;

  auto run_lock_path = [&](bool is_fallback) {
    rep.strategy = "locks";
    rep.fallback = is_fallback;
    rep.constraints = detail::empty_constraints(model.interfaces.size());
    try {
      RssConfigBundle b = detail::lock_bundle(model, profile, opts);
      b.seed = opts.seed;
      rep.distribution = score_distribution(b, opts.keygen.quality_flows,
                                            opts.keygen.quality_cores, opts.seed);
      for (const auto &ic : b.interfaces)
        rep.fieldsets.push_back(ic.fieldset);
      rep.verification =
          verify_keys(b, rep.constraints, opts.verify_samples, opts.seed);
      rep.bundle = std::move(b);
    } catch (const std::exception &e) {
      rep.error = e.what();
    }
  };

  bool feasible = solved.feasible() ||
                  solved.diagnosis.verdict == Diagnosis::Verdict::NoConstraints;

  if (opts.strategy == Strategy::Locks) {
    run_lock_path(false);
    return rep;
  }

  if (!feasible) {
    if (opts.strategy == Strategy::SharedNothing) {
      rep.strategy = "shared-nothing";
      rep.error = "shared-nothing requested but the model admits none";
      return rep;
    }
    run_lock_path(true);
    return rep;
  }

  rep.strategy = "shared-nothing";
  try {
    if (solved.feasible()) {
      rep.solution = solved.solution;
      rep.constraints = emit_constraints(*solved.solution, model);
    } else {
      rep.constraints = detail::empty_constraints(model.interfaces.size());
    }
    rep.fieldsets =
        select_fieldsets(rep.constraints, profile, model.interfaces.size());
    KeySearchConfig kc = opts.keygen;
    kc.seed = opts.seed;
    RssConfigBundle b = synthesize_keys(rep.constraints, rep.fieldsets,
                                        model.interfaces, profile, kc);
    b.strategy = "shared-nothing";
    b.seed = opts.seed;
    rep.verification =
        verify_keys(b, rep.constraints, opts.verify_samples, opts.seed);
    rep.distribution = score_distribution(b, opts.keygen.quality_flows,
                                          opts.keygen.quality_cores, opts.seed);
    rep.bundle = std::move(b);
  } catch (const FieldsetInfeasible &e) {
    // hardware-level incompatibility, same fallback contract as R4
    rep.diagnosis.verdict = Diagnosis::Verdict::Infeasible;
    rep.diagnosis.reasons.push_back({"R4", "-", e.what()});
    if (opts.strategy == Strategy::SharedNothing) {
      rep.error = e.what();
      return rep;
    }
    run_lock_path(true);
  } catch (const std::exception &e) {
    rep.error = e.what();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json atom_to_json(const KeyAtom &a) {
  nlohmann::json j;
  if (a.is_const) {
    j["const"] = a.value;
    j["width"] = a.width;
  } else {
    j["field"] = field_name(a.field);
    j["offset"] = a.offset;
    j["width"] = a.width;
  }
  return j;
}

inline KeyAtom atom_from_json(const nlohmann::json &j) {
  KeyAtom a;
  if (j.contains("const")) {
    a.is_const = true;
    a.value = j.at("const").get<uint64_t>();
    a.width = j.at("width").get<size_t>();
  } else {
    auto f = field_from_name(j.at("field").get<std::string>());
    if (!f)
      throw std::runtime_error("unknown field in machine section");
    a.field = *f;
    a.offset = j.at("offset").get<size_t>();
    a.width = j.at("width").get<size_t>();
  }
  return a;
}

} // namespace detail

inline nlohmann::json constraints_to_json(const PairConstraintSet &set) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto &p : set.pairs) {
    nlohmann::json jp;
    jp["iface_a"] = p.iface_a;
    jp["iface_b"] = p.iface_b;
    nlohmann::json disjuncts = nlohmann::json::array();
    for (const auto &d : p.disjuncts) {
      nlohmann::json atoms = nlohmann::json::array();
      for (const auto &a : d) {
        nlohmann::json ja;
        ja["a"] = detail::atom_to_json(a.a);
        ja["b"] = detail::atom_to_json(a.b);
        atoms.push_back(ja);
      }
      disjuncts.push_back(atoms);
    }
    jp["disjuncts"] = disjuncts;
    pairs.push_back(jp);
  }
  return pairs;
}

inline PairConstraintSet constraints_from_json(const nlohmann::json &pairs) {
  PairConstraintSet set;
  for (const auto &jp : pairs) {
    PairConstraints p;
    p.iface_a = jp.at("iface_a").get<uint32_t>();
    p.iface_b = jp.at("iface_b").get<uint32_t>();
    for (const auto &jd : jp.at("disjuncts")) {
      std::vector<PairAtom> d;
      for (const auto &ja : jd)
        d.push_back({detail::atom_from_json(ja.at("a")),
                     detail::atom_from_json(ja.at("b"))});
      p.disjuncts.push_back(std::move(d));
    }
    set.pairs.push_back(std::move(p));
  }
  return set;
}

inline nlohmann::json report_to_json(const AnalysisReport &rep) {
  nlohmann::json j;
  j["model"] = rep.model_name;
  j["interfaces"] = rep.interfaces;
  j["verdict"] = verdict_name(rep.diagnosis.verdict);
  j["strategy"] = rep.strategy;
  j["fallback"] = rep.fallback;
  j["seed"] = rep.seed;
  nlohmann::json reasons = nlohmann::json::array();
  for (const auto &r : rep.diagnosis.reasons)
    reasons.push_back({{"rule", r.rule}, {"object", r.object},
                       {"explanation", r.explanation}});
  j["reasons"] = reasons;
  if (rep.solution) {
    nlohmann::json fields = nlohmann::json::object();
    for (size_t i = 0; i < rep.interfaces.size(); ++i) {
      nlohmann::json lst = nlohmann::json::array();
      for (const KeyAtom &a : rep.solution->shard_fields[i])
        lst.push_back(detail::atom_to_json(a));
      fields[rep.interfaces[i]] = lst;
    }
    j["shard_fields"] = fields;
    nlohmann::json just = nlohmann::json::array();
    for (const auto &r : rep.solution->justifications)
      just.push_back({{"rule", r.rule}, {"object", r.object},
                      {"explanation", r.explanation}});
    j["justifications"] = just;
  }
  j["constraints"] = constraints_to_json(rep.constraints);
  nlohmann::json fsets = nlohmann::json::array();
  for (const auto &fs : rep.fieldsets) {
    nlohmann::json jf;
    jf["id"] = fs.id;
    nlohmann::json names = nlohmann::json::array();
    for (Field f : fs.fields)
      names.push_back(field_name(f));
    jf["fields"] = names;
    fsets.push_back(jf);
  }
  j["fieldsets"] = fsets;
  if (rep.bundle) {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto &ic : rep.bundle->interfaces)
      keys.push_back({{"interface", ic.interface_name},
                      {"key", ic.key.to_hex()},
                      {"fieldset", ic.fieldset.id}});
    j["keys"] = keys;
    std::ostringstream hash;
    hash << std::hex << rep.bundle->constraints_hash;
    j["constraints_hash"] = hash.str();
  }
  if (rep.verification) {
    j["verification"] = {{"samples", rep.verification->constrained_samples},
                         {"violations", rep.verification->violations},
                         {"control_samples", rep.verification->control_samples},
                         {"control_collisions", rep.verification->control_collisions}};
  }
  if (rep.distribution)
    j["distribution_max_mean"] = rep.distribution->max_mean_ratio;
  if (!rep.error.empty())
    j["error"] = rep.error;
  return j;
}

constexpr char kMachineBegin[] = "--- machine readable ---";
constexpr char kMachineEnd[] = "--- end machine readable ---";

inline std::string report_to_text(const AnalysisReport &rep) {
  std::ostringstream os;
  os << "analysis of " << rep.model_name << "\n";
  os << "verdict: " << verdict_name(rep.diagnosis.verdict) << "\n";
  os << "strategy: " << rep.strategy << (rep.fallback ? " (fallback)" : "")
     << "\n";
  for (const auto &r : rep.diagnosis.reasons)
    os << "  [" << r.rule << "] " << r.object << ": " << r.explanation << "\n";
  if (rep.solution) {
    os << "sharding fields:\n";
    for (size_t i = 0; i < rep.interfaces.size(); ++i) {
      os << "  " << rep.interfaces[i] << ":";
      if (rep.solution->shard_fields[i].empty())
        os << " (unconstrained)";
      for (const KeyAtom &a : rep.solution->shard_fields[i])
        os << ' ' << key_atom_to_string(a);
      os << "\n";
    }
    os << "rule justifications:\n";
    for (const auto &r : rep.solution->justifications)
      os << "  [" << r.rule << "] " << r.object << ": " << r.explanation << "\n";
    os << "constraints:\n" << pair_constraints_to_text(rep.constraints, rep.interfaces);
  }
  if (!rep.fieldsets.empty()) {
    os << "fieldsets:";
    for (size_t i = 0; i < rep.fieldsets.size(); ++i)
      os << ' ' << rep.interfaces[i] << '=' << rep.fieldsets[i].id;
    os << "\n";
  }
  if (rep.bundle)
    for (const auto &ic : rep.bundle->interfaces)
      os << "key " << ic.interface_name << ": " << ic.key.to_hex() << "\n";
  if (rep.verification)
    os << "verification: " << rep.verification->violations << " violations in "
       << rep.verification->constrained_samples
       << " constrained samples (control collision rate "
       << rep.verification->control_collision_rate() << ")\n";
  if (rep.distribution)
    os << "distribution: max/mean " << rep.distribution->max_mean_ratio << "\n";
  if (!rep.error.empty())
    os << "error: " << rep.error << "\n";
  os << kMachineBegin << "\n";
  os << report_to_json(rep).dump(2) << "\n";
  os << kMachineEnd << "\n";
  return os.str();
}

/// Extracts and re-parses the machine-readable section of a report.
inline nlohmann::json machine_section_from_text(const std::string &text) {
  auto begin = text.find(kMachineBegin);
  auto end = text.find(kMachineEnd);
  if (begin == std::string::npos || end == std::string::npos)
    throw std::runtime_error("report has no machine readable section");
  begin += sizeof(kMachineBegin); // skip marker and newline
  return nlohmann::json::parse(text.substr(begin, end - begin));
}

// ---------------------------------------------------------------------------
// Bundled corpus

struct CorpusEntry {
  std::string name;
  std::string file;
  std::string expected_verdict; // shared-nothing | no-constraints | locks
  std::map<std::string, std::vector<std::string>> expected_fields;
  std::string expected_rule; // must appear among justifications or reasons
  std::vector<std::string> expected_cross; // "fieldA=fieldB" atoms, iface pair 0/1
  TrafficSpec traffic;
};

inline TrafficSpec traffic_from_json(const nlohmann::json &j) {
  TrafficSpec t;
  if (j.contains("dist"))
    t.dist = j.at("dist") == "zipf" ? TrafficSpec::Dist::Zipf
                                    : TrafficSpec::Dist::Uniform;
  if (j.contains("packets"))
    t.packets = j.at("packets").get<uint64_t>();
  if (j.contains("flows"))
    t.flows = j.at("flows").get<uint64_t>();
  if (j.contains("churn"))
    t.churn_per_1000 = j.at("churn").get<uint64_t>();
  if (j.contains("arrival")) {
    std::string a = j.at("arrival");
    t.arrival = a == "iface1" ? TrafficSpec::Arrival::Iface1
              : a == "parity" ? TrafficSpec::Arrival::ByFlowParity
                              : TrafficSpec::Arrival::Iface0;
  }
  if (j.contains("symmetric"))
    t.symmetric_ratio = j.at("symmetric").get<double>();
  if (j.contains("noise"))
    t.noise_ratio = j.at("noise").get<double>();
  if (j.contains("src_hosts"))
    t.src_hosts = j.at("src_hosts").get<uint32_t>();
  if (j.contains("dst_hosts"))
    t.dst_hosts = j.at("dst_hosts").get<uint32_t>();
  return t;
}

inline std::vector<CorpusEntry> load_corpus_manifest(const std::string &dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f)
    throw std::runtime_error("cannot open corpus manifest in " + dir);
  nlohmann::json j = nlohmann::json::parse(f);
  std::vector<CorpusEntry> out;
  for (const auto &je : j.at("entries")) {
    CorpusEntry e;
    e.name = je.at("name");
    e.file = dir + "/" + je.at("file").get<std::string>();
    e.expected_verdict = je.at("verdict");
    if (je.contains("fields"))
      for (auto it = je.at("fields").begin(); it != je.at("fields").end(); ++it)
        e.expected_fields[it.key()] =
            it.value().get<std::vector<std::string>>();
    if (je.contains("rule"))
      e.expected_rule = je.at("rule");
    if (je.contains("cross"))
      e.expected_cross = je.at("cross").get<std::vector<std::string>>();
    if (je.contains("traffic"))
      e.traffic = traffic_from_json(je.at("traffic"));
    out.push_back(std::move(e));
  }
  if (out.empty())
    throw std::runtime_error("corpus manifest lists no entries");
  return out;
}

/// Classification check for one corpus entry against an analysis report.
/// Returns an empty string on success, otherwise what diverged.
inline std::string corpus_classification_mismatch(const CorpusEntry &entry,
                                                  const AnalysisReport &rep) {
  std::string got;
  if (rep.diagnosis.verdict == Diagnosis::Verdict::NoConstraints)
    got = "no-constraints";
  else if (rep.diagnosis.verdict == Diagnosis::Verdict::SharedNothing)
    got = "shared-nothing";
  else
    got = "locks";
  if (got != entry.expected_verdict)
    return "verdict " + got + " (wanted " + entry.expected_verdict + ")";

  if (!entry.expected_fields.empty()) {
    if (!rep.solution)
      return "expected sharding fields but no solution";
    for (const auto &[iface, fields] : entry.expected_fields) {
      auto idx = std::find(rep.interfaces.begin(), rep.interfaces.end(), iface);
      if (idx == rep.interfaces.end())
        return "unknown interface " + iface + " in expectations";
      size_t i = static_cast<size_t>(idx - rep.interfaces.begin());
      std::vector<std::string> got_fields;
      for (const KeyAtom &a : rep.solution->shard_fields[i])
        got_fields.push_back(key_atom_to_string(a));
      std::vector<std::string> want = fields;
      std::sort(got_fields.begin(), got_fields.end());
      std::sort(want.begin(), want.end());
      if (got_fields != want) {
        std::string s = "fields for " + iface + ":";
        for (const auto &g : got_fields)
          s += " " + g;
        return s;
      }
    }
  }
  if (!entry.expected_rule.empty()) {
    bool cited = false;
    for (const auto &r : rep.diagnosis.reasons)
      if (r.rule == entry.expected_rule)
        cited = true;
    if (rep.solution)
      for (const auto &r : rep.solution->justifications)
        if (r.rule == entry.expected_rule)
          cited = true;
    if (!cited)
      return "rule " + entry.expected_rule + " not cited";
  }
  if (!entry.expected_cross.empty()) {
    const PairConstraints *pc = rep.constraints.find(1, 0);
    if (!pc || pc->disjuncts.empty())
      return "expected cross-interface constraints but none emitted";
    std::vector<std::string> got_atoms;
    for (const auto &a : pc->disjuncts.front()) {
      // pair stored with iface_a = 1 (second interface); report as i0=i1
      got_atoms.push_back(key_atom_to_string(a.b) + "=" + key_atom_to_string(a.a));
    }
    std::sort(got_atoms.begin(), got_atoms.end());
    std::vector<std::string> want = entry.expected_cross;
    std::sort(want.begin(), want.end());
    if (got_atoms != want) {
      std::string s = "cross constraints:";
      for (const auto &g : got_atoms)
        s += " " + g;
      return s;
    }
  }
  return "";
}

} // namespace rsshard
