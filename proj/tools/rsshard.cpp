#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rsshard/pipeline.hpp"

using namespace rsshard;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitLockFallback = 2;

uint64_t resolve_seed(CLI::Option *opt, uint64_t value) {
  if (opt->count())
    return value;
  std::random_device rd;
  uint64_t s = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  std::cout << "seed: " << s << " (drawn; pass --seed to reproduce)\n";
  return s;
}

NicProfile load_profile_or_default(const std::string &path) {
  if (path.empty())
    return NicProfile::default_profile();
  return load_nic_profile(path);
}

Strategy parse_strategy(const std::string &s) {
  if (s == "shared-nothing")
    return Strategy::SharedNothing;
  if (s == "locks")
    return Strategy::Locks;
  return Strategy::Auto;
}

void write_file(const std::string &path, const std::string &content) {
  std::ofstream f(path);
  if (!f)
    throw std::runtime_error("cannot write " + path);
  f << content;
}

int cmd_analyze(const std::string &model_path, const std::string &profile_path,
                const std::string &strategy, uint64_t seed,
                const std::string &out_config, const std::string &out_report,
                uint64_t verify_samples) {
  NfModel model = load_model(model_path);
  NicProfile profile = load_profile_or_default(profile_path);
  AnalyzeOptions opts = AnalyzeOptions::with_seed(seed);
  opts.strategy = parse_strategy(strategy);
  opts.verify_samples = verify_samples;
  AnalysisReport rep = analyze_model(model, profile, opts);

  std::string text = report_to_text(rep);
  std::cout << text;
  if (!out_report.empty())
    write_file(out_report, text);

  if (!rep.error.empty())
    return kExitError;
  if (rep.bundle && !out_config.empty())
    save_rss_config(*rep.bundle, out_config);
  if (rep.verification && rep.verification->violations > 0)
    return kExitError;
  return rep.fallback ? kExitLockFallback : kExitOk;
}

TrafficSpec spec_from_flags(const std::string &dist, uint64_t packets,
                            uint64_t flows, uint64_t churn, double symmetric,
                            double noise, const std::string &arrival,
                            uint32_t src_hosts, uint32_t dst_hosts,
                            uint32_t size) {
  TrafficSpec t;
  t.dist = dist == "zipf" ? TrafficSpec::Dist::Zipf : TrafficSpec::Dist::Uniform;
  t.packets = packets;
  t.flows = flows;
  t.churn_per_1000 = churn;
  t.symmetric_ratio = symmetric;
  t.noise_ratio = noise;
  t.arrival = arrival == "iface1" ? TrafficSpec::Arrival::Iface1
            : arrival == "parity" ? TrafficSpec::Arrival::ByFlowParity
                                  : TrafficSpec::Arrival::Iface0;
  t.src_hosts = src_hosts;
  t.dst_hosts = dst_hosts;
  t.packet_size = size;
  return t;
}

int cmd_simulate(const std::string &model_path, const std::string &config_path,
                 const std::string &trace_path, uint32_t cores,
                 const std::string &mode, const std::string &capacity,
                 const std::string &out_dir, uint64_t seed) {
  NfModel model = load_model(model_path);
  RssConfigBundle bundle = load_rss_config(config_path);
  Trace trace = load_trace(trace_path);

  if (bundle.interfaces.size() != model.interfaces.size())
    throw std::runtime_error("config and model disagree on interface count");
  for (size_t i = 0; i < bundle.interfaces.size(); ++i)
    if (bundle.interfaces[i].interface_name != model.interfaces[i])
      throw std::runtime_error("config interface order does not match model");

  std::string effective = mode == "auto" ? bundle.strategy : mode;
  if (effective == "shared-nothing" && bundle.strategy == "locks") {
    std::cout << "refused: the config was produced for lock-based execution\n";
    NicProfile profile = NicProfile::default_profile();
    ExecutionTree tree = enumerate_paths(model);
    StatefulReport rep = filter_readonly(build_report(tree), model);
    SolveResult solved = solve_sharding(rep, model, profile);
    std::cout << "diagnosis: " << solved.diagnosis.to_text() << "\n";
    return kExitError;
  }

  SimConfig cfg;
  cfg.cores = cores;
  cfg.capacity = capacity == "shard" ? SimConfig::Capacity::Shard
                                     : SimConfig::Capacity::Replicate;
  cfg.seed = seed;

  BehaviorLog seq = exec_sequential(model, trace);
  std::pair<BehaviorLog, Metrics> run =
      effective == "locks" ? exec_lock_based(model, trace, cfg, &bundle)
                           : exec_shared_nothing(model, bundle, trace, cfg);
  EquivalenceReport eq = check_equivalence(seq, run.first, model);
  SkewReport skew = measure_skew(run.second);

  std::cout << "mode: " << effective << ", cores: " << cores << "\n";
  std::cout << "equivalence: " << eq.to_text();
  std::cout << metrics_to_text(run.second);
  std::cout << "skew: max/mean " << skew.max_mean_ratio << "\n";

  if (!out_dir.empty()) {
    write_file(out_dir + "/metrics.csv", metrics_to_csv(run.second));
    write_file(out_dir + "/skew.csv", skew.to_csv());
    write_file(out_dir + "/equivalence.txt", eq.to_text());
  }
  return eq.equivalent ? kExitOk : kExitError;
}

int cmd_gen_traffic(const TrafficSpec &spec, const std::string &out,
                    uint64_t seed, bool text) {
  Trace t = gen_traffic(spec, seed);
  save_trace(t, out, text);
  std::cout << "wrote " << t.packets.size() << " packets to " << out << "\n";
  return kExitOk;
}

int cmd_rebalance(const std::string &model_path, const std::string &config_path,
                  const std::string &trace_path, uint32_t cores,
                  const std::string &out) {
  NfModel model = load_model(model_path);
  RssConfigBundle bundle = load_rss_config(config_path);
  Trace trace = load_trace(trace_path);
  (void)model;

  RssEngine engine = engine_from_bundle(bundle, cores);
  size_t table_size = engine.config(0).table.size();
  std::vector<uint64_t> histogram(table_size, 0);
  for (const Packet &p : trace.packets) {
    size_t entry = 0;
    engine.steer(p.in_interface, p, &entry);
    histogram[entry] += 1;
  }
  // one shared table keeps cross-interface co-location intact
  IndirectionTable balanced =
      rebalance_table(engine.config(0).table, histogram, cores);
  for (auto &ic : bundle.interfaces)
    ic.table = balanced;
  save_rss_config(bundle, out);
  std::cout << "rebalanced table written to " << out << "\n";
  return kExitOk;
}

int cmd_corpus_check(const std::string &corpus_dir, uint64_t seed,
                     uint64_t verify_samples, uint64_t equiv_packets,
                     bool skip_equivalence) {
  std::vector<CorpusEntry> entries = load_corpus_manifest(corpus_dir);
  NicProfile profile = NicProfile::default_profile();
  bool all_ok = true;
  std::cout << "name        verdict          keys      equivalence\n";
  for (const CorpusEntry &entry : entries) {
    NfModel model = load_model(entry.file);
    AnalyzeOptions opts = AnalyzeOptions::with_seed(seed);
    opts.verify_samples = verify_samples;
    AnalysisReport rep = analyze_model(model, profile, opts);

    std::string class_err = corpus_classification_mismatch(entry, rep);
    bool keys_ok = rep.bundle && (!rep.verification || rep.verification->violations == 0);
    std::string equiv = "-";
    if (!skip_equivalence && rep.bundle && class_err.empty()) {
      TrafficSpec spec = entry.traffic;
      spec.packets = equiv_packets;
      spec.flows = std::min<uint64_t>(spec.flows, equiv_packets / 4 + 1);
      Trace trace = gen_traffic(spec, seed);
      BehaviorLog seq = exec_sequential(model, trace);
      bool ok = true;
      for (uint32_t cores : {1u, 4u}) {
        SimConfig cfg;
        cfg.cores = cores;
        cfg.capacity = SimConfig::Capacity::Replicate;
        cfg.seed = seed;
        auto run = rep.strategy == "locks"
                       ? exec_lock_based(model, trace, cfg, &*rep.bundle)
                       : exec_shared_nothing(model, *rep.bundle, trace, cfg);
        if (!check_equivalence(seq, run.first, model).equivalent)
          ok = false;
      }
      equiv = ok ? "pass" : "FAIL";
      if (!ok)
        all_ok = false;
    }

    bool entry_ok = class_err.empty() && keys_ok;
    if (!entry_ok)
      all_ok = false;
    std::ostringstream line;
    line.width(12);
    line << std::left << entry.name;
    std::string verdict_cell =
        class_err.empty() ? rep.strategy + (rep.fallback ? " (fallback)" : "")
                          : "MISMATCH: " + class_err;
    line.width(17);
    line << std::left << verdict_cell;
    line.width(10);
    line << std::left << (keys_ok ? "pass" : (rep.bundle ? "FAIL" : "-"));
    line << equiv;
    std::cout << line.str() << "\n";
  }
  std::cout << (all_ok ? "corpus check passed" : "corpus check FAILED") << "\n";
  return all_ok ? kExitOk : kExitError;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"NF sharding analyzer, hash key synthesizer and deterministic "
               "multicore simulator"};
  app.require_subcommand(1);

  // analyze
  auto *analyze = app.add_subcommand(
      "analyze", "derive sharding constraints and synthesize a steering config");
  std::string model_path, profile_path, strategy = "auto", out_config, out_report;
  uint64_t seed = 0, verify_samples = 100000;
  analyze->add_option("model", model_path, "model file")->required();
  analyze->add_option("--profile", profile_path, "nic profile file");
  analyze->add_option("--strategy", strategy, "auto | shared-nothing | locks")
      ->check(CLI::IsMember({"auto", "shared-nothing", "locks"}));
  auto *seed_opt = analyze->add_option("--seed", seed, "rng seed");
  analyze->add_option("--out", out_config, "write the steering config here");
  analyze->add_option("--report", out_report, "also write the report here");
  analyze->add_option("--verify-samples", verify_samples,
                      "constrained pairs sampled per constraint");

  // simulate
  auto *simulate = app.add_subcommand(
      "simulate", "run sequential and parallel executions and compare");
  std::string sim_model, sim_config, sim_trace, sim_mode = "auto",
              sim_capacity = "replicate", sim_outdir;
  uint32_t sim_cores = 4;
  uint64_t sim_seed = 0;
  simulate->add_option("model", sim_model, "model file")->required();
  simulate->add_option("--config", sim_config, "steering config")->required();
  simulate->add_option("--trace", sim_trace, "trace file")->required();
  simulate->add_option("--cores", sim_cores, "core count");
  simulate->add_option("--mode", sim_mode, "auto | shared-nothing | locks")
      ->check(CLI::IsMember({"auto", "shared-nothing", "locks"}));
  simulate->add_option("--capacity", sim_capacity, "shard | replicate")
      ->check(CLI::IsMember({"shard", "replicate"}));
  simulate->add_option("--out-dir", sim_outdir, "write csv reports here");
  auto *sim_seed_opt = simulate->add_option("--seed", sim_seed, "rng seed");

  // gen-traffic
  auto *gen = app.add_subcommand("gen-traffic", "synthesize a packet trace");
  std::string gen_out, gen_dist = "uniform", gen_arrival = "iface0";
  uint64_t gen_packets = 50000, gen_flows = 1000, gen_churn = 0, gen_seed = 0;
  double gen_symmetric = 0.0, gen_noise = 0.0;
  uint32_t gen_src_hosts = 0, gen_dst_hosts = 0, gen_size = 64;
  bool gen_text = false;
  gen->add_option("--out", gen_out, "output trace file")->required();
  gen->add_option("--dist", gen_dist, "uniform | zipf")
      ->check(CLI::IsMember({"uniform", "zipf"}));
  gen->add_option("--packets", gen_packets, "packet count");
  gen->add_option("--flows", gen_flows, "flow count");
  gen->add_option("--churn", gen_churn, "flow replacements per 1000 packets");
  gen->add_option("--symmetric", gen_symmetric, "reply ratio from the peer side");
  gen->add_option("--noise", gen_noise, "unsolicited low-port packet ratio");
  gen->add_option("--arrival", gen_arrival, "iface0 | iface1 | parity")
      ->check(CLI::IsMember({"iface0", "iface1", "parity"}));
  gen->add_option("--src-hosts", gen_src_hosts, "source address pool (0 = open)");
  gen->add_option("--dst-hosts", gen_dst_hosts, "destination address pool");
  gen->add_option("--size", gen_size, "packet size in bytes");
  gen->add_flag("--text", gen_text, "write the text format instead of binary");
  auto *gen_seed_opt = gen->add_option("--seed", gen_seed, "rng seed");

  // corpus-check
  auto *corpus = app.add_subcommand(
      "corpus-check", "analyze every bundled model and compare to expectations");
  std::string corpus_dir = "corpus";
  uint64_t corpus_seed = 0, corpus_verify = 100000, corpus_equiv_packets = 5000;
  bool corpus_skip_equiv = false;
  corpus->add_option("--corpus", corpus_dir, "corpus directory");
  auto *corpus_seed_opt = corpus->add_option("--seed", corpus_seed, "rng seed");
  corpus->add_option("--verify-samples", corpus_verify, "verification samples");
  corpus->add_option("--equiv-packets", corpus_equiv_packets,
                     "equivalence trace length");
  corpus->add_flag("--skip-equivalence", corpus_skip_equiv,
                   "classification and key checks only");

  // rebalance
  auto *rebalance = app.add_subcommand(
      "rebalance", "rebalance a config's indirection table against a trace");
  std::string reb_model, reb_config, reb_trace, reb_out;
  uint32_t reb_cores = 16;
  rebalance->add_option("model", reb_model, "model file")->required();
  rebalance->add_option("--config", reb_config, "steering config")->required();
  rebalance->add_option("--trace", reb_trace, "trace file")->required();
  rebalance->add_option("--cores", reb_cores, "core count");
  rebalance->add_option("--out", reb_out, "rebalanced config output")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(analyze))
      return cmd_analyze(model_path, profile_path, strategy,
                         resolve_seed(seed_opt, seed), out_config, out_report,
                         verify_samples);
    if (app.got_subcommand(simulate))
      return cmd_simulate(sim_model, sim_config, sim_trace, sim_cores, sim_mode,
                          sim_capacity, sim_outdir,
                          resolve_seed(sim_seed_opt, sim_seed));
    if (app.got_subcommand(gen))
      return cmd_gen_traffic(
          spec_from_flags(gen_dist, gen_packets, gen_flows, gen_churn,
                          gen_symmetric, gen_noise, gen_arrival, gen_src_hosts,
                          gen_dst_hosts, gen_size),
          gen_out, resolve_seed(gen_seed_opt, gen_seed), gen_text);
    if (app.got_subcommand(corpus))
      return cmd_corpus_check(corpus_dir, resolve_seed(corpus_seed_opt, corpus_seed),
                              corpus_verify, corpus_equiv_packets,
                              corpus_skip_equiv);
    if (app.got_subcommand(rebalance))
      return cmd_rebalance(reb_model, reb_config, reb_trace, reb_cores, reb_out);
  } catch (const ParseError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
