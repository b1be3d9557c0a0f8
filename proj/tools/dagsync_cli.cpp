// Command-line front end: run a scenario file, sweep reconciliation load to
// produce round-trip and bandwidth CSVs, or run the self-check suites.
// Exit codes: 0 success, 1 property violation, 2 configuration error.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dagsync/experiments.hpp"
#include "dagsync/selfcheck.hpp"
#include "dagsync/sim.hpp"

namespace {

using namespace dagsync;

struct SweepFlags {
  std::string protocol = "both";
  int replicas = 4;
  int pairs_recons = 100;
  std::string sweep;
  uint64_t seed = 7;
  std::string out;
  int bloom_bits = 10;
  int bloom_hashes = 7;
};

void add_sweep_flags(CLI::App* cmd, SweepFlags& f) {
  cmd->add_option("--protocol", f.protocol, "Protocol to sweep: basic, bloom, or both")
      ->check(CLI::IsMember({"basic", "bloom", "both"}));
  cmd->add_option("--replicas", f.replicas, "Number of replicas (default 4)");
  cmd->add_option("--pairs-recons", f.pairs_recons,
                  "Reconciliations per replica pair (default 100)");
  cmd->add_option("--sweep", f.sweep,
                  "Comma-separated updates-per-interval values (default 1,2,...,256 doubling)");
  cmd->add_option("--seed", f.seed, "Simulation seed (default 7)");
  cmd->add_option("--out", f.out, "Write CSV to this path instead of stdout");
  cmd->add_option("--bloom-bits", f.bloom_bits, "Filter bits per entry (default 10)");
  cmd->add_option("--bloom-hashes", f.bloom_hashes, "Filter index functions (default 7)");
}

std::vector<int> parse_sweep(const std::string& text) {
  if (text.empty()) return {1, 2, 4, 8, 16, 32, 64, 128, 256};
  std::vector<int> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      int v = std::stoi(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument("nonpositive");
      values.push_back(v);
    } catch (const std::exception&) {
      throw sim::ConfigError("sweep values must be positive integers: '" + item + "'");
    }
  }
  if (values.empty()) throw sim::ConfigError("empty sweep list");
  return values;
}

exp::SweepOptions to_options(const SweepFlags& f, ProtocolVersion p) {
  exp::SweepOptions opts;
  opts.protocol = p;
  opts.updates = parse_sweep(f.sweep);
  opts.replicas = f.replicas;
  opts.intervals = f.pairs_recons;
  opts.seed = f.seed;
  opts.bloom_bits_per_entry = f.bloom_bits;
  opts.bloom_hash_count = f.bloom_hashes;
  return opts;
}

void write_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::fputs(content.c_str(), stdout);
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw sim::ConfigError("cannot write to " + out_path);
  out << content;
}

std::string strip_header(const std::string& csv) {
  size_t nl = csv.find('\n');
  return nl == std::string::npos ? std::string() : csv.substr(nl + 1);
}

// Runs the sweep for the selected protocols and returns (csv, violations).
template <typename Format>
std::pair<std::string, std::vector<std::string>> sweep_csv(const SweepFlags& f,
                                                           Format format) {
  std::vector<ProtocolVersion> protocols;
  if (f.protocol == "basic" || f.protocol == "both")
    protocols.push_back(ProtocolVersion::Basic);
  if (f.protocol == "bloom" || f.protocol == "both")
    protocols.push_back(ProtocolVersion::Bloom);
  std::string csv;
  std::vector<std::string> violations;
  for (ProtocolVersion p : protocols) {
    std::vector<exp::SweepPoint> points = exp::run_sweep(to_options(f, p));
    for (const exp::SweepPoint& pt : points)
      for (const std::string& v : pt.property_violations)
        violations.push_back(exp::protocol_name(p) + "/updates=" +
                             std::to_string(pt.updates_per_interval) + ": " + v);
    std::string one = format(points, p);
    csv += csv.empty() ? one : strip_header(one);
  }
  return {csv, violations};
}

int report_violations(const std::vector<std::string>& violations) {
  if (violations.empty()) return 0;
  std::fprintf(stderr, "%zu property violation(s):\n", violations.size());
  for (const std::string& v : violations) std::fprintf(stderr, "  %s\n", v.c_str());
  return 1;
}

int cmd_run(const std::string& scenario_path, const std::string& out_path,
            const std::string& stats_path) {
  sim::ScenarioConfig cfg = sim::load_scenario_file(scenario_path);
  sim::ScenarioResult result = sim::run_scenario(cfg);

  int completed = 0;
  uint64_t bytes = 0, rt_sum = 0;
  for (const sim::ReconStats& r : result.recons) {
    if (!r.completed) continue;
    completed++;
    rt_sum += static_cast<uint64_t>(r.round_trips);
    bytes += r.bytes;
  }
  std::ostringstream report;
  report << "replicas: " << cfg.replicas << "\n"
         << "protocol: " << exp::protocol_name(cfg.protocol) << "\n"
         << "reconciliations: " << result.recons.size() << " (" << completed
         << " completed, " << result.skipped_opens << " opens skipped)\n";
  if (completed > 0)
    report << "mean round trips: " << static_cast<double>(rt_sum) / completed << "\n"
           << "mean bytes per reconciliation: " << static_cast<double>(bytes) / completed
           << "\n";
  for (const auto& [idx, digest] : result.store_digests)
    report << "replica r" << idx << ": " << result.store_sizes.at(idx)
           << " messages, store " << to_hex(digest).substr(0, 16) << "\n";
  for (const auto& [idx, digest] : result.state_digests)
    report << "replica r" << idx << ": state " << to_hex(digest).substr(0, 16) << "\n";
  report << "end time: " << result.end_time << "\n";
  write_output(out_path, report.str());
  if (!stats_path.empty()) {
    std::ofstream out(stats_path, std::ios::binary);
    if (!out) throw sim::ConfigError("cannot write to " + stats_path);
    out << sim::stats_csv(result.recons);
  }
  return report_violations(result.property_violations);
}

int cmd_verify(int seeds, int workloads, uint64_t seed) {
  check::MatrixOptions mo;
  mo.seeds = seeds;
  std::vector<std::string> violations = check::run_property_matrix(mo);
  std::printf("property matrix: %s\n", violations.empty() ? "ok" : "FAILED");

  std::vector<std::string> commute = check::run_commutativity_suite(workloads, seed);
  std::printf("delivery-order commutativity (%d workloads): %s\n", workloads,
              commute.empty() ? "ok" : "FAILED");
  violations.insert(violations.end(), commute.begin(), commute.end());

  std::vector<std::string> mutation = check::run_mutation_checks();
  std::printf("mutation checks (seeded faults caught): %s\n",
              mutation.empty() ? "ok" : "FAILED");
  violations.insert(violations.end(), mutation.begin(), mutation.end());

  return report_violations(violations);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byzantine causal broadcast: simulation, sweeps, and self-checks"};
  app.require_subcommand(1);

  std::string scenario_path, run_out, stats_path;
  CLI::App* run = app.add_subcommand("run", "Run a scenario file and report the outcome");
  run->add_option("scenario", scenario_path, "Scenario description file")->required();
  run->add_option("--out", run_out, "Write the report to this path instead of stdout");
  run->add_option("--stats", stats_path, "Write per-reconciliation CSV to this path");

  SweepFlags rt_flags;
  CLI::App* roundtrips = app.add_subcommand(
      "roundtrips", "Sweep update load and report round trips per reconciliation");
  add_sweep_flags(roundtrips, rt_flags);

  SweepFlags bw_flags;
  CLI::App* bandwidth = app.add_subcommand(
      "bandwidth", "Sweep update load and report traffic per reconciliation");
  add_sweep_flags(bandwidth, bw_flags);

  int verify_seeds = 3, verify_workloads = 30;
  uint64_t verify_seed = 42;
  CLI::App* verify = app.add_subcommand(
      "verify", "Run the adversary property matrix, commutativity brute force, and "
                "mutation checks");
  verify->add_option("--seeds", verify_seeds, "Seeds per matrix cell (default 3)");
  verify->add_option("--workloads", verify_workloads,
                     "Randomized commutativity workloads (default 30)");
  verify->add_option("--seed", verify_seed, "Base seed for the workloads (default 42)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(scenario_path, run_out, stats_path);
    if (roundtrips->parsed()) {
      auto [csv, violations] = sweep_csv(rt_flags, exp::roundtrips_csv);
      write_output(rt_flags.out, csv);
      return report_violations(violations);
    }
    if (bandwidth->parsed()) {
      auto [csv, violations] = sweep_csv(bw_flags, exp::bandwidth_csv);
      write_output(bw_flags.out, csv);
      return report_violations(violations);
    }
    if (verify->parsed()) return cmd_verify(verify_seeds, verify_workloads, verify_seed);
  } catch (const sim::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const rel::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
