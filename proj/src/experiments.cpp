#include "dagsync/experiments.hpp"

#include <cstdio>

namespace dagsync::exp {

sim::ScenarioConfig sweep_scenario(const SweepOptions& opts, int updates_per_interval) {
  sim::ScenarioConfig cfg;
  cfg.replicas = opts.replicas;
  cfg.protocol = opts.protocol;
  cfg.schedule = sim::Schedule::Sequential;
  cfg.updates_per_interval = updates_per_interval;
  cfg.intervals = opts.intervals;
  cfg.quiet_intervals = opts.quiet_intervals;
  cfg.seed = opts.seed;
  cfg.bloom_bits_per_entry = opts.bloom_bits_per_entry;
  cfg.bloom_hash_count = opts.bloom_hash_count;
  return cfg;
}

SweepPoint summarize(const sim::ScenarioResult& result, const sim::ScenarioConfig& cfg) {
  SweepPoint p;
  p.updates_per_interval = cfg.updates_per_interval;
  int one = 0, two = 0, more = 0;
  uint64_t rt_sum = 0;
  for (const sim::ReconStats& r : result.recons) {
    if (!r.completed || r.interval >= cfg.intervals) continue;
    p.recon_count++;
    rt_sum += static_cast<uint64_t>(r.round_trips);
    if (r.round_trips <= 1) one++;
    else if (r.round_trips == 2) two++;
    else more++;
    p.total_bytes += r.bytes;
    p.total_optimal_bytes += r.optimal_bytes;
    p.max_bytes = std::max(p.max_bytes, r.bytes);
  }
  if (p.recon_count > 0) {
    double n = p.recon_count;
    p.mean_round_trips = static_cast<double>(rt_sum) / n;
    p.p_one_rt = one / n;
    p.p_two_rt = two / n;
    p.p_three_plus_rt = more / n;
    p.mean_bytes = static_cast<double>(p.total_bytes) / n;
    p.mean_optimal_bytes = static_cast<double>(p.total_optimal_bytes) / n;
  }
  p.property_violations = result.property_violations;
  return p;
}

std::vector<SweepPoint> run_sweep(const SweepOptions& opts) {
  std::vector<SweepPoint> points;
  for (int v : opts.updates) {
    sim::ScenarioConfig cfg = sweep_scenario(opts, v);
    sim::ScenarioResult result = sim::run_scenario(cfg);
    points.push_back(summarize(result, cfg));
  }
  return points;
}

std::string protocol_name(ProtocolVersion p) {
  return p == ProtocolVersion::Basic ? "basic" : "bloom";
}

std::string roundtrips_csv(const std::vector<SweepPoint>& points, ProtocolVersion p) {
  std::string out =
      "protocol,updates_per_interval,mean_round_trips,p_one_rt,p_two_rt,p_three_plus_rt\n";
  char buf[192];
  for (const SweepPoint& pt : points) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f\n", protocol_name(p).c_str(),
                  pt.updates_per_interval, pt.mean_round_trips, pt.p_one_rt, pt.p_two_rt,
                  pt.p_three_plus_rt);
    out += buf;
  }
  return out;
}

std::string bandwidth_csv(const std::vector<SweepPoint>& points, ProtocolVersion p) {
  std::string out = "protocol,updates_per_interval,mean_kb,optimal_kb\n";
  char buf[160];
  for (const SweepPoint& pt : points) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f\n", protocol_name(p).c_str(),
                  pt.updates_per_interval, pt.mean_bytes / 1000.0,
                  pt.mean_optimal_bytes / 1000.0);
    out += buf;
  }
  return out;
}

}  // namespace dagsync::exp
