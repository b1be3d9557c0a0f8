#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dagsync/sim.hpp"

namespace dagsync::exp {

// A load sweep: the same 4-replica mesh driven at doubling update rates,
// measuring round trips and traffic per reconciliation.
struct SweepOptions {
  ProtocolVersion protocol = ProtocolVersion::Basic;
  std::vector<int> updates = {1, 2, 4, 8, 16, 32, 64, 128, 256};
  int replicas = 4;
  int intervals = 100;
  int quiet_intervals = 2;
  uint64_t seed = 7;
  int bloom_bits_per_entry = 10;
  int bloom_hash_count = 7;
};

// Aggregates over the completed reconciliations opened while updates were
// still being issued (the trailing settle-down rounds are excluded).
struct SweepPoint {
  int updates_per_interval = 0;
  int recon_count = 0;
  double mean_round_trips = 0.0;
  double p_one_rt = 0.0;
  double p_two_rt = 0.0;
  double p_three_plus_rt = 0.0;
  double mean_bytes = 0.0;
  double mean_optimal_bytes = 0.0;
  uint64_t max_bytes = 0;
  uint64_t total_bytes = 0;
  uint64_t total_optimal_bytes = 0;
  std::vector<std::string> property_violations;
};

// The scenario run_sweep uses for one point, exposed so tests can rerun or
// tweak a single configuration.
sim::ScenarioConfig sweep_scenario(const SweepOptions& opts, int updates_per_interval);

SweepPoint summarize(const sim::ScenarioResult& result, const sim::ScenarioConfig& cfg);

std::vector<SweepPoint> run_sweep(const SweepOptions& opts);

std::string protocol_name(ProtocolVersion p);

// CSV: protocol,updates_per_interval,mean_round_trips,p_one_rt,p_two_rt,p_three_plus_rt
std::string roundtrips_csv(const std::vector<SweepPoint>& points, ProtocolVersion p);

// CSV: protocol,updates_per_interval,mean_kb,optimal_kb  (1 kB = 1000 bytes)
std::string bandwidth_csv(const std::vector<SweepPoint>& points, ProtocolVersion p);

}  // namespace dagsync::exp
