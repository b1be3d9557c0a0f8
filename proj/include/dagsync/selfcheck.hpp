#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dagsync/sim.hpp"

namespace dagsync::check {

// One simulated network per (adversary strategy, protocol, seed): four
// correct replicas plus two faulty ones, full mesh. Every run must satisfy
// the broadcast properties (self-delivery, authenticity, non-duplication,
// causal order, eventual delivery against the set of issued broadcasts) and
// end with the correct replicas converged.
struct MatrixOptions {
  int seeds = 3;
  uint64_t base_seed = 100;
  int correct = 4;
  int faulty = 2;
  int intervals = 8;
  int updates_per_interval = 3;
  int quiet_intervals = 2;
};

// Returns one description per violated property (empty = all runs clean).
std::vector<std::string> run_property_matrix(const MatrixOptions& opts);

// Randomized replicated-store workloads of up to `max_messages` concurrent
// messages each: delivers every topologically valid order and reports any
// workload whose final state or per-message decisions depend on the order.
std::vector<std::string> run_commutativity_suite(int workloads, uint64_t seed,
                                                 int max_messages = 6);

// Detector-of-the-detectors: deliberately disables (a) signature checking
// and (b) the causal-precedence check on deletes, and confirms the trace
// and convergence checkers catch the resulting damage. Returns a
// description per detector that failed to fire (empty = both fired) or per
// control run that misbehaved.
std::vector<std::string> run_mutation_checks();

}  // namespace dagsync::check
