#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dagsync/relstore.hpp"
#include "dagsync/sync.hpp"

// Deterministic discrete-event network simulator: N replicas exchange
// reconciliation traffic over point-to-point links with fixed latency, a
// configurable subset of replicas runs an adversarial strategy, and every
// delivery is checked against the broadcast safety properties (no duplicates,
// no forgeries, causal order, convergence of the correct replicas).
namespace dagsync::sim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class AdversaryKind {
  Honest,
  Silent,           // drops every outgoing packet
  SignatureForger,  // corrupts the signature of every relayed message
  DanglingHasher,   // advertises heads that do not exist
  HeadsOmitter,     // randomly drops heads from its advertisements
  BloomCorruptor,   // randomizes the bits of outgoing bloom filters
  Equivocator,      // maintains one divergent history per peer, same key
  UnsafeUpdater,    // broadcasts well-formed but invariant-violating updates
};

std::optional<AdversaryKind> parse_adversary_kind(const std::string& name);
std::string adversary_kind_name(AdversaryKind k);

// Sequential: per interval, all broadcasts happen first, then each replica
// pair reconciles one pair at a time; the next interval starts when the last
// pair finishes. Gives clean per-reconciliation measurements.
// Staggered: pairs open at fixed offsets within a fixed-length interval, so
// reconciliations overlap and eager relaying between connections kicks in.
enum class Schedule { Sequential, Staggered };

// Analytic packet cost in bytes: fixed framing overhead per packet, a fixed
// size per message payload, and a fixed size per hash reference. Bloom
// filters cost their bit-array size.
struct CostModel {
  uint64_t per_packet = 100;
  uint64_t per_update = 200;
  uint64_t per_hash = 32;
};

uint64_t cost_of(const WireMessage& w, const CostModel& c);

struct ScenarioConfig {
  int replicas = 4;
  std::map<int, AdversaryKind> adversaries;   // replica index -> strategy
  std::vector<std::pair<int, int>> topology;  // empty = full mesh
  ProtocolVersion protocol = ProtocolVersion::Basic;
  bool eager_send = true;
  bool eager_relay = true;
  // Total updates broadcast per interval; update j of interval t is issued
  // by replica (t * updates_per_interval + j) mod replicas.
  int updates_per_interval = 4;
  int intervals = 10;
  // Trailing intervals with no new updates in which only correct pairs
  // reconcile, letting the correct replicas settle to a common state.
  int quiet_intervals = 2;
  double latency = 1.0;           // one-way packet latency
  double recon_interval = 100.0;  // staggered period and timeout unit
  double stagger_step = 2.0;      // staggered: pair k opens at start + k*step
  double timeout_intervals = 10.0;
  int bloom_bits_per_entry = 10;
  int bloom_hash_count = 7;
  uint64_t seed = 1;
  Schedule schedule = Schedule::Sequential;
  CostModel cost;
  // Non-empty: replicas run the replicated tuple store on top of broadcast
  // and updates are transactions against this schema.
  std::string schema_text;
  // Re-validate every declared invariant after every single delivery
  // (expensive; meant for the replicated-store scenarios).
  bool check_each_delivery = false;
};

// Text format: one "key value..." pair per line, '#' comments.
//   replicas 4 | protocol basic|bloom | schedule sequential|staggered
//   adversary <index> <kind> | edge <a> <b> | topology full
//   updates_per_interval N | intervals N | quiet_intervals N
//   latency X | recon_interval X | stagger_step X | timeout_intervals X
//   bloom_bits_per_entry N | bloom_hash_count N | seed N
//   eager_send on|off | eager_relay on|off
//   cost_per_packet N | cost_per_update N | cost_per_hash N
//   check_each_delivery on|off
//   schema <declaration...>   (appended to the schema text)
//   schema_file <path>        (schema text loaded from a file)
ScenarioConfig parse_scenario(const std::string& text);
ScenarioConfig load_scenario_file(const std::string& path);

// Throws ConfigError unless replica count, adversary indices, topology and
// schedule parameters are coherent and the correct replicas form a connected
// component of the topology.
void validate_scenario(const ScenarioConfig& cfg);

struct ReconStats {
  int a = 0;
  int b = 0;
  int interval = 0;
  double opened_at = 0.0;
  double completed_at = 0.0;  // when the slower side finished
  int round_trips = 0;        // ceil(elapsed / link round trip), slower side
  uint64_t bytes = 0;         // every packet sent on this connection
  uint64_t optimal_bytes = 0; // payload cost of what both sides were missing
  int new_msgs = 0;           // messages newly delivered across both sides
  bool completed = false;
};

struct DeliveryRecord {
  Hash id{};
  ReplicaId author;
  Bytes value;
  double time = 0.0;
};

struct ScenarioResult {
  std::vector<ReconStats> recons;
  std::map<int, std::vector<DeliveryRecord>> deliveries;
  std::map<int, Hash> store_digests;
  std::map<int, size_t> store_sizes;
  std::map<int, std::vector<ProtocolViolationRecord>> violations;
  // Replicated-store mode only:
  std::map<int, Hash> state_digests;
  std::map<int, std::map<Hash, rel::ReplicatedStore::Decision>> decisions;
  std::map<int, rel::ReplicatedStore::Counters> decision_counts;
  std::map<int, std::map<std::string, int64_t>> view_values;
  // Broadcast/store property violations observed anywhere in the run.
  // Empty means every checked property held.
  std::vector<std::string> property_violations;
  double end_time = 0.0;
  int skipped_opens = 0;
};

ScenarioResult run_scenario(const ScenarioConfig& cfg);

// Digest of a store's full and skeleton message ids, for state comparison.
Hash store_digest(const MessageStore& store);

// Runs one reconciliation between two engines to completion by delivering
// packets in FIFO order with zero latency. Used by tests and the self-check
// command; round trips are counted as needs/reply exchanges.
struct PumpResult {
  bool completed_a = false;
  bool completed_b = false;
  uint64_t bytes_a_to_b = 0;
  uint64_t bytes_b_to_a = 0;
  int packets = 0;
};
PumpResult pump_reconciliation(ReplicaEngine& a, ReplicaEngine& b,
                               const CostModel& cost = {});

// CSV with one row per reconciliation:
// pair,interval,round_trips,bytes,optimal_bytes,new_msgs,completed
std::string stats_csv(const std::vector<ReconStats>& recons);

// Schema used by the built-in transaction generators in replicated-store
// scenarios: account balances (non-negative), an order/items foreign key, a
// row check on quantities, hash-keyed receipts, a user-chosen-unique badge
// relation (only useful to an attacker), and two materialized views.
std::string demo_schema();

}  // namespace dagsync::sim
