#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dagsync/crypto.hpp"
#include "dagsync/store.hpp"
#include "dagsync/wire.hpp"

namespace dagsync {

enum class ProtocolVersion { Basic, Bloom };

struct BroadcastConfig {
  ProtocolVersion protocol = ProtocolVersion::Basic;
  // Push fresh broadcasts to peers with an in-progress reconciliation.
  bool eager_send = true;
  // Forward newly delivered messages to other in-progress reconciliations.
  bool eager_relay = true;
  uint32_t bloom_bits_per_entry = 10;
  uint32_t bloom_hash_count = 7;
  // Abort a connection after this many consecutive msgs packets that neither
  // resolve a missing hash nor carry any new valid message. Rounds between
  // correct replicas always make progress, so this only trips on faulty
  // peers.
  int max_fruitless_rounds = 3;
  // Abort a connection once its missing set exceeds this bound.
  size_t max_missing = 1u << 20;
};

enum class ConnPhase { Active, Complete, Aborted };

// Per-connection reconciliation state. The snapshot pins the store contents
// at connect time; sent/recvd/missing follow the reconciliation protocol.
struct ConnectionState {
  ReplicaId peer;
  ConnPhase phase = ConnPhase::Active;
  StoreSnapshot snapshot;
  std::set<Hash> sent;
  std::map<Hash, MessagePtr> recvd;
  std::map<Hash, ReplicaId> recvd_authors;
  std::set<Hash> missing;
  int needs_flights = 0;
  int fruitless_rounds = 0;
  // Number of times the missing set emptied (>=1 once the sync finished).
  int completions = 0;
};

struct Outgoing {
  ReplicaId peer;
  WireMessage msg;
};

struct ProtocolViolationRecord {
  ReplicaId peer;
  std::string reason;
};

// Durable record of the peer heads observed at the end of the previous
// reconciliation with each peer (used by the v2 protocol's bloom filter).
class PeerHeadsStore {
 public:
  std::set<Hash> load(const ReplicaId& peer) const;
  void store(const ReplicaId& peer, std::set<Hash> heads);
  const std::map<ReplicaId, std::set<Hash>>& entries() const { return entries_; }

  bool save_file(const std::string& path) const;
  static std::optional<PeerHeadsStore> load_file(const std::string& path);

 private:
  std::map<ReplicaId, std::set<Hash>> entries_;
};

using DeliveryHandler = std::function<void(const MessagePtr&, const ReplicaId& author)>;

// One replica's broadcast state machine: a message store plus per-peer
// reconciliation connections. All methods are synchronous; packets to send
// are returned to the caller, which owns transport and timing.
class ReplicaEngine {
 public:
  ReplicaEngine(ReplicaId self, KeyPair keys,
                std::shared_ptr<const KeyDirectory> directory, BroadcastConfig config,
                std::shared_ptr<VerifyCache> verify_cache = nullptr);

  const ReplicaId& self() const { return self_; }
  const BroadcastConfig& config() const { return config_; }
  MessageStore& store() { return store_; }
  const MessageStore& store() const { return store_; }
  PeerHeadsStore& peer_heads() { return peer_heads_; }
  void set_delivery_handler(DeliveryHandler handler) { on_deliver_ = std::move(handler); }

  // Signs and atomically self-delivers a new message whose predecessors are
  // the current heads. If eager sending is enabled, appends a msgs packet
  // for every connection with an in-progress reconciliation to out.
  MessagePtr broadcast(const Bytes& value, std::vector<Outgoing>* out = nullptr);

  // Opens a reconciliation with the peer: snapshots the store and returns
  // the opening heads packet. No-op (empty result) if a reconciliation with
  // this peer is already in progress.
  std::vector<Outgoing> start_reconciliation(const ReplicaId& peer);

  // Feeds one received packet into the connection's state machine and
  // returns the packets to send in response.
  std::vector<Outgoing> on_wire(const ReplicaId& peer, const WireMessage& msg);
  // Same, from raw bytes; malformed input is recorded and ignored.
  std::vector<Outgoing> on_wire_bytes(const ReplicaId& peer, const Bytes& data);

  // Drops the connection's buffered state without touching the store.
  void abort_connection(const ReplicaId& peer);

  const ConnectionState* connection(const ReplicaId& peer) const;
  const std::vector<ProtocolViolationRecord>& violations() const { return violations_; }

  // Test hook: when set, messages failing signature verification are
  // accepted with the connection peer recorded as author. Used to prove the
  // trace checker catches forged deliveries.
  void test_skip_signature_check(bool v) { test_skip_sig_ = v; }

 private:
  void handle_heads(ConnectionState& conn, const HeadsMsg& msg, std::vector<Outgoing>& out);
  void handle_heads_v2(ConnectionState& conn, const HeadsV2Msg& msg,
                       std::vector<Outgoing>& out);
  void handle_needs(ConnectionState& conn, const NeedsMsg& msg, std::vector<Outgoing>& out);
  void handle_msgs(ConnectionState& conn, const MsgsMsg& msg, std::vector<Outgoing>& out);
  // Folds newly unresolved hashes into the missing set; delivers and
  // completes when nothing is missing, otherwise requests what is.
  void handle_missing(ConnectionState& conn, const std::set<Hash>& unresolved,
                      std::vector<Outgoing>& out);
  void record_violation(const ReplicaId& peer, std::string reason);
  std::set<Hash> union_heads(const ConnectionState& conn) const;

  ReplicaId self_;
  KeyPair keys_;
  std::shared_ptr<const KeyDirectory> directory_;
  BroadcastConfig config_;
  std::shared_ptr<VerifyCache> verify_cache_;
  MessageStore store_;
  PeerHeadsStore peer_heads_;
  std::map<ReplicaId, ConnectionState> conns_;
  std::vector<ProtocolViolationRecord> violations_;
  DeliveryHandler on_deliver_;
  bool test_skip_sig_ = false;
};

}  // namespace dagsync
