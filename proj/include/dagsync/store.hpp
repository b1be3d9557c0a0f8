#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dagsync/message.hpp"

namespace dagsync {

// Thrown by insert_batch when a message references a predecessor hash that is
// neither stored nor part of the same batch.
struct DanglingPredecessor : std::runtime_error {
  explicit DanglingPredecessor(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by topo_sort if the input edges contain a cycle (impossible for a
// genuine hash DAG; indicates corrupted input).
struct CycleDetected : std::runtime_error {
  explicit CycleDetected(const std::string& what) : std::runtime_error(what) {}
};

// Immutable view of a store at a point in time: the full messages then
// present (ascending by id) plus the hashes of truncated (skeleton) entries.
// Later store mutations do not affect a snapshot.
class StoreSnapshot {
 public:
  StoreSnapshot() : skeletons_(std::make_shared<std::map<Hash, std::set<Hash>>>()) {}
  StoreSnapshot(std::vector<std::pair<Hash, MessagePtr>> entries, std::set<Hash> heads,
                std::shared_ptr<const std::map<Hash, std::set<Hash>>> skeletons);

  size_t size() const { return entries_.size(); }
  // True if the hash is a full message or a truncated skeleton.
  bool contains(const Hash& h) const;
  MessagePtr find(const Hash& h) const;  // full messages only
  const std::vector<std::pair<Hash, MessagePtr>>& entries() const { return entries_; }
  const std::set<Hash>& heads() const { return heads_; }

  // Transitive predecessors of the given start hashes (start excluded unless
  // reachable from another start). Includes skeleton hashes.
  std::set<Hash> pred_star(const std::set<Hash>& starts) const;
  std::set<Hash> pred_star(const Hash& start) const;

  // Transitive successors among the snapshot's full messages, start excluded.
  std::set<Hash> succ_star(const Hash& start) const;

  // Full messages not known to a peer whose heads at the previous
  // reconciliation were old_heads: every stored message except those heads
  // and their transitive predecessors. Ascending by id.
  std::vector<MessagePtr> messages_since(const std::set<Hash>& old_heads) const;

 private:
  const std::set<Hash>* preds_of(const Hash& h) const;
  void build_succ_index() const;

  std::vector<std::pair<Hash, MessagePtr>> entries_;  // ascending by hash
  std::set<Hash> heads_;
  std::shared_ptr<const std::map<Hash, std::set<Hash>>> skeletons_;
  mutable std::map<Hash, std::vector<Hash>> succ_index_;
  mutable bool succ_built_ = false;
};

// Append-only store of broadcast messages indexed by hash, with an incremental
// successor index and heads cache. History already delivered by every replica
// can be truncated to hash-plus-predecessors skeletons.
class MessageStore {
 public:
  MessageStore();

  size_t size() const { return msgs_.size(); }
  size_t skeleton_count() const { return skeletons_->size(); }
  bool contains(const Hash& h) const;  // full message or skeleton
  bool contains_full(const Hash& h) const { return msgs_.count(h) != 0; }
  MessagePtr find(const Hash& h) const;  // full messages only
  const std::map<Hash, MessagePtr>& messages() const { return msgs_; }
  const std::set<Hash>& heads() const { return heads_; }

  // Atomically inserts all messages in the batch. Messages already present
  // (full or skeleton) are skipped. If any message references a predecessor
  // that is neither present nor in the batch, throws DanglingPredecessor and
  // leaves the store unchanged. Returns the messages actually added,
  // ascending by id.
  std::vector<MessagePtr> insert_batch(const std::vector<MessagePtr>& batch);

  std::set<Hash> pred_star(const Hash& start) const;
  std::set<Hash> pred_star(const std::set<Hash>& starts) const;
  std::set<Hash> succ_star(const Hash& start) const;

  StoreSnapshot snapshot() const;

  // Replaces every message that every replica has already delivered — i.e.
  // the transitive predecessors of messages present in all replicas'
  // latest-heads closures — with a skeleton entry (hash and predecessor
  // hashes only). Heads are never truncated. Returns the number of messages
  // truncated. latest_heads maps each replica to the heads it was last known
  // to have delivered; replicas without an entry keep everything live.
  size_t truncate_stable(const std::map<ReplicaId, std::set<Hash>>& latest_heads);

  // Durable form: every entry length-prefixed, full messages tagged 0x01
  // (canonical message encoding) and skeletons tagged 0x02.
  bool save_file(const std::string& path) const;
  static std::optional<MessageStore> load_file(const std::string& path);

 private:
  std::map<Hash, MessagePtr> msgs_;
  // Written via copy-and-swap so snapshots keep the version they captured.
  std::shared_ptr<const std::map<Hash, std::set<Hash>>> skeletons_;
  std::map<Hash, std::set<Hash>> succ_index_;  // pred hash -> successor ids
  std::set<Hash> heads_;
};

// Orders a batch so that every message comes after its in-batch
// predecessors; concurrent messages are ordered by ascending id bytes.
std::vector<MessagePtr> topo_sort(const std::vector<MessagePtr>& batch);

}  // namespace dagsync
