#include "dagsync/sync.hpp"

#include <algorithm>
#include <fstream>

namespace dagsync {

namespace {
constexpr size_t kMaxViolationsKept = 10000;
}

// --- PeerHeadsStore ----------------------------------------------------------

std::set<Hash> PeerHeadsStore::load(const ReplicaId& peer) const {
  auto it = entries_.find(peer);
  return it == entries_.end() ? std::set<Hash>{} : it->second;
}

void PeerHeadsStore::store(const ReplicaId& peer, std::set<Hash> heads) {
  entries_[peer] = std::move(heads);
}

bool PeerHeadsStore::save_file(const std::string& path) const {
  Bytes out;
  put_u32(out, static_cast<uint32_t>(entries_.size()));
  for (const auto& [peer, heads] : entries_) {
    put_u32(out, static_cast<uint32_t>(peer.size()));
    put_bytes(out, reinterpret_cast<const uint8_t*>(peer.data()), peer.size());
    put_u32(out, static_cast<uint32_t>(heads.size()));
    for (const Hash& h : heads) put_fixed(out, h);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return false;
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  return static_cast<bool>(f);
}

std::optional<PeerHeadsStore> PeerHeadsStore::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data);
  uint32_t count;
  if (!r.u32(count) || count > (1u << 20)) return std::nullopt;
  PeerHeadsStore store;
  for (uint32_t i = 0; i < count; i++) {
    uint32_t name_len;
    if (!r.u32(name_len) || name_len > 4096) return std::nullopt;
    Bytes name_bytes;
    if (!r.bytes(name_bytes, name_len)) return std::nullopt;
    std::string name(name_bytes.begin(), name_bytes.end());
    uint32_t head_count;
    if (!r.u32(head_count) || head_count > (1u << 20)) return std::nullopt;
    std::set<Hash> heads;
    Hash prev{};
    for (uint32_t j = 0; j < head_count; j++) {
      Hash h;
      if (!r.fixed(h)) return std::nullopt;
      if (j > 0 && !(prev < h)) return std::nullopt;
      prev = h;
      heads.insert(h);
    }
    if (store.entries_.count(name)) return std::nullopt;
    store.entries_[name] = std::move(heads);
  }
  if (!r.done()) return std::nullopt;
  return store;
}

// --- ReplicaEngine -----------------------------------------------------------

ReplicaEngine::ReplicaEngine(ReplicaId self, KeyPair keys,
                             std::shared_ptr<const KeyDirectory> directory,
                             BroadcastConfig config,
                             std::shared_ptr<VerifyCache> verify_cache)
    : self_(std::move(self)),
      keys_(keys),
      directory_(std::move(directory)),
      config_(config),
      verify_cache_(std::move(verify_cache)) {
  if (!verify_cache_) verify_cache_ = std::make_shared<VerifyCache>();
}

MessagePtr ReplicaEngine::broadcast(const Bytes& value, std::vector<Outgoing>* out) {
  MessagePtr m = make_message(value, store_.heads(), keys_.sec);
  store_.insert_batch({m});
  if (on_deliver_) on_deliver_(m, self_);
  if (config_.eager_send && out) {
    for (const auto& [peer, conn] : conns_) {
      if (conn.phase == ConnPhase::Active)
        out->push_back({peer, MsgsMsg{{m}}});
    }
  }
  return m;
}

std::vector<Outgoing> ReplicaEngine::start_reconciliation(const ReplicaId& peer) {
  auto it = conns_.find(peer);
  if (it != conns_.end() && it->second.phase == ConnPhase::Active) return {};
  ConnectionState conn;
  conn.peer = peer;
  conn.snapshot = store_.snapshot();
  std::vector<Outgoing> out;
  if (config_.protocol == ProtocolVersion::Basic) {
    out.push_back({peer, HeadsMsg{conn.snapshot.heads()}});
  } else {
    std::set<Hash> old_heads = peer_heads_.load(peer);
    std::vector<MessagePtr> since = conn.snapshot.messages_since(old_heads);
    std::vector<Hash> ids;
    ids.reserve(since.size());
    for (const MessagePtr& m : since) ids.push_back(m->id());
    BloomFilter filter =
        make_bloom(ids, config_.bloom_bits_per_entry, config_.bloom_hash_count);
    out.push_back({peer, HeadsV2Msg{conn.snapshot.heads(), std::move(old_heads),
                                    std::move(filter)}});
  }
  conns_[peer] = std::move(conn);
  return out;
}

std::vector<Outgoing> ReplicaEngine::on_wire(const ReplicaId& peer, const WireMessage& msg) {
  auto it = conns_.find(peer);
  if (it == conns_.end() || it->second.phase == ConnPhase::Aborted) return {};
  ConnectionState& conn = it->second;
  std::vector<Outgoing> out;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, HeadsMsg>) {
          if (config_.protocol != ProtocolVersion::Basic) {
            record_violation(peer, "v1 heads packet on a v2 connection");
            return;
          }
          handle_heads(conn, m, out);
        } else if constexpr (std::is_same_v<T, HeadsV2Msg>) {
          if (config_.protocol != ProtocolVersion::Bloom) {
            record_violation(peer, "v2 heads packet on a v1 connection");
            return;
          }
          handle_heads_v2(conn, m, out);
        } else if constexpr (std::is_same_v<T, NeedsMsg>) {
          handle_needs(conn, m, out);
        } else {
          handle_msgs(conn, m, out);
        }
      },
      msg);
  return out;
}

std::vector<Outgoing> ReplicaEngine::on_wire_bytes(const ReplicaId& peer,
                                                   const Bytes& data) {
  auto decoded = decode_wire(data);
  if (!decoded) {
    record_violation(peer, "malformed packet");
    return {};
  }
  return on_wire(peer, *decoded);
}

void ReplicaEngine::abort_connection(const ReplicaId& peer) {
  auto it = conns_.find(peer);
  if (it == conns_.end()) return;
  ConnectionState& conn = it->second;
  conn.phase = ConnPhase::Aborted;
  conn.recvd.clear();
  conn.recvd_authors.clear();
  conn.missing.clear();
  conn.sent.clear();
}

const ConnectionState* ReplicaEngine::connection(const ReplicaId& peer) const {
  auto it = conns_.find(peer);
  return it == conns_.end() ? nullptr : &it->second;
}

void ReplicaEngine::handle_heads(ConnectionState& conn, const HeadsMsg& msg,
                                 std::vector<Outgoing>& out) {
  std::set<Hash> unresolved;
  for (const Hash& h : msg.heads) {
    if (!conn.snapshot.contains(h) && !conn.recvd.count(h)) unresolved.insert(h);
  }
  handle_missing(conn, unresolved, out);
}

void ReplicaEngine::handle_heads_v2(ConnectionState& conn, const HeadsV2Msg& msg,
                                    std::vector<Outgoing>& out) {
  // Everything newer than the peer's previous view, minus whatever its bloom
  // filter says it already has. Successors of a missing message are missing
  // too, since the peer could not have accepted them without it.
  std::vector<MessagePtr> since = conn.snapshot.messages_since(msg.old_heads);
  std::set<Hash> reply_ids;
  for (const MessagePtr& m : since) {
    if (!bloom_member(msg.filter, m->id())) {
      reply_ids.insert(m->id());
      std::set<Hash> succs = conn.snapshot.succ_star(m->id());
      reply_ids.insert(succs.begin(), succs.end());
    }
  }
  std::vector<MessagePtr> reply;
  for (const Hash& id : reply_ids) {
    if (conn.sent.count(id)) continue;
    if (MessagePtr m = conn.snapshot.find(id)) reply.push_back(m);
  }
  if (!reply.empty()) {
    for (const MessagePtr& m : reply) conn.sent.insert(m->id());
    out.push_back({conn.peer, MsgsMsg{topo_sort(reply)}});
  }
  std::set<Hash> unresolved;
  for (const Hash& h : msg.heads) {
    if (!conn.snapshot.contains(h) && !conn.recvd.count(h)) unresolved.insert(h);
  }
  handle_missing(conn, unresolved, out);
}

void ReplicaEngine::handle_needs(ConnectionState& conn, const NeedsMsg& msg,
                                 std::vector<Outgoing>& out) {
  std::vector<MessagePtr> reply;
  for (const Hash& h : msg.hashes) {
    if (conn.sent.count(h)) continue;
    if (MessagePtr m = conn.snapshot.find(h)) {
      reply.push_back(m);
      conn.sent.insert(h);
    }
  }
  // Reply even when empty so the requester observes the round completing.
  out.push_back({conn.peer, MsgsMsg{std::move(reply)}});
}

void ReplicaEngine::handle_msgs(ConnectionState& conn, const MsgsMsg& msg,
                                std::vector<Outgoing>& out) {
  std::vector<MessagePtr> accepted;
  bool resolved_any = false;
  for (const MessagePtr& m : msg.msgs) {
    if (conn.recvd.count(m->id())) continue;
    Bytes payload = m->payload();
    std::optional<ReplicaId> author = verify_cache_->check(*directory_, payload, m->sig());
    if (!author) {
      if (test_skip_sig_) {
        author = conn.peer;
      } else {
        record_violation(conn.peer,
                         "message " + to_hex(m->id()) + " failed signature check");
        continue;
      }
    }
    conn.recvd.emplace(m->id(), m);
    conn.recvd_authors.emplace(m->id(), *author);
    accepted.push_back(m);
    if (conn.missing.erase(m->id()) > 0) resolved_any = true;
  }
  std::set<Hash> unresolved;
  for (const MessagePtr& m : accepted) {
    for (const Hash& p : m->preds()) {
      if (!conn.snapshot.contains(p) && !conn.recvd.count(p)) unresolved.insert(p);
    }
  }
  if (!conn.missing.empty() && accepted.empty() && !resolved_any) {
    if (++conn.fruitless_rounds >= config_.max_fruitless_rounds) {
      record_violation(conn.peer, "no reconciliation progress; aborting connection");
      abort_connection(conn.peer);
      return;
    }
  } else if (resolved_any || !accepted.empty()) {
    conn.fruitless_rounds = 0;
  }
  handle_missing(conn, unresolved, out);
}

void ReplicaEngine::handle_missing(ConnectionState& conn, const std::set<Hash>& unresolved,
                                   std::vector<Outgoing>& out) {
  for (const Hash& h : unresolved) {
    if (!conn.recvd.count(h)) conn.missing.insert(h);
  }
  if (conn.missing.size() > config_.max_missing) {
    record_violation(conn.peer, "missing set exceeds bound; aborting connection");
    abort_connection(conn.peer);
    return;
  }
  if (!conn.missing.empty()) {
    out.push_back({conn.peer, NeedsMsg{conn.missing}});
    conn.needs_flights++;
    return;
  }
  // Nothing missing: atomically add and deliver everything new, in causal
  // order, then forward to other in-progress reconciliations.
  std::vector<MessagePtr> newly;
  for (const auto& [id, m] : conn.recvd) {
    if (!store_.contains(id)) newly.push_back(m);
  }
  if (!newly.empty()) {
    std::vector<MessagePtr> added = store_.insert_batch(newly);
    std::vector<MessagePtr> ordered = topo_sort(added);
    for (const MessagePtr& m : ordered) {
      if (on_deliver_) on_deliver_(m, conn.recvd_authors.at(m->id()));
    }
    if (config_.eager_relay) {
      for (auto& [other_peer, other_conn] : conns_) {
        if (other_peer == conn.peer || other_conn.phase != ConnPhase::Active) continue;
        out.push_back({other_peer, MsgsMsg{ordered}});
      }
    }
  }
  conn.phase = ConnPhase::Complete;
  conn.completions++;
  if (config_.protocol == ProtocolVersion::Bloom) {
    peer_heads_.store(conn.peer, union_heads(conn));
  }
}

std::set<Hash> ReplicaEngine::union_heads(const ConnectionState& conn) const {
  // Heads of snapshot ∪ recvd: candidates minus anything some received
  // message lists as predecessor. Snapshot messages cannot succeed snapshot
  // heads by definition, and recvd preds cover the rest.
  std::set<Hash> heads = conn.snapshot.heads();
  for (const auto& [id, m] : conn.recvd) heads.insert(id);
  for (const auto& [id, m] : conn.recvd) {
    for (const Hash& p : m->preds()) heads.erase(p);
  }
  return heads;
}

void ReplicaEngine::record_violation(const ReplicaId& peer, std::string reason) {
  if (violations_.size() < kMaxViolationsKept)
    violations_.push_back({peer, std::move(reason)});
}

}  // namespace dagsync
