#include "dagsync/store.hpp"

#include <algorithm>
#include <fstream>

namespace dagsync {

namespace {

const char kStoreMagic[4] = {'D', 'G', 'S', '1'};

// Walks predecessor edges from the starts, using preds_of to resolve each
// node's predecessor set (null when unknown). Start nodes are excluded
// unless reachable from another start.
template <typename PredsOf>
std::set<Hash> closure_down(const std::set<Hash>& starts, PredsOf preds_of) {
  std::set<Hash> seen;
  std::vector<Hash> frontier(starts.begin(), starts.end());
  while (!frontier.empty()) {
    Hash h = frontier.back();
    frontier.pop_back();
    const std::set<Hash>* preds = preds_of(h);
    if (!preds) continue;
    for (const Hash& p : *preds) {
      if (seen.insert(p).second) frontier.push_back(p);
    }
  }
  return seen;
}

}  // namespace

// --- StoreSnapshot ----------------------------------------------------------

StoreSnapshot::StoreSnapshot(std::vector<std::pair<Hash, MessagePtr>> entries,
                             std::set<Hash> heads,
                             std::shared_ptr<const std::map<Hash, std::set<Hash>>> skeletons)
    : entries_(std::move(entries)), heads_(std::move(heads)), skeletons_(std::move(skeletons)) {}

bool StoreSnapshot::contains(const Hash& h) const {
  if (find(h)) return true;
  return skeletons_->count(h) != 0;
}

MessagePtr StoreSnapshot::find(const Hash& h) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), h,
                             [](const auto& e, const Hash& key) { return e.first < key; });
  if (it != entries_.end() && it->first == h) return it->second;
  return nullptr;
}

const std::set<Hash>* StoreSnapshot::preds_of(const Hash& h) const {
  if (MessagePtr m = find(h)) return &m->preds();
  auto it = skeletons_->find(h);
  if (it != skeletons_->end()) return &it->second;
  return nullptr;
}

std::set<Hash> StoreSnapshot::pred_star(const std::set<Hash>& starts) const {
  return closure_down(starts, [this](const Hash& h) { return preds_of(h); });
}

std::set<Hash> StoreSnapshot::pred_star(const Hash& start) const {
  return pred_star(std::set<Hash>{start});
}

void StoreSnapshot::build_succ_index() const {
  if (succ_built_) return;
  for (const auto& [id, msg] : entries_) {
    for (const Hash& p : msg->preds()) succ_index_[p].push_back(id);
  }
  succ_built_ = true;
}

std::set<Hash> StoreSnapshot::succ_star(const Hash& start) const {
  build_succ_index();
  std::set<Hash> seen;
  std::vector<Hash> frontier{start};
  while (!frontier.empty()) {
    Hash h = frontier.back();
    frontier.pop_back();
    auto it = succ_index_.find(h);
    if (it == succ_index_.end()) continue;
    for (const Hash& s : it->second) {
      if (seen.insert(s).second) frontier.push_back(s);
    }
  }
  return seen;
}

std::vector<MessagePtr> StoreSnapshot::messages_since(const std::set<Hash>& old_heads) const {
  std::set<Hash> known;
  for (const Hash& h : old_heads) {
    if (contains(h)) known.insert(h);
  }
  std::set<Hash> excluded = pred_star(known);
  excluded.insert(known.begin(), known.end());
  std::vector<MessagePtr> out;
  for (const auto& [id, msg] : entries_) {
    if (!excluded.count(id)) out.push_back(msg);
  }
  return out;
}

// --- MessageStore -----------------------------------------------------------

MessageStore::MessageStore()
    : skeletons_(std::make_shared<std::map<Hash, std::set<Hash>>>()) {}

bool MessageStore::contains(const Hash& h) const {
  return msgs_.count(h) != 0 || skeletons_->count(h) != 0;
}

MessagePtr MessageStore::find(const Hash& h) const {
  auto it = msgs_.find(h);
  return it == msgs_.end() ? nullptr : it->second;
}

std::vector<MessagePtr> MessageStore::insert_batch(const std::vector<MessagePtr>& batch) {
  // Collect messages genuinely new to the store, deduplicated by id.
  std::map<Hash, MessagePtr> fresh;
  for (const MessagePtr& m : batch) {
    if (!m) continue;
    if (contains(m->id())) continue;
    fresh.emplace(m->id(), m);
  }
  for (const auto& [id, m] : fresh) {
    for (const Hash& p : m->preds()) {
      if (!contains(p) && !fresh.count(p)) {
        throw DanglingPredecessor("message " + to_hex(id) +
                                  " references unknown predecessor " + to_hex(p));
      }
    }
  }
  std::vector<MessagePtr> added;
  added.reserve(fresh.size());
  for (const auto& [id, m] : fresh) {
    msgs_.emplace(id, m);
    for (const Hash& p : m->preds()) succ_index_[p].insert(id);
    added.push_back(m);
  }
  for (const auto& [id, m] : fresh) {
    for (const Hash& p : m->preds()) heads_.erase(p);
    auto it = succ_index_.find(id);
    if (it == succ_index_.end() || it->second.empty()) heads_.insert(id);
  }
  return added;
}

std::set<Hash> MessageStore::pred_star(const Hash& start) const {
  return pred_star(std::set<Hash>{start});
}

std::set<Hash> MessageStore::pred_star(const std::set<Hash>& starts) const {
  return closure_down(starts, [this](const Hash& h) -> const std::set<Hash>* {
    if (MessagePtr m = find(h)) return &m->preds();
    auto it = skeletons_->find(h);
    if (it != skeletons_->end()) return &it->second;
    return nullptr;
  });
}

std::set<Hash> MessageStore::succ_star(const Hash& start) const {
  std::set<Hash> seen;
  std::vector<Hash> frontier{start};
  while (!frontier.empty()) {
    Hash h = frontier.back();
    frontier.pop_back();
    auto it = succ_index_.find(h);
    if (it == succ_index_.end()) continue;
    for (const Hash& s : it->second) {
      if (seen.insert(s).second) frontier.push_back(s);
    }
  }
  // Report full messages only; edges may pass through skeleton entries.
  for (auto it = seen.begin(); it != seen.end();) {
    if (!msgs_.count(*it)) {
      it = seen.erase(it);
    } else {
      ++it;
    }
  }
  return seen;
}

StoreSnapshot MessageStore::snapshot() const {
  std::vector<std::pair<Hash, MessagePtr>> entries;
  entries.reserve(msgs_.size());
  for (const auto& e : msgs_) entries.push_back(e);
  return StoreSnapshot(std::move(entries), heads_, skeletons_);
}

size_t MessageStore::truncate_stable(const std::map<ReplicaId, std::set<Hash>>& latest_heads) {
  if (latest_heads.empty()) return 0;
  // A message is stable once it lies in every replica's delivered closure.
  std::set<Hash> stable;
  bool first = true;
  for (const auto& [replica, peer_heads] : latest_heads) {
    std::set<Hash> known;
    for (const Hash& h : peer_heads) {
      if (contains(h)) known.insert(h);
    }
    std::set<Hash> delivered = pred_star(known);
    delivered.insert(known.begin(), known.end());
    if (first) {
      stable = std::move(delivered);
      first = false;
    } else {
      std::set<Hash> kept;
      std::set_intersection(stable.begin(), stable.end(), delivered.begin(),
                            delivered.end(), std::inserter(kept, kept.begin()));
      stable = std::move(kept);
    }
    if (stable.empty()) return 0;
  }
  // Only the predecessors of stable messages may be dropped; the stable
  // frontier itself stays live.
  std::set<Hash> removable = pred_star(stable);
  size_t removed = 0;
  auto next = std::make_shared<std::map<Hash, std::set<Hash>>>(*skeletons_);
  for (const Hash& h : removable) {
    auto it = msgs_.find(h);
    if (it == msgs_.end()) continue;  // already a skeleton
    (*next)[h] = it->second->preds();
    msgs_.erase(it);
    removed++;
  }
  if (removed > 0) skeletons_ = std::move(next);
  return removed;
}

bool MessageStore::save_file(const std::string& path) const {
  Bytes out;
  put_bytes(out, reinterpret_cast<const uint8_t*>(kStoreMagic), 4);
  put_u32(out, static_cast<uint32_t>(msgs_.size()));
  put_u32(out, static_cast<uint32_t>(skeletons_->size()));
  for (const auto& [id, m] : msgs_) {
    Bytes enc = m->encode();
    put_u8(out, 0x01);
    put_u32(out, static_cast<uint32_t>(enc.size()));
    put_bytes(out, enc);
  }
  for (const auto& [id, preds] : *skeletons_) {
    put_u8(out, 0x02);
    put_fixed(out, id);
    put_u32(out, static_cast<uint32_t>(preds.size()));
    for (const Hash& p : preds) put_fixed(out, p);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return false;
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  return static_cast<bool>(f);
}

std::optional<MessageStore> MessageStore::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data);
  std::array<uint8_t, 4> magic;
  if (!r.fixed(magic) || std::memcmp(magic.data(), kStoreMagic, 4) != 0)
    return std::nullopt;
  uint32_t full_count, skel_count;
  if (!r.u32(full_count) || !r.u32(skel_count)) return std::nullopt;
  MessageStore store;
  auto skeletons = std::make_shared<std::map<Hash, std::set<Hash>>>();
  std::vector<MessagePtr> msgs;
  for (uint32_t i = 0; i < full_count; i++) {
    uint8_t tag;
    uint32_t len;
    if (!r.u8(tag) || tag != 0x01 || !r.u32(len)) return std::nullopt;
    Bytes enc;
    if (!r.bytes(enc, len)) return std::nullopt;
    auto m = Message::decode(enc);
    if (!m) return std::nullopt;
    msgs.push_back(std::make_shared<Message>(std::move(*m)));
  }
  for (uint32_t i = 0; i < skel_count; i++) {
    uint8_t tag;
    if (!r.u8(tag) || tag != 0x02) return std::nullopt;
    Hash id;
    uint32_t pred_count;
    if (!r.fixed(id) || !r.u32(pred_count)) return std::nullopt;
    Hash prev{};
    std::set<Hash> preds;
    for (uint32_t j = 0; j < pred_count; j++) {
      Hash p;
      if (!r.fixed(p)) return std::nullopt;
      if (j > 0 && !(prev < p)) return std::nullopt;
      prev = p;
      preds.insert(p);
    }
    if (skeletons->count(id)) return std::nullopt;
    (*skeletons)[id] = std::move(preds);
  }
  if (!r.done()) return std::nullopt;
  store.skeletons_ = std::move(skeletons);
  std::set<Hash> full_ids;
  for (const MessagePtr& m : msgs) full_ids.insert(m->id());
  // Skeleton predecessors must themselves be present (full or skeleton).
  for (const auto& [id, preds] : *store.skeletons_) {
    for (const Hash& p : preds) {
      if (!store.skeletons_->count(p) && !full_ids.count(p)) return std::nullopt;
    }
    for (const Hash& p : preds) store.succ_index_[p].insert(id);
  }
  try {
    store.insert_batch(msgs);
  } catch (const DanglingPredecessor&) {
    return std::nullopt;
  }
  return store;
}

// --- topo_sort ---------------------------------------------------------------

std::vector<MessagePtr> topo_sort(const std::vector<MessagePtr>& batch) {
  std::map<Hash, MessagePtr> by_id;
  for (const MessagePtr& m : batch) {
    if (m) by_id.emplace(m->id(), m);
  }
  std::map<Hash, size_t> indegree;
  std::map<Hash, std::vector<Hash>> out_edges;
  for (const auto& [id, m] : by_id) {
    size_t deg = 0;
    for (const Hash& p : m->preds()) {
      if (by_id.count(p)) {
        out_edges[p].push_back(id);
        deg++;
      }
    }
    indegree[id] = deg;
  }
  std::set<Hash> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.insert(id);
  }
  std::vector<MessagePtr> out;
  out.reserve(by_id.size());
  while (!ready.empty()) {
    Hash id = *ready.begin();
    ready.erase(ready.begin());
    out.push_back(by_id.at(id));
    auto it = out_edges.find(id);
    if (it == out_edges.end()) continue;
    for (const Hash& succ : it->second) {
      if (--indegree.at(succ) == 0) ready.insert(succ);
    }
  }
  if (out.size() != by_id.size())
    throw CycleDetected("predecessor edges contain a cycle");
  return out;
}

}  // namespace dagsync
