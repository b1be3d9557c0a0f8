#include "dagsync/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>
#include <queue>
#include <random>
#include <sstream>

#include "dagsync/crypto.hpp"

namespace dagsync::sim {

namespace {

std::string replica_name(int idx) { return "r" + std::to_string(idx); }

Bytes text_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

}  // namespace

std::optional<AdversaryKind> parse_adversary_kind(const std::string& name) {
  if (name == "honest") return AdversaryKind::Honest;
  if (name == "silent") return AdversaryKind::Silent;
  if (name == "signature_forger") return AdversaryKind::SignatureForger;
  if (name == "dangling_hasher") return AdversaryKind::DanglingHasher;
  if (name == "heads_omitter") return AdversaryKind::HeadsOmitter;
  if (name == "bloom_corruptor") return AdversaryKind::BloomCorruptor;
  if (name == "equivocator") return AdversaryKind::Equivocator;
  if (name == "unsafe_updater") return AdversaryKind::UnsafeUpdater;
  return std::nullopt;
}

std::string adversary_kind_name(AdversaryKind k) {
  switch (k) {
    case AdversaryKind::Honest: return "honest";
    case AdversaryKind::Silent: return "silent";
    case AdversaryKind::SignatureForger: return "signature_forger";
    case AdversaryKind::DanglingHasher: return "dangling_hasher";
    case AdversaryKind::HeadsOmitter: return "heads_omitter";
    case AdversaryKind::BloomCorruptor: return "bloom_corruptor";
    case AdversaryKind::Equivocator: return "equivocator";
    case AdversaryKind::UnsafeUpdater: return "unsafe_updater";
  }
  return "unknown";
}

uint64_t cost_of(const WireMessage& w, const CostModel& c) {
  struct Visitor {
    const CostModel& c;
    uint64_t operator()(const HeadsMsg& m) const {
      return c.per_packet + c.per_hash * m.heads.size();
    }
    uint64_t operator()(const HeadsV2Msg& m) const {
      return c.per_packet + c.per_hash * (m.heads.size() + m.old_heads.size()) +
             (m.filter.m_bits + 7) / 8;
    }
    uint64_t operator()(const NeedsMsg& m) const {
      return c.per_packet + c.per_hash * m.hashes.size();
    }
    uint64_t operator()(const MsgsMsg& m) const {
      uint64_t total = c.per_packet;
      for (const MessagePtr& mp : m.msgs)
        total += c.per_update + c.per_hash * mp->preds().size();
      return total;
    }
  };
  return std::visit(Visitor{c}, w);
}

Hash store_digest(const MessageStore& store) {
  Bytes enc;
  StoreSnapshot snap = store.snapshot();
  put_u32(enc, static_cast<uint32_t>(snap.entries().size()));
  for (const auto& [id, msg] : snap.entries()) put_fixed(enc, id);
  put_u32(enc, static_cast<uint32_t>(store.skeleton_count()));
  return sha256(enc);
}

std::string demo_schema() {
  return "relation accounts owner:string balance:integer\n"
         "relation items sku:string label:string\n"
         "relation orders sku:string qty:integer\n"
         "relation receipts rid:string note:string\n"
         "relation badges name:string color:string\n"
         "invariant nonnegative accounts balance\n"
         "invariant rowcheck orders qty > 0\n"
         "invariant foreignkey orders sku items sku\n"
         "invariant unique receipts rid hash_derived\n"
         "invariant unique badges name user_chosen\n"
         "invariant view total_balance sum accounts balance\n"
         "invariant view order_count count orders\n";
}

// --- scenario parsing --------------------------------------------------------

namespace {

int64_t parse_int(const std::string& tok, size_t line_no) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
  }
}

double parse_double(const std::string& tok, size_t line_no) {
  try {
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
}

bool parse_bool(const std::string& tok, size_t line_no) {
  if (tok == "on" || tok == "true" || tok == "1") return true;
  if (tok == "off" || tok == "false" || tok == "0") return false;
  throw ConfigError("line " + std::to_string(line_no) + ": bad flag '" + tok + "'");
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& text) {
  ScenarioConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string& key = tok[0];
    auto need = [&](size_t n) {
      if (tok.size() != n + 1)
        throw ConfigError("line " + std::to_string(line_no) + ": '" + key + "' needs " +
                          std::to_string(n) + " value(s)");
    };
    if (key == "replicas") {
      need(1);
      cfg.replicas = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "adversary") {
      need(2);
      int idx = static_cast<int>(parse_int(tok[1], line_no));
      auto kind = parse_adversary_kind(tok[2]);
      if (!kind)
        throw ConfigError("line " + std::to_string(line_no) + ": unknown adversary '" +
                          tok[2] + "'");
      cfg.adversaries[idx] = *kind;
    } else if (key == "edge") {
      need(2);
      cfg.topology.emplace_back(static_cast<int>(parse_int(tok[1], line_no)),
                                static_cast<int>(parse_int(tok[2], line_no)));
    } else if (key == "topology") {
      need(1);
      if (tok[1] != "full")
        throw ConfigError("line " + std::to_string(line_no) + ": topology must be 'full'");
      cfg.topology.clear();
    } else if (key == "protocol") {
      need(1);
      if (tok[1] == "basic") cfg.protocol = ProtocolVersion::Basic;
      else if (tok[1] == "bloom") cfg.protocol = ProtocolVersion::Bloom;
      else throw ConfigError("line " + std::to_string(line_no) + ": unknown protocol '" + tok[1] + "'");
    } else if (key == "schedule") {
      need(1);
      if (tok[1] == "sequential") cfg.schedule = Schedule::Sequential;
      else if (tok[1] == "staggered") cfg.schedule = Schedule::Staggered;
      else throw ConfigError("line " + std::to_string(line_no) + ": unknown schedule '" + tok[1] + "'");
    } else if (key == "updates_per_interval") {
      need(1);
      cfg.updates_per_interval = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "intervals") {
      need(1);
      cfg.intervals = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "quiet_intervals") {
      need(1);
      cfg.quiet_intervals = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "latency") {
      need(1);
      cfg.latency = parse_double(tok[1], line_no);
    } else if (key == "recon_interval") {
      need(1);
      cfg.recon_interval = parse_double(tok[1], line_no);
    } else if (key == "stagger_step") {
      need(1);
      cfg.stagger_step = parse_double(tok[1], line_no);
    } else if (key == "timeout_intervals") {
      need(1);
      cfg.timeout_intervals = parse_double(tok[1], line_no);
    } else if (key == "bloom_bits_per_entry") {
      need(1);
      cfg.bloom_bits_per_entry = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "bloom_hash_count") {
      need(1);
      cfg.bloom_hash_count = static_cast<int>(parse_int(tok[1], line_no));
    } else if (key == "seed") {
      need(1);
      cfg.seed = static_cast<uint64_t>(parse_int(tok[1], line_no));
    } else if (key == "eager_send") {
      need(1);
      cfg.eager_send = parse_bool(tok[1], line_no);
    } else if (key == "eager_relay") {
      need(1);
      cfg.eager_relay = parse_bool(tok[1], line_no);
    } else if (key == "cost_per_packet") {
      need(1);
      cfg.cost.per_packet = static_cast<uint64_t>(parse_int(tok[1], line_no));
    } else if (key == "cost_per_update") {
      need(1);
      cfg.cost.per_update = static_cast<uint64_t>(parse_int(tok[1], line_no));
    } else if (key == "cost_per_hash") {
      need(1);
      cfg.cost.per_hash = static_cast<uint64_t>(parse_int(tok[1], line_no));
    } else if (key == "check_each_delivery") {
      need(1);
      cfg.check_each_delivery = parse_bool(tok[1], line_no);
    } else if (key == "schema") {
      std::string rest;
      for (size_t i = 1; i < tok.size(); i++) {
        if (i > 1) rest += " ";
        rest += tok[i];
      }
      cfg.schema_text += rest + "\n";
    } else if (key == "schema_file") {
      need(1);
      std::ifstream f(tok[1]);
      if (!f)
        throw ConfigError("line " + std::to_string(line_no) + ": cannot open schema file '" +
                          tok[1] + "'");
      std::stringstream buf;
      buf << f.rdbuf();
      cfg.schema_text += buf.str();
    } else if (key == "schema_demo") {
      need(1);
      if (parse_bool(tok[1], line_no)) cfg.schema_text += demo_schema();
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  return cfg;
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

void validate_scenario(const ScenarioConfig& cfg) {
  if (cfg.replicas < 2 || cfg.replicas > 64)
    throw ConfigError("replicas must be in [2, 64]");
  for (const auto& [idx, kind] : cfg.adversaries) {
    if (idx < 0 || idx >= cfg.replicas)
      throw ConfigError("adversary index out of range: " + std::to_string(idx));
    if (kind == AdversaryKind::UnsafeUpdater && cfg.schema_text.empty())
      throw ConfigError("unsafe_updater requires a schema");
  }
  for (const auto& [a, b] : cfg.topology) {
    if (a < 0 || a >= cfg.replicas || b < 0 || b >= cfg.replicas || a == b)
      throw ConfigError("bad topology edge " + std::to_string(a) + "-" + std::to_string(b));
  }
  if (cfg.updates_per_interval < 0) throw ConfigError("updates_per_interval must be >= 0");
  if (cfg.intervals < 1) throw ConfigError("intervals must be >= 1");
  if (cfg.quiet_intervals < 0) throw ConfigError("quiet_intervals must be >= 0");
  if (!(cfg.latency > 0)) throw ConfigError("latency must be positive");
  if (!(cfg.recon_interval > 0)) throw ConfigError("recon_interval must be positive");
  if (cfg.stagger_step < 0) throw ConfigError("stagger_step must be >= 0");
  if (!(cfg.timeout_intervals > 0)) throw ConfigError("timeout_intervals must be positive");
  if (cfg.bloom_bits_per_entry < 1 || cfg.bloom_bits_per_entry > 64)
    throw ConfigError("bloom_bits_per_entry must be in [1, 64]");
  if (cfg.bloom_hash_count < 1 || cfg.bloom_hash_count > 255)
    throw ConfigError("bloom_hash_count must be in [1, 255]");
  if (!cfg.schema_text.empty()) {
    try {
      rel::parse_schema(cfg.schema_text);
    } catch (const rel::ConfigError& e) {
      throw ConfigError(std::string("schema: ") + e.what());
    }
  }

  // The correct replicas must be able to reach each other so convergence of
  // the correct subsystem is achievable at all.
  std::vector<bool> correct(cfg.replicas, true);
  for (const auto& [idx, kind] : cfg.adversaries)
    if (kind != AdversaryKind::Honest) correct[idx] = false;
  int n_correct = static_cast<int>(std::count(correct.begin(), correct.end(), true));
  if (n_correct < 2) throw ConfigError("need at least two correct replicas");
  std::vector<std::set<int>> adj(cfg.replicas);
  if (cfg.topology.empty()) {
    for (int i = 0; i < cfg.replicas; i++)
      for (int j = 0; j < cfg.replicas; j++)
        if (i != j) adj[i].insert(j);
  } else {
    for (const auto& [a, b] : cfg.topology) {
      adj[a].insert(b);
      adj[b].insert(a);
    }
  }
  int start = -1;
  for (int i = 0; i < cfg.replicas; i++)
    if (correct[i]) { start = i; break; }
  std::set<int> seen{start};
  std::deque<int> work{start};
  while (!work.empty()) {
    int cur = work.front();
    work.pop_front();
    for (int nb : adj[cur]) {
      if (correct[nb] && !seen.count(nb)) {
        seen.insert(nb);
        work.push_back(nb);
      }
    }
  }
  if (static_cast<int>(seen.size()) != n_correct)
    throw ConfigError("correct replicas do not form a connected component");
}

// --- actors ------------------------------------------------------------------

namespace {

struct ActorInit {
  int idx = 0;
  ReplicaId name;
  KeyPair keys;
  std::shared_ptr<const KeyDirectory> directory;
  BroadcastConfig engine_cfg;
  std::shared_ptr<VerifyCache> cache;
  const rel::Schema* schema = nullptr;  // null = raw byte payloads
  uint64_t rng_seed = 0;
  std::vector<ReplicaId> peers;
};

class ActorBase {
 public:
  explicit ActorBase(const ActorInit& init) : idx_(init.idx), name_(init.name) {}
  virtual ~ActorBase() = default;

  // Issues one update; returns the broadcast message for registry tracking,
  // or nullptr when the actor manages its own histories.
  virtual MessagePtr broadcast_update(int interval, int slot, std::vector<Outgoing>& out) = 0;
  virtual std::vector<Outgoing> open_recon(const ReplicaId& peer) = 0;
  virtual std::vector<Outgoing> on_packet(const ReplicaId& from, const WireMessage& msg) = 0;
  virtual void abort_conn(const ReplicaId& peer) = 0;
  virtual void install_handler(DeliveryHandler h) = 0;
  // Engine holding the connection state for the given peer (inspection only).
  virtual const ReplicaEngine* engine_for_peer(const ReplicaId& peer) const = 0;
  virtual const ReplicaEngine* primary_engine() const = 0;
  virtual rel::ReplicatedStore* db() { return nullptr; }

  int idx() const { return idx_; }
  const ReplicaId& name() const { return name_; }

 protected:
  int idx_;
  ReplicaId name_;
};

// Runs the protocol faithfully; subclasses distort outgoing traffic or the
// update mix. In replicated-store mode the update stream cycles through an
// account insert, then item inserts, balance deposits, orders referencing an
// existing item, and hash-keyed receipts.
class HonestActor : public ActorBase {
 public:
  explicit HonestActor(const ActorInit& init)
      : ActorBase(init),
        engine_(init.name, init.keys, init.directory, init.engine_cfg, init.cache),
        rng_(init.rng_seed) {
    if (init.schema) db_.emplace(*init.schema, &engine_.store());
  }

  MessagePtr broadcast_update(int interval, int slot, std::vector<Outgoing>& out) override {
    MessagePtr m = db_ ? db_broadcast(out) : raw_broadcast(interval, slot, out);
    transform(out);
    return m;
  }

  std::vector<Outgoing> open_recon(const ReplicaId& peer) override {
    std::vector<Outgoing> out = engine_.start_reconciliation(peer);
    transform(out);
    return out;
  }

  std::vector<Outgoing> on_packet(const ReplicaId& from, const WireMessage& msg) override {
    std::vector<Outgoing> out = engine_.on_wire(from, msg);
    transform(out);
    return out;
  }

  void abort_conn(const ReplicaId& peer) override { engine_.abort_connection(peer); }
  void install_handler(DeliveryHandler h) override {
    engine_.set_delivery_handler(std::move(h));
  }
  const ReplicaEngine* engine_for_peer(const ReplicaId&) const override { return &engine_; }
  const ReplicaEngine* primary_engine() const override { return &engine_; }
  rel::ReplicatedStore* db() override { return db_ ? &*db_ : nullptr; }

 protected:
  // Outgoing-traffic distortion hook for the byzantine subclasses.
  virtual void transform(std::vector<Outgoing>&) {}

  MessagePtr raw_broadcast(int interval, int slot, std::vector<Outgoing>& out) {
    std::string v = "u/" + std::to_string(interval) + "/" + name_ + "/" + std::to_string(slot);
    return engine_.broadcast(text_bytes(v), &out);
  }

  MessagePtr db_broadcast(std::vector<Outgoing>& out) {
    rel::Transaction t = next_transaction();
    try {
      return db_->commit_transaction(engine_, t, &out);
    } catch (const rel::UnsafeUpdate&) {
      // State not ready for the pattern; fall back to a no-op update.
      return db_->commit_transaction(engine_, rel::Transaction{}, &out);
    }
  }

  rel::Transaction next_transaction() {
    int n = gen_counter_++;
    rel::Transaction t;
    int pattern = n == 0 ? 0 : 1 + (n - 1) % 4;
    switch (pattern) {
      case 0:
        t.ins.push_back({"accounts", {rel::Value(name_), rel::Value(int64_t{100})}});
        break;
      case 1:
        t.ins.push_back({"items",
                         {rel::Value("sku-" + name_ + "-" + std::to_string(n)),
                          rel::Value(std::string("widget"))}});
        break;
      case 2: {
        for (const rel::TupleTriple& tr : db_->query("accounts")) {
          if (tr.tuple.at(0) == rel::Value(name_)) {
            int64_t bal = std::get<int64_t>(tr.tuple.at(1));
            t.del.push_back(tr);
            t.ins.push_back({"accounts", {rel::Value(name_), rel::Value(bal + 10)}});
            break;
          }
        }
        break;
      }
      case 3: {
        auto items = db_->query("items");
        if (!items.empty()) {
          t.ins.push_back({"orders", {items.front().tuple.at(0), rel::Value(int64_t{1})}});
        }
        break;
      }
      case 4:
        t.ins.push_back({"receipts",
                         {rel::Value(std::string()),
                          rel::Value("note-" + name_ + "-" + std::to_string(n))}});
        break;
    }
    return t;
  }

  ReplicaEngine engine_;
  std::optional<rel::ReplicatedStore> db_;
  std::mt19937_64 rng_;
  int gen_counter_ = 0;
};

class SilentActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

 protected:
  void transform(std::vector<Outgoing>& out) override { out.clear(); }
};

class SignatureForgerActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

 protected:
  void transform(std::vector<Outgoing>& out) override {
    for (Outgoing& o : out) {
      MsgsMsg* m = std::get_if<MsgsMsg>(&o.msg);
      if (!m) continue;
      for (MessagePtr& mp : m->msgs) {
        Signature sig = mp->sig();
        sig[0] ^= 0x01;
        mp = std::make_shared<Message>(mp->value(), mp->preds(), sig);
      }
    }
  }
};

class DanglingHasherActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

 protected:
  void transform(std::vector<Outgoing>& out) override {
    for (Outgoing& o : out) {
      std::set<Hash>* heads = nullptr;
      if (HeadsMsg* h = std::get_if<HeadsMsg>(&o.msg)) heads = &h->heads;
      if (HeadsV2Msg* h = std::get_if<HeadsV2Msg>(&o.msg)) heads = &h->heads;
      if (!heads) continue;
      for (int i = 0; i < 2; i++) {
        Hash junk{};
        for (size_t b = 0; b < junk.size(); b += 8) {
          uint64_t word = rng_();
          for (size_t k = 0; k < 8; k++) junk[b + k] = static_cast<uint8_t>(word >> (8 * k));
        }
        heads->insert(junk);
      }
    }
  }
};

class HeadsOmitterActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

 protected:
  void transform(std::vector<Outgoing>& out) override {
    for (Outgoing& o : out) {
      std::set<Hash>* heads = nullptr;
      if (HeadsMsg* h = std::get_if<HeadsMsg>(&o.msg)) heads = &h->heads;
      if (HeadsV2Msg* h = std::get_if<HeadsV2Msg>(&o.msg)) heads = &h->heads;
      if (!heads) continue;
      for (auto it = heads->begin(); it != heads->end();) {
        if (rng_() & 1) it = heads->erase(it);
        else ++it;
      }
    }
  }
};

class BloomCorruptorActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

 protected:
  void transform(std::vector<Outgoing>& out) override {
    for (Outgoing& o : out) {
      HeadsV2Msg* h = std::get_if<HeadsV2Msg>(&o.msg);
      if (!h) continue;
      for (uint8_t& byte : h->filter.bits) byte = static_cast<uint8_t>(rng_());
    }
  }
};

// Broadcasts well-formed, correctly signed updates whose content violates
// the declared invariants: negative balances, balance subtractions, deletes
// from a foreign-key target, user-chosen unique inserts, deletes naming
// hashes outside the causal past, and undecodable payloads.
class UnsafeUpdaterActor : public HonestActor {
 public:
  using HonestActor::HonestActor;

  MessagePtr broadcast_update(int, int, std::vector<Outgoing>& out) override {
    int n = attack_counter_++;
    int pattern = n == 0 ? 0 : 1 + (n - 1) % 6;
    switch (pattern) {
      case 0: {
        // A legitimate seed account so later patterns have state to abuse.
        rel::Transaction t;
        t.ins.push_back({"accounts", {rel::Value(name_), rel::Value(int64_t{50})}});
        return db_->commit_transaction(engine_, t, &out);
      }
      case 1: {
        rel::UpdateSet u;
        u.ins.push_back({"accounts", {rel::Value(std::string("intruder")), rel::Value(int64_t{-7})}});
        return engine_.broadcast(rel::encode_update_set(u), &out);
      }
      case 2: {
        rel::UpdateSet u;
        u.ins.push_back({"badges", {rel::Value(std::string("dup")), rel::Value(std::string("red"))}});
        return engine_.broadcast(rel::encode_update_set(u), &out);
      }
      case 3: {
        rel::UpdateSet u;
        auto items = db_->query("items");
        if (!items.empty()) {
          u.del.push_back(items.front());
        } else {
          u.del.push_back({sha256(text_bytes("ghost-item")), "items",
                           {rel::Value(std::string("ghost")), rel::Value(std::string("x"))}});
        }
        return engine_.broadcast(rel::encode_update_set(u), &out);
      }
      case 4: {
        rel::UpdateSet u;
        bool found = false;
        for (const rel::TupleTriple& tr : db_->query("accounts")) {
          if (tr.tuple.at(0) == rel::Value(name_)) {
            int64_t bal = std::get<int64_t>(tr.tuple.at(1));
            u.del.push_back(tr);
            u.ins.push_back({"accounts", {rel::Value(name_), rel::Value(bal - 5)}});
            found = true;
            break;
          }
        }
        if (!found)
          u.ins.push_back({"accounts", {rel::Value(name_ + "-x"), rel::Value(int64_t{-1})}});
        return engine_.broadcast(rel::encode_update_set(u), &out);
      }
      case 5: {
        rel::UpdateSet u;
        u.del.push_back({sha256(text_bytes("no-such-message-" + std::to_string(n))), "receipts",
                         {rel::Value(std::string("bogus")), rel::Value(std::string("x"))}});
        return engine_.broadcast(rel::encode_update_set(u), &out);
      }
      default: {
        return engine_.broadcast(text_bytes("!not-an-update!"), &out);
      }
    }
  }

 private:
  int attack_counter_ = 0;
};

// Keeps one engine per peer, all signing with the same key, and broadcasts a
// different value into each history: every individual peer sees a
// self-consistent replica, but the histories conflict.
class EquivocatorActor : public ActorBase {
 public:
  explicit EquivocatorActor(const ActorInit& init) : ActorBase(init) {
    for (const ReplicaId& peer : init.peers) {
      engines_.emplace(peer, std::make_unique<ReplicaEngine>(
                                 init.name, init.keys, init.directory, init.engine_cfg,
                                 init.cache));
    }
  }

  MessagePtr broadcast_update(int interval, int slot, std::vector<Outgoing>& out) override {
    for (auto& [peer, eng] : engines_) {
      std::string v = "eq/" + std::to_string(interval) + "/" + std::to_string(slot) + "/" + peer;
      std::vector<Outgoing> one;
      eng->broadcast(text_bytes(v), &one);
      // Eager pushes from the per-peer engine may only travel to that peer.
      for (Outgoing& o : one)
        if (o.peer == peer) out.push_back(std::move(o));
    }
    return nullptr;
  }

  std::vector<Outgoing> open_recon(const ReplicaId& peer) override {
    auto it = engines_.find(peer);
    if (it == engines_.end()) return {};
    return filtered(peer, it->second->start_reconciliation(peer));
  }

  std::vector<Outgoing> on_packet(const ReplicaId& from, const WireMessage& msg) override {
    auto it = engines_.find(from);
    if (it == engines_.end()) return {};
    return filtered(from, it->second->on_wire(from, msg));
  }

  void abort_conn(const ReplicaId& peer) override {
    auto it = engines_.find(peer);
    if (it != engines_.end()) it->second->abort_connection(peer);
  }

  void install_handler(DeliveryHandler) override {}  // faulty: unobserved

  const ReplicaEngine* engine_for_peer(const ReplicaId& peer) const override {
    auto it = engines_.find(peer);
    return it == engines_.end() ? nullptr : it->second.get();
  }
  const ReplicaEngine* primary_engine() const override {
    return engines_.empty() ? nullptr : engines_.begin()->second.get();
  }

 private:
  std::vector<Outgoing> filtered(const ReplicaId& peer, std::vector<Outgoing> outs) {
    std::vector<Outgoing> keep;
    for (Outgoing& o : outs)
      if (o.peer == peer) keep.push_back(std::move(o));
    return keep;
  }

  std::map<ReplicaId, std::unique_ptr<ReplicaEngine>> engines_;
};

std::unique_ptr<ActorBase> make_actor(AdversaryKind kind, const ActorInit& init) {
  switch (kind) {
    case AdversaryKind::Honest: return std::make_unique<HonestActor>(init);
    case AdversaryKind::Silent: return std::make_unique<SilentActor>(init);
    case AdversaryKind::SignatureForger: return std::make_unique<SignatureForgerActor>(init);
    case AdversaryKind::DanglingHasher: return std::make_unique<DanglingHasherActor>(init);
    case AdversaryKind::HeadsOmitter: return std::make_unique<HeadsOmitterActor>(init);
    case AdversaryKind::BloomCorruptor: return std::make_unique<BloomCorruptorActor>(init);
    case AdversaryKind::Equivocator: return std::make_unique<EquivocatorActor>(init);
    case AdversaryKind::UnsafeUpdater: return std::make_unique<UnsafeUpdaterActor>(init);
  }
  return std::make_unique<HonestActor>(init);
}

// --- the simulation driver ---------------------------------------------------

enum EventKind {
  kEvInterval = 0,
  kEvOpen = 1,
  kEvDeliver = 2,
  kEvTimeout = 3,
  kEvDisconnect = 4,
};

struct Event {
  double time = 0.0;
  uint64_t seq = 0;
  int kind = 0;
  int a = 0;  // interval index | pair index | sender
  int b = 0;  // receiver (deliver only)
  uint64_t epoch = 0;
  WireMessage msg = HeadsMsg{};
};

struct EventAfter {
  bool operator()(const Event& x, const Event& y) const {
    if (x.time != y.time) return x.time > y.time;
    return x.seq > y.seq;
  }
};

struct PairState {
  int a = 0;
  int b = 0;
  uint64_t epoch = 0;
  bool cur_open = false;
  bool terminal = false;
  double side_done[2] = {-1.0, -1.0};
  bool side_aborted[2] = {false, false};
  ReconStats cur;
};

constexpr uint64_t kMaxEvents = 200'000'000;

class Sim {
 public:
  explicit Sim(const ScenarioConfig& cfg) : cfg_(cfg) {
    n_ = cfg_.replicas;
    correct_.assign(n_, true);
    for (const auto& [idx, kind] : cfg_.adversaries)
      if (kind != AdversaryKind::Honest) correct_[idx] = false;
    for (int i = 0; i < n_; i++) names_.push_back(replica_name(i));

    if (!cfg_.schema_text.empty()) schema_ = rel::parse_schema(cfg_.schema_text);

    // Deterministic identities.
    auto dir = std::make_shared<KeyDirectory>();
    std::vector<KeyPair> keys;
    for (int i = 0; i < n_; i++) {
      Hash seed = sha256(text_bytes("replica-key/" + names_[i] + "/" +
                                    std::to_string(cfg_.seed)));
      keys.push_back(keypair_from_seed(seed));
      dir->add(names_[i], keys.back().pub);
    }
    directory_ = dir;
    cache_ = std::make_shared<VerifyCache>();

    BroadcastConfig bc;
    bc.protocol = cfg_.protocol;
    bc.eager_send = cfg_.eager_send;
    bc.eager_relay = cfg_.eager_relay;
    bc.bloom_bits_per_entry = static_cast<uint32_t>(cfg_.bloom_bits_per_entry);
    bc.bloom_hash_count = static_cast<uint32_t>(cfg_.bloom_hash_count);

    // Pair list in canonical order.
    std::set<std::pair<int, int>> pair_set;
    if (cfg_.topology.empty()) {
      for (int i = 0; i < n_; i++)
        for (int j = i + 1; j < n_; j++) pair_set.insert({i, j});
    } else {
      for (auto [a, b] : cfg_.topology) pair_set.insert({std::min(a, b), std::max(a, b)});
    }
    pair_of_.assign(static_cast<size_t>(n_) * n_, -1);
    for (const auto& [a, b] : pair_set) {
      PairState ps;
      ps.a = a;
      ps.b = b;
      pair_of_[static_cast<size_t>(a) * n_ + b] = static_cast<int>(pairs_.size());
      pair_of_[static_cast<size_t>(b) * n_ + a] = static_cast<int>(pairs_.size());
      pairs_.push_back(ps);
    }
    for (int k = 0; k < static_cast<int>(pairs_.size()); k++) {
      all_pairs_.push_back(k);
      if (correct_[pairs_[k].a] && correct_[pairs_[k].b]) correct_pairs_.push_back(k);
    }

    for (int i = 0; i < n_; i++) {
      ActorInit init;
      init.idx = i;
      init.name = names_[i];
      init.keys = keys[i];
      init.directory = directory_;
      init.engine_cfg = bc;
      init.cache = cache_;
      init.schema = schema_ ? &*schema_ : nullptr;
      std::seed_seq sseq{cfg_.seed, static_cast<uint64_t>(i), uint64_t{0xD15EA5E}};
      std::vector<uint64_t> sv(1);
      sseq.generate(sv.begin(), sv.end());
      init.rng_seed = sv[0];
      for (int j = 0; j < n_; j++)
        if (j != i && pair_of_[static_cast<size_t>(i) * n_ + j] >= 0)
          init.peers.push_back(names_[j]);
      AdversaryKind kind = AdversaryKind::Honest;
      auto it = cfg_.adversaries.find(i);
      if (it != cfg_.adversaries.end()) kind = it->second;
      actors_.push_back(make_actor(kind, init));
      index_of_[names_[i]] = i;
    }
    for (int i = 0; i < n_; i++) {
      actors_[i]->install_handler([this, i](const MessagePtr& m, const ReplicaId& author) {
        on_delivery(i, m, author);
      });
      delivered_ids_.emplace_back();
    }
  }

  ScenarioResult run() {
    push_interval(0, 0.0);
    uint64_t processed = 0;
    while (!queue_.empty()) {
      Event e = queue_.top();
      queue_.pop();
      clock_ = e.time;
      if (++processed > kMaxEvents)
        throw std::logic_error("simulation exceeded the event budget");
      dispatch(e);
    }
    finalize();
    return std::move(result_);
  }

 private:
  int total_intervals() const { return cfg_.intervals + cfg_.quiet_intervals; }
  double timeout_duration() const { return cfg_.timeout_intervals * cfg_.recon_interval; }

  void push(Event e) {
    e.seq = next_seq_++;
    queue_.push(std::move(e));
  }
  void push_interval(int t, double at) {
    Event e;
    e.time = at;
    e.kind = kEvInterval;
    e.a = t;
    push(std::move(e));
  }

  void violation(const std::string& what) {
    if (result_.property_violations.size() < 10000)
      result_.property_violations.push_back(what);
  }

  void dispatch(const Event& e) {
    switch (e.kind) {
      case kEvInterval: start_interval(e.a); break;
      case kEvOpen: open_pair(e.a); break;
      case kEvDeliver: deliver(e); break;
      case kEvTimeout: on_timeout(e.a, e.epoch); break;
      case kEvDisconnect: on_disconnect(e.a, e.epoch); break;
    }
  }

  void start_interval(int t) {
    cur_interval_ = t;
    if (t < cfg_.intervals) {
      for (int j = 0; j < cfg_.updates_per_interval; j++) {
        int owner = (t * cfg_.updates_per_interval + j) % n_;
        std::vector<Outgoing> out;
        MessagePtr m = actors_[owner]->broadcast_update(t, j, out);
        if (m && correct_[owner]) {
          registry_[names_[owner]].insert(m->id());
          if (!delivered_ids_[owner].count(m->id()))
            violation("self-delivery missing at " + names_[owner]);
        }
        emit(owner, out);
      }
    }
    const std::vector<int>& plist = t < cfg_.intervals ? all_pairs_ : correct_pairs_;
    if (cfg_.schedule == Schedule::Sequential) {
      chain_ = plist;
      chain_pos_ = -1;
      advance_chain();
    } else {
      for (int k : plist) {
        Event e;
        e.time = clock_ + k * cfg_.stagger_step;
        e.kind = kEvOpen;
        e.a = k;
        push(std::move(e));
      }
      if (t + 1 < total_intervals()) push_interval(t + 1, clock_ + cfg_.recon_interval);
    }
  }

  void advance_chain() {
    while (true) {
      chain_pos_++;
      if (chain_pos_ >= static_cast<int>(chain_.size())) break;
      if (open_pair(chain_[chain_pos_])) return;
    }
    if (cur_interval_ + 1 < total_intervals())
      push_interval(cur_interval_ + 1, clock_ + cfg_.latency);
  }

  bool open_pair(int k) {
    PairState& ps = pairs_[k];
    const ConnectionState* ca = conn_of(ps.a, ps.b);
    const ConnectionState* cb = conn_of(ps.b, ps.a);
    if ((ca && ca->phase == ConnPhase::Active) || (cb && cb->phase == ConnPhase::Active)) {
      result_.skipped_opens++;
      return false;
    }
    if (ps.cur_open) result_.recons.push_back(ps.cur);
    ps.epoch++;
    ps.cur = ReconStats{};
    ps.cur.a = ps.a;
    ps.cur.b = ps.b;
    ps.cur.interval = cur_interval_;
    ps.cur.opened_at = clock_;
    ps.cur_open = true;
    ps.terminal = false;
    ps.side_done[0] = ps.side_done[1] = -1.0;
    ps.side_aborted[0] = ps.side_aborted[1] = false;
    emit(ps.a, actors_[ps.a]->open_recon(names_[ps.b]));
    emit(ps.b, actors_[ps.b]->open_recon(names_[ps.a]));
    Event e;
    e.time = clock_ + timeout_duration();
    e.kind = kEvTimeout;
    e.a = k;
    e.epoch = ps.epoch;
    push(std::move(e));
    return true;
  }

  const ConnectionState* conn_of(int replica, int peer) const {
    const ReplicaEngine* eng = actors_[replica]->engine_for_peer(names_[peer]);
    return eng ? eng->connection(names_[peer]) : nullptr;
  }

  void emit(int from, const std::vector<Outgoing>& outs) {
    for (const Outgoing& o : outs) {
      auto it = index_of_.find(o.peer);
      if (it == index_of_.end()) {
        violation("packet to unknown peer " + o.peer);
        continue;
      }
      int to = it->second;
      int k = pair_of_[static_cast<size_t>(from) * n_ + to];
      if (k < 0) {
        violation("packet outside topology " + names_[from] + "->" + o.peer);
        continue;
      }
      PairState& ps = pairs_[k];
      if (ps.cur_open) ps.cur.bytes += cost_of(o.msg, cfg_.cost);
      Event e;
      e.time = clock_ + cfg_.latency;
      e.kind = kEvDeliver;
      e.a = from;
      e.b = to;
      e.epoch = ps.epoch;
      e.msg = o.msg;
      push(std::move(e));
    }
  }

  void deliver(const Event& e) {
    int k = pair_of_[static_cast<size_t>(e.a) * n_ + e.b];
    PairState& ps = pairs_[k];
    if (e.epoch != ps.epoch) return;  // packet from a closed connection
    ctx_pair_ = k;
    std::vector<Outgoing> outs = actors_[e.b]->on_packet(names_[e.a], e.msg);
    ctx_pair_ = -1;
    emit(e.b, outs);
    observe_side(k, e.b);
  }

  void observe_side(int k, int replica) {
    PairState& ps = pairs_[k];
    if (ps.terminal) return;
    int side = replica == ps.a ? 0 : 1;
    int other = replica == ps.a ? ps.b : ps.a;
    const ConnectionState* c = conn_of(replica, other);
    if (!c) return;
    if (c->phase == ConnPhase::Complete && ps.side_done[side] < 0)
      ps.side_done[side] = clock_;
    if (c->phase == ConnPhase::Aborted && !ps.side_aborted[side]) {
      ps.side_aborted[side] = true;
      Event e;
      e.time = clock_ + cfg_.latency;
      e.kind = kEvDisconnect;
      e.a = k;
      e.epoch = ps.epoch;
      push(std::move(e));
    }
    if (ps.side_done[0] >= 0 && ps.side_done[1] >= 0) {
      ps.cur.completed = true;
      ps.cur.completed_at = std::max(ps.side_done[0], ps.side_done[1]);
      double dt = ps.cur.completed_at - ps.cur.opened_at;
      ps.cur.round_trips =
          std::max(1, static_cast<int>(std::ceil(dt / (2 * cfg_.latency) - 1e-9)));
      ps.terminal = true;
      on_pair_terminal(k);
    }
  }

  void on_timeout(int k, uint64_t epoch) {
    PairState& ps = pairs_[k];
    if (epoch != ps.epoch || ps.terminal) return;
    force_close(ps);
    on_pair_terminal(k);
  }

  void on_disconnect(int k, uint64_t epoch) {
    PairState& ps = pairs_[k];
    if (epoch != ps.epoch || ps.terminal) return;
    force_close(ps);
    on_pair_terminal(k);
  }

  void force_close(PairState& ps) {
    const ConnectionState* ca = conn_of(ps.a, ps.b);
    if (ca && ca->phase == ConnPhase::Active) actors_[ps.a]->abort_conn(names_[ps.b]);
    const ConnectionState* cb = conn_of(ps.b, ps.a);
    if (cb && cb->phase == ConnPhase::Active) actors_[ps.b]->abort_conn(names_[ps.a]);
    ps.terminal = true;
  }

  void on_pair_terminal(int k) {
    if (cfg_.schedule != Schedule::Sequential) return;
    if (chain_pos_ >= 0 && chain_pos_ < static_cast<int>(chain_.size()) &&
        chain_[chain_pos_] == k)
      advance_chain();
  }

  void on_delivery(int i, const MessagePtr& m, const ReplicaId& author) {
    if (ctx_pair_ >= 0) {
      PairState& ps = pairs_[ctx_pair_];
      if (ps.cur_open) {
        ps.cur.new_msgs++;
        ps.cur.optimal_bytes += cfg_.cost.per_update + cfg_.cost.per_hash * m->preds().size();
      }
    }
    rel::ReplicatedStore* db = actors_[i]->db();
    if (!correct_[i]) {
      if (db) db->on_deliver(m);
      return;
    }
    std::set<Hash>& ids = delivered_ids_[i];
    for (const Hash& p : m->preds()) {
      if (!ids.count(p)) {
        violation("causal order broken at " + names_[i] + ": " + to_hex(m->id()) +
                  " delivered before predecessor " + to_hex(p));
        break;
      }
    }
    if (!ids.insert(m->id()).second)
      violation("duplicate delivery at " + names_[i] + ": " + to_hex(m->id()));
    if (author != names_[i]) {
      auto reg = registry_.find(author);
      bool author_correct =
          index_of_.count(author) != 0 && correct_[index_of_.at(author)];
      if (author_correct && (reg == registry_.end() || !reg->second.count(m->id())))
        violation("message forged under " + author + " delivered at " + names_[i]);
    }
    result_.deliveries[i].push_back(DeliveryRecord{m->id(), author, m->value(), clock_});
    if (db) {
      db->on_deliver(m);
      if (cfg_.check_each_delivery) {
        for (const std::string& v : db->invariant_violations())
          violation("invariant broken at " + names_[i] + " after " + to_hex(m->id()) + ": " + v);
      }
    }
  }

  void finalize() {
    for (PairState& ps : pairs_)
      if (ps.cur_open) result_.recons.push_back(ps.cur);

    std::optional<Hash> first_store;
    std::optional<Hash> first_state;
    int first_idx = -1;
    for (int i = 0; i < n_; i++) {
      if (!correct_[i]) continue;
      const ReplicaEngine* eng = actors_[i]->primary_engine();
      Hash digest = store_digest(eng->store());
      result_.store_digests[i] = digest;
      result_.store_sizes[i] = eng->store().size();
      result_.violations[i] = eng->violations();
      if (!first_store) {
        first_store = digest;
        first_idx = i;
      } else if (digest != *first_store) {
        violation("correct replicas diverged: " + names_[first_idx] + " vs " + names_[i]);
      }
      if (rel::ReplicatedStore* db = actors_[i]->db()) {
        Hash st = db->state_fingerprint();
        result_.state_digests[i] = st;
        result_.decisions[i] = db->decisions();
        result_.decision_counts[i] = db->counters();
        result_.view_values[i] = db->view_values();
        for (const std::string& v : db->invariant_violations())
          violation("invariant broken at " + names_[i] + " at end of run: " + v);
        if (!first_state) {
          first_state = st;
        } else if (st != *first_state) {
          violation("replicated states diverged: " + names_[first_idx] + " vs " + names_[i]);
        }
      }
    }
    // Identical apply/ignore decisions across correct replicas.
    const std::map<Hash, rel::ReplicatedStore::Decision>* base = nullptr;
    for (const auto& [i, dec] : result_.decisions) {
      if (!base) base = &dec;
      else if (dec != *base) violation("apply/ignore decisions diverged at " + names_[i]);
    }
    // Every correct broadcast reaches every correct replica.
    for (const auto& [author, ids] : registry_) {
      for (int i = 0; i < n_; i++) {
        if (!correct_[i]) continue;
        for (const Hash& id : ids) {
          if (!delivered_ids_[i].count(id)) {
            violation("broadcast " + to_hex(id) + " by " + author + " never delivered at " +
                      names_[i]);
          }
        }
      }
    }
    result_.end_time = clock_;
  }

  ScenarioConfig cfg_;
  int n_ = 0;
  std::vector<std::string> names_;
  std::vector<bool> correct_;
  std::optional<rel::Schema> schema_;
  std::shared_ptr<const KeyDirectory> directory_;
  std::shared_ptr<VerifyCache> cache_;
  std::vector<std::unique_ptr<ActorBase>> actors_;
  std::map<ReplicaId, int> index_of_;
  std::vector<PairState> pairs_;
  std::vector<int> pair_of_;  // (a*n + b) -> pair index or -1
  std::vector<int> all_pairs_;
  std::vector<int> correct_pairs_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  uint64_t next_seq_ = 0;
  double clock_ = 0.0;
  int cur_interval_ = 0;
  std::vector<int> chain_;
  int chain_pos_ = -1;
  int ctx_pair_ = -1;
  std::map<ReplicaId, std::set<Hash>> registry_;  // correct broadcasts
  std::vector<std::set<Hash>> delivered_ids_;
  ScenarioResult result_;
};

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg) {
  validate_scenario(cfg);
  Sim sim(cfg);
  return sim.run();
}

PumpResult pump_reconciliation(ReplicaEngine& a, ReplicaEngine& b, const CostModel& cost) {
  std::deque<std::pair<int, Outgoing>> q;
  auto push_all = [&q](int side, std::vector<Outgoing> outs) {
    for (Outgoing& o : outs) q.emplace_back(side, std::move(o));
  };
  push_all(0, a.start_reconciliation(b.self()));
  push_all(1, b.start_reconciliation(a.self()));
  PumpResult r;
  int guard = 0;
  while (!q.empty()) {
    if (++guard > 100000) break;
    auto [side, o] = q.front();
    q.pop_front();
    r.packets++;
    uint64_t c = cost_of(o.msg, cost);
    if (side == 0) {
      r.bytes_a_to_b += c;
      push_all(1, b.on_wire(a.self(), o.msg));
    } else {
      r.bytes_b_to_a += c;
      push_all(0, a.on_wire(b.self(), o.msg));
    }
  }
  const ConnectionState* ca = a.connection(b.self());
  const ConnectionState* cb = b.connection(a.self());
  r.completed_a = ca && ca->phase == ConnPhase::Complete;
  r.completed_b = cb && cb->phase == ConnPhase::Complete;
  return r;
}

std::string stats_csv(const std::vector<ReconStats>& recons) {
  std::string out = "pair,interval,round_trips,bytes,optimal_bytes,new_msgs,completed\n";
  char buf[160];
  for (const ReconStats& r : recons) {
    std::snprintf(buf, sizeof(buf), "%d-%d,%d,%d,%llu,%llu,%d,%d\n", r.a, r.b, r.interval,
                  r.round_trips, static_cast<unsigned long long>(r.bytes),
                  static_cast<unsigned long long>(r.optimal_bytes), r.new_msgs,
                  r.completed ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace dagsync::sim
