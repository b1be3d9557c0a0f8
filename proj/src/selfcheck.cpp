#include "dagsync/selfcheck.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "dagsync/crypto.hpp"
#include "dagsync/relstore.hpp"

namespace dagsync::check {

namespace {

Bytes text_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

const std::vector<sim::AdversaryKind>& matrix_kinds() {
  static const std::vector<sim::AdversaryKind> kinds = {
      sim::AdversaryKind::Honest,          sim::AdversaryKind::Silent,
      sim::AdversaryKind::SignatureForger, sim::AdversaryKind::DanglingHasher,
      sim::AdversaryKind::HeadsOmitter,     sim::AdversaryKind::BloomCorruptor,
      sim::AdversaryKind::Equivocator,     sim::AdversaryKind::UnsafeUpdater,
  };
  return kinds;
}

}  // namespace

std::vector<std::string> run_property_matrix(const MatrixOptions& opts) {
  std::vector<std::string> violations;
  const ProtocolVersion protocols[] = {ProtocolVersion::Basic, ProtocolVersion::Bloom};
  for (sim::AdversaryKind kind : matrix_kinds()) {
    for (ProtocolVersion proto : protocols) {
      for (int s = 0; s < opts.seeds; s++) {
        sim::ScenarioConfig cfg;
        cfg.replicas = opts.correct + opts.faulty;
        cfg.protocol = proto;
        cfg.schedule = sim::Schedule::Sequential;
        cfg.updates_per_interval = opts.updates_per_interval;
        cfg.intervals = opts.intervals;
        cfg.quiet_intervals = opts.quiet_intervals;
        cfg.schema_text = sim::demo_schema();
        cfg.check_each_delivery = true;
        cfg.seed = opts.base_seed + static_cast<uint64_t>(s);
        if (kind != sim::AdversaryKind::Honest) {
          for (int f = opts.correct; f < opts.correct + opts.faulty; f++)
            cfg.adversaries[f] = kind;
        }
        sim::ScenarioResult result = sim::run_scenario(cfg);
        std::string tag = sim::adversary_kind_name(kind) + "/" +
                          (proto == ProtocolVersion::Basic ? "basic" : "bloom") +
                          "/seed=" + std::to_string(cfg.seed) + ": ";
        for (const std::string& v : result.property_violations)
          violations.push_back(tag + v);
      }
    }
  }
  return violations;
}

// --- commutativity suite -----------------------------------------------------

namespace {

struct Workload {
  std::vector<MessagePtr> msgs;           // creation order (preds point backwards)
  MessageStore store;                     // holds every message for pred checks
};

// One randomized batch of concurrent messages over the built-in demo schema:
// account inserts (sometimes negative), items, user-chosen badges, receipts
// with hash-derived keys, deposits and receipt deletes referencing earlier
// messages (sometimes without the causal dependency), order inserts with
// failing row checks, and undecodable payloads.
Workload make_workload(std::mt19937_64& rng, int max_messages,
                       const std::vector<KeyPair>& keys) {
  Workload w;
  int n = 2 + static_cast<int>(rng() % static_cast<uint64_t>(max_messages - 1));
  struct Made {
    MessagePtr msg;
    std::optional<rel::TupleTriple> inserted;  // a triple this message applied
  };
  std::vector<Made> made;
  for (int i = 0; i < n; i++) {
    std::set<Hash> preds;
    for (const Made& m : made)
      if (rng() % 5 < 2) preds.insert(m.msg->id());

    rel::UpdateSet u;
    std::optional<rel::TupleTriple> inserted;
    Bytes value;
    bool raw = false;
    switch (rng() % 8) {
      case 0: {
        int64_t amt = (rng() % 4 == 0) ? -5 : static_cast<int64_t>(rng() % 90 + 10);
        rel::Tuple t{rel::Value("acct-" + std::to_string(i)), rel::Value(amt)};
        u.ins.push_back({"accounts", t});
        break;
      }
      case 1: {
        rel::Tuple t{rel::Value("sku-" + std::to_string(i)), rel::Value(std::string("w"))};
        u.ins.push_back({"items", t});
        break;
      }
      case 2:
        u.ins.push_back({"badges",
                         {rel::Value("badge-" + std::to_string(i)),
                          rel::Value(std::string("blue"))}});
        break;
      case 3:
        u.ins.push_back({"receipts",
                         {rel::Value(std::string()),
                          rel::Value("note-" + std::to_string(i))}});
        break;
      case 4: {
        // Deposit against a random earlier account insert.
        const Made* target = nullptr;
        for (const Made& m : made)
          if (m.inserted && m.inserted->rel == "accounts") target = &m;
        if (!target) {
          u.ins.push_back({"accounts",
                           {rel::Value("acct-" + std::to_string(i)), rel::Value(int64_t{20})}});
          break;
        }
        int64_t old_amt = std::get<int64_t>(target->inserted->tuple.at(1));
        u.del.push_back(*target->inserted);
        u.ins.push_back(
            {"accounts", {target->inserted->tuple.at(0), rel::Value(old_amt + 7)}});
        break;
      }
      case 5: {
        // Delete a random earlier receipt (post-rewrite tuple).
        const Made* target = nullptr;
        for (const Made& m : made)
          if (m.inserted && m.inserted->rel == "receipts") target = &m;
        if (!target) {
          u.ins.push_back({"items",
                           {rel::Value("sku-x" + std::to_string(i)),
                            rel::Value(std::string("w"))}});
          break;
        }
        u.del.push_back(*target->inserted);
        break;
      }
      case 6:
        raw = true;
        value = text_bytes("junk-" + std::to_string(i));
        break;
      default: {
        int64_t qty = (rng() % 3 == 0) ? 0 : 2;
        std::string sku = made.empty() ? "nosuch" : "sku-0";
        u.ins.push_back({"orders", {rel::Value(sku), rel::Value(qty)}});
        break;
      }
    }
    if (!raw) value = rel::encode_update_set(u);
    MessagePtr msg = make_message(value, preds, keys[i % keys.size()].sec);
    // Track one applied triple for later deletes: an insert into accounts
    // or receipts, with the hash-derived key rewritten the way delivery
    // rewrites it.
    if (!raw && u.del.empty() && !u.ins.empty()) {
      const auto& [rel_name, tuple] = u.ins.front();
      if (rel_name == "accounts" && std::get<int64_t>(tuple.at(1)) >= 0) {
        inserted = rel::TupleTriple{msg->id(), rel_name, tuple};
      } else if (rel_name == "receipts") {
        rel::Tuple rewritten = tuple;
        rewritten.at(0) = rel::Value(to_hex(msg->id()));
        inserted = rel::TupleTriple{msg->id(), rel_name, rewritten};
      }
    }
    made.push_back({msg, inserted});
    w.msgs.push_back(msg);
  }
  w.store.insert_batch(w.msgs);
  return w;
}

void enumerate_orders(const std::vector<MessagePtr>& msgs, std::vector<int>& order,
                      std::vector<bool>& used, std::set<Hash>& placed,
                      const std::function<void(const std::vector<int>&)>& visit) {
  if (order.size() == msgs.size()) {
    visit(order);
    return;
  }
  for (size_t i = 0; i < msgs.size(); i++) {
    if (used[i]) continue;
    bool ready = true;
    for (const Hash& p : msgs[i]->preds())
      if (!placed.count(p)) { ready = false; break; }
    if (!ready) continue;
    used[i] = true;
    placed.insert(msgs[i]->id());
    order.push_back(static_cast<int>(i));
    enumerate_orders(msgs, order, used, placed, visit);
    order.pop_back();
    placed.erase(msgs[i]->id());
    used[i] = false;
  }
}

}  // namespace

std::vector<std::string> run_commutativity_suite(int workloads, uint64_t seed,
                                                 int max_messages) {
  std::vector<std::string> violations;
  rel::Schema schema = rel::parse_schema(sim::demo_schema());
  std::vector<KeyPair> keys;
  for (int i = 0; i < 3; i++)
    keys.push_back(keypair_from_seed(sha256("commute-key-" + std::to_string(i))));
  std::mt19937_64 rng(seed);

  for (int wl = 0; wl < workloads; wl++) {
    Workload w = make_workload(rng, max_messages, keys);
    std::optional<Hash> ref_state;
    std::optional<std::map<Hash, rel::ReplicatedStore::Decision>> ref_decisions;
    int orders_seen = 0;
    bool mismatch = false;

    std::vector<int> order;
    std::vector<bool> used(w.msgs.size(), false);
    std::set<Hash> placed;
    enumerate_orders(w.msgs, order, used, placed, [&](const std::vector<int>& o) {
      if (mismatch || orders_seen >= 5000) return;
      orders_seen++;
      rel::ReplicatedStore st(schema, &w.store);
      for (int idx : o) st.on_deliver(w.msgs[idx]);
      Hash fp = st.state_fingerprint();
      if (!ref_state) {
        ref_state = fp;
        ref_decisions = st.decisions();
        return;
      }
      if (fp != *ref_state) {
        violations.push_back("workload " + std::to_string(wl) +
                             ": final state depends on delivery order");
        mismatch = true;
      } else if (st.decisions() != *ref_decisions) {
        violations.push_back("workload " + std::to_string(wl) +
                             ": apply/ignore decisions depend on delivery order");
        mismatch = true;
      }
    });
    if (orders_seen == 0)
      violations.push_back("workload " + std::to_string(wl) + ": no valid delivery order");
  }
  return violations;
}

// --- mutation checks ---------------------------------------------------------

namespace {

// Disables signature verification on a receiving engine, feeds it a message
// with a corrupted signature, and confirms the delivered-trace checker
// (re-verifying every delivered message against the key directory) reports
// it. Also confirms the unmutated engine rejects the same message.
std::vector<std::string> signature_mutation_check() {
  std::vector<std::string> violations;
  KeyPair kp = keypair_from_seed(sha256("mut-p"));
  KeyPair kf = keypair_from_seed(sha256("mut-f"));
  auto dir = std::make_shared<KeyDirectory>();
  dir->add("p", kp.pub);
  dir->add("f", kf.pub);

  MessagePtr good = make_message(text_bytes("hello"), {}, kf.sec);
  Signature bad_sig = good->sig();
  bad_sig[0] ^= 0x01;
  MessagePtr forged = std::make_shared<Message>(good->value(), good->preds(), bad_sig);

  auto run = [&](bool skip_check) {
    BroadcastConfig bc;
    ReplicaEngine p("p", kp, dir, bc);
    p.test_skip_signature_check(skip_check);
    std::vector<MessagePtr> delivered;
    p.set_delivery_handler([&](const MessagePtr& m, const ReplicaId&) {
      delivered.push_back(m);
    });
    // Packets on unknown connections are dropped, so open one first.
    p.start_reconciliation("f");
    p.on_wire("f", MsgsMsg{{forged}});
    return delivered;
  };

  std::vector<MessagePtr> normal = run(false);
  if (!normal.empty())
    violations.push_back("control: engine with checks on delivered a forged message");

  std::vector<MessagePtr> mutated = run(true);
  bool detector_fired = false;
  for (const MessagePtr& m : mutated)
    if (!dir->check(m->payload(), m->sig())) detector_fired = true;
  if (mutated.empty())
    violations.push_back("mutation: skip-signature hook did not admit the message");
  else if (!detector_fired)
    violations.push_back("mutation: trace checker missed a delivered forged message");
  return violations;
}

// Disables the causal-precedence check on deletes and confirms that a delete
// concurrent with its target insert drives two replicas to different states
// depending on delivery order — the divergence the check exists to prevent.
// Also confirms that with the check on, both orders converge.
std::vector<std::string> pred_mutation_check() {
  std::vector<std::string> violations;
  rel::Schema schema = rel::parse_schema("relation notes k:string v:string\n");
  KeyPair ka = keypair_from_seed(sha256("mut-a"));
  KeyPair kb = keypair_from_seed(sha256("mut-b"));

  rel::UpdateSet ins;
  ins.ins.push_back({"notes", {rel::Value(std::string("a")), rel::Value(std::string("b"))}});
  MessagePtr m1 = make_message(rel::encode_update_set(ins), {}, ka.sec);

  rel::UpdateSet del;
  del.del.push_back(
      {m1->id(), "notes", {rel::Value(std::string("a")), rel::Value(std::string("b"))}});
  // No predecessor on the delete: it is concurrent with the insert it names.
  MessagePtr m2 = make_message(rel::encode_update_set(del), {}, kb.sec);

  auto run_order = [&](bool skip_pred, bool insert_first) {
    MessageStore store;
    store.insert_batch({m1, m2});
    rel::ReplicatedStore st(schema, &store);
    st.test_skip_pred_check(skip_pred);
    if (insert_first) {
      st.on_deliver(m1);
      st.on_deliver(m2);
    } else {
      st.on_deliver(m2);
      st.on_deliver(m1);
    }
    return st.state_fingerprint();
  };

  if (run_order(false, true) != run_order(false, false))
    violations.push_back("control: states diverged with the precedence check on");
  if (run_order(true, true) == run_order(true, false))
    violations.push_back(
        "mutation: convergence checker missed order-dependent state with the "
        "precedence check disabled");
  return violations;
}

}  // namespace

std::vector<std::string> run_mutation_checks() {
  std::vector<std::string> violations = signature_mutation_check();
  std::vector<std::string> more = pred_mutation_check();
  violations.insert(violations.end(), more.begin(), more.end());
  return violations;
}

}  // namespace dagsync::check
