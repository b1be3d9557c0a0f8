#include <cstdio>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dagsync/sync.hpp"
#include "doctest.h"

using namespace dagsync;

namespace {

Bytes text(const std::string& s) { return Bytes(s.begin(), s.end()); }

// Shared DAG fixture: one external author "w" writes the example history.
struct DagFixture {
  KeyPair key = keypair_from_seed(sha256(std::string("fixture-author")));
  std::map<std::string, MessagePtr> by_name;

  MessagePtr add(const std::string& name, const std::vector<std::string>& preds,
                 const std::string& value = "") {
    std::set<Hash> hs;
    for (const std::string& p : preds) hs.insert(by_name.at(p)->id());
    MessagePtr m = make_message(text(value.empty() ? name : value), hs, key.sec);
    by_name[name] = m;
    return m;
  }
  Hash id(const std::string& name) const { return by_name.at(name)->id(); }
  MessagePtr get(const std::string& name) const { return by_name.at(name); }
  std::vector<MessagePtr> msgs(const std::vector<std::string>& names) const {
    std::vector<MessagePtr> out;
    for (const std::string& n : names) out.push_back(by_name.at(n));
    return out;
  }
  std::set<Hash> ids(const std::vector<std::string>& names) const {
    std::set<Hash> out;
    for (const std::string& n : names) out.insert(id(n));
    return out;
  }
};

// Two engines p and q with a directory covering both plus the fixture author.
struct EnginePair {
  DagFixture fix;
  KeyPair kp = keypair_from_seed(sha256(std::string("replica-p")));
  KeyPair kq = keypair_from_seed(sha256(std::string("replica-q")));
  std::shared_ptr<KeyDirectory> dir = std::make_shared<KeyDirectory>();
  std::unique_ptr<ReplicaEngine> p, q;
  std::vector<std::pair<Hash, ReplicaId>> delivered_p, delivered_q;

  explicit EnginePair(BroadcastConfig cfg = {}) {
    dir->add("p", kp.pub);
    dir->add("q", kq.pub);
    dir->add("w", fix.key.pub);
    p = std::make_unique<ReplicaEngine>("p", kp, dir, cfg);
    q = std::make_unique<ReplicaEngine>("q", kq, dir, cfg);
    p->set_delivery_handler([this](const MessagePtr& m, const ReplicaId& a) {
      delivered_p.emplace_back(m->id(), a);
    });
    q->set_delivery_handler([this](const MessagePtr& m, const ReplicaId& a) {
      delivered_q.emplace_back(m->id(), a);
    });
  }

  ReplicaEngine& by_name(const ReplicaId& r) { return r == "p" ? *p : *q; }

  // Runs both sides to quiescence; returns total packets exchanged.
  int pump() {
    std::deque<std::pair<ReplicaId, WireMessage>> inflight;  // (destination, msg)
    auto enqueue = [&](const ReplicaId& from, const std::vector<Outgoing>& outs) {
      for (const Outgoing& o : outs) {
        REQUIRE(o.peer != from);
        inflight.emplace_back(o.peer == "p" ? "p" : "q", o.msg);
      }
    };
    enqueue("p", p->start_reconciliation("q"));
    enqueue("q", q->start_reconciliation("p"));
    int packets = static_cast<int>(inflight.size());
    int guard = 0;
    while (!inflight.empty()) {
      REQUIRE(++guard < 10000);
      auto [to, msg] = std::move(inflight.front());
      inflight.pop_front();
      ReplicaId from = to == "p" ? "q" : "p";
      std::vector<Outgoing> outs = by_name(to).on_wire(from, msg);
      packets += static_cast<int>(outs.size());
      enqueue(to, outs);
    }
    return packets;
  }
};

// Populates the standard split: p holds the C..E and J..M branches, q holds
// the F,G branch and J..K.
void load_example_split(EnginePair& e) {
  DagFixture& f = e.fix;
  f.add("A", {});
  f.add("B", {"A"});
  f.add("C", {"B"});
  f.add("D", {"C"});
  f.add("E", {"D"});
  f.add("J", {"B"});
  f.add("K", {"J"});
  f.add("L", {"K"});
  f.add("M", {"L"});
  f.add("F", {"B"});
  f.add("G", {"F"});
  e.p->store().insert_batch(f.msgs({"A", "B", "C", "D", "E", "J", "K", "L", "M"}));
  e.q->store().insert_batch(f.msgs({"A", "B", "F", "G", "J", "K"}));
}

std::set<Hash> store_ids(const ReplicaEngine& e) {
  std::set<Hash> out;
  for (const auto& [h, m] : e.store().messages()) out.insert(h);
  return out;
}

std::set<Hash> msg_ids(const MsgsMsg& m) {
  std::set<Hash> out;
  for (const MessagePtr& p : m.msgs) out.insert(p->id());
  return out;
}

size_t index_of(const std::vector<std::pair<Hash, ReplicaId>>& seq, const Hash& h) {
  for (size_t i = 0; i < seq.size(); i++)
    if (seq[i].first == h) return i;
  REQUIRE(false);
  return 0;
}

}  // namespace

TEST_CASE("two empty replicas reconcile in one heads exchange") {
  EnginePair e;
  int packets = e.pump();
  CHECK(packets == 2);
  CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  CHECK(e.q->connection("p")->phase == ConnPhase::Complete);
  CHECK(e.delivered_p.empty());
  CHECK(e.delivered_q.empty());
}

TEST_CASE("starting twice while active is a no-op") {
  EnginePair e;
  CHECK(e.p->start_reconciliation("q").size() == 1);
  CHECK(e.p->start_reconciliation("q").empty());
}

TEST_CASE("one-sided catch-up transfers the chain and delivers causally") {
  EnginePair e;
  e.fix.add("A", {});
  e.fix.add("B", {"A"});
  e.fix.add("C", {"B"});
  e.p->store().insert_batch(e.fix.msgs({"A", "B", "C"}));

  e.pump();
  CHECK(store_ids(*e.q) == e.fix.ids({"A", "B", "C"}));
  REQUIRE(e.delivered_q.size() == 3);
  CHECK(e.delivered_q[0].first == e.fix.id("A"));
  CHECK(e.delivered_q[1].first == e.fix.id("B"));
  CHECK(e.delivered_q[2].first == e.fix.id("C"));
  for (const auto& [h, author] : e.delivered_q) CHECK(author == "w");
  CHECK(e.delivered_p.empty());
}

TEST_CASE("hash-exchange reconciliation follows the expected packet trace") {
  EnginePair e;
  load_example_split(e);
  DagFixture& f = e.fix;

  // Both sides open with their heads.
  std::vector<Outgoing> po = e.p->start_reconciliation("q");
  std::vector<Outgoing> qo = e.q->start_reconciliation("p");
  REQUIRE(po.size() == 1);
  REQUIRE(qo.size() == 1);
  CHECK(std::get<HeadsMsg>(po[0].msg) == HeadsMsg{f.ids({"E", "M"})});
  CHECK(std::get<HeadsMsg>(qo[0].msg) == HeadsMsg{f.ids({"G", "K"})});

  // Each side requests the heads it cannot resolve.
  std::vector<Outgoing> p1 = e.p->on_wire("q", qo[0].msg);
  std::vector<Outgoing> q1 = e.q->on_wire("p", po[0].msg);
  REQUIRE(p1.size() == 1);
  REQUIRE(q1.size() == 1);
  CHECK(std::get<NeedsMsg>(p1[0].msg) == NeedsMsg{f.ids({"G"})});
  CHECK(std::get<NeedsMsg>(q1[0].msg) == NeedsMsg{f.ids({"E", "M"})});

  // Requests cross; each side answers from its snapshot.
  std::vector<Outgoing> p2 = e.p->on_wire("q", q1[0].msg);
  std::vector<Outgoing> q2 = e.q->on_wire("p", p1[0].msg);
  REQUIRE(p2.size() == 1);
  REQUIRE(q2.size() == 1);
  CHECK(msg_ids(std::get<MsgsMsg>(p2[0].msg)) == f.ids({"E", "M"}));
  CHECK(msg_ids(std::get<MsgsMsg>(q2[0].msg)) == f.ids({"G"}));

  // The replies expose the next layer of unknown predecessors.
  std::vector<Outgoing> p3 = e.p->on_wire("q", q2[0].msg);
  std::vector<Outgoing> q3 = e.q->on_wire("p", p2[0].msg);
  REQUIRE(p3.size() == 1);
  REQUIRE(q3.size() == 1);
  CHECK(std::get<NeedsMsg>(p3[0].msg) == NeedsMsg{f.ids({"F"})});
  CHECK(std::get<NeedsMsg>(q3[0].msg) == NeedsMsg{f.ids({"D", "L"})});

  std::vector<Outgoing> p4 = e.p->on_wire("q", q3[0].msg);  // answers D, L
  std::vector<Outgoing> q4 = e.q->on_wire("p", p3[0].msg);  // answers F
  REQUIRE(p4.size() == 1);
  REQUIRE(q4.size() == 1);
  CHECK(msg_ids(std::get<MsgsMsg>(p4[0].msg)) == f.ids({"D", "L"}));
  CHECK(msg_ids(std::get<MsgsMsg>(q4[0].msg)) == f.ids({"F"}));

  // p resolves everything with F and completes after two request rounds.
  std::vector<Outgoing> p5 = e.p->on_wire("q", q4[0].msg);
  CHECK(p5.empty());
  CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  CHECK(e.p->connection("q")->needs_flights == 2);

  // q still lacks C, so it takes a third round.
  std::vector<Outgoing> q5 = e.q->on_wire("p", p4[0].msg);
  REQUIRE(q5.size() == 1);
  CHECK(std::get<NeedsMsg>(q5[0].msg) == NeedsMsg{f.ids({"C"})});
  std::vector<Outgoing> p6 = e.p->on_wire("q", q5[0].msg);  // p answers post-completion
  REQUIRE(p6.size() == 1);
  CHECK(msg_ids(std::get<MsgsMsg>(p6[0].msg)) == f.ids({"C"}));
  std::vector<Outgoing> q6 = e.q->on_wire("p", p6[0].msg);
  CHECK(q6.empty());
  CHECK(e.q->connection("p")->phase == ConnPhase::Complete);
  CHECK(e.q->connection("p")->needs_flights == 3);

  // Both converge on the eleven-message union with heads E, M, G.
  std::set<Hash> all = f.ids({"A", "B", "C", "D", "E", "F", "G", "J", "K", "L", "M"});
  CHECK(store_ids(*e.p) == all);
  CHECK(store_ids(*e.q) == all);
  CHECK(e.p->store().heads() == f.ids({"E", "M", "G"}));
  CHECK(e.q->store().heads() == f.ids({"E", "M", "G"}));

  // Deliveries respect causal order on each side.
  REQUIRE(e.delivered_p.size() == 2);
  CHECK(e.delivered_p[0].first == f.id("F"));
  CHECK(e.delivered_p[1].first == f.id("G"));
  REQUIRE(e.delivered_q.size() == 5);
  CHECK(index_of(e.delivered_q, f.id("C")) < index_of(e.delivered_q, f.id("D")));
  CHECK(index_of(e.delivered_q, f.id("D")) < index_of(e.delivered_q, f.id("E")));
  CHECK(index_of(e.delivered_q, f.id("L")) < index_of(e.delivered_q, f.id("M")));
}

TEST_CASE("filter reconciliation sends bloom negatives and their successors") {
  BroadcastConfig cfg;
  cfg.protocol = ProtocolVersion::Bloom;
  EnginePair e(cfg);
  DagFixture& f = e.fix;
  f.add("A", {});
  f.add("B", {"A"});
  f.add("C", {"B"});
  f.add("D", {"C"});
  f.add("E", {"D"});
  f.add("J", {"B"});
  f.add("K", {"J"});
  f.add("L", {"K"});
  f.add("M", {"L"});
  e.p->store().insert_batch(f.msgs({"A", "B", "C", "D", "E", "J", "K", "L", "M"}));
  e.p->peer_heads().store("q", f.ids({"B"}));

  // p opens: filter covers everything after the previously exchanged head B.
  std::vector<Outgoing> po = e.p->start_reconciliation("q");
  REQUIRE(po.size() == 1);
  const HeadsV2Msg& ph = std::get<HeadsV2Msg>(po[0].msg);
  CHECK(ph.heads == f.ids({"E", "M"}));
  CHECK(ph.old_heads == f.ids({"B"}));
  CHECK(ph.filter.m_bits == 72);  // seven entries at ten bits, byte aligned
  for (const char* n : {"C", "D", "E", "J", "K", "L", "M"})
    CHECK(bloom_member(ph.filter, f.id(n)));

  // Choose an F whose id the filter reports as unseen, so the one-round path
  // is deterministic rather than depending on false-positive luck.
  int salt = 0;
  MessagePtr mf;
  do {
    mf = make_message(text("F-" + std::to_string(salt++)), {f.id("B")}, f.key.sec);
  } while (bloom_member(ph.filter, mf->id()) && salt < 10000);
  REQUIRE(!bloom_member(ph.filter, mf->id()));
  f.by_name["F"] = mf;
  f.add("G", {"F"});
  e.q->store().insert_batch(f.msgs({"A", "B", "J", "K", "F", "G"}));
  e.q->peer_heads().store("p", f.ids({"B"}));

  std::vector<Outgoing> qo = e.q->start_reconciliation("p");
  REQUIRE(qo.size() == 1);
  const HeadsV2Msg& qh = std::get<HeadsV2Msg>(qo[0].msg);
  CHECK(qh.heads == f.ids({"G", "K"}));

  // q reacts to p's opener: F is not in p's filter and G succeeds F, so both
  // go out immediately; p's heads E and M remain unresolved.
  std::vector<Outgoing> q1 = e.q->on_wire("p", po[0].msg);
  REQUIRE(q1.size() == 2);
  const MsgsMsg& qreply = std::get<MsgsMsg>(q1[0].msg);
  REQUIRE(qreply.msgs.size() == 2);
  CHECK(qreply.msgs[0]->id() == f.id("F"));
  CHECK(qreply.msgs[1]->id() == f.id("G"));
  CHECK(std::get<NeedsMsg>(q1[1].msg) == NeedsMsg{f.ids({"E", "M"})});

  // p reacts to q's opener symmetrically: its negatives cover the two
  // branches q lacks, and only head G stays unresolved.
  std::vector<Outgoing> p1 = e.p->on_wire("q", qo[0].msg);
  REQUIRE(p1.size() == 2);
  CHECK(msg_ids(std::get<MsgsMsg>(p1[0].msg)) == f.ids({"C", "D", "E", "L", "M"}));
  CHECK(std::get<NeedsMsg>(p1[1].msg) == NeedsMsg{f.ids({"G"})});

  // Deliver everything that is in flight; both sides complete, and the
  // crossing needs are answered by empty batches without reopening anything.
  CHECK(e.p->on_wire("q", q1[0].msg).empty());
  CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  std::vector<Outgoing> q2 = e.q->on_wire("p", p1[0].msg);
  CHECK(q2.empty());
  CHECK(e.q->connection("p")->phase == ConnPhase::Complete);

  std::vector<Outgoing> p2 = e.p->on_wire("q", q1[1].msg);  // needs E, M
  REQUIRE(p2.size() == 1);
  CHECK(std::get<MsgsMsg>(p2[0].msg).msgs.empty());
  std::vector<Outgoing> q3 = e.q->on_wire("p", p1[1].msg);  // needs G
  REQUIRE(q3.size() == 1);
  CHECK(std::get<MsgsMsg>(q3[0].msg).msgs.empty());
  CHECK(e.p->on_wire("q", q3[0].msg).empty());
  CHECK(e.q->on_wire("p", p2[0].msg).empty());

  // Converged union, and both sides recorded the merged heads for next time.
  std::set<Hash> all = f.ids({"A", "B", "C", "D", "E", "F", "G", "J", "K", "L", "M"});
  CHECK(store_ids(*e.p) == all);
  CHECK(store_ids(*e.q) == all);
  CHECK(e.p->peer_heads().load("q") == f.ids({"E", "M", "G"}));
  CHECK(e.q->peer_heads().load("p") == f.ids({"E", "M", "G"}));
}

TEST_CASE("filter reconciliation with no prior contact still converges") {
  BroadcastConfig cfg;
  cfg.protocol = ProtocolVersion::Bloom;
  EnginePair e(cfg);
  e.fix.add("A", {});
  e.fix.add("B", {"A"});
  e.p->store().insert_batch(e.fix.msgs({"A", "B"}));

  std::vector<Outgoing> po = e.p->start_reconciliation("q");
  CHECK(std::get<HeadsV2Msg>(po[0].msg).old_heads.empty());

  e.pump();
  CHECK(store_ids(*e.q) == e.fix.ids({"A", "B"}));
  CHECK(e.q->connection("p")->phase == ConnPhase::Complete);
}

TEST_CASE("hostile filters cannot block convergence") {
  BroadcastConfig cfg;
  cfg.protocol = ProtocolVersion::Bloom;
  EnginePair e(cfg);
  e.fix.add("A", {});
  e.fix.add("B", {"A"});
  e.fix.add("C", {"B"});
  e.p->store().insert_batch(e.fix.msgs({"A", "B", "C"}));
  e.p->start_reconciliation("q");

  SUBCASE("an all-ones filter suppresses the push, heads requests recover") {
    BloomFilter ones;
    ones.k = 1;
    ones.m_bits = 8;
    ones.bits = {0xFF};
    // Claimed old heads equal to current heads: nothing looks new.
    std::vector<Outgoing> out =
        e.p->on_wire("q", HeadsV2Msg{{sha256(std::string("ghost"))}, {}, ones});
    REQUIRE(out.size() == 1);
    CHECK(std::holds_alternative<NeedsMsg>(out[0].msg));
  }

  SUBCASE("an all-zero filter pulls the full history in one batch") {
    BloomFilter zeros;
    zeros.k = 1;
    zeros.m_bits = 8;
    zeros.bits = {0x00};
    std::vector<Outgoing> out = e.p->on_wire("q", HeadsV2Msg{e.fix.ids({"C"}), {}, zeros});
    REQUIRE(out.size() == 1);
    CHECK(msg_ids(std::get<MsgsMsg>(out[0].msg)) == e.fix.ids({"A", "B", "C"}));
    CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  }
}

TEST_CASE("unsolicited requests for unknown hashes get an empty reply") {
  EnginePair e;
  e.p->start_reconciliation("q");
  std::vector<Outgoing> out =
      e.p->on_wire("q", NeedsMsg{{sha256(std::string("nothing"))}});
  REQUIRE(out.size() == 1);
  CHECK(std::get<MsgsMsg>(out[0].msg).msgs.empty());
  CHECK(e.p->store().size() == 0);
}

TEST_CASE("packets for unknown or aborted connections are ignored") {
  EnginePair e;
  CHECK(e.p->on_wire("q", HeadsMsg{}).empty());  // never started

  e.p->start_reconciliation("q");
  e.p->abort_connection("q");
  CHECK(e.p->on_wire("q", NeedsMsg{{sha256(std::string("x"))}}).empty());
  CHECK(e.p->connection("q")->phase == ConnPhase::Aborted);
}

TEST_CASE("messages with invalid signatures are rejected and recorded") {
  EnginePair e;
  e.fix.add("A", {});
  e.p->start_reconciliation("q");
  e.q->store().insert_batch(e.fix.msgs({"A"}));
  e.q->start_reconciliation("p");

  // Corrupt the signature of A in flight.
  MessagePtr a = e.fix.get("A");
  Signature bad_sig = a->sig();
  bad_sig[0] ^= 0x01;
  auto forged = std::make_shared<Message>(a->value(), a->preds(), bad_sig);

  std::vector<Outgoing> out = e.p->on_wire("q", MsgsMsg{{forged}});
  CHECK(e.p->store().size() == 0);
  CHECK(e.delivered_p.empty());
  REQUIRE(!e.p->violations().empty());
  CHECK(e.p->violations()[0].reason.find("signature") != std::string::npos);

  // The genuine message still goes through afterwards.
  e.p->on_wire("q", MsgsMsg{{a}});
  CHECK(e.p->store().size() == 1);
  REQUIRE(e.delivered_p.size() == 1);
  CHECK(e.delivered_p[0].second == "w");
}

TEST_CASE("repeated empty answers while hashes are missing abort the connection") {
  EnginePair e;
  e.p->start_reconciliation("q");
  Hash ghost = sha256(std::string("ghost"));

  std::vector<Outgoing> out = e.p->on_wire("q", HeadsMsg{{ghost}});
  REQUIRE(out.size() == 1);
  CHECK(std::holds_alternative<NeedsMsg>(out[0].msg));

  // Two stalls are tolerated and re-request; the third aborts.
  for (int round = 0; round < 2; round++) {
    out = e.p->on_wire("q", MsgsMsg{});
    REQUIRE(out.size() == 1);
    CHECK(std::get<NeedsMsg>(out[0].msg) == NeedsMsg{{ghost}});
  }
  out = e.p->on_wire("q", MsgsMsg{});
  CHECK(out.empty());
  CHECK(e.p->connection("q")->phase == ConnPhase::Aborted);
  CHECK(e.p->store().size() == 0);
  REQUIRE(!e.p->violations().empty());
  CHECK(e.p->violations().back().reason.find("progress") != std::string::npos);
}

TEST_CASE("an oversized missing set aborts the connection") {
  BroadcastConfig cfg;
  cfg.max_missing = 2;
  EnginePair e(cfg);
  e.p->start_reconciliation("q");
  std::vector<Outgoing> out = e.p->on_wire(
      "q", HeadsMsg{{sha256(std::string("g1")), sha256(std::string("g2")),
                     sha256(std::string("g3"))}});
  CHECK(out.empty());
  CHECK(e.p->connection("q")->phase == ConnPhase::Aborted);
  CHECK(!e.p->violations().empty());
}

TEST_CASE("aborting and restarting yields a clean reconciliation") {
  EnginePair e;
  e.fix.add("A", {});
  e.p->store().insert_batch(e.fix.msgs({"A"}));

  e.p->start_reconciliation("q");
  e.p->on_wire("q", HeadsMsg{{sha256(std::string("ghost"))}});
  e.p->abort_connection("q");
  CHECK(e.p->connection("q")->missing.empty());

  int packets = e.pump();
  CHECK(packets > 0);
  CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  CHECK(e.q->connection("p")->phase == ConnPhase::Complete);
  CHECK(store_ids(*e.q) == e.fix.ids({"A"}));
}

TEST_CASE("recorded peer heads only advance when a sync completes") {
  BroadcastConfig cfg;
  cfg.protocol = ProtocolVersion::Bloom;
  EnginePair e(cfg);
  e.fix.add("A", {});
  e.p->store().insert_batch(e.fix.msgs({"A"}));

  e.pump();
  std::set<Hash> after_first = e.p->peer_heads().load("q");
  CHECK(after_first == e.fix.ids({"A"}));

  // A second sync that aborts mid-flight leaves the record untouched.
  e.p->start_reconciliation("q");
  e.p->on_wire("q", HeadsV2Msg{{sha256(std::string("ghost"))}, {}, make_bloom({})});
  e.p->abort_connection("q");
  CHECK(e.p->peer_heads().load("q") == after_first);

  // And a third, clean sync still converges.
  e.fix.add("B", {"A"});
  e.q->store().insert_batch(e.fix.msgs({"B"}));
  e.pump();
  CHECK(store_ids(*e.p) == e.fix.ids({"A", "B"}));
  CHECK(e.p->peer_heads().load("q") == e.fix.ids({"B"}));
}

TEST_CASE("fresh broadcasts are pushed into active reconciliations only") {
  EnginePair e;
  e.p->start_reconciliation("q");

  std::vector<Outgoing> out;
  MessagePtr m = e.p->broadcast(text("fresh"), &out);
  REQUIRE(m != nullptr);
  REQUIRE(out.size() == 1);
  CHECK(out[0].peer == "q");
  CHECK(msg_ids(std::get<MsgsMsg>(out[0].msg)) == std::set<Hash>{m->id()});

  // Self-delivery happened immediately, attributed to the author.
  REQUIRE(e.delivered_p.size() == 1);
  CHECK(e.delivered_p[0].first == m->id());
  CHECK(e.delivered_p[0].second == "p");

  // Complete the connection; later broadcasts stay local.
  e.p->on_wire("q", HeadsMsg{});
  CHECK(e.p->connection("q")->phase == ConnPhase::Complete);
  out.clear();
  e.p->broadcast(text("later"), &out);
  CHECK(out.empty());
}

TEST_CASE("messages delivered by one sync are relayed to other active syncs") {
  EnginePair e;
  e.fix.add("X", {});
  e.q->store().insert_batch(e.fix.msgs({"X"}));

  e.p->start_reconciliation("q");
  e.p->start_reconciliation("r");  // second sync stays active throughout

  e.p->on_wire("q", HeadsMsg{{e.fix.id("X")}});
  std::vector<Outgoing> out = e.p->on_wire("q", MsgsMsg{{e.fix.get("X")}});

  bool relayed = false;
  for (const Outgoing& o : out) {
    if (o.peer == "r") {
      CHECK(msg_ids(std::get<MsgsMsg>(o.msg)) == e.fix.ids({"X"}));
      relayed = true;
    }
  }
  CHECK(relayed);
}

TEST_CASE("a snapshot taken at connect time hides later broadcasts") {
  EnginePair e;
  e.p->start_reconciliation("q");
  MessagePtr later = e.p->broadcast(text("after-snapshot"));

  std::vector<Outgoing> out = e.p->on_wire("q", NeedsMsg{{later->id()}});
  REQUIRE(out.size() == 1);
  CHECK(std::get<MsgsMsg>(out[0].msg).msgs.empty());
}

TEST_CASE("malformed bytes are recorded and ignored") {
  EnginePair e;
  e.p->start_reconciliation("q");
  Bytes junk = {0xFF, 0x00, 0x13, 0x37};
  CHECK(e.p->on_wire_bytes("q", junk).empty());
  REQUIRE(!e.p->violations().empty());
  CHECK(e.p->violations()[0].reason.find("malformed") != std::string::npos);
  CHECK(e.p->connection("q")->phase == ConnPhase::Active);
}

TEST_CASE("wrong-version openers are flagged") {
  EnginePair e;  // v1 engine
  e.p->start_reconciliation("q");
  std::vector<Outgoing> out =
      e.p->on_wire("q", HeadsV2Msg{{}, {}, make_bloom({})});
  CHECK(out.empty());
  REQUIRE(!e.p->violations().empty());
  CHECK(e.p->violations()[0].reason.find("v2") != std::string::npos);
}

TEST_CASE("peer heads records survive a save/load round trip") {
  PeerHeadsStore s;
  s.store("alpha", {sha256(std::string("1")), sha256(std::string("2"))});
  s.store("beta", {});
  std::string path = "peer_heads_roundtrip.bin";
  REQUIRE(s.save_file(path));
  auto loaded = PeerHeadsStore::load_file(path);
  REQUIRE(loaded.has_value());
  CHECK(loaded->entries() == s.entries());
  std::remove(path.c_str());

  CHECK_FALSE(PeerHeadsStore::load_file("does-not-exist.bin").has_value());
}

TEST_CASE("both protocols converge identically on the same split") {
  for (ProtocolVersion proto : {ProtocolVersion::Basic, ProtocolVersion::Bloom}) {
    BroadcastConfig cfg;
    cfg.protocol = proto;
    EnginePair e(cfg);
    load_example_split(e);
    e.pump();
    std::set<Hash> all = e.fix.ids({"A", "B", "C", "D", "E", "F", "G", "J", "K", "L", "M"});
    CHECK(store_ids(*e.p) == all);
    CHECK(store_ids(*e.q) == all);
    CHECK(e.p->store().heads() == e.fix.ids({"E", "M", "G"}));
    CHECK(e.p->violations().empty());
    CHECK(e.q->violations().empty());
  }
}
