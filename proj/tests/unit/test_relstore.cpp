#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dagsync/relstore.hpp"
#include "doctest.h"

using namespace dagsync;
using namespace dagsync::rel;

namespace {

const char* kSchemaText = R"(
# Small commerce schema used across these tests.
relation accounts owner:string balance:integer
relation items sku:string label:string
relation orders sku:string qty:integer
relation receipts rid:string note:string
relation badges name:string color:string
invariant nonnegative accounts balance
invariant rowcheck orders qty > 0
invariant foreignkey orders sku items sku
invariant unique receipts rid hash_derived
invariant unique badges name user_chosen
invariant view total_balance sum accounts balance
invariant view order_count count orders
)";

Schema test_schema() { return parse_schema(kSchemaText); }

Value S(const std::string& s) { return s; }
Value I(int64_t v) { return v; }

Bytes text(const std::string& s) { return Bytes(s.begin(), s.end()); }

// Engine wired to a replicated store, for the local-commit path.
struct Replica {
  KeyPair key = keypair_from_seed(sha256(std::string("rel-replica")));
  std::shared_ptr<KeyDirectory> dir = std::make_shared<KeyDirectory>();
  std::unique_ptr<ReplicaEngine> engine;
  std::unique_ptr<ReplicatedStore> db;

  Replica() {
    dir->add("p", key.pub);
    engine = std::make_unique<ReplicaEngine>("p", key, dir, BroadcastConfig{});
    db = std::make_unique<ReplicatedStore>(test_schema(), &engine->store());
    engine->set_delivery_handler(
        [this](const MessagePtr& m, const ReplicaId&) { db->on_deliver(m); });
  }
};

// Standalone dag + store for the remote-delivery path: messages are inserted
// into the dag first, exactly as the engine does before delivering.
struct DeliveryRig {
  KeyPair key = keypair_from_seed(sha256(std::string("rel-remote")));
  MessageStore dag;
  ReplicatedStore db{test_schema(), &dag};

  MessagePtr deliver(const Bytes& value, const std::set<Hash>& preds) {
    MessagePtr m = make_message(value, preds, key.sec);
    dag.insert_batch({m});
    db.on_deliver(m);
    return m;
  }
  MessagePtr deliver(const UpdateSet& u, const std::set<Hash>& preds) {
    return deliver(encode_update_set(u), preds);
  }
};

}  // namespace

TEST_CASE("update set encoding matches the frozen reference bytes") {
  UpdateSet u;
  u.ins.push_back({"accounts", {I(5), S("al")}});
  CHECK(to_hex(encode_update_set(u)) ==
        "0101000000080000006163636f756e7473020000000105000000000000000202000000"
        "616c00000000");
}

TEST_CASE("encoding sorts and deduplicates, decoding inverts it") {
  UpdateSet messy;
  messy.ins.push_back({"b", {I(2)}});
  messy.ins.push_back({"a", {I(1)}});
  messy.ins.push_back({"b", {I(2)}});
  messy.del.push_back({sha256(std::string("z")), "r", {I(9)}});
  messy.del.push_back({sha256(std::string("a")), "r", {I(9)}});

  Bytes enc = encode_update_set(messy);
  auto back = decode_update_set(enc);
  REQUIRE(back.has_value());
  REQUIRE(back->ins.size() == 2);
  CHECK(back->ins[0].first == "a");
  CHECK(back->ins[1].first == "b");
  REQUIRE(back->del.size() == 2);
  CHECK(back->del[0] < back->del[1]);
  CHECK(encode_update_set(*back) == enc);
}

TEST_CASE("update set decoding is strict") {
  UpdateSet u;
  u.ins.push_back({"a", {I(1)}});
  u.ins.push_back({"b", {S("x")}});
  Bytes good = encode_update_set(u);
  CHECK(decode_update_set(good).has_value());

  SUBCASE("bad version") {
    Bytes bad = good;
    bad[0] = 2;
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("truncation") {
    Bytes bad(good.begin(), good.end() - 1);
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("trailing byte") {
    Bytes bad = good;
    bad.push_back(0);
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("out-of-order inserts") {
    Bytes bad;
    put_u8(bad, 1);
    put_u32(bad, 2);
    for (const char* rel : {"b", "a"}) {  // descending
      put_u32(bad, 1);
      put_u8(bad, static_cast<uint8_t>(rel[0]));
      put_u32(bad, 0);  // empty tuple
    }
    put_u32(bad, 0);
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("duplicate inserts") {
    Bytes bad;
    put_u8(bad, 1);
    put_u32(bad, 2);
    for (int i = 0; i < 2; i++) {
      put_u32(bad, 1);
      put_u8(bad, 'a');
      put_u32(bad, 0);
    }
    put_u32(bad, 0);
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("unknown value tag") {
    Bytes bad;
    put_u8(bad, 1);
    put_u32(bad, 1);
    put_u32(bad, 1);
    put_u8(bad, 'a');
    put_u32(bad, 1);  // one value
    put_u8(bad, 9);   // no such tag
    put_u32(bad, 0);
    CHECK_FALSE(decode_update_set(bad).has_value());
  }
  SUBCASE("random garbage never crashes") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 500; i++) {
      Bytes junk(rng() % 48, 0);
      for (uint8_t& b : junk) b = static_cast<uint8_t>(rng());
      decode_update_set(junk);
    }
    CHECK(true);
  }
}

TEST_CASE("randomized update sets survive the codec round trip") {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 200; iter++) {
    UpdateSet u;
    int n_ins = static_cast<int>(rng() % 4);
    for (int i = 0; i < n_ins; i++) {
      Tuple t;
      int arity = static_cast<int>(rng() % 3);
      for (int a = 0; a < arity; a++) {
        switch (rng() % 3) {
          case 0: t.push_back(I(static_cast<int64_t>(rng()) % 1000 - 500)); break;
          case 1: t.push_back(S("s" + std::to_string(rng() % 10))); break;
          default: t.push_back(Bytes{static_cast<uint8_t>(rng()), static_cast<uint8_t>(rng())});
        }
      }
      u.ins.push_back({"rel" + std::to_string(rng() % 3), std::move(t)});
    }
    int n_del = static_cast<int>(rng() % 3);
    for (int i = 0; i < n_del; i++) {
      u.del.push_back({sha256(std::to_string(rng() % 5)), "rel", {I(static_cast<int64_t>(rng() % 9))}});
    }
    Bytes enc = encode_update_set(u);
    auto back = decode_update_set(enc);
    REQUIRE(back.has_value());
    CHECK(encode_update_set(*back) == enc);
  }
}

TEST_CASE("schema parsing accepts the reference schema") {
  Schema s = test_schema();
  CHECK(s.relations.size() == 5);
  CHECK(s.invariants.size() == 7);
  REQUIRE(s.relations.count("accounts"));
  const RelationDef& acc = s.relations.at("accounts");
  REQUIRE(acc.cols.size() == 2);
  CHECK(acc.cols[0].name == "owner");
  CHECK(acc.cols[0].type == ColumnType::String);
  CHECK(acc.col_index("balance") == 1);
  CHECK(acc.col_index("missing") == -1);
}

TEST_CASE("schema parsing reports errors with line numbers") {
  auto expect_error = [](const std::string& text, const std::string& line_tag,
                         const std::string& needle) {
    try {
      parse_schema(text);
      FAIL_CHECK("expected ConfigError for: " << needle);
    } catch (const ConfigError& e) {
      std::string what = e.what();
      CHECK(what.find(line_tag) != std::string::npos);
      CHECK(what.find(needle) != std::string::npos);
    }
  };

  expect_error("relation a x:integer\nrelation a y:integer\n", "line 2", "duplicate relation");
  expect_error("relation a x:floaty\n", "line 1", "column type");
  expect_error("relation a x:integer\ninvariant rowcheck a x %% 0\n", "line 2", "operator");
  expect_error("relation a x:string\ninvariant rowcheck a x > 0\n", "line 2", "integer");
  expect_error("relation a x:integer\ninvariant unique a x hash_derived\n", "line 2", "string");
  expect_error("relation a x:integer\ninvariant wobble a x\n", "line 2", "invariant kind");
  expect_error("widget a\n", "line 1", "declaration");
  expect_error("relation a x:integer x:string\n", "line 1", "duplicate column");
  expect_error("invariant nonnegative ghost x\n", "line 1", "unknown relation");
  expect_error(
      "relation a x:integer\ninvariant view v sum a x\ninvariant view v count a\n",
      "line 3", "duplicate view");
}

TEST_CASE("static safety depends only on the update set") {
  Schema schema = test_schema();
  Hash h = sha256(std::string("some-insert"));
  auto ins = [](const std::string& rel, Tuple t) {
    UpdateSet u;
    u.ins.push_back({rel, std::move(t)});
    return u;
  };
  auto del = [&](const std::string& rel, Tuple t) {
    UpdateSet u;
    u.del.push_back({h, rel, std::move(t)});
    return u;
  };

  SUBCASE("row checks gate inserts") {
    CHECK_FALSE(is_safe(ins("orders", {S("sku-1"), I(0)}), schema));
    CHECK(is_safe(ins("orders", {S("sku-1"), I(1)}), schema));
  }
  SUBCASE("non-negative gates inserts and bare deletes") {
    CHECK_FALSE(is_safe(ins("accounts", {S("al"), I(-1)}), schema));
    CHECK(is_safe(ins("accounts", {S("al"), I(0)}), schema));
    CHECK_FALSE(is_safe(del("accounts", {S("al"), I(10)}), schema));
  }
  SUBCASE("delete plus re-insert passes only when the value cannot drop below zero") {
    UpdateSet deposit = del("accounts", {S("al"), I(10)});
    deposit.ins.push_back({"accounts", {S("al"), I(15)}});
    CHECK(is_safe(deposit, schema));

    UpdateSet withdrawal = del("accounts", {S("al"), I(10)});
    withdrawal.ins.push_back({"accounts", {S("al"), I(5)}});
    CHECK_FALSE(is_safe(withdrawal, schema));

    UpdateSet renamed = del("accounts", {S("al"), I(10)});
    renamed.ins.push_back({"accounts", {S("bob"), I(15)}});
    CHECK_FALSE(is_safe(renamed, schema));
  }
  SUBCASE("foreign keys forbid target deletes but not dangling source inserts") {
    CHECK_FALSE(is_safe(del("items", {S("sku-1"), S("Widget")}), schema));
    CHECK(is_safe(ins("orders", {S("no-such-sku"), I(1)}), schema));
    CHECK(is_safe(del("orders", {S("sku-1"), I(1)}), schema));
  }
  SUBCASE("uniqueness blocks user-chosen inserts, allows hash-derived ones") {
    CHECK_FALSE(is_safe(ins("badges", {S("gold"), S("yellow")}), schema));
    CHECK(is_safe(del("badges", {S("gold"), S("yellow")}), schema));
    CHECK(is_safe(ins("receipts", {S("anything"), S("note")}), schema));
  }
  SUBCASE("the empty update is safe") { CHECK(is_safe(UpdateSet{}, schema)); }
  SUBCASE("updates that do not fit the schema throw") {
    CHECK_THROWS_AS(is_safe(ins("ghosts", {I(1)}), schema), UnknownRelation);
    CHECK_THROWS_AS(is_safe(ins("accounts", {S("al")}), schema), UnknownRelation);
    CHECK_THROWS_AS(is_safe(ins("accounts", {I(1), I(2)}), schema), UnknownRelation);
  }
}

TEST_CASE("local commits apply through self-delivery") {
  Replica r;
  Transaction t;
  t.ins.push_back({"accounts", {S("alice"), I(100)}});
  MessagePtr m = r.db->commit_transaction(*r.engine, t);
  REQUIRE(m != nullptr);

  auto rows = r.db->query("accounts");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].h == m->id());
  CHECK(rows[0].tuple == Tuple{S("alice"), I(100)});
  CHECK(r.db->view_values().at("total_balance") == 100);
  CHECK(r.db->counters().applied == 1);
  CHECK(r.db->decisions().at(m->id()) == ReplicatedStore::Decision::Applied);
  CHECK(r.db->invariant_violations().empty());
}

TEST_CASE("unsafe or invalid local transactions are rejected before broadcast") {
  Replica r;

  SUBCASE("negative insert") {
    Transaction t;
    t.ins.push_back({"accounts", {S("mallory"), I(-5)}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, t), UnsafeUpdate);
  }
  SUBCASE("user-chosen unique insert") {
    Transaction t;
    t.ins.push_back({"badges", {S("gold"), S("yellow")}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, t), UnsafeUpdate);
  }
  SUBCASE("delete of a tuple that was never committed") {
    Transaction t;
    t.del.push_back({sha256(std::string("nothing")), "accounts", {S("x"), I(1)}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, t), UnsafeUpdate);
  }
  SUBCASE("order referencing a missing item") {
    Transaction t;
    t.ins.push_back({"orders", {S("no-such-sku"), I(1)}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, t), UnsafeUpdate);
  }
  SUBCASE("unknown relation") {
    Transaction t;
    t.ins.push_back({"ghosts", {I(1)}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, t), UnknownRelation);
  }

  // Nothing reached the broadcast layer or the state in any subcase.
  CHECK(r.engine->store().size() == 0);
  CHECK(r.db->counters().applied == 0);
  CHECK(r.db->state().empty());
}

TEST_CASE("an order may reference an item inserted by the same transaction") {
  Replica r;
  Transaction t;
  t.ins.push_back({"items", {S("sku-1"), S("Widget")}});
  t.ins.push_back({"orders", {S("sku-1"), I(2)}});
  r.db->commit_transaction(*r.engine, t);
  CHECK(r.db->query("orders").size() == 1);
  CHECK(r.db->view_values().at("order_count") == 1);
  CHECK(r.db->invariant_violations().empty());
}

TEST_CASE("a deposit deletes the old balance and re-inserts the new one") {
  Replica r;
  Transaction open;
  open.ins.push_back({"accounts", {S("alice"), I(100)}});
  r.db->commit_transaction(*r.engine, open);

  auto rows = r.db->query("accounts");
  REQUIRE(rows.size() == 1);
  Transaction deposit;
  deposit.del.push_back(rows[0]);
  deposit.ins.push_back({"accounts", {S("alice"), I(110)}});
  MessagePtr m = r.db->commit_transaction(*r.engine, deposit);

  rows = r.db->query("accounts");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].tuple == Tuple{S("alice"), I(110)});
  CHECK(rows[0].h == m->id());
  CHECK(r.db->view_values().at("total_balance") == 110);
  CHECK(r.db->invariant_violations().empty());

  SUBCASE("a withdrawal below zero is still refused") {
    Transaction bad;
    bad.del.push_back(rows[0]);
    bad.ins.push_back({"accounts", {S("alice"), I(-1)}});
    CHECK_THROWS_AS(r.db->commit_transaction(*r.engine, bad), UnsafeUpdate);
  }
}

TEST_CASE("remote deliveries are classified and counted") {
  DeliveryRig rig;

  MessagePtr ok = rig.deliver(
      [] {
        UpdateSet u;
        u.ins.push_back({"accounts", {S("bob"), I(50)}});
        return u;
      }(),
      {});
  CHECK(rig.db.decisions().at(ok->id()) == ReplicatedStore::Decision::Applied);

  MessagePtr junk = rig.deliver(text("!not-an-update!"), {ok->id()});
  CHECK(rig.db.decisions().at(junk->id()) == ReplicatedStore::Decision::IgnoredMalformed);

  MessagePtr bad_shape = rig.deliver(
      [] {
        UpdateSet u;
        u.ins.push_back({"ghosts", {I(1)}});
        return u;
      }(),
      {junk->id()});
  CHECK(rig.db.decisions().at(bad_shape->id()) == ReplicatedStore::Decision::IgnoredMalformed);

  MessagePtr unsafe = rig.deliver(
      [] {
        UpdateSet u;
        u.ins.push_back({"accounts", {S("intruder"), I(-7)}});
        return u;
      }(),
      {bad_shape->id()});
  CHECK(rig.db.decisions().at(unsafe->id()) == ReplicatedStore::Decision::IgnoredUnsafe);

  // A delete whose target insert is not a causal ancestor is ignored; the
  // same delete issued after (causally) the insert applies.
  auto row = rig.db.query("accounts").at(0);
  UpdateSet spend;
  spend.del.push_back(row);
  spend.ins.push_back({"accounts", {S("bob"), I(60)}});
  MessagePtr concurrent = rig.deliver(spend, {});  // does not descend from ok
  CHECK(rig.db.decisions().at(concurrent->id()) ==
        ReplicatedStore::Decision::IgnoredBadPred);
  CHECK(rig.db.query("accounts").size() == 1);  // untouched

  MessagePtr causal = rig.deliver(spend, {unsafe->id()});  // descends from ok
  CHECK(rig.db.decisions().at(causal->id()) == ReplicatedStore::Decision::Applied);
  auto rows = rig.db.query("accounts");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].tuple == Tuple{S("bob"), I(60)});

  CHECK(rig.db.counters().applied == 2);
  CHECK(rig.db.counters().ignored_malformed == 2);
  CHECK(rig.db.counters().ignored_unsafe == 1);
  CHECK(rig.db.counters().ignored_bad_pred == 1);
  CHECK(rig.db.invariant_violations().empty());
}

TEST_CASE("hash-derived unique attributes are rewritten at delivery") {
  DeliveryRig rig;
  UpdateSet u;
  u.ins.push_back({"receipts", {S("placeholder"), S("note-1")}});
  MessagePtr m1 = rig.deliver(u, {});

  UpdateSet v;
  v.ins.push_back({"receipts", {S("placeholder"), S("note-2")}});
  MessagePtr m2 = rig.deliver(v, {});  // concurrent, same placeholder

  auto rows = rig.db.query("receipts");
  REQUIRE(rows.size() == 2);
  for (const TupleTriple& t : rows) {
    CHECK(std::get<std::string>(t.tuple[0]) == to_hex(t.h));
  }
  CHECK(rows[0].tuple[0] != rows[1].tuple[0]);
  CHECK(rig.db.invariant_violations().empty());

  // The rewritten rid can then be deleted by a causal successor.
  TupleTriple victim = rows[0];
  UpdateSet d;
  d.del.push_back(victim);
  rig.deliver(d, {m1->id(), m2->id()});
  CHECK(rig.db.query("receipts").size() == 1);
}

TEST_CASE("the audit finds a dangling foreign key left by a safe insert") {
  DeliveryRig rig;
  UpdateSet u;
  u.ins.push_back({"orders", {S("ghost-sku"), I(1)}});
  REQUIRE(is_safe(u, rig.db.schema()));
  rig.deliver(u, {});

  std::vector<std::string> audit = rig.db.invariant_violations();
  REQUIRE(!audit.empty());
  CHECK(audit[0].find("foreignkey") != std::string::npos);
}

TEST_CASE("state fingerprints agree exactly when deliveries agree") {
  auto run = [](bool extra, bool reorder) {
    DeliveryRig rig;
    UpdateSet a;
    a.ins.push_back({"accounts", {S("x"), I(1)}});
    UpdateSet b;
    b.ins.push_back({"items", {S("sku"), S("thing")}});
    if (reorder) {
      rig.deliver(b, {});
      rig.deliver(a, {});
    } else {
      rig.deliver(a, {});
      rig.deliver(b, {});
    }
    if (extra) {
      UpdateSet c;
      c.ins.push_back({"accounts", {S("y"), I(2)}});
      rig.deliver(c, {});
    }
    return rig.db.state_fingerprint();
  };
  CHECK(run(false, false) == run(false, true));
  CHECK(run(false, false) != run(true, false));
}

TEST_CASE("queries are sorted and reject unknown relations") {
  DeliveryRig rig;
  for (int i = 0; i < 5; i++) {
    UpdateSet u;
    u.ins.push_back({"items", {S("sku-" + std::to_string(9 - i)), S("x")}});
    rig.deliver(u, {});
  }
  auto rows = rig.db.query("items");
  REQUIRE(rows.size() == 5);
  for (size_t i = 1; i < rows.size(); i++) CHECK(rows[i - 1] < rows[i]);
  CHECK_THROWS_AS(rig.db.query("nope"), UnknownRelation);
}
