#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dagsync/sync.hpp"

namespace dagsync::rel {

// Schema or scenario configuration problems (bad syntax, unknown names,
// type mismatches). Carries the offending line when parsed from text.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// An update names a relation or attribute the schema does not define, or a
// tuple whose shape does not match the relation.
struct UnknownRelation : std::runtime_error {
  explicit UnknownRelation(const std::string& what) : std::runtime_error(what) {}
};

// A locally committed transaction would violate an invariant under
// concurrency and must not be broadcast.
struct UnsafeUpdate : std::runtime_error {
  explicit UnsafeUpdate(const std::string& what) : std::runtime_error(what) {}
};

using Value = std::variant<int64_t, std::string, Bytes>;
using Tuple = std::vector<Value>;

// One element of replica state: tuple inserted into rel by the message
// whose hash is h.
struct TupleTriple {
  Hash h;
  std::string rel;
  Tuple tuple;
  auto operator<=>(const TupleTriple&) const = default;
};

// The inserts and deletes generated by one transaction, in canonical order
// (inserts ascending by (rel, tuple); deletes ascending by triple).
struct UpdateSet {
  std::vector<std::pair<std::string, Tuple>> ins;
  std::vector<TupleTriple> del;
  bool operator==(const UpdateSet&) const = default;
};

// Canonical binary form; sorts and deduplicates. Value tags: 1 integer
// (i64le), 2 string, 3 bytes (both u32le length prefixed).
Bytes encode_update_set(const UpdateSet& u);
// Strict inverse: rejects non-canonical order, duplicates, truncation,
// trailing bytes, or unknown value tags.
std::optional<UpdateSet> decode_update_set(const Bytes& data);

enum class ColumnType { Integer, String, Binary };

struct ColumnDef {
  std::string name;
  ColumnType type;
};

struct RelationDef {
  std::string name;
  std::vector<ColumnDef> cols;
  // Index of the named column, or -1.
  int col_index(const std::string& attr) const;
};

// Invariant kinds and their delivery-time safety rules:
//  - RowCheck: inserting a row that fails the predicate is unsafe.
//  - NonNegative: inserting a negative value is unsafe; deleting a row is
//    unsafe unless the same update re-inserts it (all other attributes
//    equal) with a value at least as large.
//  - ForeignKey: any delete from the target relation is unsafe.
//  - Unique: inserts with user-chosen values are unsafe; values derived
//    from the message hash are safe and rewritten at delivery.
//  - MaterializedView: always safe; the view is refreshed after applying.
struct RowCheck {
  std::string rel, attr, op;  // op: < <= > >= == !=
  int64_t bound = 0;
};
struct NonNegativeRule {
  std::string rel, attr;
};
struct ForeignKeyRule {
  std::string rel, attr, target_rel, target_attr;
};
struct UniqueRule {
  std::string rel, attr;
  bool hash_derived = false;
};
struct ViewRule {
  enum class Agg { Count, Sum };
  std::string name;
  Agg agg = Agg::Count;
  std::string rel, attr;  // attr empty for Count
};
using InvariantSpec =
    std::variant<RowCheck, NonNegativeRule, ForeignKeyRule, UniqueRule, ViewRule>;

struct Schema {
  std::map<std::string, RelationDef> relations;
  std::vector<InvariantSpec> invariants;
};

// One declaration per line:
//   relation <name> <col>:<integer|string|bytes> ...
//   invariant rowcheck <rel> <attr> <op> <bound>
//   invariant nonnegative <rel> <attr>
//   invariant foreignkey <rel> <attr> <target_rel> <target_attr>
//   invariant unique <rel> <attr> <hash_derived|user_chosen>
//   invariant view <name> <sum|count> <rel> [<attr>]
// '#' starts a comment. Throws ConfigError with the line number.
Schema parse_schema(const std::string& text);
Schema load_schema_file(const std::string& path);

// True if applying u can never violate the given invariants regardless of
// concurrent safe updates. Depends only on the update set and the schema,
// never on replica state. Throws UnknownRelation for updates that do not
// fit the schema.
bool is_safe(const UpdateSet& u, const Schema& schema);

// A local transaction: inserts of (rel, tuple) and deletes of existing
// triples.
struct Transaction {
  std::vector<std::pair<std::string, Tuple>> ins;
  std::vector<TupleTriple> del;
};

// Replicated relational state driven by causal broadcast delivery.
// Composition: the owner wires the engine's delivery handler to call
// on_deliver (possibly among other observers).
class ReplicatedStore {
 public:
  enum class Decision { Applied, IgnoredUnsafe, IgnoredBadPred, IgnoredMalformed };

  // dag is the message store used for causal-precedence checks; it must be
  // the store of the engine whose deliveries feed on_deliver.
  ReplicatedStore(Schema schema, const MessageStore* dag);

  const Schema& schema() const { return schema_; }

  // Validates the transaction (safety plus local referential checks),
  // broadcasts it through the engine, and returns the message. The engine's
  // delivery handler applies it to this state via on_deliver. Throws
  // UnsafeUpdate or UnknownRelation on invalid transactions.
  MessagePtr commit_transaction(ReplicaEngine& engine, const Transaction& t,
                                std::vector<Outgoing>* out = nullptr);

  // Delivery path: decodes the value, checks safety and causal precedence
  // of deletes, and either applies the update or ignores it (recording the
  // decision either way).
  void on_deliver(const MessagePtr& m);

  // Committed tuples of one relation, ascending. Throws UnknownRelation.
  std::vector<TupleTriple> query(const std::string& rel) const;
  const std::map<std::string, std::map<Hash, std::set<Tuple>>>& state() const {
    return state_;
  }
  const std::map<std::string, int64_t>& view_values() const { return views_; }
  const std::map<Hash, Decision>& decisions() const { return decisions_; }

  struct Counters {
    uint64_t applied = 0;
    uint64_t ignored_unsafe = 0;
    uint64_t ignored_bad_pred = 0;
    uint64_t ignored_malformed = 0;
  };
  const Counters& counters() const { return counters_; }

  // Re-evaluates every invariant against current state; returns a
  // description per violation (empty when all hold). Materialized views are
  // checked by recomputing them from scratch.
  std::vector<std::string> invariant_violations() const;

  // Canonical encoding of (state, views) for cross-replica comparison.
  Hash state_fingerprint() const;

  // Test hook: skip the causal-precedence check on deletes. Used to prove
  // the convergence checker catches the divergence this causes.
  void test_skip_pred_check(bool v) { test_skip_pred_ = v; }

 private:
  bool shapes_ok(const UpdateSet& u) const;
  void apply(const Hash& h, const UpdateSet& u);
  void record(const Hash& h, Decision d);

  Schema schema_;
  const MessageStore* dag_;
  // rel -> inserting message hash -> tuples.
  std::map<std::string, std::map<Hash, std::set<Tuple>>> state_;
  std::map<std::string, int64_t> views_;
  std::map<Hash, Decision> decisions_;
  Counters counters_;
  bool test_skip_pred_ = false;
};

}  // namespace dagsync::rel
