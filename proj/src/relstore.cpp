#include "dagsync/relstore.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dagsync::rel {

namespace {

constexpr uint8_t kUpdateSetVersion = 1;
constexpr uint8_t kTagInteger = 1;
constexpr uint8_t kTagString = 2;
constexpr uint8_t kTagBytes = 3;
constexpr uint32_t kMaxUpdates = 1u << 16;
constexpr uint32_t kMaxBlobLen = 1u << 20;
constexpr uint32_t kMaxArity = 256;

void put_string(Bytes& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

bool read_string(Reader& r, std::string& s) {
  uint32_t len;
  if (!r.u32(len) || len > kMaxBlobLen) return false;
  Bytes b;
  if (!r.bytes(b, len)) return false;
  s.assign(b.begin(), b.end());
  return true;
}

void put_value(Bytes& out, const Value& v) {
  if (const int64_t* i = std::get_if<int64_t>(&v)) {
    put_u8(out, kTagInteger);
    put_i64(out, *i);
  } else if (const std::string* s = std::get_if<std::string>(&v)) {
    put_u8(out, kTagString);
    put_string(out, *s);
  } else {
    put_u8(out, kTagBytes);
    const Bytes& b = std::get<Bytes>(v);
    put_u32(out, static_cast<uint32_t>(b.size()));
    put_bytes(out, b);
  }
}

bool read_value(Reader& r, Value& v) {
  uint8_t tag;
  if (!r.u8(tag)) return false;
  switch (tag) {
    case kTagInteger: {
      int64_t i;
      if (!r.i64(i)) return false;
      v = i;
      return true;
    }
    case kTagString: {
      std::string s;
      if (!read_string(r, s)) return false;
      v = std::move(s);
      return true;
    }
    case kTagBytes: {
      uint32_t len;
      if (!r.u32(len) || len > kMaxBlobLen) return false;
      Bytes b;
      if (!r.bytes(b, len)) return false;
      v = std::move(b);
      return true;
    }
    default:
      return false;
  }
}

void put_tuple(Bytes& out, const Tuple& t) {
  put_u32(out, static_cast<uint32_t>(t.size()));
  for (const Value& v : t) put_value(out, v);
}

bool read_tuple(Reader& r, Tuple& t) {
  uint32_t arity;
  if (!r.u32(arity) || arity > kMaxArity) return false;
  t.clear();
  t.reserve(arity);
  for (uint32_t i = 0; i < arity; i++) {
    Value v;
    if (!read_value(r, v)) return false;
    t.push_back(std::move(v));
  }
  return true;
}

bool value_matches(const Value& v, ColumnType type) {
  switch (type) {
    case ColumnType::Integer:
      return std::holds_alternative<int64_t>(v);
    case ColumnType::String:
      return std::holds_alternative<std::string>(v);
    case ColumnType::Binary:
      return std::holds_alternative<Bytes>(v);
  }
  return false;
}

bool op_satisfied(const std::string& op, int64_t value, int64_t bound) {
  if (op == "<") return value < bound;
  if (op == "<=") return value <= bound;
  if (op == ">") return value > bound;
  if (op == ">=") return value >= bound;
  if (op == "==") return value == bound;
  return value != bound;  // "!="
}

const RelationDef& relation_or_throw(const Schema& schema, const std::string& rel) {
  auto it = schema.relations.find(rel);
  if (it == schema.relations.end())
    throw UnknownRelation("unknown relation: " + rel);
  return it->second;
}

void check_tuple_shape(const Schema& schema, const std::string& rel, const Tuple& t) {
  const RelationDef& def = relation_or_throw(schema, rel);
  if (t.size() != def.cols.size())
    throw UnknownRelation("tuple arity mismatch for relation " + rel);
  for (size_t i = 0; i < t.size(); i++) {
    if (!value_matches(t[i], def.cols[i].type))
      throw UnknownRelation("tuple type mismatch for relation " + rel);
  }
}

}  // namespace

int RelationDef::col_index(const std::string& attr) const {
  for (size_t i = 0; i < cols.size(); i++) {
    if (cols[i].name == attr) return static_cast<int>(i);
  }
  return -1;
}

// --- update set codec --------------------------------------------------------

Bytes encode_update_set(const UpdateSet& u) {
  auto ins = u.ins;
  std::sort(ins.begin(), ins.end());
  ins.erase(std::unique(ins.begin(), ins.end()), ins.end());
  auto del = u.del;
  std::sort(del.begin(), del.end());
  del.erase(std::unique(del.begin(), del.end()), del.end());

  Bytes out;
  put_u8(out, kUpdateSetVersion);
  put_u32(out, static_cast<uint32_t>(ins.size()));
  for (const auto& [rel, tuple] : ins) {
    put_string(out, rel);
    put_tuple(out, tuple);
  }
  put_u32(out, static_cast<uint32_t>(del.size()));
  for (const TupleTriple& t : del) {
    put_fixed(out, t.h);
    put_string(out, t.rel);
    put_tuple(out, t.tuple);
  }
  return out;
}

std::optional<UpdateSet> decode_update_set(const Bytes& data) {
  Reader r(data);
  uint8_t version;
  if (!r.u8(version) || version != kUpdateSetVersion) return std::nullopt;
  UpdateSet u;
  uint32_t ins_count;
  if (!r.u32(ins_count) || ins_count > kMaxUpdates) return std::nullopt;
  for (uint32_t i = 0; i < ins_count; i++) {
    std::pair<std::string, Tuple> ins;
    if (!read_string(r, ins.first) || !read_tuple(r, ins.second)) return std::nullopt;
    if (!u.ins.empty() && !(u.ins.back() < ins)) return std::nullopt;
    u.ins.push_back(std::move(ins));
  }
  uint32_t del_count;
  if (!r.u32(del_count) || del_count > kMaxUpdates) return std::nullopt;
  for (uint32_t i = 0; i < del_count; i++) {
    TupleTriple t;
    if (!r.fixed(t.h) || !read_string(r, t.rel) || !read_tuple(r, t.tuple))
      return std::nullopt;
    if (!u.del.empty() && !(u.del.back() < t)) return std::nullopt;
    u.del.push_back(std::move(t));
  }
  if (!r.done()) return std::nullopt;
  return u;
}

// --- schema parsing ----------------------------------------------------------

namespace {

ColumnType parse_column_type(const std::string& s, size_t line_no) {
  if (s == "integer") return ColumnType::Integer;
  if (s == "string") return ColumnType::String;
  if (s == "bytes") return ColumnType::Binary;
  throw ConfigError("line " + std::to_string(line_no) + ": unknown column type '" + s + "'");
}

void require_integer_attr(const Schema& schema, const std::string& rel,
                          const std::string& attr, size_t line_no) {
  auto it = schema.relations.find(rel);
  if (it == schema.relations.end())
    throw ConfigError("line " + std::to_string(line_no) + ": unknown relation '" + rel + "'");
  int idx = it->second.col_index(attr);
  if (idx < 0)
    throw ConfigError("line " + std::to_string(line_no) + ": unknown attribute '" + attr + "'");
  if (it->second.cols[static_cast<size_t>(idx)].type != ColumnType::Integer)
    throw ConfigError("line " + std::to_string(line_no) + ": attribute '" + attr +
                      "' must be integer");
}

void require_attr(const Schema& schema, const std::string& rel, const std::string& attr,
                  size_t line_no) {
  auto it = schema.relations.find(rel);
  if (it == schema.relations.end())
    throw ConfigError("line " + std::to_string(line_no) + ": unknown relation '" + rel + "'");
  if (it->second.col_index(attr) < 0)
    throw ConfigError("line " + std::to_string(line_no) + ": unknown attribute '" + attr + "'");
}

}  // namespace

Schema parse_schema(const std::string& text) {
  Schema schema;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  std::set<std::string> view_names;
  while (std::getline(in, line)) {
    line_no++;
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok[0] == "relation") {
      if (tok.size() < 3)
        throw ConfigError("line " + std::to_string(line_no) + ": relation needs columns");
      RelationDef def;
      def.name = tok[1];
      if (schema.relations.count(def.name))
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate relation '" +
                          def.name + "'");
      for (size_t i = 2; i < tok.size(); i++) {
        auto colon = tok[i].find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 >= tok[i].size())
          throw ConfigError("line " + std::to_string(line_no) +
                            ": column must be name:type, got '" + tok[i] + "'");
        ColumnDef col{tok[i].substr(0, colon), parse_column_type(tok[i].substr(colon + 1), line_no)};
        if (def.col_index(col.name) >= 0)
          throw ConfigError("line " + std::to_string(line_no) + ": duplicate column '" +
                            col.name + "'");
        def.cols.push_back(std::move(col));
      }
      schema.relations.emplace(def.name, std::move(def));
    } else if (tok[0] == "invariant") {
      if (tok.size() < 2)
        throw ConfigError("line " + std::to_string(line_no) + ": empty invariant");
      const std::string& kind = tok[1];
      if (kind == "rowcheck") {
        if (tok.size() != 6)
          throw ConfigError("line " + std::to_string(line_no) +
                            ": rowcheck needs <rel> <attr> <op> <bound>");
        RowCheck rc{tok[2], tok[3], tok[4], 0};
        if (rc.op != "<" && rc.op != "<=" && rc.op != ">" && rc.op != ">=" &&
            rc.op != "==" && rc.op != "!=")
          throw ConfigError("line " + std::to_string(line_no) + ": bad operator '" + rc.op + "'");
        try {
          rc.bound = std::stoll(tok[5]);
        } catch (const std::exception&) {
          throw ConfigError("line " + std::to_string(line_no) + ": bad bound '" + tok[5] + "'");
        }
        require_integer_attr(schema, rc.rel, rc.attr, line_no);
        schema.invariants.push_back(std::move(rc));
      } else if (kind == "nonnegative") {
        if (tok.size() != 4)
          throw ConfigError("line " + std::to_string(line_no) + ": nonnegative needs <rel> <attr>");
        require_integer_attr(schema, tok[2], tok[3], line_no);
        schema.invariants.push_back(NonNegativeRule{tok[2], tok[3]});
      } else if (kind == "foreignkey") {
        if (tok.size() != 6)
          throw ConfigError("line " + std::to_string(line_no) +
                            ": foreignkey needs <rel> <attr> <target_rel> <target_attr>");
        require_attr(schema, tok[2], tok[3], line_no);
        require_attr(schema, tok[4], tok[5], line_no);
        schema.invariants.push_back(ForeignKeyRule{tok[2], tok[3], tok[4], tok[5]});
      } else if (kind == "unique") {
        if (tok.size() != 5 || (tok[4] != "hash_derived" && tok[4] != "user_chosen"))
          throw ConfigError("line " + std::to_string(line_no) +
                            ": unique needs <rel> <attr> <hash_derived|user_chosen>");
        require_attr(schema, tok[2], tok[3], line_no);
        UniqueRule u{tok[2], tok[3], tok[4] == "hash_derived"};
        if (u.hash_derived) {
          const RelationDef& def = schema.relations.at(u.rel);
          if (def.cols[static_cast<size_t>(def.col_index(u.attr))].type != ColumnType::String)
            throw ConfigError("line " + std::to_string(line_no) +
                              ": hash_derived attribute must be a string column");
        }
        schema.invariants.push_back(std::move(u));
      } else if (kind == "view") {
        if (tok.size() < 5)
          throw ConfigError("line " + std::to_string(line_no) +
                            ": view needs <name> <sum|count> <rel> [<attr>]");
        ViewRule v;
        v.name = tok[2];
        if (view_names.count(v.name))
          throw ConfigError("line " + std::to_string(line_no) + ": duplicate view '" + v.name + "'");
        if (tok[3] == "sum") {
          if (tok.size() != 6)
            throw ConfigError("line " + std::to_string(line_no) + ": sum view needs <rel> <attr>");
          v.agg = ViewRule::Agg::Sum;
          v.rel = tok[4];
          v.attr = tok[5];
          require_integer_attr(schema, v.rel, v.attr, line_no);
        } else if (tok[3] == "count") {
          if (tok.size() != 5)
            throw ConfigError("line " + std::to_string(line_no) + ": count view needs <rel>");
          v.agg = ViewRule::Agg::Count;
          v.rel = tok[4];
          if (!schema.relations.count(v.rel))
            throw ConfigError("line " + std::to_string(line_no) + ": unknown relation '" + v.rel + "'");
        } else {
          throw ConfigError("line " + std::to_string(line_no) + ": bad aggregate '" + tok[3] + "'");
        }
        view_names.insert(v.name);
        schema.invariants.push_back(std::move(v));
      } else {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown invariant kind '" +
                          kind + "'");
      }
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown declaration '" +
                        tok[0] + "'");
    }
  }
  return schema;
}

Schema load_schema_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

// --- safety ------------------------------------------------------------------

bool is_safe(const UpdateSet& u, const Schema& schema) {
  for (const auto& [rel, tuple] : u.ins) check_tuple_shape(schema, rel, tuple);
  for (const TupleTriple& t : u.del) check_tuple_shape(schema, t.rel, t.tuple);

  for (const InvariantSpec& inv : schema.invariants) {
    if (const RowCheck* rc = std::get_if<RowCheck>(&inv)) {
      int idx = schema.relations.at(rc->rel).col_index(rc->attr);
      for (const auto& [rel, tuple] : u.ins) {
        if (rel != rc->rel) continue;
        int64_t v = std::get<int64_t>(tuple[static_cast<size_t>(idx)]);
        if (!op_satisfied(rc->op, v, rc->bound)) return false;
      }
    } else if (const NonNegativeRule* nn = std::get_if<NonNegativeRule>(&inv)) {
      size_t idx = static_cast<size_t>(schema.relations.at(nn->rel).col_index(nn->attr));
      for (const auto& [rel, tuple] : u.ins) {
        if (rel == nn->rel && std::get<int64_t>(tuple[idx]) < 0) return false;
      }
      for (const TupleTriple& d : u.del) {
        if (d.rel != nn->rel) continue;
        // A delete is a balance decrease unless the same update re-inserts
        // the row (other attributes unchanged) with at least the old value.
        int64_t old_value = std::get<int64_t>(d.tuple[idx]);
        bool replaced = false;
        for (const auto& [rel, tuple] : u.ins) {
          if (rel != nn->rel || tuple.size() != d.tuple.size()) continue;
          bool same_others = true;
          for (size_t i = 0; i < tuple.size(); i++) {
            if (i == idx) continue;
            if (!(tuple[i] == d.tuple[i])) {
              same_others = false;
              break;
            }
          }
          if (same_others && std::get<int64_t>(tuple[idx]) >= old_value) {
            replaced = true;
            break;
          }
        }
        if (!replaced) return false;
      }
    } else if (const ForeignKeyRule* fk = std::get_if<ForeignKeyRule>(&inv)) {
      for (const TupleTriple& d : u.del) {
        if (d.rel == fk->target_rel) return false;
      }
    } else if (const UniqueRule* uq = std::get_if<UniqueRule>(&inv)) {
      if (!uq->hash_derived) {
        for (const auto& [rel, tuple] : u.ins) {
          if (rel == uq->rel) return false;
        }
      }
    }
    // Materialized views never make an update unsafe.
  }
  return true;
}

// --- ReplicatedStore ---------------------------------------------------------

ReplicatedStore::ReplicatedStore(Schema schema, const MessageStore* dag)
    : schema_(std::move(schema)), dag_(dag) {
  for (const InvariantSpec& inv : schema_.invariants) {
    if (const ViewRule* v = std::get_if<ViewRule>(&inv)) views_[v->name] = 0;
  }
}

bool ReplicatedStore::shapes_ok(const UpdateSet& u) const {
  try {
    for (const auto& [rel, tuple] : u.ins) check_tuple_shape(schema_, rel, tuple);
    for (const TupleTriple& t : u.del) check_tuple_shape(schema_, t.rel, t.tuple);
  } catch (const UnknownRelation&) {
    return false;
  }
  return true;
}

MessagePtr ReplicatedStore::commit_transaction(ReplicaEngine& engine, const Transaction& t,
                                               std::vector<Outgoing>* out) {
  UpdateSet u;
  u.ins = t.ins;
  u.del = t.del;
  Bytes encoded = encode_update_set(u);
  auto canonical = decode_update_set(encoded);
  if (!canonical) throw UnsafeUpdate("transaction does not encode canonically");
  if (!is_safe(*canonical, schema_))
    throw UnsafeUpdate("transaction is unsafe under the schema invariants");
  // Local referential validation: deletes must name committed triples, and
  // foreign keys must resolve locally. Both are state-dependent courtesy
  // checks for local transactions, not part of delivery-time safety.
  for (const TupleTriple& d : canonical->del) {
    auto rel_it = state_.find(d.rel);
    bool found = false;
    if (rel_it != state_.end()) {
      auto h_it = rel_it->second.find(d.h);
      found = h_it != rel_it->second.end() && h_it->second.count(d.tuple) > 0;
    }
    if (!found) throw UnsafeUpdate("transaction deletes a tuple that is not committed");
  }
  for (const InvariantSpec& inv : schema_.invariants) {
    const ForeignKeyRule* fk = std::get_if<ForeignKeyRule>(&inv);
    if (!fk) continue;
    size_t src_idx = static_cast<size_t>(schema_.relations.at(fk->rel).col_index(fk->attr));
    size_t dst_idx =
        static_cast<size_t>(schema_.relations.at(fk->target_rel).col_index(fk->target_attr));
    for (const auto& [rel, tuple] : canonical->ins) {
      if (rel != fk->rel) continue;
      bool resolves = false;
      auto target_it = state_.find(fk->target_rel);
      if (target_it != state_.end()) {
        for (const auto& [h, tuples] : target_it->second) {
          for (const Tuple& existing : tuples) {
            if (existing[dst_idx] == tuple[src_idx]) {
              resolves = true;
              break;
            }
          }
          if (resolves) break;
        }
      }
      // The update may also insert the referenced row itself.
      if (!resolves) {
        for (const auto& [rel2, tuple2] : canonical->ins) {
          if (rel2 == fk->target_rel && tuple2[dst_idx] == tuple[src_idx]) {
            resolves = true;
            break;
          }
        }
      }
      if (!resolves) throw UnsafeUpdate("transaction inserts a dangling foreign key");
    }
  }
  return engine.broadcast(encoded, out);
}

void ReplicatedStore::on_deliver(const MessagePtr& m) {
  auto u = decode_update_set(m->value());
  if (!u || !shapes_ok(*u)) {
    record(m->id(), Decision::IgnoredMalformed);
    return;
  }
  if (!is_safe(*u, schema_)) {
    record(m->id(), Decision::IgnoredUnsafe);
    return;
  }
  if (!test_skip_pred_ && !u->del.empty()) {
    std::set<Hash> ancestors = dag_->pred_star(m->id());
    for (const TupleTriple& d : u->del) {
      if (!ancestors.count(d.h)) {
        record(m->id(), Decision::IgnoredBadPred);
        return;
      }
    }
  }
  apply(m->id(), *u);
  record(m->id(), Decision::Applied);
}

void ReplicatedStore::apply(const Hash& h, const UpdateSet& u) {
  for (const TupleTriple& d : u.del) {
    auto rel_it = state_.find(d.rel);
    if (rel_it == state_.end()) continue;
    auto h_it = rel_it->second.find(d.h);
    if (h_it == rel_it->second.end()) continue;
    if (h_it->second.erase(d.tuple) > 0) {
      for (const InvariantSpec& inv : schema_.invariants) {
        const ViewRule* v = std::get_if<ViewRule>(&inv);
        if (!v || v->rel != d.rel) continue;
        if (v->agg == ViewRule::Agg::Count) {
          views_[v->name] -= 1;
        } else {
          size_t idx = static_cast<size_t>(schema_.relations.at(v->rel).col_index(v->attr));
          views_[v->name] -= std::get<int64_t>(d.tuple[idx]);
        }
      }
    }
    if (h_it->second.empty()) rel_it->second.erase(h_it);
  }
  for (const auto& [rel, tuple] : u.ins) {
    Tuple stored = tuple;
    // Hash-derived unique attributes take the delivering message's hash so
    // concurrent inserts can never collide.
    for (const InvariantSpec& inv : schema_.invariants) {
      const UniqueRule* uq = std::get_if<UniqueRule>(&inv);
      if (!uq || !uq->hash_derived || uq->rel != rel) continue;
      size_t idx = static_cast<size_t>(schema_.relations.at(rel).col_index(uq->attr));
      stored[idx] = to_hex(h);
    }
    if (state_[rel][h].insert(stored).second) {
      for (const InvariantSpec& inv : schema_.invariants) {
        const ViewRule* v = std::get_if<ViewRule>(&inv);
        if (!v || v->rel != rel) continue;
        if (v->agg == ViewRule::Agg::Count) {
          views_[v->name] += 1;
        } else {
          size_t idx = static_cast<size_t>(schema_.relations.at(v->rel).col_index(v->attr));
          views_[v->name] += std::get<int64_t>(stored[idx]);
        }
      }
    }
  }
}

void ReplicatedStore::record(const Hash& h, Decision d) {
  decisions_[h] = d;
  switch (d) {
    case Decision::Applied:
      counters_.applied++;
      break;
    case Decision::IgnoredUnsafe:
      counters_.ignored_unsafe++;
      break;
    case Decision::IgnoredBadPred:
      counters_.ignored_bad_pred++;
      break;
    case Decision::IgnoredMalformed:
      counters_.ignored_malformed++;
      break;
  }
}

std::vector<TupleTriple> ReplicatedStore::query(const std::string& rel) const {
  relation_or_throw(schema_, rel);
  std::vector<TupleTriple> out;
  auto it = state_.find(rel);
  if (it == state_.end()) return out;
  for (const auto& [h, tuples] : it->second) {
    for (const Tuple& t : tuples) out.push_back({h, rel, t});
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> ReplicatedStore::invariant_violations() const {
  std::vector<std::string> out;
  for (const InvariantSpec& inv : schema_.invariants) {
    if (const RowCheck* rc = std::get_if<RowCheck>(&inv)) {
      size_t idx = static_cast<size_t>(schema_.relations.at(rc->rel).col_index(rc->attr));
      auto it = state_.find(rc->rel);
      if (it == state_.end()) continue;
      for (const auto& [h, tuples] : it->second) {
        for (const Tuple& t : tuples) {
          int64_t v = std::get<int64_t>(t[idx]);
          if (!op_satisfied(rc->op, v, rc->bound))
            out.push_back("rowcheck " + rc->rel + "." + rc->attr + " violated by value " +
                          std::to_string(v));
        }
      }
    } else if (const NonNegativeRule* nn = std::get_if<NonNegativeRule>(&inv)) {
      size_t idx = static_cast<size_t>(schema_.relations.at(nn->rel).col_index(nn->attr));
      auto it = state_.find(nn->rel);
      if (it == state_.end()) continue;
      for (const auto& [h, tuples] : it->second) {
        for (const Tuple& t : tuples) {
          if (std::get<int64_t>(t[idx]) < 0)
            out.push_back("nonnegative " + nn->rel + "." + nn->attr + " violated");
        }
      }
    } else if (const ForeignKeyRule* fk = std::get_if<ForeignKeyRule>(&inv)) {
      size_t src_idx = static_cast<size_t>(schema_.relations.at(fk->rel).col_index(fk->attr));
      size_t dst_idx =
          static_cast<size_t>(schema_.relations.at(fk->target_rel).col_index(fk->target_attr));
      std::set<Value> targets;
      auto target_it = state_.find(fk->target_rel);
      if (target_it != state_.end()) {
        for (const auto& [h, tuples] : target_it->second) {
          for (const Tuple& t : tuples) targets.insert(t[dst_idx]);
        }
      }
      auto src_it = state_.find(fk->rel);
      if (src_it == state_.end()) continue;
      for (const auto& [h, tuples] : src_it->second) {
        for (const Tuple& t : tuples) {
          if (!targets.count(t[src_idx]))
            out.push_back("foreignkey " + fk->rel + "." + fk->attr + " dangling");
        }
      }
    } else if (const UniqueRule* uq = std::get_if<UniqueRule>(&inv)) {
      size_t idx = static_cast<size_t>(schema_.relations.at(uq->rel).col_index(uq->attr));
      std::set<Value> seen;
      auto it = state_.find(uq->rel);
      if (it == state_.end()) continue;
      for (const auto& [h, tuples] : it->second) {
        for (const Tuple& t : tuples) {
          if (!seen.insert(t[idx]).second)
            out.push_back("unique " + uq->rel + "." + uq->attr + " duplicated");
        }
      }
    } else if (const ViewRule* v = std::get_if<ViewRule>(&inv)) {
      int64_t fresh = 0;
      auto it = state_.find(v->rel);
      if (it != state_.end()) {
        for (const auto& [h, tuples] : it->second) {
          if (v->agg == ViewRule::Agg::Count) {
            fresh += static_cast<int64_t>(tuples.size());
          } else {
            size_t idx = static_cast<size_t>(schema_.relations.at(v->rel).col_index(v->attr));
            for (const Tuple& t : tuples) fresh += std::get<int64_t>(t[idx]);
          }
        }
      }
      auto stored = views_.find(v->name);
      if (stored == views_.end() || stored->second != fresh)
        out.push_back("view " + v->name + " inconsistent with base relation");
    }
  }
  return out;
}

Hash ReplicatedStore::state_fingerprint() const {
  Bytes enc;
  for (const auto& [rel, by_hash] : state_) {
    put_string(enc, rel);
    put_u32(enc, static_cast<uint32_t>(by_hash.size()));
    for (const auto& [h, tuples] : by_hash) {
      put_fixed(enc, h);
      put_u32(enc, static_cast<uint32_t>(tuples.size()));
      for (const Tuple& t : tuples) put_tuple(enc, t);
    }
  }
  for (const auto& [name, value] : views_) {
    put_string(enc, name);
    put_i64(enc, value);
  }
  return sha256(enc);
}

}  // namespace dagsync::rel
