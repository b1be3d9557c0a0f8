#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "dagsync/bytes.hpp"

namespace dagsync {

// SHA-256 of a byte range.
Hash sha256(const uint8_t* data, size_t len);
inline Hash sha256(const Bytes& b) { return sha256(b.data(), b.size()); }
inline Hash sha256(const std::string& s) {
  return sha256(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

// Canonical signed-message payload:
//   [u8 version=1][u32le value_len][u32le pred_count][value][preds, ascending]
// The message id is sha256 of this encoding; the signature also covers it.
Bytes encode_payload(const Bytes& value, const std::set<Hash>& preds);

struct DecodedPayload {
  Bytes value;
  std::set<Hash> preds;
};

// Strict inverse of encode_payload: rejects wrong version, truncated or
// oversized input, and predecessor lists that are not strictly ascending.
std::optional<DecodedPayload> decode_payload(const Bytes& payload);

struct KeyPair {
  PublicKey pub;
  SecretKey sec;
};

// Deterministic Ed25519 keypair from a 32-byte seed.
KeyPair keypair_from_seed(const std::array<uint8_t, 32>& seed);

Signature sign(const Bytes& payload, const SecretKey& sec);
bool verify(const Bytes& payload, const Signature& sig, const PublicKey& pub);

// Maps replica names to their public keys. The text form is one entry per
// line: "<name> <64 hex chars>"; '#' starts a comment, blank lines ignored.
class KeyDirectory {
 public:
  void add(const ReplicaId& name, const PublicKey& pub);
  std::optional<PublicKey> find(const ReplicaId& name) const;
  const std::map<ReplicaId, PublicKey>& entries() const { return entries_; }

  // Returns the name of the replica whose key verifies (payload, sig), or
  // nullopt if no registered key matches. Tries entries in name order.
  std::optional<ReplicaId> check(const Bytes& payload, const Signature& sig) const;

  std::string serialize() const;
  static std::optional<KeyDirectory> parse(const std::string& text);
  bool save_file(const std::string& path) const;
  static std::optional<KeyDirectory> load_file(const std::string& path);

 private:
  std::map<ReplicaId, PublicKey> entries_;
};

// Memoizes KeyDirectory::check by (payload hash, signature). Safe to share
// only between callers that use identical directory contents.
class VerifyCache {
 public:
  std::optional<ReplicaId> check(const KeyDirectory& dir, const Bytes& payload,
                                 const Signature& sig);
  size_t size() const { return memo_.size(); }

 private:
  std::map<std::pair<Hash, Signature>, std::optional<ReplicaId>> memo_;
};

}  // namespace dagsync
