#include "dagsync/crypto.hpp"

#include <sodium.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dagsync {

namespace {

constexpr uint8_t kPayloadVersion = 1;

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

}  // namespace

Hash sha256(const uint8_t* data, size_t len) {
  ensure_sodium();
  Hash out;
  crypto_hash_sha256(out.data(), data, len);
  return out;
}

Bytes encode_payload(const Bytes& value, const std::set<Hash>& preds) {
  Bytes out;
  out.reserve(9 + value.size() + 32 * preds.size());
  put_u8(out, kPayloadVersion);
  put_u32(out, static_cast<uint32_t>(value.size()));
  put_u32(out, static_cast<uint32_t>(preds.size()));
  put_bytes(out, value);
  for (const Hash& h : preds) put_fixed(out, h);  // std::set iterates ascending
  return out;
}

std::optional<DecodedPayload> decode_payload(const Bytes& payload) {
  Reader r(payload);
  uint8_t version;
  uint32_t value_len, pred_count;
  if (!r.u8(version) || version != kPayloadVersion) return std::nullopt;
  if (!r.u32(value_len) || !r.u32(pred_count)) return std::nullopt;
  if (r.remaining() != static_cast<size_t>(value_len) + 32ull * pred_count)
    return std::nullopt;
  DecodedPayload out;
  if (!r.bytes(out.value, value_len)) return std::nullopt;
  Hash prev{};
  for (uint32_t i = 0; i < pred_count; i++) {
    Hash h;
    if (!r.fixed(h)) return std::nullopt;
    if (i > 0 && !(prev < h)) return std::nullopt;  // strictly ascending, no dups
    prev = h;
    out.preds.insert(h);
  }
  if (!r.done()) return std::nullopt;
  return out;
}

KeyPair keypair_from_seed(const std::array<uint8_t, 32>& seed) {
  ensure_sodium();
  KeyPair kp;
  static_assert(crypto_sign_SEEDBYTES == 32);
  static_assert(crypto_sign_PUBLICKEYBYTES == 32);
  static_assert(crypto_sign_SECRETKEYBYTES == 64);
  crypto_sign_seed_keypair(kp.pub.data(), kp.sec.data(), seed.data());
  return kp;
}

Signature sign(const Bytes& payload, const SecretKey& sec) {
  ensure_sodium();
  Signature sig;
  static_assert(crypto_sign_BYTES == 64);
  crypto_sign_detached(sig.data(), nullptr, payload.data(), payload.size(), sec.data());
  return sig;
}

bool verify(const Bytes& payload, const Signature& sig, const PublicKey& pub) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), payload.data(), payload.size(),
                                     pub.data()) == 0;
}

void KeyDirectory::add(const ReplicaId& name, const PublicKey& pub) {
  entries_[name] = pub;
}

std::optional<PublicKey> KeyDirectory::find(const ReplicaId& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<ReplicaId> KeyDirectory::check(const Bytes& payload,
                                             const Signature& sig) const {
  for (const auto& [name, pub] : entries_) {
    if (verify(payload, sig, pub)) return name;
  }
  return std::nullopt;
}

std::string KeyDirectory::serialize() const {
  std::string out;
  for (const auto& [name, pub] : entries_) {
    out += name;
    out += ' ';
    out += to_hex(pub);
    out += '\n';
  }
  return out;
}

std::optional<KeyDirectory> KeyDirectory::parse(const std::string& text) {
  KeyDirectory dir;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    std::istringstream ls(line);
    std::string name, hex;
    if (!(ls >> name)) continue;  // blank line
    if (!(ls >> hex)) return std::nullopt;
    std::string extra;
    if (ls >> extra) return std::nullopt;
    auto key = from_hex_fixed<32>(hex);
    if (!key) return std::nullopt;
    if (name.find(' ') != std::string::npos) return std::nullopt;
    if (dir.entries_.count(name)) return std::nullopt;  // duplicate name
    dir.add(name, *key);
  }
  return dir;
}

bool KeyDirectory::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) return false;
  out << serialize();
  return static_cast<bool>(out);
}

std::optional<KeyDirectory> KeyDirectory::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::optional<ReplicaId> VerifyCache::check(const KeyDirectory& dir,
                                            const Bytes& payload,
                                            const Signature& sig) {
  std::pair<Hash, Signature> key{sha256(payload), sig};
  auto it = memo_.find(key);
  if (it != memo_.end()) return it->second;
  auto result = dir.check(payload, sig);
  memo_.emplace(std::move(key), result);
  return result;
}

}  // namespace dagsync
