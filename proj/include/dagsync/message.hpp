#pragma once

#include <memory>
#include <optional>
#include <set>

#include "dagsync/bytes.hpp"
#include "dagsync/crypto.hpp"

namespace dagsync {

// A signed broadcast message: an application value, the hashes of the
// sender's head messages at broadcast time, and an Ed25519 signature over the
// canonical payload encoding. The message id is the SHA-256 of the payload.
class Message {
 public:
  Message(Bytes value, std::set<Hash> preds, Signature sig);

  const Bytes& value() const { return value_; }
  const std::set<Hash>& preds() const { return preds_; }
  const Signature& sig() const { return sig_; }
  const Hash& id() const { return id_; }

  Bytes payload() const { return encode_payload(value_, preds_); }

  // Wire form: payload followed by the 64-byte signature.
  Bytes encode() const;
  // Strict decode; rejects anything shorter than a signature or with a
  // malformed payload.
  static std::optional<Message> decode(const Bytes& wire);

 private:
  Bytes value_;
  std::set<Hash> preds_;
  Signature sig_;
  Hash id_;
};

using MessagePtr = std::shared_ptr<const Message>;

// Builds and signs a message in one step.
MessagePtr make_message(const Bytes& value, const std::set<Hash>& preds,
                        const SecretKey& sec);

}  // namespace dagsync
