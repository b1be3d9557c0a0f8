#include "dagsync/message.hpp"

namespace dagsync {

Message::Message(Bytes value, std::set<Hash> preds, Signature sig)
    : value_(std::move(value)), preds_(std::move(preds)), sig_(sig) {
  id_ = sha256(encode_payload(value_, preds_));
}

Bytes Message::encode() const {
  Bytes out = payload();
  put_fixed(out, sig_);
  return out;
}

std::optional<Message> Message::decode(const Bytes& wire) {
  if (wire.size() < 64) return std::nullopt;
  Bytes payload(wire.begin(), wire.end() - 64);
  auto decoded = decode_payload(payload);
  if (!decoded) return std::nullopt;
  Signature sig;
  std::memcpy(sig.data(), wire.data() + wire.size() - 64, 64);
  return Message(std::move(decoded->value), std::move(decoded->preds), sig);
}

MessagePtr make_message(const Bytes& value, const std::set<Hash>& preds,
                        const SecretKey& sec) {
  Signature sig = sign(encode_payload(value, preds), sec);
  return std::make_shared<Message>(value, preds, sig);
}

}  // namespace dagsync
