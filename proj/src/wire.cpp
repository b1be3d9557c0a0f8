#include "dagsync/wire.hpp"

namespace dagsync {

namespace {

constexpr uint8_t kTagHeads = 1;
constexpr uint8_t kTagHeadsV2 = 2;
constexpr uint8_t kTagNeeds = 3;
constexpr uint8_t kTagMsgs = 4;

constexpr uint32_t kMaxHashes = 1u << 20;
constexpr uint32_t kMaxMessages = 1u << 20;
constexpr uint32_t kMaxMessageLen = 1u << 24;

void put_hash_set(Bytes& out, const std::set<Hash>& hashes) {
  put_u32(out, static_cast<uint32_t>(hashes.size()));
  for (const Hash& h : hashes) put_fixed(out, h);
}

bool read_hash_set(Reader& r, std::set<Hash>& out) {
  uint32_t count;
  if (!r.u32(count) || count > kMaxHashes) return false;
  Hash prev{};
  for (uint32_t i = 0; i < count; i++) {
    Hash h;
    if (!r.fixed(h)) return false;
    if (i > 0 && !(prev < h)) return false;
    prev = h;
    out.insert(h);
  }
  return true;
}

}  // namespace

Bytes encode_wire(const WireMessage& msg) {
  Bytes out;
  std::visit(
      [&out](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, HeadsMsg>) {
          put_u8(out, kTagHeads);
          put_hash_set(out, m.heads);
        } else if constexpr (std::is_same_v<T, HeadsV2Msg>) {
          put_u8(out, kTagHeadsV2);
          put_hash_set(out, m.heads);
          put_hash_set(out, m.old_heads);
          put_bytes(out, encode_bloom(m.filter));
        } else if constexpr (std::is_same_v<T, NeedsMsg>) {
          put_u8(out, kTagNeeds);
          put_hash_set(out, m.hashes);
        } else {
          put_u8(out, kTagMsgs);
          put_u32(out, static_cast<uint32_t>(m.msgs.size()));
          for (const MessagePtr& msg_ptr : m.msgs) {
            Bytes enc = msg_ptr->encode();
            put_u32(out, static_cast<uint32_t>(enc.size()));
            put_bytes(out, enc);
          }
        }
      },
      msg);
  return out;
}

std::optional<WireMessage> decode_wire(const Bytes& data) {
  Reader r(data);
  uint8_t tag;
  if (!r.u8(tag)) return std::nullopt;
  switch (tag) {
    case kTagHeads: {
      HeadsMsg m;
      if (!read_hash_set(r, m.heads) || !r.done()) return std::nullopt;
      return WireMessage{std::move(m)};
    }
    case kTagHeadsV2: {
      HeadsV2Msg m;
      if (!read_hash_set(r, m.heads) || !read_hash_set(r, m.old_heads))
        return std::nullopt;
      Bytes rest;
      if (!r.bytes(rest, r.remaining())) return std::nullopt;
      try {
        m.filter = decode_bloom(rest);
      } catch (const MalformedFilter&) {
        return std::nullopt;
      }
      return WireMessage{std::move(m)};
    }
    case kTagNeeds: {
      NeedsMsg m;
      if (!read_hash_set(r, m.hashes) || !r.done()) return std::nullopt;
      return WireMessage{std::move(m)};
    }
    case kTagMsgs: {
      MsgsMsg m;
      uint32_t count;
      if (!r.u32(count) || count > kMaxMessages) return std::nullopt;
      m.msgs.reserve(count);
      for (uint32_t i = 0; i < count; i++) {
        uint32_t len;
        if (!r.u32(len) || len > kMaxMessageLen) return std::nullopt;
        Bytes enc;
        if (!r.bytes(enc, len)) return std::nullopt;
        auto decoded = Message::decode(enc);
        if (!decoded) return std::nullopt;
        m.msgs.push_back(std::make_shared<Message>(std::move(*decoded)));
      }
      if (!r.done()) return std::nullopt;
      return WireMessage{std::move(m)};
    }
    default:
      return std::nullopt;
  }
}

}  // namespace dagsync
