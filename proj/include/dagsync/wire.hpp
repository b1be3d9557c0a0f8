#pragma once

#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "dagsync/bloom.hpp"
#include "dagsync/message.hpp"

namespace dagsync {

// Packets exchanged during reconciliation. Heads opens a v1 (hash-exchange)
// reconciliation; HeadsV2 opens a v2 reconciliation carrying the previous
// session's heads and a bloom filter of everything newer; Needs requests
// messages by hash; Msgs carries full signed messages.
struct HeadsMsg {
  std::set<Hash> heads;
  bool operator==(const HeadsMsg&) const = default;
};

struct HeadsV2Msg {
  std::set<Hash> heads;
  std::set<Hash> old_heads;
  BloomFilter filter;
  bool operator==(const HeadsV2Msg&) const = default;
};

struct NeedsMsg {
  std::set<Hash> hashes;
  bool operator==(const NeedsMsg&) const = default;
};

struct MsgsMsg {
  std::vector<MessagePtr> msgs;
};

using WireMessage = std::variant<HeadsMsg, HeadsV2Msg, NeedsMsg, MsgsMsg>;

// Tagged binary form: [u8 tag][body]. Hash lists are count-prefixed and
// strictly ascending; messages are length-prefixed canonical encodings.
Bytes encode_wire(const WireMessage& msg);

// Strict decode: rejects unknown tags, truncation, trailing bytes, unsorted
// or duplicate hash lists, malformed embedded messages or filters, and
// counts beyond sanity caps.
std::optional<WireMessage> decode_wire(const Bytes& data);

}  // namespace dagsync
