#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace dagsync {

using Bytes = std::vector<uint8_t>;
using Hash = std::array<uint8_t, 32>;
using PublicKey = std::array<uint8_t, 32>;
using SecretKey = std::array<uint8_t, 64>;
using Signature = std::array<uint8_t, 64>;
using ReplicaId = std::string;

std::string to_hex(const uint8_t* data, size_t len);

inline std::string to_hex(const Bytes& b) { return to_hex(b.data(), b.size()); }

template <size_t N>
std::string to_hex(const std::array<uint8_t, N>& a) {
  return to_hex(a.data(), N);
}

// Decodes a lowercase/uppercase hex string; returns nullopt on odd length or
// non-hex characters.
std::optional<Bytes> from_hex(const std::string& s);

template <size_t N>
std::optional<std::array<uint8_t, N>> from_hex_fixed(const std::string& s) {
  auto b = from_hex(s);
  if (!b || b->size() != N) return std::nullopt;
  std::array<uint8_t, N> out;
  std::memcpy(out.data(), b->data(), N);
  return out;
}

// --- little-endian append helpers -----------------------------------------

inline void put_u8(Bytes& out, uint8_t v) { out.push_back(v); }

inline void put_u32(Bytes& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

inline void put_u64(Bytes& out, uint64_t v) {
  for (int i = 0; i < 8; i++) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_i64(Bytes& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

inline void put_bytes(Bytes& out, const uint8_t* p, size_t n) {
  out.insert(out.end(), p, p + n);
}

inline void put_bytes(Bytes& out, const Bytes& b) { put_bytes(out, b.data(), b.size()); }

template <size_t N>
void put_fixed(Bytes& out, const std::array<uint8_t, N>& a) {
  put_bytes(out, a.data(), N);
}

// --- strict bounded reader --------------------------------------------------

// Every read checks remaining length; decoders built on Reader reject any
// input that is truncated or has trailing garbage.
class Reader {
 public:
  Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}
  explicit Reader(const Bytes& b) : Reader(b.data(), b.size()) {}

  size_t remaining() const { return len_ - off_; }
  bool done() const { return off_ == len_; }

  bool u8(uint8_t& v) {
    if (remaining() < 1) return false;
    v = data_[off_++];
    return true;
  }

  bool u32(uint32_t& v) {
    if (remaining() < 4) return false;
    v = static_cast<uint32_t>(data_[off_]) | static_cast<uint32_t>(data_[off_ + 1]) << 8 |
        static_cast<uint32_t>(data_[off_ + 2]) << 16 | static_cast<uint32_t>(data_[off_ + 3]) << 24;
    off_ += 4;
    return true;
  }

  bool u64(uint64_t& v) {
    if (remaining() < 8) return false;
    v = 0;
    for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(data_[off_ + i]) << (8 * i);
    off_ += 8;
    return true;
  }

  bool i64(int64_t& v) {
    uint64_t u;
    if (!u64(u)) return false;
    v = static_cast<int64_t>(u);
    return true;
  }

  bool bytes(Bytes& out, size_t n) {
    if (remaining() < n) return false;
    out.assign(data_ + off_, data_ + off_ + n);
    off_ += n;
    return true;
  }

  template <size_t N>
  bool fixed(std::array<uint8_t, N>& out) {
    if (remaining() < N) return false;
    std::memcpy(out.data(), data_ + off_, N);
    off_ += N;
    return true;
  }

 private:
  const uint8_t* data_;
  size_t len_;
  size_t off_ = 0;
};

}  // namespace dagsync
