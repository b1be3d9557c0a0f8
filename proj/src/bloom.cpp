#include "dagsync/bloom.hpp"

namespace dagsync {

namespace {

constexpr uint32_t kMaxBits = 1u << 30;
constexpr uint32_t kMaxHashes = 255;

uint64_t read_u64le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

void bit_positions(const BloomFilter& f, const Hash& item, uint64_t* out) {
  uint64_t a = read_u64le(item.data());
  uint64_t b = read_u64le(item.data() + 8);
  uint64_t x = a;
  for (uint32_t i = 0; i < f.k; i++) {
    out[i] = x % f.m_bits;
    x += b;  // wraps mod 2^64
  }
}

}  // namespace

BloomFilter make_bloom(const std::vector<Hash>& items, uint32_t bits_per_entry,
                       uint32_t k) {
  BloomFilter f;
  f.k = k < 1 ? 1 : (k > kMaxHashes ? kMaxHashes : k);
  uint64_t bits = static_cast<uint64_t>(bits_per_entry) * items.size();
  if (bits < 8) bits = 8;
  bits = (bits + 7) / 8 * 8;
  if (bits > kMaxBits) bits = kMaxBits;
  f.m_bits = static_cast<uint32_t>(bits);
  f.bits.assign(f.m_bits / 8, 0);
  uint64_t idx[kMaxHashes];
  for (const Hash& item : items) {
    bit_positions(f, item, idx);
    for (uint32_t i = 0; i < f.k; i++) {
      f.bits[idx[i] / 8] |= static_cast<uint8_t>(1u << (idx[i] % 8));
    }
  }
  return f;
}

bool bloom_member(const BloomFilter& filter, const Hash& item) {
  if (filter.m_bits == 0 || filter.k == 0 || filter.k > kMaxHashes) return false;
  if (static_cast<uint64_t>(filter.bits.size()) * 8 < filter.m_bits) return false;
  uint64_t idx[kMaxHashes];
  bit_positions(filter, item, idx);
  for (uint32_t i = 0; i < filter.k; i++) {
    if (!(filter.bits[idx[i] / 8] & (1u << (idx[i] % 8)))) return false;
  }
  return true;
}

Bytes encode_bloom(const BloomFilter& filter) {
  Bytes out;
  out.reserve(8 + filter.bits.size());
  put_u32(out, filter.k);
  put_u32(out, filter.m_bits);
  put_bytes(out, filter.bits);
  return out;
}

BloomFilter decode_bloom(const Bytes& data) {
  Reader r(data);
  BloomFilter f;
  if (!r.u32(f.k) || !r.u32(f.m_bits))
    throw MalformedFilter("filter header truncated");
  if (f.k < 1 || f.k > kMaxHashes)
    throw MalformedFilter("hash function count out of range");
  if (f.m_bits < 8 || f.m_bits > kMaxBits)
    throw MalformedFilter("filter width out of range");
  size_t expect = (static_cast<size_t>(f.m_bits) + 7) / 8;
  if (r.remaining() != expect)
    throw MalformedFilter("filter body length mismatch");
  if (!r.bytes(f.bits, expect)) throw MalformedFilter("filter body truncated");
  return f;
}

}  // namespace dagsync
