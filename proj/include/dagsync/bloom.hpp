#pragma once

#include <stdexcept>
#include <vector>

#include "dagsync/bytes.hpp"

namespace dagsync {

// Thrown by decode_bloom for truncated, oversized, or inconsistent input.
struct MalformedFilter : std::runtime_error {
  explicit MalformedFilter(const std::string& what) : std::runtime_error(what) {}
};

// Fixed-size bloom filter over 32-byte message ids. Bit indices come from
// double hashing: the first two little-endian 64-bit words of the id seed
// index_i = (a + i*b) mod m_bits for i in [0, k).
struct BloomFilter {
  uint32_t k = 0;       // number of hash functions
  uint32_t m_bits = 0;  // filter width in bits
  Bytes bits;           // ceil(m_bits / 8) bytes, little bit-endian per byte

  bool operator==(const BloomFilter&) const = default;
};

// Builds a filter sized at bits_per_entry bits per item (minimum 8 bits),
// rounded up to a whole byte. With the default 10 bits per entry and 7 hash
// functions the false-positive rate is (1 - e^{-7/10})^7, about 0.8%.
BloomFilter make_bloom(const std::vector<Hash>& items, uint32_t bits_per_entry = 10,
                       uint32_t k = 7);

// True if the item's bits are all set. No false negatives for inserted items.
bool bloom_member(const BloomFilter& filter, const Hash& item);

// Wire form: [u32le k][u32le m_bits][bit bytes]. Empty filter is 9 bytes.
Bytes encode_bloom(const BloomFilter& filter);

// Strict inverse of encode_bloom; throws MalformedFilter on any deviation.
BloomFilter decode_bloom(const Bytes& data);

}  // namespace dagsync
