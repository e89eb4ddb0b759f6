#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "grdo/common.hpp"

namespace grdo {

// Total mass of a quantized probability table. Small enough that the range
// coder's 2^24 renormalization bound keeps at least 9 bits of quotient
// precision per symbol.
inline constexpr uint32_t kFrequencyTotal = 1u << 15;

// Static symbol-frequency table shared bit-exactly by encoder and decoder:
// both sides build the cumulative row from the same u16 counts.
struct FrequencyTable {
  std::vector<uint16_t> counts;
  std::vector<uint32_t> cumulative;  // counts.size() + 1 entries

  size_t symbols() const { return counts.size(); }
  uint32_t total() const { return cumulative.empty() ? 0 : cumulative.back(); }

  static FrequencyTable from_counts(std::vector<uint16_t> counts) {
    FrequencyTable t;
    t.counts = std::move(counts);
    t.cumulative.resize(t.counts.size() + 1);
    t.cumulative[0] = 0;
    for (size_t s = 0; s < t.counts.size(); ++s) {
      t.cumulative[s + 1] = t.cumulative[s] + t.counts[s];
    }
    if (t.total() == 0) throw std::invalid_argument("FrequencyTable: all counts zero");
    return t;
  }

  // Largest-remainder quantization of a probability vector to kFrequencyTotal
  // counts. Every nonzero probability gets at least one count.
  static FrequencyTable quantize(const std::vector<double>& probs) {
    const uint32_t target = kFrequencyTotal;
    size_t nonzero = 0;
    for (double p : probs) {
      if (p > 0.0) ++nonzero;
    }
    if (nonzero == 0) throw std::invalid_argument("FrequencyTable: no nonzero probability");
    if (nonzero * 2 > target) {
      throw std::invalid_argument("FrequencyTable: too many symbols for the count budget");
    }
    std::vector<uint16_t> counts(probs.size(), 0);
    std::vector<double> remainder(probs.size(), 0.0);
    int64_t sum = 0;
    for (size_t s = 0; s < probs.size(); ++s) {
      if (probs[s] <= 0.0) continue;
      const double raw = probs[s] * target;
      const double fl = std::floor(raw);
      counts[s] = static_cast<uint16_t>(std::max(1.0, std::min<double>(fl, target)));
      remainder[s] = raw - fl;
      sum += counts[s];
    }
    if (sum < target) {
      // Hand out the leftover units by descending remainder, ties to the
      // smaller symbol.
      std::vector<uint32_t> order;
      for (size_t s = 0; s < probs.size(); ++s) {
        if (probs[s] > 0.0) order.push_back(static_cast<uint32_t>(s));
      }
      std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        return remainder[a] > remainder[b];
      });
      size_t k = 0;
      while (sum < target) {
        ++counts[order[k % order.size()]];
        ++sum;
        ++k;
      }
    }
    while (sum > target) {
      // The +1 floors can overshoot; take the excess back from the largest
      // counts, never dropping below one.
      for (size_t s = 0; s < counts.size() && sum > target; ++s) {
        if (counts[s] > 1) {
          --counts[s];
          --sum;
        }
      }
    }
    return from_counts(std::move(counts));
  }

  // Ideal code length of a symbol stream under this (quantized) table.
  double ideal_bits(std::span<const uint32_t> symbols) const {
    const double tot = total();
    double bits = 0.0;
    for (uint32_t s : symbols) bits += -std::log2(counts[s] / tot);
    return bits;
  }
};

namespace detail {

inline constexpr uint32_t kRangeTop = 1u << 24;

// Carry-correct byte-wise range encoder (the classic 64-bit-low scheme).
class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq, uint32_t tot) {
    range_ /= tot;
    low_ += static_cast<uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kRangeTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<uint8_t> finish() {
    for (int k = 0; k < 5; ++k) shift_low();
    return std::move(bytes_);
  }

 private:
  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      uint8_t byte = cache_;
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      do {
        bytes_.push_back(static_cast<uint8_t>(byte + carry));
        byte = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFull) << 8;
  }

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  std::vector<uint8_t> bytes_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
    for (int k = 0; k < 5; ++k) code_ = (code_ << 8) | next_byte();
  }

  uint32_t decode_freq(uint32_t tot) {
    range_ /= tot;
    return std::min(tot - 1, static_cast<uint32_t>(code_ / range_));
  }

  void decode_update(uint32_t cum, uint32_t freq) {
    code_ -= static_cast<uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kRangeTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

 private:
  uint8_t next_byte() { return pos_ < bytes_.size() ? bytes_[pos_++] : 0; }

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint64_t code_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace detail

// Lossless arithmetic coding of a symbol stream under a static table. An
// empty stream encodes to zero bytes.
inline std::vector<uint8_t> arithmetic_encode(std::span<const uint32_t> symbols,
                                              const FrequencyTable& table) {
  if (symbols.empty()) return {};
  detail::RangeEncoder enc;
  const uint32_t tot = table.total();
  for (uint32_t s : symbols) {
    if (s >= table.symbols() || table.counts[s] == 0) {
      throw std::invalid_argument("arithmetic_encode: symbol has zero probability");
    }
    enc.encode(table.cumulative[s], table.counts[s], tot);
  }
  return enc.finish();
}

inline std::vector<uint32_t> arithmetic_decode(std::span<const uint8_t> bytes,
                                               const FrequencyTable& table, size_t count) {
  std::vector<uint32_t> symbols;
  if (count == 0) return symbols;
  symbols.reserve(count);
  detail::RangeDecoder dec(bytes);
  const uint32_t tot = table.total();
  for (size_t k = 0; k < count; ++k) {
    const uint32_t f = dec.decode_freq(tot);
    // Find s with cumulative[s] <= f < cumulative[s+1].
    const auto it = std::upper_bound(table.cumulative.begin(), table.cumulative.end(), f);
    const uint32_t s = static_cast<uint32_t>(it - table.cumulative.begin()) - 1;
    dec.decode_update(table.cumulative[s], table.counts[s]);
    symbols.push_back(s);
  }
  return symbols;
}

}  // namespace grdo
