#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cgc/serial.hpp"

namespace cgc {

// One fixed coder profile: 32-bit state, byte renormalization, lower bound
// 2^23, 12-bit frequencies.
inline constexpr std::uint32_t kFreqBits = 12;
inline constexpr std::uint32_t kFreqScale = 1u << kFreqBits;
inline constexpr std::uint32_t kRansLow = 1u << 23;

struct FreqTable {
    std::vector<std::uint32_t> freqs; // m entries, each >= 1, sum == kFreqScale
    std::vector<std::uint32_t> cum;   // m+1 entries, cum[0] == 0

    std::size_t symbols() const { return freqs.size(); }
    static FreqTable fromFreqs(std::vector<std::uint32_t> f);
};

// Proportional scaling to sum 2^precision with every symbol >= 1;
// largest-remainder correction hits the exact sum.
FreqTable normalizeFreqs(std::span<const std::uint64_t> counts, std::uint32_t precision = kFreqBits);
FreqTable normalizeWeights(std::span<const double> weights, std::uint32_t precision = kFreqBits);

// Payload layout: 4-byte final state (little endian), then renormalization
// bytes in decode order. Symbols are recorded forward via put() and encoded
// in reverse at finish(), so adaptive schedules see symbols in decoder order.
class RansEncoder {
public:
    void put(std::uint32_t cumStart, std::uint32_t freq);
    void put(const FreqTable& table, std::uint32_t symbol) {
        put(table.cum[symbol], table.freqs[symbol]);
    }
    std::vector<std::uint8_t> finish() const;
    std::size_t symbolCount() const { return wide_.size(); }

private:
    std::vector<std::uint64_t> wide_; // (cumStart, freq) pairs in forward order
};

class RansDecoder {
public:
    explicit RansDecoder(std::span<const std::uint8_t> payload);

    std::uint32_t slot() const { return state_ & (kFreqScale - 1); }
    std::uint32_t decode(const FreqTable& table); // slot -> symbol, then advance
    void consume(std::uint32_t cumStart, std::uint32_t freq);
    // true when the final state matches the encoder start and every byte was
    // used; checked after the declared symbol count
    bool finishedClean() const;

private:
    std::span<const std::uint8_t> payload_;
    std::size_t pos_ = 0;
    std::uint32_t state_ = 0;
};

// Static-table conveniences used by tests and the container.
std::vector<std::uint8_t> ransEncode(std::span<const std::uint16_t> symbols,
                                     const FreqTable& table);
std::vector<std::uint16_t> ransDecode(std::span<const std::uint8_t> payload, std::size_t n,
                                      const FreqTable& table);

} // namespace cgc
