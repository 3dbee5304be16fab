#include "cgc/rans.hpp"

#include <algorithm>
#include <numeric>

namespace cgc {

FreqTable FreqTable::fromFreqs(std::vector<std::uint32_t> f) {
    FreqTable t;
    t.freqs = std::move(f);
    t.cum.resize(t.freqs.size() + 1);
    t.cum[0] = 0;
    for (std::size_t i = 0; i < t.freqs.size(); ++i) {
        if (t.freqs[i] == 0) throw InvalidArgument("zero frequency");
        t.cum[i + 1] = t.cum[i] + t.freqs[i];
    }
    if (t.cum.back() != kFreqScale) throw InvalidArgument("frequencies must sum to 2^12");
    return t;
}

namespace {

FreqTable normalizeImpl(std::span<const double> weights, std::uint32_t precision) {
    const std::size_t m = weights.size();
    const std::uint32_t target = 1u << precision;
    if (m == 0 || m > target) throw InvalidArgument("alphabet does not fit the precision");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw InvalidArgument("negative count");
        total += w;
    }
    if (total <= 0.0) throw InvalidArgument("at least one positive count required");

    std::vector<std::uint32_t> f(m);
    std::vector<std::pair<double, std::size_t>> remainder(m);
    std::uint64_t assigned = 0;
    for (std::size_t i = 0; i < m; ++i) {
        const double ideal = weights[i] / total * target;
        f[i] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(ideal));
        remainder[i] = {ideal - double(f[i]), i};
        assigned += f[i];
    }
    if (assigned < target) {
        // hand out the shortfall by largest remainder, index as tie-break
        std::sort(remainder.begin(), remainder.end(),
                  [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first > b.first;
                      return a.second < b.second;
                  });
        std::uint64_t left = target - assigned;
        std::size_t i = 0;
        while (left > 0) {
            f[remainder[i].second] += 1;
            --left;
            i = (i + 1) % m;
        }
    } else if (assigned > target) {
        // floor-to-1 overshoot: take back from the largest entry, one at a time
        std::uint64_t over = assigned - target;
        while (over > 0) {
            std::size_t big = 0;
            for (std::size_t i = 1; i < m; ++i)
                if (f[i] > f[big]) big = i;
            if (f[big] <= 1) throw InvalidArgument("cannot normalize: too many symbols");
            f[big] -= 1;
            over -= 1;
        }
    }
    FreqTable t = FreqTable::fromFreqs(std::move(f));
    return t;
}

} // namespace

FreqTable normalizeFreqs(std::span<const std::uint64_t> counts, std::uint32_t precision) {
    std::vector<double> w(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) w[i] = double(counts[i]);
    return normalizeImpl(w, precision);
}

FreqTable normalizeWeights(std::span<const double> weights, std::uint32_t precision) {
    return normalizeImpl(weights, precision);
}

void RansEncoder::put(std::uint32_t cumStart, std::uint32_t freq) {
    wide_.push_back((std::uint64_t(cumStart) << 32) | freq);
}

std::vector<std::uint8_t> RansEncoder::finish() const {
    std::vector<std::uint8_t> renorm; // emitted while encoding in reverse
    renorm.reserve(wide_.size() / 2 + 8);
    std::uint32_t x = kRansLow;
    for (std::size_t i = wide_.size(); i-- > 0;) {
        const auto cumStart = static_cast<std::uint32_t>(wide_[i] >> 32);
        const auto freq = static_cast<std::uint32_t>(wide_[i] & 0xffffffffu);
        const std::uint32_t xMax = ((kRansLow >> kFreqBits) << 8) * freq;
        while (x >= xMax) {
            renorm.push_back(static_cast<std::uint8_t>(x & 0xff));
            x >>= 8;
        }
        x = ((x / freq) << kFreqBits) + (x % freq) + cumStart;
    }
    std::vector<std::uint8_t> out;
    out.reserve(4 + renorm.size());
    out.push_back(static_cast<std::uint8_t>(x));
    out.push_back(static_cast<std::uint8_t>(x >> 8));
    out.push_back(static_cast<std::uint8_t>(x >> 16));
    out.push_back(static_cast<std::uint8_t>(x >> 24));
    out.insert(out.end(), renorm.rbegin(), renorm.rend());
    return out;
}

RansDecoder::RansDecoder(std::span<const std::uint8_t> payload) : payload_(payload) {
    if (payload.size() < 4) throw FormatError("truncated payload");
    state_ = std::uint32_t(payload[0]) | (std::uint32_t(payload[1]) << 8) |
             (std::uint32_t(payload[2]) << 16) | (std::uint32_t(payload[3]) << 24);
    pos_ = 4;
    if (state_ < kRansLow) throw FormatError("coder state out of range");
}

void RansDecoder::consume(std::uint32_t cumStart, std::uint32_t freq) {
    const std::uint32_t s = slot();
    state_ = freq * (state_ >> kFreqBits) + s - cumStart;
    while (state_ < kRansLow) {
        if (pos_ >= payload_.size()) throw FormatError("truncated payload");
        state_ = (state_ << 8) | payload_[pos_++];
    }
}

std::uint32_t RansDecoder::decode(const FreqTable& table) {
    const std::uint32_t s = slot();
    // cum is strictly increasing; find the symbol whose [cum, cum+freq) holds s
    const auto it = std::upper_bound(table.cum.begin(), table.cum.end(), s);
    const auto sym = static_cast<std::uint32_t>(it - table.cum.begin() - 1);
    consume(table.cum[sym], table.freqs[sym]);
    return sym;
}

bool RansDecoder::finishedClean() const {
    return state_ == kRansLow && pos_ == payload_.size();
}

std::vector<std::uint8_t> ransEncode(std::span<const std::uint16_t> symbols,
                                     const FreqTable& table) {
    RansEncoder enc;
    for (std::uint16_t s : symbols) enc.put(table, s);
    return enc.finish();
}

std::vector<std::uint16_t> ransDecode(std::span<const std::uint8_t> payload, std::size_t n,
                                      const FreqTable& table) {
    RansDecoder dec(payload);
    std::vector<std::uint16_t> out(n);
    for (auto& s : out) s = static_cast<std::uint16_t>(dec.decode(table));
    if (!dec.finishedClean()) throw FormatError("corrupt payload");
    return out;
}

} // namespace cgc
