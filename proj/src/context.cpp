#include "cgc/context.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <thread>

namespace cgc {

namespace {
constexpr std::size_t kMaxContexts = std::size_t(1) << 24;
constexpr std::size_t kMaxTableCells = std::size_t(1) << 26;

std::size_t powChecked(std::uint32_t m, std::uint32_t l) {
    std::size_t v = 1;
    for (std::uint32_t i = 0; i < l; ++i) {
        v *= m;
        if (v > kMaxContexts) throw InvalidArgument("context set exceeds 2^24 guard");
    }
    return v;
}
} // namespace

void StateMap::mapRead(std::span<const Symbol> symbols, std::vector<std::uint32_t>& out) const {
    out.resize(symbols.size());
    auto cur = cursor();
    cur->reset();
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        out[i] = cur->state();
        cur->advance(symbols[i]);
    }
}

std::size_t ContextSpec::contextCount(std::uint32_t m) const {
    switch (kind) {
    case Kind::Order: return powChecked(m, order);
    case Kind::Position: return maxPos;
    case Kind::PositionAndPrev: return std::size_t(maxPos) * m;
    }
    throw InvalidArgument("bad context spec");
}

std::size_t ContextSpec::firstWindowPosition() const {
    return kind == Kind::Order ? order : 0;
}

std::uint32_t prefixOrderCap(std::uint32_t m) {
    std::uint32_t cap = 0;
    std::size_t v = 1;
    while (v * m <= 1024) {
        v *= m;
        ++cap;
    }
    return cap;
}

std::size_t prefixContextCount(std::uint32_t m, std::uint32_t order) {
    const std::uint32_t cap = prefixOrderCap(m);
    std::size_t total = 0, p = 1;
    for (std::uint32_t j = 0; j < order; ++j) {
        total += p;
        if (j < cap) p *= m;
    }
    return total;
}

namespace {

class RawContextCursor final : public StateCursor {
public:
    RawContextCursor(const RawContextMap& map) : map_(map) {
        const std::uint32_t m = map_.alphabetSize();
        const auto& spec = map_.spec();
        if (spec.kind == ContextSpec::Kind::Order) {
            modFull_ = 1;
            for (std::uint32_t i = 0; i < spec.order; ++i) modFull_ *= m;
            // prefix block offsets and per-position history modulus
            prefixOffset_.resize(spec.order);
            prefixMod_.resize(spec.order);
            std::size_t off = 0, p = 1;
            const std::uint32_t cap = prefixOrderCap(m);
            for (std::uint32_t j = 0; j < spec.order; ++j) {
                prefixOffset_[j] = off;
                prefixMod_[j] = p;
                off += p;
                if (j < cap) p *= m;
            }
        }
        reset();
    }

    void reset() override {
        pos_ = 0;
        ctx_ = 0;
    }

    std::uint32_t state() const override {
        const auto& spec = map_.spec();
        const std::uint32_t m = map_.alphabetSize();
        switch (spec.kind) {
        case ContextSpec::Kind::Order:
            if (pos_ >= spec.order) return static_cast<std::uint32_t>(ctx_);
            return static_cast<std::uint32_t>(map_.mainCount() + prefixOffset_[pos_] +
                                              ctx_ % prefixMod_[pos_]);
        case ContextSpec::Kind::Position:
            return static_cast<std::uint32_t>(std::min<std::size_t>(pos_, spec.maxPos - 1));
        case ContextSpec::Kind::PositionAndPrev:
            return static_cast<std::uint32_t>(std::min<std::size_t>(pos_, spec.maxPos - 1) * m +
                                              prev_);
        }
        return 0;
    }

    void advance(Symbol x) override {
        const auto& spec = map_.spec();
        if (spec.kind == ContextSpec::Kind::Order && spec.order > 0) {
            const std::uint32_t m = map_.alphabetSize();
            ctx_ = (ctx_ % (modFull_ / m)) * m + x;
        }
        prev_ = x;
        ++pos_;
    }

private:
    const RawContextMap& map_;
    std::size_t pos_ = 0;
    std::size_t ctx_ = 0; // rolling order-l id, most recent symbol in low digit
    Symbol prev_ = 0;
    std::size_t modFull_ = 1;
    std::vector<std::size_t> prefixOffset_;
    std::vector<std::size_t> prefixMod_;
};

} // namespace

RawContextMap::RawContextMap(ContextSpec spec, std::uint32_t m) : spec_(spec), m_(m) {
    if (m < 2) throw InvalidArgument("alphabet size must be >= 2");
    if ((spec.kind == ContextSpec::Kind::Position ||
         spec.kind == ContextSpec::Kind::PositionAndPrev) &&
        spec.maxPos == 0)
        throw InvalidArgument("position context needs maxPos >= 1");
    main_ = spec.contextCount(m);
    total_ = main_;
    if (spec.kind == ContextSpec::Kind::Order) total_ += prefixContextCount(m, spec.order);
    prefixCap_ = prefixOrderCap(m);
    if (total_ * m > kMaxTableCells) throw InvalidArgument("context table exceeds cell guard");
}

std::unique_ptr<StateCursor> RawContextMap::cursor() const {
    return std::make_unique<RawContextCursor>(*this);
}

std::uint64_t ContextStats::rowTotal(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::uint32_t x = 0; x < m; ++x) t += at(c, x);
    return t;
}

double ContextStats::epsilon() const {
    return windowTotal ? 1.0 / (double(windowTotal) * m) : 0.0;
}

double ContextStats::rawContextProb(std::size_t c) const {
    return windowTotal ? double(rowTotal(c)) / double(windowTotal) : 0.0;
}

double ContextStats::smoothContextProb(std::size_t c) const {
    return (double(rowTotal(c)) + 1.0) / (double(windowTotal) + double(contexts));
}

void ContextStats::smoothRow(std::size_t c, std::span<double> out) const {
    const double invM = 1.0 / m;
    const double denom = double(rowTotal(c)) + 1.0;
    for (std::uint32_t x = 0; x < m; ++x) out[x] = (double(at(c, x)) + invM) / denom;
}

std::vector<double> ContextStats::smoothRowVec(std::size_t c) const {
    std::vector<double> out(m);
    smoothRow(c, out);
    return out;
}

void ContextStats::add(const ContextStats& other) {
    if (other.contexts != contexts || other.m != m)
        throw InvalidArgument("stats shape mismatch in merge");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    windowTotal += other.windowTotal;
    empty = windowTotal == 0;
}

std::vector<std::uint8_t> ContextStats::serialize() const {
    ByteWriter w;
    w.magic("CST1");
    w.u32(m);
    w.u32(static_cast<std::uint32_t>(contexts));
    for (std::uint64_t c : counts) w.u64(c);
    return std::move(w.bytes);
}

ContextStats ContextStats::deserialize(ByteReader& in) {
    in.magic("CST1");
    ContextStats s;
    s.m = in.u32();
    s.contexts = in.u32();
    if (s.m < 1 || s.contexts < 1 || std::size_t(s.m) * s.contexts > kMaxTableCells)
        throw FormatError("bad stats dimensions");
    s.counts.resize(s.contexts * s.m);
    for (auto& c : s.counts) c = in.u64();
    s.windowTotal = 0;
    for (std::uint64_t c : s.counts) s.windowTotal += c;
    s.empty = s.windowTotal == 0;
    return s;
}

void ContextStats::writeCsv(std::ostream& out) const {
    out << "context,total";
    for (std::uint32_t x = 0; x < m; ++x) out << ",n" << x;
    out << '\n';
    for (std::size_t c = 0; c < contexts; ++c) {
        out << c << ',' << rowTotal(c);
        for (std::uint32_t x = 0; x < m; ++x) out << ',' << at(c, x);
        out << '\n';
    }
}

namespace {

// Shard reads across threads, merge by addition.
template <typename PerRead>
void forEachReadSharded(const Dataset& data, int threads, const PerRead& fn) {
    const std::size_t n = data.reads.size();
    if (threads <= 1 || n < 64) {
        for (std::size_t i = 0; i < n; ++i) fn(0, data.reads[i]);
        return;
    }
    const int t = std::min<int>(threads, 8);
    std::vector<std::thread> pool;
    for (int w = 0; w < t; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += t) fn(w, data.reads[i]);
        });
    for (auto& th : pool) th.join();
}

ContextStats collectImpl(const Dataset& data, const StateMap& map, bool mainWindowsOnly,
                         std::size_t mainCount, int threads) {
    const std::uint32_t m = data.alphabet.size;
    const std::size_t states = map.stateCount();
    if (states * m > kMaxTableCells) throw InvalidArgument("context table exceeds cell guard");

    const int t = (threads <= 1 || data.reads.size() < 64) ? 1 : std::min(threads, 8);
    std::vector<ContextStats> shards(t);
    std::vector<std::unique_ptr<StateCursor>> cursors;
    for (int w = 0; w < t; ++w) {
        shards[w].contexts = mainWindowsOnly ? mainCount : states;
        shards[w].m = m;
        shards[w].counts.assign(shards[w].contexts * m, 0);
        cursors.push_back(map.cursor());
    }
    forEachReadSharded(data, t, [&](int w, const Read& r) {
        auto& s = shards[w];
        auto& cur = *cursors[w];
        cur.reset();
        for (Symbol x : r.bases) {
            const std::uint32_t st = cur.state();
            if (!mainWindowsOnly || st < mainCount) {
                s.at(st, x) += 1;
                ++s.windowTotal;
            }
            cur.advance(x);
        }
    });
    ContextStats out = std::move(shards[0]);
    for (int w = 1; w < t; ++w) out.add(shards[w]);
    out.empty = out.windowTotal == 0;
    return out;
}

} // namespace

ContextStats collectStats(const Dataset& data, const ContextSpec& spec, int threads) {
    RawContextMap map(spec, data.alphabet.size);
    return collectImpl(data, map, true, map.mainCount(), threads);
}

ContextStats collectStateCounts(const Dataset& data, const StateMap& map, int threads) {
    return collectImpl(data, map, false, map.stateCount(), threads);
}

double entropy(std::span<const double> dist) {
    double sum = 0.0, h = 0.0;
    for (double p : dist) {
        if (p < 0.0) throw InvalidArgument("negative probability");
        sum += p;
        if (p > 0.0) h -= p * std::log2(p);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("distribution does not sum to 1");
    return h;
}

RateReport rate(const ContextStats& stats) {
    if (stats.windowTotal == 0) throw InvalidArgument("rate of empty stats");
    RateReport rep;
    std::vector<double> row(stats.m);
    for (std::size_t c = 0; c < stats.contexts; ++c) {
        stats.smoothRow(c, row);
        double h = 0.0;
        for (double p : row)
            if (p > 0.0) h -= p * std::log2(p);
        const double mass = stats.smoothContextProb(c);
        rep.bpv += mass * h;
        if (stats.rowTotal(c) > 0) rep.perContext.emplace_back(mass, h);
    }
    return rep;
}

double binnedRate(const ContextStats& stats, std::span<const std::uint16_t> binOf,
                  std::size_t nBins) {
    if (stats.windowTotal == 0) throw InvalidArgument("rate of empty stats");
    if (binOf.size() != stats.contexts) throw InvalidArgument("binning size mismatch");
    const double invM = 1.0 / stats.m;
    // pooled smoothed joint: cell (c,x) carries n_cx + 1/m before the global
    // 1/(|W|+|C|) normalization
    std::vector<double> pooled(nBins * stats.m, 0.0);
    for (std::size_t c = 0; c < stats.contexts; ++c) {
        double* row = pooled.data() + std::size_t(binOf[c]) * stats.m;
        for (std::uint32_t x = 0; x < stats.m; ++x) row[x] += double(stats.at(c, x)) + invM;
    }
    const double norm = double(stats.windowTotal) + double(stats.contexts);
    double bpv = 0.0;
    for (std::size_t b = 0; b < nBins; ++b) {
        const double* row = pooled.data() + b * stats.m;
        double mass = 0.0;
        for (std::uint32_t x = 0; x < stats.m; ++x) mass += row[x];
        if (mass <= 0.0) continue;
        double h = 0.0;
        for (std::uint32_t x = 0; x < stats.m; ++x)
            if (row[x] > 0.0) h -= row[x] / mass * std::log2(row[x] / mass);
        bpv += mass / norm * h;
    }
    return bpv;
}

ConditionalModel fitModel(const Dataset& data, std::shared_ptr<const StateMap> map, int threads) {
    ContextStats counts = collectStateCounts(data, *map, threads);
    ConditionalModel model;
    model.map = std::move(map);
    model.m = counts.m;
    model.probs.resize(counts.contexts * counts.m);
    for (std::size_t s = 0; s < counts.contexts; ++s)
        counts.smoothRow(s, {model.probs.data() + s * counts.m, counts.m});
    return model;
}

double empiricalBpv(const Dataset& data, const ConditionalModel& model) {
    const std::size_t n = data.totalSymbols();
    if (n == 0) throw InvalidArgument("empiricalBpv of empty dataset");
    double bits = 0.0;
    auto cur = model.map->cursor();
    std::size_t pos = 0;
    for (const auto& r : data.reads) {
        cur->reset();
        for (Symbol x : r.bases) {
            const double p = model.row(cur->state())[x];
            if (!(p > 0.0))
                throw InvalidArgument("zero model probability at symbol " + std::to_string(pos));
            bits -= std::log2(p);
            cur->advance(x);
            ++pos;
        }
    }
    return bits / double(n);
}

double readBits(std::span<const Symbol> symbols, const ConditionalModel& model) {
    double bits = 0.0;
    auto cur = model.map->cursor();
    cur->reset();
    for (Symbol x : symbols) {
        bits -= std::log2(model.row(cur->state())[x]);
        cur->advance(x);
    }
    return bits;
}

} // namespace cgc
