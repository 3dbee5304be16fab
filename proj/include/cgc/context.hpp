#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cgc/seqio.hpp"

namespace cgc {

// Per-read sequential context machine. state() is the coding state for the
// symbol about to be processed; advance() consumes it. Implementations cover
// raw order/position contexts, binned and nested lookups, and hidden-state
// transition tables, so every model pipeline drives coding and evaluation
// through the same interface.
class StateMap {
public:
    virtual ~StateMap() = default;
    virtual std::size_t stateCount() const = 0;
    virtual std::unique_ptr<class StateCursor> cursor() const = 0;

    // States per position for a whole read (cursor convenience).
    void mapRead(std::span<const Symbol> symbols, std::vector<std::uint32_t>& out) const;
};

class StateCursor {
public:
    virtual ~StateCursor() = default;
    virtual void reset() = 0;
    virtual std::uint32_t state() const = 0;
    virtual void advance(Symbol x) = 0;
};

struct ContextSpec {
    enum class Kind : std::uint8_t { Order, Position, PositionAndPrev };

    Kind kind = Kind::Order;
    std::uint32_t order = 0;  // Order
    std::uint32_t maxPos = 0; // Position / PositionAndPrev

    static ContextSpec orderN(std::uint32_t l) { return {Kind::Order, l, 0}; }
    static ContextSpec position(std::uint32_t maxPos) { return {Kind::Position, 0, maxPos}; }
    static ContextSpec positionAndPrev(std::uint32_t maxPos) {
        return {Kind::PositionAndPrev, 0, maxPos};
    }

    std::size_t contextCount(std::uint32_t m) const;
    // Window start within a read: l for Order (shorter reads yield none),
    // 0 otherwise.
    std::size_t firstWindowPosition() const;
};

// Start-of-read scheme for order-l contexts: position j < l gets a dedicated
// context block with order-min(j, cap) history, cap chosen so a block level
// stays <= 1024 contexts.
std::uint32_t prefixOrderCap(std::uint32_t m);
std::size_t prefixContextCount(std::uint32_t m, std::uint32_t order);

// Raw context machine for a spec, including the order-l prefix block: states
// [0, contextCount) are steady-state contexts, prefix contexts follow.
class RawContextMap final : public StateMap {
public:
    RawContextMap(ContextSpec spec, std::uint32_t m);
    std::size_t stateCount() const override { return total_; }
    std::size_t mainCount() const { return main_; }
    std::unique_ptr<StateCursor> cursor() const override;
    const ContextSpec& spec() const { return spec_; }
    std::uint32_t alphabetSize() const { return m_; }

private:
    ContextSpec spec_;
    std::uint32_t m_;
    std::size_t main_ = 0;
    std::size_t total_ = 0;
    std::uint32_t prefixCap_ = 0;
    friend class RawContextCursor;
};

// counts[c][x] over (context, next symbol) windows. Probabilities come out
// smoothed: a cell epsilon of 1/(|W| m) on the joint closed-forms to
//   row(c,x)  = (n_cx + 1/m) / (n_c + 1)
//   mass(c)   = (n_c + 1) / (|W| + |C|)
// which keeps pooling linear (pooled mass/rows are exact sums), so merge
// costs telescope exactly.
struct ContextStats {
    std::vector<std::uint64_t> counts; // row-major [contexts][m]
    std::size_t contexts = 0;
    std::uint32_t m = 0;
    std::uint64_t windowTotal = 0;
    bool empty = false; // flagged when no window fit any read

    std::uint64_t at(std::size_t c, std::size_t x) const { return counts[c * m + x]; }
    std::uint64_t& at(std::size_t c, std::size_t x) { return counts[c * m + x]; }
    std::uint64_t rowTotal(std::size_t c) const;
    double epsilon() const; // 1/(|W| m)

    double rawContextProb(std::size_t c) const;      // n_c / |W|
    double smoothContextProb(std::size_t c) const;   // (n_c + 1) / (|W| + |C|)
    void smoothRow(std::size_t c, std::span<double> out) const;
    std::vector<double> smoothRowVec(std::size_t c) const;

    void add(const ContextStats& other); // cell-wise merge (sharded collection)

    std::vector<std::uint8_t> serialize() const;              // "CST1"
    static ContextStats deserialize(ByteReader& in);
    void writeCsv(std::ostream& out) const;
};

struct RateReport {
    double bpv = 0.0;
    // (p_c, H(P_c)) for contexts with raw p_c > 0
    std::vector<std::pair<double, double>> perContext;
};

// Windows sharded across threads and merged by addition; result independent
// of thread count.
ContextStats collectStats(const Dataset& data, const ContextSpec& spec, int threads = 1);

// Counts over a StateMap's full state space, every position of every read
// (prefix states included). Used to fit model tables.
ContextStats collectStateCounts(const Dataset& data, const StateMap& map, int threads = 1);

// Shannon entropy in bits; entries must be >= 0 and sum to 1 within 1e-9.
double entropy(std::span<const double> dist);

RateReport rate(const ContextStats& stats);

// Rate after pooling contexts by `binOf` (smoothed-joint pooling; exact
// complement of merge-cost telescoping). binOf[c] in [0, nBins).
double binnedRate(const ContextStats& stats, std::span<const std::uint16_t> binOf,
                  std::size_t nBins);

// Conditional model: a shared state machine plus one smoothed distribution
// per state. probs rows sum to 1.
struct ConditionalModel {
    std::shared_ptr<const StateMap> map;
    std::vector<double> probs; // [stateCount][m]
    std::uint32_t m = 0;

    std::span<const double> row(std::size_t state) const {
        return {probs.data() + state * m, m};
    }
};

// Fit a model on data: state counts + per-row smoothing (n_sx+1/m)/(n_s+1).
ConditionalModel fitModel(const Dataset& data, std::shared_ptr<const StateMap> map,
                          int threads = 1);

// Mean bits/value of coding data with the model; every position is charged
// (prefix states carry their own rows). Errors on zero-probability symbols.
double empiricalBpv(const Dataset& data, const ConditionalModel& model);

// Bits for a single read under the model (not normalized).
double readBits(std::span<const Symbol> symbols, const ConditionalModel& model);

} // namespace cgc
