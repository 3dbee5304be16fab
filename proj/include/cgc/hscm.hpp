#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cgc/binning.hpp"
#include "cgc/context.hpp"

namespace cgc {

// Mixed-radix packing of per-level bin ids:
//   state = c1 + nc1*(c2 + nc2*(c3 + ...))
struct RadixLayout {
    std::vector<std::uint32_t> levelBinCounts;

    std::size_t stateCount() const;
    std::uint32_t encode(std::span<const std::uint32_t> digits) const;
    void decode(std::uint32_t state, std::span<std::uint32_t> digits) const;
};

// Single-table hidden-state model: state = next[state][val], one emission
// row per state.
struct TransitionTable {
    std::uint32_t stateCount = 0;
    std::uint32_t m = 0;
    RadixLayout layout;             // informational for packed-window tables
    std::vector<std::uint32_t> next; // [stateCount][m]
    std::vector<double> emit;        // [stateCount][m], rows sum to 1

    std::uint32_t nextState(std::uint32_t s, Symbol x) const { return next[s * m + x]; }
    std::span<const double> emitRow(std::uint32_t s) const { return {emit.data() + s * m, m}; }

    // "HSC1": stateCount, m, next ids, emission rows as 16-bit normalized
    // frequencies (sum 4096 per row, every symbol >= 1).
    std::vector<std::uint8_t> serialize() const;
    static TransitionTable deserialize(ByteReader& in);
};

// Transition for a shifting window of hierarchically binned previous values:
// binnings[0] maps raw symbols to nc1 bins, binnings[j] maps level-j bins to
// nc(j+1) bins. Emissions start uniform; fit with fitEmissions.
TransitionTable buildHcbTransition(const std::vector<BinningTable>& binnings,
                                   const RadixLayout& layout);

void fitEmissions(TransitionTable& table, const Dataset& data, int threads = 1);

// Chain binnings trained level by level (level j sees the level j-1
// representation of the symbol j+1 positions back), then packed.
TransitionTable trainHcbModel(const Dataset& data, const std::vector<std::size_t>& budgets,
                              int threads = 1);

class HscmStateMap final : public StateMap {
public:
    explicit HscmStateMap(std::shared_ptr<const TransitionTable> table);
    std::size_t stateCount() const override { return table_->stateCount; }
    std::unique_ptr<StateCursor> cursor() const override;
    const TransitionTable& table() const { return *table_; }

private:
    std::shared_ptr<const TransitionTable> table_;
};

ConditionalModel hscmModel(std::shared_ptr<const TransitionTable> table);

// Explicit multi-lookup evaluation of the same chain (one table per level,
// applied to progressively older symbols); reference path for the packed
// transition table.
double nestedChainBpv(const Dataset& data, const std::vector<BinningTable>& binnings,
                      const RadixLayout& layout, const TransitionTable& table);

// ---------------------------------------------------------------------------
// Continuous relaxation with softmax-parametrised transitions/emissions.

struct SoftHscm {
    std::uint32_t stateCount = 0;
    std::uint32_t m = 0;
    std::vector<double> t; // transition logits [r][x][s]
    std::vector<double> d; // emission logits [s][x]
    std::vector<std::int32_t> fixedTarget; // [r][x]; -1 = free row

    bool rowFixed(std::uint32_t r, std::uint32_t x) const {
        return fixedTarget[r * m + x] >= 0;
    }
    // softmax over targets, or one-hot for fixed rows
    void transitionRow(std::uint32_t r, std::uint32_t x, std::span<double> out) const;
    void emissionMatrix(std::vector<double>& out) const; // [s][x]
};

struct StateBelief {
    std::vector<std::vector<double>> rows; // one length-stateCount row per position
};

struct ForwardResult {
    StateBelief belief;
    double F = 0.0; // sum over positions of E[ln Pr(x_i | s_i)], nats
};

ForwardResult forwardEvaluate(const SoftHscm& model, std::span<const Symbol> sequence);
ForwardResult forwardEvaluate(const SoftHscm& model, const Dataset& data);

struct SoftOptions {
    bool bayesEmissions = true; // eliminate d via the belief estimate
    std::uint64_t seed = 1;
    double initNoise = 0.01;    // symmetry-breaking jitter on the uniform init
};

SoftHscm initSoft(std::uint32_t stateCount, std::uint32_t m, const SoftOptions& opts);

// Plain gradient ascent on F with step halving on any F decrease; returns
// parameters whose F is no worse than the initialization's.
SoftHscm optimizeSoft(const Dataset& data, std::uint32_t stateCount, std::uint32_t steps,
                      double stepSize, const SoftOptions& opts = {});
void optimizeSoftInPlace(SoftHscm& model, const Dataset& data, std::uint32_t steps,
                         double stepSize, const SoftOptions& opts = {});

// dF/d(logits) for the current parameters (free rows only; fixed rows get
// zeros). Exposed for finite-difference verification.
struct SoftGradient {
    std::vector<double> t;
    std::vector<double> d;
    double F = 0.0;
};
SoftGradient softGradient(const SoftHscm& model, const Dataset& data);

// Interleave gradient optimization with fixing the highest-probability free
// transition row until all rows are one-hot; emissions from the belief
// estimate.
TransitionTable determinize(SoftHscm model, const Dataset& data, std::uint32_t innerSteps = 40,
                            double stepSize = 0.5, const SoftOptions& opts = {});

} // namespace cgc
