#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "cgc/context.hpp"

namespace cgc {

// Bits/value cost of pooling two weighted distributions:
//   (p_a + p_b) H(pool) - p_a H(P_a) - p_b H(P_b)
// Non-negative by entropy concavity.
double mergeDelta(double pa, std::span<const double> Pa, double pb, std::span<const double> Pb);

struct MergeTree {
    struct Node {
        double p = 0.0;
        std::vector<double> dist;
        double mergeCost = 0.0; // 0 for leaves
        std::int32_t left = -1, right = -1;
        std::uint32_t minMember = 0, maxMember = 0;
        std::vector<std::uint32_t> leafContexts; // leaves only (unseen leaf pools several)
    };

    std::vector<Node> nodes; // leaves first, then internals in creation order
    std::size_t leafCount = 0;
    std::size_t root = 0;
    std::uint32_t contextCount = 0;
    std::uint32_t m = 0;
    double fullRate = 0.0;  // rate with every context distinguished
    double totalPenalty = 0.0; // sum of all merge costs (= root-cut penalty)

    bool isLeaf(std::size_t i) const { return nodes[i].left < 0; }
    // All contexts covered by node i (leafContexts of its leaf descendants).
    std::vector<std::uint32_t> members(std::size_t i) const;
    void toJson(std::ostream& out) const;
};

struct BinningTable {
    std::vector<std::uint16_t> bins; // context id -> bin id
    std::uint32_t nBins = 0;
    double penaltyBpv = 0.0;

    std::vector<std::uint8_t> serialize() const; // "CBN1"
    static BinningTable deserialize(ByteReader& in);
};

struct CutCriterion {
    enum class Kind : std::uint8_t { MaxBins, MaxPenalty, MaxStepCost };
    Kind kind = Kind::MaxBins;
    std::size_t maxBins = 1;
    double bpv = 0.0;

    static CutCriterion maxBins(std::size_t k) { return {Kind::MaxBins, k, 0.0}; }
    static CutCriterion maxPenalty(double b) { return {Kind::MaxPenalty, 0, b}; }
    static CutCriterion maxStepCost(double b) { return {Kind::MaxStepCost, 0, b}; }
};

// Greedy agglomerative merging over the stats' contexts. Empty contexts are
// pre-pooled into one designated leaf. Deterministic: equal deltas prefer the
// pair with the smaller min member id, then smaller max member id.
MergeTree buildMergeTree(const ContextStats& stats, std::size_t maxMergeContexts = 4096);

// Antichain cut grown from the root by splitting the costliest frontier node
// until the criterion binds; bin ids ordered by smallest member context.
BinningTable cutTree(const MergeTree& tree, const CutCriterion& criterion);

// Renumber fine bins so that coarse.bins[c] == renumbered.bins[c] / groupSize
// for every context; fine id space padded to coarse.nBins * groupSize.
BinningTable enumerateForShift(const BinningTable& fine, const BinningTable& coarse,
                               std::uint32_t groupSize);

// Coarse binning over an existing fine binning with every coarse bin holding
// at most groupSize fine bins (so a shift renumbering exists): greedy merge
// skipping capacity-breaking candidates. statsOnFine rows are indexed by fine
// bin id.
BinningTable rebinForShift(const BinningTable& fine, const ContextStats& statsOnFine,
                           std::uint32_t groupSize, std::size_t targetBins);

enum class NestScheme : std::uint8_t { Symmetric, Asymmetric, Hierarchical };

// Composite model over a window of targetOrder previous symbols reduced by a
// chain of pair binnings; exposes the lookup structure and the fitted
// per-state distributions.
struct NestedModel {
    NestScheme scheme = NestScheme::Symmetric;
    std::uint32_t targetOrder = 2;
    std::uint32_t m = 0;

    // Symmetric: one table per level; level 0 maps symbol pairs, level j maps
    // pairs of level j-1 bins. Asymmetric: levels[0] is the (renumbered) near
    // pair table, far lookup is levels[0] >> shift.
    std::vector<BinningTable> levels;
    std::uint32_t shift = 0;      // Asymmetric
    std::uint32_t farBins = 0;    // Asymmetric

    // Hierarchical: a tree of pair tables; each node either bins the next
    // pair (one child per bin) or is a terminal state.
    struct HierNode {
        std::optional<BinningTable> table; // over m^2 raw pair ids; absent => terminal
        std::vector<std::unique_ptr<HierNode>> children;
        std::uint32_t state = 0; // terminal only
    };
    std::shared_ptr<HierNode> hier;

    std::size_t stateCount = 0;  // composite steady states
    std::shared_ptr<const StateMap> map; // full map incl. start-of-read block
    ConditionalModel model;      // fitted distributions over map's states

    double bpv(const Dataset& data) const { return empiricalBpv(data, model); }
};

NestedModel nestedBinning(const Dataset& data, NestScheme scheme, std::uint32_t targetOrder,
                          const std::vector<std::size_t>& budgets, int threads = 1);

// State machine for an order-l context reduced by a binning table, with the
// usual start-of-read block appended after the nBins steady states.
class BinnedContextMap final : public StateMap {
public:
    BinnedContextMap(std::uint32_t order, std::uint32_t m, std::shared_ptr<const BinningTable> bins);
    std::size_t stateCount() const override;
    std::size_t mainCount() const { return bins_->nBins; }
    std::unique_ptr<StateCursor> cursor() const override;

    std::uint32_t order() const { return order_; }
    std::uint32_t alphabetSize() const { return m_; }
    const BinningTable& table() const { return *bins_; }

private:
    std::uint32_t order_;
    std::uint32_t m_;
    std::shared_ptr<const BinningTable> bins_;
    std::size_t prefixCount_;
    std::shared_ptr<const StateMap> impl_;
};

// State machine for a NestedModel's composite lookup (plus start block).
std::shared_ptr<const StateMap> nestedStateMap(const NestedModel& model);

} // namespace cgc
