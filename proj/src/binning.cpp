#include "cgc/binning.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <queue>

namespace cgc {

namespace {
constexpr double kDeltaClamp = 1e-15; // rounding noise floor before tie-breaking

double entropyRaw(std::span<const double> p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log2(v);
    return h;
}
} // namespace

double mergeDelta(double pa, std::span<const double> Pa, double pb, std::span<const double> Pb) {
    const double p = pa + pb;
    if (p <= 0.0) return 0.0;
    double merged = 0.0, ha = 0.0, hb = 0.0;
    for (std::size_t x = 0; x < Pa.size(); ++x) {
        const double q = (pa * Pa[x] + pb * Pb[x]) / p;
        if (q > 0.0) merged -= q * std::log2(q);
        if (Pa[x] > 0.0) ha -= Pa[x] * std::log2(Pa[x]);
        if (Pb[x] > 0.0) hb -= Pb[x] * std::log2(Pb[x]);
    }
    return p * merged - pa * ha - pb * hb;
}

std::vector<std::uint32_t> MergeTree::members(std::size_t i) const {
    std::vector<std::uint32_t> out;
    std::vector<std::size_t> stack{i};
    while (!stack.empty()) {
        const std::size_t n = stack.back();
        stack.pop_back();
        if (isLeaf(n)) {
            out.insert(out.end(), nodes[n].leafContexts.begin(), nodes[n].leafContexts.end());
        } else {
            stack.push_back(static_cast<std::size_t>(nodes[n].left));
            stack.push_back(static_cast<std::size_t>(nodes[n].right));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void MergeTree::toJson(std::ostream& out) const {
    out << "{\"contextCount\":" << contextCount << ",\"leafCount\":" << leafCount
        << ",\"fullRateBpv\":" << fullRate << ",\"totalPenaltyBpv\":" << totalPenalty
        << ",\"root\":" << root << ",\"nodes\":[";
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (i) out << ',';
        out << "{\"id\":" << i << ",\"p\":" << n.p << ",\"mergeCost\":" << n.mergeCost;
        if (isLeaf(i)) {
            out << ",\"members\":[";
            for (std::size_t j = 0; j < n.leafContexts.size(); ++j)
                out << (j ? "," : "") << n.leafContexts[j];
            out << ']';
        } else {
            out << ",\"left\":" << n.left << ",\"right\":" << n.right;
        }
        out << '}';
    }
    out << "]}";
}

std::vector<std::uint8_t> BinningTable::serialize() const {
    ByteWriter w;
    w.magic("CBN1");
    w.u32(static_cast<std::uint32_t>(bins.size()));
    w.u32(nBins);
    for (std::uint16_t b : bins) w.u16(b);
    return std::move(w.bytes);
}

BinningTable BinningTable::deserialize(ByteReader& in) {
    in.magic("CBN1");
    BinningTable t;
    const std::uint32_t n = in.u32();
    t.nBins = in.u32();
    t.bins.resize(n);
    for (auto& b : t.bins) {
        b = in.u16();
        if (b >= t.nBins) throw FormatError("bin id out of range");
    }
    return t;
}

namespace {

struct Candidate {
    double delta;
    std::uint32_t a, b; // node indices, a < b
};

// Greedy pairwise merging; `nodes` must be pre-filled with leaves and
// reserved for 2*leaves-1 entries so comparator references stay valid.
// Candidates whose union would exceed `capacity` members are discarded.
// Stops when `stopCount` nodes remain available (or no candidate is left).
std::vector<std::uint32_t> greedyMergeLoop(std::vector<MergeTree::Node>& nodes,
                                           std::vector<std::uint32_t>& sizes,
                                           std::size_t capacity, std::size_t stopCount) {
    const std::size_t leaves = nodes.size();
    auto worse = [&nodes](const Candidate& l, const Candidate& r) {
        if (l.delta != r.delta) return l.delta > r.delta;
        const std::uint32_t lMin = std::min(nodes[l.a].minMember, nodes[l.b].minMember);
        const std::uint32_t rMin = std::min(nodes[r.a].minMember, nodes[r.b].minMember);
        if (lMin != rMin) return lMin > rMin;
        const std::uint32_t lMax = std::max(nodes[l.a].maxMember, nodes[l.b].maxMember);
        const std::uint32_t rMax = std::max(nodes[r.a].maxMember, nodes[r.b].maxMember);
        if (lMax != rMax) return lMax > rMax;
        if (l.a != r.a) return l.a > r.a;
        return l.b > r.b;
    };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> heap(worse);

    std::vector<char> available(leaves, 1);
    auto push = [&](std::uint32_t a, std::uint32_t b) {
        if (std::size_t(sizes[a]) + sizes[b] > capacity) return;
        double d = mergeDelta(nodes[a].p, nodes[a].dist, nodes[b].p, nodes[b].dist);
        if (d < kDeltaClamp) d = 0.0;
        heap.push({d, std::min(a, b), std::max(a, b)});
    };
    for (std::uint32_t a = 0; a < leaves; ++a)
        for (std::uint32_t b = a + 1; b < leaves; ++b) push(a, b);

    std::size_t liveCount = leaves;
    while (liveCount > stopCount && !heap.empty()) {
        Candidate cur = heap.top();
        heap.pop();
        while (!available[cur.a] || !available[cur.b]) {
            if (heap.empty()) {
                liveCount = 0; // force loop exit; gather below
                break;
            }
            cur = heap.top();
            heap.pop();
        }
        if (liveCount == 0) break;
        if (!available[cur.a] || !available[cur.b]) break;

        available[cur.a] = available[cur.b] = 0;
        MergeTree::Node n;
        const auto& A = nodes[cur.a];
        const auto& B = nodes[cur.b];
        n.p = A.p + B.p;
        n.dist.resize(A.dist.size());
        for (std::size_t x = 0; x < n.dist.size(); ++x)
            n.dist[x] = (A.p * A.dist[x] + B.p * B.dist[x]) / n.p;
        n.mergeCost = cur.delta;
        n.left = static_cast<std::int32_t>(cur.a);
        n.right = static_cast<std::int32_t>(cur.b);
        n.minMember = std::min(A.minMember, B.minMember);
        n.maxMember = std::max(A.maxMember, B.maxMember);
        const auto id = static_cast<std::uint32_t>(nodes.size());
        nodes.push_back(std::move(n));
        sizes.push_back(sizes[cur.a] + sizes[cur.b]);
        available.push_back(1);
        --liveCount;
        for (std::uint32_t o = 0; o + 1 < id; ++o)
            if (available[o]) push(o, id);
    }
    std::vector<std::uint32_t> live;
    for (std::uint32_t i = 0; i < nodes.size(); ++i)
        if (available[i]) live.push_back(i);
    return live;
}

} // namespace

MergeTree buildMergeTree(const ContextStats& stats, std::size_t maxMergeContexts) {
    if (stats.windowTotal == 0) throw InvalidArgument("all contexts empty");

    MergeTree tree;
    tree.contextCount = static_cast<std::uint32_t>(stats.contexts);
    tree.m = stats.m;

    std::vector<std::uint32_t> emptyCtx;
    for (std::size_t c = 0; c < stats.contexts; ++c) {
        if (stats.rowTotal(c) == 0) {
            emptyCtx.push_back(static_cast<std::uint32_t>(c));
            continue;
        }
        MergeTree::Node leaf;
        leaf.p = stats.smoothContextProb(c);
        leaf.dist = stats.smoothRowVec(c);
        leaf.minMember = leaf.maxMember = static_cast<std::uint32_t>(c);
        leaf.leafContexts = {static_cast<std::uint32_t>(c)};
        tree.nodes.push_back(std::move(leaf));
    }
    if (!emptyCtx.empty()) {
        // empty rows all smooth to uniform; their pooled leaf merges for free
        MergeTree::Node leaf;
        leaf.p = 0.0;
        for (std::uint32_t c : emptyCtx) leaf.p += stats.smoothContextProb(c);
        leaf.dist.assign(stats.m, 1.0 / stats.m);
        leaf.minMember = emptyCtx.front();
        leaf.maxMember = emptyCtx.back();
        leaf.leafContexts = emptyCtx;
        tree.nodes.push_back(std::move(leaf));
    }
    tree.leafCount = tree.nodes.size();
    if (tree.leafCount > maxMergeContexts)
        throw InvalidArgument("too many non-empty contexts for greedy merging (" +
                              std::to_string(tree.leafCount) + " > " +
                              std::to_string(maxMergeContexts) + ")");

    for (std::size_t i = 0; i < tree.leafCount; ++i)
        tree.fullRate += tree.nodes[i].p * entropyRaw(tree.nodes[i].dist);

    tree.nodes.reserve(2 * tree.leafCount - 1);
    std::vector<std::uint32_t> sizes(tree.leafCount, 1);
    const auto live = greedyMergeLoop(tree.nodes, sizes, std::size_t(-1), 1);
    tree.root = live.front();
    for (std::size_t i = tree.leafCount; i < tree.nodes.size(); ++i)
        tree.totalPenalty += tree.nodes[i].mergeCost;
    return tree;
}

BinningTable cutTree(const MergeTree& tree, const CutCriterion& criterion) {
    // max-heap over internal frontier nodes by mergeCost; equal costs split
    // the smaller-min-member node first
    auto lower = [&tree](std::size_t a, std::size_t b) {
        if (tree.nodes[a].mergeCost != tree.nodes[b].mergeCost)
            return tree.nodes[a].mergeCost < tree.nodes[b].mergeCost;
        return tree.nodes[a].minMember > tree.nodes[b].minMember;
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(lower)> internals(lower);
    std::vector<std::size_t> frontierLeaves;
    auto add = [&](std::size_t n) {
        if (tree.isLeaf(n))
            frontierLeaves.push_back(n);
        else
            internals.push(n);
    };
    add(tree.root);
    double penalty = tree.totalPenalty;
    std::size_t frontierSize = 1;

    auto shouldSplit = [&]() -> bool {
        if (internals.empty()) return false;
        switch (criterion.kind) {
        case CutCriterion::Kind::MaxBins:
            return frontierSize < std::min(criterion.maxBins, tree.leafCount);
        case CutCriterion::Kind::MaxPenalty: return penalty > criterion.bpv;
        case CutCriterion::Kind::MaxStepCost:
            return tree.nodes[internals.top()].mergeCost > criterion.bpv;
        }
        return false;
    };
    while (shouldSplit()) {
        const std::size_t n = internals.top();
        internals.pop();
        penalty -= tree.nodes[n].mergeCost;
        add(static_cast<std::size_t>(tree.nodes[n].left));
        add(static_cast<std::size_t>(tree.nodes[n].right));
        ++frontierSize;
    }

    std::vector<std::size_t> frontier = frontierLeaves;
    while (!internals.empty()) {
        frontier.push_back(internals.top());
        internals.pop();
    }
    std::sort(frontier.begin(), frontier.end(), [&tree](std::size_t a, std::size_t b) {
        return tree.nodes[a].minMember < tree.nodes[b].minMember;
    });

    BinningTable table;
    table.nBins = static_cast<std::uint32_t>(frontier.size());
    table.bins.assign(tree.contextCount, 0);
    table.penaltyBpv = std::max(0.0, penalty);
    for (std::size_t b = 0; b < frontier.size(); ++b)
        for (std::uint32_t c : tree.members(frontier[b]))
            table.bins[c] = static_cast<std::uint16_t>(b);
    return table;
}

BinningTable enumerateForShift(const BinningTable& fine, const BinningTable& coarse,
                               std::uint32_t groupSize) {
    if (fine.bins.size() != coarse.bins.size())
        throw InvalidArgument("fine/coarse context count mismatch");
    if (groupSize == 0 || (groupSize & (groupSize - 1)) != 0)
        throw InvalidArgument("groupSize must be a power of two");
    if (std::size_t(coarse.nBins) * groupSize < fine.nBins)
        throw InvalidArgument("coarse.nBins * groupSize must cover fine bins");

    constexpr std::uint32_t kUnset = 0xffffffff;
    std::vector<std::uint32_t> coarseOf(fine.nBins, kUnset);
    for (std::size_t c = 0; c < fine.bins.size(); ++c) {
        const std::uint16_t f = fine.bins[c];
        if (coarseOf[f] == kUnset)
            coarseOf[f] = coarse.bins[c];
        else if (coarseOf[f] != coarse.bins[c])
            throw InvalidArgument("fine bin maps to two coarse bins");
    }

    std::vector<std::vector<std::uint32_t>> groups(coarse.nBins);
    for (std::uint32_t f = 0; f < fine.nBins; ++f)
        if (coarseOf[f] != kUnset) groups[coarseOf[f]].push_back(f);
    std::vector<std::uint32_t> renumber(fine.nBins, kUnset);
    for (std::uint32_t g = 0; g < coarse.nBins; ++g) {
        if (groups[g].size() > groupSize)
            throw InvalidArgument("coarse bin exceeds groupSize capacity");
        for (std::size_t i = 0; i < groups[g].size(); ++i)
            renumber[groups[g][i]] = g * groupSize + static_cast<std::uint32_t>(i);
    }

    BinningTable out;
    out.nBins = coarse.nBins * groupSize;
    out.penaltyBpv = fine.penaltyBpv;
    out.bins.resize(fine.bins.size());
    for (std::size_t c = 0; c < fine.bins.size(); ++c)
        out.bins[c] = static_cast<std::uint16_t>(renumber[fine.bins[c]]);
    return out;
}

BinningTable rebinForShift(const BinningTable& fine, const ContextStats& statsOnFine,
                           std::uint32_t groupSize, std::size_t targetBins) {
    if (statsOnFine.contexts != fine.nBins)
        throw InvalidArgument("statsOnFine must have one row per fine bin");
    std::vector<MergeTree::Node> nodes;
    nodes.reserve(2 * std::size_t(fine.nBins) - 1);
    for (std::uint32_t f = 0; f < fine.nBins; ++f) {
        MergeTree::Node leaf;
        leaf.p = statsOnFine.smoothContextProb(f);
        leaf.dist = statsOnFine.smoothRowVec(f);
        leaf.minMember = leaf.maxMember = f;
        leaf.leafContexts = {f};
        nodes.push_back(std::move(leaf));
    }
    std::vector<std::uint32_t> sizes(fine.nBins, 1);
    const auto live = greedyMergeLoop(nodes, sizes, groupSize, targetBins);

    std::vector<std::uint32_t> order(live.begin(), live.end());
    std::sort(order.begin(), order.end(), [&nodes](std::uint32_t a, std::uint32_t b) {
        return nodes[a].minMember < nodes[b].minMember;
    });
    double penalty = fine.penaltyBpv;
    for (std::size_t i = fine.nBins; i < nodes.size(); ++i) penalty += nodes[i].mergeCost;

    std::vector<std::uint32_t> coarseOfFine(fine.nBins, 0);
    for (std::uint32_t bin = 0; bin < order.size(); ++bin) {
        std::vector<std::uint32_t> stack{order[bin]};
        while (!stack.empty()) {
            const std::uint32_t n = stack.back();
            stack.pop_back();
            if (nodes[n].left < 0) {
                coarseOfFine[nodes[n].leafContexts.front()] = bin;
            } else {
                stack.push_back(static_cast<std::uint32_t>(nodes[n].left));
                stack.push_back(static_cast<std::uint32_t>(nodes[n].right));
            }
        }
    }

    BinningTable out;
    out.nBins = static_cast<std::uint32_t>(order.size());
    out.penaltyBpv = penalty;
    out.bins.resize(fine.bins.size());
    for (std::size_t c = 0; c < fine.bins.size(); ++c)
        out.bins[c] = static_cast<std::uint16_t>(coarseOfFine[fine.bins[c]]);
    return out;
}

// ---------------------------------------------------------------------------
// Composite state maps

namespace {

// StateMap built on a raw order-l machine whose steady contexts are reduced
// by a pure function; the start-of-read block follows the reduced states.
class TranslatedContextMap : public StateMap {
public:
    TranslatedContextMap(std::uint32_t order, std::uint32_t m, std::size_t mainBins)
        : inner_(ContextSpec::orderN(order), m), mainBins_(mainBins) {}

    std::size_t stateCount() const override {
        return mainBins_ + (inner_.stateCount() - inner_.mainCount());
    }
    std::unique_ptr<StateCursor> cursor() const override;
    virtual std::uint32_t translate(std::uint32_t rawCtx) const = 0;

    const RawContextMap& inner() const { return inner_; }
    std::size_t mainBins() const { return mainBins_; }

private:
    RawContextMap inner_;
    std::size_t mainBins_;
};

class TranslatedCursor final : public StateCursor {
public:
    explicit TranslatedCursor(const TranslatedContextMap& map)
        : map_(map), innerCur_(map.inner().cursor()) {}
    void reset() override { innerCur_->reset(); }
    std::uint32_t state() const override {
        const std::uint32_t s = innerCur_->state();
        if (s < map_.inner().mainCount()) return map_.translate(s);
        return static_cast<std::uint32_t>(map_.mainBins() +
                                          (s - map_.inner().mainCount()));
    }
    void advance(Symbol x) override { innerCur_->advance(x); }

private:
    const TranslatedContextMap& map_;
    std::unique_ptr<StateCursor> innerCur_;
};

} // namespace

std::unique_ptr<StateCursor> TranslatedContextMap::cursor() const {
    return std::make_unique<TranslatedCursor>(*this);
}

namespace {

std::uint32_t pairId(std::uint32_t near, std::uint32_t far, std::uint32_t radix) {
    return near + radix * far;
}

// b_0(k) = T0[pair of digits k,k+1]; b_j(k) = Tj[(b_{j-1}(k), b_{j-1}(k+2^j))]
std::uint32_t chainValue(std::span<const std::shared_ptr<const BinningTable>> levels,
                         std::size_t level, std::size_t offset, std::uint32_t m,
                         std::span<const std::uint32_t> digits) {
    if (level == 0) return levels[0]->bins[pairId(digits[offset], digits[offset + 1], m)];
    const std::uint32_t near = chainValue(levels, level - 1, offset, m, digits);
    const std::uint32_t far =
        chainValue(levels, level - 1, offset + (std::size_t(1) << level), m, digits);
    return levels[level]->bins[pairId(near, far, levels[level - 1]->nBins)];
}

void decodeDigits(std::uint32_t rawCtx, std::uint32_t m, std::span<std::uint32_t> digits) {
    std::uint32_t v = rawCtx;
    for (auto& d : digits) {
        d = v % m;
        v /= m;
    }
}

class SymmetricTranslation final : public TranslatedContextMap {
public:
    SymmetricTranslation(std::uint32_t targetOrder, std::uint32_t m,
                         std::vector<std::shared_ptr<const BinningTable>> levels,
                         std::size_t mainBins)
        : TranslatedContextMap(targetOrder, m, mainBins), m_(m), levels_(std::move(levels)) {}

    std::uint32_t translate(std::uint32_t rawCtx) const override {
        std::vector<std::uint32_t> digits(std::size_t(1) << levels_.size());
        decodeDigits(rawCtx, m_, digits);
        return chainValue(levels_, levels_.size() - 1, 0, m_, digits);
    }

private:
    std::uint32_t m_;
    std::vector<std::shared_ptr<const BinningTable>> levels_;
};

// Window ids for training level j: the pair of level j-1 bins over a window
// of 2^(j+1) symbols.
class LevelWindowTranslation final : public TranslatedContextMap {
public:
    LevelWindowTranslation(std::uint32_t m,
                           std::vector<std::shared_ptr<const BinningTable>> lower,
                           std::size_t mainBins)
        : TranslatedContextMap(std::uint32_t(2) << lower.size(), m, mainBins), m_(m),
          lower_(std::move(lower)) {}

    std::uint32_t translate(std::uint32_t rawCtx) const override {
        std::vector<std::uint32_t> digits(std::size_t(2) << lower_.size());
        decodeDigits(rawCtx, m_, digits);
        const std::uint32_t near = chainValue(lower_, lower_.size() - 1, 0, m_, digits);
        const std::uint32_t far =
            chainValue(lower_, lower_.size() - 1, digits.size() / 2, m_, digits);
        return pairId(near, far, lower_.back()->nBins);
    }

private:
    std::uint32_t m_;
    std::vector<std::shared_ptr<const BinningTable>> lower_;
};

// Asymmetric order-4: near pair through the renumbered table, far pair
// through the same table shifted down.
class AsymmetricTranslation final : public TranslatedContextMap {
public:
    AsymmetricTranslation(std::uint32_t m, std::shared_ptr<const BinningTable> near,
                          std::uint32_t shift, std::uint32_t farBins)
        : TranslatedContextMap(4, m, std::size_t(near->nBins) * farBins), m_(m),
          near_(std::move(near)), shift_(shift) {}

    std::uint32_t translate(std::uint32_t rawCtx) const override {
        std::array<std::uint32_t, 4> d;
        decodeDigits(rawCtx, m_, d);
        const std::uint32_t nearBin = near_->bins[pairId(d[0], d[1], m_)];
        const std::uint32_t farBin = near_->bins[pairId(d[2], d[3], m_)] >> shift_;
        return nearBin + near_->nBins * farBin;
    }

private:
    std::uint32_t m_;
    std::shared_ptr<const BinningTable> near_;
    std::uint32_t shift_;
};

// Far evaluation for the asymmetric build: the near table applied to the
// pair two positions further back.
class FarPairTranslation final : public TranslatedContextMap {
public:
    FarPairTranslation(std::uint32_t m, std::shared_ptr<const BinningTable> near)
        : TranslatedContextMap(4, m, near->nBins), m_(m), near_(std::move(near)) {}
    std::uint32_t translate(std::uint32_t rawCtx) const override {
        std::array<std::uint32_t, 4> d;
        decodeDigits(rawCtx, m_, d);
        return near_->bins[pairId(d[2], d[3], m_)];
    }

private:
    std::uint32_t m_;
    std::shared_ptr<const BinningTable> near_;
};

class HierTranslation final : public TranslatedContextMap {
public:
    HierTranslation(std::uint32_t targetOrder, std::uint32_t m,
                    std::shared_ptr<const NestedModel::HierNode> root, std::size_t states)
        : TranslatedContextMap(targetOrder, m, states), m_(m), root_(std::move(root)) {}

    std::uint32_t translate(std::uint32_t rawCtx) const override {
        const NestedModel::HierNode* node = root_.get();
        std::uint32_t v = rawCtx;
        while (node->table) {
            const std::uint32_t d0 = v % m_;
            const std::uint32_t d1 = (v / m_) % m_;
            v /= m_ * m_;
            node = node->children[node->table->bins[pairId(d0, d1, m_)]].get();
        }
        return node->state;
    }

private:
    std::uint32_t m_;
    std::shared_ptr<const NestedModel::HierNode> root_;
};

class IdentityTranslation final : public TranslatedContextMap {
public:
    IdentityTranslation(std::uint32_t order, std::uint32_t m, std::size_t mainBins)
        : TranslatedContextMap(order, m, mainBins) {}
    std::uint32_t translate(std::uint32_t rawCtx) const override { return rawCtx; }
};

class BinnedTranslation final : public TranslatedContextMap {
public:
    BinnedTranslation(std::uint32_t order, std::uint32_t m, std::shared_ptr<const BinningTable> b)
        : TranslatedContextMap(order, m, b->nBins), bins_(std::move(b)) {}
    std::uint32_t translate(std::uint32_t rawCtx) const override { return bins_->bins[rawCtx]; }

private:
    std::shared_ptr<const BinningTable> bins_;
};

BinningTable cutBudget(const ContextStats& stats, std::size_t budget) {
    if (stats.windowTotal == 0) {
        BinningTable t;
        t.bins.assign(stats.contexts, 0);
        t.nBins = 1;
        return t;
    }
    MergeTree tree = buildMergeTree(stats);
    return cutTree(tree, CutCriterion::maxBins(budget));
}

// Stats over the main (steady window) states of a translated map.
ContextStats mainStateStats(const Dataset& data, const TranslatedContextMap& map, int threads) {
    ContextStats full = collectStateCounts(data, map, threads);
    ContextStats out;
    out.m = full.m;
    out.contexts = map.mainBins();
    out.counts.assign(full.counts.begin(),
                      full.counts.begin() + static_cast<std::ptrdiff_t>(out.contexts * out.m));
    out.windowTotal = 0;
    for (auto c : out.counts) out.windowTotal += c;
    out.empty = out.windowTotal == 0;
    return out;
}

} // namespace

BinnedContextMap::BinnedContextMap(std::uint32_t order, std::uint32_t m,
                                   std::shared_ptr<const BinningTable> bins)
    : order_(order), m_(m), bins_(std::move(bins)),
      prefixCount_(prefixContextCount(m, order)) {
    if (bins_->bins.size() != ContextSpec::orderN(order).contextCount(m))
        throw InvalidArgument("binning table size does not match order-l context count");
    impl_ = std::make_shared<BinnedTranslation>(order_, m_, bins_);
}

std::size_t BinnedContextMap::stateCount() const { return bins_->nBins + prefixCount_; }

std::unique_ptr<StateCursor> BinnedContextMap::cursor() const { return impl_->cursor(); }

NestedModel nestedBinning(const Dataset& data, NestScheme scheme, std::uint32_t targetOrder,
                          const std::vector<std::size_t>& budgets, int threads) {
    const std::uint32_t m = data.alphabet.size;
    NestedModel out;
    out.scheme = scheme;
    out.targetOrder = targetOrder;
    out.m = m;

    if (scheme == NestScheme::Symmetric) {
        if (targetOrder < 2 || (targetOrder & (targetOrder - 1)) != 0)
            throw InvalidArgument("symmetric nesting needs a power-of-two targetOrder");
        std::size_t levelCount = 0;
        for (std::uint32_t v = targetOrder; v > 1; v >>= 1) ++levelCount;
        if (budgets.size() != levelCount)
            throw InvalidArgument("budgets must list one bin count per level");

        std::vector<std::shared_ptr<const BinningTable>> levels;
        for (std::size_t j = 0; j < levelCount; ++j) {
            std::unique_ptr<TranslatedContextMap> levelMap;
            if (j == 0) {
                levelMap = std::make_unique<IdentityTranslation>(2u, m, std::size_t(m) * m);
            } else {
                const std::size_t wContexts =
                    std::size_t(levels.back()->nBins) * levels.back()->nBins;
                levelMap = std::make_unique<LevelWindowTranslation>(m, levels, wContexts);
            }
            ContextStats stats = mainStateStats(data, *levelMap, threads);
            const std::size_t budget = std::min(budgets[j], stats.contexts);
            levels.push_back(std::make_shared<BinningTable>(cutBudget(stats, budget)));
        }
        for (const auto& t : levels) out.levels.push_back(*t);
        out.stateCount = levels.back()->nBins;
        out.map = std::make_shared<SymmetricTranslation>(targetOrder, m, levels, out.stateCount);
    } else if (scheme == NestScheme::Asymmetric) {
        if (targetOrder != 4) throw InvalidArgument("asymmetric nesting supports targetOrder 4");
        if (budgets.size() != 2) throw InvalidArgument("asymmetric nesting needs two budgets");
        if (budgets[1] == 0 || budgets[0] % budgets[1] != 0 ||
            ((budgets[0] / budgets[1]) & (budgets[0] / budgets[1] - 1)) != 0)
            throw InvalidArgument("near/far budget ratio must be a power of two");
        const auto groupSize = static_cast<std::uint32_t>(budgets[0] / budgets[1]);

        IdentityTranslation pairMap(2u, m, std::size_t(m) * m);
        ContextStats pairStats = mainStateStats(data, pairMap, threads);
        const std::size_t nearBudget = std::min(budgets[0], pairStats.contexts);
        auto near = std::make_shared<BinningTable>(cutBudget(pairStats, nearBudget));

        FarPairTranslation farMap(m, near);
        ContextStats farStats = mainStateStats(data, farMap, threads);
        BinningTable coarse = rebinForShift(*near, farStats, groupSize, budgets[1]);
        BinningTable renumbered = enumerateForShift(*near, coarse, groupSize);
        renumbered.penaltyBpv = near->penaltyBpv;

        std::uint32_t shift = 0;
        while ((1u << shift) < groupSize) ++shift;
        auto nearPtr = std::make_shared<BinningTable>(std::move(renumbered));
        out.levels.push_back(*nearPtr);
        out.levels.push_back(coarse);
        out.shift = shift;
        out.farBins = coarse.nBins;
        out.stateCount = std::size_t(nearPtr->nBins) * coarse.nBins;
        out.map = std::make_shared<AsymmetricTranslation>(m, nearPtr, shift, coarse.nBins);
    } else {
        if (targetOrder < 2 || targetOrder % 2 != 0)
            throw InvalidArgument("hierarchical nesting needs an even targetOrder");
        const std::size_t depth = targetOrder / 2;
        if (budgets.size() != depth)
            throw InvalidArgument("budgets must list one bin count per level");

        struct Win {
            std::uint32_t read, pos;
        };
        std::vector<Win> windows;
        for (std::uint32_t r = 0; r < data.reads.size(); ++r)
            for (std::size_t i = targetOrder; i < data.reads[r].bases.size(); ++i)
                windows.push_back({r, static_cast<std::uint32_t>(i)});

        std::uint32_t nextState = 0;
        const std::size_t minWindows = std::size_t(16) * m;

        auto build = [&](auto&& self, std::vector<Win> wins,
                         std::size_t level) -> std::unique_ptr<NestedModel::HierNode> {
            auto node = std::make_unique<NestedModel::HierNode>();
            if (level >= depth || wins.size() < minWindows) {
                node->state = nextState++;
                return node;
            }
            ContextStats stats;
            stats.m = m;
            stats.contexts = std::size_t(m) * m;
            stats.counts.assign(stats.contexts * m, 0);
            for (const auto& w : wins) {
                const auto& s = data.reads[w.read].bases;
                const std::uint32_t pid =
                    pairId(s[w.pos - 2 * level - 1], s[w.pos - 2 * level - 2], m);
                stats.at(pid, s[w.pos]) += 1;
                ++stats.windowTotal;
            }
            const std::size_t budget = std::min(budgets[level], stats.contexts);
            node->table = cutBudget(stats, budget);
            std::vector<std::vector<Win>> parts(node->table->nBins);
            for (const auto& w : wins) {
                const auto& s = data.reads[w.read].bases;
                const std::uint32_t pid =
                    pairId(s[w.pos - 2 * level - 1], s[w.pos - 2 * level - 2], m);
                parts[node->table->bins[pid]].push_back(w);
            }
            wins.clear();
            wins.shrink_to_fit();
            for (auto& part : parts)
                node->children.push_back(self(self, std::move(part), level + 1));
            return node;
        };
        auto root = std::shared_ptr<NestedModel::HierNode>(build(build, std::move(windows), 0));
        out.hier = root;
        out.stateCount = nextState;
        out.map = std::make_shared<HierTranslation>(targetOrder, m, root, out.stateCount);
    }

    out.model = fitModel(data, out.map, threads);
    return out;
}

std::shared_ptr<const StateMap> nestedStateMap(const NestedModel& model) { return model.map; }

} // namespace cgc
