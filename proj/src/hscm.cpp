#include "cgc/hscm.hpp"

#include <algorithm>
#include <cmath>

namespace cgc {

std::size_t RadixLayout::stateCount() const {
    std::size_t n = 1;
    for (std::uint32_t nc : levelBinCounts) n *= nc;
    return n;
}

std::uint32_t RadixLayout::encode(std::span<const std::uint32_t> digits) const {
    std::uint64_t state = 0;
    for (std::size_t j = levelBinCounts.size(); j-- > 0;)
        state = state * levelBinCounts[j] + digits[j];
    return static_cast<std::uint32_t>(state);
}

void RadixLayout::decode(std::uint32_t state, std::span<std::uint32_t> digits) const {
    for (std::size_t j = 0; j < levelBinCounts.size(); ++j) {
        digits[j] = state % levelBinCounts[j];
        state /= levelBinCounts[j];
    }
}

std::vector<std::uint8_t> TransitionTable::serialize() const {
    ByteWriter w;
    w.magic("HSC1");
    w.u32(stateCount);
    w.u32(m);
    w.u8(static_cast<std::uint8_t>(layout.levelBinCounts.size()));
    for (std::uint32_t nc : layout.levelBinCounts) w.u32(nc);
    for (std::uint32_t n : next) w.u32(n);
    // emissions quantized to 12-bit frequencies, min 1 per symbol
    for (std::uint32_t s = 0; s < stateCount; ++s) {
        const FreqTable q = normalizeWeights({emit.data() + std::size_t(s) * m, m});
        for (std::uint32_t x = 0; x < m; ++x) w.u16(static_cast<std::uint16_t>(q.freqs[x]));
    }
    return std::move(w.bytes);
}

TransitionTable TransitionTable::deserialize(ByteReader& in) {
    in.magic("HSC1");
    TransitionTable t;
    t.stateCount = in.u32();
    t.m = in.u32();
    const std::uint8_t levels = in.u8();
    t.layout.levelBinCounts.resize(levels);
    for (auto& nc : t.layout.levelBinCounts) nc = in.u32();
    if (t.stateCount == 0 || t.m == 0) throw FormatError("bad transition table dimensions");
    t.next.resize(std::size_t(t.stateCount) * t.m);
    for (auto& n : t.next) {
        n = in.u32();
        if (n >= t.stateCount) throw FormatError("transition target out of range");
    }
    t.emit.resize(std::size_t(t.stateCount) * t.m);
    for (std::uint32_t s = 0; s < t.stateCount; ++s) {
        std::uint32_t total = 0;
        for (std::uint32_t x = 0; x < t.m; ++x) {
            const std::uint16_t f = in.u16();
            if (f == 0) throw FormatError("zero emission frequency");
            t.emit[std::size_t(s) * t.m + x] = f / 4096.0;
            total += f;
        }
        if (total != 4096) throw FormatError("emission row does not sum to 4096");
    }
    return t;
}

TransitionTable buildHcbTransition(const std::vector<BinningTable>& binnings,
                                   const RadixLayout& layout) {
    const std::size_t L = layout.levelBinCounts.size();
    if (binnings.size() != L) throw InvalidArgument("one binning per layout level required");
    const auto m = static_cast<std::uint32_t>(binnings[0].bins.size());
    if (binnings[0].nBins != layout.levelBinCounts[0])
        throw InvalidArgument("binnings[0] must produce nc1 bins");
    for (std::size_t j = 1; j < L; ++j) {
        if (binnings[j].bins.size() != layout.levelBinCounts[j - 1])
            throw InvalidArgument("binnings[j] must consume level-j bin ids");
        if (binnings[j].nBins != layout.levelBinCounts[j])
            throw InvalidArgument("binnings[j] must produce nc(j+1) bins");
    }

    TransitionTable t;
    t.layout = layout;
    t.stateCount = static_cast<std::uint32_t>(layout.stateCount());
    t.m = m;
    t.next.resize(std::size_t(t.stateCount) * m);
    t.emit.assign(std::size_t(t.stateCount) * m, 1.0 / m);

    std::vector<std::uint32_t> digits(L), shifted(L);
    for (std::uint32_t s = 0; s < t.stateCount; ++s) {
        layout.decode(s, digits);
        for (std::uint32_t v = 0; v < m; ++v) {
            shifted[0] = binnings[0].bins[v];
            for (std::size_t j = 1; j < L; ++j) shifted[j] = binnings[j].bins[digits[j - 1]];
            t.next[std::size_t(s) * m + v] = layout.encode(shifted);
        }
    }
    return t;
}

namespace {

class HscmCursor final : public StateCursor {
public:
    explicit HscmCursor(const TransitionTable& t) : t_(t) {}
    void reset() override { state_ = 0; }
    std::uint32_t state() const override { return state_; }
    void advance(Symbol x) override { state_ = t_.nextState(state_, x); }

private:
    const TransitionTable& t_;
    std::uint32_t state_ = 0;
};

} // namespace

HscmStateMap::HscmStateMap(std::shared_ptr<const TransitionTable> table)
    : table_(std::move(table)) {}

std::unique_ptr<StateCursor> HscmStateMap::cursor() const {
    return std::make_unique<HscmCursor>(*table_);
}

void fitEmissions(TransitionTable& table, const Dataset& data, int threads) {
    auto shared = std::make_shared<const TransitionTable>(table);
    HscmStateMap map(shared);
    ContextStats counts = collectStateCounts(data, map, threads);
    for (std::uint32_t s = 0; s < table.stateCount; ++s)
        counts.smoothRow(s, {table.emit.data() + std::size_t(s) * table.m, table.m});
}

ConditionalModel hscmModel(std::shared_ptr<const TransitionTable> table) {
    ConditionalModel model;
    model.m = table->m;
    model.probs = table->emit;
    model.map = std::make_shared<HscmStateMap>(table);
    return model;
}

TransitionTable trainHcbModel(const Dataset& data, const std::vector<std::size_t>& budgets,
                              int threads) {
    if (budgets.empty()) throw InvalidArgument("at least one level budget required");
    const std::uint32_t m = data.alphabet.size;
    const std::size_t L = budgets.size();

    // level j bins the level j-1 representation of the symbol j+1 back
    std::vector<BinningTable> binnings;
    RadixLayout layout;
    for (std::size_t j = 0; j < L; ++j) {
        const std::size_t inSize = j == 0 ? m : binnings[j - 1].nBins;
        ContextStats stats;
        stats.m = m;
        stats.contexts = inSize;
        stats.counts.assign(inSize * m, 0);
        for (const auto& r : data.reads) {
            const auto& s = r.bases;
            for (std::size_t i = j + 1; i < s.size(); ++i) {
                std::uint32_t rep = s[i - j - 1];
                for (std::size_t k = 0; k < j; ++k) rep = binnings[k].bins[rep];
                stats.at(rep, s[i]) += 1;
                ++stats.windowTotal;
            }
        }
        BinningTable table;
        if (stats.windowTotal == 0) {
            table.bins.assign(inSize, 0);
            table.nBins = 1;
        } else {
            MergeTree tree = buildMergeTree(stats);
            table = cutTree(tree, CutCriterion::maxBins(std::min(budgets[j], tree.leafCount)));
        }
        layout.levelBinCounts.push_back(table.nBins);
        binnings.push_back(std::move(table));
    }
    TransitionTable t = buildHcbTransition(binnings, layout);
    fitEmissions(t, data, threads);
    return t;
}

double nestedChainBpv(const Dataset& data, const std::vector<BinningTable>& binnings,
                      const RadixLayout& layout, const TransitionTable& table) {
    const std::size_t L = layout.levelBinCounts.size();
    const std::uint32_t m = table.m;
    double bits = 0.0;
    std::size_t n = 0;
    std::vector<std::uint32_t> digits(L), nextDigits(L);
    for (const auto& r : data.reads) {
        std::fill(digits.begin(), digits.end(), 0u);
        for (Symbol x : r.bases) {
            const std::uint32_t state = layout.encode(digits);
            bits -= std::log2(table.emit[std::size_t(state) * m + x]);
            ++n;
            nextDigits[0] = binnings[0].bins[x];
            for (std::size_t j = 1; j < L; ++j) nextDigits[j] = binnings[j].bins[digits[j - 1]];
            digits.swap(nextDigits);
        }
    }
    if (n == 0) throw InvalidArgument("empty dataset");
    return bits / double(n);
}

// ---------------------------------------------------------------------------
// Soft model

void SoftHscm::transitionRow(std::uint32_t r, std::uint32_t x, std::span<double> out) const {
    const std::int32_t fix = fixedTarget[r * m + x];
    if (fix >= 0) {
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(fix)] = 1.0;
        return;
    }
    const double* logits = t.data() + (std::size_t(r) * m + x) * stateCount;
    double mx = logits[0];
    for (std::uint32_t s = 1; s < stateCount; ++s) mx = std::max(mx, logits[s]);
    double sum = 0.0;
    for (std::uint32_t s = 0; s < stateCount; ++s) {
        out[s] = std::exp(logits[s] - mx);
        sum += out[s];
    }
    for (std::uint32_t s = 0; s < stateCount; ++s) out[s] /= sum;
}

void SoftHscm::emissionMatrix(std::vector<double>& out) const {
    out.resize(std::size_t(stateCount) * m);
    for (std::uint32_t s = 0; s < stateCount; ++s) {
        const double* logits = d.data() + std::size_t(s) * m;
        double mx = logits[0];
        for (std::uint32_t x = 1; x < m; ++x) mx = std::max(mx, logits[x]);
        double sum = 0.0;
        for (std::uint32_t x = 0; x < m; ++x) {
            out[std::size_t(s) * m + x] = std::exp(logits[x] - mx);
            sum += out[std::size_t(s) * m + x];
        }
        for (std::uint32_t x = 0; x < m; ++x) out[std::size_t(s) * m + x] /= sum;
    }
}

namespace {

struct SoftWork {
    std::vector<double> T; // [r][x][s] probabilities
    std::vector<double> E; // [s][x]

    void compute(const SoftHscm& mdl) {
        const std::uint32_t S = mdl.stateCount, m = mdl.m;
        T.resize(std::size_t(S) * m * S);
        for (std::uint32_t r = 0; r < S; ++r)
            for (std::uint32_t x = 0; x < m; ++x)
                mdl.transitionRow(r, x, {T.data() + (std::size_t(r) * m + x) * S, S});
        mdl.emissionMatrix(E);
    }
};

ForwardResult forwardImpl(const SoftHscm& mdl, const SoftWork& w, const Dataset& data,
                          bool keepBeliefs) {
    const std::uint32_t S = mdl.stateCount, m = mdl.m;
    ForwardResult res;
    std::vector<double> P(S), Pn(S);
    for (const auto& read : data.reads) {
        std::fill(P.begin(), P.end(), 0.0);
        P[0] = 1.0;
        for (Symbol x : read.bases) {
            if (keepBeliefs) res.belief.rows.push_back(P);
            double f = 0.0;
            for (std::uint32_t s = 0; s < S; ++s) {
                const double e = w.E[std::size_t(s) * m + x];
                f += P[s] * std::log(e > 0.0 ? e : 1e-300);
            }
            res.F += f;
            // P <- P * T_x
            std::fill(Pn.begin(), Pn.end(), 0.0);
            for (std::uint32_t r = 0; r < S; ++r) {
                if (P[r] == 0.0) continue;
                const double* row = w.T.data() + (std::size_t(r) * m + x) * S;
                for (std::uint32_t s = 0; s < S; ++s) Pn[s] += P[r] * row[s];
            }
            P.swap(Pn);
        }
    }
    return res;
}

Dataset singleReadDataset(std::span<const Symbol> sequence, std::uint32_t m) {
    Dataset d;
    d.alphabet = Alphabet::custom(m);
    Read r;
    r.bases.assign(sequence.begin(), sequence.end());
    d.reads.push_back(std::move(r));
    return d;
}

} // namespace

ForwardResult forwardEvaluate(const SoftHscm& model, std::span<const Symbol> sequence) {
    if (sequence.empty()) throw InvalidArgument("empty sequence");
    return forwardEvaluate(model, singleReadDataset(sequence, model.m));
}

ForwardResult forwardEvaluate(const SoftHscm& model, const Dataset& data) {
    SoftWork w;
    w.compute(model);
    return forwardImpl(model, w, data, true);
}

SoftHscm initSoft(std::uint32_t stateCount, std::uint32_t m, const SoftOptions& opts) {
    if (stateCount < 1) throw InvalidArgument("stateCount must be >= 1");
    if (stateCount > 64) throw InvalidArgument("soft model capped at 64 states");
    SoftHscm mdl;
    mdl.stateCount = stateCount;
    mdl.m = m;
    mdl.t.assign(std::size_t(stateCount) * m * stateCount, 0.0);
    mdl.d.assign(std::size_t(stateCount) * m, 0.0);
    mdl.fixedTarget.assign(std::size_t(stateCount) * m, -1);
    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> noise(-opts.initNoise, opts.initNoise);
    if (opts.initNoise > 0.0) {
        for (auto& v : mdl.t) v = noise(rng);
        for (auto& v : mdl.d) v = noise(rng);
    }
    return mdl;
}

SoftGradient softGradient(const SoftHscm& model, const Dataset& data) {
    const std::uint32_t S = model.stateCount, m = model.m;
    SoftWork w;
    w.compute(model);

    SoftGradient g;
    g.t.assign(model.t.size(), 0.0);
    g.d.assign(model.d.size(), 0.0);

    std::vector<double> gT(std::size_t(S) * m * S, 0.0); // dF/dT probabilities
    std::vector<double> gE(std::size_t(S) * m, 0.0);     // dF/dE probabilities

    std::vector<std::vector<double>> P; // beliefs per position within a read
    std::vector<double> A(S), An(S);
    for (const auto& read : data.reads) {
        const auto& xs = read.bases;
        const std::size_t n = xs.size();
        if (n == 0) continue;
        P.assign(n, std::vector<double>(S, 0.0));
        P[0][0] = 1.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const Symbol x = xs[i];
            auto& nxt = P[i + 1];
            for (std::uint32_t r = 0; r < S; ++r) {
                const double pr = P[i][r];
                if (pr == 0.0) continue;
                const double* row = w.T.data() + (std::size_t(r) * m + x) * S;
                for (std::uint32_t s = 0; s < S; ++s) nxt[s] += pr * row[s];
            }
        }
        // F contribution and dF/dE
        for (std::size_t i = 0; i < n; ++i) {
            const Symbol x = xs[i];
            for (std::uint32_t s = 0; s < S; ++s) {
                const double e = w.E[std::size_t(s) * m + x];
                g.F += P[i][s] * std::log(e > 0.0 ? e : 1e-300);
                gE[std::size_t(s) * m + x] += P[i][s] / (e > 0.0 ? e : 1e-300);
            }
        }
        // adjoint A_i = dF/dP_i, backward
        for (std::uint32_t s = 0; s < S; ++s) {
            const double e = w.E[std::size_t(s) * m + xs[n - 1]];
            A[s] = std::log(e > 0.0 ? e : 1e-300);
        }
        for (std::size_t i = n - 1; i-- > 0;) {
            const Symbol x = xs[i];
            // gT[r][x][s] += P_i[r] * A_{i+1}[s]
            for (std::uint32_t r = 0; r < S; ++r) {
                const double pr = P[i][r];
                if (pr == 0.0) continue;
                double* grow = gT.data() + (std::size_t(r) * m + x) * S;
                for (std::uint32_t s = 0; s < S; ++s) grow[s] += pr * A[s];
            }
            for (std::uint32_t r = 0; r < S; ++r) {
                const double e = w.E[std::size_t(r) * m + x];
                double acc = std::log(e > 0.0 ? e : 1e-300);
                const double* row = w.T.data() + (std::size_t(r) * m + x) * S;
                for (std::uint32_t s = 0; s < S; ++s) acc += row[s] * A[s];
                An[r] = acc;
            }
            A.swap(An);
        }
    }

    // chain through the softmaxes
    for (std::uint32_t r = 0; r < S; ++r)
        for (std::uint32_t x = 0; x < m; ++x) {
            if (model.rowFixed(r, x)) continue;
            const double* Trow = w.T.data() + (std::size_t(r) * m + x) * S;
            const double* Grow = gT.data() + (std::size_t(r) * m + x) * S;
            double dot = 0.0;
            for (std::uint32_t s = 0; s < S; ++s) dot += Trow[s] * Grow[s];
            double* out = g.t.data() + (std::size_t(r) * m + x) * S;
            for (std::uint32_t s = 0; s < S; ++s) out[s] = Trow[s] * (Grow[s] - dot);
        }
    for (std::uint32_t s = 0; s < S; ++s) {
        const double* Erow = w.E.data() + std::size_t(s) * m;
        const double* Grow = gE.data() + std::size_t(s) * m;
        double dot = 0.0;
        for (std::uint32_t x = 0; x < m; ++x) dot += Erow[x] * Grow[x];
        double* out = g.d.data() + std::size_t(s) * m;
        for (std::uint32_t x = 0; x < m; ++x) out[x] = Erow[x] * (Grow[x] - dot);
    }
    return g;
}

namespace {

// Bayes elimination of emissions: Pr(x|s) = sum_{i: x_i=x} P_is / sum_i P_is
void bayesEmissions(SoftHscm& mdl, const Dataset& data) {
    SoftWork w;
    w.compute(mdl);
    const std::uint32_t S = mdl.stateCount, m = mdl.m;
    std::vector<double> num(std::size_t(S) * m, 0.0), den(S, 0.0);
    std::vector<double> P(S), Pn(S);
    for (const auto& read : data.reads) {
        std::fill(P.begin(), P.end(), 0.0);
        P[0] = 1.0;
        for (Symbol x : read.bases) {
            for (std::uint32_t s = 0; s < S; ++s) {
                num[std::size_t(s) * m + x] += P[s];
                den[s] += P[s];
            }
            std::fill(Pn.begin(), Pn.end(), 0.0);
            for (std::uint32_t r = 0; r < S; ++r) {
                if (P[r] == 0.0) continue;
                const double* row = w.T.data() + (std::size_t(r) * m + x) * S;
                for (std::uint32_t s = 0; s < S; ++s) Pn[s] += P[r] * row[s];
            }
            P.swap(Pn);
        }
    }
    for (std::uint32_t s = 0; s < S; ++s) {
        for (std::uint32_t x = 0; x < m; ++x) {
            const double p = (num[std::size_t(s) * m + x] + 1e-9) / (den[s] + m * 1e-9);
            mdl.d[std::size_t(s) * m + x] = std::log(p);
        }
    }
}

double currentF(const SoftHscm& mdl, const Dataset& data) {
    SoftWork w;
    w.compute(mdl);
    return forwardImpl(mdl, w, data, false).F;
}

} // namespace

void optimizeSoftInPlace(SoftHscm& mdl, const Dataset& data, std::uint32_t steps,
                         double stepSize, const SoftOptions& opts) {
    const std::size_t n = data.totalSymbols();
    if (n == 0 || steps == 0) return;
    double lr = stepSize;
    double bestF = -1e300;
    SoftHscm best = mdl;
    for (std::uint32_t step = 0; step < steps; ++step) {
        if (opts.bayesEmissions) bayesEmissions(mdl, data);
        SoftGradient g = softGradient(mdl, data);
        if (g.F > bestF) {
            bestF = g.F;
            best = mdl;
        }
        int halvings = 0;
        for (;;) {
            SoftHscm trial = mdl;
            const double scale = lr / double(n); // per-symbol objective
            for (std::size_t i = 0; i < trial.t.size(); ++i) trial.t[i] += scale * g.t[i];
            if (!opts.bayesEmissions)
                for (std::size_t i = 0; i < trial.d.size(); ++i) trial.d[i] += scale * g.d[i];
            const double f = currentF(trial, data);
            if (std::isfinite(f) && f >= g.F) {
                mdl = std::move(trial);
                break;
            }
            lr *= 0.5;
            if (++halvings > 60) throw Error("soft optimization failed to make progress");
        }
    }
    const double finalF = currentF(mdl, data);
    if (finalF < bestF) mdl = best;
}

SoftHscm optimizeSoft(const Dataset& data, std::uint32_t stateCount, std::uint32_t steps,
                      double stepSize, const SoftOptions& opts) {
    SoftHscm mdl = initSoft(stateCount, data.alphabet.size, opts);
    optimizeSoftInPlace(mdl, data, steps, stepSize, opts);
    return mdl;
}

TransitionTable determinize(SoftHscm model, const Dataset& data, std::uint32_t innerSteps,
                            double stepSize, const SoftOptions& opts) {
    const std::uint32_t S = model.stateCount, m = model.m;
    std::vector<double> row(S);
    for (;;) {
        // pick the free row with the largest max transition probability
        double bestP = -1.0;
        std::int64_t bestRow = -1;
        std::uint32_t bestTarget = 0;
        for (std::uint32_t r = 0; r < S; ++r)
            for (std::uint32_t x = 0; x < m; ++x) {
                if (model.rowFixed(r, x)) continue;
                model.transitionRow(r, x, row);
                std::uint32_t arg = 0;
                for (std::uint32_t s = 1; s < S; ++s)
                    if (row[s] > row[arg]) arg = s; // ties keep the smaller id
                if (row[arg] > bestP) {
                    bestP = row[arg];
                    bestRow = std::int64_t(r) * m + x;
                    bestTarget = arg;
                }
            }
        if (bestRow < 0) break;
        model.fixedTarget[static_cast<std::size_t>(bestRow)] = static_cast<std::int32_t>(bestTarget);
        bool anyFree = false;
        for (std::int32_t f : model.fixedTarget) anyFree |= f < 0;
        if (anyFree && innerSteps > 0 && data.totalSymbols() > 0)
            optimizeSoftInPlace(model, data, innerSteps, stepSize, opts);
    }

    TransitionTable t;
    t.stateCount = S;
    t.m = m;
    t.layout.levelBinCounts = {S};
    t.next.resize(std::size_t(S) * m);
    for (std::uint32_t r = 0; r < S; ++r)
        for (std::uint32_t x = 0; x < m; ++x)
            t.next[std::size_t(r) * m + x] =
                static_cast<std::uint32_t>(model.fixedTarget[std::size_t(r) * m + x]);

    // final emissions from the deterministic beliefs, smoothed one
    // pseudo-count per state
    t.emit.assign(std::size_t(S) * m, 1.0 / m);
    if (data.totalSymbols() > 0) {
        std::vector<double> num(std::size_t(S) * m, 0.0), den(S, 0.0);
        for (const auto& read : data.reads) {
            std::uint32_t s = 0;
            for (Symbol x : read.bases) {
                num[std::size_t(s) * m + x] += 1.0;
                den[s] += 1.0;
                s = t.nextState(s, x);
            }
        }
        for (std::uint32_t s = 0; s < S; ++s)
            for (std::uint32_t x = 0; x < m; ++x)
                t.emit[std::size_t(s) * m + x] =
                    (num[std::size_t(s) * m + x] + 1.0 / m) / (den[s] + 1.0);
    }
    return t;
}

} // namespace cgc
