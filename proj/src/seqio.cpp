#include "cgc/seqio.hpp"

#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace cgc {

std::size_t Dataset::totalSymbols() const {
    std::size_t n = 0;
    for (const auto& r : reads) n += r.bases.size();
    return n;
}

namespace {

// -1 unknown/ambiguity, -2 not a sequence character at all
constexpr std::array<int, 256> makeBaseMap() {
    std::array<int, 256> t{};
    for (auto& v : t) v = -2;
    t['A'] = t['a'] = 0;
    t['C'] = t['c'] = 1;
    t['G'] = t['g'] = 2;
    t['T'] = t['t'] = 3;
    for (char c : {'N', 'n', 'M', 'm', 'R', 'r', 'Y', 'y', 'K', 'k',
                   'S', 's', 'W', 'w', 'H', 'h', 'B', 'b', 'V', 'v', 'D', 'd'})
        t[static_cast<unsigned char>(c)] = -1;
    return t;
}

constexpr auto kBaseMap = makeBaseMap();

void mapBases(const std::string& line, std::size_t recordIndex, const ParseOptions& opts,
              std::vector<Symbol>& out, std::uint64_t& substituted) {
    out.clear();
    out.reserve(line.size());
    for (char ch : line) {
        int v = kBaseMap[static_cast<unsigned char>(ch)];
        if (v >= 0) {
            out.push_back(static_cast<Symbol>(v));
        } else if (v == -1) {
            if (opts.unknownPolicy == UnknownPolicy::Reject)
                throw ParseError("record " + std::to_string(recordIndex) +
                                 ": ambiguous base '" + std::string(1, ch) + "'");
            out.push_back(0);
            ++substituted;
        } else {
            throw ParseError("record " + std::to_string(recordIndex) + ": invalid base character '" +
                             std::string(1, ch) + "'");
        }
    }
}

bool getLine(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

} // namespace

Dataset parseFastq(std::istream& in, const ParseOptions& opts) {
    Dataset ds;
    ds.alphabet = Alphabet::bases();
    ds.qualityAlphabet = Alphabet::quality(opts.maxQuality);
    ds.hasQualities = true;

    std::string header, seq, plus, qual;
    std::size_t rec = 0;
    while (getLine(in, header)) {
        if (header.empty()) continue; // tolerate trailing blank lines
        if (header[0] != '@')
            throw ParseError("record " + std::to_string(rec) + ": expected '@' header");
        if (!getLine(in, seq) || !getLine(in, plus) || !getLine(in, qual))
            throw ParseError("record " + std::to_string(rec) + ": truncated record");
        if (plus.empty() || plus[0] != '+')
            throw ParseError("record " + std::to_string(rec) + ": expected '+' separator");
        if (seq.size() != qual.size())
            throw ParseError("record " + std::to_string(rec) +
                             ": sequence/quality length mismatch");

        Read r;
        r.id = header.substr(1);
        mapBases(seq, rec, opts, r.bases, ds.substitutedUnknown);
        r.qualities.reserve(qual.size());
        for (char ch : qual) {
            int q = static_cast<unsigned char>(ch) - 33;
            if (q < 0 || q > static_cast<int>(opts.maxQuality))
                throw ParseError("record " + std::to_string(rec) + ": quality character out of range");
            r.qualities.push_back(static_cast<Symbol>(q));
        }
        ds.reads.push_back(std::move(r));
        ++rec;
    }
    return ds;
}

Dataset parseFasta(std::istream& in, const ParseOptions& opts) {
    Dataset ds;
    ds.alphabet = Alphabet::bases();
    ds.hasQualities = false;

    std::string line, seq;
    std::string id;
    bool open = false;
    std::size_t rec = 0;
    auto flush = [&]() {
        if (!open) return;
        Read r;
        r.id = id;
        mapBases(seq, rec, opts, r.bases, ds.substitutedUnknown);
        ds.reads.push_back(std::move(r));
        seq.clear();
        ++rec;
    };
    while (getLine(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '>') {
            flush();
            id = line.substr(1);
            open = true;
        } else {
            if (!open) throw ParseError("sequence data before first '>' header");
            seq += line;
        }
    }
    flush();
    return ds;
}

namespace {
Dataset parseFile(const std::string& path, const ParseOptions& opts, bool fastq) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open input file: " + path);
    Dataset ds = fastq ? parseFastq(in, opts) : parseFasta(in, opts);
    ds.sourcePath = path;
    return ds;
}
} // namespace

Dataset parseFastqFile(const std::string& path, const ParseOptions& opts) {
    return parseFile(path, opts, true);
}

Dataset parseFastaFile(const std::string& path, const ParseOptions& opts) {
    return parseFile(path, opts, false);
}

std::vector<Symbol> packSymbols(const Read& read, std::uint32_t maxScore) {
    if (read.qualities.size() != read.bases.size())
        throw InvalidArgument("packSymbols: read has no qualities");
    std::vector<Symbol> out(read.bases.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (read.qualities[i] > maxScore)
            throw InvalidArgument("packSymbols: quality exceeds maxScore");
        out[i] = static_cast<Symbol>(read.qualities[i] * 4 + read.bases[i]);
    }
    return out;
}

Dataset selectField(const Dataset& data, Field field) {
    if (field == Field::Bases) {
        Dataset out = data;
        for (auto& r : out.reads) r.qualities.clear();
        out.hasQualities = false;
        return out;
    }
    Dataset out;
    out.sourcePath = data.sourcePath;
    out.substitutedUnknown = data.substitutedUnknown;
    out.reads.reserve(data.reads.size());
    if (field == Field::Qualities) {
        if (!data.hasQualities) throw InvalidArgument("dataset has no qualities");
        out.alphabet = data.qualityAlphabet;
        for (const auto& r : data.reads) {
            Read q;
            q.id = r.id;
            q.bases = r.qualities;
            out.reads.push_back(std::move(q));
        }
    } else {
        if (!data.hasQualities) throw InvalidArgument("dataset has no qualities to pack");
        out.alphabet = Alphabet::packed(data.qualityAlphabet.maxScore);
        for (const auto& r : data.reads) {
            Read p;
            p.id = r.id;
            p.bases = packSymbols(r, data.qualityAlphabet.maxScore);
            out.reads.push_back(std::move(p));
        }
    }
    return out;
}

void writeFastq(const Dataset& data, std::ostream& out) {
    static const char* bases = "ACGT";
    std::string line;
    for (const auto& r : data.reads) {
        out << '@' << r.id << '\n';
        line.clear();
        for (Symbol b : r.bases) line += bases[b & 3];
        out << line << "\n+\n";
        line.clear();
        for (Symbol q : r.qualities) line += static_cast<char>(33 + q);
        out << line << '\n';
    }
}

void writeFasta(const Dataset& data, std::ostream& out) {
    static const char* bases = "ACGT";
    for (const auto& r : data.reads) {
        out << '>' << r.id << '\n';
        std::string line;
        for (Symbol b : r.bases) line += bases[b & 3];
        out << line << '\n';
    }
}

} // namespace cgc
