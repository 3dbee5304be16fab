#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cgc/serial.hpp"

namespace cgc {

using Symbol = std::uint16_t;

struct Alphabet {
    enum class Kind : std::uint8_t { Bases4, Quality, PackedBaseQuality, Custom };

    Kind kind = Kind::Bases4;
    std::uint32_t size = 4;
    std::uint32_t maxScore = 0; // Quality / PackedBaseQuality only

    static Alphabet bases() { return {Kind::Bases4, 4, 0}; }
    static Alphabet quality(std::uint32_t maxScore) {
        return {Kind::Quality, maxScore + 1, maxScore};
    }
    static Alphabet packed(std::uint32_t maxScore) {
        return {Kind::PackedBaseQuality, 4 * (maxScore + 1), maxScore};
    }
    static Alphabet custom(std::uint32_t size) { return {Kind::Custom, size, 0}; }

    bool operator==(const Alphabet&) const = default;
};

struct Read {
    std::string id;
    std::vector<Symbol> bases;
    std::vector<Symbol> qualities; // empty when absent

    std::size_t length() const { return bases.size(); }
};

struct Dataset {
    std::vector<Read> reads;
    Alphabet alphabet;                  // alphabet of Read::bases
    Alphabet qualityAlphabet;           // meaningful when hasQualities
    bool hasQualities = false;
    std::string sourcePath;
    std::uint64_t substitutedUnknown = 0; // 'N'/ambiguity codes mapped to symbol 0

    std::size_t totalSymbols() const;
};

enum class UnknownPolicy : std::uint8_t { MapToZero, Reject };

struct ParseOptions {
    UnknownPolicy unknownPolicy = UnknownPolicy::MapToZero;
    std::uint32_t maxQuality = 63; // quality alphabet size = maxQuality + 1
};

Dataset parseFastq(std::istream& in, const ParseOptions& opts = {});
Dataset parseFasta(std::istream& in, const ParseOptions& opts = {});
Dataset parseFastqFile(const std::string& path, const ParseOptions& opts = {});
Dataset parseFastaFile(const std::string& path, const ParseOptions& opts = {});

// (quality << 2) | base packing; alphabet size 4*(maxScore+1).
std::vector<Symbol> packSymbols(const Read& read, std::uint32_t maxScore);

enum class Field : std::uint8_t { Bases, Qualities, Packed };

// Dataset whose reads' `bases` hold the chosen field's symbols, with the
// matching alphabet; model code then only ever looks at Read::bases.
Dataset selectField(const Dataset& data, Field field);

void writeFastq(const Dataset& data, std::ostream& out);
void writeFasta(const Dataset& data, std::ostream& out);

} // namespace cgc
