#pragma once

// Token corpus files.
//
// Binary layout (all little-endian):
//   "HCDT" | u16 version | u32 R | u32 L | u32 V | u32 k | u32 record count
//   then per record R*L u16 token ids, level-major (level 0 first), MASK = V.
//
// A JSON-lines form is also accepted: one object per line,
//   {"levels":R,"frames":L,"vocab":V,"split":k,"tokens":[[...level 0...],...]}

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hicodit/token_space.hpp"

namespace hicodit {

inline constexpr std::array<char, 4> kCorpusMagic{'H', 'C', 'D', 'T'};
inline constexpr std::uint16_t kCorpusVersion = 1;

struct CorpusHeader {
    int levels = 0;
    int frames = 0;
    int vocab = 0;
    int split = 0;

    bool operator==(const CorpusHeader&) const = default;
};

struct TokenCorpus {
    CorpusHeader header;
    std::vector<TokenGrid> grids;
};

namespace detail {

inline void put_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), bytes);
    if (in.gcount() != bytes) throw std::runtime_error("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint16_t get_u16(std::istream& in) { return static_cast<std::uint16_t>(get_le(in, 2)); }
inline std::uint32_t get_u32(std::istream& in) { return static_cast<std::uint32_t>(get_le(in, 4)); }
inline std::uint64_t get_u64(std::istream& in) { return get_le(in, 8); }

}  // namespace detail

inline void write_corpus(std::ostream& out, const TokenCorpus& corpus) {
    const auto& h = corpus.header;
    out.write(kCorpusMagic.data(), 4);
    detail::put_u16(out, kCorpusVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(h.levels));
    detail::put_u32(out, static_cast<std::uint32_t>(h.frames));
    detail::put_u32(out, static_cast<std::uint32_t>(h.vocab));
    detail::put_u32(out, static_cast<std::uint32_t>(h.split));
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.grids.size()));
    for (const auto& g : corpus.grids) {
        if (g.levels() != h.levels || g.frames() != h.frames || g.vocab() != h.vocab) {
            throw std::invalid_argument("write_corpus: grid shape does not match header");
        }
        for (TokenId id : g.ids()) detail::put_u16(out, static_cast<std::uint16_t>(id));
    }
}

inline void write_corpus_file(const std::string& path, const TokenCorpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_corpus(out, corpus);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline TokenCorpus read_corpus_binary(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (magic != kCorpusMagic) throw std::runtime_error("not an HCDT corpus (bad magic)");
    const auto version = detail::get_u16(in);
    if (version != kCorpusVersion) {
        throw std::runtime_error("unsupported HCDT version " + std::to_string(version));
    }
    TokenCorpus corpus;
    auto& h = corpus.header;
    h.levels = static_cast<int>(detail::get_u32(in));
    h.frames = static_cast<int>(detail::get_u32(in));
    h.vocab = static_cast<int>(detail::get_u32(in));
    h.split = static_cast<int>(detail::get_u32(in));
    LevelPartition{h.split}.validate(h.levels);
    const auto count = detail::get_u32(in);
    const auto cells = static_cast<std::size_t>(h.levels) * h.frames;
    corpus.grids.reserve(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        std::vector<TokenId> ids(cells);
        for (auto& id : ids) id = detail::get_u16(in);
        corpus.grids.emplace_back(h.levels, h.frames, h.vocab, std::move(ids));
    }
    return corpus;
}

inline TokenCorpus read_corpus_jsonl(std::istream& in) {
    TokenCorpus corpus;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line);
        CorpusHeader h{j.at("levels").get<int>(), j.at("frames").get<int>(), j.at("vocab").get<int>(),
                       j.value("split", 1)};
        if (first) {
            LevelPartition{h.split}.validate(h.levels);
            corpus.header = h;
            first = false;
        } else if (!(h == corpus.header)) {
            throw std::runtime_error("jsonl corpus: inconsistent header fields across records");
        }
        const auto& rows = j.at("tokens");
        if (rows.size() != static_cast<std::size_t>(h.levels)) {
            throw std::runtime_error("jsonl corpus: expected " + std::to_string(h.levels) + " levels");
        }
        std::vector<TokenId> ids;
        for (const auto& row : rows) {
            if (row.size() != static_cast<std::size_t>(h.frames)) {
                throw std::runtime_error("jsonl corpus: level length differs from frames");
            }
            for (const auto& v : row) ids.push_back(v.get<TokenId>());
        }
        corpus.grids.emplace_back(h.levels, h.frames, h.vocab, std::move(ids));
    }
    if (first) throw std::runtime_error("jsonl corpus: no records");
    return corpus;
}

inline void write_corpus_jsonl(std::ostream& out, const TokenCorpus& corpus) {
    for (const auto& g : corpus.grids) {
        nlohmann::json rows = nlohmann::json::array();
        for (int r = 0; r < g.levels(); ++r) {
            const auto lv = g.level(r);
            rows.push_back(std::vector<TokenId>(lv.begin(), lv.end()));
        }
        nlohmann::json j{{"levels", corpus.header.levels}, {"frames", corpus.header.frames},
                         {"vocab", corpus.header.vocab},   {"split", corpus.header.split},
                         {"tokens", rows}};
        out << j.dump() << '\n';
    }
}

// Reads either format, sniffing the magic bytes.
inline TokenCorpus read_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus '" + path + "'");
    char magic[4] = {};
    in.read(magic, 4);
    in.clear();
    in.seekg(0);
    if (std::equal(magic, magic + 4, kCorpusMagic.begin())) return read_corpus_binary(in);
    return read_corpus_jsonl(in);
}

}  // namespace hicodit
