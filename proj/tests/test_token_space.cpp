#include <gtest/gtest.h>

#include <sstream>

#include "hicodit/corpus_io.hpp"
#include "hicodit/rng.hpp"
#include "hicodit/token_space.hpp"
#include "hicodit/verify.hpp"

using namespace hicodit;

namespace {

TokenGrid random_grid(int R, int L, int V, std::uint64_t seed, bool with_mask = false) {
    Rng rng = make_rng(seed);
    TokenGrid g(R, L, V, 0);
    for (int r = 0; r < R; ++r) {
        for (int j = 0; j < L; ++j) g.set(r, j, uniform_int(rng, with_mask ? V + 1 : V));
    }
    return g;
}

}  // namespace

TEST(TokenGrid, MaskIsVocabSize) {
    const TokenGrid g = TokenGrid::all_masked(3, 5, 1024);
    EXPECT_EQ(g.mask_id(), 1024);
    EXPECT_EQ(g.masked_count(), 15);
    EXPECT_TRUE(g.is_masked(2, 4));
}

TEST(TokenGrid, RejectsOutOfRangeIds) {
    TokenGrid g(2, 2, 4, 0);
    EXPECT_THROW(g.set(0, 0, 5), std::out_of_range);
    EXPECT_THROW(g.set(0, 0, -1), std::out_of_range);
    EXPECT_NO_THROW(g.set(0, 0, 4));
    EXPECT_THROW(TokenGrid(0, 2, 4, 0), std::invalid_argument);
}

TEST(TokenGrid, MaskFraction) {
    EXPECT_EQ(mask_fraction(TokenGrid::all_masked(2, 4, 8)), 1.0);
    EXPECT_EQ(mask_fraction(TokenGrid(2, 4, 8, 3)), 0.0);
    TokenGrid half(2, 4, 8, 1);
    for (int j = 0; j < 4; ++j) half.set(1, j, half.mask_id());
    EXPECT_EQ(mask_fraction(half), 0.5);
}

TEST(Split, PaperShape) {
    const TokenGrid g = random_grid(12, 7, 1024, 1);
    const auto [lo, hi] = split(g, LevelPartition{2});
    EXPECT_EQ(lo.levels(), 2);
    EXPECT_EQ(hi.levels(), 10);
    EXPECT_EQ(lo.at(1, 3), g.at(1, 3));
    EXPECT_EQ(hi.at(0, 3), g.at(2, 3));
}

TEST(Split, MergeInvertsSplitForEveryK) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TokenGrid g = random_grid(6, 9, 5, seed, true);
        for (int k = 1; k < 6; ++k) {
            const auto [lo, hi] = split(g, LevelPartition{k});
            EXPECT_EQ(merge(lo, hi), g);
        }
    }
}

TEST(Split, InvalidK) {
    const TokenGrid g = random_grid(4, 2, 3, 1);
    EXPECT_THROW(split(g, LevelPartition{0}), std::out_of_range);
    EXPECT_THROW(split(g, LevelPartition{4}), std::out_of_range);
    const auto [lo, hi] = split(g, LevelPartition{1});
    EXPECT_THROW(merge(lo, TokenGrid(3, 3, 3, 0)), std::invalid_argument);
}

TEST(StateSpace, Validation) {
    EXPECT_NO_THROW((StateSpaceConfig{4, 8, 8, 1, 4}.validate()));
    EXPECT_ANY_THROW((StateSpaceConfig{4, 8, 8, 4, 4}.validate()));
    EXPECT_THROW((StateSpaceConfig{4, 8, 8, 1, 3}.validate()), std::invalid_argument);
}

TEST(CorpusIo, BinaryRoundTrip) {
    TokenCorpus c;
    c.header = {3, 4, 6, 1};
    for (std::uint64_t s = 0; s < 5; ++s) c.grids.push_back(random_grid(3, 4, 6, s, true));
    std::stringstream ss;
    write_corpus(ss, c);
    const TokenCorpus back = read_corpus_binary(ss);
    EXPECT_EQ(back.header, c.header);
    EXPECT_EQ(back.grids, c.grids);
}

TEST(CorpusIo, JsonlRoundTrip) {
    TokenCorpus c;
    c.header = {2, 3, 4, 1};
    for (std::uint64_t s = 0; s < 3; ++s) c.grids.push_back(random_grid(2, 3, 4, s));
    std::stringstream ss;
    write_corpus_jsonl(ss, c);
    const TokenCorpus back = read_corpus_jsonl(ss);
    EXPECT_EQ(back.grids, c.grids);
}

TEST(CorpusIo, RejectsBadMagicAndTruncation) {
    std::stringstream bad("HCDX0000");
    EXPECT_THROW(read_corpus_binary(bad), std::runtime_error);
    TokenCorpus c;
    c.header = {2, 2, 4, 1};
    c.grids.push_back(random_grid(2, 2, 4, 1));
    std::stringstream ss;
    write_corpus(ss, c);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 3);
    std::stringstream cut(bytes);
    EXPECT_THROW(read_corpus_binary(cut), std::runtime_error);
}

TEST(VerifyGroup, TokenSpaceAllPass) {
    for (const auto& c : verify_token_space()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}
