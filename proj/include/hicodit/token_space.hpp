#pragma once

// Hierarchical token grids: R levels x L frames of codebook ids plus MASK.
//
// Levels are 0-indexed in storage; level 0 is the coarsest residual stage.
// MASK is encoded as the id `vocab` (one past the last codebook entry).

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hicodit {

using TokenId = std::int32_t;

class TokenGrid {
  public:
    TokenGrid() = default;

    TokenGrid(int levels, int frames, int vocab, TokenId fill)
        : levels_(levels), frames_(frames), vocab_(vocab),
          ids_(static_cast<std::size_t>(levels) * frames, fill) {
        if (levels < 1 || frames < 1 || vocab < 1) {
            throw std::invalid_argument("TokenGrid: levels, frames and vocab must be positive");
        }
        check(fill);
    }

    TokenGrid(int levels, int frames, int vocab, std::vector<TokenId> ids)
        : levels_(levels), frames_(frames), vocab_(vocab), ids_(std::move(ids)) {
        if (levels < 1 || frames < 1 || vocab < 1) {
            throw std::invalid_argument("TokenGrid: levels, frames and vocab must be positive");
        }
        if (ids_.size() != static_cast<std::size_t>(levels) * frames) {
            throw std::invalid_argument("TokenGrid: expected " + std::to_string(levels * frames) +
                                        " ids, got " + std::to_string(ids_.size()));
        }
        for (TokenId id : ids_) check(id);
    }

    static TokenGrid all_masked(int levels, int frames, int vocab) {
        return TokenGrid(levels, frames, vocab, static_cast<TokenId>(vocab));
    }

    int levels() const noexcept { return levels_; }
    int frames() const noexcept { return frames_; }
    int vocab() const noexcept { return vocab_; }
    TokenId mask_id() const noexcept { return static_cast<TokenId>(vocab_); }
    std::size_t size() const noexcept { return ids_.size(); }

    TokenId at(int level, int frame) const { return ids_[index(level, frame)]; }

    void set(int level, int frame, TokenId id) {
        check(id);
        ids_[index(level, frame)] = id;
    }

    bool is_masked(int level, int frame) const { return at(level, frame) == mask_id(); }

    std::span<const TokenId> ids() const noexcept { return ids_; }
    std::span<const TokenId> level(int r) const {
        return std::span<const TokenId>(ids_).subspan(index(r, 0), static_cast<std::size_t>(frames_));
    }

    std::size_t masked_count() const {
        return static_cast<std::size_t>(std::count(ids_.begin(), ids_.end(), mask_id()));
    }

    bool operator==(const TokenGrid&) const = default;

  private:
    std::size_t index(int level, int frame) const {
        if (level < 0 || level >= levels_ || frame < 0 || frame >= frames_) {
            throw std::out_of_range("TokenGrid: position out of range");
        }
        return static_cast<std::size_t>(level) * frames_ + frame;
    }

    void check(TokenId id) const {
        if (id < 0 || id > vocab_) {
            throw std::out_of_range("TokenGrid: token id " + std::to_string(id) +
                                    " outside [0, " + std::to_string(vocab_) + "]");
        }
    }

    int levels_ = 0;
    int frames_ = 0;
    int vocab_ = 0;
    std::vector<TokenId> ids_;
};

// Levels [0, split_index) are low, [split_index, R) are high.
struct LevelPartition {
    int split_index = 2;

    void validate(int levels) const {
        if (split_index < 1 || split_index >= levels) {
            throw std::out_of_range("LevelPartition: split index " + std::to_string(split_index) +
                                    " must lie in [1, " + std::to_string(levels - 1) + "]");
        }
    }
};

struct StateSpaceConfig {
    int levels = 12;
    int frames = 50;
    int vocab = 1024;
    int split = 2;
    int emotion_downsample = 25;

    int emotion_frames() const { return frames / emotion_downsample; }

    void validate() const {
        if (levels < 2) throw std::invalid_argument("state_space: levels must be >= 2");
        if (frames < 1) throw std::invalid_argument("state_space: frames must be >= 1");
        if (vocab < 2 || vocab > 65534) throw std::invalid_argument("state_space: vocab must be in [2, 65534]");
        LevelPartition{split}.validate(levels);
        if (emotion_downsample < 1 || frames % emotion_downsample != 0) {
            throw std::invalid_argument("state_space: frames (" + std::to_string(frames) +
                                        ") must be divisible by emotion_downsample (" +
                                        std::to_string(emotion_downsample) + ")");
        }
    }

    bool operator==(const StateSpaceConfig&) const = default;
};

inline std::pair<TokenGrid, TokenGrid> split(const TokenGrid& grid, LevelPartition part) {
    part.validate(grid.levels());
    const auto ids = grid.ids();
    const auto cut = static_cast<std::size_t>(part.split_index) * grid.frames();
    return {TokenGrid(part.split_index, grid.frames(), grid.vocab(),
                      std::vector<TokenId>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut))),
            TokenGrid(grid.levels() - part.split_index, grid.frames(), grid.vocab(),
                      std::vector<TokenId>(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end()))};
}

inline TokenGrid merge(const TokenGrid& low, const TokenGrid& high) {
    if (low.frames() != high.frames() || low.vocab() != high.vocab()) {
        throw std::invalid_argument("merge: frame count or vocabulary mismatch");
    }
    std::vector<TokenId> ids(low.ids().begin(), low.ids().end());
    ids.insert(ids.end(), high.ids().begin(), high.ids().end());
    return TokenGrid(low.levels() + high.levels(), low.frames(), low.vocab(), std::move(ids));
}

inline double mask_fraction(const TokenGrid& grid) {
    return static_cast<double>(grid.masked_count()) / static_cast<double>(grid.size());
}

}  // namespace hicodit
