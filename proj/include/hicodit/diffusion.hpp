#pragma once

// Absorbing-state (MASK) diffusion over token grids: forward corruption,
// closed-form concrete-score targets and the Euler reverse transition.
//
// The chain factorizes per token; the n^d x n^d rate matrix is never built.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/rng.hpp"
#include "hicodit/schedule.hpp"
#include "hicodit/token_space.hpp"

namespace hicodit {

// Dense per-level, per-frame, per-candidate field. Candidates are the V real
// tokens; MASK->MASK is never scored.
template <class Tag>
struct LevelFrameField {
    int levels = 0;
    int frames = 0;
    int vocab = 0;
    std::vector<double> values;

    LevelFrameField() = default;
    LevelFrameField(int r, int l, int v, double fill = 0.0)
        : levels(r), frames(l), vocab(v), values(static_cast<std::size_t>(r) * l * v, fill) {}

    std::size_t offset(int r, int j) const { return (static_cast<std::size_t>(r) * frames + j) * vocab; }
    double& at(int r, int j, int v) { return values[offset(r, j) + v]; }
    double at(int r, int j, int v) const { return values[offset(r, j) + v]; }
    double* row(int r, int j) { return values.data() + offset(r, j); }
    const double* row(int r, int j) const { return values.data() + offset(r, j); }

    bool operator==(const LevelFrameField&) const = default;
};

struct ScoreTag {};
struct LogScoreTag {};
struct ProbabilityTag {};

// Positive concrete-score estimates s(x_t, t)_v.
using ScoreField = LevelFrameField<ScoreTag>;
// Natural log of a ScoreField; what score models emit.
using LogScoreField = LevelFrameField<LogScoreTag>;
// Per-position categorical p(x_0 = v | ...).
using PosteriorField = LevelFrameField<ProbabilityTag>;

inline ScoreField exp_field(const LogScoreField& log_scores) {
    ScoreField s(log_scores.levels, log_scores.frames, log_scores.vocab);
    for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = std::exp(log_scores.values[i]);
    return s;
}

// Uniform variate drawn from a stream keyed by (seed, position).
inline double position_uniform(std::uint64_t seed, std::uint64_t position) {
    return static_cast<double>(mix64(derive_seed(seed, position)) >> 11) * 0x1.0p-53;
}

// Masks each entry independently with the given probability.
inline TokenGrid forward_mask(const TokenGrid& grid0, double mask_prob, std::uint64_t seed) {
    if (grid0.masked_count() != 0) {
        throw std::invalid_argument("forward_sample: input grid already contains MASK entries");
    }
    std::vector<TokenId> ids(grid0.ids().begin(), grid0.ids().end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (position_uniform(seed, i) < mask_prob) ids[i] = grid0.mask_id();
    }
    return TokenGrid(grid0.levels(), grid0.frames(), grid0.vocab(), std::move(ids));
}

inline TokenGrid forward_sample(const TokenGrid& grid0, const NoiseSchedule& sched, double t,
                                std::uint64_t seed) {
    return forward_mask(grid0, sched.mask_probability(t), seed);
}

struct MaskedTarget {
    int level = 0;
    int frame = 0;
    TokenId clean_token = 0;
};

// Concrete-score target given x_0: at each masked position the score is
// ratio = e^{-sigma_bar}/(1 - e^{-sigma_bar}) on the clean token, 0 elsewhere.
struct ConcreteScoreTarget {
    int levels = 0;
    int frames = 0;
    int vocab = 0;
    double ratio = 0.0;
    std::vector<MaskedTarget> positions;

    double value(const MaskedTarget& p, int v) const { return v == p.clean_token ? ratio : 0.0; }
};

inline ConcreteScoreTarget true_concrete_score(const TokenGrid& grid_t, const TokenGrid& grid0,
                                               const NoiseSchedule& sched, double t) {
    if (grid_t.levels() != grid0.levels() || grid_t.frames() != grid0.frames() ||
        grid_t.vocab() != grid0.vocab()) {
        throw std::invalid_argument("true_concrete_score: grid shapes differ");
    }
    ConcreteScoreTarget target{grid_t.levels(), grid_t.frames(), grid_t.vocab(), 0.0, {}};
    for (int r = 0; r < grid_t.levels(); ++r) {
        for (int j = 0; j < grid_t.frames(); ++j) {
            if (grid0.is_masked(r, j)) {
                throw std::invalid_argument("true_concrete_score: clean grid contains MASK");
            }
            if (grid_t.is_masked(r, j)) {
                target.positions.push_back({r, j, grid0.at(r, j)});
            } else if (grid_t.at(r, j) != grid0.at(r, j)) {
                throw std::invalid_argument("true_concrete_score: unmasked entry at level " +
                                            std::to_string(r) + ", frame " + std::to_string(j) +
                                            " differs from the clean grid");
            }
        }
    }
    if (!target.positions.empty()) target.ratio = sched.score_ratio(t);
    return target;
}

// One Euler step of the reverse (unmasking) chain from t to t - dt.
//
// A masked position moves to v with probability sigma(t) dt s_v; if those sum
// past 1 they are rescaled to sum to 1. When t - dt reaches 0 every remaining
// MASK is drawn from the normalized score vector. Unmasked entries never change.
inline TokenGrid reverse_step(const TokenGrid& grid_t, const ScoreField& scores, const NoiseSchedule& sched,
                              double t, double dt, std::uint64_t seed) {
    if (!(dt > 0.0)) throw std::invalid_argument("reverse_step: dt must be positive");
    const double tol = 1e-12 * sched.horizon;
    if (dt > t + tol) throw std::invalid_argument("reverse_step: dt larger than t");
    if (scores.levels != grid_t.levels() || scores.frames != grid_t.frames() ||
        scores.vocab != grid_t.vocab()) {
        throw std::invalid_argument("reverse_step: score field shape does not match grid");
    }
    const bool final_step = t - dt <= tol;
    const double rate = final_step ? 0.0 : sched.sigma(t) * dt;
    const int V = grid_t.vocab();

    TokenGrid out = grid_t;
    for (int r = 0; r < grid_t.levels(); ++r) {
        for (int j = 0; j < grid_t.frames(); ++j) {
            if (!grid_t.is_masked(r, j)) continue;
            const double* s = scores.row(r, j);
            double total = 0.0;
            for (int v = 0; v < V; ++v) {
                if (!(s[v] >= 0.0) || !std::isfinite(s[v])) {
                    throw std::invalid_argument("reverse_step: scores must be finite and non-negative");
                }
                total += s[v];
            }
            double scale = rate;
            if (final_step) {
                if (!(total > 0.0)) {
                    throw std::domain_error("reverse_step: cannot force-unmask a position with all-zero scores");
                }
                scale = 1.0 / total;
            } else if (rate * total > 1.0) {
                scale = 1.0 / total;
            }
            const double u = position_uniform(seed, static_cast<std::uint64_t>(r) * grid_t.frames() + j);
            double acc = 0.0;
            int chosen = -1;
            for (int v = 0; v < V; ++v) {
                acc += scale * s[v];
                if (u < acc) {
                    chosen = v;
                    break;
                }
            }
            if (final_step && chosen < 0) {
                // u landed in the rounding gap at the top of the CDF.
                for (int v = V - 1; v >= 0; --v) {
                    if (s[v] > 0.0) {
                        chosen = v;
                        break;
                    }
                }
            }
            if (chosen >= 0) out.set(r, j, chosen);
        }
    }
    return out;
}

}  // namespace hicodit
