#pragma once

// Held-out evaluation: DSE loss, single-step argmax accuracy, sample TV
// distance on enumerable configs, and lip / emotion agreement of samples.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/guidance.hpp"
#include "hicodit/synthdata.hpp"
#include "hicodit/training.hpp"

namespace hicodit {

// Held-out utterance with the generator's latent labels.
struct LabeledExample {
    TokenGrid grid0;
    ConditionBundle conditions;  // ground truth: lip, identity target, emotions
    std::vector<int> phonemes;
    int speaker = 0;
    std::vector<int> emotions;
    std::optional<nn::Vec> face;
};

inline LabeledExample labeled(const SynthSample& s) {
    return {s.grid0, s.conditions(), s.phonemes, s.speaker, s.emotions, s.face};
}

inline LabeledExample labeled(const TokenGrid& grid0, const ConditionRecord& r) {
    if (!r.phonemes || !r.speaker || !r.bundle.emo) {
        throw std::invalid_argument("evaluation record lacks phonemes, speaker or emotions");
    }
    LabeledExample e;
    e.grid0 = grid0;
    e.conditions = r.bundle;
    if (!e.conditions.id && r.identity_target) e.conditions.id = r.identity_target;
    e.phonemes = *r.phonemes;
    e.speaker = *r.speaker;
    e.emotions = *r.bundle.emo;
    e.face = r.face;
    return e;
}

inline TrainingExample training_example(const TokenGrid& grid0, const ConditionRecord& r) {
    TrainingExample e{grid0, r.bundle, r.face, r.identity_target};
    // Training feeds the ground-truth identity vector, as with the other conditions.
    if (!e.conditions.id && r.identity_target) e.conditions.id = r.identity_target;
    return e;
}

// Conditions used at inference: the identity comes from the adapter applied to
// face features when a network is available, else from an explicit vector.
inline ConditionBundle inference_conditions(const ConditionRecord& r, const ScoreNetwork* net) {
    ConditionBundle b;
    b.lip = r.bundle.lip;
    b.emo = r.bundle.emo;
    if (r.bundle.id) {
        b.id = r.bundle.id;
    } else if (net && r.face) {
        const nn::Mat f = r.face->transpose();
        b.id = net->predict_identity(f).row(0).transpose();
    } else if (r.identity_target) {
        b.id = r.identity_target;
    }
    return b;
}

struct CorruptedSet {
    std::vector<TokenGrid> noisy;
    std::vector<double> times;
};

// Per-example t ~ U[t_floor T, T] and corruption, fixed by `seed`.
inline CorruptedSet corrupt_uniform(const std::vector<LabeledExample>& data, const NoiseSchedule& sched,
                                    std::uint64_t seed, double t_floor = 1e-3) {
    CorruptedSet c;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Rng rng = make_rng(derive_seed(seed, 0xe7a1, i));
        const double t = sched.horizon * (t_floor + (1.0 - t_floor) * uniform01(rng));
        c.times.push_back(t);
        c.noisy.push_back(forward_sample(data[i].grid0, sched, t, rng()));
    }
    return c;
}

// Corruption at the single time where sigma_bar = ln 2 (half of all tokens masked).
inline CorruptedSet corrupt_half(const std::vector<LabeledExample>& data, const NoiseSchedule& sched,
                                 std::uint64_t seed) {
    const double t = time_for_sigma_bar(sched, std::log(2.0));
    CorruptedSet c;
    for (std::size_t i = 0; i < data.size(); ++i) {
        c.times.push_back(t);
        c.noisy.push_back(forward_sample(data[i].grid0, sched, t, derive_seed(seed, 0x4a1f, i)));
    }
    return c;
}

inline std::vector<ConditionBundle> bundles_of(const std::vector<LabeledExample>& data) {
    std::vector<ConditionBundle> b;
    for (const auto& e : data) b.push_back(e.conditions);
    return b;
}

// Mean over examples of the per-example DSE loss.
inline double heldout_dse(const ScoreModel& model, const std::vector<LabeledExample>& data, const CorruptedSet& cs,
                          const NoiseSchedule& sched, std::size_t chunk = 256) {
    const auto bundles = bundles_of(data);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < data.size(); b0 += chunk) {
        const std::size_t n = std::min(chunk, data.size() - b0);
        const auto logs = model.log_scores(std::span(cs.noisy).subspan(b0, n), std::span(cs.times).subspan(b0, n),
                                           std::span(bundles).subspan(b0, n));
        for (std::size_t i = 0; i < n; ++i) {
            total += dse_loss_from_log(logs[i], cs.noisy[b0 + i], data[b0 + i].grid0, sched, cs.times[b0 + i]).loss;
        }
    }
    return total / static_cast<double>(data.size());
}

struct LevelAccuracy {
    std::vector<double> accuracy;  // per level
    std::vector<long> count;       // masked positions scored per level
    double overall = 0.0;
};

// Argmax of the scores at each masked position against the clean token.
inline LevelAccuracy argmax_accuracy(const ScoreModel& model, const std::vector<LabeledExample>& data,
                                     const CorruptedSet& cs, std::size_t chunk = 256) {
    const int R = model.levels(), V = model.vocab();
    LevelAccuracy acc;
    acc.accuracy.assign(static_cast<std::size_t>(R), 0.0);
    acc.count.assign(static_cast<std::size_t>(R), 0);
    std::vector<long> hits(static_cast<std::size_t>(R), 0);
    const auto bundles = bundles_of(data);
    for (std::size_t b0 = 0; b0 < data.size(); b0 += chunk) {
        const std::size_t n = std::min(chunk, data.size() - b0);
        const auto logs = model.log_scores(std::span(cs.noisy).subspan(b0, n), std::span(cs.times).subspan(b0, n),
                                           std::span(bundles).subspan(b0, n));
        for (std::size_t i = 0; i < n; ++i) {
            const TokenGrid& xt = cs.noisy[b0 + i];
            for (int r = 0; r < R; ++r) {
                for (int j = 0; j < xt.frames(); ++j) {
                    if (!xt.is_masked(r, j)) continue;
                    const double* s = logs[i].row(r, j);
                    int best = 0;
                    for (int v = 1; v < V; ++v) {
                        if (s[v] > s[best]) best = v;
                    }
                    ++acc.count[static_cast<std::size_t>(r)];
                    hits[static_cast<std::size_t>(r)] += best == data[b0 + i].grid0.at(r, j);
                }
            }
        }
    }
    long total_hits = 0, total = 0;
    for (int r = 0; r < R; ++r) {
        const auto k = static_cast<std::size_t>(r);
        acc.accuracy[k] = acc.count[k] ? static_cast<double>(hits[k]) / acc.count[k] : 0.0;
        total_hits += hits[k];
        total += acc.count[k];
    }
    acc.overall = total ? static_cast<double>(total_hits) / total : 0.0;
    return acc;
}

// Expected accuracy of the Bayes argmax rule on the same masked positions:
// the mean of max_v p(x0 = v | observed, conditions).
inline LevelAccuracy bayes_argmax_rate(const SynthOracle& oracle, const std::vector<LabeledExample>& data,
                                       const CorruptedSet& cs) {
    const int R = oracle.spec().levels, V = oracle.spec().vocab;
    LevelAccuracy acc;
    acc.accuracy.assign(static_cast<std::size_t>(R), 0.0);
    acc.count.assign(static_cast<std::size_t>(R), 0);
    double total_p = 0.0;
    long total = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TokenGrid& xt = cs.noisy[i];
        const PosteriorField post = oracle.posterior(xt, data[i].conditions);
        for (int r = 0; r < R; ++r) {
            for (int j = 0; j < xt.frames(); ++j) {
                if (!xt.is_masked(r, j)) continue;
                double mx = 0.0;
                for (int v = 0; v < V; ++v) mx = std::max(mx, post.at(r, j, v));
                acc.accuracy[static_cast<std::size_t>(r)] += mx;
                ++acc.count[static_cast<std::size_t>(r)];
                total_p += mx;
                ++total;
            }
        }
    }
    for (int r = 0; r < R; ++r) {
        const auto k = static_cast<std::size_t>(r);
        if (acc.count[k]) acc.accuracy[k] /= static_cast<double>(acc.count[k]);
    }
    acc.overall = total ? total_p / total : 0.0;
    return acc;
}

struct Agreement {
    double lip = 0.0;      // low-level tokens equal to the lip-determined mode f_r(p_j, s)
    double emotion = 0.0;  // high-level tokens equal to the emotion-determined mode g_r(f_0(p_j, s), e_b)
};

inline Agreement agreement(const SynthOracle& oracle, const std::vector<TokenGrid>& samples,
                           const std::vector<LabeledExample>& truth) {
    if (samples.size() != truth.size()) throw std::invalid_argument("agreement: sample/label count mismatch");
    const auto& spec = oracle.spec();
    long lip_hits = 0, lip_n = 0, emo_hits = 0, emo_n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& x = truth[i];
        for (int j = 0; j < spec.frames; ++j) {
            const int p = x.phonemes[static_cast<std::size_t>(j)];
            const int e = x.emotions[static_cast<std::size_t>(j / spec.emotion_downsample)];
            for (int r = 0; r < spec.levels; ++r) {
                const bool hit = samples[i].at(r, j) == clean_token(spec, oracle.tables(), r, p, x.speaker, e);
                if (r < spec.split) {
                    lip_hits += hit;
                    ++lip_n;
                } else {
                    emo_hits += hit;
                    ++emo_n;
                }
            }
        }
    }
    return {lip_n ? static_cast<double>(lip_hits) / lip_n : 0.0, emo_n ? static_cast<double>(emo_hits) / emo_n : 0.0};
}

inline double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("tv_distance: support sizes differ");
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - q[i]);
    return 0.5 * d;
}

inline std::vector<double> empirical_distribution(const SynthOracle& oracle, const std::vector<TokenGrid>& samples) {
    const auto& spec = oracle.spec();
    const std::size_t states =
        static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(spec.vocab), spec.levels * spec.frames)));
    std::vector<double> h(states, 0.0);
    for (const auto& g : samples) h[oracle.grid_index(g)] += 1.0;
    for (auto& v : h) v /= static_cast<double>(samples.size());
    return h;
}

inline bool enumerable(const SynthSpec& spec) {
    return std::pow(static_cast<double>(spec.vocab), spec.levels * spec.frames) <= static_cast<double>(1 << 20);
}

}  // namespace hicodit
