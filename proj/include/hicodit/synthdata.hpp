#pragma once

// Synthetic hierarchical token data with enumerable conditionals.
//
// Generative process for one utterance (levels 0-indexed, split k):
//   speaker s ~ U{S};  emotion e_b ~ U{E} per block of D frames;  phoneme p_j ~ U{P}
//   low level r < k:   x[r][j] = f_r(p_j, s)                    w.p. 1 - eps, else U{V}
//   high level r >= k: x[r][j] = g_r(f_0(p_j, s), e_{j / D})    w.p. 1 - eps, else U{V}
//   lip[j]  = onehot(p_j) + N(0, lip_noise^2 I)
//   face    = onehot(s)   + N(0, face_noise^2 I)
//   identity target = fixed unit vector per speaker
// f and g are lookup tables drawn from spec.seed. The high levels read the
// clean coarse content f_0(p, s), so given (p, s, e) all tokens of a frame are
// independent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hicodit/conditions.hpp"
#include "hicodit/corpus_io.hpp"
#include "hicodit/diffusion.hpp"
#include "hicodit/rng.hpp"
#include "hicodit/schedule.hpp"
#include "hicodit/token_space.hpp"

namespace hicodit {

struct SynthSpec {
    int speakers = 8;
    int emotions = 7;
    int phonemes = 8;
    int vocab = 8;
    int levels = 4;
    int split = 1;
    int frames = 8;
    int emotion_downsample = 4;
    int id_dim = 16;
    double noise_eps = 0.1;
    double lip_noise = 0.1;
    double face_noise = 0.1;
    std::uint64_t seed = 1;

    int emotion_frames() const { return frames / emotion_downsample; }
    int lip_dim() const { return phonemes; }
    int face_dim() const { return speakers; }

    StateSpaceConfig state_space() const { return {levels, frames, vocab, split, emotion_downsample}; }

    void validate() const {
        state_space().validate();
        if (speakers < 2 || emotions < 2 || phonemes < 2 || vocab < 2) {
            throw std::invalid_argument("synth: speakers, emotions, phonemes and vocab must all be >= 2");
        }
        if (!(noise_eps >= 0.0 && noise_eps < 0.5)) throw std::invalid_argument("synth: noise_eps must lie in [0, 0.5)");
        if (!(lip_noise > 0.0) || !(face_noise > 0.0)) throw std::invalid_argument("synth: feature noise must be positive");
        if (id_dim < 1) throw std::invalid_argument("synth: id_dim must be positive");
    }

    bool operator==(const SynthSpec&) const = default;
};

struct SynthTables {
    // low[r][p * S + s] for r < split
    std::vector<std::vector<TokenId>> low;
    // high[r - split][a * E + e] for r >= split, a = clean level-0 token
    std::vector<std::vector<TokenId>> high;
    // identity target per speaker, unit norm
    std::vector<nn::Vec> identity;
};

inline SynthTables make_tables(const SynthSpec& spec) {
    spec.validate();
    Rng rng = make_rng(derive_seed(spec.seed, 0x7ab1e5));
    SynthTables t;
    for (int r = 0; r < spec.split; ++r) {
        std::vector<TokenId> tab(static_cast<std::size_t>(spec.phonemes) * spec.speakers);
        for (auto& v : tab) v = uniform_int(rng, spec.vocab);
        t.low.push_back(std::move(tab));
    }
    for (int r = spec.split; r < spec.levels; ++r) {
        std::vector<TokenId> tab(static_cast<std::size_t>(spec.vocab) * spec.emotions);
        for (auto& v : tab) v = uniform_int(rng, spec.vocab);
        t.high.push_back(std::move(tab));
    }
    for (int s = 0; s < spec.speakers; ++s) {
        nn::Vec v(spec.id_dim);
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
        t.identity.push_back(v / v.norm());
    }
    return t;
}

// Noise-free token of level r for latent (p, s, e).
inline TokenId clean_token(const SynthSpec& spec, const SynthTables& t, int r, int p, int s, int e) {
    if (r < spec.split) return t.low[static_cast<std::size_t>(r)][static_cast<std::size_t>(p) * spec.speakers + s];
    const TokenId a = t.low[0][static_cast<std::size_t>(p) * spec.speakers + s];
    return t.high[static_cast<std::size_t>(r - spec.split)][static_cast<std::size_t>(a) * spec.emotions + e];
}

struct SynthSample {
    TokenGrid grid0;
    std::vector<int> phonemes;
    int speaker = 0;
    std::vector<int> emotions;
    nn::Vec identity_target;
    nn::Mat lip;   // frames x phonemes
    nn::Vec face;  // speakers

    // Ground-truth conditions (identity from the target vector).
    ConditionBundle conditions() const {
        ConditionBundle c;
        c.lip = lip;
        c.id = identity_target;
        c.emo = emotions;
        return c;
    }
};

inline SynthSample generate_one(const SynthSpec& spec, const SynthTables& t, std::uint64_t sample_seed) {
    Rng rng = make_rng(sample_seed);
    SynthSample x;
    x.speaker = uniform_int(rng, spec.speakers);
    for (int b = 0; b < spec.emotion_frames(); ++b) x.emotions.push_back(uniform_int(rng, spec.emotions));
    for (int j = 0; j < spec.frames; ++j) x.phonemes.push_back(uniform_int(rng, spec.phonemes));
    std::vector<TokenId> ids(static_cast<std::size_t>(spec.levels) * spec.frames);
    for (int r = 0; r < spec.levels; ++r) {
        for (int j = 0; j < spec.frames; ++j) {
            TokenId v = clean_token(spec, t, r, x.phonemes[static_cast<std::size_t>(j)], x.speaker,
                                    x.emotions[static_cast<std::size_t>(j / spec.emotion_downsample)]);
            if (bernoulli(rng, spec.noise_eps)) v = uniform_int(rng, spec.vocab);
            ids[static_cast<std::size_t>(r) * spec.frames + j] = v;
        }
    }
    x.grid0 = TokenGrid(spec.levels, spec.frames, spec.vocab, std::move(ids));
    x.lip = nn::Mat(spec.frames, spec.phonemes);
    for (int j = 0; j < spec.frames; ++j) {
        for (int p = 0; p < spec.phonemes; ++p) {
            x.lip(j, p) = (p == x.phonemes[static_cast<std::size_t>(j)] ? 1.0 : 0.0) + spec.lip_noise * normal(rng);
        }
    }
    x.face = nn::Vec(spec.speakers);
    for (int s = 0; s < spec.speakers; ++s) x.face(s) = (s == x.speaker ? 1.0 : 0.0) + spec.face_noise * normal(rng);
    x.identity_target = t.identity[static_cast<std::size_t>(x.speaker)];
    return x;
}

// Samples `first`..`first + n - 1` of the stream `stream`; each sample has its own derived seed.
inline std::vector<SynthSample> generate(const SynthSpec& spec, int n, std::uint64_t stream = 0,
                                         std::uint64_t first = 0) {
    if (n < 1) throw std::invalid_argument("generate: n must be >= 1");
    const SynthTables t = make_tables(spec);
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(generate_one(spec, t, derive_seed(spec.seed, 1 + stream, first + i)));
    return out;
}

inline TokenCorpus to_corpus(const SynthSpec& spec, const std::vector<SynthSample>& samples) {
    TokenCorpus c;
    c.header = {spec.levels, spec.frames, spec.vocab, spec.split};
    for (const auto& s : samples) c.grids.push_back(s.grid0);
    return c;
}

// ---------------------------------------------------------------------------
// Sidecar condition records (JSON lines). Absent conditions are written as null.

inline nlohmann::json sample_to_json(const SynthSample& s) {
    nlohmann::json lip = nlohmann::json::array();
    for (Eigen::Index j = 0; j < s.lip.rows(); ++j) {
        lip.push_back(std::vector<double>(s.lip.row(j).data(), s.lip.row(j).data() + s.lip.cols()));
    }
    return {{"phonemes", s.phonemes},
            {"speaker", s.speaker},
            {"emotions", s.emotions},
            {"identity_target", std::vector<double>(s.identity_target.data(), s.identity_target.data() + s.identity_target.size())},
            {"lip", lip},
            {"face", std::vector<double>(s.face.data(), s.face.data() + s.face.size())}};
}

inline void write_sidecar(std::ostream& out, const std::vector<SynthSample>& samples) {
    for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

// One condition record as read back for training or sampling.
struct ConditionRecord {
    ConditionBundle bundle;        // lip, emo, and id if given explicitly
    std::optional<nn::Vec> face;   // identity adapter input
    std::optional<nn::Vec> identity_target;
    std::optional<int> speaker;
    std::optional<std::vector<int>> phonemes;
};

inline std::optional<nn::Vec> json_vec(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    const auto v = j.at(key).get<std::vector<double>>();
    return nn::Vec(Eigen::Map<const nn::Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
}

inline ConditionRecord condition_record_from_json(const nlohmann::json& j) {
    ConditionRecord r;
    if (j.contains("lip") && !j.at("lip").is_null()) {
        const auto rows = j.at("lip").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw std::runtime_error("condition record: empty lip sequence");
        nn::Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw std::runtime_error("condition record: ragged lip rows");
            for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
        r.bundle.lip = std::move(m);
    }
    if (j.contains("emotions") && !j.at("emotions").is_null()) r.bundle.emo = j.at("emotions").get<std::vector<int>>();
    r.bundle.id = json_vec(j, "id");
    r.face = json_vec(j, "face");
    r.identity_target = json_vec(j, "identity_target");
    if (j.contains("speaker") && !j.at("speaker").is_null()) r.speaker = j.at("speaker").get<int>();
    if (j.contains("phonemes") && !j.at("phonemes").is_null()) r.phonemes = j.at("phonemes").get<std::vector<int>>();
    return r;
}

inline std::vector<ConditionRecord> read_sidecar(std::istream& in) {
    std::vector<ConditionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(condition_record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("conditions line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<ConditionRecord> read_sidecar_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open conditions file '" + path + "'");
    return read_sidecar(in);
}

// ---------------------------------------------------------------------------
// Exact posteriors by enumerating (speaker, per-block emotion, per-frame phoneme).

namespace detail {

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double token_log_lik(const SynthSpec& spec, TokenId observed, TokenId clean) {
    const double p = (observed == clean ? 1.0 - spec.noise_eps : 0.0) + spec.noise_eps / spec.vocab;
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

// Upper bound on latent-enumeration work accepted by the oracle.
inline constexpr double kOracleMaxWork = 5e8;

class SynthOracle {
  public:
    explicit SynthOracle(SynthSpec spec) : spec_(spec), tables_(make_tables(spec)) {}

    const SynthSpec& spec() const noexcept { return spec_; }
    const SynthTables& tables() const noexcept { return tables_; }

    void check_tractable() const {
        const double work = static_cast<double>(spec_.speakers) * spec_.emotions * spec_.phonemes * spec_.frames *
                            spec_.levels * spec_.vocab;
        if (work > kOracleMaxWork) {
            throw std::invalid_argument("oracle: enumeration of " + std::to_string(work) +
                                        " latent-token terms exceeds the limit " + std::to_string(kOracleMaxWork));
        }
    }

    // Speaker evidence from an identity vector: point mass on the nearest target.
    int nearest_speaker(const nn::Vec& id) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int s = 0; s < spec_.speakers; ++s) {
            const double d = (tables_.identity[static_cast<std::size_t>(s)] - id).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        return best;
    }

    // p(x0[r][j] = v | unmasked tokens, conditions) for every position; unmasked
    // positions get a point mass on their observed value.
    PosteriorField posterior(const TokenGrid& grid_t, const ConditionBundle& bundle) const {
        check_grid(grid_t);
        check_tractable();
        bundle.validate(spec_.frames, spec_.lip_dim(), spec_.id_dim, spec_.emotion_frames(), spec_.emotions);
        const Work w = compute(grid_t, bundle);
        const int S = spec_.speakers, E = spec_.emotions, P = spec_.phonemes, V = spec_.vocab, D = spec_.emotion_downsample;
        const double ninf = -std::numeric_limits<double>::infinity();

        struct Term {
            double logw;
            int s, e, p;
        };
        std::vector<Term> lw;
        PosteriorField post(spec_.levels, spec_.frames, V);
        for (int j = 0; j < spec_.frames; ++j) {
            const int b = j / D;
            std::vector<int> masked;
            for (int r = 0; r < spec_.levels; ++r) {
                if (grid_t.is_masked(r, j)) {
                    masked.push_back(r);
                } else {
                    post.at(r, j, grid_t.at(r, j)) = 1.0;
                }
            }
            if (masked.empty()) continue;
            // Weight of each (s, e, p) for frame j given everything outside the masked cells.
            lw.clear();
            double mx = ninf;
            for (int s = 0; s < S; ++s) {
                if (w.log_speaker[s] == ninf) continue;
                const double ls = w.log_speaker[s] - w.log_block[idx_sb(s, b)];
                for (int e = 0; e < E; ++e) {
                    const double lse = ls + w.log_block_e[idx_sbe(s, b, e)] - w.log_frame[idx_sje(s, j, e)];
                    if (!std::isfinite(lse)) continue;
                    for (int p = 0; p < P; ++p) {
                        const double lp = lse + w.log_frame_p[idx_sjep(s, j, e, p)];
                        if (lp == ninf) continue;
                        lw.push_back({lp, s, e, p});
                        mx = std::max(mx, lp);
                    }
                }
            }
            if (lw.empty()) throw std::domain_error("oracle: observations have zero probability");
            // p(v | c) = eps / V + (1 - eps) [v == c]
            std::vector<double> acc(masked.size() * static_cast<std::size_t>(V), 0.0);
            double total = 0.0;
            for (const auto& x : lw) {
                const double wt = std::exp(x.logw - mx);
                total += wt;
                for (std::size_t m = 0; m < masked.size(); ++m) {
                    acc[m * static_cast<std::size_t>(V) + clean_token(spec_, tables_, masked[m], x.p, x.s, x.e)] += wt;
                }
            }
            const double floor = spec_.noise_eps / V;
            for (std::size_t m = 0; m < masked.size(); ++m) {
                for (int v = 0; v < V; ++v) {
                    post.at(masked[m], j, v) = floor + (1.0 - spec_.noise_eps) * acc[m * static_cast<std::size_t>(V) + v] / total;
                }
            }
        }
        return post;
    }

    // log p(unmasked tokens, conditions) up to condition-density constants.
    double log_evidence(const TokenGrid& grid_t, const ConditionBundle& bundle) const {
        check_grid(grid_t);
        bundle.validate(spec_.frames, spec_.lip_dim(), spec_.id_dim, spec_.emotion_frames(), spec_.emotions);
        const Work w = compute(grid_t, bundle);
        double total = -std::numeric_limits<double>::infinity();
        for (double l : w.log_speaker) total = detail::log_add(total, l);
        return total;
    }

    // Exact p(grid | conditions) over all V^(R*L) clean grids, indexed by the
    // base-V number whose digits are the ids in storage order.
    std::vector<double> grid_distribution(const ConditionBundle& bundle) const {
        const int cells = spec_.levels * spec_.frames;
        const double states = std::pow(static_cast<double>(spec_.vocab), cells);
        if (states > 1 << 20) throw std::invalid_argument("grid_distribution: too many states to enumerate");
        const std::size_t n = static_cast<std::size_t>(states);
        std::vector<double> logp(n);
        double z = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            logp[k] = log_evidence(grid_from_index(k), bundle);
            z = detail::log_add(z, logp[k]);
        }
        std::vector<double> p(n);
        for (std::size_t k = 0; k < n; ++k) p[k] = std::exp(logp[k] - z);
        return p;
    }

    TokenGrid grid_from_index(std::size_t k) const {
        std::vector<TokenId> ids(static_cast<std::size_t>(spec_.levels) * spec_.frames);
        for (std::size_t i = ids.size(); i-- > 0;) {
            ids[i] = static_cast<TokenId>(k % static_cast<std::size_t>(spec_.vocab));
            k /= static_cast<std::size_t>(spec_.vocab);
        }
        return TokenGrid(spec_.levels, spec_.frames, spec_.vocab, std::move(ids));
    }

    std::size_t grid_index(const TokenGrid& g) const {
        std::size_t k = 0;
        for (TokenId id : g.ids()) {
            if (id >= spec_.vocab) throw std::invalid_argument("grid_index: grid contains MASK");
            k = k * static_cast<std::size_t>(spec_.vocab) + static_cast<std::size_t>(id);
        }
        return k;
    }

  private:
    struct Work {
        std::vector<double> log_frame_p;  // [s][j][e][p]: log p(p) + lip + observed tokens in frame j
        std::vector<double> log_frame;    // [s][j][e]:    logsumexp over p
        std::vector<double> log_block_e;  // [s][b][e]:    log p(e) + sum_j in b log_frame
        std::vector<double> log_block;    // [s][b]:       logsumexp over e
        std::vector<double> log_speaker;  // [s]:          log p(s) + id + sum_b log_block
    };

    std::size_t idx_sb(int s, int b) const { return static_cast<std::size_t>(s) * spec_.emotion_frames() + b; }
    std::size_t idx_sbe(int s, int b, int e) const { return idx_sb(s, b) * spec_.emotions + e; }
    std::size_t idx_sje(int s, int j, int e) const {
        return (static_cast<std::size_t>(s) * spec_.frames + j) * spec_.emotions + e;
    }
    std::size_t idx_sjep(int s, int j, int e, int p) const { return idx_sje(s, j, e) * spec_.phonemes + p; }

    void check_grid(const TokenGrid& g) const {
        if (g.levels() != spec_.levels || g.frames() != spec_.frames || g.vocab() != spec_.vocab) {
            throw std::invalid_argument("oracle: grid shape does not match the synthetic spec");
        }
    }

    Work compute(const TokenGrid& grid_t, const ConditionBundle& bundle) const {
        const int S = spec_.speakers, E = spec_.emotions, P = spec_.phonemes, L = spec_.frames;
        const int B = spec_.emotion_frames(), D = spec_.emotion_downsample;
        const double ninf = -std::numeric_limits<double>::infinity();
        const double lip_var = spec_.lip_noise * spec_.lip_noise;

        std::vector<double> lip_ll(static_cast<std::size_t>(L) * P, 0.0);
        if (bundle.lip) {
            for (int j = 0; j < L; ++j) {
                for (int p = 0; p < P; ++p) {
                    double d2 = 0.0;
                    for (int k = 0; k < P; ++k) {
                        const double diff = (*bundle.lip)(j, k) - (k == p ? 1.0 : 0.0);
                        d2 += diff * diff;
                    }
                    lip_ll[static_cast<std::size_t>(j) * P + p] = -0.5 * d2 / lip_var;
                }
            }
        }
        const int id_speaker = bundle.id ? nearest_speaker(*bundle.id) : -1;

        Work w;
        w.log_frame_p.assign(static_cast<std::size_t>(S) * L * E * P, ninf);
        w.log_frame.assign(static_cast<std::size_t>(S) * L * E, ninf);
        w.log_block_e.assign(static_cast<std::size_t>(S) * B * E, ninf);
        w.log_block.assign(static_cast<std::size_t>(S) * B, ninf);
        w.log_speaker.assign(static_cast<std::size_t>(S), ninf);
        const double log_pp = -std::log(static_cast<double>(P));
        const double log_pe = -std::log(static_cast<double>(E));
        for (int s = 0; s < S; ++s) {
            if (id_speaker >= 0 && s != id_speaker) continue;
            double ls = -std::log(static_cast<double>(S));
            for (int b = 0; b < B; ++b) {
                for (int e = 0; e < E; ++e) {
                    if (bundle.emo && (*bundle.emo)[static_cast<std::size_t>(b)] != e) continue;
                    double lbe = bundle.emo ? 0.0 : log_pe;
                    for (int j = b * D; j < (b + 1) * D; ++j) {
                        double lf = ninf;
                        for (int p = 0; p < P; ++p) {
                            double lp = log_pp + lip_ll[static_cast<std::size_t>(j) * P + p];
                            for (int r = 0; r < spec_.levels && lp != ninf; ++r) {
                                if (grid_t.is_masked(r, j)) continue;
                                lp += detail::token_log_lik(spec_, grid_t.at(r, j), clean_token(spec_, tables_, r, p, s, e));
                            }
                            w.log_frame_p[idx_sjep(s, j, e, p)] = lp;
                            lf = detail::log_add(lf, lp);
                        }
                        w.log_frame[idx_sje(s, j, e)] = lf;
                        lbe += lf;
                    }
                    w.log_block_e[idx_sbe(s, b, e)] = lbe;
                    w.log_block[idx_sb(s, b)] = detail::log_add(w.log_block[idx_sb(s, b)], lbe);
                }
                ls += w.log_block[idx_sb(s, b)];
            }
            w.log_speaker[static_cast<std::size_t>(s)] = ls;
        }
        return w;
    }

    SynthSpec spec_;
    SynthTables tables_;
};

// Marginalized concrete score: ratio(t) * posterior at masked positions; zero
// elsewhere (unmasked positions are never read by the sampler).
inline ScoreField oracle_score(const SynthOracle& oracle, const TokenGrid& grid_t, const ConditionBundle& bundle,
                               const NoiseSchedule& sched, double t) {
    const PosteriorField post = oracle.posterior(grid_t, bundle);
    const double ratio = sched.score_ratio(t);
    ScoreField s(post.levels, post.frames, post.vocab);
    for (int r = 0; r < post.levels; ++r) {
        for (int j = 0; j < post.frames; ++j) {
            if (!grid_t.is_masked(r, j)) continue;
            for (int v = 0; v < post.vocab; ++v) s.at(r, j, v) = ratio * post.at(r, j, v);
        }
    }
    return s;
}

// Bayes-optimal probability of recovering a token by argmax when the speaker,
// its phoneme and every emotion are known (lip and identity fully decisive).
inline double bayes_argmax_rate_known_latents(const SynthSpec& spec) {
    return 1.0 - spec.noise_eps + spec.noise_eps / spec.vocab;
}

}  // namespace hicodit
