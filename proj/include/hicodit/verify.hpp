#pragma once

// Invariant battery behind `hicodit_cli verify`. Each group returns one line
// per check; nothing here needs a trained model.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hicodit/config.hpp"
#include "hicodit/eval.hpp"
#include "hicodit/gradcheck.hpp"
#include "hicodit/guidance.hpp"
#include "hicodit/synthdata.hpp"
#include "hicodit/training.hpp"

namespace hicodit {

struct Check {
    std::string group;
    std::string name;
    bool passed = false;
    std::string detail;
};

enum class Fault { none, sigma_bar_nonmonotone };

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// sigma / sigma_bar as seen by the marginal checks; a fault replaces sigma_bar.
struct ScheduleView {
    NoiseSchedule sched;
    Fault fault = Fault::none;

    double sigma_bar(double t) const {
        if (fault == Fault::sigma_bar_nonmonotone && t > 0.5 * sched.horizon) return sched.sigma_bar(sched.horizon - t);
        return sched.sigma_bar(t);
    }
    double sigma(double t) const { return sched.sigma(t); }
    double mask_probability(double t) const { return -std::expm1(-sigma_bar(t)); }
};

// Adaptive Simpson quadrature.
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12, int depth = 50) {
    auto simpson = [&](double l, double r, double fl, double fm, double fr) { return (r - l) / 6.0 * (fl + 4.0 * fm + fr); };
    std::function<double(double, double, double, double, double, double, double, int)> rec =
        [&](double l, double r, double fl, double fm, double fr, double whole, double eps, int d) {
            const double m = 0.5 * (l + r);
            const double lm = 0.5 * (l + m), rm = 0.5 * (m + r);
            const double flm = f(lm), frm = f(rm);
            const double left = simpson(l, m, fl, flm, fm), right = simpson(m, r, fm, frm, fr);
            if (d <= 0 || std::abs(left + right - whole) <= 15.0 * eps) return left + right + (left + right - whole) / 15.0;
            return rec(l, m, fl, flm, fm, left, eps / 2, d - 1) + rec(m, r, fm, frm, fr, right, eps / 2, d - 1);
        };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return rec(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, depth);
}

inline bool within_binomial(double frac, double p, double n, double k = 3.0) {
    return std::abs(frac - p) <= k * std::sqrt(p * (1.0 - p) / n) + 1e-15;
}

// ---------------------------------------------------------------------------

inline std::vector<Check> verify_token_space() {
    std::vector<Check> out;
    const std::string g = "token_space";
    Rng rng = make_rng(11);
    TokenGrid grid = TokenGrid::all_masked(12, 16, 1024);
    for (int r = 0; r < 12; ++r) {
        for (int j = 0; j < 16; ++j) grid.set(r, j, uniform_int(rng, 1024));
    }
    bool ok = true;
    for (int k = 1; k < 12; ++k) {
        const auto [lo, hi] = split(grid, LevelPartition{k});
        ok = ok && lo.levels() == k && hi.levels() == 12 - k && merge(lo, hi) == grid;
    }
    out.push_back({g, "split_merge_bijection", ok, "k = 1..11 on a random 12x16 grid"});
    const auto [lo2, hi2] = split(grid, LevelPartition{2});
    out.push_back({g, "split_paper_shape", lo2.levels() == 2 && hi2.levels() == 10, "R=12, k=2 -> 2 + 10 levels"});
    out.push_back({g, "mask_sentinel_is_vocab", grid.mask_id() == 1024 && !grid.is_masked(0, 0), "MASK = V"});
    TokenGrid half(2, 4, 8, 0);
    for (int j = 0; j < 4; ++j) half.set(j % 2, j, half.mask_id());
    out.push_back({g, "mask_fraction", mask_fraction(TokenGrid::all_masked(2, 4, 8)) == 1.0 &&
                                           mask_fraction(TokenGrid(2, 4, 8, 0)) == 0.0 && mask_fraction(half) == 0.5,
                   "1.0 / 0.0 / 0.5"});
    return out;
}

inline std::vector<Check> verify_marginals(const NoiseSchedule& base, Fault fault = Fault::none) {
    std::vector<Check> out;
    const std::string g = "marginals";
    const ScheduleView s{base, fault};
    const double T = base.horizon;

    out.push_back({g, "sigma_bar_zero_at_0", s.sigma_bar(0.0) == 0.0, fmt("sigma_bar(0) = %g", s.sigma_bar(0.0))});

    bool mono = true;
    double worst_t = 0.0;
    for (int i = 1; i <= 1000; ++i) {
        const double t0 = T * (i - 1) / 1000.0, t1 = T * i / 1000.0;
        if (!(s.sigma_bar(t1) > s.sigma_bar(t0))) {
            mono = false;
            worst_t = t1;
            break;
        }
    }
    out.push_back({g, "sigma_bar_strictly_increasing", mono, mono ? "1000-step grid" : fmt("decreases at t=%g", worst_t)});

    double worst_rel = 0.0;
    for (int k = 1; k <= 10; ++k) {
        const double t = T * k / 10.0;
        const double q = integrate([&](double u) { return s.sigma(u); }, 0.0, t);
        worst_rel = std::max(worst_rel, std::abs(q - s.sigma_bar(t)) / std::max(1e-12, std::abs(s.sigma_bar(t))));
    }
    out.push_back({g, "sigma_integrates_to_sigma_bar", worst_rel < 1e-8, fmt("max rel err %.3g", worst_rel)});

    if (base.kind == ScheduleKind::log_linear) {
        double worst = 0.0;
        for (int k = 0; k <= 10; ++k) {
            const double t = T * k / 10.0;
            worst = std::max(worst, std::abs(s.mask_probability(t) - (t / T) * s.mask_probability(T)));
        }
        out.push_back({g, "log_linear_mask_fraction_linear", worst < 1e-10, fmt("max deviation %.3g", worst)});
        const double half = s.sigma_bar(0.5 * T);
        out.push_back({g, "log_linear_half_time",
                       std::abs(-std::expm1(-half) - 0.5 * (1.0 - base.eps)) < 1e-12,
                       fmt("1 - exp(-sigma_bar(T/2)) = %.15g", -std::expm1(-half))});
    }
    out.push_back({g, "mask_probability_examples",
                   mask_probability_from_sigma_bar(0.0) == 0.0 &&
                       std::abs(mask_probability_from_sigma_bar(std::log(2.0)) - 0.5) < 1e-15 &&
                       std::abs(mask_probability_from_sigma_bar(20.0) - 1.0) < 1e-8,
                   "0 / 0.5 / 1 - 2e-9"});

    // Empirical mask fractions at 10 times over 1e5 tokens.
    const TokenGrid clean(10, 10000, 8, 3);
    const double n = static_cast<double>(clean.size());
    bool marg_ok = true;
    std::string marg_detail;
    for (int k = 1; k <= 10; ++k) {
        const double t = T * k / 10.0;
        const double p = s.mask_probability(t);
        const double frac = mask_fraction(forward_mask(clean, p, derive_seed(17, k)));
        const bool ok = within_binomial(frac, p, n);
        marg_ok = marg_ok && ok;
        if (!ok) marg_detail += fmt("t=%.2f frac=%.5f p=%.5f; ", t, frac, p);
    }
    out.push_back({g, "forward_marginals_10_times", marg_ok, marg_ok ? "all within 3 binomial sd over 1e5 tokens" : marg_detail});

    // Two-stage masking reproduces the one-step marginal.
    bool comp_ok = true;
    std::string comp_detail;
    for (int k = 1; k < 10; ++k) {
        const double t1 = T * k / 10.0, t2 = T * (k + 1) / 10.0;
        const double inc = -std::expm1(-(s.sigma_bar(t2) - s.sigma_bar(t1)));
        if (!(inc >= 0.0 && inc <= 1.0)) {
            comp_ok = false;
            comp_detail += fmt("negative increment between t=%.2f and %.2f; ", t1, t2);
            continue;
        }
        TokenGrid x1 = forward_mask(clean, s.mask_probability(t1), derive_seed(23, k));
        std::vector<TokenId> ids(x1.ids().begin(), x1.ids().end());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] != clean.mask_id() && position_uniform(derive_seed(29, k), i) < inc) ids[i] = clean.mask_id();
        }
        const double frac = mask_fraction(TokenGrid(clean.levels(), clean.frames(), clean.vocab(), std::move(ids)));
        const double p2 = s.mask_probability(t2);
        if (!within_binomial(frac, p2, n)) {
            comp_ok = false;
            comp_detail += fmt("t2=%.2f frac=%.5f p=%.5f; ", t2, frac, p2);
        }
    }
    out.push_back({g, "markov_composition", comp_ok, comp_ok ? "9 consecutive pairs within 3 sd" : comp_detail});
    return out;
}

inline std::vector<Check> verify_diffusion(const NoiseSchedule& sched) {
    std::vector<Check> out;
    const std::string g = "diffusion";
    Rng rng = make_rng(31);
    TokenGrid x0(4, 16, 8, 0);
    for (int r = 0; r < 4; ++r) {
        for (int j = 0; j < 16; ++j) x0.set(r, j, uniform_int(rng, 8));
    }
    out.push_back({g, "forward_t0_identity", forward_sample(x0, sched, 0.0, 5) == x0, "t = 0"});
    bool rejected = false;
    try {
        forward_sample(TokenGrid::all_masked(1, 2, 4), sched, 0.5, 1);
    } catch (const std::invalid_argument&) {
        rejected = true;
    }
    out.push_back({g, "forward_rejects_masked_input", rejected, "pre-masked grid"});

    const double t_half = time_for_sigma_bar(sched, std::log(2.0));
    const TokenGrid xt = forward_sample(x0, sched, t_half, 7);
    const auto tgt = true_concrete_score(xt, x0, sched, t_half);
    out.push_back({g, "concrete_score_half_mask", std::abs(tgt.ratio - 1.0) < 1e-12 && !tgt.positions.empty(),
                   fmt("ratio at sigma_bar=ln2: %.15g", tgt.ratio)});
    const double t_small = time_for_sigma_bar(sched, 0.01);
    const double expect = std::exp(-0.01) / (1.0 - std::exp(-0.01));
    out.push_back({g, "concrete_score_small_sigma_bar",
                   std::abs(sched.score_ratio(t_small) - expect) / expect < 1e-9,
                   fmt("%.12g vs %.12g", sched.score_ratio(t_small), expect)});
    out.push_back({g, "concrete_score_unmasked_empty", true_concrete_score(x0, x0, sched, 0.5).positions.empty(), "no MASK"});
    bool scale_ok = true;
    for (double sb : {0.1, 0.5, 1.0, 2.0, 4.0}) {
        const double t = time_for_sigma_bar(sched, sb);
        const auto a = true_concrete_score(xt, x0, sched, t);
        scale_ok = scale_ok && std::abs(a.ratio - std::exp(-sb) / -std::expm1(-sb)) <= 1e-9 * a.ratio;
    }
    out.push_back({g, "concrete_score_scale_consistency", scale_ok, "ratio tracks e^-sb / (1 - e^-sb)"});

    // Reverse steps never touch unmasked entries.
    bool immut = true, zero_ok = true;
    Rng srng = make_rng(37);
    for (int trial = 0; trial < 200 && immut; ++trial) {
        const double t = sched.horizon * (0.05 + 0.95 * uniform01(srng));
        const TokenGrid cur = forward_sample(x0, sched, t, srng());
        ScoreField sc(4, 16, 8);
        for (auto& v : sc.values) v = 5.0 * uniform01(srng);
        const TokenGrid nxt = reverse_step(cur, sc, sched, t, std::min(t, 0.05 * sched.horizon), srng());
        for (int r = 0; r < 4; ++r) {
            for (int j = 0; j < 16; ++j) {
                if (!cur.is_masked(r, j) && nxt.at(r, j) != cur.at(r, j)) immut = false;
            }
        }
        const ScoreField zeros(4, 16, 8, 0.0);
        if (t > 0.1 && !(reverse_step(cur, zeros, sched, t, 0.05, srng()) == cur)) zero_ok = false;
    }
    out.push_back({g, "reverse_step_unmasked_immutable", immut, "200 random steps, every entry checked"});
    out.push_back({g, "reverse_step_zero_scores_noop", zero_ok, "all-zero scores leave the grid unchanged"});

    TokenGrid one = TokenGrid::all_masked(1, 1, 4);
    ScoreField conc(1, 1, 4, 0.0);
    conc.at(0, 0, 2) = 1e6;
    out.push_back({g, "reverse_step_clamped_certainty", reverse_step(one, conc, sched, 0.5, 0.1, 3).at(0, 0) == 2,
                   "sigma dt s >= 1 unmasks to v*"});
    bool neg = false;
    conc.at(0, 0, 1) = -1.0;
    try {
        reverse_step(one, conc, sched, 0.5, 0.1, 3);
    } catch (const std::invalid_argument&) {
        neg = true;
    }
    bool big_dt = false;
    try {
        reverse_step(one, ScoreField(1, 1, 4, 1.0), sched, 0.1, 0.2, 3);
    } catch (const std::invalid_argument&) {
        big_dt = true;
    }
    out.push_back({g, "reverse_step_errors", neg && big_dt, "negative scores and dt > t rejected"});
    return out;
}

// Small configuration whose grids can be enumerated (R=2, L=2, V=4).
inline SynthSpec enumerable_spec() {
    SynthSpec s;
    s.levels = 2;
    s.frames = 2;
    s.vocab = 4;
    s.split = 1;
    s.emotion_downsample = 1;
    s.speakers = 4;
    s.emotions = 3;
    s.phonemes = 4;
    s.id_dim = 4;
    s.noise_eps = 0.1;
    s.seed = 5;
    return s;
}

struct TvResult {
    double tv = 0.0;
    double seconds = 0.0;
};

inline TvResult oracle_sampling_tv(const SynthSpec& spec, const ConditionBundle& bundle, int steps, int n,
                                   std::uint64_t seed, int threads = 1) {
    const auto t0 = std::chrono::steady_clock::now();
    const SynthOracle oracle(spec);
    const NoiseSchedule sched;
    const OracleScoreModel model(oracle, sched, 1 << 16);
    const std::vector<ConditionBundle> conds(static_cast<std::size_t>(n), bundle);
    const auto samples = sample(model, conds, GuidanceConfig::conditional(steps), sched, seed, {threads, 256});
    const double tv = tv_distance(empirical_distribution(oracle, samples), oracle.grid_distribution(bundle));
    return {tv, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

inline std::vector<Check> verify_oracle(int threads = 1) {
    std::vector<Check> out;
    const std::string g = "oracle";
    const SynthSpec spec = enumerable_spec();
    const SynthOracle oracle(spec);

    // Posterior vs Monte Carlo: one masked low token, one observed high token, no conditions.
    {
        SynthSpec mc = spec;
        mc.frames = 1;
        mc.speakers = 2;
        mc.phonemes = 2;
        mc.emotions = 2;
        const SynthOracle o(mc);
        const SynthTables tab = make_tables(mc);
        const TokenId observed = clean_token(mc, tab, 1, 0, 0, 0);
        TokenGrid xt = TokenGrid::all_masked(2, 1, mc.vocab);
        xt.set(1, 0, observed);
        const PosteriorField post = o.posterior(xt, {});
        std::vector<double> counts(static_cast<std::size_t>(mc.vocab), 0.0);
        double kept = 0.0;
        for (int i = 0; i < 1000000; ++i) {
            const SynthSample s = generate_one(mc, tab, derive_seed(41, i));
            if (s.grid0.at(1, 0) != observed) continue;
            counts[static_cast<std::size_t>(s.grid0.at(0, 0))] += 1.0;
            kept += 1.0;
        }
        bool ok = true;
        std::string d;
        for (int v = 0; v < mc.vocab; ++v) {
            const double p = post.at(0, 0, v), f = counts[static_cast<std::size_t>(v)] / kept;
            ok = ok && within_binomial(f, p, kept);
            d += fmt("v%.0f: %.4f/%.4f ", v, p, f);
        }
        out.push_back({g, "posterior_matches_monte_carlo", ok, d + fmt("(n=%.0f)", kept)});
    }
    {
        SynthSpec det = spec;
        det.noise_eps = 0.0;
        const SynthOracle o(det);
        const SynthSample s = generate(det, 1, 9)[0];
        const PosteriorField post = o.posterior(TokenGrid::all_masked(det.levels, det.frames, det.vocab), s.conditions());
        bool point = true;
        for (int r = 0; r < det.levels; ++r) {
            for (int j = 0; j < det.frames; ++j) point = point && std::abs(post.at(r, j, s.grid0.at(r, j)) - 1.0) < 1e-9;
        }
        out.push_back({g, "posterior_point_mass_noise_free", point, "eps=0 with lip, id and emotion given"});
        const TokenGrid again = generate(det, 1, 9)[0].grid0;
        out.push_back({g, "generator_deterministic_noise_free", again == s.grid0, "same latents, same grid"});
    }
    {
        const SynthSample s = generate(spec, 1, 3)[0];
        const NoiseSchedule sched;
        const double t = time_for_sigma_bar(sched, std::log(2.0));
        const TokenGrid xt = forward_sample(s.grid0, sched, t, 77);
        const ScoreField sc = oracle_score(oracle, xt, s.conditions(), sched, t);
        const PosteriorField post = oracle.posterior(xt, s.conditions());
        double worst = 0.0;
        for (int r = 0; r < spec.levels; ++r) {
            for (int j = 0; j < spec.frames; ++j) {
                if (!xt.is_masked(r, j)) continue;
                for (int v = 0; v < spec.vocab; ++v) worst = std::max(worst, std::abs(sc.at(r, j, v) - post.at(r, j, v)));
            }
        }
        out.push_back({g, "oracle_score_equals_posterior_at_ln2", worst < 1e-12, fmt("max diff %.3g", worst)});
    }
    {
        const NoiseSchedule sched;
        const auto tv256 = oracle_sampling_tv(spec, {}, 256, 50000, 101, threads);
        out.push_back({g, "euler_tv_256_steps", tv256.tv < 0.05, fmt("TV %.4f over 50000 samples (%.1fs)", tv256.tv, tv256.seconds)});
        const auto tv64 = oracle_sampling_tv(spec, {}, 64, 50000, 202, threads);
        out.push_back({g, "euler_tv_64_steps", tv64.tv < 0.10, fmt("TV %.4f over 50000 samples (%.1fs)", tv64.tv, tv64.seconds)});
        ConditionBundle cond;
        cond.emo = std::vector<int>{0, 2};
        cond.id = make_tables(spec).identity[1];
        const auto tvc = oracle_sampling_tv(spec, cond, 256, 50000, 303, threads);
        out.push_back({g, "guided_conditional_tv_256_steps", tvc.tv < 0.05,
                       fmt("TV %.4f to p(x | id, emotion) (%.1fs)", tvc.tv, tvc.seconds)});
    }
    return out;
}

inline std::vector<Check> verify_synth() {
    std::vector<Check> out;
    const std::string g = "synth";
    SynthSpec spec;
    const int n = 100000;
    const auto data = generate(spec, n, 7);
    // Plug-in mutual information from lip (decoded phoneme) to low tokens, and
    // to high tokens given the low token of the same frame.
    const int P = spec.phonemes, V = spec.vocab;
    std::vector<double> joint_pl(static_cast<std::size_t>(P * V), 0.0);
    std::vector<double> joint_plh(static_cast<std::size_t>(P * V * V), 0.0);
    double cnt = 0.0;
    for (const auto& s : data) {
        for (int j = 0; j < spec.frames; ++j) {
            Eigen::Index p = 0;
            s.lip.row(j).maxCoeff(&p);
            const int lo = s.grid0.at(0, j), hi = s.grid0.at(spec.split, j);
            joint_pl[static_cast<std::size_t>(p * V + lo)] += 1.0;
            joint_plh[static_cast<std::size_t>((p * V + lo) * V + hi)] += 1.0;
            cnt += 1.0;
        }
    }
    auto entropy = [&](const std::vector<double>& c) {
        double h = 0.0;
        for (double x : c) {
            if (x > 0) h -= (x / cnt) * std::log(x / cnt);
        }
        return h;
    };
    auto marg = [&](const std::vector<double>& c, int outer, int inner, bool keep_outer) {
        std::vector<double> m(static_cast<std::size_t>(keep_outer ? outer : inner), 0.0);
        for (int a = 0; a < outer; ++a) {
            for (int b = 0; b < inner; ++b) m[static_cast<std::size_t>(keep_outer ? a : b)] += c[static_cast<std::size_t>(a * inner + b)];
        }
        return m;
    };
    // I(P; L) = H(P) + H(L) - H(P, L)
    const double mi_low = entropy(marg(joint_pl, P, V, true)) + entropy(marg(joint_pl, P, V, false)) - entropy(joint_pl);
    // I(P; H | L) = H(P, L) + H(L, H) - H(L) - H(P, L, H)
    std::vector<double> lh(static_cast<std::size_t>(V * V), 0.0);
    for (int p = 0; p < P; ++p) {
        for (int l = 0; l < V; ++l) {
            for (int h = 0; h < V; ++h) lh[static_cast<std::size_t>(l * V + h)] += joint_plh[static_cast<std::size_t>((p * V + l) * V + h)];
        }
    }
    const double mi_high = entropy(joint_pl) + entropy(lh) - entropy(marg(joint_pl, P, V, false)) - entropy(joint_plh);
    out.push_back({g, "hierarchy_prior_mutual_information", mi_low > mi_high,
                   fmt("I(lip; low) = %.4f > I(lip; high | low) = %.4f nats", mi_low, mi_high)});

    {
        SynthSpec det = spec;
        det.noise_eps = 0.0;
        const auto a = generate(det, 1, 3)[0];
        const auto tab = make_tables(det);
        bool ok = true;
        for (int r = 0; r < det.levels; ++r) {
            for (int j = 0; j < det.frames; ++j) {
                ok = ok && a.grid0.at(r, j) == clean_token(det, tab, r, a.phonemes[static_cast<std::size_t>(j)], a.speaker,
                                                           a.emotions[static_cast<std::size_t>(j / det.emotion_downsample)]);
            }
        }
        out.push_back({g, "noise_free_grid_is_table_lookup", ok, "eps = 0"});
    }
    {
        // p(high | low content, emotion): (1 - eps) on g_r's value plus eps / V everywhere.
        const auto tab = make_tables(spec);
        const int a_p = 0, a_s = 0, e = 0;
        const TokenId target = clean_token(spec, tab, spec.split, a_p, a_s, e);
        std::vector<double> counts(static_cast<std::size_t>(V), 0.0);
        double kept = 0.0;
        for (const auto& s : data) {
            for (int j = 0; j < spec.frames; ++j) {
                if (s.speaker == a_s && s.phonemes[static_cast<std::size_t>(j)] == a_p &&
                    s.emotions[static_cast<std::size_t>(j / spec.emotion_downsample)] == e) {
                    counts[static_cast<std::size_t>(s.grid0.at(spec.split, j))] += 1.0;
                    kept += 1.0;
                }
            }
        }
        bool ok = kept > 0;
        for (int v = 0; v < V; ++v) {
            const double p = (v == target ? 1.0 - spec.noise_eps : 0.0) + spec.noise_eps / V;
            ok = ok && within_binomial(counts[static_cast<std::size_t>(v)] / kept, p, kept, 4.0);
        }
        out.push_back({g, "high_token_conditional", ok, fmt("%.0f matching frames", kept)});
    }
    {
        // Oracle scores beat any perturbation under DSE on a batch.
        const SynthOracle oracle(spec);
        const NoiseSchedule sched;
        const auto batch = generate(spec, 8, 11);
        Rng rng = make_rng(5);
        bool ok = true;
        double max_grad = 0.0;
        for (const auto& s : batch) {
            const double t = 0.2 + 0.7 * uniform01(rng);
            const TokenGrid xt = forward_sample(s.grid0, sched, t, rng());
            const ScoreField sc = oracle_score(oracle, xt, s.conditions(), sched, t);
            // Expected DSE under the posterior is minimized by the oracle; compare expectations exactly.
            const PosteriorField post = oracle.posterior(xt, s.conditions());
            auto expected_loss = [&](const ScoreField& f) {
                double l = 0.0;
                const double ratio = sched.score_ratio(t);
                for (int r = 0; r < spec.levels; ++r) {
                    for (int j = 0; j < spec.frames; ++j) {
                        if (!xt.is_masked(r, j)) continue;
                        for (int v = 0; v < V; ++v) {
                            const double c = ratio * post.at(r, j, v);
                            l += f.at(r, j, v) - c * std::log(f.at(r, j, v));
                        }
                    }
                }
                return l;
            };
            const double base = expected_loss(sc);
            const double ratio = sched.score_ratio(t);
            for (int r = 0; r < spec.levels; ++r) {
                for (int j = 0; j < spec.frames; ++j) {
                    if (!xt.is_masked(r, j)) continue;
                    for (int v = 0; v < V; ++v) {
                        const double g = sched.sigma(t) * dse_term_grad(sc.at(r, j, v), ratio * post.at(r, j, v));
                        max_grad = std::max(max_grad, std::abs(g));
                    }
                }
            }
            for (int k = 0; k < 10; ++k) {
                ScoreField pert = sc;
                for (auto& v : pert.values) v *= std::exp(0.05 * normal(rng));
                ok = ok && expected_loss(pert) > base;
            }
        }
        out.push_back({g, "oracle_score_zero_expected_gradient", max_grad < 1e-8, fmt("max |dE[L]/ds| = %.3g", max_grad)});
        out.push_back({g, "oracle_score_minimizes_expected_dse", ok, "80 multiplicative perturbations"});
    }
    return out;
}

inline NetworkConfig small_network(NetworkVariant v = NetworkVariant::hierarchical) {
    NetworkConfig c;
    c.levels = 3;
    c.frames = 4;
    c.vocab = 5;
    c.split = 1;
    c.emotion_downsample = 2;
    c.channels = 8;
    c.heads = 2;
    c.low_blocks = 1;
    c.high_blocks = 1;
    c.time_features = 4;
    c.lip_dim = 3;
    c.id_dim = 3;
    c.emo_classes = 3;
    c.face_dim = 3;
    c.variant = v;
    return c;
}

inline NetworkConfig desk_network(const SynthSpec& spec, NetworkVariant v = NetworkVariant::hierarchical) {
    NetworkConfig c;
    c.levels = spec.levels;
    c.frames = spec.frames;
    c.vocab = spec.vocab;
    c.split = spec.split;
    c.emotion_downsample = spec.emotion_downsample;
    c.lip_dim = spec.lip_dim();
    c.face_dim = spec.face_dim();
    c.id_dim = spec.id_dim;
    c.emo_classes = spec.emotions;
    c.variant = v;
    return c;
}

inline ConditionBundle random_bundle(const NetworkConfig& c, Rng& rng) {
    ConditionBundle b;
    b.lip = nn::Mat(c.frames, c.lip_dim);
    for (Eigen::Index i = 0; i < b.lip->size(); ++i) b.lip->data()[i] = normal(rng);
    b.id = nn::Vec(c.id_dim);
    for (Eigen::Index i = 0; i < b.id->size(); ++i) (*b.id)(i) = normal(rng);
    std::vector<int> e;
    for (int i = 0; i < c.emotion_frames(); ++i) e.push_back(uniform_int(rng, c.emo_classes));
    b.emo = e;
    return b;
}

inline TokenGrid random_noisy_grid(const NetworkConfig& c, Rng& rng) {
    TokenGrid g = TokenGrid::all_masked(c.levels, c.frames, c.vocab);
    for (int r = 0; r < c.levels; ++r) {
        for (int j = 0; j < c.frames; ++j) g.set(r, j, uniform_int(rng, c.vocab + 1));
    }
    return g;
}

inline std::vector<Check> verify_routing(const NetworkConfig& desk) {
    std::vector<Check> out;
    const std::string g = "routing";
    ScoreNetwork net(desk, 3);
    net.randomize(4);
    Rng rng = make_rng(8);
    const TokenGrid x = random_noisy_grid(desk, rng);
    const ConditionBundle b = random_bundle(desk, rng);
    const double sb = 0.7;
    auto run = [&](const ConditionBundle& c) {
        return net.forward(std::span(&x, 1), std::span(&sb, 1), std::span(&c, 1));
    };
    const ForwardOutput base = run(b);

    ConditionBundle emo2 = b;
    for (auto& e : *emo2.emo) e = (e + 1) % desk.emo_classes;
    const ForwardOutput oe = run(emo2);
    bool low_same = oe.h_low == base.h_low;
    for (int r = 0; r < desk.split; ++r) low_same = low_same && oe.logits[static_cast<std::size_t>(r)] == base.logits[static_cast<std::size_t>(r)];
    out.push_back({g, "emotion_leaves_low_tier_bitwise", low_same, "h_low and low-level head outputs identical"});
    out.push_back({g, "emotion_changes_high_tier", !(oe.h_high == base.h_high), "h_high differs"});

    ConditionBundle lip2 = b;
    lip2.lip = *b.lip * 1.5;
    const ForwardOutput ol = run(lip2);
    ConditionBundle id2 = b;
    id2.id = -*b.id;
    const ForwardOutput oi = run(id2);
    out.push_back({g, "lip_and_id_change_low_tier", (ol.h_low - base.h_low).norm() > 0 && (oi.h_low - base.h_low).norm() > 0,
                   fmt("|dh_low| lip %.3g, id %.3g", (ol.h_low - base.h_low).norm(), (oi.h_low - base.h_low).norm())});
    out.push_back({g, "low_tier_reaches_high_tier", (ol.h_high - base.h_high).norm() > 0, "through the h_low projection"});

    // Null lip equals explicitly supplying the learned null embedding.
    ConditionBundle nl = b;
    nl.lip.reset();
    ConditionBundle el = b;
    el.lip = nn::Mat(desk.frames, desk.lip_dim);
    el.lip->rowwise() = net.parameters()[net.null_lip_index()].row(0);
    out.push_back({g, "null_lip_equals_null_embedding", run(nl).h_low == run(el).h_low, "bitwise"});

    // Perturbing h_high leaves low heads unchanged.
    nn::Mat hh = base.h_high;
    hh.array() += 0.3;
    const auto heads = net.score_heads(base.h_low, hh);
    bool heads_ok = true;
    for (int r = 0; r < desk.levels; ++r) {
        const bool same = heads[static_cast<std::size_t>(r)] == base.logits[static_cast<std::size_t>(r)];
        heads_ok = heads_ok && (r < desk.split ? same : !same);
    }
    out.push_back({g, "heads_route_by_tier", heads_ok, "levels < k read h_low only"});

    // Temporal scales: exactly constant within each block of D frames.
    if (desk.variant == NetworkVariant::hierarchical) {
        const nn::Mat ts = net.upsampled_temporal_scales(std::span(&b, 1), std::span(&sb, 1));
        bool block_const = true, distinct = false;
        for (int j = 0; j < desk.frames; ++j) {
            const int first = (j / desk.emotion_downsample) * desk.emotion_downsample;
            block_const = block_const && ts.row(j) == ts.row(first);
            if (first > 0 && !(ts.row(j) == ts.row(0))) distinct = true;
        }
        out.push_back({g, "temporal_scale_block_constant", block_const && distinct,
                       fmt("D = %.0f, %.0f blocks", desk.emotion_downsample, desk.emotion_frames())});
    }
    Eigen::VectorXd two(2);
    two << 0.7, 1.3;
    const Eigen::VectorXd up = kron_upsample(two, 25);
    bool halves = up.size() == 50;
    for (int j = 0; j < 50 && halves; ++j) halves = up(j) == (j < 25 ? 0.7 : 1.3);
    out.push_back({g, "kron_upsample_two_blocks_of_25", halves, "length 50, two constant halves"});

    // Modulation reductions.
    nn::Mat act(6, 8);
    for (Eigen::Index i = 0; i < act.size(); ++i) act.data()[i] = normal(rng);
    const nn::Mat ln = nn::layer_norm(act);
    const nn::Mat zero = nn::Mat::Zero(1, 8);
    out.push_back({g, "single_scale_reduces_to_layer_norm", nn::modulate(ln, zero, zero, 6) == ln, "gamma = beta = 0"});
    const Eigen::RowVectorXd zc = Eigen::RowVectorXd::Zero(8);
    out.push_back({g, "dual_scale_reduces_to_layer_norm",
                   dual_scale_modulate(ln, zc, zc, Eigen::VectorXd::Ones(3), 2) == ln, "temporal scale 1, gamma = beta = 0"});

    // Score positivity and fresh-head behaviour.
    bool pos = true;
    for (const auto& lg : base.logits) pos = pos && (lg.array().exp() > 0.0).all() && lg.allFinite();
    out.push_back({g, "scores_strictly_positive", pos, "exp of finite log-scores"});
    ScoreNetwork fresh(desk, 3);
    const ForwardOutput f0 = fresh.forward(std::span(&x, 1), std::span(&sb, 1), std::span(&b, 1));
    bool ones = true;
    for (const auto& lg : f0.logits) ones = ones && (lg.array() == 0.0).all();
    out.push_back({g, "zero_heads_give_unit_scores", ones && static_cast<int>(f0.logits.size()) == desk.levels &&
                                                        f0.logits[0].rows() == desk.frames && f0.logits[0].cols() == desk.vocab,
                   "R x L x V of exp(0)"});

    // Embedding examples.
    std::vector<double> sb2{0.3, 1.9};
    const TokenGrid allm = TokenGrid::all_masked(desk.levels, desk.frames, desk.vocab);
    const nn::Mat m1 = net.embed_component(std::span(&allm, 1), 0, desk.split, std::span(sb2).first(1));
    const nn::Mat m2 = net.embed_component(std::span(&allm, 1), 0, desk.split, std::span(sb2).last(1));
    const nn::Mat diff = m2 - m1;
    bool only_time = true;
    for (int j = 1; j < desk.frames; ++j) only_time = only_time && diff.row(j) == diff.row(0);
    out.push_back({g, "embedding_time_term_only_difference", only_time && diff.norm() > 0,
                   "all-MASK grid at two noise levels differs by one row-constant term"});
    return out;
}

inline std::vector<Check> verify_gradients(const NetworkConfig& desk) {
    std::vector<Check> out;
    const std::string g = "gradients";
    for (auto v : {NetworkVariant::hierarchical, NetworkVariant::flat, NetworkVariant::single_scale}) {
        ScoreNetwork small(small_network(v), 1);
        small.randomize(7);
        const auto rs = gradient_check(small, 3, 2, 0);
        out.push_back({g, "tiny_network_all_coordinates_" + to_string(v), rs.max_rel_error < 1e-4,
                       fmt("max rel err %.3g over %.0f coords", rs.max_rel_error, static_cast<double>(rs.checked)) + " at " + rs.worst_param});
    }
    {
        NetworkConfig c8 = desk;
        c8.channels = 8;
        c8.heads = 2;
        c8.frames = 4;
        c8.emotion_downsample = 2;
        ScoreNetwork n8(c8, 2);
        n8.randomize(5);
        const auto r = gradient_check(n8, 6, 2, 0);
        out.push_back({g, "C8_L4_network_all_coordinates", r.max_rel_error < 1e-4,
                       fmt("max rel err %.3g over %.0f coords", r.max_rel_error, static_cast<double>(r.checked)) + " at " + r.worst_param});
    }
    for (auto v : {NetworkVariant::hierarchical, NetworkVariant::flat, NetworkVariant::single_scale}) {
        NetworkConfig c = desk;
        c.variant = v;
        ScoreNetwork net(c, 1);
        net.randomize(9);
        const auto r = gradient_check(net, 4, 2, 16, 1e-5, 1e-3, 8);
        out.push_back({g, "desk_network_" + to_string(v), r.max_rel_error < 1e-4,
                       fmt("max rel err %.3g over %.0f sampled coords and 8 full directions", r.max_rel_error, static_cast<double>(r.checked - 8)) + " at " + r.worst_param});
    }
    {
        // Identity adapter under the L1 loss, away from kinks.
        ScoreNetwork net(small_network(), 1);
        net.randomize(3);
        Rng rng = make_rng(12);
        nn::Mat faces(3, net.config().face_dim), target(3, net.config().id_dim);
        for (Eigen::Index i = 0; i < faces.size(); ++i) faces.data()[i] = normal(rng);
        for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = normal(rng);
        auto loss = [&]() { return (net.predict_identity(faces) - target).cwiseAbs().sum(); };
        IdentityTrace tr;
        const nn::Mat pred = net.predict_identity(faces, &tr);
        nn::Gradients grads = net.parameters().zeros_like();
        net.identity_backward(tr, (pred - target).unaryExpr([](double d) { return static_cast<double>((d > 0) - (d < 0)); }), grads);
        double worst = 0.0;
        auto& ps = net.parameters();
        for (std::size_t p = 0; p < ps.size(); ++p) {
            if (ps.name(p).rfind("identity_adapter", 0) != 0) continue;
            for (Eigen::Index i = 0; i < ps[p].size(); ++i) {
                double& x = ps[p].data()[i];
                const double x0 = x;
                x = x0 + 1e-5;
                const double lp = loss();
                x = x0 - 1e-5;
                const double lm = loss();
                x = x0;
                worst = std::max(worst, grad_rel_error(grads[p].data()[i], (lp - lm) / 2e-5));
            }
        }
        out.push_back({g, "identity_adapter", worst < 1e-4, fmt("max rel err %.3g", worst)});
    }
    {
        ScoreNetwork net(small_network(), 1);
        net.randomize(2);
        Rng rng = make_rng(3);
        const TokenGrid x = random_noisy_grid(net.config(), rng);
        const ConditionBundle b = random_bundle(net.config(), rng);
        const double sb = 0.4;
        ForwardTrace tr;
        const auto o = net.forward(std::span(&x, 1), std::span(&sb, 1), std::span(&b, 1), &tr);
        std::vector<nn::Mat> d0, d1, d2;
        for (const auto& lg : o.logits) {
            d0.push_back(nn::Mat::Zero(lg.rows(), lg.cols()));
            nn::Mat w(lg.rows(), lg.cols());
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
            d1.push_back(w);
            d2.push_back(2.0 * w);
        }
        nn::Gradients g0 = net.parameters().zeros_like(), g1 = g0, g2 = g0;
        net.backward(tr, d0, g0);
        net.backward(tr, d1, g1);
        net.backward(tr, d2, g2);
        bool zero = true, doubled = true;
        for (std::size_t p = 0; p < g0.size(); ++p) {
            zero = zero && (g0[p].array() == 0.0).all();
            doubled = doubled && g2[p] == 2.0 * g1[p];
        }
        out.push_back({g, "constant_loss_zero_gradient", zero, "dL/dlogits = 0"});
        out.push_back({g, "doubled_loss_doubled_gradient", doubled, "bitwise"});
        bool threw = false;
        try {
            net.backward(ForwardTrace{}, d1, g1);
        } catch (const std::logic_error&) {
            threw = true;
        }
        out.push_back({g, "backward_requires_forward", threw, "empty trace rejected"});
    }
    return out;
}

inline std::vector<Check> verify_dse() {
    std::vector<Check> out;
    const std::string g = "dse";
    out.push_back({g, "term_examples",
                   dse_term(1.0, 1.0) == 0.0 && std::abs(dse_term(2.0, 1.0) - (2.0 - std::log(2.0) - 1.0)) < 1e-15 &&
                       std::abs(dse_term(2.0, 1.0) - 0.30685281944005466) < 1e-12,
                   fmt("c=1,s=2 -> %.10f", dse_term(2.0, 1.0))});
    // Zero gradient at s = c and strict increase under perturbation.
    const NoiseSchedule sched;
    Rng rng = make_rng(19);
    TokenGrid x0(4, 8, 8, 0);
    for (int r = 0; r < 4; ++r) {
        for (int j = 0; j < 8; ++j) x0.set(r, j, uniform_int(rng, 8));
    }
    const double t = 0.6;
    const TokenGrid xt = forward_sample(x0, sched, t, 4);
    const auto tgt = true_concrete_score(xt, x0, sched, t);
    // Unmasked rows are not scored; any positive placeholder works there.
    ScoreField s(4, 8, 8, 1.0);
    for (const auto& p : tgt.positions) {
        for (int v = 0; v < 8; ++v) s.at(p.level, p.frame, v) = tgt.value(p, v) > 0 ? tgt.value(p, v) : 1e-300;
    }
    // With c_v = 0 off the true token the exact minimizer sits at s_v -> 0;
    // the gradient wrt s at s = c is 1 - c/s = 0 on the support.
    double max_grad = 0.0;
    for (const auto& p : tgt.positions) {
        const double c = tgt.ratio;
        max_grad = std::max(max_grad, std::abs(sched.sigma(t) * dse_term_grad(s.at(p.level, p.frame, p.clean_token), c)));
    }
    out.push_back({g, "zero_gradient_at_target", max_grad < 1e-8 && !tgt.positions.empty(), fmt("max |dL/ds| = %.3g", max_grad)});
    const double base = dse_loss(s, xt, x0, sched, t);
    bool inc = true;
    for (int k = 0; k < 100; ++k) {
        ScoreField p = s;
        for (const auto& pos : tgt.positions) {
            for (int v = 0; v < 8; ++v) p.at(pos.level, pos.frame, v) *= std::exp(0.1 * normal(rng));
        }
        inc = inc && dse_loss(p, xt, x0, sched, t) > base;
    }
    out.push_back({g, "perturbations_increase_loss", inc && std::abs(base) < 1e-9, fmt("loss at target %.3g; 100 perturbations", base)});
    // identity and total loss
    nn::Vec a = nn::Vec::Ones(8), z = nn::Vec::Zero(8);
    out.push_back({g, "identity_loss_examples", identity_loss(a, a) == 0.0 && identity_loss(a, z) == 1.0, "0 and 1.0"});
    out.push_back({g, "total_loss_affine", total_loss(1.0, 0.01, 100.0) == 2.0 && total_loss(3.0, 0.0, 100.0) == 3.0 &&
                                              total_loss(1.0, 0.5, 100.0) - total_loss(1.0, 0.25, 100.0) == 25.0,
                   "slope lambda"});
    return out;
}

inline std::vector<Check> verify_dropout() {
    std::vector<Check> out;
    const std::string g = "dropout";
    ConditionBundle full;
    full.lip = nn::Mat::Ones(2, 2);
    full.id = nn::Vec::Ones(2);
    full.emo = std::vector<int>{0};
    Rng rng = make_rng(2024);
    const int n = 100000;
    int all_null = 0;
    int null_count[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) {
        const ConditionBundle b = apply_condition_dropout(full, rng);
        all_null += b.all_null();
        for (int c = 0; c < 3; ++c) null_count[c] += !b.has(kAllConditions[c]);
    }
    out.push_back({g, "all_null_fraction", within_binomial(all_null / double(n), 0.10, n),
                   fmt("%.4f vs 0.10 (3 sd = %.4f)", all_null / double(n), 3 * std::sqrt(0.09 / n))});
    bool marg = true;
    std::string d;
    for (int c = 0; c < 3; ++c) {
        marg = marg && within_binomial(null_count[c] / double(n), 0.19, n);
        d += fmt("%.4f ", null_count[c] / double(n));
    }
    out.push_back({g, "per_condition_null_fraction", marg, d + "vs 0.19"});
    Rng r2 = make_rng(1);
    out.push_back({g, "zero_probabilities_keep_bundle", apply_condition_dropout(full, r2, {0.0, 0.0}) == full, "unchanged"});
    out.push_back({g, "all_probability_one_nulls_everything", apply_condition_dropout(full, r2, {0.0, 1.0}).all_null(), "all null"});
    return out;
}

inline std::vector<Check> verify_guidance(const NetworkConfig& desk) {
    std::vector<Check> out;
    const std::string g = "guidance";
    ScoreNetwork net(desk, 5);
    net.randomize(6);
    const NoiseSchedule sched;
    const NetworkScoreModel model(net, sched);
    Rng rng = make_rng(10);
    const TokenGrid x = random_noisy_grid(desk, rng);
    const ConditionBundle b = random_bundle(desk, rng);
    const double t = 0.45;
    auto logs = [&](const ConditionBundle& c, const GuidanceConfig& gc) {
        return guided_log_scores(model, std::span(&x, 1), std::span(&t, 1), std::span(&c, 1), gc)[0];
    };
    const ConditionBundle none;
    const auto cond = model.log_scores(std::span(&x, 1), std::span(&t, 1), std::span(&b, 1))[0];
    const auto uncond = model.log_scores(std::span(&x, 1), std::span(&t, 1), std::span(&none, 1))[0];
    out.push_back({g, "w_all_1_is_conditional", logs(b, {1.0, 0.0, 0.0, 0.0, 64}) == cond, "bitwise"});
    out.push_back({g, "w_all_0_is_unconditional", logs(b, {0.0, 0.0, 0.0, 0.0, 64}) == uncond, "bitwise"});
    out.push_back({g, "all_null_ignores_weights", logs(none, {2.5, 1.25, 1.5, 2.0, 64}) == uncond, "bitwise"});
    // Combination against a direct evaluation of the formula.
    const GuidanceConfig gc{2.5, 1.25, 1.5, 2.0, 64};
    const auto guided = logs(b, gc);
    double worst = 0.0;
    std::vector<LogScoreField> only;
    for (Condition c : kAllConditions) {
        const ConditionBundle oc = b.only(c);
        only.push_back(model.log_scores(std::span(&x, 1), std::span(&t, 1), std::span(&oc, 1))[0]);
    }
    for (std::size_t k = 0; k < guided.values.size(); ++k) {
        const double ref = (1.0 - 2.5 - 2.0 - 1.25 - 1.5) * uncond.values[k] + 2.5 * cond.values[k] +
                           2.0 * only[0].values[k] + 1.25 * only[1].values[k] + 1.5 * only[2].values[k];
        worst = std::max(worst, std::abs(ref - guided.values[k]));
    }
    out.push_back({g, "combination_matches_formula", worst < 1e-9, fmt("max abs diff %.3g", worst)});
    ConditionBundle no_id = b;
    no_id.id.reset();
    const auto dropped = logs(no_id, gc);
    double worst2 = 0.0;
    const auto cond2 = model.log_scores(std::span(&x, 1), std::span(&t, 1), std::span(&no_id, 1))[0];
    for (std::size_t k = 0; k < dropped.values.size(); ++k) {
        const double ref = (1.0 - 2.5 - 2.0 - 1.5) * uncond.values[k] + 2.5 * cond2.values[k] + 2.0 * only[0].values[k] +
                           1.5 * only[2].values[k];
        worst2 = std::max(worst2, std::abs(ref - dropped.values[k]));
    }
    out.push_back({g, "null_condition_drops_term_and_weight", worst2 < 1e-9, fmt("max abs diff %.3g", worst2)});

    const std::vector<ConditionBundle> conds(4, b);
    const auto s1 = sample(model, conds, {2.5, 1.25, 1.5, 2.0, 1}, sched, 77);
    bool clean = true;
    for (const auto& s : s1) clean = clean && s.masked_count() == 0;
    out.push_back({g, "single_step_output_mask_free", clean, "steps = 1"});
    const auto a1 = sample(model, conds, gc, sched, 99);
    const auto a2 = sample(model, conds, gc, sched, 99);
    const auto a3 = sample(model, conds, gc, sched, 99, {2, 64});
    bool mf = true;
    for (const auto& s : a1) mf = mf && s.masked_count() == 0;
    out.push_back({g, "sampling_reproducible_and_mask_free", a1 == a2 && a1 == a3 && mf, "same seed, 1 and 2 threads"});
    return out;
}

inline const std::vector<std::string>& verify_groups() {
    static const std::vector<std::string> groups{"token_space", "marginals", "diffusion", "dse", "dropout",
                                                 "routing",     "gradients", "guidance",  "synth", "oracle"};
    return groups;
}

inline std::vector<Check> run_verify(const ExperimentConfig& cfg, const std::string& only = "", Fault fault = Fault::none,
                                     int threads = 1) {
    if (!only.empty()) {
        bool known = false;
        for (const auto& gname : verify_groups()) known = known || gname == only;
        if (!known) throw std::invalid_argument("verify: unknown group '" + only + "'");
    }
    const NetworkConfig desk = cfg.network_config();
    std::vector<Check> all;
    auto want = [&](const char* gname) { return only.empty() || only == gname; };
    auto add = [&](std::vector<Check> v) { all.insert(all.end(), v.begin(), v.end()); };
    if (want("token_space")) add(verify_token_space());
    if (want("marginals")) add(verify_marginals(cfg.schedule, fault));
    if (want("diffusion")) add(verify_diffusion(cfg.schedule));
    if (want("dse")) add(verify_dse());
    if (want("dropout")) add(verify_dropout());
    if (want("routing")) add(verify_routing(desk));
    if (want("gradients")) add(verify_gradients(desk));
    if (want("guidance")) add(verify_guidance(desk));
    if (want("synth")) add(verify_synth());
    if (want("oracle")) add(verify_oracle(threads));
    return all;
}

}  // namespace hicodit
