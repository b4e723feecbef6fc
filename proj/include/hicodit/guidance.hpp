#pragma once

// Score models, multi-condition guidance in log-score space, and the Euler
// reverse sampler.
//
//   log s_hat = (1 - w_all - sum_c w_c) log s(null) + w_all log s(all) + sum_c w_c log s(only c)
//
// Conditions absent from the bundle drop their term and weight.

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/conditions.hpp"
#include "hicodit/diffusion.hpp"
#include "hicodit/network.hpp"
#include "hicodit/parallel.hpp"
#include "hicodit/schedule.hpp"
#include "hicodit/synthdata.hpp"

namespace hicodit {

// Anything that maps (x_t, t, conditions) to log concrete scores.
class ScoreModel {
  public:
    virtual ~ScoreModel() = default;
    virtual int levels() const = 0;
    virtual int frames() const = 0;
    virtual int vocab() const = 0;
    virtual std::vector<LogScoreField> log_scores(std::span<const TokenGrid> grids, std::span<const double> times,
                                                  std::span<const ConditionBundle> conds) const = 0;
};

class NetworkScoreModel final : public ScoreModel {
  public:
    NetworkScoreModel(const ScoreNetwork& net, NoiseSchedule sched) : net_(net), sched_(sched) {}

    int levels() const override { return net_.config().levels; }
    int frames() const override { return net_.config().frames; }
    int vocab() const override { return net_.config().vocab; }

    std::vector<LogScoreField> log_scores(std::span<const TokenGrid> grids, std::span<const double> times,
                                          std::span<const ConditionBundle> conds) const override {
        std::vector<double> sbars;
        sbars.reserve(times.size());
        for (double t : times) sbars.push_back(sched_.sigma_bar(t));
        return net_.log_scores(grids, sbars, conds);
    }

  private:
    const ScoreNetwork& net_;
    NoiseSchedule sched_;
};

// Zero oracle scores map to this log value so guidance weights stay finite.
inline constexpr double kLogScoreFloor = -700.0;

// Exact marginalized scores from the synthetic oracle. Posteriors do not depend
// on t, so they are memoized per (grid, conditions) when `memo_limit` > 0.
class OracleScoreModel final : public ScoreModel {
  public:
    OracleScoreModel(const SynthOracle& oracle, NoiseSchedule sched, std::size_t memo_limit = 0)
        : oracle_(oracle), sched_(sched), memo_limit_(memo_limit) {}

    int levels() const override { return oracle_.spec().levels; }
    int frames() const override { return oracle_.spec().frames; }
    int vocab() const override { return oracle_.spec().vocab; }

    std::vector<LogScoreField> log_scores(std::span<const TokenGrid> grids, std::span<const double> times,
                                          std::span<const ConditionBundle> conds) const override {
        std::vector<LogScoreField> out;
        out.reserve(grids.size());
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const PosteriorField post = posterior(grids[i], conds[i]);
            const double log_ratio = std::log(sched_.score_ratio(times[i]));
            LogScoreField f(post.levels, post.frames, post.vocab, 0.0);
            for (std::size_t k = 0; k < f.values.size(); ++k) {
                const double p = post.values[k];
                f.values[k] = p > 0.0 ? std::max(kLogScoreFloor, log_ratio + std::log(p)) : kLogScoreFloor;
            }
            out.push_back(std::move(f));
        }
        return out;
    }

  private:
    PosteriorField posterior(const TokenGrid& g, const ConditionBundle& c) const {
        if (memo_limit_ == 0) return oracle_.posterior(g, c);
        std::string key(reinterpret_cast<const char*>(g.ids().data()), g.ids().size() * sizeof(TokenId));
        auto append = [&key](const double* p, std::size_t n) {
            key.push_back('|');
            key.append(reinterpret_cast<const char*>(p), n * sizeof(double));
        };
        if (c.lip) append(c.lip->data(), static_cast<std::size_t>(c.lip->size()));
        key.push_back('#');
        if (c.id) append(c.id->data(), static_cast<std::size_t>(c.id->size()));
        key.push_back('#');
        if (c.emo) {
            for (int e : *c.emo) key += std::to_string(e) + ",";
        }
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        }
        PosteriorField p = oracle_.posterior(g, c);
        std::lock_guard<std::mutex> lock(mu_);
        if (memo_.size() < memo_limit_) memo_.emplace(std::move(key), p);
        return p;
    }

    const SynthOracle& oracle_;
    NoiseSchedule sched_;
    std::size_t memo_limit_;
    mutable std::mutex mu_;
    mutable std::map<std::string, PosteriorField> memo_;
};

struct GuidanceConfig {
    double w_all = 2.5;
    double w_id = 1.25;
    double w_emo = 1.5;
    double w_lip = 2.0;
    int steps = 64;

    double weight(Condition c) const {
        switch (c) {
            case Condition::lip: return w_lip;
            case Condition::id: return w_id;
            case Condition::emo: return w_emo;
        }
        return 0.0;
    }

    void validate() const {
        if (steps < 1) throw std::invalid_argument("guidance: steps must be >= 1");
        for (double w : {w_all, w_id, w_emo, w_lip}) {
            if (!std::isfinite(w)) throw std::invalid_argument("guidance: weights must be finite");
        }
    }

    // Plain conditional sampling: w_all = 1, every w_c = 0.
    static GuidanceConfig conditional(int steps = 64) { return {1.0, 0.0, 0.0, 0.0, steps}; }
};

struct GuidanceTerm {
    ConditionBundle bundle;
    double weight = 0.0;
};

// Terms of the log-space combination for one bundle, zero-weight terms removed.
inline std::vector<GuidanceTerm> guidance_terms(const ConditionBundle& bundle, const GuidanceConfig& g) {
    if (bundle.all_null()) return {{ConditionBundle{}, 1.0}};
    std::vector<GuidanceTerm> terms;
    double null_w = 1.0 - g.w_all;
    for (Condition c : kAllConditions) {
        if (bundle.has(c)) null_w -= g.weight(c);
    }
    if (null_w != 0.0) terms.push_back({ConditionBundle{}, null_w});
    if (g.w_all != 0.0) terms.push_back({bundle, g.w_all});
    for (Condition c : kAllConditions) {
        if (bundle.has(c) && g.weight(c) != 0.0) terms.push_back({bundle.only(c), g.weight(c)});
    }
    return terms;
}

// Guided log-scores for a batch; every term of every sample goes through one
// model call.
inline std::vector<LogScoreField> guided_log_scores(const ScoreModel& model, std::span<const TokenGrid> grids,
                                                    std::span<const double> times,
                                                    std::span<const ConditionBundle> bundles, const GuidanceConfig& g) {
    if (grids.size() != times.size() || grids.size() != bundles.size()) {
        throw std::invalid_argument("guided_log_scores: batch spans differ in length");
    }
    std::vector<TokenGrid> eval_grids;
    std::vector<double> eval_times;
    std::vector<ConditionBundle> eval_bundles;
    std::vector<std::vector<double>> weights(grids.size());
    for (std::size_t i = 0; i < grids.size(); ++i) {
        for (auto& term : guidance_terms(bundles[i], g)) {
            eval_grids.push_back(grids[i]);
            eval_times.push_back(times[i]);
            eval_bundles.push_back(std::move(term.bundle));
            weights[i].push_back(term.weight);
        }
    }
    const auto fields = model.log_scores(eval_grids, eval_times, eval_bundles);
    std::vector<LogScoreField> out;
    out.reserve(grids.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < grids.size(); ++i) {
        if (weights[i].size() == 1 && weights[i][0] == 1.0) {
            out.push_back(fields[k++]);
            continue;
        }
        LogScoreField f(model.levels(), model.frames(), model.vocab(), 0.0);
        for (double w : weights[i]) {
            const auto& src = fields[k++];
            for (std::size_t n = 0; n < f.values.size(); ++n) f.values[n] += w * src.values[n];
        }
        out.push_back(std::move(f));
    }
    return out;
}

inline ScoreField guided_score(const ScoreModel& model, const TokenGrid& grid_t, double t,
                               const ConditionBundle& bundle, const GuidanceConfig& g) {
    return exp_field(guided_log_scores(model, std::span(&grid_t, 1), std::span(&t, 1), std::span(&bundle, 1), g)[0]);
}

struct SampleOptions {
    int threads = 1;
    int batch = 64;  // samples per model call
};

// Euler reverse sampling from the all-MASK grid at t = T down to 0. Sample i
// uses the stream derive_seed(seed, i); model calls are grouped in fixed
// chunks of `batch` samples, so results do not depend on the thread count.
inline std::vector<TokenGrid> sample(const ScoreModel& model, std::span<const ConditionBundle> conditions,
                                     const GuidanceConfig& g, const NoiseSchedule& sched, std::uint64_t seed,
                                     const SampleOptions& opt = {}) {
    g.validate();
    sched.validate();
    const std::size_t n = conditions.size();
    std::vector<TokenGrid> out(n);
    const double dt = sched.horizon / g.steps;
    const std::size_t per_call = static_cast<std::size_t>(std::max(1, opt.batch));
    const std::size_t calls = (n + per_call - 1) / per_call;
    parallel_for(calls, opt.threads, [&](std::size_t cb, std::size_t ce) {
        for (std::size_t c = cb; c < ce; ++c) {
            const std::size_t b0 = c * per_call, b1 = std::min(n, b0 + per_call);
            std::vector<TokenGrid> grids(b1 - b0, TokenGrid::all_masked(model.levels(), model.frames(), model.vocab()));
            for (int k = 0; k < g.steps; ++k) {
                const double t = sched.horizon - k * dt;
                const double step = (k == g.steps - 1) ? t : dt;
                std::vector<std::size_t> active;
                for (std::size_t i = 0; i < grids.size(); ++i) {
                    if (grids[i].masked_count() > 0) active.push_back(i);
                }
                if (active.empty()) break;
                std::vector<TokenGrid> ag;
                std::vector<ConditionBundle> ab;
                for (auto i : active) {
                    ag.push_back(grids[i]);
                    ab.push_back(conditions[b0 + i]);
                }
                const std::vector<double> times(active.size(), t);
                const auto logs = guided_log_scores(model, ag, times, ab, g);
                for (std::size_t a = 0; a < active.size(); ++a) {
                    const std::size_t i = active[a];
                    const std::uint64_t s = derive_seed(derive_seed(seed, b0 + i), static_cast<std::uint64_t>(k));
                    grids[i] = reverse_step(grids[i], exp_field(logs[a]), sched, t, step, s);
                }
            }
            for (std::size_t i = 0; i < grids.size(); ++i) out[b0 + i] = std::move(grids[i]);
        }
    });
    return out;
}

}  // namespace hicodit
