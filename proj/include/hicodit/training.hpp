#pragma once

// Score-entropy training: per-position DSE terms, identity alignment loss,
// condition dropout, AdamW and the training loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/conditions.hpp"
#include "hicodit/diffusion.hpp"
#include "hicodit/network.hpp"
#include "hicodit/rng.hpp"
#include "hicodit/schedule.hpp"
#include "hicodit/token_space.hpp"

namespace hicodit {

// N(c) = c log c - c, with N(0) = 0.
inline double dse_normalizer(double c) { return c > 0.0 ? c * std::log(c) - c : 0.0; }

// s - c log s + N(c); nonnegative with minimum 0 at s = c.
inline double dse_term(double s, double c) {
    if (!(s > 0.0)) throw std::domain_error("dse: scores must be strictly positive");
    return s - (c > 0.0 ? c * std::log(s) : 0.0) + dse_normalizer(c);
}

// d/ds of dse_term.
inline double dse_term_grad(double s, double c) { return 1.0 - c / s; }

// sigma(t) * sum over masked (level, frame) and v of dse_term(s_v, c_v).
inline double dse_loss(const ScoreField& scores, const TokenGrid& grid_t, const TokenGrid& grid0,
                       const NoiseSchedule& sched, double t) {
    const ConcreteScoreTarget target = true_concrete_score(grid_t, grid0, sched, t);
    if (scores.levels != grid_t.levels() || scores.frames != grid_t.frames() || scores.vocab != grid_t.vocab()) {
        throw std::invalid_argument("dse_loss: score field shape does not match grid");
    }
    double total = 0.0;
    for (const auto& p : target.positions) {
        const double* s = scores.row(p.level, p.frame);
        for (int v = 0; v < scores.vocab; ++v) total += dse_term(s[v], target.value(p, v));
    }
    return target.positions.empty() ? 0.0 : sched.sigma(t) * total;
}

struct DseResult {
    double loss = 0.0;
    LogScoreField grad;  // dL / d log s, zero at unmasked positions
    int masked = 0;
};

// Same loss from log-scores, with its gradient w.r.t. the log-scores:
// sigma(t) (s_v - c_v).
inline DseResult dse_loss_from_log(const LogScoreField& log_scores, const TokenGrid& grid_t, const TokenGrid& grid0,
                                   const NoiseSchedule& sched, double t) {
    const ConcreteScoreTarget target = true_concrete_score(grid_t, grid0, sched, t);
    if (log_scores.levels != grid_t.levels() || log_scores.frames != grid_t.frames() ||
        log_scores.vocab != grid_t.vocab()) {
        throw std::invalid_argument("dse_loss: score field shape does not match grid");
    }
    DseResult res;
    res.grad = LogScoreField(log_scores.levels, log_scores.frames, log_scores.vocab);
    res.masked = static_cast<int>(target.positions.size());
    if (target.positions.empty()) return res;
    const double sig = sched.sigma(t);
    double total = 0.0;
    for (const auto& p : target.positions) {
        const double* ls = log_scores.row(p.level, p.frame);
        double* g = res.grad.row(p.level, p.frame);
        for (int v = 0; v < log_scores.vocab; ++v) {
            const double s = std::exp(ls[v]);
            const double c = target.value(p, v);
            total += s - c * ls[v] + dse_normalizer(c);
            g[v] = sig * (s - c);
        }
    }
    res.loss = sig * total;
    return res;
}

// Mean absolute difference.
inline double identity_loss(const nn::Vec& predicted, const nn::Vec& target) {
    if (predicted.size() != target.size()) throw std::invalid_argument("identity_loss: dimension mismatch");
    if (predicted.size() == 0) return 0.0;
    return (predicted - target).cwiseAbs().mean();
}

inline double total_loss(double score_loss, double id_loss, double lambda_id) { return score_loss + lambda_id * id_loss; }

struct DropoutConfig {
    double per_condition = 0.10;
    double all = 0.10;

    void validate() const {
        if (!(per_condition >= 0.0 && per_condition <= 1.0) || !(all >= 0.0 && all <= 1.0)) {
            throw std::invalid_argument("dropout probabilities must lie in [0, 1]");
        }
    }
};

// With probability `all` every condition is nulled; otherwise each one
// independently with probability `per_condition`.
inline ConditionBundle apply_condition_dropout(ConditionBundle bundle, Rng& rng, const DropoutConfig& cfg = {}) {
    cfg.validate();
    if (bernoulli(rng, cfg.all)) return ConditionBundle{};
    for (Condition c : kAllConditions) {
        if (bernoulli(rng, cfg.per_condition)) bundle.drop(c);
    }
    return bundle;
}

struct TrainConfig {
    double lambda_id = 100.0;
    double lr = 1e-4;
    int batch = 16;
    int iters = 5000;
    DropoutConfig dropout;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double t_floor = 1e-3;  // t ~ U[t_floor * T, T]
    std::uint64_t seed = 0;

    void validate() const {
        dropout.validate();
        if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
        if (iters < 0) throw std::invalid_argument("train: iters must be >= 0");
        if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("train: lr and weight_decay must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw std::invalid_argument("train: betas must lie in [0, 1)");
        }
        if (!(t_floor > 0.0 && t_floor < 1.0)) throw std::invalid_argument("train: t_floor must lie in (0, 1)");
    }
};

// Decoupled weight decay Adam.
class AdamW {
  public:
    AdamW(const nn::ParameterSet& ps, double lr, double beta1, double beta2, double eps, double weight_decay)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay), m_(ps.zeros_like()), v_(ps.zeros_like()) {}

    void step(nn::ParameterSet& ps, const nn::Gradients& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * g[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * g[i].cwiseProduct(g[i]);
            const auto update = (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
            ps[i].array() -= lr_ * (update + wd_ * ps[i].array());
        }
    }

    long steps() const noexcept { return t_; }

  private:
    double lr_, b1_, b2_, eps_, wd_;
    long t_ = 0;
    nn::Gradients m_, v_;
};

// One training utterance: clean grid, ground-truth conditions and the
// identity adapter's input/target.
struct TrainingExample {
    TokenGrid grid0;
    ConditionBundle conditions;
    std::optional<nn::Vec> face;
    std::optional<nn::Vec> identity_target;
};

struct IterationMetrics {
    int iter = 0;
    double dse_loss = 0.0;
    double id_loss = 0.0;
    double total_loss = 0.0;
    double mask_fraction_mean = 0.0;
    double wall_ms = 0.0;
};

inline void write_metrics_header(std::ostream& out) {
    out << "iter,dse_loss,id_loss,total_loss,mask_fraction_mean,wall_ms\n";
}

inline void write_metrics_row(std::ostream& out, const IterationMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.3f\n", m.iter, m.dse_loss, m.id_loss,
                  m.total_loss, m.mask_fraction_mean, m.wall_ms);
    out << buf;
}

struct TrainResult {
    int iterations = 0;       // completed updates
    int last_good_iter = -1;  // last iteration with a finite loss (0-based)
    bool non_finite = false;
    IterationMetrics last;
};

struct TrainHooks {
    std::ostream* csv = nullptr;
    bool stable_csv = false;  // write wall_ms as 0 so traces are byte-stable
    std::function<void(const IterationMetrics&)> on_iter;
};

// Builds one corrupted, dropout-applied batch for iteration `iter`.
struct TrainBatch {
    std::vector<TokenGrid> clean, noisy;
    std::vector<double> times, sigma_bars;
    std::vector<ConditionBundle> conds;
    std::vector<std::size_t> index;
};

inline TrainBatch make_train_batch(const std::vector<TrainingExample>& data, const NoiseSchedule& sched,
                                   const TrainConfig& cfg, int iter) {
    Rng rng = make_rng(derive_seed(cfg.seed, 0xba7c4, static_cast<std::uint64_t>(iter)));
    TrainBatch b;
    for (int i = 0; i < cfg.batch; ++i) {
        const auto k = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(data.size())));
        const double t = sched.horizon * (cfg.t_floor + (1.0 - cfg.t_floor) * uniform01(rng));
        const std::uint64_t noise_seed = rng();
        b.index.push_back(k);
        b.clean.push_back(data[k].grid0);
        b.noisy.push_back(forward_sample(data[k].grid0, sched, t, noise_seed));
        b.times.push_back(t);
        b.sigma_bars.push_back(sched.sigma_bar(t));
        b.conds.push_back(apply_condition_dropout(data[k].conditions, rng, cfg.dropout));
    }
    return b;
}

// Loss and log-score gradient of a batch under the current parameters
// (DSE summed per sample, averaged over the batch). Gradients are accumulated
// into `grads` when non-null.
inline double batch_dse(const ScoreNetwork& net, const NoiseSchedule& sched, const TrainBatch& b,
                        nn::Gradients* grads, double* mask_fraction_out = nullptr) {
    const auto& cfg = net.config();
    const int B = static_cast<int>(b.clean.size());
    ForwardTrace trace;
    const ForwardOutput out = net.forward(b.noisy, b.sigma_bars, b.conds, grads ? &trace : nullptr);
    std::vector<nn::Mat> dlogits;
    if (grads) {
        for (int r = 0; r < cfg.levels; ++r) dlogits.push_back(nn::Mat::Zero(out.logits[0].rows(), cfg.vocab));
    }
    double loss = 0.0, mf = 0.0;
    for (int i = 0; i < B; ++i) {
        const double t = b.times[static_cast<std::size_t>(i)];
        const double sig = sched.sigma(t);
        const double ratio = sched.score_ratio(t);
        const TokenGrid& xt = b.noisy[static_cast<std::size_t>(i)];
        const TokenGrid& x0 = b.clean[static_cast<std::size_t>(i)];
        mf += mask_fraction(xt);
        double sum = 0.0;
        for (int r = 0; r < cfg.levels; ++r) {
            const nn::Mat& lg = out.logits[static_cast<std::size_t>(r)];
            for (int j = 0; j < cfg.frames; ++j) {
                if (!xt.is_masked(r, j)) continue;
                const Eigen::Index row = static_cast<Eigen::Index>(i) * cfg.frames + j;
                const TokenId clean = x0.at(r, j);
                for (int v = 0; v < cfg.vocab; ++v) {
                    const double ls = lg(row, v);
                    const double s = std::exp(ls);
                    const double c = v == clean ? ratio : 0.0;
                    sum += s - c * ls + dse_normalizer(c);
                    if (grads) dlogits[static_cast<std::size_t>(r)](row, v) = sig * (s - c) / B;
                }
            }
        }
        loss += sig * sum;
    }
    if (grads) net.backward(trace, dlogits, *grads);
    if (mask_fraction_out) *mask_fraction_out = mf / B;
    return loss / B;
}

// Identity adapter loss over the batch (mean over samples with a face and a
// target); accumulates lambda-scaled gradients when `grads` is non-null.
inline double batch_identity(const ScoreNetwork& net, const std::vector<TrainingExample>& data,
                             const std::vector<std::size_t>& index, double lambda, nn::Gradients* grads) {
    std::vector<std::size_t> rows;
    for (auto k : index) {
        if (data[k].face && data[k].identity_target) rows.push_back(k);
    }
    if (rows.empty()) return 0.0;
    const auto& cfg = net.config();
    nn::Mat faces(static_cast<Eigen::Index>(rows.size()), cfg.face_dim);
    nn::Mat targets(static_cast<Eigen::Index>(rows.size()), cfg.id_dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        faces.row(static_cast<Eigen::Index>(i)) = data[rows[i]].face->transpose();
        targets.row(static_cast<Eigen::Index>(i)) = data[rows[i]].identity_target->transpose();
    }
    IdentityTrace tr;
    const nn::Mat pred = net.predict_identity(faces, grads ? &tr : nullptr);
    const nn::Mat diff = pred - targets;
    const double n = static_cast<double>(diff.size());
    if (grads && lambda != 0.0) {
        const nn::Mat d = diff.unaryExpr([&](double x) { return lambda * ((x > 0) - (x < 0)) / n; });
        net.identity_backward(tr, d, *grads);
    }
    return diff.cwiseAbs().sum() / n;
}

inline TrainResult train_loop(const TrainConfig& cfg, const std::vector<TrainingExample>& data, ScoreNetwork& net,
                              const NoiseSchedule& sched, const TrainHooks& hooks = {}) {
    cfg.validate();
    sched.validate();
    if (data.empty()) throw std::invalid_argument("train_loop: corpus is empty");
    AdamW opt(net.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    if (hooks.csv) write_metrics_header(*hooks.csv);
    TrainResult res;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.iters; ++it) {
        const TrainBatch b = make_train_batch(data, sched, cfg, it);
        nn::Gradients grads = net.parameters().zeros_like();
        IterationMetrics m;
        m.iter = it;
        m.dse_loss = batch_dse(net, sched, b, &grads, &m.mask_fraction_mean);
        m.id_loss = batch_identity(net, data, b.index, cfg.lambda_id, &grads);
        m.total_loss = total_loss(m.dse_loss, m.id_loss, cfg.lambda_id);
        m.wall_ms = hooks.stable_csv ? 0.0
                                     : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.last = m;
        if (!std::isfinite(m.total_loss)) {
            res.non_finite = true;
            if (hooks.csv) write_metrics_row(*hooks.csv, m);
            return res;
        }
        opt.step(net.parameters(), grads);
        res.iterations = it + 1;
        res.last_good_iter = it;
        if (hooks.csv) write_metrics_row(*hooks.csv, m);
        if (hooks.on_iter) hooks.on_iter(m);
    }
    return res;
}

}  // namespace hicodit
