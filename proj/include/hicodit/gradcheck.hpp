#pragma once

// Central finite-difference check of ScoreNetwork::backward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hicodit/network.hpp"
#include "hicodit/rng.hpp"

namespace hicodit {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

// Relative error with an absolute floor so coordinates whose true gradient is
// zero are judged on absolute error.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Probe loss: sum_r <W_r, exp(logits_r)> over a random batch. Checks up to
// `per_tensor` random coordinates of every parameter tensor (all of them when
// per_tensor <= 0), then `directions` random unit directions that move every
// parameter at once.
inline GradCheckResult gradient_check(ScoreNetwork& net, std::uint64_t seed, int batch = 2, int per_tensor = 0,
                                      double h = 1e-5, double floor = 1e-3, int directions = 0) {
    const auto& cfg = net.config();
    Rng rng = make_rng(seed);
    std::vector<TokenGrid> grids;
    std::vector<double> sbars;
    std::vector<ConditionBundle> conds;
    for (int b = 0; b < batch; ++b) {
        TokenGrid g = TokenGrid::all_masked(cfg.levels, cfg.frames, cfg.vocab);
        for (int r = 0; r < cfg.levels; ++r) {
            for (int j = 0; j < cfg.frames; ++j) g.set(r, j, uniform_int(rng, cfg.vocab + 1));  // MASK included
        }
        grids.push_back(std::move(g));
        sbars.push_back(0.05 + 2.0 * uniform01(rng));
        ConditionBundle c;
        // Alternate present and null conditions so both paths are exercised.
        if (b % 2 == 0) {
            c.lip = nn::Mat(cfg.frames, cfg.lip_dim);
            for (Eigen::Index i = 0; i < c.lip->size(); ++i) c.lip->data()[i] = normal(rng);
            std::vector<int> emo;
            for (int i = 0; i < cfg.emotion_frames(); ++i) emo.push_back(uniform_int(rng, cfg.emo_classes));
            c.emo = emo;
        } else {
            c.id = nn::Vec(cfg.id_dim);
            for (Eigen::Index i = 0; i < c.id->size(); ++i) (*c.id)(i) = normal(rng);
        }
        conds.push_back(std::move(c));
    }
    std::vector<nn::Mat> weights;
    for (int r = 0; r < cfg.levels; ++r) {
        nn::Mat w(static_cast<Eigen::Index>(batch) * cfg.frames, cfg.vocab);
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
        weights.push_back(std::move(w));
    }
    auto loss = [&](const ForwardOutput& out) {
        double l = 0.0;
        for (int r = 0; r < cfg.levels; ++r) {
            l += (weights[static_cast<std::size_t>(r)].array() * out.logits[static_cast<std::size_t>(r)].array().exp()).sum();
        }
        return l;
    };

    ForwardTrace trace;
    const ForwardOutput out = net.forward(grids, sbars, conds, &trace);
    std::vector<nn::Mat> dlogits;
    for (int r = 0; r < cfg.levels; ++r) {
        dlogits.push_back(weights[static_cast<std::size_t>(r)].array() * out.logits[static_cast<std::size_t>(r)].array().exp());
    }
    nn::Gradients grads = net.parameters().zeros_like();
    net.backward(trace, dlogits, grads);

    GradCheckResult res;
    auto& ps = net.parameters();
    // Identity adapter parameters are not on this path.
    auto skip = [&](std::size_t p) { return ps.name(p).rfind("identity_adapter", 0) == 0; };
    for (std::size_t p = 0; p < ps.size(); ++p) {
        if (skip(p)) continue;
        const Eigen::Index n = ps[p].size();
        std::vector<Eigen::Index> coords;
        if (per_tensor <= 0 || n <= per_tensor) {
            for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < per_tensor; ++i) coords.push_back(uniform_int(rng, static_cast<int>(n)));
        }
        for (Eigen::Index i : coords) {
            double& x = ps[p].data()[i];
            const double x0 = x;
            x = x0 + h;
            const double lp = loss(net.forward(grids, sbars, conds));
            x = x0 - h;
            const double lm = loss(net.forward(grids, sbars, conds));
            x = x0;
            const double num = (lp - lm) / (2.0 * h);
            const double err = grad_rel_error(grads[p].data()[i], num, floor);
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = ps.name(p) + "[" + std::to_string(i) + "]";
            }
        }
    }
    for (int k = 0; k < directions; ++k) {
        std::vector<nn::Mat> dir;
        double norm2 = 0.0;
        for (std::size_t p = 0; p < ps.size(); ++p) {
            nn::Mat d = nn::Mat::Zero(ps[p].rows(), ps[p].cols());
            if (!skip(p)) {
                for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = normal(rng);
            }
            norm2 += d.squaredNorm();
            dir.push_back(std::move(d));
        }
        double analytic = 0.0;
        for (std::size_t p = 0; p < ps.size(); ++p) {
            dir[p] /= std::sqrt(norm2);
            analytic += (grads[p].array() * dir[p].array()).sum();
        }
        auto shifted_loss = [&](double step) {
            for (std::size_t p = 0; p < ps.size(); ++p) ps[p] += step * dir[p];
            const double l = loss(net.forward(grids, sbars, conds));
            for (std::size_t p = 0; p < ps.size(); ++p) ps[p] -= step * dir[p];
            return l;
        };
        std::vector<nn::Mat> saved;
        for (std::size_t p = 0; p < ps.size(); ++p) saved.push_back(ps[p]);
        const double num = (shifted_loss(h) - shifted_loss(-h)) / (2.0 * h);
        for (std::size_t p = 0; p < ps.size(); ++p) ps[p] = saved[p];
        const double err = grad_rel_error(analytic, num, floor);
        ++res.checked;
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst_param = "direction[" + std::to_string(k) + "]";
        }
    }
    return res;
}

}  // namespace hicodit
