#pragma once

// Dense layers with explicit forward/backward passes over row-major Eigen
// matrices. Rows are frames (batch-major: row = sample * frames + frame),
// columns are channels.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hicodit/rng.hpp"

namespace hicodit::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Named parameter tensors. Gradients live in a separate, shape-matched vector.
class ParameterSet {
  public:
    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
        for (const auto& n : names_) {
            if (n == name) throw std::logic_error("duplicate parameter name '" + name + "'");
        }
        names_.push_back(std::move(name));
        values_.push_back(Mat::Zero(rows, cols));
        return values_.size() - 1;
    }

    std::size_t size() const noexcept { return values_.size(); }
    Mat& operator[](std::size_t i) { return values_[i]; }
    const Mat& operator[](std::size_t i) const { return values_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
        return n;
    }

    std::vector<Mat> zeros_like() const {
        std::vector<Mat> g;
        g.reserve(values_.size());
        for (const auto& v : values_) g.push_back(Mat::Zero(v.rows(), v.cols()));
        return g;
    }

    bool operator==(const ParameterSet& o) const {
        if (names_ != o.names_) return false;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (values_[i].rows() != o.values_[i].rows() || values_[i].cols() != o.values_[i].cols() ||
                values_[i] != o.values_[i]) {
                return false;
            }
        }
        return true;
    }

  private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
};

using Gradients = std::vector<Mat>;

inline void fill_normal(Mat& m, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
}

struct Linear {
    std::size_t weight = 0;  // in x out
    std::size_t bias = 0;    // 1 x out
    int in = 0;
    int out = 0;

    static Linear create(ParameterSet& ps, const std::string& name, int in, int out) {
        Linear l;
        l.in = in;
        l.out = out;
        l.weight = ps.add(name + ".weight", in, out);
        l.bias = ps.add(name + ".bias", 1, out);
        return l;
    }

    void init(ParameterSet& ps, Rng& rng, double gain = 1.0) const {
        fill_normal(ps[weight], rng, gain / std::sqrt(static_cast<double>(in)));
        ps[bias].setZero();
    }

    Mat forward(const ParameterSet& ps, const Mat& x) const {
        Mat y(x.rows(), out);
        y.noalias() = x * ps[weight];
        y.rowwise() += ps[bias].row(0);
        return y;
    }

    // Accumulates parameter gradients; returns dL/dx.
    Mat backward(const ParameterSet& ps, Gradients& g, const Mat& x, const Mat& dy) const {
        g[weight].noalias() += x.transpose() * dy;
        g[bias] += dy.colwise().sum();
        Mat dx(dy.rows(), in);
        dx.noalias() = dy * ps[weight].transpose();
        return dx;
    }

    // Parameter gradients only.
    void backward_params(Gradients& g, const Mat& x, const Mat& dy) const {
        g[weight].noalias() += x.transpose() * dy;
        g[bias] += dy.colwise().sum();
    }
};

inline constexpr double kLayerNormEps = 1e-6;

// Row-wise normalization over channels, no affine parameters.
struct LayerNormCache {
    Mat normalized;
    Vec inv_std;
};

inline Mat layer_norm(const Mat& x, LayerNormCache* cache = nullptr) {
    const double c = static_cast<double>(x.cols());
    Mat n(x.rows(), x.cols());
    Vec inv(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).sum() / c;
        const double var = (x.row(i).array() - mean).square().sum() / c;
        inv(i) = 1.0 / std::sqrt(var + kLayerNormEps);
        n.row(i) = (x.row(i).array() - mean) * inv(i);
    }
    if (cache) {
        cache->normalized = n;
        cache->inv_std = std::move(inv);
    }
    return n;
}

inline Mat layer_norm_backward(const LayerNormCache& cache, const Mat& dn) {
    const auto& n = cache.normalized;
    const double c = static_cast<double>(n.cols());
    Mat dx(n.rows(), n.cols());
    for (Eigen::Index i = 0; i < n.rows(); ++i) {
        const double mean_dn = dn.row(i).sum() / c;
        const double mean_dn_n = dn.row(i).dot(n.row(i)) / c;
        dx.row(i) = cache.inv_std(i) * (dn.row(i).array() - mean_dn - n.row(i).array() * mean_dn_n);
    }
    return dx;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat silu(const Mat& x) {
    return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

inline Mat silu_backward(const Mat& x, const Mat& dy) {
    return dy.binaryExpr(x, [](double d, double v) {
        const double s = sigmoid(v);
        return d * s * (1.0 + v * (1.0 - s));
    });
}

// tanh-approximated GELU.
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline Mat gelu(const Mat& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluA * v * v * v))); });
}

inline Mat gelu_backward(const Mat& x, const Mat& dy) {
    return dy.binaryExpr(x, [](double d, double v) {
        const double u = kGeluK * (v + kGeluA * v * v * v);
        const double th = std::tanh(u);
        const double du = kGeluK * (1.0 + 3.0 * kGeluA * v * v);
        return d * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    });
}

// Bidirectional multi-head self-attention core: softmax(QK^T/sqrt(d)) V per
// sample and head. Input is the fused [Q | K | V] projection (N x 3C).
struct AttentionCache {
    std::vector<Mat> probs;  // one frames x frames matrix per (sample, head)
};

inline Mat attention(const Mat& qkv, int samples, int frames, int heads, AttentionCache* cache = nullptr) {
    const int C = static_cast<int>(qkv.cols() / 3);
    const int dh = C / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat out(qkv.rows(), C);
    if (cache) cache->probs.resize(static_cast<std::size_t>(samples) * heads);
    for (int b = 0; b < samples; ++b) {
        const auto rows = qkv.middleRows(static_cast<Eigen::Index>(b) * frames, frames);
        for (int h = 0; h < heads; ++h) {
            const auto q = rows.middleCols(h * dh, dh);
            const auto k = rows.middleCols(C + h * dh, dh);
            const auto v = rows.middleCols(2 * C + h * dh, dh);
            Mat s = (q * k.transpose()) * scale;
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                const double m = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - m).exp();
                s.row(i) /= s.row(i).sum();
            }
            out.block(static_cast<Eigen::Index>(b) * frames, h * dh, frames, dh).noalias() = s * v;
            if (cache) cache->probs[static_cast<std::size_t>(b) * heads + h] = std::move(s);
        }
    }
    return out;
}

inline Mat attention_backward(const Mat& qkv, const AttentionCache& cache, const Mat& dout, int samples,
                              int frames, int heads) {
    const int C = static_cast<int>(qkv.cols() / 3);
    const int dh = C / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dqkv(qkv.rows(), qkv.cols());
    for (int b = 0; b < samples; ++b) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * frames;
        const auto rows = qkv.middleRows(r0, frames);
        for (int h = 0; h < heads; ++h) {
            const auto q = rows.middleCols(h * dh, dh);
            const auto k = rows.middleCols(C + h * dh, dh);
            const auto v = rows.middleCols(2 * C + h * dh, dh);
            const Mat& p = cache.probs[static_cast<std::size_t>(b) * heads + h];
            const auto d_o = dout.block(r0, h * dh, frames, dh);
            Mat dp = d_o * v.transpose();
            dqkv.block(r0, 2 * C + h * dh, frames, dh).noalias() = p.transpose() * d_o;
            Mat ds(frames, frames);
            for (int i = 0; i < frames; ++i) {
                const double dot = dp.row(i).dot(p.row(i));
                ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            ds *= scale;
            dqkv.block(r0, h * dh, frames, dh).noalias() = ds * k;
            dqkv.block(r0, C + h * dh, frames, dh).noalias() = ds.transpose() * q;
        }
    }
    return dqkv;
}

// y[row] = (1 + gamma[sample]) * x[row] + beta[sample]
inline Mat modulate(const Mat& x, const Mat& gamma, const Mat& beta, int frames) {
    Mat y(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < gamma.rows(); ++b) {
        const auto xs = x.middleRows(b * frames, frames);
        y.middleRows(b * frames, frames) =
            (xs.array().rowwise() * (1.0 + gamma.row(b).array())).rowwise() + beta.row(b).array();
    }
    return y;
}

// x[row] scaled by per-sample channel gate.
inline Mat gate(const Mat& x, const Mat& alpha, int frames) {
    Mat y(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < alpha.rows(); ++b) {
        y.middleRows(b * frames, frames) = x.middleRows(b * frames, frames).array().rowwise() * alpha.row(b).array();
    }
    return y;
}

// Sum of the rows belonging to each sample (elementwise product of a and b).
inline Mat per_sample_sum(const Mat& a, int frames) {
    const Eigen::Index samples = a.rows() / frames;
    Mat out(samples, a.cols());
    for (Eigen::Index b = 0; b < samples; ++b) out.row(b) = a.middleRows(b * frames, frames).colwise().sum();
    return out;
}

inline Mat per_sample_sum(const Mat& a, const Mat& b, int frames) {
    return per_sample_sum(Mat(a.cwiseProduct(b)), frames);
}

}  // namespace hicodit::nn
