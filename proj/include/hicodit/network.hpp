#pragma once

// Two-tier conditioned score network.
//
// Low tier: embeddings of levels [0, split) concatenated with lip features,
// projected to C, then blocks modulated channel-wise from [identity; time]:
//     (1 + gamma) * LN(h) + beta
// High tier: embeddings of levels [split, R) plus a projection of the low-tier
// output, then blocks modulated from pooled emotion and time, with an extra
// per-emotion-block temporal scale up-sampled over `emotion_downsample` frames:
//     kron(gamma_t, 1_D) * ((1 + gamma_c) * LN(h) + beta_c)
// In both tiers alpha gates the attention and feed-forward residual branches.
// One linear head per level maps its tier output to V log-scores.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/conditions.hpp"
#include "hicodit/diffusion.hpp"
#include "hicodit/nn.hpp"
#include "hicodit/rng.hpp"
#include "hicodit/token_space.hpp"

namespace hicodit {

enum class NetworkVariant : std::uint32_t {
    hierarchical = 0,
    // One uniform block stack over all levels, every condition injected channel-wise.
    flat = 1,
    // Hierarchical, but high blocks use pooled-emotion channel modulation only.
    single_scale = 2,
};

inline std::string to_string(NetworkVariant v) {
    switch (v) {
        case NetworkVariant::hierarchical: return "hierarchical";
        case NetworkVariant::flat: return "flat";
        case NetworkVariant::single_scale: return "single_scale";
    }
    return "?";
}

inline NetworkVariant network_variant_from_string(const std::string& s) {
    if (s == "hierarchical") return NetworkVariant::hierarchical;
    if (s == "flat") return NetworkVariant::flat;
    if (s == "single_scale") return NetworkVariant::single_scale;
    throw std::invalid_argument("unknown network variant '" + s + "'");
}

struct NetworkConfig {
    // token space
    int levels = 4;
    int frames = 8;
    int vocab = 8;
    int split = 1;
    int emotion_downsample = 4;
    // transformer
    int channels = 64;
    int heads = 4;
    int low_blocks = 2;
    int high_blocks = 2;
    int ffn_mult = 4;
    int time_features = 16;
    // conditions
    int lip_dim = 8;
    int id_dim = 16;
    int emo_classes = 7;
    int face_dim = 8;
    NetworkVariant variant = NetworkVariant::hierarchical;

    int emotion_frames() const { return frames / emotion_downsample; }

    static NetworkConfig paper_scale() {
        NetworkConfig c;
        c.levels = 12;
        c.frames = 50;
        c.vocab = 1024;
        c.split = 2;
        c.emotion_downsample = 25;
        c.channels = 768;
        c.heads = 12;
        c.low_blocks = 8;
        c.high_blocks = 8;
        return c;
    }

    void validate() const {
        StateSpaceConfig{levels, frames, vocab, split, emotion_downsample}.validate();
        if (channels < 1 || heads < 1 || channels % heads != 0) {
            throw std::invalid_argument("network: channels must be a positive multiple of heads");
        }
        if (low_blocks < 0 || high_blocks < 0 || low_blocks + high_blocks < 1) {
            throw std::invalid_argument("network: block counts must be non-negative with at least one block");
        }
        if (ffn_mult < 1) throw std::invalid_argument("network: ffn_mult must be >= 1");
        if (time_features < 2 || time_features % 2 != 0) {
            throw std::invalid_argument("network: time_features must be a positive even number");
        }
        if (lip_dim < 1 || id_dim < 1 || emo_classes < 1 || face_dim < 1) {
            throw std::invalid_argument("network: condition dimensions must be positive");
        }
    }

    bool operator==(const NetworkConfig&) const = default;
};

// Sinusoidal features of log sigma_bar, frequencies geometric from 1 to 1/200.
inline nn::Mat time_features(std::span<const double> sigma_bars, int count) {
    const int half = count / 2;
    nn::Mat f(static_cast<Eigen::Index>(sigma_bars.size()), count);
    for (std::size_t b = 0; b < sigma_bars.size(); ++b) {
        const double x = std::log(std::max(sigma_bars[b], 1e-12));
        for (int k = 0; k < half; ++k) {
            const double w = half > 1 ? std::exp(-std::log(200.0) * k / (half - 1)) : 1.0;
            f(static_cast<Eigen::Index>(b), k) = std::sin(w * x);
            f(static_cast<Eigen::Index>(b), half + k) = std::cos(w * x);
        }
    }
    return f;
}

// Kronecker product of per-block values with the all-ones vector of length D.
inline Eigen::VectorXd kron_upsample(const Eigen::VectorXd& per_block, int block_length) {
    Eigen::VectorXd out(per_block.size() * block_length);
    for (Eigen::Index i = 0; i < per_block.size(); ++i) out.segment(i * block_length, block_length).setConstant(per_block(i));
    return out;
}

// Dual-scale modulation of already-normalized activations of one sample.
inline nn::Mat dual_scale_modulate(const nn::Mat& normalized, const Eigen::RowVectorXd& gamma_c,
                                   const Eigen::RowVectorXd& beta_c, const Eigen::VectorXd& gamma_t,
                                   int block_length) {
    const Eigen::VectorXd up = kron_upsample(gamma_t, block_length);
    if (up.size() != normalized.rows()) {
        throw std::invalid_argument("dual_scale_modulate: temporal scale length does not cover all frames");
    }
    nn::Mat channel = (normalized.array().rowwise() * (1.0 + gamma_c.array())).rowwise() + beta_c.array();
    return channel.array().colwise() * up.array();
}

struct ForwardOutput {
    nn::Mat h_low;                 // (B*L) x C
    nn::Mat h_high;                // (B*L) x C
    std::vector<nn::Mat> logits;   // per level, (B*L) x V log-scores
    int samples = 0;

    LogScoreField log_scores(int sample, int frames, int vocab) const {
        const int R = static_cast<int>(logits.size());
        LogScoreField f(R, frames, vocab);
        for (int r = 0; r < R; ++r) {
            for (int j = 0; j < frames; ++j) {
                const auto row = logits[static_cast<std::size_t>(r)].row(static_cast<Eigen::Index>(sample) * frames + j);
                for (int v = 0; v < vocab; ++v) f.at(r, j, v) = row(v);
            }
        }
        return f;
    }
};

namespace detail {

struct BlockParams {
    nn::Linear mod, qkv, proj, ff1, ff2;
};

struct TierParams {
    std::vector<BlockParams> blocks;
    nn::Linear final_mod;
};

struct CondMlp {
    nn::Linear l1, l2;
};

struct BlockCache {
    nn::Mat mod;
    nn::LayerNormCache ln1, ln2;
    nn::Mat y1, z1, qkv, att, a, y2, z2, h1, g, f;
    Eigen::VectorXd ts1, ts2;  // per-row temporal scales, empty for channel-only blocks
    nn::AttentionCache attn;
};

struct TierCache {
    nn::Mat c, sc;  // cond embedding and its SiLU
    std::vector<BlockCache> blocks;
    nn::LayerNormCache ln_final;
    nn::Mat final_mod;
};

struct CondCache {
    nn::Mat in, pre;
};

}  // namespace detail

struct ForwardTrace {
    bool recorded = false;
    int samples = 0;
    std::vector<TokenGrid> grids;
    nn::Mat time_feats;
    std::vector<char> lip_null, id_null;
    std::vector<int> emo_rows;  // emotion table row per (sample, emotion block)
    // low tier (or the flat stack)
    nn::Mat cat_low;
    detail::CondCache cond_low;
    nn::Mat c_low;
    detail::TierCache tier_low;
    // high tier
    nn::Mat h_low;
    detail::CondCache cond_high;
    nn::Mat c_high;
    detail::CondCache temporal;
    nn::Mat temporal_scales;
    detail::TierCache tier_high;
    nn::Mat h_high;
};

struct IdentityTrace {
    bool recorded = false;
    nn::Mat faces, pre;
};

class ScoreNetwork {
  public:
    explicit ScoreNetwork(NetworkConfig config, std::uint64_t seed = 0) : cfg_(config) {
        cfg_.validate();
        build();
        Rng rng = make_rng(derive_seed(seed, 0x5eed));
        initialize(rng);
    }

    const NetworkConfig& config() const noexcept { return cfg_; }
    nn::ParameterSet& parameters() noexcept { return ps_; }
    const nn::ParameterSet& parameters() const noexcept { return ps_; }

    bool hierarchical_tiers() const { return cfg_.variant != NetworkVariant::flat; }
    bool dual_scale() const { return cfg_.variant == NetworkVariant::hierarchical; }

    // Replaces every parameter (including zero-initialized gates) with random
    // values; used by gradient checks so no path is trivially zero.
    void randomize(std::uint64_t seed, double scale = 0.5) {
        Rng rng = make_rng(seed);
        for (std::size_t i = 0; i < ps_.size(); ++i) {
            const double fan = std::max<Eigen::Index>(ps_[i].rows(), 1);
            nn::fill_normal(ps_[i], rng, ps_[i].rows() > 1 ? scale / std::sqrt(fan) * 2.0 : scale);
        }
    }

    // Sum of per-level embeddings over levels [first, last) plus the
    // component's time projection; (B*L) x C.
    nn::Mat embed_component(std::span<const TokenGrid> grids, int first, int last,
                            std::span<const double> sigma_bars) const {
        const nn::Mat tf = time_features(sigma_bars, cfg_.time_features);
        return embed(grids, first, last, time_proj_for(first, last), tf);
    }

    ForwardOutput forward(std::span<const TokenGrid> grids, std::span<const double> sigma_bars,
                          std::span<const ConditionBundle> conds, ForwardTrace* trace = nullptr) const {
        const int B = static_cast<int>(grids.size());
        if (B == 0 || sigma_bars.size() != grids.size() || conds.size() != grids.size()) {
            throw std::invalid_argument("forward: batch spans must be non-empty and of equal length");
        }
        for (int b = 0; b < B; ++b) check_inputs(grids[b], conds[b]);
        const nn::Mat tf = time_features(sigma_bars, cfg_.time_features);
        if (trace) {
            *trace = ForwardTrace{};
            trace->samples = B;
            trace->grids.assign(grids.begin(), grids.end());
            trace->time_feats = tf;
        }
        ForwardOutput out;
        out.samples = B;

        const nn::Mat lip = lip_rows(conds, trace);
        const nn::Mat ids = id_rows(conds, trace);
        std::vector<int> emo_idx = emo_rows(conds);
        const nn::Mat emo_emb = gather_rows(ps_[emo_table_], emo_idx);
        const nn::Mat pooled = pool_blocks(emo_emb, B);
        if (trace) trace->emo_rows = emo_idx;

        if (!hierarchical_tiers()) {
            const nn::Mat m = embed(grids, 0, cfg_.levels, time_low_, tf);
            nn::Mat cat(m.rows(), m.cols() + lip.cols());
            cat << m, lip;
            nn::Mat u = in_low_.forward(ps_, cat);
            nn::Mat cin(B, ids.cols() + pooled.cols() + tf.cols());
            cin << ids, pooled, tf;
            nn::Mat c = cond_forward(cond_low_, cin, trace ? &trace->cond_low : nullptr);
            nn::Mat h = run_tier(tier_low_, std::move(u), c, nullptr, B, trace ? &trace->tier_low : nullptr);
            if (trace) {
                trace->cat_low = std::move(cat);
                trace->c_low = c;
            }
            out.h_low = h;
            out.h_high = std::move(h);
        } else {
            out.h_low = low_tier(grids, lip, ids, tf, trace);
            out.h_high = high_tier(grids, out.h_low, emo_emb, pooled, tf, trace);
        }
        out.logits = score_heads(out.h_low, out.h_high);
        if (trace) {
            trace->h_low = out.h_low;
            trace->h_high = out.h_high;
            trace->recorded = true;
        }
        return out;
    }

    std::vector<LogScoreField> log_scores(std::span<const TokenGrid> grids, std::span<const double> sigma_bars,
                                          std::span<const ConditionBundle> conds) const {
        const ForwardOutput out = forward(grids, sigma_bars, conds);
        std::vector<LogScoreField> fields;
        fields.reserve(grids.size());
        for (int b = 0; b < out.samples; ++b) fields.push_back(out.log_scores(b, cfg_.frames, cfg_.vocab));
        return fields;
    }

    // Levels below the split read h_low, the rest read h_high.
    std::vector<nn::Mat> score_heads(const nn::Mat& h_low, const nn::Mat& h_high) const {
        if (h_low.rows() != h_high.rows()) throw std::invalid_argument("score_heads: sequence lengths differ");
        std::vector<nn::Mat> logits;
        logits.reserve(heads_.size());
        for (int r = 0; r < cfg_.levels; ++r) logits.push_back(heads_[r].forward(ps_, reads_low(r) ? h_low : h_high));
        return logits;
    }

    // Back-propagates dL/d(log-score) for every level into parameter gradients.
    void backward(const ForwardTrace& trace, const std::vector<nn::Mat>& dlogits, nn::Gradients& grads) const {
        if (!trace.recorded) throw std::logic_error("backward: no forward pass has been recorded");
        if (dlogits.size() != heads_.size()) throw std::invalid_argument("backward: one gradient per level required");
        if (grads.size() != ps_.size()) throw std::invalid_argument("backward: gradient buffer shape mismatch");
        const int B = trace.samples;
        const Eigen::Index N = static_cast<Eigen::Index>(B) * cfg_.frames;
        nn::Mat dh_low = nn::Mat::Zero(N, cfg_.channels);
        nn::Mat dh_high = nn::Mat::Zero(N, cfg_.channels);
        for (int r = 0; r < cfg_.levels; ++r) {
            const bool low = reads_low(r);
            const nn::Mat& h = low ? trace.h_low : trace.h_high;
            (low ? dh_low : dh_high) += heads_[r].backward(ps_, grads, h, dlogits[static_cast<std::size_t>(r)]);
        }
        nn::Mat d_emo_emb = nn::Mat::Zero(static_cast<Eigen::Index>(trace.emo_rows.size()), cfg_.channels);

        if (!hierarchical_tiers()) {
            nn::Mat dh = dh_low + dh_high;
            nn::Mat dc = nn::Mat::Zero(B, cfg_.channels);
            nn::Mat du = tier_backward(tier_low_, trace.tier_low, dh, grads, dc, nullptr, B);
            nn::Mat dcin = cond_backward(cond_low_, trace.cond_low, dc, grads);
            id_backward(trace, dcin.leftCols(cfg_.id_dim), grads);
            add_pooled_grad(dcin.middleCols(cfg_.id_dim, cfg_.channels), d_emo_emb, B);
            nn::Mat dcat = in_low_.backward(ps_, grads, trace.cat_low, du);
            embed_backward(trace, 0, cfg_.levels, time_low_, dcat.leftCols(cfg_.channels), grads);
            lip_backward(trace, dcat.rightCols(cfg_.lip_dim), grads);
            scatter_rows(grads[emo_table_], trace.emo_rows, d_emo_emb);
            return;
        }

        // high tier
        nn::Mat dc_high = nn::Mat::Zero(B, cfg_.channels);
        nn::Mat d_ts;
        if (dual_scale()) d_ts = nn::Mat::Zero(trace.temporal_scales.rows(), trace.temporal_scales.cols());
        nn::Mat du_high = tier_backward(tier_high_, trace.tier_high, dh_high, grads, dc_high,
                                        dual_scale() ? &d_ts : nullptr, B);
        if (dual_scale()) {
            nn::Mat dtin = cond_backward(temporal_, trace.temporal, d_ts, grads);
            d_emo_emb += dtin.leftCols(cfg_.channels);
        }
        nn::Mat dcin_high = cond_backward(cond_high_, trace.cond_high, dc_high, grads);
        add_pooled_grad(dcin_high.leftCols(cfg_.channels), d_emo_emb, B);
        embed_backward(trace, cfg_.split, cfg_.levels, time_high_, du_high, grads);
        dh_low += low_to_high_.backward(ps_, grads, trace.h_low, du_high);
        scatter_rows(grads[emo_table_], trace.emo_rows, d_emo_emb);

        // low tier
        nn::Mat dc_low = nn::Mat::Zero(B, cfg_.channels);
        nn::Mat du_low = tier_backward(tier_low_, trace.tier_low, dh_low, grads, dc_low, nullptr, B);
        nn::Mat dcin_low = cond_backward(cond_low_, trace.cond_low, dc_low, grads);
        id_backward(trace, dcin_low.leftCols(cfg_.id_dim), grads);
        nn::Mat dcat = in_low_.backward(ps_, grads, trace.cat_low, du_low);
        embed_backward(trace, 0, cfg_.split, time_low_, dcat.leftCols(cfg_.channels), grads);
        lip_backward(trace, dcat.rightCols(cfg_.lip_dim), grads);
    }

    // Identity adapter: face features (B x face_dim) -> identity embedding (B x id_dim).
    nn::Mat predict_identity(const nn::Mat& faces, IdentityTrace* trace = nullptr) const {
        if (faces.cols() != cfg_.face_dim) throw std::invalid_argument("identity adapter: face feature dimension mismatch");
        nn::Mat pre = id_adapter_.l1.forward(ps_, faces);
        nn::Mat out = id_adapter_.l2.forward(ps_, nn::silu(pre));
        if (trace) {
            trace->faces = faces;
            trace->pre = std::move(pre);
            trace->recorded = true;
        }
        return out;
    }

    void identity_backward(const IdentityTrace& trace, const nn::Mat& dpred, nn::Gradients& grads) const {
        if (!trace.recorded) throw std::logic_error("identity_backward: no forward pass has been recorded");
        nn::Mat dact = id_adapter_.l2.backward(ps_, grads, nn::silu(trace.pre), dpred);
        id_adapter_.l1.backward_params(grads, trace.faces, nn::silu_backward(trace.pre, dact));
    }

    // Tier entry points, exposed for routing checks.
    nn::Mat low_forward(const nn::Mat& hidden, std::span<const ConditionBundle> conds,
                        std::span<const double> sigma_bars) const {
        require_hierarchical();
        const nn::Mat tf = time_features(sigma_bars, cfg_.time_features);
        const nn::Mat lip = lip_rows(conds, nullptr);
        const nn::Mat ids = id_rows(conds, nullptr);
        return low_tier_from_hidden(hidden, lip, ids, tf, nullptr);
    }

    nn::Mat high_forward(const nn::Mat& h_low, const nn::Mat& hidden_high, std::span<const ConditionBundle> conds,
                         std::span<const double> sigma_bars) const {
        require_hierarchical();
        const int B = static_cast<int>(conds.size());
        const nn::Mat tf = time_features(sigma_bars, cfg_.time_features);
        for (const auto& c : conds) c.validate(cfg_.frames, cfg_.lip_dim, cfg_.id_dim, cfg_.emotion_frames(), cfg_.emo_classes);
        const nn::Mat emo_emb = gather_rows(ps_[emo_table_], emo_rows(conds));
        const nn::Mat pooled = pool_blocks(emo_emb, B);
        return high_tier_from_hidden(hidden_high, h_low, emo_emb, pooled, tf, nullptr);
    }

    // Per-row temporal scales of each high block (B*L x 2*high_blocks), after up-sampling.
    nn::Mat upsampled_temporal_scales(std::span<const ConditionBundle> conds, std::span<const double> sigma_bars) const {
        if (!dual_scale()) throw std::logic_error("temporal scales exist only in the dual-scale variant");
        const int B = static_cast<int>(conds.size());
        const nn::Mat tf = time_features(sigma_bars, cfg_.time_features);
        const nn::Mat emo_emb = gather_rows(ps_[emo_table_], emo_rows(conds));
        const nn::Mat g = temporal_forward(emo_emb, tf, nullptr);
        nn::Mat out(static_cast<Eigen::Index>(B) * cfg_.frames, g.cols());
        for (int b = 0; b < B; ++b) {
            for (int j = 0; j < cfg_.frames; ++j) {
                out.row(static_cast<Eigen::Index>(b) * cfg_.frames + j) =
                    g.row(static_cast<Eigen::Index>(b) * cfg_.emotion_frames() + j / cfg_.emotion_downsample);
            }
        }
        return out;
    }

    std::size_t null_lip_index() const { return null_lip_; }
    std::size_t null_id_index() const { return null_id_; }
    bool reads_low(int level) const { return level < cfg_.split; }

  private:
    void require_hierarchical() const {
        if (!hierarchical_tiers()) throw std::logic_error("the flat variant has no separate tiers");
    }

    void check_inputs(const TokenGrid& g, const ConditionBundle& c) const {
        if (g.levels() != cfg_.levels || g.frames() != cfg_.frames || g.vocab() != cfg_.vocab) {
            throw std::invalid_argument("network: grid shape does not match the network configuration");
        }
        c.validate(cfg_.frames, cfg_.lip_dim, cfg_.id_dim, cfg_.emotion_frames(), cfg_.emo_classes);
    }

    void build() {
        const int C = cfg_.channels;
        const int Tf = cfg_.time_features;
        for (int r = 0; r < cfg_.levels; ++r) {
            embeddings_.push_back(ps_.add("embed.level" + std::to_string(r), cfg_.vocab + 1, C));
        }
        null_lip_ = ps_.add("null.lip", 1, cfg_.lip_dim);
        null_id_ = ps_.add("null.id", 1, cfg_.id_dim);
        emo_table_ = ps_.add("emotion.embed", cfg_.emo_classes + 1, C);  // last row: null emotion

        time_low_ = nn::Linear::create(ps_, "low.time", Tf, C);
        in_low_ = nn::Linear::create(ps_, "low.input", C + cfg_.lip_dim, C);
        if (hierarchical_tiers()) {
            cond_low_ = make_cond(ps_, "low.cond", cfg_.id_dim + Tf, C, C);
            tier_low_ = make_tier("low", cfg_.low_blocks);
            time_high_ = nn::Linear::create(ps_, "high.time", Tf, C);
            low_to_high_ = nn::Linear::create(ps_, "high.from_low", C, C);
            cond_high_ = make_cond(ps_, "high.cond", C + Tf, C, C);
            if (dual_scale()) temporal_ = make_cond(ps_, "high.temporal", C + Tf, C, 2 * cfg_.high_blocks);
            tier_high_ = make_tier("high", cfg_.high_blocks);
        } else {
            cond_low_ = make_cond(ps_, "flat.cond", cfg_.id_dim + C + Tf, C, C);
            tier_low_ = make_tier("flat", cfg_.low_blocks + cfg_.high_blocks);
        }
        for (int r = 0; r < cfg_.levels; ++r) {
            heads_.push_back(nn::Linear::create(ps_, "head.level" + std::to_string(r), C, cfg_.vocab));
        }
        id_adapter_ = make_cond(ps_, "identity_adapter", cfg_.face_dim, C, cfg_.id_dim);
    }

    static detail::CondMlp make_cond(nn::ParameterSet& ps, const std::string& name, int in, int hidden, int out) {
        return {nn::Linear::create(ps, name + ".fc1", in, hidden), nn::Linear::create(ps, name + ".fc2", hidden, out)};
    }

    detail::TierParams make_tier(const std::string& name, int blocks) {
        const int C = cfg_.channels;
        detail::TierParams t;
        for (int l = 0; l < blocks; ++l) {
            const std::string p = name + ".block" + std::to_string(l);
            t.blocks.push_back({nn::Linear::create(ps_, p + ".adaln", C, 6 * C),
                                nn::Linear::create(ps_, p + ".qkv", C, 3 * C),
                                nn::Linear::create(ps_, p + ".proj", C, C),
                                nn::Linear::create(ps_, p + ".ffn1", C, cfg_.ffn_mult * C),
                                nn::Linear::create(ps_, p + ".ffn2", cfg_.ffn_mult * C, C)});
        }
        t.final_mod = nn::Linear::create(ps_, name + ".final_adaln", C, 2 * C);
        return t;
    }

    void initialize(Rng& rng) {
        for (auto e : embeddings_) nn::fill_normal(ps_[e], rng, 1.0);
        nn::fill_normal(ps_[null_lip_], rng, 0.1);
        nn::fill_normal(ps_[null_id_], rng, 1.0 / std::sqrt(static_cast<double>(cfg_.id_dim)));
        nn::fill_normal(ps_[emo_table_], rng, 1.0);
        time_low_.init(ps_, rng);
        in_low_.init(ps_, rng);
        cond_low_.l1.init(ps_, rng);
        cond_low_.l2.init(ps_, rng);
        init_tier(tier_low_, rng);
        if (hierarchical_tiers()) {
            time_high_.init(ps_, rng);
            low_to_high_.init(ps_, rng);
            cond_high_.l1.init(ps_, rng);
            cond_high_.l2.init(ps_, rng);
            if (dual_scale()) {
                temporal_.l1.init(ps_, rng);
                // Temporal scales start at exactly 1.
                ps_[temporal_.l2.weight].setZero();
                ps_[temporal_.l2.bias].setOnes();
            }
            init_tier(tier_high_, rng);
        }
        // Heads start at zero: every initial score is exp(0) = 1.
        for (const auto& h : heads_) {
            ps_[h.weight].setZero();
            ps_[h.bias].setZero();
        }
        id_adapter_.l1.init(ps_, rng);
        id_adapter_.l2.init(ps_, rng);
    }

    void init_tier(const detail::TierParams& t, Rng& rng) {
        for (const auto& b : t.blocks) {
            // Modulation starts at zero: alpha = 0 makes each block the identity.
            ps_[b.mod.weight].setZero();
            ps_[b.mod.bias].setZero();
            b.qkv.init(ps_, rng);
            b.proj.init(ps_, rng);
            b.ff1.init(ps_, rng);
            b.ff2.init(ps_, rng);
        }
        ps_[t.final_mod.weight].setZero();
        ps_[t.final_mod.bias].setZero();
    }

    const nn::Linear& time_proj_for(int first, int last) const {
        if (!hierarchical_tiers()) return time_low_;
        return (first == 0 && last <= cfg_.split) ? time_low_ : time_high_;
    }

    nn::Mat embed(std::span<const TokenGrid> grids, int first, int last, const nn::Linear& time_proj,
                  const nn::Mat& tf) const {
        if (first < 0 || last > cfg_.levels || first >= last) throw std::out_of_range("embed: invalid level range");
        const int L = cfg_.frames;
        const nn::Mat tp = time_proj.forward(ps_, tf);
        nn::Mat m(static_cast<Eigen::Index>(grids.size()) * L, cfg_.channels);
        for (std::size_t b = 0; b < grids.size(); ++b) {
            const auto& g = grids[b];
            if (g.levels() != cfg_.levels || g.frames() != L || g.vocab() != cfg_.vocab) {
                throw std::invalid_argument("embed: grid shape does not match the network configuration");
            }
            for (int j = 0; j < L; ++j) {
                auto row = m.row(static_cast<Eigen::Index>(b) * L + j);
                row = tp.row(static_cast<Eigen::Index>(b));
                for (int r = first; r < last; ++r) row += ps_[embeddings_[static_cast<std::size_t>(r)]].row(g.at(r, j));
            }
        }
        return m;
    }

    void embed_backward(const ForwardTrace& tr, int first, int last, const nn::Linear& time_proj,
                        const nn::Mat& dm, nn::Gradients& grads) const {
        const int L = cfg_.frames;
        for (int b = 0; b < tr.samples; ++b) {
            for (int j = 0; j < L; ++j) {
                const auto drow = dm.row(static_cast<Eigen::Index>(b) * L + j);
                for (int r = first; r < last; ++r) {
                    grads[embeddings_[static_cast<std::size_t>(r)]].row(tr.grids[static_cast<std::size_t>(b)].at(r, j)) += drow;
                }
            }
        }
        time_proj.backward_params(grads, tr.time_feats, nn::per_sample_sum(dm, L));
    }

    nn::Mat lip_rows(std::span<const ConditionBundle> conds, ForwardTrace* trace) const {
        const int L = cfg_.frames;
        nn::Mat lip(static_cast<Eigen::Index>(conds.size()) * L, cfg_.lip_dim);
        if (trace) trace->lip_null.assign(conds.size(), 0);
        for (std::size_t b = 0; b < conds.size(); ++b) {
            if (conds[b].lip) {
                lip.middleRows(static_cast<Eigen::Index>(b) * L, L) = *conds[b].lip;
            } else {
                lip.middleRows(static_cast<Eigen::Index>(b) * L, L).rowwise() = ps_[null_lip_].row(0);
                if (trace) trace->lip_null[b] = 1;
            }
        }
        return lip;
    }

    void lip_backward(const ForwardTrace& tr, const nn::Mat& dlip, nn::Gradients& grads) const {
        const int L = cfg_.frames;
        for (int b = 0; b < tr.samples; ++b) {
            if (tr.lip_null[static_cast<std::size_t>(b)]) {
                grads[null_lip_].row(0) += dlip.middleRows(static_cast<Eigen::Index>(b) * L, L).colwise().sum();
            }
        }
    }

    nn::Mat id_rows(std::span<const ConditionBundle> conds, ForwardTrace* trace) const {
        nn::Mat ids(static_cast<Eigen::Index>(conds.size()), cfg_.id_dim);
        if (trace) trace->id_null.assign(conds.size(), 0);
        for (std::size_t b = 0; b < conds.size(); ++b) {
            if (conds[b].id) {
                ids.row(static_cast<Eigen::Index>(b)) = conds[b].id->transpose();
            } else {
                ids.row(static_cast<Eigen::Index>(b)) = ps_[null_id_].row(0);
                if (trace) trace->id_null[b] = 1;
            }
        }
        return ids;
    }

    void id_backward(const ForwardTrace& tr, const nn::Mat& did, nn::Gradients& grads) const {
        for (int b = 0; b < tr.samples; ++b) {
            if (tr.id_null[static_cast<std::size_t>(b)]) grads[null_id_].row(0) += did.row(b);
        }
    }

    std::vector<int> emo_rows(std::span<const ConditionBundle> conds) const {
        const int Le = cfg_.emotion_frames();
        std::vector<int> rows;
        rows.reserve(conds.size() * static_cast<std::size_t>(Le));
        for (const auto& c : conds) {
            for (int i = 0; i < Le; ++i) rows.push_back(c.emo ? (*c.emo)[static_cast<std::size_t>(i)] : cfg_.emo_classes);
        }
        return rows;
    }

    static nn::Mat gather_rows(const nn::Mat& table, const std::vector<int>& idx) {
        nn::Mat out(static_cast<Eigen::Index>(idx.size()), table.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(idx[i]);
        return out;
    }

    static void scatter_rows(nn::Mat& table_grad, const std::vector<int>& idx, const nn::Mat& d) {
        for (std::size_t i = 0; i < idx.size(); ++i) table_grad.row(idx[i]) += d.row(static_cast<Eigen::Index>(i));
    }

    nn::Mat pool_blocks(const nn::Mat& emo_emb, int samples) const {
        const int Le = cfg_.emotion_frames();
        nn::Mat pooled(samples, cfg_.channels);
        for (int b = 0; b < samples; ++b) {
            pooled.row(b) = emo_emb.middleRows(static_cast<Eigen::Index>(b) * Le, Le).colwise().mean();
        }
        return pooled;
    }

    void add_pooled_grad(const nn::Mat& dpooled, nn::Mat& d_emo_emb, int samples) const {
        const int Le = cfg_.emotion_frames();
        for (int b = 0; b < samples; ++b) {
            d_emo_emb.middleRows(static_cast<Eigen::Index>(b) * Le, Le).rowwise() += dpooled.row(b) / Le;
        }
    }

    nn::Mat cond_forward(const detail::CondMlp& mlp, const nn::Mat& in, detail::CondCache* cache) const {
        nn::Mat pre = mlp.l1.forward(ps_, in);
        nn::Mat out = mlp.l2.forward(ps_, nn::silu(pre));
        if (cache) {
            cache->in = in;
            cache->pre = std::move(pre);
        }
        return out;
    }

    nn::Mat cond_backward(const detail::CondMlp& mlp, const detail::CondCache& cache, const nn::Mat& dout,
                          nn::Gradients& grads) const {
        nn::Mat dact = mlp.l2.backward(ps_, grads, nn::silu(cache.pre), dout);
        return mlp.l1.backward(ps_, grads, cache.in, nn::silu_backward(cache.pre, dact));
    }

    nn::Mat temporal_forward(const nn::Mat& emo_emb, const nn::Mat& tf, detail::CondCache* cache) const {
        const int Le = cfg_.emotion_frames();
        nn::Mat tin(emo_emb.rows(), emo_emb.cols() + tf.cols());
        for (Eigen::Index i = 0; i < emo_emb.rows(); ++i) {
            tin.row(i) << emo_emb.row(i), tf.row(i / Le);
        }
        return cond_forward(temporal_, tin, cache);
    }

    nn::Mat low_tier(std::span<const TokenGrid> grids, const nn::Mat& lip, const nn::Mat& ids, const nn::Mat& tf,
                     ForwardTrace* trace) const {
        const nn::Mat m = embed(grids, 0, cfg_.split, time_low_, tf);
        return low_tier_from_hidden(m, lip, ids, tf, trace);
    }

    nn::Mat low_tier_from_hidden(const nn::Mat& m, const nn::Mat& lip, const nn::Mat& ids, const nn::Mat& tf,
                                 ForwardTrace* trace) const {
        const int B = static_cast<int>(ids.rows());
        if (m.rows() != lip.rows()) throw std::invalid_argument("low_forward: hidden and lip lengths differ");
        nn::Mat cat(m.rows(), m.cols() + lip.cols());
        cat << m, lip;
        nn::Mat u = in_low_.forward(ps_, cat);
        nn::Mat cin(B, ids.cols() + tf.cols());
        cin << ids, tf;
        nn::Mat c = cond_forward(cond_low_, cin, trace ? &trace->cond_low : nullptr);
        nn::Mat h = run_tier(tier_low_, std::move(u), c, nullptr, B, trace ? &trace->tier_low : nullptr);
        if (trace) {
            trace->cat_low = std::move(cat);
            trace->c_low = std::move(c);
        }
        return h;
    }

    nn::Mat high_tier(std::span<const TokenGrid> grids, const nn::Mat& h_low, const nn::Mat& emo_emb,
                      const nn::Mat& pooled, const nn::Mat& tf, ForwardTrace* trace) const {
        const nn::Mat m = embed(grids, cfg_.split, cfg_.levels, time_high_, tf);
        return high_tier_from_hidden(m, h_low, emo_emb, pooled, tf, trace);
    }

    nn::Mat high_tier_from_hidden(const nn::Mat& m, const nn::Mat& h_low, const nn::Mat& emo_emb,
                                  const nn::Mat& pooled, const nn::Mat& tf, ForwardTrace* trace) const {
        const int B = static_cast<int>(pooled.rows());
        if (m.rows() != h_low.rows()) throw std::invalid_argument("high_forward: hidden and h_low lengths differ");
        nn::Mat u = m + low_to_high_.forward(ps_, h_low);
        nn::Mat cin(B, pooled.cols() + tf.cols());
        cin << pooled, tf;
        nn::Mat c = cond_forward(cond_high_, cin, trace ? &trace->cond_high : nullptr);
        nn::Mat g;
        if (dual_scale()) g = temporal_forward(emo_emb, tf, trace ? &trace->temporal : nullptr);
        nn::Mat h = run_tier(tier_high_, std::move(u), c, dual_scale() ? &g : nullptr, B,
                             trace ? &trace->tier_high : nullptr);
        if (trace) {
            trace->c_high = std::move(c);
            trace->temporal_scales = std::move(g);
        }
        return h;
    }

    // Row scale for high block `column` (0-based over 2 * high_blocks).
    Eigen::VectorXd row_scales(const nn::Mat& g, int column, int samples) const {
        const int L = cfg_.frames;
        const int Le = cfg_.emotion_frames();
        Eigen::VectorXd s(static_cast<Eigen::Index>(samples) * L);
        for (int b = 0; b < samples; ++b) {
            const Eigen::VectorXd per_block = g.col(column).segment(static_cast<Eigen::Index>(b) * Le, Le);
            s.segment(static_cast<Eigen::Index>(b) * L, L) = kron_upsample(per_block, cfg_.emotion_downsample);
        }
        return s;
    }

    nn::Mat row_scale_grad_to_blocks(const Eigen::VectorXd& ds, int samples) const {
        const int L = cfg_.frames;
        const int D = cfg_.emotion_downsample;
        const int Le = cfg_.emotion_frames();
        nn::Mat out(static_cast<Eigen::Index>(samples) * Le, 1);
        for (int b = 0; b < samples; ++b) {
            for (int i = 0; i < Le; ++i) {
                out(static_cast<Eigen::Index>(b) * Le + i, 0) = ds.segment(static_cast<Eigen::Index>(b) * L + i * D, D).sum();
            }
        }
        return out;
    }

    nn::Mat run_tier(const detail::TierParams& tier, nn::Mat x, const nn::Mat& c, const nn::Mat* g, int samples,
                     detail::TierCache* cache) const {
        const int L = cfg_.frames;
        const int C = cfg_.channels;
        const nn::Mat sc = nn::silu(c);
        if (cache) {
            cache->c = c;
            cache->sc = sc;
            cache->blocks.assign(tier.blocks.size(), {});
        }
        for (std::size_t l = 0; l < tier.blocks.size(); ++l) {
            const auto& bp = tier.blocks[l];
            detail::BlockCache local;
            detail::BlockCache& bc = cache ? cache->blocks[l] : local;
            bc.mod = bp.mod.forward(ps_, sc);
            const auto alpha1 = bc.mod.middleCols(0, C), gamma1 = bc.mod.middleCols(C, C), beta1 = bc.mod.middleCols(2 * C, C);
            const auto alpha2 = bc.mod.middleCols(3 * C, C), gamma2 = bc.mod.middleCols(4 * C, C), beta2 = bc.mod.middleCols(5 * C, C);
            if (g) {
                bc.ts1 = row_scales(*g, 2 * static_cast<int>(l), samples);
                bc.ts2 = row_scales(*g, 2 * static_cast<int>(l) + 1, samples);
            }

            const nn::Mat n1 = nn::layer_norm(x, &bc.ln1);
            bc.y1 = nn::modulate(n1, gamma1, beta1, L);
            bc.z1 = g ? nn::Mat(bc.y1.array().colwise() * bc.ts1.array()) : bc.y1;
            bc.qkv = bp.qkv.forward(ps_, bc.z1);
            bc.att = nn::attention(bc.qkv, samples, L, cfg_.heads, &bc.attn);
            bc.a = bp.proj.forward(ps_, bc.att);
            x += nn::gate(bc.a, alpha1, L);

            const nn::Mat n2 = nn::layer_norm(x, &bc.ln2);
            bc.y2 = nn::modulate(n2, gamma2, beta2, L);
            bc.z2 = g ? nn::Mat(bc.y2.array().colwise() * bc.ts2.array()) : bc.y2;
            bc.h1 = bp.ff1.forward(ps_, bc.z2);
            bc.g = nn::gelu(bc.h1);
            bc.f = bp.ff2.forward(ps_, bc.g);
            x += nn::gate(bc.f, alpha2, L);
        }
        nn::Mat fm = tier.final_mod.forward(ps_, sc);
        nn::LayerNormCache lnf;
        const nn::Mat n = nn::layer_norm(x, cache ? &cache->ln_final : &lnf);
        nn::Mat h = nn::modulate(n, fm.leftCols(C), fm.rightCols(C), L);
        if (cache) cache->final_mod = std::move(fm);
        return h;
    }

    // Returns dL/d(tier input); accumulates dL/dc into dc and temporal-scale grads into dg.
    nn::Mat tier_backward(const detail::TierParams& tier, const detail::TierCache& cache, const nn::Mat& dh,
                          nn::Gradients& grads, nn::Mat& dc, nn::Mat* dg, int samples) const {
        const int L = cfg_.frames;
        const int C = cfg_.channels;
        nn::Mat dsc = nn::Mat::Zero(cache.sc.rows(), C);

        // final modulated norm
        const nn::Mat& fm = cache.final_mod;
        const nn::Mat& nf = cache.ln_final.normalized;
        nn::Mat dfm(fm.rows(), fm.cols());
        dfm.leftCols(C) = nn::per_sample_sum(dh, nf, L);
        dfm.rightCols(C) = nn::per_sample_sum(dh, L);
        nn::Mat dn = nn::gate(dh, nn::Mat(fm.leftCols(C).array() + 1.0), L);
        nn::Mat dx = nn::layer_norm_backward(cache.ln_final, dn);
        dsc += tier.final_mod.backward(ps_, grads, cache.sc, dfm);

        for (std::size_t li = tier.blocks.size(); li-- > 0;) {
            const auto& bp = tier.blocks[li];
            const auto& bc = cache.blocks[li];
            const auto alpha1 = bc.mod.middleCols(0, C), gamma1 = bc.mod.middleCols(C, C);
            const auto alpha2 = bc.mod.middleCols(3 * C, C), gamma2 = bc.mod.middleCols(4 * C, C);
            nn::Mat dmod(bc.mod.rows(), bc.mod.cols());

            // feed-forward branch
            dmod.middleCols(3 * C, C) = nn::per_sample_sum(dx, bc.f, L);
            nn::Mat df = nn::gate(dx, alpha2, L);
            nn::Mat dgact = bp.ff2.backward(ps_, grads, bc.g, df);
            nn::Mat dh1 = nn::gelu_backward(bc.h1, dgact);
            nn::Mat dz2 = bp.ff1.backward(ps_, grads, bc.z2, dh1);
            nn::Mat dy2 = dz2;
            if (dg) {
                const Eigen::VectorXd dts = dz2.cwiseProduct(bc.y2).rowwise().sum();
                dg->col(2 * static_cast<Eigen::Index>(li) + 1) += row_scale_grad_to_blocks(dts, samples).col(0);
                dy2 = dz2.array().colwise() * bc.ts2.array();
            }
            dmod.middleCols(4 * C, C) = nn::per_sample_sum(dy2, bc.ln2.normalized, L);
            dmod.middleCols(5 * C, C) = nn::per_sample_sum(dy2, L);
            dx += nn::layer_norm_backward(bc.ln2, nn::gate(dy2, nn::Mat(gamma2.array() + 1.0), L));

            // attention branch
            dmod.middleCols(0, C) = nn::per_sample_sum(dx, bc.a, L);
            nn::Mat da = nn::gate(dx, alpha1, L);
            nn::Mat datt = bp.proj.backward(ps_, grads, bc.att, da);
            nn::Mat dqkv = nn::attention_backward(bc.qkv, bc.attn, datt, samples, L, cfg_.heads);
            nn::Mat dz1 = bp.qkv.backward(ps_, grads, bc.z1, dqkv);
            nn::Mat dy1 = dz1;
            if (dg) {
                const Eigen::VectorXd dts = dz1.cwiseProduct(bc.y1).rowwise().sum();
                dg->col(2 * static_cast<Eigen::Index>(li)) += row_scale_grad_to_blocks(dts, samples).col(0);
                dy1 = dz1.array().colwise() * bc.ts1.array();
            }
            dmod.middleCols(C, C) = nn::per_sample_sum(dy1, bc.ln1.normalized, L);
            dmod.middleCols(2 * C, C) = nn::per_sample_sum(dy1, L);
            dx += nn::layer_norm_backward(bc.ln1, nn::gate(dy1, nn::Mat(gamma1.array() + 1.0), L));

            dsc += bp.mod.backward(ps_, grads, cache.sc, dmod);
        }
        dc += nn::silu_backward(cache.c, dsc);
        return dx;
    }

    NetworkConfig cfg_;
    nn::ParameterSet ps_;
    std::vector<std::size_t> embeddings_;
    std::size_t null_lip_ = 0, null_id_ = 0, emo_table_ = 0;
    nn::Linear time_low_, time_high_, in_low_, low_to_high_;
    detail::CondMlp cond_low_, cond_high_, temporal_, id_adapter_;
    detail::TierParams tier_low_, tier_high_;
    std::vector<nn::Linear> heads_;
};

}  // namespace hicodit
