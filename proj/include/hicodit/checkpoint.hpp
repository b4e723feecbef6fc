#pragma once

// Network checkpoints.
//
// Layout (little-endian):
//   "HCKP" | u16 version
//   u32 x 16 NetworkConfig fields (levels, frames, vocab, split, emotion_downsample,
//            channels, heads, low_blocks, high_blocks, ffn_mult, time_features,
//            lip_dim, id_dim, emo_classes, face_dim, variant)
//   u32 schedule kind | f64 sigma_min | f64 sigma_max | f64 horizon | f64 eps
//   u32 tensor count, then per tensor:
//     u32 name length | name bytes | u32 rank (2) | u32 rows | u32 cols | f64 data (row-major)

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "hicodit/corpus_io.hpp"
#include "hicodit/network.hpp"
#include "hicodit/schedule.hpp"

namespace hicodit {

inline constexpr std::array<char, 4> kCheckpointMagic{'H', 'C', 'K', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    NetworkConfig config;
    NoiseSchedule schedule;
};

namespace detail {

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline std::array<int*, 15> config_ints(NetworkConfig& c) {
    return {&c.levels, &c.frames, &c.vocab, &c.split, &c.emotion_downsample, &c.channels, &c.heads,
            &c.low_blocks, &c.high_blocks, &c.ffn_mult, &c.time_features, &c.lip_dim, &c.id_dim,
            &c.emo_classes, &c.face_dim};
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const ScoreNetwork& net, const NoiseSchedule& sched) {
    out.write(kCheckpointMagic.data(), 4);
    detail::put_u16(out, kCheckpointVersion);
    NetworkConfig cfg = net.config();
    for (int* f : detail::config_ints(cfg)) detail::put_u32(out, static_cast<std::uint32_t>(*f));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.variant));
    detail::put_u32(out, static_cast<std::uint32_t>(sched.kind));
    detail::put_f64(out, sched.sigma_min);
    detail::put_f64(out, sched.sigma_max);
    detail::put_f64(out, sched.horizon);
    detail::put_f64(out, sched.eps);
    const auto& ps = net.parameters();
    detail::put_u32(out, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string& name = ps.name(i);
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, 2);
        detail::put_u32(out, static_cast<std::uint32_t>(ps[i].rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(ps[i].cols()));
        for (Eigen::Index k = 0; k < ps[i].size(); ++k) detail::put_f64(out, ps[i].data()[k]);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ScoreNetwork& net, const NoiseSchedule& sched) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    write_checkpoint(out, net, sched);
}

inline Checkpoint read_checkpoint_header(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (in.gcount() != 4 || magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
    const auto version = detail::get_u16(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    for (int* f : detail::config_ints(ck.config)) *f = static_cast<int>(detail::get_u32(in));
    const auto variant = detail::get_u32(in);
    if (variant > 2) throw std::runtime_error("checkpoint: unknown network variant");
    ck.config.variant = static_cast<NetworkVariant>(variant);
    const auto kind = detail::get_u32(in);
    if (kind > 1) throw std::runtime_error("checkpoint: unknown schedule kind");
    ck.schedule.kind = static_cast<ScheduleKind>(kind);
    ck.schedule.sigma_min = detail::get_f64(in);
    ck.schedule.sigma_max = detail::get_f64(in);
    ck.schedule.horizon = detail::get_f64(in);
    ck.schedule.eps = detail::get_f64(in);
    ck.config.validate();
    ck.schedule.validate();
    return ck;
}

// Reads the header, builds a network of that shape and fills every tensor,
// validating names and shapes in order.
inline ScoreNetwork read_checkpoint(std::istream& in, NoiseSchedule* sched_out = nullptr) {
    const Checkpoint ck = read_checkpoint_header(in);
    ScoreNetwork net(ck.config);
    auto& ps = net.parameters();
    const auto count = detail::get_u32(in);
    if (count != ps.size()) {
        throw std::runtime_error("checkpoint: expected " + std::to_string(ps.size()) + " tensors, found " +
                                 std::to_string(count));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto len = detail::get_u32(in);
        if (len > 4096) throw std::runtime_error("checkpoint: implausible tensor name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (static_cast<std::uint32_t>(in.gcount()) != len) throw std::runtime_error("checkpoint: truncated name");
        if (name != ps.name(i)) {
            throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                                     ps.name(i) + "'");
        }
        const auto rank = detail::get_u32(in);
        if (rank != 2) throw std::runtime_error("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
        const auto rows = detail::get_u32(in);
        const auto cols = detail::get_u32(in);
        if (rows != ps[i].rows() || cols != ps[i].cols()) {
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        }
        for (Eigen::Index k = 0; k < ps[i].size(); ++k) ps[i].data()[k] = detail::get_f64(in);
    }
    if (sched_out) *sched_out = ck.schedule;
    return net;
}

inline ScoreNetwork load_checkpoint(const std::string& path, NoiseSchedule* sched_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(in, sched_out);
}

}  // namespace hicodit
