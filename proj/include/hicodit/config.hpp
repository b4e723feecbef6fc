#pragma once

// Experiment configuration (JSON). Sections: state_space, schedule, network,
// train, guidance, synth. Unknown keys are rejected; missing keys keep the
// desk-scale defaults below.

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hicodit/guidance.hpp"
#include "hicodit/network.hpp"
#include "hicodit/schedule.hpp"
#include "hicodit/synthdata.hpp"
#include "hicodit/token_space.hpp"
#include "hicodit/training.hpp"

namespace hicodit {

struct ExperimentConfig {
    StateSpaceConfig state_space{4, 8, 8, 1, 4};
    NoiseSchedule schedule;
    NetworkConfig network;  // shape and condition fields are derived, see network_config()
    TrainConfig train;
    GuidanceConfig guidance;
    SynthSpec synth;        // shape fields are derived, see synth_spec()
    int train_examples = 20000;  // corpus size used by gen-data when -n is not given

    SynthSpec synth_spec() const {
        SynthSpec s = synth;
        s.levels = state_space.levels;
        s.frames = state_space.frames;
        s.vocab = state_space.vocab;
        s.split = state_space.split;
        s.emotion_downsample = state_space.emotion_downsample;
        return s;
    }

    NetworkConfig network_config() const {
        NetworkConfig n = network;
        const SynthSpec s = synth_spec();
        n.levels = s.levels;
        n.frames = s.frames;
        n.vocab = s.vocab;
        n.split = s.split;
        n.emotion_downsample = s.emotion_downsample;
        n.lip_dim = s.lip_dim();
        n.face_dim = s.face_dim();
        n.id_dim = s.id_dim;
        n.emo_classes = s.emotions;
        return n;
    }

    void validate() const {
        state_space.validate();
        schedule.validate();
        network_config().validate();
        train.validate();
        guidance.validate();
        synth_spec().validate();
        if (train_examples < 1) throw std::invalid_argument("config: train_examples must be >= 1");
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw std::invalid_argument("config: section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in section '" + section + "'");
        }
    }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read;
    ExperimentConfig c;
    check_keys(j, "<root>", {"state_space", "schedule", "network", "train", "guidance", "synth"});
    if (j.contains("state_space")) {
        const auto& s = j.at("state_space");
        check_keys(s, "state_space", {"levels", "frames", "vocab", "split", "emotion_downsample"});
        read(s, "levels", c.state_space.levels);
        read(s, "frames", c.state_space.frames);
        read(s, "vocab", c.state_space.vocab);
        read(s, "split", c.state_space.split);
        read(s, "emotion_downsample", c.state_space.emotion_downsample);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s, "schedule", {"kind", "sigma_min", "sigma_max", "horizon", "eps"});
        if (s.contains("kind")) c.schedule.kind = schedule_kind_from_string(s.at("kind").get<std::string>());
        read(s, "sigma_min", c.schedule.sigma_min);
        read(s, "sigma_max", c.schedule.sigma_max);
        read(s, "horizon", c.schedule.horizon);
        read(s, "eps", c.schedule.eps);
    }
    if (j.contains("network")) {
        const auto& s = j.at("network");
        check_keys(s, "network", {"channels", "heads", "low_blocks", "high_blocks", "ffn_mult", "time_features", "variant"});
        read(s, "channels", c.network.channels);
        read(s, "heads", c.network.heads);
        read(s, "low_blocks", c.network.low_blocks);
        read(s, "high_blocks", c.network.high_blocks);
        read(s, "ffn_mult", c.network.ffn_mult);
        read(s, "time_features", c.network.time_features);
        if (s.contains("variant")) c.network.variant = network_variant_from_string(s.at("variant").get<std::string>());
    }
    if (j.contains("train")) {
        const auto& s = j.at("train");
        check_keys(s, "train", {"lambda_id", "lr", "batch", "iters", "dropout_per_condition", "dropout_all",
                                "weight_decay", "beta1", "beta2", "adam_eps", "t_floor", "seed", "examples"});
        read(s, "lambda_id", c.train.lambda_id);
        read(s, "lr", c.train.lr);
        read(s, "batch", c.train.batch);
        read(s, "iters", c.train.iters);
        read(s, "dropout_per_condition", c.train.dropout.per_condition);
        read(s, "dropout_all", c.train.dropout.all);
        read(s, "weight_decay", c.train.weight_decay);
        read(s, "beta1", c.train.beta1);
        read(s, "beta2", c.train.beta2);
        read(s, "adam_eps", c.train.adam_eps);
        read(s, "t_floor", c.train.t_floor);
        read(s, "seed", c.train.seed);
        read(s, "examples", c.train_examples);
    }
    if (j.contains("guidance")) {
        const auto& s = j.at("guidance");
        check_keys(s, "guidance", {"w_all", "w_id", "w_emo", "w_lip", "steps"});
        read(s, "w_all", c.guidance.w_all);
        read(s, "w_id", c.guidance.w_id);
        read(s, "w_emo", c.guidance.w_emo);
        read(s, "w_lip", c.guidance.w_lip);
        read(s, "steps", c.guidance.steps);
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        check_keys(s, "synth", {"speakers", "emotions", "phonemes", "id_dim", "noise_eps", "lip_noise", "face_noise", "seed"});
        read(s, "speakers", c.synth.speakers);
        read(s, "emotions", c.synth.emotions);
        read(s, "phonemes", c.synth.phonemes);
        read(s, "id_dim", c.synth.id_dim);
        read(s, "noise_eps", c.synth.noise_eps);
        read(s, "lip_noise", c.synth.lip_noise);
        read(s, "face_noise", c.synth.face_noise);
        read(s, "seed", c.synth.seed);
    }
    c.validate();
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    return {
        {"state_space",
         {{"levels", c.state_space.levels},
          {"frames", c.state_space.frames},
          {"vocab", c.state_space.vocab},
          {"split", c.state_space.split},
          {"emotion_downsample", c.state_space.emotion_downsample}}},
        {"schedule",
         {{"kind", to_string(c.schedule.kind)},
          {"sigma_min", c.schedule.sigma_min},
          {"sigma_max", c.schedule.sigma_max},
          {"horizon", c.schedule.horizon},
          {"eps", c.schedule.eps}}},
        {"network",
         {{"channels", c.network.channels},
          {"heads", c.network.heads},
          {"low_blocks", c.network.low_blocks},
          {"high_blocks", c.network.high_blocks},
          {"ffn_mult", c.network.ffn_mult},
          {"time_features", c.network.time_features},
          {"variant", to_string(c.network.variant)}}},
        {"train",
         {{"lambda_id", c.train.lambda_id},
          {"lr", c.train.lr},
          {"batch", c.train.batch},
          {"iters", c.train.iters},
          {"dropout_per_condition", c.train.dropout.per_condition},
          {"dropout_all", c.train.dropout.all},
          {"weight_decay", c.train.weight_decay},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"adam_eps", c.train.adam_eps},
          {"t_floor", c.train.t_floor},
          {"seed", c.train.seed},
          {"examples", c.train_examples}}},
        {"guidance",
         {{"w_all", c.guidance.w_all},
          {"w_id", c.guidance.w_id},
          {"w_emo", c.guidance.w_emo},
          {"w_lip", c.guidance.w_lip},
          {"steps", c.guidance.steps}}},
        {"synth",
         {{"speakers", c.synth.speakers},
          {"emotions", c.synth.emotions},
          {"phonemes", c.synth.phonemes},
          {"id_dim", c.synth.id_dim},
          {"noise_eps", c.synth.noise_eps},
          {"lip_noise", c.synth.lip_noise},
          {"face_noise", c.synth.face_noise},
          {"seed", c.synth.seed}}},
    };
}

// Network initialized from the training seed, as `train` does.
inline ScoreNetwork make_network(const ExperimentConfig& c) {
    return ScoreNetwork(c.network_config(), derive_seed(c.train.seed, 0x6e6574));
}

inline bool same_schedule(const NoiseSchedule& a, const NoiseSchedule& b) {
    return a.kind == b.kind && a.sigma_min == b.sigma_min && a.sigma_max == b.sigma_max && a.horizon == b.horizon &&
           a.eps == b.eps;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

}  // namespace hicodit
