#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hicodit/nn.hpp"

namespace hicodit {

enum class Condition { lip, id, emo };

inline constexpr Condition kAllConditions[] = {Condition::lip, Condition::id, Condition::emo};

inline std::string to_string(Condition c) {
    switch (c) {
        case Condition::lip: return "lip";
        case Condition::id: return "id";
        case Condition::emo: return "emo";
    }
    return "?";
}

// Visual conditions for one utterance. An empty optional is the null condition.
struct ConditionBundle {
    std::optional<nn::Mat> lip;           // frames x lip_dim
    std::optional<nn::Vec> id;            // id_dim
    std::optional<std::vector<int>> emo;  // frames / emotion_downsample class ids

    bool has(Condition c) const {
        switch (c) {
            case Condition::lip: return lip.has_value();
            case Condition::id: return id.has_value();
            case Condition::emo: return emo.has_value();
        }
        return false;
    }

    void drop(Condition c) {
        switch (c) {
            case Condition::lip: lip.reset(); break;
            case Condition::id: id.reset(); break;
            case Condition::emo: emo.reset(); break;
        }
    }

    bool all_null() const { return !lip && !id && !emo; }

    // Copy keeping only condition c.
    ConditionBundle only(Condition c) const {
        ConditionBundle out;
        switch (c) {
            case Condition::lip: out.lip = lip; break;
            case Condition::id: out.id = id; break;
            case Condition::emo: out.emo = emo; break;
        }
        return out;
    }

    bool operator==(const ConditionBundle& o) const {
        auto mat_eq = [](const auto& a, const auto& b) {
            if (a.has_value() != b.has_value()) return false;
            if (!a) return true;
            return a->rows() == b->rows() && a->cols() == b->cols() && *a == *b;
        };
        return mat_eq(lip, o.lip) && mat_eq(id, o.id) && emo == o.emo;
    }

    void validate(int frames, int lip_dim, int id_dim, int emotion_frames, int emo_classes) const {
        if (lip && (lip->rows() != frames || lip->cols() != lip_dim)) {
            throw std::invalid_argument("condition: lip features must be " + std::to_string(frames) + " x " +
                                        std::to_string(lip_dim));
        }
        if (id && id->size() != id_dim) {
            throw std::invalid_argument("condition: identity vector must have dimension " + std::to_string(id_dim));
        }
        if (emo) {
            if (static_cast<int>(emo->size()) != emotion_frames) {
                throw std::invalid_argument("condition: emotion sequence length " + std::to_string(emo->size()) +
                                            " != frames / emotion_downsample = " + std::to_string(emotion_frames));
            }
            for (int e : *emo) {
                if (e < 0 || e >= emo_classes) throw std::out_of_range("condition: emotion class out of range");
            }
        }
    }
};

}  // namespace hicodit
