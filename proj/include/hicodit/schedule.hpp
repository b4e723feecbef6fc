#pragma once

// Noise schedules sigma(t) and cumulative noise sigma_bar(t) = int_0^t sigma(s) ds.

#include <cmath>
#include <stdexcept>
#include <string>

namespace hicodit {

enum class ScheduleKind { log_linear, linear_sigma };

inline std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::log_linear ? "log_linear" : "linear_sigma";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "log_linear") return ScheduleKind::log_linear;
    if (s == "linear_sigma") return ScheduleKind::linear_sigma;
    throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::log_linear;
    // linear_sigma: sigma(t) ramps linearly from sigma_min at t=0 to sigma_max at t=horizon.
    double sigma_min = 1.0;
    double sigma_max = 1.0;
    double horizon = 1.0;
    // log_linear: fraction of tokens left unmasked at t = horizon.
    double eps = 1e-3;

    void validate() const {
        if (!(horizon > 0.0)) throw std::invalid_argument("schedule: horizon must be positive");
        if (kind == ScheduleKind::log_linear && !(eps > 0.0 && eps < 1.0)) {
            throw std::invalid_argument("schedule: eps must lie in (0, 1)");
        }
        if (kind == ScheduleKind::linear_sigma && !(sigma_min > 0.0 && sigma_max > 0.0)) {
            throw std::invalid_argument("schedule: sigma_min and sigma_max must be positive");
        }
    }

    void check_time(double t) const {
        if (!(t >= 0.0 && t <= horizon)) {
            throw std::out_of_range("schedule: t=" + std::to_string(t) + " outside [0, " +
                                    std::to_string(horizon) + "]");
        }
    }

    double sigma(double t) const {
        check_time(t);
        if (kind == ScheduleKind::log_linear) {
            const double a = (1.0 - eps) / horizon;
            return a / (1.0 - a * t);
        }
        return sigma_min + (sigma_max - sigma_min) * t / horizon;
    }

    double sigma_bar(double t) const {
        check_time(t);
        if (kind == ScheduleKind::log_linear) {
            // Expected masked fraction 1 - exp(-sigma_bar) = (t / T)(1 - eps).
            return -std::log1p(-(t / horizon) * (1.0 - eps));
        }
        return sigma_min * t + 0.5 * (sigma_max - sigma_min) * t * t / horizon;
    }

    double mask_probability(double t) const { return -std::expm1(-sigma_bar(t)); }

    // Concrete-score prefactor e^{-sigma_bar} / (1 - e^{-sigma_bar}).
    double score_ratio(double t) const { return 1.0 / std::expm1(sigma_bar(t)); }
};

inline double mask_probability_from_sigma_bar(double sigma_bar) { return -std::expm1(-sigma_bar); }

// Time at which sigma_bar reaches the given value (log_linear closed form, bisection otherwise).
inline double time_for_sigma_bar(const NoiseSchedule& s, double target) {
    if (s.kind == ScheduleKind::log_linear) {
        const double t = s.horizon * (-std::expm1(-target)) / (1.0 - s.eps);
        if (t > s.horizon) throw std::out_of_range("time_for_sigma_bar: target beyond horizon");
        return t;
    }
    double lo = 0.0, hi = s.horizon;
    if (s.sigma_bar(hi) < target) throw std::out_of_range("time_for_sigma_bar: target beyond horizon");
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (s.sigma_bar(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace hicodit
