#pragma once

#include <cstdint>
#include <optional>

namespace pdscan::coverage {

enum class Repetition { Poisson, FixedPeriod };

// A repetitive emitter confined to one window of a sweeping receiver.
// Window w of sweep k is open during [k*T_r + w*T_slot, k*T_r + w*T_slot + T_d)
// with T_slot = T_d + overhead and T_r = W * T_slot.
struct DetectionModel {
    Repetition repetition = Repetition::Poisson;
    double pulse_rate_hz = 100.0;  // Poisson rate, or 1/period for FixedPeriod
    double dwell_s = 0.010;
    std::uint32_t n_windows = 61;
    double overhead_s = 0.0;  // per window
    std::uint32_t n_sweeps = 1;
    double p_single = 1.0;
    std::uint32_t home_window = 0;
    std::optional<double> phase_s;  // FixedPeriod: first pulse time; uniform over the period when unset

    // Throws ArgumentError.
    void validate() const;
    double slot_s() const noexcept { return dwell_s + overhead_s; }
    double revisit_s() const noexcept { return n_windows * slot_s(); }
    double period_s() const noexcept { return 1.0 / pulse_rate_hz; }
};

// Probability that one sweep catches the emitter.
double p_per_sweep(const DetectionModel& model);

// Poisson: p = (1 - e^(-λ T_d)) p_single. FixedPeriod: p = min(T_d/T_p, 1) p_single.
// Over m sweeps: 1 - (1 - p)^m.
double p_detect_analytic(const DetectionModel& model);

// Expected detected sweeps per second of wall clock: p / T_r.
double detections_per_second(const DetectionModel& model);

struct McEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    std::uint64_t trials = 0;
    std::uint64_t hits = 0;
};

// Simulates pulse arrival times against the sweep schedule. Trial t draws from
// its own stream seeded by derive_seed(seed, t), so the result does not depend
// on the thread count. Parallelized with OpenMP.
McEstimate p_detect_monte_carlo(const DetectionModel& model, std::uint64_t trials, std::uint64_t seed);

namespace serial {
McEstimate p_detect_monte_carlo(const DetectionModel& model, std::uint64_t trials, std::uint64_t seed);
}

// Smallest m >= 1 with 1 - (1-p)^m >= target_p. Throws UnreachableError when
// p <= 0, ArgumentError unless 0 < target_p < 1.
std::uint32_t required_sweeps(double p, double target_p);
std::uint32_t required_sweeps(const DetectionModel& model, double target_p);

// 1 - (1-p)^m, evaluated without cancellation for small p.
double compound(double p, double m);

}  // namespace pdscan::coverage
