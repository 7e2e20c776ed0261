#include "pdscan/coverage.hpp"

#include "pdscan/errors.hpp"
#include "pdscan/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pdscan::coverage {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ArgumentError("detection model: " + what);
}

struct Stream {
    std::uint64_t state;
    double uniform() noexcept { return unit_double(splitmix64(state)); }
    // Exponential with the given rate; 1 - u is in (0, 1].
    double exponential(double rate) noexcept { return -std::log1p(-uniform()) / rate; }
};

bool detected(Stream& rng, double p_single) { return p_single >= 1.0 || rng.uniform() < p_single; }

bool trial_poisson(const DetectionModel& m, Stream& rng) {
    const double t_r = m.revisit_s();
    const double open = m.home_window * m.slot_s();
    const double horizon = m.n_sweeps * t_r;
    for (double t = rng.exponential(m.pulse_rate_hz); t < horizon; t += rng.exponential(m.pulse_rate_hz)) {
        const double k = std::floor(t / t_r);
        const double local = t - k * t_r;
        if (local >= open && local < open + m.dwell_s && detected(rng, m.p_single)) return true;
    }
    return false;
}

bool trial_fixed(const DetectionModel& m, Stream& rng) {
    const double period = m.period_s();
    const double phase = m.phase_s ? std::fmod(*m.phase_s, period) : rng.uniform() * period;
    for (std::uint32_t k = 0; k < m.n_sweeps; ++k) {
        const double open = k * m.revisit_s() + m.home_window * m.slot_s();
        const double close = open + m.dwell_s;
        for (double t = phase + std::ceil((open - phase) / period) * period; t < close; t += period) {
            if (t >= open && detected(rng, m.p_single)) return true;
        }
    }
    return false;
}

bool run_trial(const DetectionModel& m, std::uint64_t seed, std::uint64_t index) {
    Stream rng{derive_seed(seed, index)};
    return m.repetition == Repetition::Poisson ? trial_poisson(m, rng) : trial_fixed(m, rng);
}

McEstimate summarize(std::uint64_t hits, std::uint64_t trials) {
    McEstimate e;
    e.trials = trials;
    e.hits = hits;
    e.estimate = trials ? static_cast<double>(hits) / static_cast<double>(trials) : 0.0;
    e.std_error = trials ? std::sqrt(e.estimate * (1.0 - e.estimate) / static_cast<double>(trials)) : 0.0;
    return e;
}

}  // namespace

void DetectionModel::validate() const {
    require(std::isfinite(pulse_rate_hz) && pulse_rate_hz > 0.0, "pulse rate must be positive");
    require(std::isfinite(dwell_s) && dwell_s > 0.0, "dwell must be positive");
    require(n_windows >= 1, "at least one window");
    require(std::isfinite(overhead_s) && overhead_s >= 0.0, "overhead must be >= 0");
    require(n_sweeps >= 1, "at least one sweep");
    require(p_single > 0.0 && p_single <= 1.0, "p_single must be in (0, 1]");
    require(home_window < n_windows, "home window outside the plan");
    require(!phase_s || std::isfinite(*phase_s), "phase must be finite");
}

double compound(double p, double m) {
    if (p >= 1.0) return 1.0;
    if (p <= 0.0) return 0.0;
    return -std::expm1(m * std::log1p(-p));
}

double p_per_sweep(const DetectionModel& model) {
    model.validate();
    if (model.repetition == Repetition::Poisson) {
        return -std::expm1(-model.pulse_rate_hz * model.dwell_s) * model.p_single;
    }
    return std::min(model.dwell_s / model.period_s(), 1.0) * model.p_single;
}

double p_detect_analytic(const DetectionModel& model) { return compound(p_per_sweep(model), model.n_sweeps); }

double detections_per_second(const DetectionModel& model) { return p_per_sweep(model) / model.revisit_s(); }

McEstimate p_detect_monte_carlo(const DetectionModel& model, std::uint64_t trials, std::uint64_t seed) {
    model.validate();
    std::uint64_t hits = 0;
    const auto n = static_cast<std::int64_t>(trials);
#pragma omp parallel for schedule(static) reduction(+ : hits)
    for (std::int64_t t = 0; t < n; ++t) {
        hits += run_trial(model, seed, static_cast<std::uint64_t>(t)) ? 1 : 0;
    }
    return summarize(hits, trials);
}

McEstimate serial::p_detect_monte_carlo(const DetectionModel& model, std::uint64_t trials, std::uint64_t seed) {
    model.validate();
    std::uint64_t hits = 0;
    for (std::uint64_t t = 0; t < trials; ++t) hits += run_trial(model, seed, t) ? 1 : 0;
    return summarize(hits, trials);
}

std::uint32_t required_sweeps(double p, double target_p) {
    if (!(target_p > 0.0 && target_p < 1.0)) throw ArgumentError("target probability must be in (0, 1)");
    if (!(p > 0.0)) throw UnreachableError("per-sweep detection probability is zero; no sweep count reaches the target");
    if (p >= 1.0) return 1;
    double m = std::ceil(std::log1p(-target_p) / std::log1p(-p));
    if (!(m < static_cast<double>(std::numeric_limits<std::uint32_t>::max()))) {
        throw UnreachableError("required sweep count exceeds 2^32");
    }
    m = std::max(m, 1.0);
    while (m > 1.0 && compound(p, m - 1.0) >= target_p) m -= 1.0;
    while (compound(p, m) < target_p) m += 1.0;
    return static_cast<std::uint32_t>(m);
}

std::uint32_t required_sweeps(const DetectionModel& model, double target_p) {
    return required_sweeps(p_per_sweep(model), target_p);
}

}  // namespace pdscan::coverage
