#pragma once

#include "pdscan/dsp.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>

namespace pdscan::bench {

// A 10 ms frame at 56 MS/s: a strong tone over low-level noise.
inline dsp::IqFrame synthetic_frame(double iq_rate_hz = 56e6, double dwell_s = 0.010, std::uint64_t seed = 7) {
    dsp::IqFrame f;
    f.center_freq_hz = 768e6;
    f.span_hz = 40e6;
    f.iq_rate_hz = iq_rate_hz;
    f.t0_unix_ms = 1'700'000'000'000;
    const auto n = static_cast<std::size_t>(std::floor(iq_rate_hz * dwell_s));
    f.samples.resize(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 40.0);
    const double w = 2.0 * M_PI * 3.1e6 / iq_rate_hz;
    for (std::size_t k = 0; k < n; ++k) {
        f.samples[k] = {static_cast<std::int16_t>(std::lround(8000.0 * std::cos(w * k) + noise(rng))),
                        static_cast<std::int16_t>(std::lround(8000.0 * std::sin(w * k) + noise(rng)))};
    }
    return f;
}

// Frame -> spectrum -> trim -> peak -> classify, the per-window scan work.
inline dsp::Classification process_frame(const dsp::IqFrame& frame, std::size_t n_fft, bool parallel) {
    const auto spec = parallel ? dsp::spectrum_from_frame(frame, n_fft, dsp::WindowFn::Rect)
                               : dsp::serial::spectrum_from_frame(frame, n_fft, dsp::WindowFn::Rect);
    const auto trimmed = dsp::trim_to_span(spec, frame.span_hz);
    return dsp::classify(dsp::peak_search(trimmed).power_dbm, -50.0);
}

struct Rate {
    double seconds = 0.0;
    std::size_t reps = 0;
    double msps = 0.0;  // complex mega-samples per second
};

// Repeats fn until min_seconds have elapsed (at least once).
inline Rate measure(const std::function<void()>& fn, double min_seconds, double samples_per_call) {
    using clock = std::chrono::steady_clock;
    fn();  // warm plans and caches
    const auto start = clock::now();
    Rate r;
    do {
        fn();
        ++r.reps;
        r.seconds = std::chrono::duration<double>(clock::now() - start).count();
    } while (r.seconds < min_seconds);
    r.msps = samples_per_call * static_cast<double>(r.reps) / r.seconds / 1e6;
    return r;
}

}  // namespace pdscan::bench
