#include "pdscan/dsp.hpp"

#include "pdscan/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdscan::dsp {

double IqFrame::volts_per_count() const noexcept {
    return full_scale_volts() / std::ldexp(1.0, adc_bits - 1);
}

WindowFn parse_window(std::string_view name) {
    if (name == "rect") return WindowFn::Rect;
    if (name == "hann") return WindowFn::Hann;
    throw ArgumentError("unknown window function '" + std::string(name) + "'");
}

std::string_view to_string(WindowFn w) noexcept { return w == WindowFn::Hann ? "hann" : "rect"; }

std::string_view to_string(Classification c) noexcept {
    return c == Classification::Threshold ? "THRESHOLD" : "noise";
}

double power_dbm(double i_volts, double q_volts, double cal_constant) noexcept {
    const double p = (i_volts * i_volts + q_volts * q_volts) * cal_constant;
    if (!(p > 0.0)) {
        return kNegInf;
    }
    return 10.0 * std::log10(p / 1e-3);
}

std::vector<double> window_coefficients(WindowFn w, std::size_t n) {
    std::vector<double> out(n, 1.0);
    if (w == WindowFn::Hann) {
        // periodic Hann, coherent gain exactly 0.5
        for (std::size_t i = 0; i < n; ++i) {
            out[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
        }
    }
    return out;
}

double coherent_gain(WindowFn w, std::size_t n) {
    if (w == WindowFn::Rect || n == 0) {
        return 1.0;
    }
    const auto coeffs = window_coefficients(w, n);
    double sum = 0.0;
    for (double c : coeffs) sum += c;
    return sum / static_cast<double>(n);
}

namespace {

struct SpectrumMeta {
    double center_freq_hz;
    double iq_rate_hz;
    double cal_constant;
    std::uint32_t window_index;
};

void check_args(std::size_t len, std::size_t n_fft, double iq_rate_hz) {
    if (!is_power_of_two(n_fft)) {
        throw ArgumentError("n_fft must be a power of two, got " + std::to_string(n_fft));
    }
    if (len < n_fft) {
        throw ArgumentError("frame has " + std::to_string(len) + " samples, fewer than n_fft " +
                            std::to_string(n_fft));
    }
    if (!(iq_rate_hz > 0.0)) {
        throw ArgumentError("iq_rate must be positive");
    }
}

PowerSpectrum finish(const std::vector<double>& accum, std::size_t segments, std::size_t n_fft,
                     WindowFn window, const SpectrumMeta& meta) {
    PowerSpectrum out;
    out.window_index = meta.window_index;
    out.center_freq_hz = meta.center_freq_hz;
    out.iq_rate_hz = meta.iq_rate_hz;
    out.n_fft = n_fft;
    out.n_avg = segments;
    out.bin_freqs_hz.resize(n_fft);
    out.power_dbm.resize(n_fft);

    const double norm = static_cast<double>(n_fft) * coherent_gain(window, n_fft);
    const double df = meta.iq_rate_hz / static_cast<double>(n_fft);
    const std::size_t half = n_fft / 2;
    for (std::size_t m = 0; m < n_fft; ++m) {
        const std::size_t src = (m + half) % n_fft;
        const double mean_sq = accum[src] / static_cast<double>(segments);
        const double amplitude = std::sqrt(mean_sq) / norm;
        out.bin_freqs_hz[m] = meta.center_freq_hz + (static_cast<double>(m) - static_cast<double>(half)) * df;
        out.power_dbm[m] = power_dbm(amplitude, 0.0, meta.cal_constant);
    }
    return out;
}

// Shared Welch kernel. `load(offset, dst)` writes n_fft samples in volts.
template <class Loader>
PowerSpectrum welch(std::size_t len, std::size_t n_fft, WindowFn window, const SpectrumMeta& meta,
                    Loader&& load, bool parallel) {
    check_args(len, n_fft, meta.iq_rate_hz);
    const std::size_t segments = len / n_fft;
    const auto coeffs = window_coefficients(window, n_fft);
    const bool windowed = window != WindowFn::Rect;
    std::vector<double> accum(n_fft, 0.0);

    auto process = [&](std::size_t seg, std::vector<cf64>& buf, std::vector<double>& acc) {
        load(seg * n_fft, std::span<cf64>(buf));
        if (windowed) {
            for (std::size_t i = 0; i < n_fft; ++i) buf[i] *= coeffs[i];
        }
        cached_plan(n_fft).forward(buf);
        for (std::size_t i = 0; i < n_fft; ++i) acc[i] += std::norm(buf[i]);
    };

    if (!parallel) {
        std::vector<cf64> buf(n_fft);
        for (std::size_t seg = 0; seg < segments; ++seg) process(seg, buf, accum);
        return finish(accum, segments, n_fft, window, meta);
    }

#pragma omp parallel if (segments > 1)
    {
        std::vector<cf64> buf(n_fft);
        std::vector<double> local(n_fft, 0.0);
#pragma omp for schedule(static)
        for (std::ptrdiff_t seg = 0; seg < static_cast<std::ptrdiff_t>(segments); ++seg) {
            process(static_cast<std::size_t>(seg), buf, local);
        }
#pragma omp critical(pdscan_welch_reduce)
        for (std::size_t i = 0; i < n_fft; ++i) accum[i] += local[i];
    }
    return finish(accum, segments, n_fft, window, meta);
}

PowerSpectrum frame_spectrum(const IqFrame& frame, std::size_t n_fft, WindowFn window, bool parallel) {
    const double scale = frame.volts_per_count();
    const SpectrumMeta meta{frame.center_freq_hz, frame.iq_rate_hz, frame.cal_constant(), frame.window_index};
    const IqSample* src = frame.samples.data();
    auto load = [src, scale](std::size_t offset, std::span<cf64> dst) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const IqSample s = src[offset + i];
            dst[i] = {s.i * scale, s.q * scale};
        }
    };
    return welch(frame.samples.size(), n_fft, window, meta, load, parallel);
}

}  // namespace

PowerSpectrum spectrum_from_frame(const IqFrame& frame, std::size_t n_fft, WindowFn window) {
    return frame_spectrum(frame, n_fft, window, true);
}

namespace serial {
PowerSpectrum spectrum_from_frame(const IqFrame& frame, std::size_t n_fft, WindowFn window) {
    return frame_spectrum(frame, n_fft, window, false);
}
}  // namespace serial

PowerSpectrum spectrum_from_samples(std::span<const cf64> volts, double center_freq_hz, double iq_rate_hz,
                                    double cal_constant, std::size_t n_fft, WindowFn window,
                                    std::uint32_t window_index) {
    const SpectrumMeta meta{center_freq_hz, iq_rate_hz, cal_constant, window_index};
    auto load = [volts](std::size_t offset, std::span<cf64> dst) {
        std::copy_n(volts.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    };
    return welch(volts.size(), n_fft, window, meta, load, true);
}

bool in_span(const PowerSpectrum& spec, double span_hz, double freq_hz) {
    const double eps = spec.bin_width_hz() * 1e-6;
    return freq_hz >= spec.center_freq_hz - span_hz / 2.0 - eps && freq_hz < spec.center_freq_hz + span_hz / 2.0 - eps;
}

PowerSpectrum trim_to_span(const PowerSpectrum& spec, double span_hz) {
    PowerSpectrum out = spec;
    out.bin_freqs_hz.clear();
    out.power_dbm.clear();
    for (std::size_t k = 0; k < spec.size(); ++k) {
        if (in_span(spec, span_hz, spec.bin_freqs_hz[k])) {
            out.bin_freqs_hz.push_back(spec.bin_freqs_hz[k]);
            out.power_dbm.push_back(spec.power_dbm[k]);
        }
    }
    return out;
}

Peak peak_search(const PowerSpectrum& spec) {
    if (spec.empty()) {
        throw ArgumentError("peak_search on empty spectrum");
    }
    Peak best{spec.bin_freqs_hz[0], spec.power_dbm[0], 0};
    for (std::size_t k = 1; k < spec.size(); ++k) {
        const double p = spec.power_dbm[k];
        const double f = spec.bin_freqs_hz[k];
        if (p > best.power_dbm || (p == best.power_dbm && f < best.freq_hz)) {
            best = {f, p, k};
        }
    }
    return best;
}

Classification classify(double peak_power_dbm, double threshold_dbm) {
    return peak_power_dbm > threshold_dbm ? Classification::Threshold : Classification::Noise;
}

}  // namespace pdscan::dsp
