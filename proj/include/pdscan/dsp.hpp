#pragma once

#include "pdscan/fft.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace pdscan::dsp {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Default calibration: C = 1/(2 * 50 ohm), so an envelope of A volts reads
// A^2 / (2 R) in dBm. C = 1 gives the bare 10 log10((I^2 + Q^2) / 1 mW).
inline constexpr std::uint64_t kDefaultCalMicro = 10'000;
inline constexpr double kLoadOhms = 50.0;

struct IqSample {
    std::int16_t i = 0;
    std::int16_t q = 0;
    friend bool operator==(const IqSample&, const IqSample&) = default;
};

// One dwell of quantized complex baseband. Frequencies are stored in Hz and
// calibration values in integer micro-units so the frame serializes exactly.
struct IqFrame {
    std::uint32_t window_index = 0;
    double center_freq_hz = 0.0;
    double span_hz = 0.0;
    double iq_rate_hz = 0.0;
    std::int64_t t0_unix_ms = 0;
    std::vector<IqSample> samples;
    std::uint8_t adc_bits = 16;
    std::uint64_t full_scale_uv = 1'000'000;
    std::uint64_t cal_constant_micro = kDefaultCalMicro;

    double full_scale_volts() const noexcept { return static_cast<double>(full_scale_uv) * 1e-6; }
    double cal_constant() const noexcept { return static_cast<double>(cal_constant_micro) * 1e-6; }
    // Volts represented by one ADC count: full_scale / 2^(adc_bits - 1).
    double volts_per_count() const noexcept;

    friend bool operator==(const IqFrame&, const IqFrame&) = default;
};

struct PowerSpectrum {
    std::uint32_t window_index = 0;
    double center_freq_hz = 0.0;
    double iq_rate_hz = 0.0;
    std::vector<double> bin_freqs_hz;  // absolute RF, strictly increasing
    std::vector<double> power_dbm;
    std::size_t n_fft = 0;
    std::size_t n_avg = 0;

    std::size_t size() const noexcept { return power_dbm.size(); }
    bool empty() const noexcept { return power_dbm.empty(); }
    double bin_width_hz() const noexcept { return n_fft ? iq_rate_hz / static_cast<double>(n_fft) : 0.0; }
};

enum class WindowFn { Rect, Hann };
enum class Classification { Noise, Threshold };

struct Peak {
    double freq_hz = 0.0;
    double power_dbm = kNegInf;
    std::size_t bin = 0;
};

WindowFn parse_window(std::string_view name);
std::string_view to_string(WindowFn w) noexcept;
std::string_view to_string(Classification c) noexcept;

// 10 log10((I^2 + Q^2) * C / 1 mW); returns -inf for zero power.
double power_dbm(double i_volts, double q_volts, double cal_constant) noexcept;

std::vector<double> window_coefficients(WindowFn w, std::size_t n);
double coherent_gain(WindowFn w, std::size_t n);

// Non-overlapping Welch average of floor(len / n_fft) segment periodograms,
// scaled to per-bin envelope amplitude |X[k]| / (n_fft * coherent_gain) and
// converted to dBm. Bins are ordered from -iq_rate/2 up, DC at center.
// Segments are distributed over OpenMP threads.
PowerSpectrum spectrum_from_frame(const IqFrame& frame, std::size_t n_fft, WindowFn window);

// Same estimator over unquantized baseband samples in volts.
PowerSpectrum spectrum_from_samples(std::span<const cf64> volts, double center_freq_hz, double iq_rate_hz,
                                    double cal_constant, std::size_t n_fft, WindowFn window,
                                    std::uint32_t window_index = 0);

namespace serial {
// Single-threaded reference path kept for cross-checking the parallel kernel.
PowerSpectrum spectrum_from_frame(const IqFrame& frame, std::size_t n_fft, WindowFn window);
}  // namespace serial

// Keeps bins whose frequency lies in [center - span/2, center + span/2).
// Half-open [center - span/2, center + span/2), tolerant to rounding within a millionth of a bin.
bool in_span(const PowerSpectrum& spec, double span_hz, double freq_hz);
PowerSpectrum trim_to_span(const PowerSpectrum& spec, double span_hz);

// Maximum-power bin, ties broken by the lowest frequency.
Peak peak_search(const PowerSpectrum& spec);

// Threshold iff peak_power > threshold (strict).
Classification classify(double peak_power_dbm, double threshold_dbm);

}  // namespace pdscan::dsp
