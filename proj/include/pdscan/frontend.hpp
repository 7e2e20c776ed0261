#pragma once

#include "pdscan/dsp.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <variant>
#include <vector>

namespace pdscan::frontend {

using dsp::cf64;

inline constexpr double kMaxFrequencyHz = 3e9;

// Continuous-wave tone; amplitude is volts peak across 50 ohm.
struct CwTone {
    double freq_hz = 0.0;
    double amplitude_v = 0.0;
    double phase_rad = 0.0;
    double attenuation_db = 0.0;
};

enum class Repetition { Poisson, FixedPeriod };

// Train of damped sinusoids V e^(-t/tau) sin(2 pi f_c t) with tau = 1/(pi B),
// so the -3 dB width of each pulse's spectrum equals bandwidth_hz.
struct PdPulseTrain {
    double center_freq_hz = 0.0;
    double bandwidth_hz = 0.0;
    double rate_hz = 0.0;
    Repetition repetition = Repetition::Poisson;
    double pulse_peak_v = 0.0;
    double attenuation_db = 0.0;

    double decay_s() const noexcept;
};

// Gated carrier: on for burst_len_s out of every burst_len_s / duty_cycle.
// power_dbm is the envelope power while the carrier is on.
struct Burst {
    double center_freq_hz = 0.0;
    double duty_cycle = 1.0;
    double burst_len_s = 0.0;
    double power_dbm = 0.0;
    double attenuation_db = 0.0;
};

using Emitter = std::variant<CwTone, PdPulseTrain, Burst>;

struct EmitterScene {
    std::vector<Emitter> emitters;
    double noise_density_dbm_hz = -174.0;  // -inf switches the simulator to noiseless mode
    std::uint64_t seed = 0;
};

struct AntennaModel {
    enum class Kind { Flat, Bandpass };
    Kind kind = Kind::Flat;
    double center_hz = 0.0;
    double bandwidth_hz = 0.0;

    // Amplitude response; second-order Butterworth-shaped magnitude for bandpass.
    double gain_at(double freq_hz) const noexcept;
};

struct FrontEndConfig {
    double iq_rate_hz = 56e6;
    double span_hz = 40e6;
    int adc_bits = 16;
    double full_scale_v = 1.0;
    std::uint64_t cal_constant_micro = dsp::kDefaultCalMicro;
    AntennaModel antenna;

    void validate() const;
};

void validate(const Emitter& emitter);
void validate(const EmitterScene& scene);

// Nominal carrier frequency of an emitter.
double emitter_frequency(const Emitter& emitter) noexcept;

// Closed-form received power (dBm) of the strongest emitter whose nominal
// frequency lies within resolution_hz of freq_hz; -inf when there is none.
// Assumes a flat antenna.
double scene_power_at(const EmitterScene& scene, double freq_hz, double resolution_hz = 1e3);

EmitterScene scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const EmitterScene& scene);
EmitterScene load_scene(const std::filesystem::path& path);

FrontEndConfig frontend_from_json(const nlohmann::json& j);
nlohmann::json frontend_to_json(const FrontEndConfig& cfg);

// A tunable receiver producing quantized baseband frames.
class Device {
public:
    virtual ~Device() = default;
    virtual void tune(double center_freq_hz) = 0;
    virtual void set_span(double span_hz) = 0;
    virtual dsp::IqFrame acquire(double dwell_s, std::int64_t t0_unix_ms) = 0;
    virtual std::optional<double> tuned_center() const = 0;
    virtual const FrontEndConfig& config() const = 0;
};

class SimulatedFrontEnd final : public Device {
public:
    struct AcquisitionStats {
        std::size_t samples = 0;
        std::size_t pulses_in_frame = 0;  // PD pulse starts within the dwell, all trains
    };

    SimulatedFrontEnd(EmitterScene scene, FrontEndConfig config);

    void tune(double center_freq_hz) override;
    void set_span(double span_hz) override;
    dsp::IqFrame acquire(double dwell_s, std::int64_t t0_unix_ms) override;
    std::optional<double> tuned_center() const override { return center_; }
    const FrontEndConfig& config() const override { return config_; }

    // Band-limited analog baseband in volts before the ADC. Advances the
    // noise and pulse-arrival streams exactly as acquire() does.
    std::vector<cf64> acquire_volts(double dwell_s, std::int64_t t0_unix_ms);

    dsp::IqFrame quantize(std::span<const cf64> volts, std::int64_t t0_unix_ms) const;

    const AcquisitionStats& last_stats() const noexcept { return stats_; }
    const EmitterScene& scene() const noexcept { return scene_; }

private:
    void add_tone(const CwTone& tone, std::span<cf64> out) const;
    void add_pulse_train(const PdPulseTrain& train, double t_start, std::span<cf64> out);
    void add_burst(const Burst& burst, std::size_t emitter_index, double t_start, std::span<cf64> out);
    void add_noise(std::span<cf64> out);
    bool in_band(double lo_hz, double hi_hz) const noexcept;

    EmitterScene scene_;
    FrontEndConfig config_;
    std::optional<double> center_;
    std::mt19937_64 rng_;
    AcquisitionStats stats_;
};

}  // namespace pdscan::frontend
