#pragma once

#include "pdscan/dsp.hpp"
#include "pdscan/frontend.hpp"
#include "pdscan/records.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace pdscan::sweep {

struct SweepPlan {
    double f_start_hz = 100e6;
    double f_stop_hz = 2500e6;
    double step_hz = 40e6;
    double span_hz = 40e6;
    double dwell_s = 0.010;
    double threshold_dbm = -50.0;
    std::size_t n_fft = 8192;
    dsp::WindowFn window = dsp::WindowFn::Rect;
    double sweep_period_target_s = 0.600;  // advisory; the engine only sleeps when early

    // Throws ConfigError.
    void validate() const;
    std::size_t window_count() const;
};

SweepPlan plan_from_json(const nlohmann::json& j, SweepPlan base = {});
nlohmann::json plan_to_json(const SweepPlan& plan);

struct TunedWindow {
    std::uint32_t index = 0;
    double center_freq_hz = 0.0;
};

// Centers f_start, f_start + step, ... <= f_stop.
std::vector<TunedWindow> plan_windows(const SweepPlan& plan);

// Source of frame timestamps.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ms() = 0;
    // Called after each acquisition with the dwell just captured.
    virtual void on_acquired(double /*dwell_s*/) {}
};

class SystemClock final : public Clock {
public:
    std::int64_t now_ms() override;
};

// Deterministic clock that advances by each dwell plus a fixed overhead.
class SimClock final : public Clock {
public:
    explicit SimClock(std::int64_t start_ms, double overhead_s = 0.0) : now_(start_ms), overhead_s_(overhead_s) {}
    std::int64_t now_ms() override { return now_; }
    void on_acquired(double dwell_s) override;
    void advance_ms(std::int64_t ms) { now_ += ms; }

private:
    std::int64_t now_;
    double overhead_s_;
    double carry_ms_ = 0.0;
};

// Random (version 4) UUID strings from a seedable generator.
class UuidGenerator {
public:
    UuidGenerator();
    explicit UuidGenerator(std::uint64_t seed) : rng_(seed) {}
    std::string next();

private:
    std::mutex mutex_;
    std::mt19937_64 rng_;
};

struct WindowReport {
    TunedWindow window;
    double span_hz = 0.0;
    dsp::Peak peak;
    dsp::Classification classification = dsp::Classification::Noise;
    std::size_t samples = 0;
    std::uint64_t cumulative_samples = 0;
    bool failed = false;
    std::string error;
};

struct SweepResult {
    std::string sweep_id;
    SweepPlan plan;
    std::vector<PdEvent> events;
    std::vector<dsp::IqFrame> retained_frames;      // parallel to events
    std::vector<dsp::PowerSpectrum> event_spectra;  // parallel to events, trimmed to span
    StitchedSpectrum stitched;
    std::vector<WindowReport> windows;
    double duration_s = 0.0;

    std::size_t frames_retained() const noexcept { return retained_frames.size(); }
    bool complete() const noexcept { return stitched.complete; }
};

struct SweepContext {
    std::filesystem::path data_dir = ".";
    std::function<bool()> should_stop;                    // polled before every window
    std::function<void(const WindowReport&)> on_window;  // log hook
    UuidGenerator* ids = nullptr;
    std::uint64_t* cumulative_samples = nullptr;
};

// One pass over the plan: tune, acquire, spectrum, peak, classify per window.
// Windows whose peak crosses the threshold become events and keep their IQ;
// everything else is dropped after contributing to the stitched spectrum.
// A failing window is reported and left as a gap.
SweepResult run_sweep(const SweepPlan& plan, frontend::Device& device, Clock& clock, const SweepContext& ctx = {});

// Each frequency goes to the slice whose center is nearest among the slices
// that cover it (ties: lower window index). Slices are trimmed to plan.span_hz.
StitchedSpectrum stitch(const std::vector<dsp::PowerSpectrum>& slices, const SweepPlan& plan);

// pd_<YYYYMMDDThhmmss.mmmZ>_<kHz>kHz.iqf and ..._spectrum.csv under data_dir.
ArtifactRefs name_artifacts(const PdEvent& event, const std::filesystem::path& data_dir);

// cumulative: N, current: M >>> cf MHz= 760.000 , span MHz= 20.000 , [ max MHz= 767.996 , max dBm= -35.704 ] ...THRESHOLD
std::string format_window_line(const WindowReport& report);

}  // namespace pdscan::sweep
