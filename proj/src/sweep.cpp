#include "pdscan/sweep.hpp"

#include "json_util.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/timeutil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace pdscan::sweep {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("sweep plan: " + what);
}

std::string mhz(double hz) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", hz / 1e6);
    return buf;
}

}  // namespace

void SweepPlan::validate() const {
    require(std::isfinite(f_start_hz) && f_start_hz > 0.0, "f_start must be positive");
    require(std::isfinite(f_stop_hz) && f_start_hz < f_stop_hz, "f_start must be below f_stop");
    require(std::isfinite(step_hz) && step_hz > 0.0, "step must be positive");
    require(std::isfinite(span_hz) && span_hz > 0.0, "span must be positive");
    require(std::isfinite(dwell_s) && dwell_s > 0.0, "dwell must be positive");
    require(std::isfinite(threshold_dbm), "threshold must be finite");
    require(dsp::is_power_of_two(n_fft) && n_fft >= 2, "n_fft must be a power of two");
    require(sweep_period_target_s >= 0.0, "sweep_period_target must be >= 0");
    const double last = f_start_hz + static_cast<double>(window_count() - 1) * step_hz;
    require(last <= frontend::kMaxFrequencyHz, "window centers exceed 3 GHz");
}

std::size_t SweepPlan::window_count() const {
    return static_cast<std::size_t>(std::floor((f_stop_hz - f_start_hz) / step_hz + 1e-9)) + 1;
}

SweepPlan plan_from_json(const nlohmann::json& j, SweepPlan base) {
    using detail::get_or;
    detail::check_keys(j,
                       {"f_start_hz", "f_stop_hz", "step_hz", "span_hz", "dwell_s", "threshold_dbm", "n_fft", "window",
                        "sweep_period_target_s"},
                       "plan");
    base.f_start_hz = get_or(j, "f_start_hz", base.f_start_hz);
    base.f_stop_hz = get_or(j, "f_stop_hz", base.f_stop_hz);
    base.step_hz = get_or(j, "step_hz", base.step_hz);
    base.span_hz = get_or(j, "span_hz", base.span_hz);
    base.dwell_s = get_or(j, "dwell_s", base.dwell_s);
    base.threshold_dbm = get_or(j, "threshold_dbm", base.threshold_dbm);
    base.n_fft = get_or(j, "n_fft", base.n_fft);
    base.sweep_period_target_s = get_or(j, "sweep_period_target_s", base.sweep_period_target_s);
    if (j.contains("window")) {
        try {
            base.window = dsp::parse_window(j.at("window").get<std::string>());
        } catch (const std::exception& e) {
            throw ConfigError(std::string("plan: ") + e.what());
        }
    }
    base.validate();
    return base;
}

nlohmann::json plan_to_json(const SweepPlan& p) {
    return {{"f_start_hz", p.f_start_hz},       {"f_stop_hz", p.f_stop_hz},
            {"step_hz", p.step_hz},             {"span_hz", p.span_hz},
            {"dwell_s", p.dwell_s},             {"threshold_dbm", p.threshold_dbm},
            {"n_fft", p.n_fft},                 {"window", std::string(dsp::to_string(p.window))},
            {"sweep_period_target_s", p.sweep_period_target_s}};
}

std::vector<TunedWindow> plan_windows(const SweepPlan& plan) {
    plan.validate();
    std::vector<TunedWindow> out(plan.window_count());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = {static_cast<std::uint32_t>(i), plan.f_start_hz + static_cast<double>(i) * plan.step_hz};
    }
    return out;
}

std::int64_t SystemClock::now_ms() { return now_unix_ms(); }

void SimClock::on_acquired(double dwell_s) {
    carry_ms_ += (dwell_s + overhead_s_) * 1e3;
    const auto whole = static_cast<std::int64_t>(std::floor(carry_ms_));
    now_ += whole;
    carry_ms_ -= static_cast<double>(whole);
}

UuidGenerator::UuidGenerator() : rng_(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)) {}

std::string UuidGenerator::next() {
    std::uint64_t hi, lo;
    {
        std::lock_guard lock(mutex_);
        hi = rng_();
        lo = rng_();
    }
    hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;
    lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;
    char buf[37];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                  static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                  static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
    return buf;
}

StitchedSpectrum stitch(const std::vector<dsp::PowerSpectrum>& slices, const SweepPlan& plan) {
    if (slices.empty()) throw EmptySweepError("cannot stitch a sweep with no successful windows");

    std::vector<std::size_t> order(slices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& sa = slices[a];
        const auto& sb = slices[b];
        return sa.center_freq_hz != sb.center_freq_hz ? sa.center_freq_hz < sb.center_freq_hz
                                                      : sa.window_index < sb.window_index;
    });

    const double span = plan.span_hz;
    StitchedSpectrum out;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto& mine = slices[order[pos]];
        const double eps = mine.bin_width_hz() * 1e-6;
        const dsp::PowerSpectrum trimmed = dsp::trim_to_span(mine, span);

        // Only slices whose centers are within one span can compete.
        std::vector<std::size_t> rivals;
        for (std::size_t q = pos; q-- > 0 && mine.center_freq_hz - slices[order[q]].center_freq_hz < span;) {
            rivals.push_back(order[q]);
        }
        for (std::size_t q = pos + 1;
             q < order.size() && slices[order[q]].center_freq_hz - mine.center_freq_hz < span; ++q) {
            rivals.push_back(order[q]);
        }

        dsp::PowerSpectrum kept = trimmed;
        kept.bin_freqs_hz.clear();
        kept.power_dbm.clear();
        for (std::size_t k = 0; k < trimmed.size(); ++k) {
            const double f = trimmed.bin_freqs_hz[k];
            const double mine_dist = std::abs(f - mine.center_freq_hz);
            bool owner = true;
            for (std::size_t r : rivals) {
                const auto& other = slices[r];
                if (!dsp::in_span(other, span, f)) continue;
                const double other_dist = std::abs(f - other.center_freq_hz);
                const bool tie = std::abs(other_dist - mine_dist) <= eps;
                if ((!tie && other_dist < mine_dist) || (tie && other.window_index < mine.window_index)) {
                    owner = false;
                    break;
                }
            }
            if (owner) {
                kept.bin_freqs_hz.push_back(f);
                kept.power_dbm.push_back(trimmed.power_dbm[k]);
            }
        }
        out.segments.push_back(std::move(kept));
    }
    return out;
}

ArtifactRefs name_artifacts(const PdEvent& event, const std::filesystem::path& data_dir) {
    const long long khz = std::llround(event.peak_freq_hz / 1e3);
    const std::string stem = "pd_" + format_compact_ms(event.t0_unix_ms) + "_" + std::to_string(khz) + "kHz";
    return {(data_dir / (stem + ".iqf")).string(), (data_dir / (stem + "_spectrum.csv")).string()};
}

std::string format_window_line(const WindowReport& r) {
    char head[160];
    std::snprintf(head, sizeof head, "cumulative: %llu, current: %zu >>> cf MHz= %s , span MHz= %s , ",
                  static_cast<unsigned long long>(r.cumulative_samples), r.samples,
                  mhz(r.window.center_freq_hz).c_str(), mhz(r.span_hz).c_str());
    if (r.failed) return std::string(head) + "[ window failed: " + r.error + " ] ...gap";
    char tail[128];
    std::snprintf(tail, sizeof tail, "[ max MHz= %s , max dBm= %.3f ] ...%s", mhz(r.peak.freq_hz).c_str(),
                  r.peak.power_dbm, std::string(dsp::to_string(r.classification)).c_str());
    return std::string(head) + tail;
}

SweepResult run_sweep(const SweepPlan& plan, frontend::Device& device, Clock& clock, const SweepContext& ctx) {
    const auto started = std::chrono::steady_clock::now();
    const auto windows = plan_windows(plan);
    UuidGenerator local_ids;
    UuidGenerator& ids = ctx.ids ? *ctx.ids : local_ids;
    std::uint64_t local_counter = 0;
    std::uint64_t& cumulative = ctx.cumulative_samples ? *ctx.cumulative_samples : local_counter;

    if (device.config().span_hz != plan.span_hz) device.set_span(plan.span_hz);

    SweepResult result;
    result.sweep_id = ids.next();
    result.plan = plan;
    const std::int64_t t_start = clock.now_ms();
    std::int64_t next_free = t_start;
    const auto dwell_ms = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(plan.dwell_s * 1e3)));

    bool stopped = false;
    std::vector<dsp::PowerSpectrum> slices;
    std::vector<std::uint32_t> gaps;
    for (const auto& w : windows) {
        if (ctx.should_stop && ctx.should_stop()) {
            stopped = true;
            break;
        }
        WindowReport report;
        report.window = w;
        report.span_hz = plan.span_hz;
        try {
            device.tune(w.center_freq_hz);
            // a frame cannot start before the previous dwell ended
            const std::int64_t t0 = std::max(clock.now_ms(), next_free);
            dsp::IqFrame frame = device.acquire(plan.dwell_s, t0);
            frame.window_index = w.index;
            clock.on_acquired(plan.dwell_s);
            next_free = t0 + dwell_ms;

            auto spectrum = dsp::spectrum_from_frame(frame, plan.n_fft, plan.window);
            auto in_span = dsp::trim_to_span(spectrum, plan.span_hz);
            report.peak = dsp::peak_search(in_span);
            report.classification = dsp::classify(report.peak.power_dbm, plan.threshold_dbm);
            report.samples = frame.samples.size();
            cumulative += frame.samples.size();
            slices.push_back(std::move(spectrum));

            if (report.classification == dsp::Classification::Threshold) {
                PdEvent event;
                event.event_id = ids.next();
                event.t0_unix_ms = t0;
                event.peak_freq_hz = report.peak.freq_hz;
                event.peak_power_dbm = report.peak.power_dbm;
                event.window_index = w.index;
                event.sweep_id = result.sweep_id;
                event.threshold_dbm = plan.threshold_dbm;
                event.artifacts = name_artifacts(event, ctx.data_dir);
                result.events.push_back(std::move(event));
                result.retained_frames.push_back(std::move(frame));
                result.event_spectra.push_back(std::move(in_span));
            }
        } catch (const std::exception& e) {
            report.failed = true;
            report.error = "window " + std::to_string(w.index) + " at " + mhz(w.center_freq_hz) + " MHz: " + e.what();
            gaps.push_back(w.index);
        }
        report.cumulative_samples = cumulative;
        if (ctx.on_window) ctx.on_window(report);
        result.windows.push_back(std::move(report));
    }

    if (!slices.empty()) result.stitched = stitch(slices, plan);
    result.stitched.sweep_id = result.sweep_id;
    result.stitched.t_start_ms = t_start;
    result.stitched.t_end_ms = std::max(clock.now_ms(), next_free);
    result.stitched.gaps = std::move(gaps);
    result.stitched.complete = !stopped;
    result.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace pdscan::sweep
