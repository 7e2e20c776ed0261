#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pdscan/errors.hpp"
#include "pdscan/sweep.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <regex>
#include <set>

using namespace pdscan;
using namespace pdscan::sweep;

namespace {

// Synthetic slice whose powers encode (window, bin) so a stitched bin can be traced back.
dsp::PowerSpectrum make_slice(std::uint32_t index, double center, double rate, std::size_t n) {
    dsp::PowerSpectrum s;
    s.window_index = index;
    s.center_freq_hz = center;
    s.iq_rate_hz = rate;
    s.n_fft = n;
    s.n_avg = 1;
    for (std::size_t m = 0; m < n; ++m) {
        s.bin_freqs_hz.push_back(center + (static_cast<double>(m) - static_cast<double>(n / 2)) * rate / n);
        s.power_dbm.push_back(index * 1e6 + static_cast<double>(m));
    }
    return s;
}

// Independent owner rule: nearest covering center, ties to lower index.
// Frequencies are compared on the exact bin lattice of the source slice.
int oracle_owner(long double f, const std::vector<long double>& centers, long double span, long double tol) {
    int best = -1;
    long double best_d = 0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        if (f < centers[i] - span / 2 - tol || f >= centers[i] + span / 2 - tol) continue;
        const long double d = std::fabs(f - centers[i]);
        if (best < 0 || d < best_d - tol) {
            best = static_cast<int>(i);
            best_d = d;
        }
    }
    return best;
}

void check_ownership(const SweepPlan& plan, double rate, std::size_t n) {
    std::vector<dsp::PowerSpectrum> slices;
    std::vector<long double> centers;
    for (const auto& w : plan_windows(plan)) {
        slices.push_back(make_slice(w.index, w.center_freq_hz, rate, n));
        centers.push_back(w.center_freq_hz);
    }
    const auto st = stitch(slices, plan);
    const long double bw = rate / static_cast<long double>(n);
    const long double tol = bw * 1e-6L;

    std::set<std::pair<int, std::size_t>> produced;
    const auto powers = st.powers();
    for (double p : powers) {
        const int w = static_cast<int>(std::floor(p / 1e6));
        produced.insert({w, static_cast<std::size_t>(p - w * 1e6)});
    }
    REQUIRE(produced.size() == powers.size());

    std::size_t expected = 0;
    for (std::size_t w = 0; w < slices.size(); ++w) {
        for (std::size_t m = 0; m < n; ++m) {
            const long double f = centers[w] + (static_cast<long double>(m) - n / 2) * bw;
            const bool mine = oracle_owner(f, centers, plan.span_hz, tol) == static_cast<int>(w);
            CHECK(mine == (produced.count({static_cast<int>(w), m}) == 1));
            expected += mine;
        }
    }
    CHECK(expected == st.bin_count());

    const auto freqs = st.frequencies();
    for (std::size_t k = 1; k < freqs.size(); ++k) REQUIRE(freqs[k] > freqs[k - 1]);
}

class SceneDevice : public frontend::Device {
public:
    SceneDevice(frontend::EmitterScene scene, frontend::FrontEndConfig cfg, std::set<double> broken = {})
        : sim_(std::move(scene), cfg), broken_(std::move(broken)) {}
    void tune(double f) override {
        if (broken_.count(f)) throw TuneError("synthesizer unlocked");
        sim_.tune(f);
    }
    void set_span(double s) override { sim_.set_span(s); }
    dsp::IqFrame acquire(double dwell, std::int64_t t0) override {
        t0s.push_back(t0);
        return sim_.acquire(dwell, t0);
    }
    std::optional<double> tuned_center() const override { return sim_.tuned_center(); }
    const frontend::FrontEndConfig& config() const override { return sim_.config(); }

    std::vector<std::int64_t> t0s;

private:
    frontend::SimulatedFrontEnd sim_;
    std::set<double> broken_;
};

class FrozenClock final : public Clock {
public:
    std::int64_t now_ms() override { return 1714564800000; }
};

SweepPlan desk_plan() {
    SweepPlan p;
    p.f_start_hz = 302e6;
    p.f_stop_hz = 326e6;
    p.step_hz = 4e6;
    p.span_hz = 4e6;
    p.n_fft = 8192;
    return p;
}

frontend::FrontEndConfig desk_config() {
    frontend::FrontEndConfig cfg;
    cfg.iq_rate_hz = 4e6;
    cfg.span_hz = 4e6;
    cfg.full_scale_v = 0.05;
    return cfg;
}

frontend::EmitterScene tone_scene(double freq, double amplitude, double attenuation) {
    frontend::EmitterScene s;
    frontend::CwTone t;
    t.freq_hz = freq;
    t.amplitude_v = amplitude;
    t.attenuation_db = attenuation;
    s.emitters.push_back(t);
    s.seed = 11;
    return s;
}

}  // namespace

TEST_CASE("window grid") {
    SweepPlan p;
    CHECK(p.window_count() == 61);
    const auto w = plan_windows(p);
    REQUIRE(w.size() == 61);
    CHECK(w.front().center_freq_hz == 100e6);
    CHECK(w.back().center_freq_hz == 2500e6);

    p.f_start_hz = 750e6;
    p.f_stop_hz = 790e6;
    p.step_hz = 10e6;
    const auto w2 = plan_windows(p);
    REQUIRE(w2.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(w2[i].index == i);
        CHECK(w2[i].center_freq_hz == 750e6 + 10e6 * static_cast<double>(i));
    }

    p.f_start_hz = p.f_stop_hz - 1;
    CHECK(plan_windows(p).size() == 1);

    p.f_start_hz = 750e6;
    p.f_stop_hz = 785e6;
    CHECK(plan_windows(p).size() == 4);
}

TEST_CASE("plan validation") {
    auto bad = [](auto mutate) {
        SweepPlan p;
        mutate(p);
        CHECK_THROWS_AS(p.validate(), ConfigError);
    };
    bad([](SweepPlan& p) { p.f_start_hz = p.f_stop_hz; });
    bad([](SweepPlan& p) { p.f_start_hz = 0; });
    bad([](SweepPlan& p) { p.step_hz = 0; });
    bad([](SweepPlan& p) { p.span_hz = -1; });
    bad([](SweepPlan& p) { p.dwell_s = 0; });
    bad([](SweepPlan& p) { p.n_fft = 1000; });
    bad([](SweepPlan& p) { p.f_stop_hz = 3.5e9; });
    bad([](SweepPlan& p) { p.threshold_dbm = std::numeric_limits<double>::quiet_NaN(); });
    SweepPlan ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("plan json") {
    SweepPlan p = desk_plan();
    p.window = dsp::WindowFn::Hann;
    p.threshold_dbm = -42.5;
    const auto back = plan_from_json(plan_to_json(p));
    CHECK(plan_to_json(back) == plan_to_json(p));

    const auto partial = plan_from_json({{"threshold_dbm", -70.0}});
    CHECK(partial.threshold_dbm == -70.0);
    CHECK(partial.f_start_hz == 100e6);

    CHECK_THROWS_AS(plan_from_json({{"treshold_dbm", -70.0}}), ConfigError);
    CHECK_THROWS_AS(plan_from_json({{"window", "kaiser"}}), ConfigError);
    CHECK_THROWS_AS(plan_from_json({{"step_hz", 0.0}}), ConfigError);
}

TEST_CASE("stitch default grid bin count") {
    SweepPlan p;
    std::vector<dsp::PowerSpectrum> slices;
    for (const auto& w : plan_windows(p)) slices.push_back(make_slice(w.index, w.center_freq_hz, 40e6, 8192));
    CHECK(stitch(slices, p).bin_count() == 61u * 8192u);

    slices.clear();
    // 56 MS/s: only |m - 4096| * 56e6/8192 within [-20 MHz, 20 MHz) survive
    std::size_t per = 0;
    for (std::size_t m = 0; m < 8192; ++m) {
        const double off = (static_cast<double>(m) - 4096.0) * 56e6 / 8192.0;
        per += off >= -20e6 && off < 20e6;
    }
    for (const auto& w : plan_windows(p)) slices.push_back(make_slice(w.index, w.center_freq_hz, 56e6, 8192));
    CHECK(stitch(slices, p).bin_count() == 61u * per);
}

TEST_CASE("stitch single slice is the trimmed slice") {
    SweepPlan p = desk_plan();
    p.f_stop_hz = p.f_start_hz;
    p.f_stop_hz += 1;
    const auto s = make_slice(0, 302e6, 4e6, 4096);
    const auto st = stitch({s}, p);
    REQUIRE(st.segments.size() == 1);
    CHECK(st.segments[0].bin_freqs_hz == s.bin_freqs_hz);
    CHECK(st.segments[0].power_dbm == s.power_dbm);
}

TEST_CASE("stitch ownership matches brute force") {
    SUBCASE("contiguous") { check_ownership(desk_plan(), 4e6, 4096); }
    SUBCASE("half overlap, aligned grid") {
        SweepPlan p;
        p.f_start_hz = 750e6;
        p.f_stop_hz = 810e6;
        p.step_hz = 10e6;
        p.span_hz = 20e6;
        check_ownership(p, 25.6e6, 8192);
    }
    SUBCASE("overlap, unaligned grid") {
        SweepPlan p;
        p.f_start_hz = 700e6;
        p.f_stop_hz = 740e6;
        p.step_hz = 7e6;
        p.span_hz = 10e6;
        check_ownership(p, 12.3e6, 1024);
    }
    SUBCASE("span narrower than step leaves gaps") {
        SweepPlan p = desk_plan();
        p.span_hz = 2e6;
        check_ownership(p, 4e6, 4096);
    }
}

TEST_CASE("stitch of nothing") {
    CHECK_THROWS_AS(stitch({}, desk_plan()), EmptySweepError);
}

TEST_CASE("artifact names") {
    PdEvent e;
    e.t0_unix_ms = 1714564800123;
    e.peak_freq_hz = 315e6;
    auto a = name_artifacts(e, "/data");
    CHECK(a.iq_path == "/data/pd_20240501T120000.123Z_315000kHz.iqf");
    CHECK(a.spectrum_path == "/data/pd_20240501T120000.123Z_315000kHz_spectrum.csv");
    e.peak_freq_hz = 767.996e6;
    CHECK(name_artifacts(e, "d").iq_path == "d/pd_20240501T120000.123Z_767996kHz.iqf");
    e.peak_freq_hz = 767996499.0;
    CHECK(name_artifacts(e, "d").iq_path == "d/pd_20240501T120000.123Z_767996kHz.iqf");
}

TEST_CASE("window log line") {
    WindowReport r;
    r.window = {1, 760e6};
    r.span_hz = 20e6;
    r.peak = {767.996e6, -35.7041, 0};
    r.classification = dsp::Classification::Threshold;
    r.samples = 256000;
    r.cumulative_samples = 512000;
    CHECK(format_window_line(r) ==
          "cumulative: 512000, current: 256000 >>> cf MHz= 760.000 , span MHz= 20.000 , "
          "[ max MHz= 767.996 , max dBm= -35.704 ] ...THRESHOLD");
    r.classification = dsp::Classification::Noise;
    CHECK(format_window_line(r).ends_with("...noise"));
}

TEST_CASE("uuids") {
    UuidGenerator a(7), b(7), c;
    const std::regex v4("[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}");
    std::set<std::string> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto id = a.next();
        CHECK(std::regex_match(id, v4));
        CHECK(id == b.next());
        seen.insert(id);
        seen.insert(c.next());
    }
    CHECK(seen.size() == 2000);
}

TEST_CASE("sim clock") {
    SimClock clk(1000, 0.0025);
    for (int i = 0; i < 4; ++i) clk.on_acquired(0.010);
    CHECK(clk.now_ms() == 1050);
    clk.advance_ms(5);
    CHECK(clk.now_ms() == 1055);
}

TEST_CASE("single tone gives one event") {
    // -36 dBm at 315 MHz: 0.5 V envelope less 39.98 dB
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config());
    SimClock clk(1714564800000);
    UuidGenerator ids(3);
    std::vector<std::string> lines;
    SweepContext ctx;
    ctx.data_dir = "/var/pd";
    ctx.ids = &ids;
    ctx.on_window = [&](const WindowReport& r) { lines.push_back(format_window_line(r)); };
    const auto res = run_sweep(desk_plan(), dev, clk, ctx);

    REQUIRE(res.events.size() == 1);
    const auto& e = res.events[0];
    CHECK(e.window_index == 3);
    CHECK(std::abs(e.peak_freq_hz - 315e6) < 1.0);
    CHECK(std::abs(e.peak_power_dbm - (-36.0)) < 0.1);
    CHECK(e.threshold_dbm == -50.0);
    CHECK(e.sweep_id == res.sweep_id);
    CHECK(e.t0_unix_ms == 1714564800030);
    CHECK(e.artifacts.iq_path == "/var/pd/pd_20240501T120000.030Z_315000kHz.iqf");
    CHECK(res.frames_retained() == 1);
    CHECK(res.retained_frames[0].window_index == 3);
    CHECK(res.retained_frames[0].t0_unix_ms == e.t0_unix_ms);
    REQUIRE(res.event_spectra.size() == 1);
    CHECK(res.event_spectra[0].size() == 8192);
    CHECK(res.complete());
    CHECK(res.stitched.gaps.empty());
    CHECK(res.stitched.bin_count() == 7u * 8192u);
    CHECK(res.stitched.t_start_ms == 1714564800000);
    CHECK(res.stitched.t_end_ms == 1714564800070);

    REQUIRE(lines.size() == 7);
    CHECK(lines[3].find("cf MHz= 314.000") != std::string::npos);
    CHECK(lines[3].ends_with("...THRESHOLD"));
    CHECK(lines[0].starts_with("cumulative: 40000, current: 40000 >>> "));
    CHECK(lines[6].starts_with("cumulative: 280000, current: 40000 >>> "));
    for (std::size_t i = 0; i < 7; ++i) {
        if (i != 3) CHECK(lines[i].ends_with("...noise"));
    }
}

TEST_CASE("empty scene gives no events and retains nothing") {
    frontend::EmitterScene quiet;
    quiet.seed = 5;
    SceneDevice dev(quiet, desk_config());
    SimClock clk(0);
    const auto res = run_sweep(desk_plan(), dev, clk);
    CHECK(res.events.empty());
    CHECK(res.frames_retained() == 0);
    CHECK(res.windows.size() == 7);
    CHECK(res.complete());
    for (const auto& w : res.windows) CHECK(w.peak.power_dbm < -50.0);
}

TEST_CASE("failing window becomes a gap") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config(), {310e6});
    SimClock clk(0);
    const auto res = run_sweep(desk_plan(), dev, clk);
    CHECK(res.stitched.gaps == std::vector<std::uint32_t>{2});
    CHECK(res.windows[2].failed);
    CHECK(res.windows[2].error.find("synthesizer unlocked") != std::string::npos);
    CHECK(res.events.size() == 1);
    CHECK(res.stitched.bin_count() == 6u * 8192u);
    for (double f : res.stitched.frequencies()) CHECK_FALSE((f >= 308e6 && f < 312e6));
    CHECK(res.complete());
}

TEST_CASE("all windows failing") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config(),
                    {302e6, 306e6, 310e6, 314e6, 318e6, 322e6, 326e6});
    SimClock clk(0);
    const auto res = run_sweep(desk_plan(), dev, clk);
    CHECK(res.stitched.gaps.size() == 7);
    CHECK(res.stitched.bin_count() == 0);
    CHECK(res.events.empty());
}

TEST_CASE("stop between windows") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config());
    SimClock clk(0);
    int polls = 0;
    SweepContext ctx;
    ctx.should_stop = [&] { return ++polls > 3; };
    const auto res = run_sweep(desk_plan(), dev, clk, ctx);
    CHECK(res.windows.size() == 3);
    CHECK_FALSE(res.complete());
    CHECK(res.stitched.bin_count() == 3u * 8192u);
}

TEST_CASE("timestamps never go backwards") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config());
    FrozenClock clk;
    run_sweep(desk_plan(), dev, clk);
    REQUIRE(dev.t0s.size() == 7);
    for (std::size_t i = 1; i < dev.t0s.size(); ++i) CHECK(dev.t0s[i] - dev.t0s[i - 1] == 10);
}

TEST_CASE("cumulative counter spans sweeps") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config());
    SimClock clk(0);
    std::uint64_t total = 0;
    SweepContext ctx;
    ctx.cumulative_samples = &total;
    run_sweep(desk_plan(), dev, clk, ctx);
    run_sweep(desk_plan(), dev, clk, ctx);
    CHECK(total == 2u * 7u * 40000u);
}

TEST_CASE("span follows the plan") {
    SceneDevice dev(tone_scene(315e6, 0.5, 39.98), desk_config());
    SimClock clk(0);
    SweepPlan p = desk_plan();
    p.span_hz = 2e6;
    p.step_hz = 2e6;
    run_sweep(p, dev, clk);
    CHECK(dev.config().span_hz == 2e6);
}
