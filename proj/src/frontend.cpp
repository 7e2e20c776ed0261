#include "pdscan/frontend.hpp"

#include "json_util.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace pdscan::frontend {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Envelope volts -> watts into 50 ohm.
constexpr double kWattsPerVoltSq = 1.0 / (2.0 * dsp::kLoadOhms);
// A pulse's spectrum is treated as negligible beyond this many bandwidths.
constexpr double kPulseSupportWidths = 100.0;
// Pulse tails are synthesized for this many decay constants.
constexpr double kPulseTailDecays = 10.0;
constexpr double kBurstSupportFactor = 10.0;

double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

double dbm_to_watts(double dbm) { return std::pow(10.0, dbm / 10.0) * 1e-3; }

double watts_to_dbm(double w) { return w > 0.0 ? 10.0 * std::log10(w / 1e-3) : dsp::kNegInf; }

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

void check_frequency(double f, const char* what) {
    require(std::isfinite(f) && f > 0.0 && f <= kMaxFrequencyHz,
            std::string(what) + " must be in (0, 3e9] Hz, got " + std::to_string(f));
}

// Brick-wall filter: zero every FFT bin outside |f| <= span/2.
void band_limit(std::vector<cf64>& buf, double iq_rate_hz, double span_hz) {
    const std::size_t m = buf.size();
    const auto& plan = dsp::cached_plan(m);
    plan.forward(buf);
    const double df = iq_rate_hz / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto signed_k = k < m / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(m);
        if (std::abs(signed_k * df) > span_hz / 2.0) buf[k] = 0.0;
    }
    plan.inverse(buf);
    const double scale = 1.0 / static_cast<double>(m);
    for (auto& v : buf) v *= scale;
}

}  // namespace

double PdPulseTrain::decay_s() const noexcept { return 1.0 / (std::numbers::pi * bandwidth_hz); }

double AntennaModel::gain_at(double freq_hz) const noexcept {
    if (kind == Kind::Flat) return 1.0;
    const double x = (freq_hz - center_hz) / (bandwidth_hz / 2.0);
    return 1.0 / std::sqrt(1.0 + x * x * x * x);
}

void FrontEndConfig::validate() const {
    require(std::isfinite(iq_rate_hz) && iq_rate_hz > 0.0, "iq_rate must be positive");
    require(std::isfinite(span_hz) && span_hz > 0.0, "span must be positive");
    require(span_hz <= iq_rate_hz, "span must not exceed iq_rate for complex baseband");
    require(adc_bits >= 8 && adc_bits <= 16, "adc_bits must be in [8, 16]");
    require(std::isfinite(full_scale_v) && full_scale_v > 0.0, "full_scale must be positive");
    require(cal_constant_micro > 0, "cal_constant must be positive");
    if (antenna.kind == AntennaModel::Kind::Bandpass) {
        require(antenna.bandwidth_hz > 0.0 && antenna.center_hz > 0.0, "bandpass antenna needs center and bandwidth");
    }
}

void validate(const Emitter& emitter) {
    std::visit(
        [](const auto& e) {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, CwTone>) {
                check_frequency(e.freq_hz, "cw freq");
                require(e.amplitude_v > 0.0 && std::isfinite(e.amplitude_v), "cw amplitude must be > 0");
                require(std::isfinite(e.phase_rad), "cw phase must be finite");
            } else if constexpr (std::is_same_v<T, PdPulseTrain>) {
                check_frequency(e.center_freq_hz, "pd center_freq");
                require(e.bandwidth_hz > 0.0, "pd bandwidth must be > 0");
                require(e.rate_hz > 0.0 && std::isfinite(e.rate_hz), "pd repetition must be > 0");
                require(e.pulse_peak_v > 0.0, "pd pulse_peak must be > 0");
            } else {
                check_frequency(e.center_freq_hz, "burst center_freq");
                require(e.duty_cycle > 0.0 && e.duty_cycle <= 1.0, "burst duty_cycle must be in (0, 1]");
                require(e.burst_len_s > 0.0, "burst_len must be > 0");
                require(std::isfinite(e.power_dbm), "burst power must be finite");
            }
            require(e.attenuation_db >= 0.0 && std::isfinite(e.attenuation_db), "attenuation must be >= 0 dB");
        },
        emitter);
}

void validate(const EmitterScene& scene) {
    require(!std::isnan(scene.noise_density_dbm_hz) && scene.noise_density_dbm_hz != std::numeric_limits<double>::infinity(),
            "noise_density must be finite or -inf");
    for (const auto& e : scene.emitters) validate(e);
}

double emitter_frequency(const Emitter& emitter) noexcept {
    return std::visit(
        [](const auto& e) {
            if constexpr (std::is_same_v<std::decay_t<decltype(e)>, CwTone>) {
                return e.freq_hz;
            } else {
                return e.center_freq_hz;
            }
        },
        emitter);
}

double scene_power_at(const EmitterScene& scene, double freq_hz, double resolution_hz) {
    double best = dsp::kNegInf;
    for (const auto& emitter : scene.emitters) {
        double tolerance = resolution_hz;
        double dbm = dsp::kNegInf;
        if (const auto* cw = std::get_if<CwTone>(&emitter)) {
            dbm = watts_to_dbm(cw->amplitude_v * cw->amplitude_v * kWattsPerVoltSq) - cw->attenuation_db;
        } else if (const auto* pd = std::get_if<PdPulseTrain>(&emitter)) {
            tolerance = std::max(resolution_hz, pd->bandwidth_hz / 2.0);
            dbm = watts_to_dbm(pd->pulse_peak_v * pd->pulse_peak_v * kWattsPerVoltSq) - pd->attenuation_db;
        } else {
            const auto& b = std::get<Burst>(emitter);
            dbm = b.power_dbm - b.attenuation_db;
        }
        if (std::abs(emitter_frequency(emitter) - freq_hz) <= tolerance) best = std::max(best, dbm);
    }
    return best;
}

// --- scene files ------------------------------------------------------------

EmitterScene scene_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_or;
    using detail::require;
    check_keys(j, {"emitters", "noise_density_dbm_hz", "seed"}, "scene");
    EmitterScene scene;
    scene.noise_density_dbm_hz = detail::get_db(j, "noise_density_dbm_hz", -174.0);
    scene.seed = get_or<std::uint64_t>(j, "seed", 0);
    if (j.contains("emitters")) {
        for (const auto& e : j.at("emitters")) {
            const auto type = require<std::string>(e, "type", "emitter");
            if (type == "cw") {
                check_keys(e, {"type", "freq_hz", "amplitude_v", "phase_rad", "attenuation_db"}, "cw emitter");
                scene.emitters.emplace_back(CwTone{require<double>(e, "freq_hz", "cw"),
                                                   require<double>(e, "amplitude_v", "cw"),
                                                   get_or<double>(e, "phase_rad", 0.0),
                                                   get_or<double>(e, "attenuation_db", 0.0)});
            } else if (type == "pd_pulse_train") {
                check_keys(e,
                           {"type", "center_freq_hz", "bandwidth_hz", "rate_hz", "repetition", "pulse_peak_v",
                            "attenuation_db"},
                           "pd_pulse_train emitter");
                const auto rep = get_or<std::string>(e, "repetition", "poisson");
                if (rep != "poisson" && rep != "fixed") {
                    throw ConfigError("repetition must be 'poisson' or 'fixed'");
                }
                scene.emitters.emplace_back(PdPulseTrain{
                    require<double>(e, "center_freq_hz", "pd"), require<double>(e, "bandwidth_hz", "pd"),
                    require<double>(e, "rate_hz", "pd"),
                    rep == "poisson" ? Repetition::Poisson : Repetition::FixedPeriod,
                    require<double>(e, "pulse_peak_v", "pd"), get_or<double>(e, "attenuation_db", 0.0)});
            } else if (type == "burst") {
                check_keys(e, {"type", "center_freq_hz", "duty_cycle", "burst_len_s", "power_dbm", "attenuation_db"},
                           "burst emitter");
                scene.emitters.emplace_back(Burst{require<double>(e, "center_freq_hz", "burst"),
                                                  get_or<double>(e, "duty_cycle", 1.0),
                                                  require<double>(e, "burst_len_s", "burst"),
                                                  require<double>(e, "power_dbm", "burst"),
                                                  get_or<double>(e, "attenuation_db", 0.0)});
            } else {
                throw ConfigError("unknown emitter type '" + type + "'");
            }
        }
    }
    validate(scene);
    return scene;
}

nlohmann::json scene_to_json(const EmitterScene& scene) {
    nlohmann::json emitters = nlohmann::json::array();
    for (const auto& emitter : scene.emitters) {
        if (const auto* cw = std::get_if<CwTone>(&emitter)) {
            emitters.push_back({{"type", "cw"},
                                {"freq_hz", cw->freq_hz},
                                {"amplitude_v", cw->amplitude_v},
                                {"phase_rad", cw->phase_rad},
                                {"attenuation_db", cw->attenuation_db}});
        } else if (const auto* pd = std::get_if<PdPulseTrain>(&emitter)) {
            emitters.push_back({{"type", "pd_pulse_train"},
                                {"center_freq_hz", pd->center_freq_hz},
                                {"bandwidth_hz", pd->bandwidth_hz},
                                {"rate_hz", pd->rate_hz},
                                {"repetition", pd->repetition == Repetition::Poisson ? "poisson" : "fixed"},
                                {"pulse_peak_v", pd->pulse_peak_v},
                                {"attenuation_db", pd->attenuation_db}});
        } else {
            const auto& b = std::get<Burst>(emitter);
            emitters.push_back({{"type", "burst"},
                                {"center_freq_hz", b.center_freq_hz},
                                {"duty_cycle", b.duty_cycle},
                                {"burst_len_s", b.burst_len_s},
                                {"power_dbm", b.power_dbm},
                                {"attenuation_db", b.attenuation_db}});
        }
    }
    return {{"emitters", emitters},
            {"noise_density_dbm_hz", detail::db_to_json(scene.noise_density_dbm_hz)},
            {"seed", scene.seed}};
}

EmitterScene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open scene file", path.string());
    try {
        return scene_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("scene " + path.string() + ": " + e.what());
    }
}

FrontEndConfig frontend_from_json(const nlohmann::json& j) {
    using detail::get_or;
    detail::check_keys(j, {"iq_rate_hz", "span_hz", "adc_bits", "full_scale_v", "cal_constant", "antenna"}, "frontend");
    FrontEndConfig cfg;
    cfg.iq_rate_hz = get_or<double>(j, "iq_rate_hz", cfg.iq_rate_hz);
    cfg.span_hz = get_or<double>(j, "span_hz", cfg.span_hz);
    cfg.adc_bits = get_or<int>(j, "adc_bits", cfg.adc_bits);
    cfg.full_scale_v = get_or<double>(j, "full_scale_v", cfg.full_scale_v);
    const double cal = get_or<double>(j, "cal_constant", static_cast<double>(cfg.cal_constant_micro) * 1e-6);
    if (!(cal > 0.0)) throw ConfigError("cal_constant must be positive");
    cfg.cal_constant_micro = static_cast<std::uint64_t>(std::llround(cal * 1e6));
    if (j.contains("antenna")) {
        const auto& a = j.at("antenna");
        detail::check_keys(a, {"model", "center_hz", "bandwidth_hz"}, "antenna");
        const auto model = get_or<std::string>(a, "model", "flat");
        if (model == "bandpass") {
            cfg.antenna = {AntennaModel::Kind::Bandpass, detail::require<double>(a, "center_hz", "antenna"),
                           detail::require<double>(a, "bandwidth_hz", "antenna")};
        } else if (model != "flat") {
            throw ConfigError("antenna model must be 'flat' or 'bandpass'");
        }
    }
    cfg.validate();
    return cfg;
}

nlohmann::json frontend_to_json(const FrontEndConfig& cfg) {
    nlohmann::json antenna = {{"model", cfg.antenna.kind == AntennaModel::Kind::Flat ? "flat" : "bandpass"}};
    if (cfg.antenna.kind == AntennaModel::Kind::Bandpass) {
        antenna["center_hz"] = cfg.antenna.center_hz;
        antenna["bandwidth_hz"] = cfg.antenna.bandwidth_hz;
    }
    return {{"iq_rate_hz", cfg.iq_rate_hz},
            {"span_hz", cfg.span_hz},
            {"adc_bits", cfg.adc_bits},
            {"full_scale_v", cfg.full_scale_v},
            {"cal_constant", static_cast<double>(cfg.cal_constant_micro) * 1e-6},
            {"antenna", antenna}};
}

// --- simulator ----------------------------------------------------------------

SimulatedFrontEnd::SimulatedFrontEnd(EmitterScene scene, FrontEndConfig config)
    : scene_(std::move(scene)), config_(config), rng_(scene_.seed) {
    config_.validate();
    validate(scene_);
}

void SimulatedFrontEnd::tune(double center_freq_hz) {
    if (!(center_freq_hz > 0.0) || !(center_freq_hz <= kMaxFrequencyHz)) {
        throw TuneError("center frequency out of range (0, 3e9] Hz: " + std::to_string(center_freq_hz));
    }
    center_ = center_freq_hz;
}

void SimulatedFrontEnd::set_span(double span_hz) {
    FrontEndConfig next = config_;
    next.span_hz = span_hz;
    next.validate();
    config_ = next;
}

bool SimulatedFrontEnd::in_band(double lo_hz, double hi_hz) const noexcept {
    const double c = *center_;
    return hi_hz >= c - config_.span_hz / 2.0 && lo_hz <= c + config_.span_hz / 2.0;
}

std::vector<cf64> SimulatedFrontEnd::acquire_volts(double dwell_s, std::int64_t t0_unix_ms) {
    if (!center_) throw StateError("acquire called on an untuned device");
    if (!(dwell_s > 0.0)) throw ArgumentError("dwell must be positive");
    const auto n = static_cast<std::size_t>(std::floor(dwell_s * config_.iq_rate_hz + 1e-9));
    if (n == 0) throw ArgumentError("dwell shorter than one sample");

    std::vector<cf64> out(n, cf64{0.0, 0.0});
    stats_ = {n, 0};
    const double t_start = static_cast<double>(t0_unix_ms) * 1e-3;
    for (std::size_t idx = 0; idx < scene_.emitters.size(); ++idx) {
        const auto& emitter = scene_.emitters[idx];
        if (const auto* cw = std::get_if<CwTone>(&emitter)) {
            add_tone(*cw, out);
        } else if (const auto* pd = std::get_if<PdPulseTrain>(&emitter)) {
            add_pulse_train(*pd, t_start, out);
        } else {
            add_burst(std::get<Burst>(emitter), idx, t_start, out);
        }
    }
    add_noise(out);
    return out;
}

void SimulatedFrontEnd::add_tone(const CwTone& tone, std::span<cf64> out) const {
    if (!in_band(tone.freq_hz, tone.freq_hz)) return;
    const double amp = tone.amplitude_v * db_to_amplitude(-tone.attenuation_db) * config_.antenna.gain_at(tone.freq_hz);
    const double cycles_per_sample = (tone.freq_hz - *center_) / config_.iq_rate_hz;
    for (std::size_t i = 0; i < out.size(); ++i) {
        // keep the phase argument reduced so long frames stay exact
        const double frac = std::fmod(cycles_per_sample * static_cast<double>(i), 1.0);
        out[i] += std::polar(amp, tone.phase_rad + kTwoPi * frac);
    }
}

void SimulatedFrontEnd::add_pulse_train(const PdPulseTrain& train, double t_start, std::span<cf64> out) {
    const double fs = config_.iq_rate_hz;
    const double tau = train.decay_s();
    const double dwell = static_cast<double>(out.size()) / fs;
    const double lookback = kPulseTailDecays * tau;

    // Arrival times relative to the frame start, including pulses whose tails
    // reach into the frame.
    std::vector<double> arrivals;
    if (train.repetition == Repetition::Poisson) {
        std::exponential_distribution<double> gap(train.rate_hz);
        for (double t = -lookback + gap(rng_); t < dwell; t += gap(rng_)) arrivals.push_back(t);
    } else {
        const double period = 1.0 / train.rate_hz;
        const double phase = std::fmod(t_start, period);
        for (double t = -phase - std::ceil(lookback / period) * period; t < dwell; t += period) {
            if (t >= -lookback) arrivals.push_back(t);
        }
    }
    stats_.pulses_in_frame +=
        static_cast<std::size_t>(std::count_if(arrivals.begin(), arrivals.end(), [](double t) { return t >= 0.0; }));

    const double support = kPulseSupportWidths * train.bandwidth_hz;
    if (arrivals.empty() || !in_band(train.center_freq_hz - support, train.center_freq_hz + support)) return;

    // Closed-form spectrum of each pulse on an FFT grid long enough that the
    // circular wrap of pre-frame starts and post-frame tails stays in padding.
    const auto tail = static_cast<std::size_t>(std::ceil(lookback * fs));
    const std::size_t m = dsp::next_power_of_two(out.size() + 2 * tail);
    const double df = fs / static_cast<double>(m);
    const double offset = train.center_freq_hz - *center_;
    const cf64 peak{0.0, -train.pulse_peak_v * db_to_amplitude(-train.attenuation_db)};

    std::vector<cf64> spec(m, cf64{0.0, 0.0});
    const auto half_bins = static_cast<std::ptrdiff_t>(std::floor(config_.span_hz / 2.0 / df));
    const auto first = std::max<std::ptrdiff_t>(-static_cast<std::ptrdiff_t>(m / 2), -half_bins);
    const auto last = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(m / 2) - 1, half_bins);
    for (double tk : arrivals) {
        const double f0 = static_cast<double>(first) * df;
        cf64 rot = std::polar(1.0, -kTwoPi * f0 * tk);
        const cf64 step = std::polar(1.0, -kTwoPi * df * tk);
        for (std::ptrdiff_t k = first; k <= last; ++k) {
            const double f = static_cast<double>(k) * df;
            const cf64 lorentz = 1.0 / cf64{1.0 / tau, kTwoPi * (f - offset)};
            const std::size_t slot = k < 0 ? static_cast<std::size_t>(k + static_cast<std::ptrdiff_t>(m))
                                           : static_cast<std::size_t>(k);
            spec[slot] += fs * peak * rot * lorentz;
            rot *= step;
        }
    }
    if (config_.antenna.kind != AntennaModel::Kind::Flat) {
        for (std::ptrdiff_t k = first; k <= last; ++k) {
            const std::size_t slot = k < 0 ? static_cast<std::size_t>(k + static_cast<std::ptrdiff_t>(m))
                                           : static_cast<std::size_t>(k);
            spec[slot] *= config_.antenna.gain_at(*center_ + static_cast<double>(k) * df);
        }
    }
    dsp::cached_plan(m).inverse(spec);
    const double scale = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += spec[i] * scale;
}

void SimulatedFrontEnd::add_burst(const Burst& burst, std::size_t emitter_index, double t_start,
                                  std::span<cf64> out) {
    const double fs = config_.iq_rate_hz;
    const double offset = burst.center_freq_hz - *center_;
    const double support = kBurstSupportFactor / burst.burst_len_s;
    if (!in_band(burst.center_freq_hz - support, burst.center_freq_hz + support) || std::abs(offset) >= fs / 2.0) {
        return;
    }
    const double period = burst.burst_len_s / burst.duty_cycle;
    const double phase = unit_double(derive_seed(scene_.seed, emitter_index)) * period;
    const double watts = dbm_to_watts(burst.power_dbm - burst.attenuation_db);
    const double amp = std::sqrt(watts / kWattsPerVoltSq) * config_.antenna.gain_at(burst.center_freq_hz);
    const double dwell = static_cast<double>(out.size()) / fs;
    const double cycles_per_sample = offset / fs;

    std::vector<cf64> buf(dsp::next_power_of_two(out.size()), cf64{0.0, 0.0});
    std::uniform_real_distribution<double> carrier_phase(0.0, kTwoPi);
    // Absolute burst k occupies [k*period + phase, k*period + phase + len).
    const double abs_first = std::floor((t_start - phase - burst.burst_len_s) / period);
    for (double k = abs_first;; k += 1.0) {
        const double on = k * period + phase - t_start;
        if (on >= dwell) break;
        const double off = on + burst.burst_len_s;
        if (off <= 0.0) continue;
        const auto i0 = static_cast<std::size_t>(std::max(0.0, std::ceil(on * fs)));
        const auto i1 = std::min(out.size(), static_cast<std::size_t>(std::max(0.0, std::ceil(off * fs))));
        const double theta = carrier_phase(rng_);
        for (std::size_t i = i0; i < i1; ++i) {
            const double frac = std::fmod(cycles_per_sample * static_cast<double>(i), 1.0);
            buf[i] = std::polar(amp, theta + kTwoPi * frac);
        }
    }
    band_limit(buf, fs, config_.span_hz);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += buf[i];
}

void SimulatedFrontEnd::add_noise(std::span<cf64> out) {
    if (std::isinf(scene_.noise_density_dbm_hz)) return;
    // E|z|^2 / (2R) = N0 * span
    const double variance = dbm_to_watts(scene_.noise_density_dbm_hz) * config_.span_hz / kWattsPerVoltSq;
    std::normal_distribution<double> gauss(0.0, std::sqrt(variance / 2.0));
    for (auto& z : out) z += cf64{gauss(rng_), gauss(rng_)};
}

dsp::IqFrame SimulatedFrontEnd::quantize(std::span<const cf64> volts, std::int64_t t0_unix_ms) const {
    if (!center_) throw StateError("quantize called on an untuned device");
    dsp::IqFrame frame;
    frame.center_freq_hz = *center_;
    frame.span_hz = config_.span_hz;
    frame.iq_rate_hz = config_.iq_rate_hz;
    frame.t0_unix_ms = t0_unix_ms;
    frame.adc_bits = static_cast<std::uint8_t>(config_.adc_bits);
    frame.full_scale_uv = static_cast<std::uint64_t>(std::llround(config_.full_scale_v * 1e6));
    frame.cal_constant_micro = config_.cal_constant_micro;

    const double counts_per_volt = 1.0 / frame.volts_per_count();
    const double top = std::ldexp(1.0, config_.adc_bits - 1);
    auto to_adc = [&](double v) {
        const double c = std::clamp(std::nearbyint(v * counts_per_volt), -top, top - 1.0);
        return static_cast<std::int16_t>(c);
    };
    frame.samples.resize(volts.size());
    for (std::size_t i = 0; i < volts.size(); ++i) {
        frame.samples[i] = {to_adc(volts[i].real()), to_adc(volts[i].imag())};
    }
    return frame;
}

dsp::IqFrame SimulatedFrontEnd::acquire(double dwell_s, std::int64_t t0_unix_ms) {
    const auto volts = acquire_volts(dwell_s, t0_unix_ms);
    return quantize(volts, t0_unix_ms);
}

}  // namespace pdscan::frontend
