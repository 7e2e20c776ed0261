#include "pdscan/codec.hpp"
#include "pdscan/config.hpp"
#include "pdscan/control.hpp"
#include "pdscan/coverage.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/frontend.hpp"
#include "pdscan/monitor.hpp"
#include "pdscan/remote_service.hpp"
#include "pdscan/sweep.hpp"
#include "pdscan/sync_agent.hpp"
#include "pdscan/timeutil.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

using namespace pdscan;
namespace fs = std::filesystem;

namespace {

std::mutex out_mutex;

void say(const std::string& line) {
    std::lock_guard lock(out_mutex);
    std::fputs(line.c_str(), stdout);
    std::fputc('\n', stdout);
    std::fflush(stdout);
}

void warn(const std::string& line) {
    std::lock_guard lock(out_mutex);
    std::fprintf(stderr, "%s\n", line.c_str());
}

// SIGINT/SIGTERM are blocked in every thread and collected here.
class SignalWatch {
public:
    explicit SignalWatch(std::function<void()> on_signal) : on_signal_(std::move(on_signal)) {
        thread_ = std::thread([this] {
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            const timespec tick{0, 100'000'000};
            while (!done_) {
                if (sigtimedwait(&set, nullptr, &tick) > 0) {
                    fired_ = true;
                    on_signal_();
                    return;
                }
            }
        });
    }
    ~SignalWatch() {
        done_ = true;
        thread_.join();
    }
    bool fired() const { return fired_; }

    static void block() {
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);
    }

private:
    std::function<void()> on_signal_;
    std::atomic<bool> done_{false};
    std::atomic<bool> fired_{false};
    std::thread thread_;
};

void wait_for_signal() {
    std::atomic<bool> fired{false};
    SignalWatch watch([&] { fired = true; });
    while (!fired) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

struct Common {
    std::string config_file;
    std::optional<std::string> log_level;

    config::RunConfig load() const {
        auto cfg = config::load_run_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file),
                                           config::process_environment());
        if (log_level) cfg.log_level = config::parse_log_level(*log_level);
        return cfg;
    }
};

// --- scan -------------------------------------------------------------------

struct ScanArgs {
    std::optional<std::string> scene;
    std::optional<std::string> data_dir;
    std::optional<double> threshold;
    std::optional<std::string> control_bind;
    std::optional<std::string> token;
    std::optional<std::uint64_t> iterations;
    bool forever = false;
    bool no_pace = false;
};

int cmd_scan(const Common& common, const ScanArgs& a) {
    auto cfg = common.load();
    if (a.scene) cfg.scene_path = *a.scene;
    if (a.data_dir) cfg.data_dir = *a.data_dir;
    if (a.threshold) cfg.plan.threshold_dbm = *a.threshold;
    if (a.control_bind) cfg.control_bind = config::parse_bind(*a.control_bind);
    if (a.token) cfg.token = *a.token;
    cfg.validate();

    const auto scene = cfg.scene_path ? frontend::load_scene(*cfg.scene_path) : frontend::EmitterScene{};
    frontend::SimulatedFrontEnd device(scene, cfg.frontend);
    sweep::SystemClock clock;
    monitor::ArtifactStore store(cfg.data_dir, cfg.max_store_bytes);

    monitor::MonitorOptions opts;
    if (!a.forever) opts.iterations = a.iterations.value_or(1);
    opts.pace = !a.no_pace;
    monitor::Monitor mon(cfg.plan, device, clock, store, opts);

    const auto level = cfg.log_level;
    mon.on_log([level](const std::string& line) {
        if (level <= config::LogLevel::Info) say(line);
    });
    mon.on_alarm([](const std::string& msg) { warn("alarm: " + msg); });
    if (level == config::LogLevel::Debug) {
        mon.on_persisted([](const sweep::SweepResult& r, const monitor::ArtifactStore::Persisted& p) {
            say("persisted sweep " + r.stitched.sweep_id + ": " + std::to_string(p.frames) + " frames, " +
                std::to_string(p.bytes) + " bytes");
        });
    }

    std::unique_ptr<monitor::ControlServer> control;
    if (cfg.control_bind) {
        control = std::make_unique<monitor::ControlServer>(mon, cfg.control_bind->host, cfg.control_bind->port, cfg.token);
        control->start();
        if (level <= config::LogLevel::Info) {
            say("control endpoint on http://" + cfg.control_bind->host + ":" + std::to_string(control->port()));
        }
    }

    SignalWatch watch([&] { mon.terminate(); });
    const auto summary = mon.run();
    if (control) control->stop();
    if (level <= config::LogLevel::Warn) {
        say("scan finished: " + std::to_string(summary.sweeps_complete) + " complete, " +
            std::to_string(summary.sweeps_partial) + " partial, " + std::to_string(summary.events) + " events, " +
            std::to_string(summary.frames_persisted) + " frames persisted");
    }
    if (summary.persist_errors > 0) {
        warn("error: " + std::to_string(summary.persist_errors) + " sweeps failed to persist");
        return 1;
    }
    return 0;
}

// --- decode -----------------------------------------------------------------

int cmd_decode(const std::string& in, const std::string& out) {
    if (!fs::is_directory(in)) throw ConfigError("input directory not found: " + in);
    const auto entries = codec::batch_decode(in, out);
    std::size_t failed = 0;
    for (const auto& e : entries) {
        if (e.ok) {
            say("ok     " + e.input.string() + " -> " + e.output.string());
        } else {
            say("failed " + e.input.string() + ": " + e.error);
            ++failed;
        }
    }
    say(std::to_string(entries.size() - failed) + " decoded, " + std::to_string(failed) + " failed");
    return failed ? 1 : 0;
}

// --- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
    double rate = 100.0;
    double dwell = 0.010;
    std::uint32_t windows = 61;
    std::uint32_t sweeps = 1;
    std::uint32_t max_sweeps = 10;
    double overhead = 0.0;
    double p_single = 1.0;
    double target_p = 0.99;
    std::string mode = "poisson";
    std::uint64_t trials = 20000;
    std::uint64_t seed = 1;
    bool csv = false;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

int cmd_analyze(const AnalyzeArgs& a) {
    coverage::DetectionModel model;
    if (a.mode == "poisson") {
        model.repetition = coverage::Repetition::Poisson;
    } else if (a.mode == "fixed") {
        model.repetition = coverage::Repetition::FixedPeriod;
    } else {
        throw ArgumentError("mode must be poisson or fixed");
    }
    model.pulse_rate_hz = a.rate;
    model.dwell_s = a.dwell;
    model.n_windows = a.windows;
    model.n_sweeps = a.sweeps;
    model.overhead_s = a.overhead;
    model.p_single = a.p_single;
    model.validate();
    if (a.max_sweeps == 0) throw ArgumentError("max-sweeps must be at least 1");
    if (!(a.target_p > 0.0 && a.target_p < 1.0)) throw ArgumentError("target-p must lie in (0, 1)");

    struct Row {
        std::string table;
        std::uint32_t m;
        double lambda;
        double p;
        coverage::McEstimate mc;
    };
    std::vector<Row> rows;
    for (std::uint32_t m = 1; m <= a.max_sweeps; ++m) {
        auto mm = model;
        mm.n_sweeps = m;
        rows.push_back({"sweeps", m, mm.pulse_rate_hz, coverage::p_detect_analytic(mm),
                        coverage::p_detect_monte_carlo(mm, a.trials, a.seed)});
    }
    for (double x : {0.01, 0.1, 1.0, 3.0, 10.0}) {
        auto mm = model;
        mm.pulse_rate_hz = x / model.dwell_s;
        rows.push_back({"rate", mm.n_sweeps, mm.pulse_rate_hz, coverage::p_detect_analytic(mm),
                        coverage::p_detect_monte_carlo(mm, a.trials, a.seed)});
    }
    std::optional<std::uint32_t> required;
    try {
        required = coverage::required_sweeps(model, a.target_p);
    } catch (const UnreachableError&) {
    }

    if (a.csv) {
        say("table,sweeps,lambda_hz,lambda_td,p_analytic,p_monte_carlo,std_error");
        for (const auto& r : rows) {
            say(r.table + "," + std::to_string(r.m) + "," + fmt("%.6g", r.lambda) + "," +
                fmt("%.6g", r.lambda * model.dwell_s) + "," + fmt("%.6f", r.p) + "," + fmt("%.6f", r.mc.estimate) + "," +
                fmt("%.6f", r.mc.std_error));
        }
        if (required) {
            say("required," + std::to_string(*required) + "," + fmt("%.6g", model.pulse_rate_hz) + "," +
                fmt("%.6g", model.pulse_rate_hz * model.dwell_s) + "," +
                fmt("%.6f", coverage::compound(coverage::p_per_sweep(model), *required)) + ",,");
        }
        return 0;
    }

    say("model: " + a.mode + ", rate " + fmt("%g", model.pulse_rate_hz) + " Hz, dwell " + fmt("%g", model.dwell_s) +
        " s, " + std::to_string(model.n_windows) + " windows, overhead " + fmt("%g", model.overhead_s) +
        " s, revisit " + fmt("%g", model.revisit_s()) + " s, p_single " + fmt("%g", model.p_single));
    say("");
    say("P(detect) vs sweeps");
    say("  sweeps  analytic  monte_carlo  std_error");
    for (const auto& r : rows) {
        if (r.table != "sweeps") continue;
        char buf[128];
        std::snprintf(buf, sizeof buf, "  %6u  %8.6f  %11.6f  %9.6f", r.m, r.p, r.mc.estimate, r.mc.std_error);
        say(buf);
    }
    say("");
    say("P(detect) vs rate, " + std::to_string(model.n_sweeps) + " sweep(s)");
    say("   lambda_hz  lambda_td  analytic  monte_carlo  std_error");
    for (const auto& r : rows) {
        if (r.table != "rate") continue;
        char buf[128];
        std::snprintf(buf, sizeof buf, "  %10.4g  %9.4g  %8.6f  %11.6f  %9.6f", r.lambda, r.lambda * model.dwell_s, r.p,
                      r.mc.estimate, r.mc.std_error);
        say(buf);
    }
    say("");
    if (required) {
        say("required sweeps for P >= " + fmt("%g", a.target_p) + ": " + std::to_string(*required) + " (" +
            fmt("%.3f", *required * model.revisit_s()) + " s)");
    } else {
        say("required sweeps for P >= " + fmt("%g", a.target_p) + ": unreachable (p per sweep is 0)");
    }
    return 0;
}

// --- serve ------------------------------------------------------------------

struct ServeArgs {
    std::optional<std::string> bind;
    std::optional<std::string> storage_dir;
    std::optional<std::string> token;
    std::optional<std::string> public_url;
};

int cmd_serve(const Common& common, const ServeArgs& a) {
    auto cfg = common.load();
    if (a.bind) cfg.serve_bind = config::parse_bind(*a.bind);
    if (a.storage_dir) cfg.storage_dir = *a.storage_dir;
    if (a.token) cfg.token = *a.token;
    cfg.validate();

    sync::ServiceConfig sc;
    sc.storage_dir = cfg.storage_dir;
    sc.host = cfg.serve_bind.host;
    sc.port = cfg.serve_bind.port;
    sc.token = cfg.token;
    if (a.public_url) sc.public_url = *a.public_url;
    sync::RemoteService service(sc);
    service.start();
    say("serving " + cfg.storage_dir.string() + " on " + service.url());
    wait_for_signal();
    service.stop();
    say("server stopped");
    return 0;
}

// --- sync -------------------------------------------------------------------

struct SyncArgs {
    std::optional<std::string> data_dir;
    std::optional<std::string> remote;
    std::optional<std::string> token;
    std::optional<std::size_t> parallelism;
    std::optional<std::string> health_bind;
    double poll_s = 0.25;
    bool once = false;
};

int cmd_sync(const Common& common, const SyncArgs& a) {
    auto cfg = common.load();
    if (a.data_dir) cfg.data_dir = *a.data_dir;
    if (a.remote) cfg.remote_url = *a.remote;
    if (a.token) cfg.token = *a.token;
    if (a.parallelism) cfg.sync_parallelism = *a.parallelism;
    cfg.validate();
    if (!(a.poll_s > 0.0)) throw ConfigError("poll interval must be positive");

    sync::AgentConfig ac;
    ac.data_dir = cfg.data_dir;
    ac.remote_url = cfg.remote_url;
    ac.token = cfg.token;
    ac.parallelism = cfg.sync_parallelism;
    ac.poll_interval_s = a.poll_s;
    sync::SyncAgent agent(ac);

    if (a.once) {
        agent.scan_once();
        agent.upload_once(true);
        const auto h = agent.health();
        say(h.dump());
        return agent.outstanding() == 0 && h.at("index").at("ok").get<bool>() ? 0 : 1;
    }

    httplib::Server health;
    std::thread health_thread;
    if (a.health_bind) {
        const auto bind = config::parse_bind(*a.health_bind);
        health.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
            res.set_content(agent.health().dump(), "application/json");
        });
        const int port = bind.port == 0 ? health.bind_to_any_port(bind.host) : bind.port;
        if (bind.port != 0 && !health.bind_to_port(bind.host, bind.port)) {
            throw IoError("cannot bind health endpoint", config::to_string(bind));
        }
        if (port < 0) throw IoError("cannot bind health endpoint", config::to_string(bind));
        health_thread = std::thread([&] { health.listen_after_bind(); });
        say("agent health on http://" + bind.host + ":" + std::to_string(port) + "/health");
    }

    agent.start();
    say("syncing " + cfg.data_dir.string() + " to " + cfg.remote_url);
    wait_for_signal();
    agent.stop();
    if (health_thread.joinable()) {
        health.stop();
        health_thread.join();
    }
    say("agent stopped, " + std::to_string(agent.outstanding()) + " records outstanding");
    return 0;
}

// --- simulate ---------------------------------------------------------------

struct SimulateArgs {
    std::optional<std::string> scene;
    std::string out;
    double center = 0.0;
    std::optional<double> dwell;
    std::optional<double> iq_rate;
    std::optional<double> span;
    std::uint32_t frames = 1;
    std::optional<std::int64_t> t0_ms;
};

int cmd_simulate(const Common& common, const SimulateArgs& a) {
    auto cfg = common.load();
    if (a.scene) cfg.scene_path = *a.scene;
    if (a.iq_rate) cfg.frontend.iq_rate_hz = *a.iq_rate;
    if (a.span) cfg.frontend.span_hz = *a.span;
    cfg.frontend.validate();
    if (cfg.scene_path && !fs::exists(*cfg.scene_path)) throw ConfigError("scene file not found: " + cfg.scene_path->string());
    const double dwell = a.dwell.value_or(cfg.plan.dwell_s);
    if (!(dwell > 0.0)) throw ConfigError("dwell must be positive");

    const auto scene = cfg.scene_path ? frontend::load_scene(*cfg.scene_path) : frontend::EmitterScene{};
    frontend::SimulatedFrontEnd device(scene, cfg.frontend);
    try {
        device.tune(a.center);
    } catch (const TuneError& e) {
        throw ConfigError(e.what());
    }
    fs::create_directories(a.out);
    std::int64_t t0 = a.t0_ms.value_or(now_unix_ms());
    for (std::uint32_t i = 0; i < a.frames; ++i) {
        const auto frame = device.acquire(dwell, t0);
        char name[96];
        std::snprintf(name, sizeof name, "sim_%lldkHz_%s.iqf", static_cast<long long>(std::llround(a.center / 1e3)),
                      format_compact_ms(t0).c_str());
        const auto path = fs::path(a.out) / name;
        const auto bytes = codec::write_iqf(frame, path);
        say(path.string() + " " + std::to_string(bytes) + " bytes");
        t0 += std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(dwell * 1e3)));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    SignalWatch::block();

    CLI::App app{"Swept-spectrum partial discharge scanner"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("-c,--config", common.config_file, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--log-level", common.log_level, "debug, info, warn or error");

    ScanArgs scan;
    auto* scan_cmd = app.add_subcommand("scan", "Sweep the band and record threshold crossings");
    scan_cmd->add_option("--scene", scan.scene, "Simulator scene JSON");
    scan_cmd->add_option("--data-dir", scan.data_dir, "Artifact directory");
    scan_cmd->add_option("--threshold", scan.threshold, "Detection threshold in dBm");
    auto* iter_opt = scan_cmd->add_option("-n,--iterations", scan.iterations, "Complete sweeps to run (default 1)");
    scan_cmd->add_flag("--forever", scan.forever, "Run until SIGINT/SIGTERM")->excludes(iter_opt);
    scan_cmd->add_option("--control-bind", scan.control_bind, "host:port for the control endpoint");
    scan_cmd->add_option("--token", scan.token, "Bearer token for the control endpoint");
    scan_cmd->add_flag("--no-pace", scan.no_pace, "Ignore sweep_period_target_s");

    std::string decode_in, decode_out;
    auto* decode_cmd = app.add_subcommand("decode", "Convert every .iqf in a directory to CSV");
    decode_cmd->add_option("--in", decode_in, "Input directory")->required();
    decode_cmd->add_option("--out", decode_out, "Output directory")->required();

    AnalyzeArgs analyze;
    auto* analyze_cmd = app.add_subcommand("analyze", "Detection probability of a sweeping receiver");
    analyze_cmd->add_option("--rate", analyze.rate, "Pulse rate in Hz")->capture_default_str();
    analyze_cmd->add_option("--dwell", analyze.dwell, "Dwell per window in s")->capture_default_str();
    analyze_cmd->add_option("--windows", analyze.windows, "Windows per sweep")->capture_default_str();
    analyze_cmd->add_option("--sweeps", analyze.sweeps, "Sweeps for the rate table")->capture_default_str();
    analyze_cmd->add_option("--max-sweeps", analyze.max_sweeps, "Rows of the sweeps table")->capture_default_str();
    analyze_cmd->add_option("--overhead", analyze.overhead, "Tuning overhead per window in s")->capture_default_str();
    analyze_cmd->add_option("--p-single", analyze.p_single, "Per-visit detection probability")->capture_default_str();
    analyze_cmd->add_option("--target-p", analyze.target_p, "Confidence target")->capture_default_str();
    analyze_cmd->add_option("--mode", analyze.mode, "poisson or fixed")->capture_default_str();
    analyze_cmd->add_option("--trials", analyze.trials, "Monte Carlo trials")->capture_default_str();
    analyze_cmd->add_option("--seed", analyze.seed, "Monte Carlo seed")->capture_default_str();
    analyze_cmd->add_flag("--csv", analyze.csv, "CSV output");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the remote artifact store");
    serve_cmd->add_option("--bind", serve.bind, "host:port (port 0 picks one)");
    serve_cmd->add_option("--storage-dir", serve.storage_dir, "Storage directory");
    serve_cmd->add_option("--token", serve.token, "Bearer token");
    serve_cmd->add_option("--public-url", serve.public_url, "Base URL used in notification links");

    SyncArgs sync_args;
    auto* sync_cmd = app.add_subcommand("sync", "Push new events to the remote store");
    sync_cmd->add_option("--data-dir", sync_args.data_dir, "Scanner artifact directory");
    sync_cmd->add_option("--remote", sync_args.remote, "Remote store URL");
    sync_cmd->add_option("--token", sync_args.token, "Bearer token");
    sync_cmd->add_option("--parallelism", sync_args.parallelism, "Concurrent uploads");
    sync_cmd->add_option("--poll", sync_args.poll_s, "Index poll interval in s")->capture_default_str();
    sync_cmd->add_option("--health-bind", sync_args.health_bind, "host:port for GET /health");
    sync_cmd->add_flag("--once", sync_args.once, "One scan and one upload pass, then exit");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Write simulated .iqf frames for a scene");
    sim_cmd->add_option("--scene", sim.scene, "Scene JSON");
    sim_cmd->add_option("--center", sim.center, "Center frequency in Hz")->required();
    sim_cmd->add_option("--out", sim.out, "Output directory")->required();
    sim_cmd->add_option("--dwell", sim.dwell, "Dwell in s");
    sim_cmd->add_option("--iq-rate", sim.iq_rate, "IQ rate in Hz");
    sim_cmd->add_option("--span", sim.span, "Span in Hz");
    sim_cmd->add_option("--frames", sim.frames, "Number of frames")->capture_default_str();
    sim_cmd->add_option("--t0-ms", sim.t0_ms, "Start time, unix ms");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*scan_cmd) return cmd_scan(common, scan);
        if (*decode_cmd) return cmd_decode(decode_in, decode_out);
        if (*analyze_cmd) return cmd_analyze(analyze);
        if (*serve_cmd) return cmd_serve(common, serve);
        if (*sync_cmd) return cmd_sync(common, sync_args);
        if (*sim_cmd) return cmd_simulate(common, sim);
    } catch (const ConfigError& e) {
        warn(std::string("config error: ") + e.what());
        return 2;
    } catch (const ArgumentError& e) {
        warn(std::string("invalid argument: ") + e.what());
        return 2;
    } catch (const std::exception& e) {
        warn(std::string("error: ") + e.what());
        return 1;
    }
    return 2;
}
