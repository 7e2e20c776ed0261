#include "pdscan/monitor.hpp"

#include "json_util.hpp"
#include "pdscan/bounded_queue.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/timeutil.hpp"

#include <chrono>
#include <cmath>
#include <thread>

namespace pdscan::monitor {

nlohmann::json to_json(const SweepIndexRecord& r) {
    return {{"sweep_id", r.sweep_id},
            {"t_start", format_iso_ms(r.t_start_ms)},
            {"t_end", format_iso_ms(r.t_end_ms)},
            {"spectrum_path", r.spectrum_path},
            {"complete", r.complete},
            {"gaps", r.gaps},
            {"bins", r.bins},
            {"events", r.events}};
}

SweepIndexRecord sweep_record_from_json(const nlohmann::json& j) {
    SweepIndexRecord r;
    r.sweep_id = j.at("sweep_id").get<std::string>();
    r.t_start_ms = parse_time_ms(j.at("t_start").get<std::string>());
    r.t_end_ms = parse_time_ms(j.at("t_end").get<std::string>());
    r.spectrum_path = j.at("spectrum_path").get<std::string>();
    r.complete = j.at("complete").get<bool>();
    r.gaps = j.at("gaps").get<std::vector<std::uint32_t>>();
    r.bins = j.at("bins").get<std::size_t>();
    r.events = j.at("events").get<std::size_t>();
    return r;
}

SweepIndexChunk read_sweep_index(const fs::path& path, std::uint64_t offset) {
    auto lines = codec::read_complete_lines(path, offset);
    SweepIndexChunk chunk;
    chunk.next_offset = lines.next_offset;
    for (const auto& line : lines.lines) {
        try {
            chunk.records.push_back(sweep_record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception&) {
            ++chunk.malformed;
        }
    }
    return chunk;
}

// --- store ----------------------------------------------------------------------

ArtifactStore::ArtifactStore(fs::path data_dir, std::uint64_t max_bytes)
    : data_dir_(std::move(data_dir)), max_bytes_(max_bytes), events_(data_dir_ / "events.jsonl") {
    fs::create_directories(stitched_dir());
    codec::repair_torn_tail(events_index());
    codec::repair_torn_tail(sweeps_index());
}

ArtifactStore::Persisted ArtifactStore::persist(const sweep::SweepResult& result) {
    Persisted out;
    std::vector<codec::EventIndexRecord> index;
    for (std::size_t i = 0; i < result.events.size(); ++i) {
        const auto& ev = result.events[i];
        const auto iq_name = fs::path(ev.artifacts.iq_path).filename();
        const auto spec_name = fs::path(ev.artifacts.spectrum_path).filename();
        out.bytes += codec::write_iqf(result.retained_frames.at(i), data_dir_ / iq_name);
        codec::write_spectrum_csv(result.event_spectra.at(i), data_dir_ / spec_name);
        out.bytes += fs::file_size(data_dir_ / spec_name);
        ++out.frames;
        auto rec = codec::EventIndexRecord::from_event(ev);
        rec.iq_path = iq_name.string();
        rec.spectrum_path = spec_name.string();
        index.push_back(std::move(rec));
    }

    SweepIndexRecord sweep_rec;
    sweep_rec.sweep_id = result.sweep_id;
    sweep_rec.t_start_ms = result.stitched.t_start_ms;
    sweep_rec.t_end_ms = result.stitched.t_end_ms;
    sweep_rec.complete = result.stitched.complete;
    sweep_rec.gaps = result.stitched.gaps;
    sweep_rec.bins = result.stitched.bin_count();
    sweep_rec.events = result.events.size();
    if (sweep_rec.bins > 0) {
        const fs::path rel = fs::path("stitched") /
                             ("sweep_" + format_compact_ms(result.stitched.t_start_ms) + "_" + result.sweep_id + ".csv");
        codec::write_spectrum_csv(result.stitched, data_dir_ / rel);
        out.bytes += fs::file_size(data_dir_ / rel);
        out.stitched = data_dir_ / rel;
        sweep_rec.spectrum_path = rel.generic_string();
    }

    for (const auto& rec : index) events_.append(rec);
    {
        std::lock_guard lock(sweeps_mutex_);
        codec::LineAppender(sweeps_index()).append(to_json(sweep_rec).dump());
    }
    return out;
}

std::uint64_t ArtifactStore::used_bytes() const {
    std::uint64_t total = 0;
    std::error_code ec;
    for (fs::recursive_directory_iterator it(data_dir_, ec), end; !ec && it != end; it.increment(ec)) {
        std::error_code size_ec;
        if (it->is_regular_file(size_ec)) {
            const auto n = it->file_size(size_ec);
            if (!size_ec) total += n;
        }
    }
    return total;
}

bool ArtifactStore::full() const {
    const auto limit = max_bytes_.load();
    return limit > 0 && used_bytes() >= limit;
}

// --- monitor --------------------------------------------------------------------

std::string_view to_string(RunState s) {
    switch (s) {
        case RunState::Idle: return "idle";
        case RunState::Running: return "running";
        case RunState::Stopped: return "stopped";
        case RunState::Alarm: return "alarm";
        case RunState::Finished: return "finished";
    }
    return "unknown";
}

Monitor::Monitor(sweep::SweepPlan plan, frontend::Device& device, sweep::Clock& clock, ArtifactStore& store,
                 MonitorOptions options)
    : device_(device), clock_(clock), store_(store), options_(options), active_(plan) {
    validate_for_device(active_);
    stopped_ = options_.start_stopped;
}

Monitor::~Monitor() = default;

void Monitor::validate_for_device(const sweep::SweepPlan& plan) const {
    plan.validate();
    const auto& cfg = device_.config();
    if (plan.span_hz > cfg.iq_rate_hz) {
        throw ConfigError("plan span exceeds the device iq_rate");
    }
    const auto samples = static_cast<std::size_t>(std::floor(plan.dwell_s * cfg.iq_rate_hz + 1e-9));
    if (samples < plan.n_fft) {
        throw ConfigError("dwell yields " + std::to_string(samples) + " samples, fewer than n_fft " +
                          std::to_string(plan.n_fft));
    }
}

void Monitor::stop() {
    std::lock_guard lock(mutex_);
    stopped_ = true;
    wake_.notify_all();
}

void Monitor::start() {
    std::lock_guard lock(mutex_);
    stopped_ = false;
    wake_.notify_all();
}

void Monitor::terminate() {
    std::lock_guard lock(mutex_);
    terminated_ = true;
    stopped_ = true;
    wake_.notify_all();
}

void Monitor::set_plan(const sweep::SweepPlan& plan) {
    validate_for_device(plan);
    std::lock_guard lock(mutex_);
    pending_ = plan;
}

sweep::SweepPlan Monitor::patch_plan(const nlohmann::json& changes) {
    detail::check_keys(changes, {"threshold_dbm", "span_hz", "step_hz"}, "plan update");
    std::lock_guard lock(mutex_);
    sweep::SweepPlan next = pending_ ? *pending_ : active_;
    next.threshold_dbm = detail::get_or(changes, "threshold_dbm", next.threshold_dbm);
    next.span_hz = detail::get_or(changes, "span_hz", next.span_hz);
    next.step_hz = detail::get_or(changes, "step_hz", next.step_hz);
    validate_for_device(next);
    pending_ = next;
    wake_.notify_all();
    return next;
}

sweep::SweepPlan Monitor::active_plan() const {
    std::lock_guard lock(mutex_);
    return active_;
}

std::optional<sweep::SweepPlan> Monitor::pending_plan() const {
    std::lock_guard lock(mutex_);
    return pending_;
}

RunState Monitor::state() const {
    std::lock_guard lock(mutex_);
    return state_;
}

nlohmann::json Monitor::status() const {
    std::lock_guard lock(mutex_);
    return {{"state", std::string(to_string(state_))},
            {"plan", sweep::plan_to_json(active_)},
            {"pending", pending_ ? sweep::plan_to_json(*pending_) : nlohmann::json(nullptr)},
            {"sweeps_complete", summary_.sweeps_complete},
            {"sweeps_partial", summary_.sweeps_partial},
            {"events", summary_.events},
            {"frames_persisted", summary_.frames_persisted},
            {"alarm", alarm_.empty() ? nlohmann::json(nullptr) : nlohmann::json(alarm_)}};
}

void Monitor::set_state(RunState s) {
    std::lock_guard lock(mutex_);
    state_ = s;
}

bool Monitor::wait_for(double seconds) {
    if (!(seconds > 0)) return true;
    std::unique_lock lock(mutex_);
    return !wake_.wait_for(lock, std::chrono::duration<double>(seconds), [&] { return terminated_ || stopped_; });
}

void Monitor::log(const std::string& line) {
    if (log_) log_(line);
}

MonitorSummary Monitor::run() {
    BoundedQueue<sweep::SweepResult> queue(options_.queue_capacity);
    std::thread writer([&] {
        while (auto item = queue.pop()) {
            try {
                const auto persisted = store_.persist(*item);
                {
                    std::lock_guard lock(mutex_);
                    summary_.frames_persisted += persisted.frames;
                    summary_.bytes_written += persisted.bytes;
                }
                if (persisted_hook_) persisted_hook_(*item, persisted);
            } catch (const std::exception& e) {
                {
                    std::lock_guard lock(mutex_);
                    ++summary_.persist_errors;
                }
                log(std::string("persist failed for sweep ") + item->sweep_id + ": " + e.what());
            }
        }
    });
    struct Joiner {
        BoundedQueue<sweep::SweepResult>& q;
        std::thread& t;
        ~Joiner() {
            q.close();
            if (t.joinable()) t.join();
        }
    } joiner{queue, writer};

    sweep::SweepContext ctx;
    ctx.data_dir = store_.data_dir();
    ctx.ids = &ids_;
    ctx.cumulative_samples = &cumulative_samples_;
    ctx.should_stop = [this] {
        std::lock_guard lock(mutex_);
        return stopped_ || terminated_;
    };
    ctx.on_window = [this](const sweep::WindowReport& r) { log(sweep::format_window_line(r)); };

    while (true) {
        sweep::SweepPlan plan;
        {
            std::unique_lock lock(mutex_);
            if (terminated_) break;
            if (options_.iterations && summary_.sweeps_complete >= *options_.iterations) break;
            if (stopped_) {
                state_ = RunState::Stopped;
                wake_.wait(lock, [&] { return terminated_ || !stopped_; });
                continue;
            }
            if (pending_) {
                active_ = *pending_;
                pending_.reset();
            }
            plan = active_;
        }

        if (store_.full()) {
            bool raised = false;
            {
                std::lock_guard lock(mutex_);
                if (state_ != RunState::Alarm) {
                    state_ = RunState::Alarm;
                    alarm_ = "store full: " + std::to_string(store_.used_bytes()) + " of " +
                             std::to_string(store_.max_bytes()) + " bytes used";
                    raised = true;
                }
            }
            if (raised) {
                log("acquisition paused, " + alarm_);
                if (alarm_hook_) alarm_hook_(alarm_);
            }
            wait_for(options_.alarm_poll_s);
            continue;
        }
        {
            std::lock_guard lock(mutex_);
            if (state_ == RunState::Alarm) {
                alarm_.clear();
            }
            state_ = RunState::Running;
        }

        sweep::SweepResult result = sweep::run_sweep(plan, device_, clock_, ctx);
        if (result.windows.empty()) continue;

        {
            std::lock_guard lock(mutex_);
            if (result.complete()) {
                ++summary_.sweeps_complete;
            } else {
                ++summary_.sweeps_partial;
            }
            summary_.events += result.events.size();
        }
        char line[200];
        std::snprintf(line, sizeof line, "sweep %s %s: %zu windows, %zu events, %zu gaps, %.3f s",
                      result.sweep_id.c_str(), result.complete() ? "complete" : "partial", result.windows.size(),
                      result.events.size(), result.stitched.gaps.size(), result.duration_s);
        log(line);
        if (sweep_hook_) sweep_hook_(result);

        const bool complete = result.complete();
        const double remaining = plan.sweep_period_target_s - result.duration_s;
        queue.push(std::move(result));
        bool budget_spent = false;
        {
            std::lock_guard lock(mutex_);
            budget_spent = options_.iterations && summary_.sweeps_complete >= *options_.iterations;
        }
        if (options_.pace && complete && !budget_spent) wait_for(remaining);
    }

    queue.close();
    writer.join();
    std::lock_guard lock(mutex_);
    state_ = RunState::Finished;
    return summary_;
}

}  // namespace pdscan::monitor
