#pragma once

#include "pdscan/codec.hpp"
#include "pdscan/sweep.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>

namespace pdscan::monitor {

namespace fs = std::filesystem;

// One line of sweeps.jsonl.
struct SweepIndexRecord {
    std::string sweep_id;
    std::int64_t t_start_ms = 0;
    std::int64_t t_end_ms = 0;
    std::string spectrum_path;  // relative to data_dir, empty if no window succeeded
    bool complete = true;
    std::vector<std::uint32_t> gaps;
    std::size_t bins = 0;
    std::size_t events = 0;
};

nlohmann::json to_json(const SweepIndexRecord& r);
SweepIndexRecord sweep_record_from_json(const nlohmann::json& j);

struct SweepIndexChunk {
    std::vector<SweepIndexRecord> records;
    std::uint64_t next_offset = 0;
    std::size_t malformed = 0;
};

// Complete lines only, same rule as codec::read_index.
SweepIndexChunk read_sweep_index(const fs::path& path, std::uint64_t offset = 0);

// On-disk layout under data_dir:
//   pd_<time>_<kHz>kHz.iqf, pd_<time>_<kHz>kHz_spectrum.csv   event artifacts
//   stitched/sweep_<time>_<sweep_id>.csv                      full-band spectra
//   events.jsonl                                              event index (paths relative to data_dir)
//   sweeps.jsonl                                              one line per persisted sweep
class ArtifactStore {
public:
    // max_bytes = 0 disables the watermark.
    explicit ArtifactStore(fs::path data_dir, std::uint64_t max_bytes = 0);

    const fs::path& data_dir() const noexcept { return data_dir_; }
    fs::path events_index() const { return data_dir_ / "events.jsonl"; }
    fs::path sweeps_index() const { return data_dir_ / "sweeps.jsonl"; }
    fs::path stitched_dir() const { return data_dir_ / "stitched"; }

    struct Persisted {
        std::size_t frames = 0;
        std::uint64_t bytes = 0;
        std::optional<fs::path> stitched;
    };

    // Writes event frames and spectra, then the stitched spectrum, then the
    // index lines, so an index line never refers to a missing file.
    Persisted persist(const sweep::SweepResult& result);

    std::uint64_t used_bytes() const;
    std::uint64_t max_bytes() const noexcept { return max_bytes_; }
    void set_max_bytes(std::uint64_t v) noexcept { max_bytes_ = v; }
    bool full() const;

private:
    fs::path data_dir_;
    std::atomic<std::uint64_t> max_bytes_;
    codec::EventIndexWriter events_;
    std::mutex sweeps_mutex_;
};

enum class RunState { Idle, Running, Stopped, Alarm, Finished };
std::string_view to_string(RunState s);

struct MonitorOptions {
    std::optional<std::uint64_t> iterations;  // nullopt: until terminate()
    std::size_t queue_capacity = 4;           // sweeps awaiting persistence
    bool pace = true;                         // sleep out sweep_period_target
    double alarm_poll_s = 0.2;
    bool start_stopped = false;
};

struct MonitorSummary {
    std::uint64_t sweeps_complete = 0;
    std::uint64_t sweeps_partial = 0;
    std::uint64_t events = 0;
    std::uint64_t frames_persisted = 0;
    std::uint64_t bytes_written = 0;
    std::uint64_t persist_errors = 0;
};

// Runs sweeps back to back on one device and hands each result to a
// persistence thread through a bounded queue. When the queue is full the
// acquisition loop waits.
class Monitor {
public:
    Monitor(sweep::SweepPlan plan, frontend::Device& device, sweep::Clock& clock, ArtifactStore& store,
            MonitorOptions options = {});
    ~Monitor();
    Monitor(const Monitor&) = delete;
    Monitor& operator=(const Monitor&) = delete;

    // Blocks until the iteration budget is spent or terminate() is called.
    MonitorSummary run();

    // Stop scanning before the next window; the in-progress sweep is flushed
    // as a partial stitch. start() resumes with a fresh sweep.
    void stop();
    void start();
    // Ends run() (implies stop()).
    void terminate();

    // Takes effect at the next sweep boundary. Throws ConfigError.
    void set_plan(const sweep::SweepPlan& plan);
    // Merges threshold_dbm / span_hz / step_hz into the next plan. Throws ConfigError.
    sweep::SweepPlan patch_plan(const nlohmann::json& changes);
    sweep::SweepPlan active_plan() const;
    std::optional<sweep::SweepPlan> pending_plan() const;

    RunState state() const;
    nlohmann::json status() const;

    void on_log(std::function<void(const std::string&)> fn) { log_ = std::move(fn); }
    void on_sweep(std::function<void(const sweep::SweepResult&)> fn) { sweep_hook_ = std::move(fn); }
    void on_persisted(std::function<void(const sweep::SweepResult&, const ArtifactStore::Persisted&)> fn) {
        persisted_hook_ = std::move(fn);
    }
    void on_alarm(std::function<void(const std::string&)> fn) { alarm_hook_ = std::move(fn); }

private:
    void validate_for_device(const sweep::SweepPlan& plan) const;
    void set_state(RunState s);
    bool wait_for(double seconds);  // false if woken by a control change
    void log(const std::string& line);

    frontend::Device& device_;
    sweep::Clock& clock_;
    ArtifactStore& store_;
    MonitorOptions options_;

    mutable std::mutex mutex_;
    std::condition_variable wake_;
    sweep::SweepPlan active_;
    std::optional<sweep::SweepPlan> pending_;
    RunState state_ = RunState::Idle;
    bool stopped_ = false;
    bool terminated_ = false;
    std::string alarm_;
    MonitorSummary summary_;
    std::uint64_t cumulative_samples_ = 0;
    sweep::UuidGenerator ids_;

    std::function<void(const std::string&)> log_;
    std::function<void(const sweep::SweepResult&)> sweep_hook_;
    std::function<void(const sweep::SweepResult&, const ArtifactStore::Persisted&)> persisted_hook_;
    std::function<void(const std::string&)> alarm_hook_;
};

}  // namespace pdscan::monitor
