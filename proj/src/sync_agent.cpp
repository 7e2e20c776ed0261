#include "pdscan/sync_agent.hpp"

#include "pdscan/codec.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/monitor.hpp"
#include "pdscan/timeutil.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

namespace pdscan::sync {

namespace {

using nlohmann::json;

double monotonic_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct Entry {
    SyncRecord rec;
    double next_at = 0.0;
    bool in_flight = false;
};

struct SpectrumSlot {
    std::string sweep_id;
    std::int64_t t_start = 0;
    std::string path;  // relative to data_dir
    bool pushed = false;
    std::uint32_t attempts = 0;
    double next_at = 0.0;
    bool in_flight = false;
    std::string last_error;
};

// Same field set the service keeps, so both sides hash identical bytes.
json event_body(const codec::EventIndexRecord& r) {
    json body{{"event_id", r.event_id},
              {"t0", format_iso_ms(r.t0_unix_ms)},
              {"peak_freq_hz", r.peak_freq_hz},
              {"peak_power_dbm", r.peak_power_dbm},
              {"threshold_dbm", r.threshold_dbm}};
    if (!r.sweep_id.empty()) body["sweep_id"] = r.sweep_id;
    if (!r.iq_path.empty()) body["iq_path"] = fs::path(r.iq_path).filename().string();
    if (!r.spectrum_path.empty()) body["spectrum_path"] = fs::path(r.spectrum_path).filename().string();
    return body;
}

struct Outcome {
    bool stored = false;     // 2xx
    bool confirmed = false;  // server echoed our hash
    std::string error;
};

}  // namespace

struct SyncAgent::Impl {
    AgentConfig cfg;
    RemoteUrl remote;

    mutable std::mutex m;
    std::condition_variable cv;
    std::map<std::string, Entry> entries;
    std::vector<std::string> order;
    std::unique_ptr<codec::LineAppender> log;
    std::uint64_t events_offset = 0;
    std::uint64_t sweeps_offset = 0;
    std::optional<SpectrumSlot> spectrum;
    std::mt19937_64 rng{std::random_device{}()};

    std::mutex scan_mutex;
    bool index_ok = false;
    std::string index_error;
    std::uint32_t index_failures = 0;
    std::string last_upload_error;
    std::uint64_t uploads_ok = 0;
    std::uint64_t uploads_failed = 0;

    bool running = false;
    std::thread watcher;
    std::vector<std::thread> workers;

    explicit Impl(AgentConfig c) : cfg(std::move(c)), remote(parse_remote_url(cfg.remote_url)) {
        if (cfg.state_dir.empty()) cfg.state_dir = cfg.data_dir / ".sync";
        if (cfg.parallelism == 0) cfg.parallelism = 1;
        fs::create_directories(cfg.state_dir / "events");
        load();
    }

    fs::path records_path() const { return cfg.state_dir / "records.jsonl"; }
    fs::path cursor_path() const { return cfg.state_dir / "cursor.json"; }
    fs::path spectrum_state_path() const { return cfg.state_dir / "spectrum.json"; }
    fs::path event_body_path(const std::string& id) const { return cfg.state_dir / "events" / (id + ".json"); }

    void load() {
        const auto rp = records_path();
        if (fs::exists(rp)) {
            codec::repair_torn_tail(rp);
            for (const auto& line : codec::read_complete_lines(rp).lines) {
                try {
                    auto rec = sync_record_from_json(json::parse(line));
                    const auto key = rec.key();
                    auto [it, fresh] = entries.try_emplace(key);
                    if (fresh) order.push_back(key);
                    it->second.rec = std::move(rec);
                } catch (const std::exception&) {
                }
            }
        }
        std::string compacted;
        for (const auto& key : order) compacted += to_json(entries.at(key).rec).dump() + "\n";
        codec::write_file_atomic(rp, compacted);
        log = std::make_unique<codec::LineAppender>(rp);

        if (fs::exists(cursor_path())) {
            const auto c = json::parse(codec::read_file(cursor_path()));
            events_offset = c.value("events_offset", std::uint64_t{0});
            sweeps_offset = c.value("sweeps_offset", std::uint64_t{0});
        }
        if (fs::exists(spectrum_state_path())) {
            const auto s = json::parse(codec::read_file(spectrum_state_path()));
            spectrum = SpectrumSlot{s.at("sweep_id").get<std::string>(), s.at("t_start").get<std::int64_t>(),
                                    s.at("path").get<std::string>(), s.at("pushed").get<bool>(), 0, 0.0, false, {}};
        }
    }

    void save_cursor() {
        codec::write_file_atomic(cursor_path(),
                                 json{{"events_offset", events_offset}, {"sweeps_offset", sweeps_offset}}.dump());
    }

    void save_spectrum() {
        codec::write_file_atomic(spectrum_state_path(), json{{"sweep_id", spectrum->sweep_id},
                                                             {"t_start", spectrum->t_start},
                                                             {"path", spectrum->path},
                                                             {"pushed", spectrum->pushed}}
                                                            .dump());
    }

    // Caller holds m.
    void persist(const SyncRecord& rec) { log->append(to_json(rec).dump()); }

    SyncRecord artifact_record(const std::string& event_id, const std::string& rel) const {
        SyncRecord r;
        r.event_id = event_id;
        r.path = rel;
        r.kind = RecordKind::Artifact;
        try {
            const auto full = cfg.data_dir / rel;
            r.content_hash = sha256_file(full);
            r.bytes = fs::file_size(full);
        } catch (const std::exception& e) {
            r.last_error = e.what();
        }
        return r;
    }

    std::size_t scan() {
        std::lock_guard scan_lock(scan_mutex);
        const auto index = cfg.data_dir / "events.jsonl";
        std::size_t created = 0;
        try {
            if (!fs::exists(index)) throw IoError("event index not found", index.string());
            if (fs::file_size(index) < events_offset) events_offset = 0;
            const auto chunk = codec::read_index(index, events_offset);

            std::vector<SyncRecord> fresh;
            for (const auto& ev : chunk.records) {
                auto want = [&](const std::string& key) {
                    std::lock_guard lock(m);
                    return !entries.contains(key);
                };
                for (const auto& p : {ev.iq_path, ev.spectrum_path}) {
                    if (p.empty()) continue;
                    if (want(ev.event_id + "/" + p)) fresh.push_back(artifact_record(ev.event_id, p));
                }
                if (want(ev.event_id + "/" + std::string(kEventMarker))) {
                    const auto body = event_body(ev).dump();
                    codec::write_file_atomic(event_body_path(ev.event_id), body);
                    SyncRecord r;
                    r.event_id = ev.event_id;
                    r.path = std::string(kEventMarker);
                    r.kind = RecordKind::Event;
                    r.content_hash = sha256_hex(body);
                    r.bytes = body.size();
                    fresh.push_back(std::move(r));
                }
            }
            {
                std::lock_guard lock(m);
                for (auto& r : fresh) {
                    const auto key = r.key();
                    if (entries.contains(key)) continue;
                    persist(r);
                    entries[key].rec = std::move(r);
                    order.push_back(key);
                    ++created;
                }
                events_offset = chunk.next_offset;
            }

            const auto sweeps = cfg.data_dir / "sweeps.jsonl";
            if (cfg.upload_spectra && fs::exists(sweeps)) {
                if (fs::file_size(sweeps) < sweeps_offset) sweeps_offset = 0;
                const auto sc = monitor::read_sweep_index(sweeps, sweeps_offset);
                std::lock_guard lock(m);
                for (const auto& s : sc.records) {
                    if (s.spectrum_path.empty()) continue;
                    if (spectrum && spectrum->t_start > s.t_start_ms) continue;
                    spectrum = SpectrumSlot{s.sweep_id, s.t_start_ms, s.spectrum_path, false, 0, 0.0, false, {}};
                }
                if (spectrum) save_spectrum();
                sweeps_offset = sc.next_offset;
            }
            {
                std::lock_guard lock(m);
                save_cursor();
                index_ok = true;
                index_error.clear();
                index_failures = 0;
            }
        } catch (const std::exception& e) {
            std::lock_guard lock(m);
            index_ok = false;
            index_error = e.what();
            ++index_failures;
        }
        if (created) cv.notify_all();
        return created;
    }

    // --- uploads ------------------------------------------------------------

    std::unique_ptr<httplib::Client> client() const {
        auto cli = std::make_unique<httplib::Client>(remote.origin);
        const auto t = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg.http_timeout_s));
        cli->set_connection_timeout(t);
        cli->set_read_timeout(t);
        cli->set_write_timeout(t);
        if (!cfg.token.empty()) cli->set_bearer_token_auth(cfg.token);
        return cli;
    }

    static Outcome interpret(const httplib::Result& res, const std::string& expected_hash) {
        Outcome o;
        if (!res) {
            o.error = "remote unreachable: " + httplib::to_string(res.error());
            return o;
        }
        json body;
        try {
            body = json::parse(res->body);
        } catch (const std::exception&) {
        }
        if (res->status >= 200 && res->status < 300) {
            o.stored = true;
            o.confirmed = body.is_object() && body.value("sha256", std::string()) == expected_hash;
            if (!o.confirmed) o.error = "server did not confirm the content hash";
            return o;
        }
        const auto reason = body.is_object() ? body.value("error", std::string()) : std::string();
        o.error = "HTTP " + std::to_string(res->status) + (reason.empty() ? "" : " " + reason);
        return o;
    }

    Outcome push(const SyncRecord& rec) {
        auto cli = client();
        if (rec.kind == RecordKind::Event) {
            const auto bytes = codec::read_file(event_body_path(rec.event_id));
            const std::string body(bytes.begin(), bytes.end());
            return interpret(cli->Put(remote.prefix + "/events/" + rec.event_id, body, "application/json"),
                             rec.content_hash);
        }
        const auto bytes = codec::read_file(cfg.data_dir / rec.path);
        const std::string body(bytes.begin(), bytes.end());
        const auto name = fs::path(rec.path).filename().string();
        httplib::Headers headers{{"X-Content-SHA256", rec.content_hash}};
        return interpret(cli->Put(remote.prefix + "/artifacts/" + rec.event_id + "/" + name, headers, body,
                                  "application/octet-stream"),
                         rec.content_hash);
    }

    // Caller holds m.
    bool eligible(const Entry& e, double now, bool ignore_backoff) const {
        if (e.rec.state == SyncState::Acked || e.in_flight) return false;
        if (!ignore_backoff && e.next_at > now) return false;
        if (e.rec.kind != RecordKind::Event) return true;
        for (auto it = entries.lower_bound(e.rec.event_id + "/");
             it != entries.end() && it->first.starts_with(e.rec.event_id + "/"); ++it) {
            if (it->second.rec.kind == RecordKind::Artifact && it->second.rec.state != SyncState::Acked) return false;
        }
        return true;
    }

    void attempt(const std::string& key) {
        SyncRecord rec;
        {
            std::lock_guard lock(m);
            rec = entries.at(key).rec;
        }
        Outcome out;
        if (rec.kind == RecordKind::Artifact && rec.content_hash.empty()) {
            const auto fixed = artifact_record(rec.event_id, rec.path);
            if (fixed.last_error) {
                out.error = *fixed.last_error;
            } else {
                rec.content_hash = fixed.content_hash;
                rec.bytes = fixed.bytes;
            }
        }
        if (out.error.empty()) {
            ++rec.attempts;
            try {
                out = push(rec);
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        }

        std::lock_guard lock(m);
        auto& entry = entries.at(key);
        entry.in_flight = false;
        entry.rec.content_hash = rec.content_hash;
        entry.rec.bytes = rec.bytes;
        entry.rec.attempts = rec.attempts;
        if (out.stored && entry.rec.state == SyncState::Pending) {
            entry.rec.state = SyncState::Uploaded;
            entry.rec.last_error.reset();
            persist(entry.rec);
        }
        if (out.confirmed) {
            entry.rec.state = SyncState::Acked;
            entry.rec.last_error.reset();
            ++uploads_ok;
        } else {
            entry.rec.last_error = out.error;
            entry.next_at = monotonic_s() + cfg.backoff.delay(entry.rec.attempts, rng);
            last_upload_error = key + ": " + out.error;
            ++uploads_failed;
        }
        persist(entry.rec);
        cv.notify_all();
    }

    void attempt_spectrum() {
        SpectrumSlot slot;
        {
            std::lock_guard lock(m);
            slot = *spectrum;
        }
        std::string error;
        try {
            const auto bytes = codec::read_file(cfg.data_dir / slot.path);
            const std::string body(bytes.begin(), bytes.end());
            const auto hash = sha256_hex(body);
            httplib::Headers headers{{"X-Content-SHA256", hash}, {"X-Sweep-Start", format_iso_ms(slot.t_start)}};
            const auto out = interpret(client()->Put(remote.prefix + "/spectra/" + slot.sweep_id, headers, body, "text/csv"), hash);
            if (!out.confirmed) error = out.error;
        } catch (const std::exception& e) {
            error = e.what();
        }
        std::lock_guard lock(m);
        spectrum->in_flight = false;
        if (spectrum->sweep_id != slot.sweep_id) return;  // superseded meanwhile
        ++spectrum->attempts;
        if (error.empty()) {
            spectrum->pushed = true;
            save_spectrum();
        } else {
            spectrum->last_error = error;
            spectrum->next_at = monotonic_s() + cfg.backoff.delay(spectrum->attempts, rng);
        }
    }

    // Claims one eligible job. Empty key with a true flag means the spectrum slot.
    std::optional<std::string> claim(bool ignore_backoff, const std::set<std::string>* skip = nullptr) {
        const double now = monotonic_s();
        for (const auto& key : order) {
            auto& e = entries.at(key);
            if ((!skip || !skip->contains(key)) && eligible(e, now, ignore_backoff)) {
                e.in_flight = true;
                return key;
            }
        }
        if (spectrum && !spectrum->pushed && !spectrum->in_flight && (!skip || !skip->contains("")) &&
            (ignore_backoff || spectrum->next_at <= now)) {
            spectrum->in_flight = true;
            return std::string();
        }
        return std::nullopt;
    }

    void run_job(const std::string& key) {
        if (key.empty()) {
            attempt_spectrum();
        } else {
            attempt(key);
        }
    }

    double next_due() const {
        double next = monotonic_s() + cfg.poll_interval_s;
        for (const auto& [_, e] : entries) {
            if (e.rec.state != SyncState::Acked && !e.in_flight) next = std::min(next, e.next_at);
        }
        if (spectrum && !spectrum->pushed && !spectrum->in_flight) next = std::min(next, spectrum->next_at);
        return next;
    }

    void worker_loop() {
        std::unique_lock lock(m);
        while (running) {
            if (auto job = claim(false)) {
                lock.unlock();
                run_job(*job);
                lock.lock();
                continue;
            }
            const double wait = std::max(0.001, next_due() - monotonic_s());
            cv.wait_for(lock, std::chrono::duration<double>(wait));
        }
    }

    void watcher_loop() {
        while (true) {
            scan();
            std::unique_lock lock(m);
            const double wait = index_ok ? cfg.poll_interval_s
                                         : std::max(cfg.poll_interval_s, cfg.backoff.delay(index_failures, rng));
            if (cv.wait_for(lock, std::chrono::duration<double>(wait), [&] { return !running; })) break;
        }
    }
};

SyncAgent::SyncAgent(AgentConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

SyncAgent::~SyncAgent() { stop(); }

void SyncAgent::start() {
    {
        std::lock_guard lock(impl_->m);
        if (impl_->running) return;
        impl_->running = true;
    }
    impl_->watcher = std::thread([this] { impl_->watcher_loop(); });
    for (std::size_t i = 0; i < impl_->cfg.parallelism; ++i) {
        impl_->workers.emplace_back([this] { impl_->worker_loop(); });
    }
}

void SyncAgent::stop() {
    if (!impl_) return;
    {
        std::lock_guard lock(impl_->m);
        impl_->running = false;
    }
    impl_->cv.notify_all();
    if (impl_->watcher.joinable()) impl_->watcher.join();
    for (auto& t : impl_->workers) {
        if (t.joinable()) t.join();
    }
    impl_->workers.clear();
}

std::size_t SyncAgent::scan_once() { return impl_->scan(); }

std::size_t SyncAgent::upload_once(bool ignore_backoff) {
    std::set<std::string> done;
    std::size_t attempts = 0;
    while (true) {
        std::optional<std::string> job;
        {
            std::lock_guard lock(impl_->m);
            job = impl_->claim(ignore_backoff, &done);
        }
        if (!job) break;
        done.insert(*job);
        impl_->run_job(*job);
        ++attempts;
    }
    return attempts;
}

std::vector<SyncRecord> SyncAgent::records() const {
    std::lock_guard lock(impl_->m);
    std::vector<SyncRecord> out;
    for (const auto& key : impl_->order) out.push_back(impl_->entries.at(key).rec);
    return out;
}

std::size_t SyncAgent::outstanding() const {
    std::lock_guard lock(impl_->m);
    std::size_t n = 0;
    for (const auto& [_, e] : impl_->entries) n += e.rec.state != SyncState::Acked;
    if (impl_->spectrum && !impl_->spectrum->pushed) ++n;
    return n;
}

nlohmann::json SyncAgent::health() const {
    std::lock_guard lock(impl_->m);
    std::size_t pending = 0, uploaded = 0, acked = 0;
    for (const auto& [_, e] : impl_->entries) {
        pending += e.rec.state == SyncState::Pending;
        uploaded += e.rec.state == SyncState::Uploaded;
        acked += e.rec.state == SyncState::Acked;
    }
    json spec = nullptr;
    if (impl_->spectrum) {
        spec = {{"sweep_id", impl_->spectrum->sweep_id},
                {"pushed", impl_->spectrum->pushed},
                {"last_error", impl_->spectrum->last_error}};
    }
    return {{"ok", impl_->index_ok},
            {"remote", impl_->cfg.remote_url},
            {"index", {{"ok", impl_->index_ok}, {"error", impl_->index_error}, {"failures", impl_->index_failures}}},
            {"records", {{"pending", pending}, {"uploaded", uploaded}, {"acked", acked}}},
            {"uploads", {{"ok", impl_->uploads_ok}, {"failed", impl_->uploads_failed}}},
            {"last_upload_error", impl_->last_upload_error},
            {"spectrum", spec}};
}

}  // namespace pdscan::sync
