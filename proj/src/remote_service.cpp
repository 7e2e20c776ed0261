#include "pdscan/remote_service.hpp"

#include "http_util.hpp"
#include "pdscan/codec.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/timeutil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

namespace pdscan::sync {

namespace {

using nlohmann::json;

struct ArtifactMeta {
    std::string sha256;
    std::uint64_t bytes = 0;
};

struct EventEntry {
    std::uint64_t seq = 0;
    json body;
    std::string sha256;
    std::int64_t t0 = 0;
};

struct SpectrumEntry {
    std::string sweep_id;
    std::int64_t t_start = 0;
    std::string sha256;
    std::uint64_t bytes = 0;
    std::uint64_t seq = 0;
};

struct Subscription {
    std::string id;
    std::string kind;  // webhook | outbox
    std::string target;
    std::uint64_t after_seq = 0;
};

struct Delivery {
    std::string status = "pending";  // pending | delivered | dead_letter
    std::uint32_t attempts = 0;
    std::string last_error;
    double next_at = 0.0;
};

double monotonic_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// One mutex per key, created on demand.
class KeyedMutex {
public:
    std::shared_ptr<std::mutex> get(const std::string& key) {
        std::lock_guard lock(mutex_);
        auto& m = locks_[key];
        if (!m) m = std::make_shared<std::mutex>();
        return m;
    }

private:
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

std::string format_mhz(double hz) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f MHz", hz / 1e6);
    return buf;
}

std::string format_dbm(double dbm) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f dBm", dbm);
    return buf;
}

// Accepts the event fields the sync agent sends; t0 may be ISO text or unix ms.
json normalize_event(const json& in, const std::string& id) {
    if (!in.is_object()) throw ArgumentError("event body must be a JSON object");
    static const std::vector<std::string> allowed{"event_id",     "t0",       "peak_freq_hz", "peak_power_dbm",
                                                  "threshold_dbm", "sweep_id", "iq_path",      "spectrum_path",
                                                  "upload_state"};
    for (const auto& [k, _] : in.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
            throw ArgumentError("unknown event field '" + k + "'");
        }
    }
    if (in.value("event_id", std::string()) != id) throw ArgumentError("event_id does not match the URL");
    json out;
    out["event_id"] = id;
    const auto& t0 = in.at("t0");
    out["t0"] = format_iso_ms(t0.is_string() ? parse_time_ms(t0.get<std::string>()) : t0.get<std::int64_t>());
    out["peak_freq_hz"] = in.at("peak_freq_hz").get<double>();
    out["peak_power_dbm"] = in.at("peak_power_dbm").get<double>();
    if (in.contains("threshold_dbm")) out["threshold_dbm"] = in.at("threshold_dbm").get<double>();
    for (const char* key : {"sweep_id", "iq_path", "spectrum_path"}) {
        if (in.contains(key)) {
            const auto name = fs::path(in.at(key).get<std::string>()).filename().string();
            if (!name.empty() && !valid_name(name)) throw ArgumentError(std::string("bad ") + key);
            out[key] = name;
        }
    }
    return out;
}

}  // namespace

struct RemoteService::Impl {
    ServiceConfig cfg;
    httplib::Server server;
    std::thread thread;
    int port = 0;
    codec::LineAppender journal;

    mutable std::shared_mutex state;
    std::map<std::string, ArtifactMeta> artifacts;  // "<event_id>/<filename>"
    std::vector<EventEntry> events;
    std::map<std::string, std::size_t> event_pos;
    std::map<std::string, SpectrumEntry> spectra;
    std::optional<std::string> latest_spectrum;
    std::uint64_t spectrum_seq = 0;
    std::vector<Subscription> subs;
    std::map<std::pair<std::string, std::string>, Delivery> deliveries;  // (subscriber, event)
    KeyedMutex path_locks;

    std::condition_variable_any notify_cv;
    bool stopping = false;
    std::thread notifier;
    std::mt19937_64 rng{std::random_device{}()};

    explicit Impl(ServiceConfig c)
        : cfg(std::move(c)), port(cfg.port), journal((fs::create_directories(cfg.storage_dir), cfg.storage_dir / "journal.jsonl")) {
        replay();
    }

    fs::path object_path(const std::string& event_id, const std::string& file) const {
        return cfg.storage_dir / "objects" / event_id / file;
    }
    fs::path spectrum_path(const std::string& sweep_id) const { return cfg.storage_dir / "spectra" / (sweep_id + ".csv"); }

    std::string public_url() const {
        return cfg.public_url.empty() ? "http://" + cfg.host + ":" + std::to_string(port) : cfg.public_url;
    }

    // --- journal ------------------------------------------------------------

    void apply(const json& j) {
        const auto type = j.at("type").get<std::string>();
        if (type == "artifact") {
            artifacts[j.at("event_id").get<std::string>() + "/" + j.at("filename").get<std::string>()] = {
                j.at("sha256").get<std::string>(), j.at("bytes").get<std::uint64_t>()};
        } else if (type == "event") {
            add_event(j.at("body"), j.at("sha256").get<std::string>());
        } else if (type == "spectrum") {
            add_spectrum(j.at("sweep_id").get<std::string>(), j.at("t_start").get<std::int64_t>(),
                         j.at("sha256").get<std::string>(), j.at("bytes").get<std::uint64_t>());
        } else if (type == "subscription") {
            subs.push_back({j.at("id").get<std::string>(), j.at("kind").get<std::string>(),
                            j.at("target").get<std::string>(), j.at("after_seq").get<std::uint64_t>()});
        } else if (type == "delivery") {
            auto& d = deliveries[{j.at("subscriber").get<std::string>(), j.at("event_id").get<std::string>()}];
            d.status = j.at("status").get<std::string>();
            d.attempts = j.at("attempts").get<std::uint32_t>();
            d.last_error = j.value("last_error", std::string());
        }
    }

    void replay() {
        const auto path = cfg.storage_dir / "journal.jsonl";
        if (!fs::exists(path)) return;
        codec::repair_torn_tail(path);
        for (const auto& line : codec::read_complete_lines(path).lines) {
            try {
                apply(json::parse(line));
            } catch (const std::exception&) {
            }
        }
        // anything registered after a subscription without a final delivery is still owed
        for (const auto& e : events) {
            for (const auto& s : subs) {
                if (e.seq > s.after_seq) deliveries.try_emplace({s.id, e.body.at("event_id").get<std::string>()});
            }
        }
    }

    void add_event(const json& body, const std::string& sha) {
        EventEntry e;
        e.seq = events.size() + 1;
        e.body = body;
        e.sha256 = sha;
        e.t0 = parse_time_ms(body.at("t0").get<std::string>());
        event_pos[body.at("event_id").get<std::string>()] = events.size();
        events.push_back(std::move(e));
    }

    void add_spectrum(const std::string& sweep_id, std::int64_t t_start, const std::string& sha, std::uint64_t bytes) {
        SpectrumEntry s{sweep_id, t_start, sha, bytes, ++spectrum_seq};
        spectra[sweep_id] = s;
        if (!latest_spectrum) {
            latest_spectrum = sweep_id;
            return;
        }
        const auto& cur = spectra.at(*latest_spectrum);
        if (std::tie(s.t_start, s.seq) > std::tie(cur.t_start, cur.seq)) latest_spectrum = sweep_id;
    }

    // --- notifier -----------------------------------------------------------

    json notification_payload(const Subscription&, const EventEntry& e) const {
        const auto& b = e.body;
        const auto id = b.at("event_id").get<std::string>();
        json urls = json::array();
        for (const char* key : {"iq_path", "spectrum_path"}) {
            if (b.contains(key)) urls.push_back(public_url() + "/artifacts/" + id + "/" + b.at(key).get<std::string>());
        }
        const double f = b.at("peak_freq_hz").get<double>();
        const double p = b.at("peak_power_dbm").get<double>();
        return {{"event_id", id},
                {"t0", b.at("t0")},
                {"peak_freq_hz", f},
                {"peak_power_dbm", p},
                {"threshold_dbm", b.value("threshold_dbm", json(nullptr))},
                {"artifacts", urls},
                {"subject", "New PD signal detected at " + format_mhz(f) + ", " + format_dbm(p)}};
    }

    static std::string outbox_message(const json& n) {
        std::string msg = "Subject: " + n.at("subject").get<std::string>() + "\n";
        msg += "Event: " + n.at("event_id").get<std::string>() + "\n";
        msg += "Time: " + n.at("t0").get<std::string>() + "\n";
        msg += "Peak: " + format_mhz(n.at("peak_freq_hz").get<double>()) + ", " +
               format_dbm(n.at("peak_power_dbm").get<double>()) + "\n";
        msg += "Artifacts:\n";
        for (const auto& u : n.at("artifacts")) msg += "  " + u.get<std::string>() + "\n";
        return msg;
    }

    void deliver(const Subscription& sub, const json& payload) const {
        if (sub.kind == "outbox") {
            fs::path target = sub.target;
            if (target.is_relative()) target = cfg.storage_dir / target;
            codec::LineAppender(target).append(outbox_message(payload));
            return;
        }
        const auto url = parse_remote_url(sub.target);
        httplib::Client cli(url.origin);
        const auto timeout = std::chrono::duration<double>(cfg.notify_timeout_s);
        cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        httplib::Headers headers{{"X-Idempotency-Key", sub.id + "/" + payload.at("event_id").get<std::string>()}};
        auto res = cli.Post(url.prefix.empty() ? "/" : url.prefix, headers, payload.dump(), "application/json");
        if (!res) throw Error("webhook unreachable: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300) throw Error("webhook answered " + std::to_string(res->status));
    }

    void notifier_loop() {
        std::unique_lock lock(state);
        while (!stopping) {
            const double now = monotonic_s();
            std::optional<std::pair<std::string, std::string>> due;
            double next = now + 1.0;
            for (auto& [key, d] : deliveries) {
                if (d.status != "pending") continue;
                if (d.next_at <= now) {
                    due = key;
                    break;
                }
                next = std::min(next, d.next_at);
            }
            if (!due) {
                notify_cv.wait_for(lock, std::chrono::duration<double>(next - now));
                continue;
            }
            const auto sub_it = std::find_if(subs.begin(), subs.end(), [&](const auto& s) { return s.id == due->first; });
            const auto ev_it = event_pos.find(due->second);
            if (sub_it == subs.end() || ev_it == event_pos.end()) {
                deliveries.erase(*due);
                continue;
            }
            const Subscription sub = *sub_it;
            const json payload = notification_payload(sub, events[ev_it->second]);
            lock.unlock();
            std::string error;
            try {
                deliver(sub, payload);
            } catch (const std::exception& e) {
                error = e.what();
            }
            lock.lock();
            auto& d = deliveries[*due];
            ++d.attempts;
            if (error.empty()) {
                d.status = "delivered";
            } else {
                d.last_error = error;
                if (d.attempts >= cfg.notify_max_attempts) {
                    d.status = "dead_letter";
                } else {
                    d.next_at = monotonic_s() + cfg.notify_backoff.delay(d.attempts, rng);
                }
            }
            if (d.status != "pending") {
                journal.append(json{{"type", "delivery"},
                                    {"subscriber", due->first},
                                    {"event_id", due->second},
                                    {"status", d.status},
                                    {"attempts", d.attempts},
                                    {"last_error", d.last_error}}
                                   .dump());
            }
        }
    }

    // --- handlers -----------------------------------------------------------

    void put_artifact(const httplib::Request& req, httplib::Response& res) {
        const auto event_id = req.path_params.at("event_id");
        const auto file = req.path_params.at("filename");
        if (!valid_name(event_id) || !valid_name(file)) return detail::send_error(res, 400, "bad_name");
        const auto declared = req.get_header_value("X-Content-SHA256");
        if (declared.empty()) return detail::send_error(res, 400, "missing_hash", "X-Content-SHA256 header required");
        const auto actual = sha256_hex(req.body);
        if (actual != declared) return detail::send_error(res, 400, "hash_mismatch", "body hashes to " + actual);

        const auto key = event_id + "/" + file;
        auto lock_ptr = path_locks.get(key);
        std::lock_guard path_lock(*lock_ptr);
        {
            std::shared_lock lock(state);
            const auto it = artifacts.find(key);
            if (it != artifacts.end()) {
                if (it->second.sha256 == actual) {
                    return detail::send_json(res, 200, {{"status", "exists"}, {"sha256", actual}});
                }
                return detail::send_error(res, 409, "hash_conflict", "stored object hashes to " + it->second.sha256);
            }
        }
        codec::write_file_atomic(object_path(event_id, file), req.body);
        std::unique_lock lock(state);
        journal.append(json{{"type", "artifact"},
                            {"event_id", event_id},
                            {"filename", file},
                            {"sha256", actual},
                            {"bytes", req.body.size()}}
                           .dump());
        artifacts[key] = {actual, req.body.size()};
        detail::send_json(res, 200, {{"status", "stored"}, {"sha256", actual}});
    }

    void get_artifact(const httplib::Request& req, httplib::Response& res) {
        const auto event_id = req.path_params.at("event_id");
        const auto file = req.path_params.at("filename");
        if (!valid_name(event_id) || !valid_name(file)) return detail::send_error(res, 400, "bad_name");
        std::string sha;
        {
            std::shared_lock lock(state);
            const auto it = artifacts.find(event_id + "/" + file);
            if (it == artifacts.end()) return detail::send_error(res, 404, "not_found");
            sha = it->second.sha256;
        }
        const auto bytes = codec::read_file(object_path(event_id, file));
        res.set_header("X-Content-SHA256", sha);
        const bool csv = file.size() > 4 && file.ends_with(".csv");
        res.set_content(std::string(bytes.begin(), bytes.end()), csv ? "text/csv" : "application/octet-stream");
    }

    void put_event(const httplib::Request& req, httplib::Response& res) {
        const auto id = req.path_params.at("event_id");
        if (!valid_name(id)) return detail::send_error(res, 400, "bad_name");
        json body;
        try {
            body = normalize_event(json::parse(req.body), id);
        } catch (const std::exception& e) {
            return detail::send_error(res, 400, "bad_event", e.what());
        }
        const auto sha = sha256_hex(body.dump());
        std::unique_lock lock(state);
        const auto it = event_pos.find(id);
        if (it != event_pos.end()) {
            if (events[it->second].sha256 == sha) {
                return detail::send_json(res, 200, {{"status", "exists"}, {"sha256", sha}});
            }
            return detail::send_error(res, 409, "event_conflict");
        }
        journal.append(json{{"type", "event"}, {"body", body}, {"sha256", sha}}.dump());
        add_event(body, sha);
        const auto seq = events.back().seq;
        for (const auto& s : subs) {
            if (seq > s.after_seq) deliveries.try_emplace({s.id, id});
        }
        notify_cv.notify_all();
        detail::send_json(res, 200, {{"status", "registered"}, {"sha256", sha}});
    }

    json event_json(const EventEntry& e) const {
        json out = e.body;
        const auto id = e.body.at("event_id").get<std::string>();
        json list = json::array();
        for (auto it = artifacts.lower_bound(id + "/"); it != artifacts.end() && it->first.starts_with(id + "/"); ++it) {
            const auto file = it->first.substr(id.size() + 1);
            list.push_back({{"filename", file},
                            {"url", public_url() + "/artifacts/" + id + "/" + file},
                            {"sha256", it->second.sha256},
                            {"bytes", it->second.bytes}});
        }
        out["artifacts"] = list;
        out["seq"] = e.seq;
        return out;
    }

    void list_events(const httplib::Request& req, httplib::Response& res) {
        std::optional<std::int64_t> since;
        if (req.has_param("since")) {
            try {
                since = parse_time_ms(req.get_param_value("since"));
            } catch (const std::exception& e) {
                return detail::send_error(res, 400, "bad_since", e.what());
            }
        }
        std::shared_lock lock(state);
        std::vector<const EventEntry*> picked;
        for (const auto& e : events) {
            if (!since || e.t0 > *since) picked.push_back(&e);
        }
        std::stable_sort(picked.begin(), picked.end(),
                         [](const EventEntry* a, const EventEntry* b) { return std::tie(a->t0, a->seq) < std::tie(b->t0, b->seq); });
        json out = json::array();
        for (const auto* e : picked) out.push_back(event_json(*e));
        detail::send_json(res, 200, out);
    }

    void put_spectrum(const httplib::Request& req, httplib::Response& res) {
        const auto sweep_id = req.path_params.at("sweep_id");
        if (!valid_name(sweep_id)) return detail::send_error(res, 400, "bad_name");
        const auto declared = req.get_header_value("X-Content-SHA256");
        if (declared.empty()) return detail::send_error(res, 400, "missing_hash", "X-Content-SHA256 header required");
        std::int64_t t_start = 0;
        try {
            t_start = parse_time_ms(req.get_header_value("X-Sweep-Start"));
        } catch (const std::exception& e) {
            return detail::send_error(res, 400, "bad_sweep_start", e.what());
        }
        const auto actual = sha256_hex(req.body);
        if (actual != declared) return detail::send_error(res, 400, "hash_mismatch", "body hashes to " + actual);

        auto lock_ptr = path_locks.get("#spectrum/" + sweep_id);
        std::lock_guard path_lock(*lock_ptr);
        {
            std::shared_lock lock(state);
            const auto it = spectra.find(sweep_id);
            if (it != spectra.end()) {
                if (it->second.sha256 == actual) {
                    return detail::send_json(res, 200, {{"status", "exists"}, {"sha256", actual}});
                }
                return detail::send_error(res, 409, "hash_conflict");
            }
        }
        codec::write_file_atomic(spectrum_path(sweep_id), req.body);
        std::unique_lock lock(state);
        journal.append(json{{"type", "spectrum"},
                            {"sweep_id", sweep_id},
                            {"t_start", t_start},
                            {"sha256", actual},
                            {"bytes", req.body.size()}}
                           .dump());
        add_spectrum(sweep_id, t_start, actual, req.body.size());
        detail::send_json(res, 200, {{"status", "stored"}, {"sha256", actual}});
    }

    void latest_spectrum_handler(httplib::Response& res) {
        SpectrumEntry entry;
        {
            std::shared_lock lock(state);
            if (!latest_spectrum) return detail::send_error(res, 404, "not_found", "no spectrum uploaded yet");
            entry = spectra.at(*latest_spectrum);
        }
        const auto bytes = codec::read_file(spectrum_path(entry.sweep_id));
        res.set_header("X-Sweep-Id", entry.sweep_id);
        res.set_header("X-Sweep-Start", format_iso_ms(entry.t_start));
        res.set_header("X-Content-SHA256", entry.sha256);
        res.set_content(std::string(bytes.begin(), bytes.end()), "text/csv");
    }

    void add_subscription(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const std::exception& e) {
            return detail::send_error(res, 400, "bad_json", e.what());
        }
        const bool webhook = body.is_object() && body.contains("webhook");
        const bool outbox = body.is_object() && body.contains("outbox");
        if (webhook == outbox || body.size() != 1 || !body.begin()->is_string()) {
            return detail::send_error(res, 400, "bad_subscription", "expected {\"webhook\": url} or {\"outbox\": path}");
        }
        const std::string kind = webhook ? "webhook" : "outbox";
        const auto target = body.begin()->get<std::string>();
        if (webhook) {
            try {
                parse_remote_url(target);
            } catch (const std::exception& e) {
                return detail::send_error(res, 400, "bad_subscription", e.what());
            }
        } else if (target.empty()) {
            return detail::send_error(res, 400, "bad_subscription", "empty outbox path");
        }
        std::unique_lock lock(state);
        for (const auto& s : subs) {
            if (s.kind == kind && s.target == target) {
                return detail::send_json(res, 200, {{"id", s.id}, {"kind", kind}, {"target", target}});
            }
        }
        Subscription s{"sub-" + std::to_string(subs.size() + 1), kind, target, events.size()};
        journal.append(json{{"type", "subscription"},
                            {"id", s.id},
                            {"kind", s.kind},
                            {"target", s.target},
                            {"after_seq", s.after_seq}}
                           .dump());
        subs.push_back(s);
        detail::send_json(res, 201, {{"id", s.id}, {"kind", kind}, {"target", target}});
    }

    json health_json() const {
        std::shared_lock lock(state);
        std::size_t pending = 0, delivered = 0, dead = 0;
        for (const auto& [_, d] : deliveries) {
            pending += d.status == "pending";
            delivered += d.status == "delivered";
            dead += d.status == "dead_letter";
        }
        return {{"ok", true},
                {"events", events.size()},
                {"artifacts", artifacts.size()},
                {"spectra", spectra.size()},
                {"subscriptions", subs.size()},
                {"notifications", {{"pending", pending}, {"delivered", delivered}, {"dead_letter", dead}}}};
    }

    void routes() {
        detail::install_common(server, cfg.token);
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                detail::send_error(res, 500, "internal", e.what());
            } catch (...) {
                detail::send_error(res, 500, "internal");
            }
        });
        server.Put("/artifacts/:event_id/:filename",
                   [this](const httplib::Request& q, httplib::Response& r) { put_artifact(q, r); });
        server.Get("/artifacts/:event_id/:filename",
                   [this](const httplib::Request& q, httplib::Response& r) { get_artifact(q, r); });
        server.Put("/events/:event_id", [this](const httplib::Request& q, httplib::Response& r) { put_event(q, r); });
        server.Get("/events", [this](const httplib::Request& q, httplib::Response& r) { list_events(q, r); });
        server.Put("/spectra/:sweep_id", [this](const httplib::Request& q, httplib::Response& r) { put_spectrum(q, r); });
        server.Get("/spectrum/latest", [this](const httplib::Request&, httplib::Response& r) { latest_spectrum_handler(r); });
        server.Post("/subscriptions",
                    [this](const httplib::Request& q, httplib::Response& r) { add_subscription(q, r); });
        server.Get("/subscriptions", [this](const httplib::Request&, httplib::Response& r) {
            std::shared_lock lock(state);
            json out = json::array();
            for (const auto& s : subs) out.push_back({{"id", s.id}, {"kind", s.kind}, {"target", s.target}});
            detail::send_json(r, 200, out);
        });
        server.Get("/notifications", [this](const httplib::Request&, httplib::Response& r) {
            std::shared_lock lock(state);
            json out = json::array();
            for (const auto& [key, d] : deliveries) {
                out.push_back({{"subscriber", key.first},
                               {"event_id", key.second},
                               {"status", d.status},
                               {"attempts", d.attempts},
                               {"last_error", d.last_error}});
            }
            detail::send_json(r, 200, out);
        });
        server.Get("/health", [this](const httplib::Request&, httplib::Response& r) {
            detail::send_json(r, 200, health_json());
        });
    }
};

RemoteService::RemoteService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
    impl_->routes();
}

RemoteService::~RemoteService() { stop(); }

void RemoteService::start() {
    impl_->port = detail::bind_and_serve(impl_->server, impl_->cfg.host, impl_->cfg.port, impl_->thread);
    {
        std::unique_lock lock(impl_->state);
        impl_->stopping = false;
    }
    impl_->notifier = std::thread([this] { impl_->notifier_loop(); });
}

void RemoteService::stop() {
    if (!impl_) return;
    {
        std::unique_lock lock(impl_->state);
        impl_->stopping = true;
    }
    impl_->notify_cv.notify_all();
    if (impl_->notifier.joinable()) impl_->notifier.join();
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int RemoteService::port() const noexcept { return impl_->port; }

std::string RemoteService::url() const { return "http://" + impl_->cfg.host + ":" + std::to_string(impl_->port); }

nlohmann::json RemoteService::health() const { return impl_->health_json(); }

}  // namespace pdscan::sync
