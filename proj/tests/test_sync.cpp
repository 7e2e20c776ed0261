#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pdscan/codec.hpp"
#include "pdscan/remote_service.hpp"
#include "pdscan/sync.hpp"
#include "pdscan/sync_agent.hpp"
#include "pdscan/timeutil.hpp"
#include "test_util.hpp"

#include <httplib.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

using namespace pdscan;
using namespace pdscan::sync;
using nlohmann::json;
using pdscan::testing::TempDir;

namespace {

const BackoffPolicy kFast{0.01, 0.05, false};

void write_bytes(const fs::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

std::string random_bytes(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(rng());
    return s;
}

// Drops an iq file and a spectrum file for the event and appends its index line.
codec::EventIndexRecord add_event(const fs::path& data, const std::string& id, std::int64_t t0, double freq = 315e6) {
    codec::EventIndexRecord r;
    r.event_id = id;
    r.t0_unix_ms = t0;
    r.peak_freq_hz = freq;
    r.peak_power_dbm = -36.0;
    r.threshold_dbm = -50.0;
    r.sweep_id = "sweep-1";
    r.iq_path = id + ".iqf";
    r.spectrum_path = id + "_spectrum.csv";
    write_bytes(data / r.iq_path, random_bytes(4096, std::hash<std::string>{}(id)));
    write_bytes(data / r.spectrum_path, "freq_hz,power_dbm\n315000000,-36.0\n");
    codec::EventIndexWriter(data / "events.jsonl").append(r);
    return r;
}

ServiceConfig service_config(const fs::path& dir, int port = 0) {
    ServiceConfig c;
    c.storage_dir = dir;
    c.port = port;
    c.notify_backoff = kFast;
    return c;
}

AgentConfig agent_config(const fs::path& data, const std::string& url) {
    AgentConfig c;
    c.data_dir = data;
    c.remote_url = url;
    c.backoff = kFast;
    c.poll_interval_s = 0.02;
    c.http_timeout_s = 2.0;
    c.parallelism = 2;
    return c;
}

json get_json(const std::string& origin, const std::string& path, const std::string& token = "") {
    httplib::Client cli(origin);
    if (!token.empty()) cli.set_bearer_token_auth(token);
    auto res = cli.Get(path);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
}

std::vector<std::string> remote_event_ids(const std::string& origin) {
    std::vector<std::string> ids;
    for (const auto& e : get_json(origin, "/events")) ids.push_back(e.at("event_id").get<std::string>());
    return ids;
}

template <class Pred>
bool wait_until(Pred pred, double timeout_s = 10.0) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    while (std::chrono::steady_clock::now() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

int free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

// Minimal HTTP endpoint running in the background on a free port.
struct BackgroundServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~BackgroundServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

// Forwards PUTs to the real service, optionally flipping one body byte first.
struct CorruptingProxy : BackgroundServer {
    std::string upstream;
    std::atomic<bool> corrupt{true};

    explicit CorruptingProxy(std::string up) : upstream(std::move(up)) {
        server.Put(".*", [this](const httplib::Request& req, httplib::Response& res) {
            std::string body = req.body;
            if (corrupt && !body.empty()) body[body.size() / 2] ^= 0x5a;
            httplib::Headers headers;
            for (const auto& [k, v] : req.headers) {
                if (k.starts_with("X-")) headers.emplace(k, v);
            }
            httplib::Client cli(upstream);
            auto r = cli.Put(req.path, headers, body, req.get_header_value("Content-Type"));
            if (!r) {
                res.status = 502;
                return;
            }
            res.status = r->status;
            res.set_content(r->body, "application/json");
        });
        start();
    }
};

httplib::Result put_artifact(const std::string& origin, const std::string& path, const std::string& body,
                             const std::string& hash) {
    httplib::Client cli(origin);
    return cli.Put(path, httplib::Headers{{"X-Content-SHA256", hash}}, body, "application/octet-stream");
}

}  // namespace

TEST_CASE("sync record json and backoff") {
    SyncRecord r{"ev", "ev.iqf", RecordKind::Artifact, std::string(64, 'a'), 12, SyncState::Uploaded, 3, "boom"};
    CHECK(sync_record_from_json(to_json(r)) == r);
    CHECK(r.key() == "ev/ev.iqf");

    BackoffPolicy b;
    CHECK(b.nominal(1) == doctest::Approx(1.0));
    CHECK(b.nominal(2) == doctest::Approx(2.0));
    CHECK(b.nominal(7) == doctest::Approx(60.0));
    CHECK(b.nominal(40) == doctest::Approx(60.0));
    std::mt19937_64 rng(1);
    for (std::uint32_t a = 1; a < 12; ++a) {
        const double d = b.delay(a, rng);
        CHECK(d >= b.nominal(a) / 2);
        CHECK(d <= b.nominal(a));
    }
    CHECK(valid_name("a_b-1.iqf"));
    CHECK_FALSE(valid_name(".."));
    CHECK_FALSE(valid_name("a/b"));
    CHECK_FALSE(valid_name(""));
}

TEST_CASE("service: put/get round trip, dedupe, conflicts, bad requests") {
    TempDir dir;
    RemoteService svc(service_config(dir.path()));
    svc.start();
    const auto url = svc.url();
    const auto body = random_bytes(10000, 3);
    const auto hash = sha256_hex(body);

    auto r1 = put_artifact(url, "/artifacts/ev1/a.iqf", body, hash);
    REQUIRE(r1);
    CHECK(r1->status == 200);
    CHECK(json::parse(r1->body).at("status") == "stored");
    auto r2 = put_artifact(url, "/artifacts/ev1/a.iqf", body, hash);
    CHECK(r2->status == 200);
    CHECK(json::parse(r2->body).at("status") == "exists");
    CHECK(json::parse(r2->body).at("sha256") == hash);
    CHECK(std::distance(fs::directory_iterator(dir / "objects/ev1"), fs::directory_iterator{}) == 1);

    httplib::Client cli(url);
    auto g = cli.Get("/artifacts/ev1/a.iqf");
    REQUIRE(g);
    CHECK(g->status == 200);
    CHECK(g->body == body);
    CHECK(g->get_header_value("X-Content-SHA256") == hash);
    CHECK(cli.Get("/artifacts/ev1/missing.iqf")->status == 404);

    const auto other = random_bytes(100, 4);
    auto conflict = put_artifact(url, "/artifacts/ev1/a.iqf", other, sha256_hex(other));
    CHECK(conflict->status == 409);
    CHECK(json::parse(conflict->body).at("error") == "hash_conflict");

    auto mismatch = put_artifact(url, "/artifacts/ev1/b.iqf", body, sha256_hex(other));
    CHECK(mismatch->status == 400);
    CHECK(json::parse(mismatch->body).at("error") == "hash_mismatch");
    CHECK_FALSE(fs::exists(dir / "objects/ev1/b.iqf"));

    auto nohash = cli.Put("/artifacts/ev1/c.iqf", body, "application/octet-stream");
    CHECK(nohash->status == 400);
    CHECK(json::parse(nohash->body).at("error") == "missing_hash");

    auto badjson = cli.Put("/events/ev1", "{not json", "application/json");
    CHECK(badjson->status == 400);
    CHECK(json::parse(badjson->body).at("error") == "bad_event");
    CHECK(cli.Get("/events?since=yesterday")->status == 400);
    CHECK(cli.Get("/spectrum/latest")->status == 404);
    CHECK(cli.Post("/subscriptions", R"({"fax":"123"})", "application/json")->status == 400);
    CHECK(get_json(url, "/health").at("ok") == true);
}

TEST_CASE("service: concurrent identical PUTs store one object and both succeed") {
    TempDir dir;
    RemoteService svc(service_config(dir.path()));
    svc.start();
    const auto body = random_bytes(2'000'000, 9);
    const auto hash = sha256_hex(body);
    for (int round = 0; round < 5; ++round) {
        const auto path = "/artifacts/ev" + std::to_string(round) + "/x.iqf";
        std::vector<int> status(2, 0);
        std::thread a([&] { status[0] = put_artifact(svc.url(), path, body, hash)->status; });
        std::thread b([&] { status[1] = put_artifact(svc.url(), path, body, hash)->status; });
        a.join();
        b.join();
        CHECK(status[0] == 200);
        CHECK(status[1] == 200);
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(dir / "objects" / ("ev" + std::to_string(round)))) {
            ++files;
            CHECK(sha256_file(e.path()) == hash);
        }
        CHECK(files == 1);
    }
}

TEST_CASE("service: events since filter, ordering and journal replay") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    std::string origin;
    {
        RemoteService svc(service_config(dir / "remote"));
        svc.start();
        origin = svc.url();
        httplib::Client cli(origin);
        const std::int64_t base = 1'700'000'000'000;
        for (int i : {2, 0, 1}) {
            json ev{{"event_id", "ev" + std::to_string(i)},
                    {"t0", base + i * 1000},
                    {"peak_freq_hz", 315e6},
                    {"peak_power_dbm", -36.0}};
            auto res = cli.Put("/events/ev" + std::to_string(i), ev.dump(), "application/json");
            REQUIRE(res);
            CHECK(res->status == 200);
        }
        const auto all = get_json(origin, "/events");
        REQUIRE(all.size() == 3);
        CHECK(all[0].at("event_id") == "ev0");
        CHECK(all[2].at("event_id") == "ev2");
        const auto since = get_json(origin, "/events?since=" + std::to_string(base + 1000));
        REQUIRE(since.size() == 1);
        CHECK(since[0].at("event_id") == "ev2");
        const auto since_iso = get_json(origin, "/events?since=" + format_iso_ms(base));
        CHECK(since_iso.size() == 2);

        json changed{{"event_id", "ev1"}, {"t0", base}, {"peak_freq_hz", 316e6}, {"peak_power_dbm", -36.0}};
        CHECK(cli.Put("/events/ev1", changed.dump(), "application/json")->status == 409);
        json mismatched{{"event_id", "other"}, {"t0", base}, {"peak_freq_hz", 316e6}, {"peak_power_dbm", -36.0}};
        CHECK(cli.Put("/events/ev1", mismatched.dump(), "application/json")->status == 400);

        const auto csv = std::string("freq_hz,power_dbm\n1,2\n");
        httplib::Headers h{{"X-Content-SHA256", sha256_hex(csv)}, {"X-Sweep-Start", format_iso_ms(base)}};
        CHECK(cli.Put("/spectra/sw1", h, csv, "text/csv")->status == 200);
        const auto body = random_bytes(64, 1);
        CHECK(put_artifact(origin, "/artifacts/ev1/ev1.iqf", body, sha256_hex(body))->status == 200);
    }
    RemoteService again(service_config(dir / "remote"));
    again.start();
    const auto ids = remote_event_ids(again.url());
    CHECK(ids == std::vector<std::string>{"ev0", "ev1", "ev2"});
    const auto ev1 = get_json(again.url(), "/events?since=" + std::to_string(1'700'000'000'000));
    REQUIRE(ev1.size() == 2);
    REQUIRE(ev1[0].at("artifacts").size() == 1);
    CHECK(ev1[0].at("artifacts")[0].at("filename") == "ev1.iqf");
    httplib::Client cli(again.url());
    auto latest = cli.Get("/spectrum/latest");
    REQUIRE(latest);
    CHECK(latest->status == 200);
    CHECK(latest->get_header_value("X-Sweep-Id") == "sw1");
}

TEST_CASE("service: bearer token guards everything but health") {
    TempDir dir;
    auto cfg = service_config(dir.path());
    cfg.token = "s3cret";
    RemoteService svc(cfg);
    svc.start();
    httplib::Client cli(svc.url());
    CHECK(cli.Get("/events")->status == 401);
    CHECK(cli.Get("/health")->status == 200);
    CHECK(get_json(svc.url(), "/events", "s3cret").empty());
}

TEST_CASE("agent: two events fan out to four artifact records plus registrations") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    add_event(data, "ev-a", 1000);
    add_event(data, "ev-b", 2000);
    SyncAgent agent(agent_config(data, "http://127.0.0.1:1"));
    CHECK(agent.scan_once() == 6);
    const auto recs = agent.records();
    std::size_t artifacts = 0;
    for (const auto& r : recs) {
        CHECK(r.state == SyncState::Pending);
        CHECK(r.attempts == 0);
        CHECK(r.content_hash.size() == 64);
        if (r.kind == RecordKind::Artifact) {
            ++artifacts;
            CHECK(r.content_hash == sha256_file(data / r.path));
        }
    }
    CHECK(artifacts == 4);
    CHECK(agent.scan_once() == 0);
}

TEST_CASE("agent: restart resumes from the cursor without duplicates, torn index tail waits") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    add_event(data, "ev-a", 1000);
    {
        SyncAgent agent(agent_config(data, "http://127.0.0.1:1"));
        CHECK(agent.scan_once() == 3);
    }
    add_event(data, "ev-b", 2000);
    const auto full = json(codec::to_json(add_event(data, "ev-c", 3000))).dump();
    // Rewrite the last line as a torn write.
    {
        auto text = codec::read_file(data / "events.jsonl");
        std::string s(text.begin(), text.end());
        s.resize(s.size() - full.size() - 1);
        s += full.substr(0, full.size() / 2);
        codec::write_file_atomic(data / "events.jsonl", s);
    }
    {
        SyncAgent agent(agent_config(data, "http://127.0.0.1:1"));
        CHECK(agent.records().size() == 3);
        CHECK(agent.scan_once() == 3);
        CHECK(agent.scan_once() == 0);
        std::ofstream(data / "events.jsonl", std::ios::app) << full.substr(full.size() / 2) << "\n";
        CHECK(agent.scan_once() == 3);
    }
    // Torn tail in the agent's own record log.
    std::ofstream(dir / "data/.sync/records.jsonl", std::ios::app) << R"({"event_id":"ev-)";
    SyncAgent agent(agent_config(data, "http://127.0.0.1:1"));
    const auto recs = agent.records();
    CHECK(recs.size() == 9);
    std::set<std::string> keys;
    for (const auto& r : recs) keys.insert(r.key());
    CHECK(keys.size() == 9);
    CHECK(agent.scan_once() == 0);
}

TEST_CASE("agent: unreadable index is reported in health and retried") {
    TempDir dir;
    SyncAgent agent(agent_config(dir / "nowhere", "http://127.0.0.1:1"));
    CHECK(agent.scan_once() == 0);
    const auto h = agent.health();
    CHECK_FALSE(h.at("index").at("ok").get<bool>());
    CHECK(h.at("index").at("failures") == 1);
    fs::create_directories(dir / "nowhere");
    add_event(dir / "nowhere", "ev", 5);
    CHECK(agent.scan_once() == 3);
    CHECK(agent.health().at("index").at("ok").get<bool>());
}

TEST_CASE("agent: server down for three attempts then up gives Acked with attempts = 4") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    add_event(data, "ev-a", 1000);
    const int port = free_port();
    const auto url = "http://127.0.0.1:" + std::to_string(port);
    SyncAgent agent(agent_config(data, url));
    agent.scan_once();
    for (int i = 0; i < 3; ++i) CHECK(agent.upload_once(true) == 2);  // both artifacts; event waits
    for (const auto& r : agent.records()) {
        CHECK(r.state == SyncState::Pending);
        CHECK(r.attempts == (r.kind == RecordKind::Artifact ? 3u : 0u));
        if (r.kind == RecordKind::Artifact) CHECK(r.last_error.has_value());
    }
    RemoteService svc(service_config(dir / "remote", port));
    svc.start();
    CHECK(agent.upload_once(true) == 3);  // artifacts, then the registration they unblock
    for (const auto& r : agent.records()) {
        CHECK(r.state == SyncState::Acked);
        CHECK(r.attempts == (r.kind == RecordKind::Artifact ? 4u : 1u));
        CHECK_FALSE(r.last_error.has_value());
    }
    CHECK(agent.outstanding() == 0);
    CHECK(remote_event_ids(url) == std::vector<std::string>{"ev-a"});
    // Backoff is honoured when not overridden.
    SyncAgent idle(agent_config(data, url));
    CHECK(idle.upload_once() == 0);
}

TEST_CASE("agent: body corrupted in flight is rejected and the record stays Pending") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    add_event(data, "ev-a", 1000);
    RemoteService svc(service_config(dir / "remote"));
    svc.start();
    CorruptingProxy proxy(svc.url());
    SyncAgent agent(agent_config(data, proxy.url()));
    agent.scan_once();
    CHECK(agent.upload_once(true) == 2);
    for (const auto& r : agent.records()) {
        CHECK(r.state == SyncState::Pending);
        if (r.kind == RecordKind::Artifact) {
            CHECK(r.attempts == 1);
            REQUIRE(r.last_error.has_value());
            CHECK(r.last_error->find("hash_mismatch") != std::string::npos);
        }
    }
    CHECK_FALSE(fs::exists(dir / "remote/objects/ev-a"));
    proxy.corrupt = false;
    agent.upload_once(true);
    agent.upload_once(true);
    CHECK(agent.outstanding() == 0);
    CHECK(sha256_file(dir / "remote/objects/ev-a/ev-a.iqf") == sha256_file(data / "ev-a.iqf"));
}

TEST_CASE("agent: states never regress across restarts and re-uploads are no-ops") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    add_event(data, "ev-a", 1000);
    RemoteService svc(service_config(dir / "remote"));
    svc.start();
    {
        SyncAgent agent(agent_config(data, svc.url()));
        agent.scan_once();
        agent.upload_once(true);
        agent.upload_once(true);
        CHECK(agent.outstanding() == 0);
    }
    SyncAgent agent(agent_config(data, svc.url()));
    for (const auto& r : agent.records()) CHECK(r.state == SyncState::Acked);
    CHECK(agent.upload_once(true) == 0);
}

TEST_CASE("agent: background threads sync events and the newest stitched spectrum") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    RemoteService svc(service_config(dir / "remote"));
    svc.start();
    SyncAgent agent(agent_config(data, svc.url()));
    agent.start();
    for (int i = 0; i < 5; ++i) add_event(data, "ev-" + std::to_string(i), 1000 + i);
    write_bytes(data / "stitched.csv", "freq_hz,power_dbm\n1,-90\n");
    json sweep{{"sweep_id", "sw-9"},
               {"t_start", format_iso_ms(5000)},
               {"t_end", format_iso_ms(6000)},
               {"spectrum_path", "stitched.csv"},
               {"complete", true},
               {"gaps", json::array()},
               {"bins", 1},
               {"events", 5}};
    std::ofstream(data / "sweeps.jsonl", std::ios::app) << sweep.dump() << "\n";
    CHECK(wait_until([&] { return remote_event_ids(svc.url()).size() == 5 && agent.outstanding() == 0; }));
    httplib::Client cli(svc.url());
    auto latest = cli.Get("/spectrum/latest");
    REQUIRE(latest);
    CHECK(latest->status == 200);
    CHECK(latest->get_header_value("X-Sweep-Id") == "sw-9");
    agent.stop();
    CHECK(agent.health().at("records").at("acked") == 15);
}

TEST_CASE("agent: randomized kills and faults converge to set equality") {
    TempDir dir;
    const auto data = dir / "data";
    fs::create_directories(data);
    const int port = free_port();
    const auto url = "http://127.0.0.1:" + std::to_string(port);
    std::mt19937_64 rng(2024);
    std::set<std::string> local;
    std::unique_ptr<RemoteService> svc;
    for (int round = 0; round < 12; ++round) {
        for (int k = 0; k < 3; ++k) {
            const auto id = "ev-" + std::to_string(round) + "-" + std::to_string(k);
            add_event(data, id, 10'000 + round * 10 + k);
            local.insert(id);
        }
        const bool up = rng() % 3 != 0;
        if (up && !svc) {
            svc = std::make_unique<RemoteService>(service_config(dir / "remote", port));
            svc->start();
        } else if (!up) {
            svc.reset();
        }
        {
            SyncAgent agent(agent_config(data, url));
            agent.start();
            std::this_thread::sleep_for(std::chrono::milliseconds(10 + rng() % 60));
        }
        if (rng() % 2) {
            std::ofstream(data / ".sync/records.jsonl", std::ios::app) << R"({"event_id":"torn)";
        }
    }
    if (!svc) {
        svc = std::make_unique<RemoteService>(service_config(dir / "remote", port));
        svc->start();
    }
    SyncAgent agent(agent_config(data, url));
    agent.start();
    CHECK(wait_until([&] { return agent.outstanding() == 0; }, 60.0));
    const auto ids = remote_event_ids(url);
    CHECK(ids.size() == local.size());
    CHECK(std::set<std::string>(ids.begin(), ids.end()) == local);
}

TEST_CASE("notifications: one delivery per subscriber, retries, dedupe, dead letter, outbox format") {
    TempDir dir;
    std::atomic<int> hook_calls{0};
    std::atomic<int> hook_ok{0};
    std::mutex key_mutex;
    std::vector<std::string> keys;
    BackgroundServer hook;
    hook.server.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
        const int n = ++hook_calls;
        if (n <= 2) {
            res.status = 500;
            return;
        }
        ++hook_ok;
        std::lock_guard lock(key_mutex);
        keys.push_back(req.get_header_value("X-Idempotency-Key"));
        const auto payload = json::parse(req.body);
        CHECK(payload.at("event_id") == "ev-1");
        CHECK(payload.at("peak_freq_hz").get<double>() == 315e6);
        CHECK(payload.at("artifacts").size() == 1);
        res.status = 200;
    });
    hook.start();

    auto cfg = service_config(dir / "remote");
    cfg.notify_max_attempts = 10;
    RemoteService svc(cfg);
    svc.start();
    httplib::Client cli(svc.url());
    auto s1 = cli.Post("/subscriptions", json{{"webhook", hook.url() + "/hook"}}.dump(), "application/json");
    REQUIRE(s1);
    CHECK(s1->status == 201);
    CHECK(cli.Post("/subscriptions", json{{"webhook", hook.url() + "/hook"}}.dump(), "application/json")->status == 200);
    CHECK(cli.Post("/subscriptions", json{{"outbox", "outbox.txt"}}.dump(), "application/json")->status == 201);
    CHECK(cli.Post("/subscriptions", json{{"webhook", "http://127.0.0.1:1/dead"}}.dump(), "application/json")->status ==
          201);

    const auto body = random_bytes(32, 5);
    CHECK(put_artifact(svc.url(), "/artifacts/ev-1/ev-1.iqf", body, sha256_hex(body))->status == 200);
    json ev{{"event_id", "ev-1"},
            {"t0", "2026-10-16T12:00:00.000Z"},
            {"peak_freq_hz", 315e6},
            {"peak_power_dbm", -36.0},
            {"iq_path", "ev-1.iqf"}};
    CHECK(cli.Put("/events/ev-1", ev.dump(), "application/json")->status == 200);
    CHECK(cli.Put("/events/ev-1", ev.dump(), "application/json")->status == 200);

    auto statuses = [&] {
        std::map<std::string, json> by_sub;
        for (const auto& n : get_json(svc.url(), "/notifications")) by_sub[n.at("subscriber")] = n;
        return by_sub;
    };
    REQUIRE(wait_until([&] {
        const auto s = statuses();
        return s.size() == 3 && s.at("sub-1").at("status") == "delivered" && s.at("sub-2").at("status") == "delivered" &&
               s.at("sub-3").at("status") == "dead_letter";
    }));
    const auto s = statuses();
    CHECK(s.at("sub-1").at("attempts") == 3);
    CHECK(s.at("sub-2").at("attempts") == 1);
    CHECK(s.at("sub-3").at("attempts") == 10);
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    CHECK(hook_ok == 1);
    CHECK(hook_calls == 3);
    CHECK(keys == std::vector<std::string>{"sub-1/ev-1"});

    const auto outbox = codec::read_file(dir / "remote/outbox.txt");
    const std::string text(outbox.begin(), outbox.end());
    CHECK(text.starts_with("Subject: New PD signal detected at 315.000 MHz, -36.000 dBm\n"));
    CHECK(text.find("Event: ev-1\n") != std::string::npos);
    CHECK(text.find("/artifacts/ev-1/ev-1.iqf") != std::string::npos);

    // Restart: delivered and dead-lettered notifications stay settled.
    svc.stop();
    RemoteService again(cfg);
    again.start();
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    CHECK(hook_calls == 3);
    const auto outbox2 = codec::read_file(dir / "remote/outbox.txt");
    CHECK(outbox2.size() == outbox.size());
}
