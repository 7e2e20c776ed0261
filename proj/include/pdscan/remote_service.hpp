#pragma once

#include "pdscan/sync.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <string>

namespace pdscan::sync {

struct ServiceConfig {
    fs::path storage_dir = "remote";
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string token;
    std::string public_url;  // base for artifact links in notifications; default http://host:port
    BackoffPolicy notify_backoff;
    std::uint32_t notify_max_attempts = 10;
    double notify_timeout_s = 5.0;
};

// Artifact store and event registry over HTTP/1.1.
//
//   PUT  /artifacts/{event_id}/{filename}   body = bytes, header X-Content-SHA256
//        200 {"status":"stored"|"exists","sha256"}; 409 hash_conflict; 400 hash_mismatch
//   GET  /artifacts/{event_id}/{filename}   bytes, header X-Content-SHA256; 404 not_found
//   PUT  /events/{event_id}                 event metadata JSON; 200 registered|exists; 409 on change
//   GET  /events?since=<ISO time | unix ms> events with t0 > since, oldest first
//   PUT  /spectra/{sweep_id}                stitched CSV, headers X-Content-SHA256, X-Sweep-Start
//   GET  /spectrum/latest                   most recent stitched spectrum CSV
//   POST /subscriptions                     {"webhook": url} or {"outbox": path}
//   GET  /subscriptions, GET /notifications, GET /health
//
// Errors are JSON {"error": <reason>, "detail"?: text}. Everything is journaled
// to storage_dir/journal.jsonl and replayed on start.
class RemoteService {
public:
    explicit RemoteService(ServiceConfig config);
    ~RemoteService();
    RemoteService(const RemoteService&) = delete;
    RemoteService& operator=(const RemoteService&) = delete;

    // Binds and serves in the background. Throws IoError if the port is taken.
    void start();
    void stop();
    int port() const noexcept;
    std::string url() const;

    nlohmann::json health() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace pdscan::sync
