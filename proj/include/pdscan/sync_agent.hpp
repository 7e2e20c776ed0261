#pragma once

#include "pdscan/sync.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace pdscan::sync {

struct AgentConfig {
    fs::path data_dir = "data";  // scanner data directory (events.jsonl, sweeps.jsonl, artifacts)
    fs::path state_dir;          // default: data_dir/.sync
    std::string remote_url = "http://127.0.0.1:8080";
    std::string token;
    BackoffPolicy backoff;
    std::size_t parallelism = 4;
    double poll_interval_s = 0.25;
    double http_timeout_s = 5.0;
    bool upload_spectra = true;
};

// Tails the scanner's event index and pushes each event's artifacts, then the
// event itself, to the remote store. State lives in state_dir:
//   records.jsonl   append-only log of SyncRecord snapshots (last line per key wins)
//   cursor.json     byte offsets already consumed from events.jsonl / sweeps.jsonl
//   events/<id>.json  event bodies awaiting registration
//   spectrum.json   newest stitched spectrum and whether it has been pushed
class SyncAgent {
public:
    explicit SyncAgent(AgentConfig config);
    ~SyncAgent();
    SyncAgent(const SyncAgent&) = delete;
    SyncAgent& operator=(const SyncAgent&) = delete;

    // Background watcher + uploader pool.
    void start();
    void stop();

    // Synchronous steps, used by start() and directly by tests.
    // Reads new index lines and creates Pending records. Returns records created.
    std::size_t scan_once();
    // One upload attempt for every record that is eligible now (backoff is
    // honoured unless ignore_backoff). Returns the number of attempts made.
    std::size_t upload_once(bool ignore_backoff = false);

    std::vector<SyncRecord> records() const;
    std::size_t outstanding() const;  // records not yet Acked, plus an unpushed spectrum
    nlohmann::json health() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace pdscan::sync
