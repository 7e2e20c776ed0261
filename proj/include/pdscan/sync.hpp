#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace pdscan::sync {

namespace fs = std::filesystem;

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const fs::path& path);

enum class SyncState { Pending, Uploaded, Acked };
std::string_view to_string(SyncState s);
SyncState parse_state(std::string_view s);

enum class RecordKind { Artifact, Event };
std::string_view to_string(RecordKind k);
RecordKind parse_kind(std::string_view s);

// Upload state of one artifact (or of an event's metadata registration).
// Key: (event_id, path). path is relative to the scanner's data directory;
// for Event records it is the fixed marker "#event".
struct SyncRecord {
    std::string event_id;
    std::string path;
    RecordKind kind = RecordKind::Artifact;
    std::string content_hash;  // sha256 hex
    std::uint64_t bytes = 0;
    SyncState state = SyncState::Pending;
    std::uint32_t attempts = 0;
    std::optional<std::string> last_error;

    std::string key() const { return event_id + "/" + path; }
    friend bool operator==(const SyncRecord&, const SyncRecord&) = default;
};

inline constexpr std::string_view kEventMarker = "#event";

nlohmann::json to_json(const SyncRecord& r);
SyncRecord sync_record_from_json(const nlohmann::json& j);

// Exponential backoff: min(cap, base * 2^(attempt-1)), with jitter drawing
// uniformly from [d/2, d].
struct BackoffPolicy {
    double base_s = 1.0;
    double cap_s = 60.0;
    bool jitter = true;

    double nominal(std::uint32_t attempt) const;
    double delay(std::uint32_t attempt, std::mt19937_64& rng) const;
};

// Names accepted as event ids, sweep ids and artifact file names.
bool valid_name(std::string_view s);

// "http://host:port[/prefix]" split into origin and path prefix.
struct RemoteUrl {
    std::string origin;
    std::string prefix;
};
RemoteUrl parse_remote_url(const std::string& url);

}  // namespace pdscan::sync
