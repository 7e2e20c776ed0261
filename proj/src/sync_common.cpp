#include "pdscan/sync.hpp"

#include "pdscan/codec.hpp"
#include "pdscan/errors.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <memory>

namespace pdscan::sync {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_file(const fs::path& path) { return sha256_hex(codec::read_file(path)); }

std::string_view to_string(SyncState s) {
    switch (s) {
        case SyncState::Pending: return "pending";
        case SyncState::Uploaded: return "uploaded";
        case SyncState::Acked: return "acked";
    }
    return "unknown";
}

SyncState parse_state(std::string_view s) {
    if (s == "pending") return SyncState::Pending;
    if (s == "uploaded") return SyncState::Uploaded;
    if (s == "acked") return SyncState::Acked;
    throw FormatError("unknown sync state '" + std::string(s) + "'");
}

std::string_view to_string(RecordKind k) { return k == RecordKind::Event ? "event" : "artifact"; }

RecordKind parse_kind(std::string_view s) {
    if (s == "artifact") return RecordKind::Artifact;
    if (s == "event") return RecordKind::Event;
    throw FormatError("unknown record kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const SyncRecord& r) {
    return {{"event_id", r.event_id},
            {"path", r.path},
            {"kind", std::string(to_string(r.kind))},
            {"content_hash", r.content_hash},
            {"bytes", r.bytes},
            {"state", std::string(to_string(r.state))},
            {"attempts", r.attempts},
            {"last_error", r.last_error ? nlohmann::json(*r.last_error) : nlohmann::json(nullptr)}};
}

SyncRecord sync_record_from_json(const nlohmann::json& j) {
    SyncRecord r;
    r.event_id = j.at("event_id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.kind = parse_kind(j.at("kind").get<std::string>());
    r.content_hash = j.at("content_hash").get<std::string>();
    r.bytes = j.at("bytes").get<std::uint64_t>();
    r.state = parse_state(j.at("state").get<std::string>());
    r.attempts = j.at("attempts").get<std::uint32_t>();
    if (j.contains("last_error") && !j.at("last_error").is_null()) r.last_error = j.at("last_error").get<std::string>();
    return r;
}

double BackoffPolicy::nominal(std::uint32_t attempt) const {
    if (attempt == 0) return 0.0;
    const double d = base_s * std::ldexp(1.0, static_cast<int>(std::min<std::uint32_t>(attempt - 1, 60)));
    return std::min(cap_s, d);
}

double BackoffPolicy::delay(std::uint32_t attempt, std::mt19937_64& rng) const {
    const double d = nominal(attempt);
    if (!jitter || d <= 0.0) return d;
    return std::uniform_real_distribution<double>(d / 2.0, d)(rng);
}

bool valid_name(std::string_view s) {
    if (s.empty() || s.size() > 200 || s == "." || s == "..") return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
               c == '-';
    });
}

RemoteUrl parse_remote_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
        throw ConfigError("remote url must start with http://, got '" + url + "'");
    }
    const auto slash = url.find('/', scheme + 3);
    RemoteUrl out;
    out.origin = url.substr(0, slash);
    if (out.origin.size() <= scheme + 3) throw ConfigError("remote url has no host: '" + url + "'");
    if (slash != std::string::npos) {
        out.prefix = url.substr(slash);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    return out;
}

}  // namespace pdscan::sync
