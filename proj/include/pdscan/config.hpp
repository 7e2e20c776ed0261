#pragma once

#include "pdscan/frontend.hpp"
#include "pdscan/sweep.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace pdscan::config {

namespace fs = std::filesystem;

enum class LogLevel { Debug, Info, Warn, Error };

LogLevel parse_log_level(std::string_view s);  // throws ConfigError
std::string_view to_string(LogLevel level) noexcept;

struct Bind {
    std::string host = "127.0.0.1";
    int port = 0;
    friend bool operator==(const Bind&, const Bind&) = default;
};

// "host:port", ":port" or "port". Throws ConfigError.
Bind parse_bind(std::string_view text);
std::string to_string(const Bind& bind);

struct RunConfig {
    sweep::SweepPlan plan;
    frontend::FrontEndConfig frontend;
    std::optional<fs::path> scene_path;  // simulator scene; empty scene when unset
    fs::path data_dir = "data";
    fs::path storage_dir = "remote";
    std::string remote_url = "http://127.0.0.1:8080";
    std::string token;
    std::optional<Bind> control_bind;  // scan control endpoint, off when unset
    Bind serve_bind{"127.0.0.1", 8080};
    LogLevel log_level = LogLevel::Info;
    std::uint64_t max_store_bytes = 0;  // 0 = unlimited
    std::size_t sync_parallelism = 4;

    // Cross-field checks; throws ConfigError.
    void validate() const;
};

// Keys: plan, frontend, scene, data_dir, storage_dir, remote_url, token,
// control_bind, serve_bind, log_level, max_store_bytes, sync_parallelism.
// Unknown keys are rejected. Relative paths (scene, data_dir, storage_dir)
// resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {}, const fs::path& base_dir = {});
nlohmann::json to_json(const RunConfig& config);

using Environment = std::map<std::string, std::string>;

// PDSCAN_* variables of the current process.
Environment process_environment();

// PDSCAN_SCENE, PDSCAN_DATA_DIR, PDSCAN_STORAGE_DIR, PDSCAN_REMOTE_URL,
// PDSCAN_TOKEN, PDSCAN_CONTROL_BIND, PDSCAN_SERVE_BIND, PDSCAN_LOG_LEVEL,
// PDSCAN_THRESHOLD_DBM, PDSCAN_MAX_STORE_BYTES. Others are ignored.
void apply_environment(RunConfig& config, const Environment& env);

// Defaults, then the file, then the environment. Not validated.
RunConfig load_run_config(const std::optional<fs::path>& file, const Environment& env);

}  // namespace pdscan::config
