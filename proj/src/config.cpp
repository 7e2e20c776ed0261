#include "pdscan/config.hpp"

#include "json_util.hpp"
#include "pdscan/codec.hpp"
#include "pdscan/errors.hpp"
#include "pdscan/sync.hpp"

#include <charconv>
#include <cmath>

extern char** environ;

namespace pdscan::config {

namespace {

template <class T>
T parse_number(std::string_view text, const std::string& what) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw ConfigError(what + ": not a number: '" + std::string(text) + "'");
    return value;
}

}  // namespace

LogLevel parse_log_level(std::string_view s) {
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    if (s == "warn") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    throw ConfigError("log_level must be debug, info, warn or error, got '" + std::string(s) + "'");
}

std::string_view to_string(LogLevel level) noexcept {
    switch (level) {
        case LogLevel::Debug: return "debug";
        case LogLevel::Info: return "info";
        case LogLevel::Warn: return "warn";
        case LogLevel::Error: return "error";
    }
    return "info";
}

Bind parse_bind(std::string_view text) {
    Bind b;
    const auto colon = text.rfind(':');
    std::string_view port = text;
    if (colon != std::string_view::npos) {
        if (colon > 0) b.host = std::string(text.substr(0, colon));
        port = text.substr(colon + 1);
    }
    b.port = parse_number<int>(port, "bind port");
    if (b.port < 0 || b.port > 65535) throw ConfigError("bind port out of range: " + std::string(text));
    return b;
}

std::string to_string(const Bind& bind) { return bind.host + ":" + std::to_string(bind.port); }

void RunConfig::validate() const {
    plan.validate();
    frontend.validate();
    if (plan.span_hz > frontend.iq_rate_hz) {
        throw ConfigError("plan span exceeds the front-end IQ rate");
    }
    if (std::floor(plan.dwell_s * frontend.iq_rate_hz) < static_cast<double>(plan.n_fft)) {
        throw ConfigError("dwell too short for n_fft at the front-end IQ rate");
    }
    if (scene_path && !fs::exists(*scene_path)) throw ConfigError("scene file not found: " + scene_path->string());
    if (data_dir.empty()) throw ConfigError("data_dir must not be empty");
    if (storage_dir.empty()) throw ConfigError("storage_dir must not be empty");
    if (sync_parallelism == 0) throw ConfigError("sync_parallelism must be at least 1");
    sync::parse_remote_url(remote_url);
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base, const fs::path& base_dir) {
    using detail::get_or;
    detail::check_keys(j,
                       {"plan", "frontend", "scene", "data_dir", "storage_dir", "remote_url", "token", "control_bind",
                        "serve_bind", "log_level", "max_store_bytes", "sync_parallelism"},
                       "config");
    auto resolve = [&](const fs::path& p) { return p.is_relative() && !base_dir.empty() ? base_dir / p : p; };
    if (j.contains("plan")) base.plan = sweep::plan_from_json(j.at("plan"), base.plan);
    if (j.contains("frontend")) base.frontend = frontend::frontend_from_json(j.at("frontend"));
    if (j.contains("scene")) {
        base.scene_path = resolve(get_or<std::string>(j, "scene", ""));
    }
    if (j.contains("data_dir")) base.data_dir = resolve(get_or<std::string>(j, "data_dir", ""));
    if (j.contains("storage_dir")) base.storage_dir = resolve(get_or<std::string>(j, "storage_dir", ""));
    base.remote_url = get_or<std::string>(j, "remote_url", base.remote_url);
    base.token = get_or<std::string>(j, "token", base.token);
    if (j.contains("control_bind")) base.control_bind = parse_bind(get_or<std::string>(j, "control_bind", ""));
    if (j.contains("serve_bind")) base.serve_bind = parse_bind(get_or<std::string>(j, "serve_bind", ""));
    if (j.contains("log_level")) base.log_level = parse_log_level(get_or<std::string>(j, "log_level", ""));
    base.max_store_bytes = get_or<std::uint64_t>(j, "max_store_bytes", base.max_store_bytes);
    base.sync_parallelism = get_or<std::size_t>(j, "sync_parallelism", base.sync_parallelism);
    return base;
}

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j{{"plan", sweep::plan_to_json(c.plan)},
                     {"frontend", frontend::frontend_to_json(c.frontend)},
                     {"data_dir", c.data_dir.string()},
                     {"storage_dir", c.storage_dir.string()},
                     {"remote_url", c.remote_url},
                     {"token", c.token},
                     {"serve_bind", to_string(c.serve_bind)},
                     {"log_level", std::string(to_string(c.log_level))},
                     {"max_store_bytes", c.max_store_bytes},
                     {"sync_parallelism", c.sync_parallelism}};
    if (c.scene_path) j["scene"] = c.scene_path->string();
    if (c.control_bind) j["control_bind"] = to_string(*c.control_bind);
    return j;
}

Environment process_environment() {
    Environment env;
    for (char** e = environ; e && *e; ++e) {
        const std::string_view kv(*e);
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos || !kv.starts_with("PDSCAN_")) continue;
        env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return env;
}

void apply_environment(RunConfig& c, const Environment& env) {
    auto get = [&](const char* key) -> const std::string* {
        const auto it = env.find(key);
        return it == env.end() ? nullptr : &it->second;
    };
    if (auto v = get("PDSCAN_SCENE")) c.scene_path = *v;
    if (auto v = get("PDSCAN_DATA_DIR")) c.data_dir = *v;
    if (auto v = get("PDSCAN_STORAGE_DIR")) c.storage_dir = *v;
    if (auto v = get("PDSCAN_REMOTE_URL")) c.remote_url = *v;
    if (auto v = get("PDSCAN_TOKEN")) c.token = *v;
    if (auto v = get("PDSCAN_CONTROL_BIND")) c.control_bind = parse_bind(*v);
    if (auto v = get("PDSCAN_SERVE_BIND")) c.serve_bind = parse_bind(*v);
    if (auto v = get("PDSCAN_LOG_LEVEL")) c.log_level = parse_log_level(*v);
    if (auto v = get("PDSCAN_THRESHOLD_DBM")) c.plan.threshold_dbm = parse_number<double>(*v, "PDSCAN_THRESHOLD_DBM");
    if (auto v = get("PDSCAN_MAX_STORE_BYTES")) {
        c.max_store_bytes = parse_number<std::uint64_t>(*v, "PDSCAN_MAX_STORE_BYTES");
    }
}

RunConfig load_run_config(const std::optional<fs::path>& file, const Environment& env) {
    RunConfig c;
    if (file) {
        if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
        const auto bytes = codec::read_file(*file);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes.begin(), bytes.end());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + file->string() + ": " + e.what());
        }
        c = run_config_from_json(j, c, file->parent_path());
    }
    apply_environment(c, env);
    return c;
}

}  // namespace pdscan::config
