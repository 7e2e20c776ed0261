#pragma once

#include "pdscan/errors.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>
#include <string_view>

namespace pdscan::detail {

// Rejects keys outside `allowed`; config and scene files are strict.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view context) {
    if (!j.is_object()) {
        throw ConfigError(std::string(context) + ": expected an object");
    }
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || key == a;
        if (!known) {
            throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
        }
    }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

template <class T>
T require(const nlohmann::json& j, const char* key, std::string_view context) {
    if (!j.contains(key)) {
        throw ConfigError(std::string(context) + ": missing key '" + key + "'");
    }
    return get_or<T>(j, key, T{});
}

// Numbers, null and the strings "-inf"/"inf" are accepted; null means -inf.
inline double get_db(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_null()) return -std::numeric_limits<double>::infinity();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        throw ConfigError(std::string("bad value for '") + key + "': " + s);
    }
    if (!v.is_number()) {
        throw ConfigError(std::string("bad value for '") + key + "'");
    }
    return v.get<double>();
}

inline nlohmann::json db_to_json(double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    return v;
}

}  // namespace pdscan::detail
