#include "pdscan/timeutil.hpp"

#include "pdscan/errors.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace pdscan {

namespace {

struct Civil {
    int year, month, day, hour, minute, second, millis;
};

Civil to_civil(std::int64_t unix_ms) {
    using namespace std::chrono;
    const sys_time<milliseconds> tp{milliseconds{unix_ms}};
    const auto day_point = floor<days>(tp);
    const year_month_day ymd{day_point};
    const hh_mm_ss tod{tp - day_point};
    return {static_cast<int>(ymd.year()),
            static_cast<int>(static_cast<unsigned>(ymd.month())),
            static_cast<int>(static_cast<unsigned>(ymd.day())),
            static_cast<int>(tod.hours().count()),
            static_cast<int>(tod.minutes().count()),
            static_cast<int>(tod.seconds().count()),
            static_cast<int>(tod.subseconds().count())};
}

int take_int(std::string_view text, std::size_t& pos, std::size_t digits) {
    if (pos + digits > text.size()) {
        throw ArgumentError("truncated timestamp '" + std::string(text) + "'");
    }
    int value = 0;
    const auto* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + digits, value);
    if (ec != std::errc{} || ptr != first + digits) {
        throw ArgumentError("malformed timestamp '" + std::string(text) + "'");
    }
    pos += digits;
    return value;
}

void expect(std::string_view text, std::size_t& pos, char c) {
    if (pos >= text.size() || text[pos] != c) {
        throw ArgumentError("malformed timestamp '" + std::string(text) + "'");
    }
    ++pos;
}

}  // namespace

std::int64_t now_unix_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string format_iso_ms(std::int64_t unix_ms) {
    const Civil c = to_civil(unix_ms);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", c.year, c.month, c.day, c.hour,
                  c.minute, c.second, c.millis);
    return buf;
}

std::string format_compact_ms(std::int64_t unix_ms) {
    const Civil c = to_civil(unix_ms);
    char buf[40];
    std::snprintf(buf, sizeof buf, "%04d%02d%02dT%02d%02d%02d.%03dZ", c.year, c.month, c.day, c.hour, c.minute,
                  c.second, c.millis);
    return buf;
}

std::int64_t parse_time_ms(std::string_view text) {
    if (text.empty()) {
        throw ArgumentError("empty timestamp");
    }
    if (text.find_first_not_of("-0123456789") == std::string_view::npos) {
        std::int64_t ms = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), ms);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            throw ArgumentError("malformed timestamp '" + std::string(text) + "'");
        }
        return ms;
    }
    std::size_t pos = 0;
    const int y = take_int(text, pos, 4);
    expect(text, pos, '-');
    const int mo = take_int(text, pos, 2);
    expect(text, pos, '-');
    const int d = take_int(text, pos, 2);
    expect(text, pos, 'T');
    const int h = take_int(text, pos, 2);
    expect(text, pos, ':');
    const int mi = take_int(text, pos, 2);
    expect(text, pos, ':');
    const int s = take_int(text, pos, 2);
    int millis = 0;
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        millis = take_int(text, pos, 3);
    }
    expect(text, pos, 'Z');
    if (pos != text.size()) {
        throw ArgumentError("trailing characters in timestamp '" + std::string(text) + "'");
    }

    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
        throw ArgumentError("invalid date in timestamp '" + std::string(text) + "'");
    }
    const auto tp = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis};
    return duration_cast<milliseconds>(tp.time_since_epoch()).count();
}

}  // namespace pdscan
