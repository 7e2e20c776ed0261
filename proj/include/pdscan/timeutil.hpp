#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pdscan {

std::int64_t now_unix_ms();

// 2024-05-01T12:00:00.123Z
std::string format_iso_ms(std::int64_t unix_ms);
// 20240501T120000.123Z, used in artifact names
std::string format_compact_ms(std::int64_t unix_ms);
// Accepts the ISO form above (fraction optional) or a bare integer of unix ms.
std::int64_t parse_time_ms(std::string_view text);

}  // namespace pdscan
