#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "prediab/error.hpp"

namespace prediab {

using Instant = std::chrono::sys_seconds;
using Minutes = std::chrono::minutes;
using Seconds = std::chrono::seconds;

namespace detail {

inline bool read_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
}

}  // namespace detail

/// Parses `YYYY-MM-DDTHH:MM:SS[.fff](Z|±HH:MM)` into a UTC instant.
/// Fractional seconds are truncated. Throws InputError on malformed text.
inline Instant parse_iso8601(std::string_view s) {
    auto fail = [&]() -> Instant { throw InputError("malformed ISO-8601 timestamp '" + std::string(s) + "'"); };
    int y, mo, d, h, mi, se;
    if (!detail::read_digits(s, 0, 4, y) || s.size() < 19 || s[4] != '-' ||
        !detail::read_digits(s, 5, 2, mo) || s[7] != '-' || !detail::read_digits(s, 8, 2, d) ||
        (s[10] != 'T' && s[10] != ' ') || !detail::read_digits(s, 11, 2, h) || s[13] != ':' ||
        !detail::read_digits(s, 14, 2, mi) || s[16] != ':' || !detail::read_digits(s, 17, 2, se))
        return fail();
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
    int offset_min = 0;
    if (pos < s.size() && s[pos] == 'Z') {
        ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
        int oh, om;
        int sign = s[pos] == '-' ? -1 : 1;
        if (!detail::read_digits(s, pos + 1, 2, oh) || pos + 3 >= s.size() || s[pos + 3] != ':' ||
            !detail::read_digits(s, pos + 4, 2, om))
            return fail();
        offset_min = sign * (oh * 60 + om);
        pos += 6;
    } else {
        return fail();
    }
    if (pos != s.size()) return fail();

    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || se > 60) return fail();
    return sys_days{ymd} + hours{h} + minutes{mi} + seconds{se} - minutes{offset_min};
}

inline std::string format_iso8601(Instant t) {
    using namespace std::chrono;
    auto day_point = floor<days>(t);
    year_month_day ymd{day_point};
    hh_mm_ss hms{t - day_point};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    return buf;
}

inline Instant from_unix_ms(std::int64_t ms) {
    return std::chrono::floor<Seconds>(std::chrono::sys_time<std::chrono::milliseconds>{std::chrono::milliseconds{ms}});
}

inline std::int64_t to_unix_ms(Instant t) {
    return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

/// Signed number of seconds from `a` to `b`.
inline std::int64_t seconds_between(Instant a, Instant b) { return (b - a).count(); }

}  // namespace prediab
