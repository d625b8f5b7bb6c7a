// Minute-resolution timestamps and the hourly/minute index arithmetic used
// throughout the forecasting pipeline.
//
// Timestamps are integer minutes since 1970-01-01 00:00 UTC. Source files
// carry local civil time; a fixed minute offset (no DST) converts between
// the two at parse/format time.
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <string>

#include "heliocast/core.hpp"

namespace heliocast {

struct MinuteTimestamp {
    std::int64_t minutes_since_epoch = 0;

    constexpr auto operator<=>(const MinuteTimestamp&) const = default;

    constexpr MinuteTimestamp operator+(std::int64_t m) const {
        return MinuteTimestamp{minutes_since_epoch + m};
    }
    constexpr MinuteTimestamp operator-(std::int64_t m) const {
        return MinuteTimestamp{minutes_since_epoch - m};
    }
    // Difference of two timestamps is an exact minute count.
    constexpr std::int64_t operator-(const MinuteTimestamp& o) const {
        return minutes_since_epoch - o.minutes_since_epoch;
    }
};

// Hour index offset "T-k": k whole hours before the prediction horizon.
struct HourIndexOffset {
    int k = 1;
};

// Maps the hourly lag T-k onto the equivalent 1-minute lag. T-1 and t-1
// denote the same slot, each extra hour adds 60 minutes, hence 60*(k-1)+1.
inline std::int64_t hour_offset_to_minute_offset(int k) {
    if (k < 1) throw ConfigError("hour offset k must be >= 1, got " + std::to_string(k));
    return 60LL * (k - 1) + 1;
}

inline std::int64_t hour_offset_to_minute_offset(HourIndexOffset h) {
    return hour_offset_to_minute_offset(h.k);
}

// ---------------------------------------------------------------------------
// Civil calendar arithmetic (proleptic Gregorian), Howard Hinnant's
// algorithms. Only what the pipeline needs: fixed-offset minute conversion,
// no general timezone support.
// ---------------------------------------------------------------------------

struct CivilDate {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31
};

struct CivilDateTime {
    CivilDate date;
    int hour = 0;    // 0..23
    int minute = 0;  // 0..59
};

inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2) / 5 +
                         static_cast<unsigned>(d) - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return CivilDate{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

inline bool is_leap_year(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline int days_in_month(int y, int m) {
    static constexpr std::array<int, 12> lengths = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (m == 2 && is_leap_year(y)) return 29;
    return lengths[static_cast<std::size_t>(m - 1)];
}

// Civil (local) date-time -> UTC minutes, given the fixed local offset.
inline MinuteTimestamp from_civil(const CivilDateTime& c, int tz_offset_minutes = 0) {
    std::int64_t days = days_from_civil(c.date.year, c.date.month, c.date.day);
    std::int64_t local_minutes = days * 1440 + c.hour * 60 + c.minute;
    return MinuteTimestamp{local_minutes - tz_offset_minutes};
}

inline CivilDateTime to_civil(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    std::int64_t local = ts.minutes_since_epoch + tz_offset_minutes;
    std::int64_t days = local >= 0 ? local / 1440 : (local - 1439) / 1440;
    int mod = static_cast<int>(local - days * 1440);
    CivilDateTime c;
    c.date = civil_from_days(days);
    c.hour = mod / 60;
    c.minute = mod % 60;
    return c;
}

inline int year_of(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    return to_civil(ts, tz_offset_minutes).date.year;
}
inline int month_of(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    return to_civil(ts, tz_offset_minutes).date.month;
}
inline int hour_of(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    return to_civil(ts, tz_offset_minutes).hour;
}
// Local civil day as days-since-epoch; the key used for sun time lookup.
inline std::int64_t local_day_of(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    std::int64_t local = ts.minutes_since_epoch + tz_offset_minutes;
    return local >= 0 ? local / 1440 : (local - 1439) / 1440;
}

// ---------------------------------------------------------------------------
// Textual form: "YYYY-MM-DD HH:MM:SS". Parsing is strict; the seconds field
// must be present and zero (every sample sits on an exact minute).
// ---------------------------------------------------------------------------

namespace detail {
inline int parse_int_field(const std::string& s, std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') throw Error("non-digit in timestamp field");
        v = v * 10 + (c - '0');
    }
    return v;
}
}  // namespace detail

inline MinuteTimestamp parse_timestamp(const std::string& s, int tz_offset_minutes = 0) {
    // Expected layout: 2014-01-05 08:59:00
    if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != ' ' && s[10] != 'T') ||
        s[13] != ':' || s[16] != ':') {
        throw Error("malformed timestamp '" + s + "'");
    }
    CivilDateTime c;
    c.date.year = detail::parse_int_field(s, 0, 4);
    c.date.month = detail::parse_int_field(s, 5, 2);
    c.date.day = detail::parse_int_field(s, 8, 2);
    c.hour = detail::parse_int_field(s, 11, 2);
    c.minute = detail::parse_int_field(s, 14, 2);
    int second = detail::parse_int_field(s, 17, 2);
    if (c.date.month < 1 || c.date.month > 12 || c.date.day < 1 ||
        c.date.day > days_in_month(c.date.year, c.date.month) || c.hour > 23 || c.minute > 59) {
        throw Error("out-of-range timestamp '" + s + "'");
    }
    if (second != 0) throw ValidationError("nonzero seconds field in timestamp '" + s + "'");
    return from_civil(c, tz_offset_minutes);
}

inline std::string format_timestamp(MinuteTimestamp ts, int tz_offset_minutes = 0) {
    CivilDateTime c = to_civil(ts, tz_offset_minutes);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d:00", c.date.year, c.date.month,
                  c.date.day, c.hour, c.minute);
    return std::string(buf);
}

inline std::string format_date(const CivilDate& d) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
    return std::string(buf);
}

inline CivilDate parse_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw Error("malformed date '" + s + "'");
    CivilDate d;
    d.year = detail::parse_int_field(s, 0, 4);
    d.month = detail::parse_int_field(s, 5, 2);
    d.day = detail::parse_int_field(s, 8, 2);
    if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > days_in_month(d.year, d.month)) {
        throw Error("out-of-range date '" + s + "'");
    }
    return d;
}

}  // namespace heliocast
