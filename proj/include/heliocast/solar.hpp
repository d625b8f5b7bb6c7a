// Sunrise and sunset times, and the day/night predicate built on them.
//
// Times come either from the closed-form solar position approximation below
// (Fourier series for declination and the equation of time, hour angle at
// zenith 90.833 deg so refraction and the solar disc are accounted for) or
// from a user-supplied table. Accuracy of the computed times is a couple of
// minutes at mid and low latitudes, which is enough to gate a ratio that is
// meaningless at night anyway.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "heliocast/core.hpp"
#include "heliocast/time.hpp"

namespace heliocast::solar {

struct SunEvents {
    MinuteTimestamp sunrise{};
    MinuteTimestamp sunset{};
};

namespace detail {

constexpr double kPi = std::numbers::pi;
constexpr double kDegToRad = kPi / 180.0;

inline int day_of_year(const CivilDate& d) {
    return static_cast<int>(days_from_civil(d.year, d.month, d.day) -
                            days_from_civil(d.year, 1, 1)) +
           1;
}

}  // namespace detail

// Sunrise and sunset for the given civil date at (latitude, longitude),
// rounded to the minute. Latitude north positive, longitude east positive.
// Throws ConfigError when the sun never crosses the horizon that day
// (polar day or night).
inline SunEvents sunrise_sunset(const CivilDate& date, double latitude, double longitude) {
    using namespace detail;
    if (!(latitude >= -90.0 && latitude <= 90.0))
        throw ConfigError("latitude out of range");
    if (!(longitude >= -180.0 && longitude <= 180.0))
        throw ConfigError("longitude out of range");

    const int doy = day_of_year(date);
    const int year_days = is_leap_year(date.year) ? 366 : 365;
    // Fractional year at solar noon.
    const double g = 2.0 * kPi / year_days * (doy - 1 + 0.5);

    // Equation of time, minutes.
    const double eqtime = 229.18 * (0.000075 + 0.001868 * std::cos(g) - 0.032077 * std::sin(g) -
                                    0.014615 * std::cos(2 * g) - 0.040849 * std::sin(2 * g));
    // Solar declination, radians.
    const double decl = 0.006918 - 0.399912 * std::cos(g) + 0.070257 * std::sin(g) -
                        0.006758 * std::cos(2 * g) + 0.000907 * std::sin(2 * g) -
                        0.002697 * std::cos(3 * g) + 0.00148 * std::sin(3 * g);

    const double lat = latitude * kDegToRad;
    const double cos_zenith = std::cos(90.833 * kDegToRad);
    const double cos_ha =
        cos_zenith / (std::cos(lat) * std::cos(decl)) - std::tan(lat) * std::tan(decl);
    if (cos_ha < -1.0 || cos_ha > 1.0)
        throw ConfigError("no sunrise/sunset at latitude " + std::to_string(latitude) + " on " +
                          format_date(date) + " (polar day or night)");
    const double ha_deg = std::acos(cos_ha) / kDegToRad;

    // Minutes past 00:00 UTC of the same civil date.
    const double rise_min = 720.0 - 4.0 * (longitude + ha_deg) - eqtime;
    const double set_min = 720.0 - 4.0 * (longitude - ha_deg) - eqtime;

    const std::int64_t day_base = days_from_civil(date.year, date.month, date.day) * 1440;
    SunEvents ev;
    ev.sunrise = MinuteTimestamp{day_base + static_cast<std::int64_t>(std::llround(rise_min))};
    ev.sunset = MinuteTimestamp{day_base + static_cast<std::int64_t>(std::llround(set_min))};
    return ev;
}

// Day/night oracle over a contiguous range of dates. Night is the half-open
// interval [sunset, next sunrise): the sunset minute itself is night, the
// sunrise minute is day.
class SunTimes {
  public:
    // Computed provider covering local civil dates [first_day, last_day].
    static SunTimes computed(double latitude, double longitude, int tz_offset_minutes,
                             const CivilDate& first_day, const CivilDate& last_day) {
        SunTimes st;
        st.tz_offset_minutes_ = tz_offset_minutes;
        std::int64_t d0 = days_from_civil(first_day.year, first_day.month, first_day.day);
        std::int64_t d1 = days_from_civil(last_day.year, last_day.month, last_day.day);
        if (d1 < d0) throw ConfigError("SunTimes: last day before first day");
        // One day of margin on each side so every minute of the covered range
        // has a bracketing event.
        for (std::int64_t d = d0 - 1; d <= d1 + 1; ++d) {
            auto [y, m, day] = civil_from_days(d);
            st.add_day(sunrise_sunset(CivilDate{y, m, day}, latitude, longitude));
        }
        st.coverage_begin_ = from_civil({first_day, 0, 0}, tz_offset_minutes);
        st.coverage_end_ = from_civil({last_day, 0, 0}, tz_offset_minutes) + 1440;
        st.finalize();
        return st;
    }

    // Table provider. Each line: "YYYY-MM-DD,HH:MM,HH:MM" (date, sunrise,
    // sunset in local civil time). '#' starts a comment. The table must cover
    // a contiguous run of dates.
    static SunTimes from_table_file(const std::string& path, int tz_offset_minutes) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open sun table '" + path + "'");
        SunTimes st;
        st.tz_offset_minutes_ = tz_offset_minutes;
        std::string line;
        std::int64_t prev_day = 0;
        bool first = true;
        std::int64_t last_day = 0;
        MinuteTimestamp first_rise{};
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            int y, mo, d, rh, rm, sh, sm;
            if (std::sscanf(line.c_str(), "%d-%d-%d,%d:%d,%d:%d", &y, &mo, &d, &rh, &rm, &sh,
                            &sm) != 7)
                throw ConfigError("sun table '" + path + "' line " + std::to_string(line_no) +
                                  ": expected YYYY-MM-DD,HH:MM,HH:MM");
            CivilDate date{y, mo, d};
            std::int64_t day = days_from_civil(y, mo, d);
            if (!first && day != prev_day + 1)
                throw ConfigError("sun table '" + path + "' line " + std::to_string(line_no) +
                                  ": dates must be consecutive");
            SunEvents ev;
            ev.sunrise = from_civil({date, rh, rm}, tz_offset_minutes);
            ev.sunset = from_civil({date, sh, sm}, tz_offset_minutes);
            if (first) first_rise = ev.sunrise;
            last_day = day;
            prev_day = day;
            first = false;
            st.add_day(ev);
        }
        if (first) throw ConfigError("sun table '" + path + "' has no entries");
        // Decidable range: from the first listed sunrise (nothing earlier has
        // a bracketing event) to local midnight after the last listed day
        // (still night after its sunset).
        st.coverage_begin_ = first_rise;
        st.coverage_end_ = MinuteTimestamp{(last_day + 1) * 1440 - tz_offset_minutes};
        st.finalize();
        return st;
    }

    int tz_offset_minutes() const { return tz_offset_minutes_; }
    MinuteTimestamp coverage_begin() const { return coverage_begin_; }
    MinuteTimestamp coverage_end() const { return coverage_end_; }

    // True when ts falls in [sunset, next sunrise). Throws ConfigError when
    // ts is outside the covered range.
    bool is_nocturnal(MinuteTimestamp ts) const {
        if (ts < coverage_begin_ || !(ts < coverage_end_))
            throw ConfigError("sun times not available for " + format_timestamp(ts) + " UTC");
        // Latest event at or before ts decides: a rise means day, a set night.
        auto it = std::upper_bound(events_.begin(), events_.end(), ts,
                                   [](MinuteTimestamp t, const Event& e) { return t < e.when; });
        if (it == events_.begin())
            throw ConfigError("sun times not available for " + format_timestamp(ts) + " UTC");
        return !std::prev(it)->is_rise;
    }

    // Sun events for the local civil day containing ts.
    SunEvents events_for_day(MinuteTimestamp ts) const {
        std::int64_t day = local_day_of(ts, tz_offset_minutes_);
        auto it = by_day_.find(day);
        if (it == by_day_.end())
            throw ConfigError("sun times not available for day of " + format_timestamp(ts) +
                              " UTC");
        return it->second;
    }

  private:
    struct Event {
        MinuteTimestamp when;
        bool is_rise;
    };

    void add_day(const SunEvents& ev) {
        if (!(ev.sunrise < ev.sunset))
            throw ConfigError("sun table: sunrise must precede sunset within each day");
        by_day_[local_day_of(ev.sunrise, tz_offset_minutes_)] = ev;
        events_.push_back(Event{ev.sunrise, true});
        events_.push_back(Event{ev.sunset, false});
    }

    void finalize() {
        std::sort(events_.begin(), events_.end(),
                  [](const Event& a, const Event& b) { return a.when < b.when; });
        for (std::size_t i = 1; i < events_.size(); ++i)
            if (events_[i].is_rise == events_[i - 1].is_rise)
                throw ConfigError("sun events do not alternate; check the sun table");
    }

    int tz_offset_minutes_ = 0;
    std::vector<Event> events_;
    std::map<std::int64_t, SunEvents> by_day_;
    MinuteTimestamp coverage_begin_{};
    MinuteTimestamp coverage_end_{};
};

}  // namespace heliocast::solar
