// Calendar arithmetic, timestamp text form, minute-grid containers and the
// deterministic RNG primitives.
#include <catch2/catch_amalgamated.hpp>

#include "heliocast/core.hpp"
#include "heliocast/series.hpp"
#include "heliocast/time.hpp"

using namespace heliocast;

TEST_CASE("civil day arithmetic agrees with a day-by-day walk") {
    // Oracle: advance one day at a time with days_in_month and compare.
    std::int64_t day = days_from_civil(1999, 12, 1);
    int y = 1999, m = 12, d = 1;
    for (int step = 0; step < 2000; ++step) {
        REQUIRE(days_from_civil(y, m, d) == day);
        CivilDate back = civil_from_days(day);
        REQUIRE(back.year == y);
        REQUIRE(back.month == m);
        REQUIRE(back.day == d);
        ++day;
        if (++d > days_in_month(y, m)) {
            d = 1;
            if (++m > 12) {
                m = 1;
                ++y;
            }
        }
    }
}

TEST_CASE("known calendar anchors") {
    REQUIRE(days_from_civil(1970, 1, 1) == 0);
    REQUIRE(days_from_civil(1970, 1, 2) == 1);
    REQUIRE(days_from_civil(1969, 12, 31) == -1);
    REQUIRE(days_from_civil(2000, 3, 1) == 11017);
    REQUIRE(is_leap_year(2000));
    REQUIRE(is_leap_year(2016));
    REQUIRE_FALSE(is_leap_year(1900));
    REQUIRE_FALSE(is_leap_year(2014));
    REQUIRE(days_in_month(2016, 2) == 29);
    REQUIRE(days_in_month(2015, 2) == 28);
}

TEST_CASE("timestamp parse and format round-trip") {
    const std::string text = "2014-06-21 17:44:00";
    MinuteTimestamp ts = parse_timestamp(text);
    REQUIRE(format_timestamp(ts) == text);
    // Epoch anchor.
    REQUIRE(parse_timestamp("1970-01-01 00:00:00").minutes_since_epoch == 0);
    REQUIRE(parse_timestamp("1970-01-01 00:01:00").minutes_since_epoch == 1);
    REQUIRE(parse_timestamp("1970-01-02 00:00:00").minutes_since_epoch == 1440);
}

TEST_CASE("timestamp parsing is strict") {
    REQUIRE_THROWS_AS(parse_timestamp("2014-06-21 17:44:30"), ValidationError);
    REQUIRE_THROWS(parse_timestamp("2014-6-21 17:44:00"));
    REQUIRE_THROWS(parse_timestamp("2014-06-21 17:44"));
    REQUIRE_THROWS(parse_timestamp("2014-13-01 00:00:00"));
    REQUIRE_THROWS(parse_timestamp("2014-02-29 00:00:00"));  // not a leap year
    REQUIRE_THROWS(parse_timestamp("2014-06-21 24:00:00"));
    REQUIRE_THROWS(parse_timestamp("garbage"));
    REQUIRE_NOTHROW(parse_timestamp("2016-02-29 00:00:00"));
    // 'T' separator tolerated on input.
    REQUIRE(parse_timestamp("2014-06-21T17:44:00") == parse_timestamp("2014-06-21 17:44:00"));
}

TEST_CASE("fixed offset shifts local time, not the instant") {
    // UTC+4: local 12:00 is 08:00 UTC.
    MinuteTimestamp ts = parse_timestamp("2014-06-21 12:00:00", 240);
    REQUIRE(format_timestamp(ts, 0) == "2014-06-21 08:00:00");
    REQUIRE(format_timestamp(ts, 240) == "2014-06-21 12:00:00");
    REQUIRE(hour_of(ts, 240) == 12);
    REQUIRE(hour_of(ts, 0) == 8);
    // Day boundary moves with the offset.
    MinuteTimestamp late = parse_timestamp("2014-06-21 23:00:00", 0);
    REQUIRE(local_day_of(late, 0) == days_from_civil(2014, 6, 21));
    REQUIRE(local_day_of(late, 240) == days_from_civil(2014, 6, 22));
    REQUIRE(year_of(parse_timestamp("2014-12-31 23:00:00", 0), 240) == 2015);
    REQUIRE(month_of(parse_timestamp("2014-06-30 23:00:00", 0), 240) == 7);
}

TEST_CASE("negative epoch minutes floor toward earlier days") {
    MinuteTimestamp ts = parse_timestamp("1969-12-31 23:30:00");
    REQUIRE(ts.minutes_since_epoch == -30);
    CivilDateTime c = to_civil(ts);
    REQUIRE(c.date.year == 1969);
    REQUIRE(c.hour == 23);
    REQUIRE(c.minute == 30);
    REQUIRE(local_day_of(ts) == -1);
}

TEST_CASE("hourly lag maps onto the minute grid with the shared base slot") {
    // T-1 and t-1 are the same slot; every extra hour adds 60 minutes.
    REQUIRE(hour_offset_to_minute_offset(1) == 1);
    REQUIRE(hour_offset_to_minute_offset(2) == 61);
    REQUIRE(hour_offset_to_minute_offset(24) == 1381);
    for (int k = 1; k < 50; ++k)
        REQUIRE(hour_offset_to_minute_offset(k + 1) - hour_offset_to_minute_offset(k) == 60);
    REQUIRE_THROWS_AS(hour_offset_to_minute_offset(0), ConfigError);
    REQUIRE_THROWS_AS(hour_offset_to_minute_offset(-3), ConfigError);
}

TEST_CASE("date text form") {
    CivilDate d = parse_date("2015-10-19");
    REQUIRE(d.year == 2015);
    REQUIRE(d.month == 10);
    REQUIRE(d.day == 19);
    REQUIRE(format_date(d) == "2015-10-19");
    REQUIRE_THROWS(parse_date("2015-10-9"));
    REQUIRE_THROWS(parse_date("2015-02-30"));
}

TEST_CASE("minute series indexing, missing flags and slicing") {
    MinuteTimestamp t0 = parse_timestamp("2014-01-01 00:00:00");
    MinuteSeries s(VariableId::Patm, t0, 100);
    REQUIRE(s.size() == 100);
    REQUIRE(s.missing_count() == 100);
    for (std::size_t i = 0; i < s.size(); ++i) s.set(i, static_cast<double>(i));
    REQUIRE(s.missing_count() == 0);
    REQUIRE(s.timestamp(0) == t0);
    REQUIRE(s.timestamp(99) == t0 + 99);
    REQUIRE(s.end() == t0 + 99);
    REQUIRE(s.index_of(t0 + 42) == 42);
    REQUIRE(s.covers(t0 + 99));
    REQUIRE_FALSE(s.covers(t0 + 100));
    REQUIRE_FALSE(s.covers(t0 - 1));
    REQUIRE_THROWS_AS(s.index_of(t0 + 100), std::out_of_range);

    s.set_missing(50);
    REQUIRE(s.is_missing(50));
    REQUIRE_THROWS_AS(s.dense(), DataError);
    s.set(50, 7.0);
    REQUIRE(s.dense().size() == 100);

    MinuteSeries part = slice(s, t0 + 10, t0 + 19);
    REQUIRE(part.size() == 10);
    REQUIRE(part.start() == t0 + 10);
    REQUIRE(part.value(0) == 10.0);
    REQUIRE(part.value(9) == 19.0);
    REQUIRE_THROWS_AS(slice(s, t0 + 20, t0 + 10), std::out_of_range);
}

TEST_CASE("hourly subsampling keeps exactly the minute-zero local slots") {
    // Start at 00:17 UTC; with a +240 offset the local minute field is
    // (17 + 240) % 60 = 17, so the first kept slot is 43 minutes later.
    MinuteTimestamp t0 = parse_timestamp("2014-01-01 00:17:00");
    MinuteSeries s(VariableId::RH, t0, 300);
    for (std::size_t i = 0; i < s.size(); ++i) s.set(i, static_cast<double>(i));

    MinuteSeries hourly = hourly_subsample(s, 240);
    REQUIRE(hourly.step_minutes() == 60);
    REQUIRE(hourly.size() == 5);
    for (std::size_t j = 0; j < hourly.size(); ++j) {
        REQUIRE(hourly.value(j) == 43.0 + 60.0 * static_cast<double>(j));
        CivilDateTime c = to_civil(hourly.timestamp(j), 240);
        REQUIRE(c.minute == 0);
    }
    // Missing slots stay missing after subsampling.
    s.set_missing(43);
    MinuteSeries hourly2 = hourly_subsample(s, 240);
    REQUIRE(hourly2.is_missing(0));
    REQUIRE_FALSE(hourly2.is_missing(1));
}

TEST_CASE("site dataset enforces grid alignment") {
    MinuteTimestamp t0 = parse_timestamp("2014-01-01 00:00:00");
    SiteDataset ds("demo", -21.0, 55.5, t0, 1440, 240);
    REQUIRE(ds.length() == 1440);
    REQUIRE(ds.end() == t0 + 1439);

    MinuteSeries good(VariableId::Text, t0, 1440);
    for (std::size_t i = 0; i < good.size(); ++i) good.set(i, 1.0);
    ds.add_series(good);
    REQUIRE(ds.has(VariableId::Text));
    REQUIRE(ds.at(VariableId::Text).size() == 1440);
    REQUIRE_THROWS_AS(ds.at(VariableId::RH), DataError);

    MinuteSeries shifted(VariableId::RH, t0 + 1, 1440);
    REQUIRE_THROWS_AS(ds.add_series(shifted), ValidationError);
    MinuteSeries short_series(VariableId::RH, t0, 100);
    REQUIRE_THROWS_AS(ds.add_series(short_series), ValidationError);
    MinuteSeries hourly(VariableId::RH, t0, 24, 60);
    REQUIRE_THROWS_AS(ds.add_series(hourly), ConfigError);

    ds.mark_row_absent(5);
    REQUIRE_FALSE(ds.row_present(5));
    REQUIRE(ds.absent_row_count() == 1);
    ds.set_excluded(7);
    REQUIRE(ds.excluded(7));
    REQUIRE(ds.excluded_count() == 1);
}

TEST_CASE("variable names round-trip and WS aliases WS_Mean") {
    for (VariableId v : raw_variables()) REQUIRE(variable_from_string(to_string(v)) == v);
    for (VariableId v : model_variables()) REQUIRE(variable_from_string(to_string(v)) == v);
    REQUIRE(variable_from_string("WS") == VariableId::WS_Mean);
    REQUIRE_THROWS_AS(variable_from_string("nope"), ConfigError);
}

TEST_CASE("counter RNG is stateless and keyed") {
    REQUIRE(counter_uniform(1, 2) == counter_uniform(1, 2));
    REQUIRE(counter_uniform(1, 2) != counter_uniform(1, 3));
    REQUIRE(counter_uniform(1, 2) != counter_uniform(2, 2));
    REQUIRE(derive_seed(1, 2) == derive_seed(1, 2));
    REQUIRE(derive_seed(1, 2) != derive_seed(2, 1));
    REQUIRE(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    for (std::uint64_t i = 0; i < 1000; ++i) {
        double u = counter_uniform(9, i);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("counter gaussian has standard-normal moments") {
    const std::size_t n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double g = counter_gaussian(1234, i);
        sum += g;
        sum2 += g * g;
    }
    double mean = sum / static_cast<double>(n);
    double var = sum2 / static_cast<double>(n) - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}
