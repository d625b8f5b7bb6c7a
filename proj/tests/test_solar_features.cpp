// Sun events, the day/night predicate, derived variables, normalization
// cells, lag specifications and supervised assembly.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "heliocast/features.hpp"
#include "heliocast/solar.hpp"

#include "test_util.hpp"

using namespace heliocast;
using testutil::TempDir;
using testutil::write_file;

namespace {

// Reunion-like southern site at UTC+4.
constexpr double kLat = -20.92;
constexpr double kLon = 55.48;
constexpr int kTz = 240;

solar::SunTimes sun_jan_2014() {
    return solar::SunTimes::computed(kLat, kLon, kTz, {2014, 1, 1}, {2014, 1, 10});
}

}  // namespace

TEST_CASE("computed sun events match published southern winter times") {
    // Known southern-hemisphere winter day: sunset shortly before 17:45 local.
    solar::SunEvents ev = solar::sunrise_sunset({2014, 6, 21}, kLat, kLon);
    CivilDateTime rise = to_civil(ev.sunrise, kTz);
    CivilDateTime set = to_civil(ev.sunset, kTz);
    REQUIRE(rise.hour == 6);
    REQUIRE(rise.minute >= 50);
    REQUIRE(set.hour == 17);
    REQUIRE(std::abs(set.minute - 44) <= 3);
    // Southern winter day is shorter than 12 hours.
    REQUIRE(ev.sunset - ev.sunrise < 11 * 60);
}

TEST_CASE("equator equinox day length is near twelve hours") {
    solar::SunEvents ev = solar::sunrise_sunset({2015, 3, 20}, 0.0, 0.0);
    std::int64_t len = ev.sunset - ev.sunrise;
    // Refraction and the solar radius stretch the day a few minutes past 720.
    REQUIRE(len >= 715);
    REQUIRE(len <= 740);
}

TEST_CASE("polar day and night have no events") {
    REQUIRE_THROWS_AS(solar::sunrise_sunset({2014, 6, 21}, 80.0, 0.0), ConfigError);
    REQUIRE_THROWS_AS(solar::sunrise_sunset({2014, 12, 21}, 80.0, 0.0), ConfigError);
    REQUIRE_NOTHROW(solar::sunrise_sunset({2014, 3, 20}, 80.0, 0.0));
    REQUIRE_THROWS_AS(solar::sunrise_sunset({2014, 6, 21}, 95.0, 0.0), ConfigError);
}

TEST_CASE("night is closed at sunset and open at sunrise") {
    solar::SunTimes sun = sun_jan_2014();
    MinuteTimestamp noon = from_civil({{2014, 1, 5}, 12, 0}, kTz);
    solar::SunEvents ev = sun.events_for_day(noon);

    REQUIRE_FALSE(sun.is_nocturnal(noon));
    REQUIRE(sun.is_nocturnal(ev.sunset));         // sunset minute is night
    REQUIRE_FALSE(sun.is_nocturnal(ev.sunset - 1));
    REQUIRE_FALSE(sun.is_nocturnal(ev.sunrise));  // sunrise minute is day
    REQUIRE(sun.is_nocturnal(ev.sunrise - 1));
    REQUIRE(sun.is_nocturnal(from_civil({{2014, 1, 5}, 0, 0}, kTz)));
    REQUIRE(sun.is_nocturnal(from_civil({{2014, 1, 5}, 23, 59}, kTz)));
}

TEST_CASE("coverage bounds are enforced") {
    solar::SunTimes sun = sun_jan_2014();
    REQUIRE(sun.coverage_begin() == from_civil({{2014, 1, 1}, 0, 0}, kTz));
    REQUIRE(sun.coverage_end() == from_civil({{2014, 1, 11}, 0, 0}, kTz));
    REQUIRE_NOTHROW(sun.is_nocturnal(sun.coverage_begin()));
    REQUIRE_NOTHROW(sun.is_nocturnal(sun.coverage_end() - 1));
    REQUIRE_THROWS_AS(sun.is_nocturnal(sun.coverage_begin() - 1), ConfigError);
    REQUIRE_THROWS_AS(sun.is_nocturnal(sun.coverage_end()), ConfigError);
    REQUIRE_THROWS_AS(sun.events_for_day(from_civil({{2015, 5, 5}, 12, 0}, kTz)), ConfigError);
    REQUIRE_THROWS_AS(
        solar::SunTimes::computed(kLat, kLon, kTz, {2014, 1, 10}, {2014, 1, 1}), ConfigError);
}

TEST_CASE("table provider parses and classifies like the computed one") {
    TempDir tmp;
    std::string table =
        "# date,sunrise,sunset (local)\n"
        "2014-01-01,05:42,19:01\n"
        "2014-01-02,05:43,19:01\n"
        "2014-01-03,05:43,19:02\n";
    solar::SunTimes sun = solar::SunTimes::from_table_file(
        write_file(tmp.file("sun.csv"), table), kTz);

    REQUIRE_FALSE(sun.is_nocturnal(from_civil({{2014, 1, 2}, 12, 0}, kTz)));
    REQUIRE(sun.is_nocturnal(from_civil({{2014, 1, 2}, 19, 1}, kTz)));
    REQUIRE_FALSE(sun.is_nocturnal(from_civil({{2014, 1, 2}, 19, 0}, kTz)));
    REQUIRE_FALSE(sun.is_nocturnal(from_civil({{2014, 1, 2}, 5, 43}, kTz)));
    REQUIRE(sun.is_nocturnal(from_civil({{2014, 1, 2}, 5, 42}, kTz)));
    // Decidable from the first listed sunrise to local midnight after the
    // last listed day.
    REQUIRE(sun.coverage_begin() == from_civil({{2014, 1, 1}, 5, 42}, kTz));
    REQUIRE(sun.coverage_end() == from_civil({{2014, 1, 4}, 0, 0}, kTz));
    REQUIRE(sun.is_nocturnal(from_civil({{2014, 1, 3}, 23, 59}, kTz)));
    REQUIRE_THROWS_AS(sun.is_nocturnal(from_civil({{2014, 1, 1}, 5, 41}, kTz)), ConfigError);

    solar::SunEvents ev = sun.events_for_day(from_civil({{2014, 1, 3}, 12, 0}, kTz));
    REQUIRE(to_civil(ev.sunset, kTz).minute == 2);
}

TEST_CASE("table provider rejects malformed tables") {
    TempDir tmp;
    REQUIRE_THROWS_AS(solar::SunTimes::from_table_file(tmp.file("absent.csv"), kTz), ConfigError);
    REQUIRE_THROWS_AS(solar::SunTimes::from_table_file(
                          write_file(tmp.file("a.csv"), "# only comments\n"), kTz),
                      ConfigError);
    REQUIRE_THROWS_AS(solar::SunTimes::from_table_file(
                          write_file(tmp.file("b.csv"), "2014-01-01,05:42\n"), kTz),
                      ConfigError);
    REQUIRE_THROWS_AS(
        solar::SunTimes::from_table_file(
            write_file(tmp.file("c.csv"), "2014-01-01,05:42,19:01\n2014-01-03,05:43,19:02\n"),
            kTz),
        ConfigError);
    REQUIRE_THROWS_AS(solar::SunTimes::from_table_file(
                          write_file(tmp.file("d.csv"), "2014-01-01,19:01,05:42\n"), kTz),
                      ConfigError);
}

TEST_CASE("kb definition handles the degenerate and clipped cases") {
    REQUIRE(features::compute_kb(1000.0, 300.0) == Catch::Approx(0.7));
    REQUIRE(features::compute_kb(0.0, 0.0) == 0.5);          // undefined ratio
    REQUIRE(features::compute_kb(1e-15, 1.0) == 0.5);        // below threshold
    REQUIRE(features::compute_kb(100.0, 150.0) == 0.0);      // diffuse above global
    REQUIRE(features::compute_kb(100.0, -5.0) == 1.0);       // negative diffuse clipped
    REQUIRE(features::compute_kb(100.0, 0.0) == 1.0);
    REQUIRE(features::compute_kb(100.0, 100.0) == 0.0);
}

TEST_CASE("kb series flags daytime low irradiance but not the night") {
    solar::SunTimes sun = sun_jan_2014();
    MinuteTimestamp t0 = from_civil({{2014, 1, 5}, 0, 0}, kTz);
    SiteDataset ds("demo", kLat, kLon, t0, 1440, kTz);
    MinuteSeries ig(VariableId::I_G, t0, 1440), id(VariableId::I_D, t0, 1440);
    for (std::size_t i = 0; i < 1440; ++i) {
        ig.set(i, 0.0);  // dead sensor all day
        id.set(i, 0.0);
    }
    ig.set(720, 800.0);  // one honest noon sample
    id.set(720, 200.0);
    id.set_missing(100);
    ds.add_series(ig);
    ds.add_series(id);

    features::KbSeries kb = features::compute_kb_series(ds, sun, 5.0);
    REQUIRE(kb.kb.value(720) == Catch::Approx(0.75));
    REQUIRE(kb.kb.is_missing(100));  // missing input propagates
    // Suspicious only where the sun is up, the inputs are observed, and
    // I_G < floor. Count the same thing by hand.
    std::size_t expected = 0;
    for (std::size_t i = 0; i < 1440; ++i) {
        if (i == 100 || i == 720) continue;
        if (!sun.is_nocturnal(t0 + static_cast<std::int64_t>(i))) ++expected;
    }
    REQUIRE(kb.suspicious_count == expected);
    REQUIRE(kb.suspicious[720] == 0);
    REQUIRE(kb.suspicious[0] == 0);  // midnight: dark, not suspicious
    // Undefined daytime ratio falls back to the neutral value.
    REQUIRE(kb.kb.value(719) == 0.5);
}

TEST_CASE("wind decomposition lands on the unit circle and drops WD") {
    MinuteTimestamp t0 = from_civil({{2014, 1, 1}, 0, 0}, 0);
    SiteDataset ds("demo", 0, 0, t0, 5);
    MinuteSeries wd(VariableId::WD, t0, 5);
    wd.set(0, 0.0);
    wd.set(1, 90.0);
    wd.set(2, 180.0);
    wd.set(3, 270.0);  // slot 4 stays missing
    ds.add_series(wd);

    SiteDataset out = features::decompose_wind(ds);
    REQUIRE_FALSE(out.has(VariableId::WD));
    const MinuteSeries& ux = out.at(VariableId::UnitX);
    const MinuteSeries& uy = out.at(VariableId::UnitY);
    REQUIRE(ux.value(0) == Catch::Approx(1.0));
    REQUIRE(uy.value(0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(ux.value(1) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(uy.value(1) == Catch::Approx(1.0));
    REQUIRE(ux.value(2) == Catch::Approx(-1.0));
    REQUIRE(uy.value(3) == Catch::Approx(-1.0));
    REQUIRE(ux.is_missing(4));
    REQUIRE(uy.is_missing(4));
    // Unit norm for arbitrary angles.
    for (double deg : {13.7, 211.9, 359.99}) {
        auto [x, y] = features::wind_to_units(deg);
        REQUIRE(x * x + y * y == Catch::Approx(1.0));
    }
    SiteDataset no_wd("demo", 0, 0, t0, 5);
    REQUIRE_THROWS_AS(features::decompose_wind(no_wd), DataError);
}

TEST_CASE("nocturnal masking is keyed by timestamp, not position") {
    solar::SunTimes sun = sun_jan_2014();
    MinuteTimestamp t0 = from_civil({{2014, 1, 4}, 0, 0}, kTz);
    MinuteSeries kb(VariableId::kb, t0, 2 * 1440);
    for (std::size_t i = 0; i < kb.size(); ++i) kb.set(i, 0.7);

    features::NocturnalMask cfg{0.01, 42};
    MinuteSeries masked = features::mask_nocturnal(kb, sun, cfg);

    std::size_t night_slots = 0;
    for (std::size_t i = 0; i < masked.size(); ++i) {
        MinuteTimestamp ts = masked.timestamp(i);
        if (sun.is_nocturnal(ts)) {
            ++night_slots;
            REQUIRE(masked.value(i) != 0.7);
            REQUIRE(std::abs(masked.value(i) - 0.5) < 0.1);  // 10 sigma
        } else {
            REQUIRE(masked.value(i) == 0.7);
        }
    }
    REQUIRE(night_slots > 500);

    // Masking a shifted window reproduces the same values slot for slot.
    MinuteSeries window = slice(kb, t0 + 300, t0 + 2000);
    MinuteSeries masked_window = features::mask_nocturnal(window, sun, cfg);
    for (std::size_t i = 0; i < masked_window.size(); ++i)
        REQUIRE(masked_window.value(i) == masked.value(i + 300));

    // Different seeds give different night values.
    MinuteSeries other = features::mask_nocturnal(kb, sun, {0.01, 43});
    bool differs = false;
    for (std::size_t i = 0; i < masked.size(); ++i)
        if (masked.value(i) != other.value(i)) differs = true;
    REQUIRE(differs);

    // Zero sigma pins night slots to exactly one half.
    MinuteSeries flat = features::mask_nocturnal(kb, sun, {0.0, 42});
    for (std::size_t i = 0; i < flat.size(); ++i)
        if (sun.is_nocturnal(flat.timestamp(i))) REQUIRE(flat.value(i) == 0.5);

    MinuteSeries wrong(VariableId::RH, t0, 10);
    REQUIRE_THROWS_AS(features::mask_nocturnal(wrong, sun, cfg), ConfigError);
    REQUIRE_THROWS_AS(features::mask_nocturnal(kb, sun, {-0.1, 0}), ConfigError);
}

TEST_CASE("month-by-hour cells match hand accumulation") {
    const int tz = 240;
    MinuteTimestamp t0 = from_civil({{2014, 3, 1}, 0, 0}, tz);
    const std::size_t n = 3 * 1440;
    SiteDataset ds("demo", 0, 0, t0, n, tz);
    MinuteSeries s(VariableId::Patm, t0, n);
    for (std::size_t i = 0; i < n; ++i)
        s.set(i, 1000.0 + std::sin(static_cast<double>(i) * 0.01) * 10.0);
    s.set_missing(70);
    ds.add_series(s);
    ds.set_excluded(130);

    MinuteRange range{t0, t0 + static_cast<std::int64_t>(n)};
    features::MonthlyHourlyStats st = features::fit_monthly_hourly(ds, VariableId::Patm, range);

    // Hand oracle for the (March, hour 2) cell.
    std::vector<double> bucket;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 70 || i == 130) continue;
        CivilDateTime c = to_civil(t0 + static_cast<std::int64_t>(i), tz);
        if (c.date.month == 3 && c.hour == 2) bucket.push_back(s.value(i));
    }
    double mean = 0.0;
    for (double v : bucket) mean += v;
    mean /= static_cast<double>(bucket.size());
    double var = 0.0;
    for (double v : bucket) var += (v - mean) * (v - mean);
    var /= static_cast<double>(bucket.size() - 1);

    REQUIRE(st.count(3, 2) == static_cast<std::int64_t>(bucket.size()));
    REQUIRE(st.mean(3, 2) == Catch::Approx(mean));
    REQUIRE(st.stddev(3, 2) == Catch::Approx(std::sqrt(var)));
    REQUIRE_FALSE(st.degenerate(3, 2));
    // The missing slot (01:10 local) thins hour 1 by exactly one sample.
    REQUIRE(st.count(3, 1) == 3 * 60 - 1);
    // Months outside the data are empty and degenerate.
    REQUIRE(st.count(7, 12) == 0);
    REQUIRE(st.degenerate(7, 12));

    // normalize/denormalize are inverse on both live and degenerate cells.
    for (double v : {980.0, 1000.0, 1020.0}) {
        REQUIRE(st.denormalize(st.normalize(v, 3, 2), 3, 2) == Catch::Approx(v));
        REQUIRE(st.denormalize(st.normalize(v, 7, 12), 7, 12) == Catch::Approx(v));
        REQUIRE(st.normalize(v, 7, 12) == Catch::Approx(v - st.mean(7, 12)));  // scale 1
    }

    // JSON round-trip preserves every populated cell, and months absent from
    // the payload come back degenerate: normalizing against them must stay
    // the identity, never a division by a zero scale.
    features::MonthlyHourlyStats back = features::MonthlyHourlyStats::from_json(st.to_json());
    for (int h = 0; h < 24; ++h) {
        REQUIRE(back.count(3, h) == st.count(3, h));
        REQUIRE(back.mean(3, h) == st.mean(3, h));
        REQUIRE(back.stddev(3, h) == st.stddev(3, h));
    }
    REQUIRE(back.count(9, 10) == 0);
    REQUIRE(back.degenerate(9, 10));
    REQUIRE(back.normalize(1013.0, 9, 10) == 1013.0);
    REQUIRE(std::isfinite(back.normalize(0.0, 9, 10)));
}

TEST_CASE("degenerate normalization cells use scale one") {
    const int tz = 0;
    MinuteTimestamp t0 = from_civil({{2014, 5, 1}, 0, 0}, tz);
    SiteDataset ds("demo", 0, 0, t0, 120, tz);
    MinuteSeries s(VariableId::RH, t0, 120);
    for (std::size_t i = 0; i < 120; ++i) s.set(i, 55.0);  // constant: zero spread
    ds.add_series(s);
    auto st = features::fit_monthly_hourly(ds, VariableId::RH, {t0, t0 + 120});
    REQUIRE(st.degenerate(5, 0));
    REQUIRE(st.normalize(57.0, 5, 0) == Catch::Approx(2.0));
}

TEST_CASE("lag spec validation and the published preset") {
    features::LagSpec preset = features::preset_table3();
    REQUIRE_NOTHROW(features::validate_lag_spec(preset));
    REQUIRE(features::lag_spec_dimension(preset) == 70);
    REQUIRE(preset.at(VariableId::kb).minute_lags == std::vector<int>{1, 2});
    REQUIRE(preset.at(VariableId::kb).hour_lags == std::vector<int>{2, 3, 24});
    REQUIRE(preset.at(VariableId::Patm).minute_lags.size() == 20);
    REQUIRE(preset.at(VariableId::Patm).hour_lags == std::vector<int>{2, 3, 4, 5, 6, 12, 24});
    REQUIRE(preset.at(VariableId::RH).hour_lags == std::vector<int>{24});
    REQUIRE(preset.at(VariableId::UnitY).minute_lags.size() == 6);
    REQUIRE(preset.size() == 7);

    features::LagSpec bad = preset;
    bad[VariableId::kb].hour_lags = {1, 2};  // hour lag 1 collides with minute lag 1
    REQUIRE_THROWS_AS(features::validate_lag_spec(bad), ConfigError);
    bad = preset;
    bad[VariableId::kb].minute_lags = {0, 1};
    REQUIRE_THROWS_AS(features::validate_lag_spec(bad), ConfigError);
    bad = preset;
    bad[VariableId::kb].minute_lags = {3, 2};
    REQUIRE_THROWS_AS(features::validate_lag_spec(bad), ConfigError);
    bad = preset;
    bad[VariableId::kb] = {{}, {}};
    REQUIRE_THROWS_AS(features::validate_lag_spec(bad), ConfigError);
    REQUIRE_THROWS_AS(features::validate_lag_spec(features::LagSpec{}), ConfigError);

    TempDir tmp;
    std::string path = tmp.file("spec.json");
    testutil::write_file(path, features::lag_spec_to_json(preset).dump());
    features::LagSpec loaded = features::load_lag_spec(path);
    REQUIRE(loaded.size() == preset.size());
    for (const auto& [var, entry] : preset) {
        REQUIRE(loaded.at(var).minute_lags == entry.minute_lags);
        REQUIRE(loaded.at(var).hour_lags == entry.hour_lags);
    }
}

TEST_CASE("feature references carry the minute offset arithmetic") {
    features::FeatureRef m1 = features::minute_ref(VariableId::kb, 1);
    REQUIRE(m1.minute_offset == 1);
    REQUIRE(m1.label() == "kb@t-1");
    features::FeatureRef m7 = features::minute_ref(VariableId::Patm, 7);
    REQUIRE(m7.minute_offset == 7);
    features::FeatureRef h2 = features::hour_ref(VariableId::kb, 2);
    REQUIRE(h2.minute_offset == 61);
    REQUIRE(h2.label() == "kb@T-2");
    REQUIRE(features::hour_ref(VariableId::kb, 24).minute_offset == 1381);
    // Hour lag 1 and minute lag 1 would address the same slot.
    REQUIRE(hour_offset_to_minute_offset(1) == 1);
    REQUIRE_THROWS_AS(features::minute_ref(VariableId::kb, 0), ConfigError);

    for (const char* label : {"kb@t-3", "Patm@T-12", "UnitX@t-1"}) {
        features::FeatureRef ref = features::feature_ref_from_label(label);
        REQUIRE(ref.label() == label);
    }
    REQUIRE_THROWS_AS(features::feature_ref_from_label("kb"), ConfigError);
    REQUIRE_THROWS_AS(features::feature_ref_from_label("kb@x-3"), ConfigError);
    REQUIRE_THROWS_AS(features::feature_ref_from_label("kb@t-zz"), ConfigError);
}

TEST_CASE("layouts order variables canonically") {
    auto instant = features::instant_layout();
    REQUIRE(instant.size() == 7);
    for (const auto& f : instant) {
        REQUIRE_FALSE(f.hourly);
        REQUIRE(f.lag == 1);
    }
    REQUIRE(instant[0].var == VariableId::kb);
    REQUIRE(instant[1].var == VariableId::Patm);
    REQUIRE(instant[6].var == VariableId::UnitY);

    auto full = features::layout_from_spec(features::preset_table3());
    REQUIRE(full.size() == 70);
    REQUIRE(full[0].label() == "kb@t-1");
    REQUIRE(full[1].label() == "kb@t-2");
    REQUIRE(full[2].label() == "kb@T-2");
    REQUIRE(full[3].label() == "kb@T-3");
    REQUIRE(full[4].label() == "kb@T-24");
    REQUIRE(full[5].label() == "Patm@t-1");
    // Within each variable: minute lags ascending, then hour lags ascending.
    for (std::size_t i = 1; i < full.size(); ++i) {
        if (full[i].var == full[i - 1].var && full[i].hourly == full[i - 1].hourly)
            REQUIRE(full[i].lag > full[i - 1].lag);
    }
}

namespace {

// Independent row enumeration following the stated slot rule. Returns rows as
// (target index, feature slot indices).
struct OracleRow {
    std::size_t target;
    std::vector<std::size_t> slots;
};

std::vector<OracleRow> enumerate_rows(const SiteDataset& ds,
                                      const std::vector<features::FeatureRef>& layout,
                                      int horizon, VariableId target) {
    std::vector<OracleRow> rows;
    const MinuteSeries& ty = ds.at(target);
    for (std::size_t ti = 0; ti < ds.length(); ++ti) {
        if (ds.excluded(ti) || ty.is_missing(ti)) continue;
        OracleRow row{ti, {}};
        bool ok = true;
        for (const auto& f : layout) {
            std::int64_t si = static_cast<std::int64_t>(ti) - horizon - (f.minute_offset - 1);
            if (si < 0) {
                ok = false;
                break;
            }
            auto s = static_cast<std::size_t>(si);
            if (ds.excluded(s) || ds.at(f.var).is_missing(s)) {
                ok = false;
                break;
            }
            row.slots.push_back(s);
        }
        if (ok) rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST_CASE("assembly agrees with brute-force slot enumeration") {
    const int tz = 240;
    MinuteTimestamp t0 = from_civil({{2014, 1, 1}, 0, 0}, tz);
    const std::size_t n = 4000;
    SiteDataset ds("demo", 0, 0, t0, n, tz);
    // Encode (variable, slot) into the value so any indexing slip is visible.
    auto code = [](VariableId v) { return 1000.0 * (static_cast<int>(v) + 1); };
    for (VariableId v : {VariableId::kb, VariableId::Patm, VariableId::RH}) {
        MinuteSeries s(v, t0, n);
        for (std::size_t i = 0; i < n; ++i) s.set(i, code(v) * 1e6 + static_cast<double>(i));
        ds.add_series(s);
    }
    // Punch holes: missing features, missing targets, exclusions.
    ds.at(VariableId::Patm).set_missing(100);
    ds.at(VariableId::kb).set_missing(2000);
    for (std::size_t i = 1500; i < 1510; ++i) ds.set_excluded(i);

    std::vector<features::FeatureRef> layout = {
        features::minute_ref(VariableId::kb, 1),  features::minute_ref(VariableId::kb, 2),
        features::hour_ref(VariableId::kb, 2),    features::hour_ref(VariableId::kb, 24),
        features::minute_ref(VariableId::Patm, 1), features::hour_ref(VariableId::Patm, 12),
        features::minute_ref(VariableId::RH, 5)};

    features::AssembleOptions opts;
    opts.horizon_minutes = 60;
    opts.target = VariableId::kb;
    opts.vector_kind = "arima";
    features::SupervisedSet set = features::assemble(ds, layout, opts);

    auto oracle = enumerate_rows(ds, layout, 60, VariableId::kb);
    REQUIRE(set.n_rows() == oracle.size());
    REQUIRE(set.dim() == layout.size());
    for (std::size_t r = 0; r < oracle.size(); ++r) {
        const OracleRow& expect = oracle[r];
        REQUIRE(set.target_ts[r] == t0 + static_cast<std::int64_t>(expect.target));
        REQUIRE(set.y[r] ==
                ds.at(VariableId::kb).value(expect.target));
        auto row = set.row(r);
        for (std::size_t c = 0; c < layout.size(); ++c)
            REQUIRE(row[c] == ds.at(layout[c].var).value(expect.slots[c]));
    }
    // Row targets are strictly increasing.
    for (std::size_t r = 1; r < set.n_rows(); ++r)
        REQUIRE(set.target_ts[r] > set.target_ts[r - 1]);

    // Hour lag k must read exactly k*60 minutes before the target.
    features::SupervisedSet hk = features::assemble(
        ds, {features::hour_ref(VariableId::Patm, 3)}, opts);
    for (std::size_t r = 0; r < hk.n_rows(); ++r) {
        std::size_t target_idx = ds.index_of(hk.target_ts[r]);
        double expected = ds.at(VariableId::Patm).value(target_idx - 3 * 60);
        REQUIRE(hk.row(r)[0] == expected);
    }
    // The first emitted target leaves room for the deepest lag.
    std::int64_t max_offset = 0;
    for (const auto& f : layout) max_offset = std::max(max_offset, f.minute_offset);
    REQUIRE(set.target_ts.front() - t0 >= 60 + max_offset - 1);
}

TEST_CASE("assembly normalizes features by their own slot cell, target raw") {
    const int tz = 0;
    MinuteTimestamp t0 = from_civil({{2014, 1, 1}, 0, 0}, tz);
    const std::size_t n = 3000;
    SiteDataset ds("demo", 0, 0, t0, n, tz);
    MinuteSeries s(VariableId::kb, t0, n);
    for (std::size_t i = 0; i < n; ++i)
        s.set(i, 0.5 + 0.3 * std::sin(static_cast<double>(i) * 0.37));
    ds.add_series(s);

    features::NormalizationStats stats;
    stats[VariableId::kb] = features::fit_monthly_hourly(
        ds, VariableId::kb, {t0, t0 + static_cast<std::int64_t>(n)});

    features::AssembleOptions opts;
    opts.horizon_minutes = 60;
    opts.normalization = &stats;
    auto layout = std::vector<features::FeatureRef>{features::minute_ref(VariableId::kb, 1),
                                                    features::hour_ref(VariableId::kb, 2)};
    features::SupervisedSet set = features::assemble(ds, layout, opts);
    features::AssembleOptions raw_opts;
    raw_opts.horizon_minutes = 60;
    features::SupervisedSet raw = features::assemble(ds, layout, raw_opts);

    REQUIRE(set.n_rows() == raw.n_rows());
    const auto& cell = stats.at(VariableId::kb);
    for (std::size_t r = 0; r < set.n_rows(); ++r) {
        REQUIRE(set.y[r] == raw.y[r]);  // target stays raw
        for (std::size_t c = 0; c < layout.size(); ++c) {
            std::size_t slot = ds.index_of(set.target_ts[r]) - 60 -
                               static_cast<std::size_t>(layout[c].minute_offset - 1);
            CivilDateTime civ = to_civil(t0 + static_cast<std::int64_t>(slot), tz);
            REQUIRE(set.row(r)[c] ==
                    Catch::Approx(cell.normalize(raw.row(r)[c], civ.date.month, civ.hour)));
        }
    }
}

TEST_CASE("assembly rejects unusable inputs") {
    MinuteTimestamp t0 = from_civil({{2014, 1, 1}, 0, 0}, 0);
    SiteDataset ds("demo", 0, 0, t0, 100);
    MinuteSeries s(VariableId::kb, t0, 100);
    for (std::size_t i = 0; i < 100; ++i) s.set(i, 0.5);
    ds.add_series(s);

    REQUIRE_THROWS_AS(features::assemble(ds, {}, {}), ConfigError);
    features::AssembleOptions bad;
    bad.horizon_minutes = 0;
    REQUIRE_THROWS_AS(
        features::assemble(ds, {features::minute_ref(VariableId::kb, 1)}, bad), ConfigError);
    REQUIRE_THROWS_AS(
        features::assemble(ds, {features::minute_ref(VariableId::Patm, 1)}, {}), ConfigError);
    features::AssembleOptions wrong_target;
    wrong_target.target = VariableId::RH;
    REQUIRE_THROWS_AS(
        features::assemble(ds, {features::minute_ref(VariableId::kb, 1)}, wrong_target),
        ConfigError);
    // A series shorter than horizon + offset yields zero rows, not an error.
    features::SupervisedSet empty =
        features::assemble(ds, {features::hour_ref(VariableId::kb, 2)}, {});
    REQUIRE(empty.n_rows() == 0);
}

TEST_CASE("supervised export writes labeled columns") {
    TempDir tmp;
    MinuteTimestamp t0 = from_civil({{2014, 1, 1}, 0, 0}, 0);
    SiteDataset ds("demo", 0, 0, t0, 200);
    MinuteSeries s(VariableId::kb, t0, 200);
    for (std::size_t i = 0; i < 200; ++i) s.set(i, static_cast<double>(i));
    ds.add_series(s);
    features::SupervisedSet set =
        features::assemble(ds, {features::minute_ref(VariableId::kb, 1)}, {});
    REQUIRE(set.n_rows() > 0);
    std::string path = tmp.file("sup.csv");
    features::export_supervised_csv(set, path, 0);
    std::string content = testutil::read_file(path);
    REQUIRE(content.rfind("target_timestamp,target,kb@t-1\n", 0) == 0);
    REQUIRE(content.find("2014-01-01 01:00:00,60,0\n") != std::string::npos);
}
