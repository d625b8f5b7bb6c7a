// Derived variables and supervised vector assembly: the beam ratio kb, wind
// decomposition, nocturnal masking, month-by-hour normalization, lag
// specifications and the flattening of a minute grid into (X, y) rows.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/series.hpp"
#include "heliocast/solar.hpp"
#include "heliocast/stats.hpp"
#include "heliocast/time.hpp"

namespace heliocast::features {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Beam ratio.
// ---------------------------------------------------------------------------

// Direct share of global irradiance: kb = 1 - I_D / I_G, clipped to [0, 1].
// The ratio is undefined when the global signal vanishes; those slots get the
// neutral 0.5 and the caller decides whether to flag or mask them.
inline double compute_kb(double global_irradiance, double diffuse_irradiance) {
    if (global_irradiance < 1e-12) return 0.5;
    double kb = 1.0 - diffuse_irradiance / global_irradiance;
    return std::clamp(kb, 0.0, 1.0);
}

struct KbSeries {
    MinuteSeries kb;                      // missing where either input is missing
    std::vector<std::uint8_t> suspicious;  // daytime slots with implausibly low I_G
    std::size_t suspicious_count = 0;
};

// Computes kb for every slot where both irradiance components are observed.
// Daytime slots whose global irradiance sits below `daylight_floor` (W/m^2)
// are flagged suspicious: a pyranometer reading ~0 under the sun is a sensor
// problem, not a cloud.
inline KbSeries compute_kb_series(const SiteDataset& ds, const solar::SunTimes& sun,
                                  double daylight_floor = 5.0) {
    const MinuteSeries& ig = ds.at(VariableId::I_G);
    const MinuteSeries& id = ds.at(VariableId::I_D);
    KbSeries out{MinuteSeries(VariableId::kb, ds.start(), ds.length()),
                 std::vector<std::uint8_t>(ds.length(), 0), 0};
    for (std::size_t i = 0; i < ds.length(); ++i) {
        if (ig.is_missing(i) || id.is_missing(i)) continue;
        MinuteTimestamp ts = ds.start() + static_cast<std::int64_t>(i);
        double g = ig.value(i);
        if (!sun.is_nocturnal(ts) && g < daylight_floor) {
            out.suspicious[i] = 1;
            ++out.suspicious_count;
        }
        out.kb.set(i, compute_kb(g, id.value(i)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wind direction decomposition.
// ---------------------------------------------------------------------------

// Unit vector of a compass direction in degrees.
inline std::pair<double, double> wind_to_units(double degrees) {
    double rad = degrees * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

// Replaces WD by its unit-circle components so later interpolation and
// normalization act on continuous quantities; raw angles wrap at 360 and must
// never be averaged or interpolated directly.
inline SiteDataset decompose_wind(const SiteDataset& input) {
    if (!input.has(VariableId::WD)) throw DataError("decompose_wind: dataset has no WD series");
    SiteDataset ds = input;
    const MinuteSeries& wd = ds.at(VariableId::WD);
    MinuteSeries ux(VariableId::UnitX, ds.start(), ds.length());
    MinuteSeries uy(VariableId::UnitY, ds.start(), ds.length());
    for (std::size_t i = 0; i < ds.length(); ++i) {
        if (wd.is_missing(i)) continue;
        auto [x, y] = wind_to_units(wd.value(i));
        ux.set(i, x);
        uy.set(i, y);
    }
    ds.add_series(std::move(ux));
    ds.add_series(std::move(uy));
    ds.remove_series(VariableId::WD);
    return ds;
}

// ---------------------------------------------------------------------------
// Nocturnal masking.
// ---------------------------------------------------------------------------

struct NocturnalMask {
    double sigma = 0.01;   // spread of the night placeholder noise
    std::uint64_t seed = 0;
};

// Overwrites every night slot of the kb series with 0.5 + N(0, sigma^2).
// The draw is keyed by (seed, timestamp), so the same slot always receives
// the same value no matter how the series is chunked or reprocessed.
inline MinuteSeries mask_nocturnal(const MinuteSeries& kb, const solar::SunTimes& sun,
                                   const NocturnalMask& cfg) {
    if (kb.id() != VariableId::kb)
        throw ConfigError("mask_nocturnal operates on the kb series");
    if (!(cfg.sigma >= 0.0)) throw ConfigError("mask_nocturnal: sigma must be >= 0");
    MinuteSeries out = kb;
    std::uint64_t stream = derive_seed(cfg.seed, 0x6e6f6374);  // noct
    for (std::size_t i = 0; i < out.size(); ++i) {
        MinuteTimestamp ts = out.timestamp(i);
        if (!sun.is_nocturnal(ts)) continue;
        double noise =
            cfg.sigma * counter_gaussian(stream, static_cast<std::uint64_t>(
                                                     ts.minutes_since_epoch));
        out.set(i, 0.5 + noise);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Month-by-hour normalization.
// ---------------------------------------------------------------------------

// Per (month, local hour) location/scale cells. A cell is degenerate when it
// has fewer than two samples or zero spread; degenerate cells normalize with
// scale 1 so the transform stays invertible.
class MonthlyHourlyStats {
  public:
    // Every cell starts degenerate; cells only gain a real scale through
    // accumulate_cell or from_json. Keeps unfitted months at scale 1 after a
    // serialization round trip.
    MonthlyHourlyStats() { degenerate_.fill(true); }

    double mean(int month, int hour) const { return mean_[idx(month, hour)]; }
    double stddev(int month, int hour) const { return std_[idx(month, hour)]; }
    std::int64_t count(int month, int hour) const { return count_[idx(month, hour)]; }
    bool degenerate(int month, int hour) const { return degenerate_[idx(month, hour)]; }

    double normalize(double x, int month, int hour) const {
        std::size_t i = idx(month, hour);
        return (x - mean_[i]) / scale(i);
    }
    double denormalize(double z, int month, int hour) const {
        std::size_t i = idx(month, hour);
        return z * scale(i) + mean_[i];
    }

    json to_json() const {
        json cells = json::array();
        for (int m = 1; m <= 12; ++m)
            for (int h = 0; h < 24; ++h) {
                std::size_t i = idx(m, h);
                if (count_[i] == 0) continue;
                cells.push_back({{"month", m},
                                 {"hour", h},
                                 {"mean", mean_[i]},
                                 {"std", std_[i]},
                                 {"count", count_[i]}});
            }
        return json{{"cells", cells}};
    }

    static MonthlyHourlyStats from_json(const json& j) {
        MonthlyHourlyStats s;
        for (const auto& c : j.at("cells")) {
            std::size_t i = idx(c.at("month").get<int>(), c.at("hour").get<int>());
            s.mean_[i] = c.at("mean").get<double>();
            s.std_[i] = c.at("std").get<double>();
            s.count_[i] = c.at("count").get<std::int64_t>();
            s.degenerate_[i] = s.count_[i] < 2 || s.std_[i] == 0.0;
        }
        return s;
    }

    // Accumulation interface used by the fitting routine.
    void accumulate_cell(int month, int hour, std::span<const double> samples) {
        std::size_t i = idx(month, hour);
        count_[i] = static_cast<std::int64_t>(samples.size());
        if (samples.empty()) {
            degenerate_[i] = true;
            return;
        }
        mean_[i] = stats::mean(samples);
        if (samples.size() < 2) {
            degenerate_[i] = true;
            return;
        }
        std_[i] = stats::stddev(samples);
        degenerate_[i] = std_[i] == 0.0;
    }

  private:
    static std::size_t idx(int month, int hour) {
        if (month < 1 || month > 12 || hour < 0 || hour > 23)
            throw ConfigError("month/hour cell out of range");
        return static_cast<std::size_t>(month - 1) * 24 + static_cast<std::size_t>(hour);
    }
    double scale(std::size_t i) const { return degenerate_[i] ? 1.0 : std_[i]; }

    std::array<double, 288> mean_{};
    std::array<double, 288> std_{};
    std::array<std::int64_t, 288> count_{};
    std::array<bool, 288> degenerate_{};
};

// Fits the 12x24 cells of one variable over [range.begin, range.end),
// skipping excluded and missing slots. Cell membership follows the site's
// local civil month and hour.
inline MonthlyHourlyStats fit_monthly_hourly(const SiteDataset& ds, VariableId var,
                                             const MinuteRange& range) {
    const MinuteSeries& s = ds.at(var);
    std::array<std::vector<double>, 288> buckets;
    MinuteTimestamp lo = std::max(range.begin, ds.start());
    MinuteTimestamp hi = std::min(range.end, ds.end() + 1);
    for (std::int64_t m = lo - ds.start(); m < hi - ds.start(); ++m) {
        auto i = static_cast<std::size_t>(m);
        if (ds.excluded(i) || s.is_missing(i)) continue;
        MinuteTimestamp ts = ds.start() + m;
        CivilDateTime c = to_civil(ts, ds.tz_offset_minutes);
        buckets[static_cast<std::size_t>(c.date.month - 1) * 24 + c.hour].push_back(s.value(i));
    }
    MonthlyHourlyStats stats;
    for (int m = 1; m <= 12; ++m)
        for (int h = 0; h < 24; ++h) {
            auto& b = buckets[static_cast<std::size_t>(m - 1) * 24 + h];
            stats.accumulate_cell(m, h, b);
        }
    return stats;
}

using NormalizationStats = std::map<VariableId, MonthlyHourlyStats>;

// ---------------------------------------------------------------------------
// Lag specifications.
// ---------------------------------------------------------------------------

// Lags for one variable. Minute lags j address slot t-j on the minute grid;
// hour lags k address the hourly grid and land on minute slot t-(60(k-1)+1),
// so hour lag 2 is one hour before the most recent minute. Hour lag 1 would
// collide with minute lag 1 and is therefore invalid.
struct LagEntry {
    std::vector<int> minute_lags;
    std::vector<int> hour_lags;
};

using LagSpec = std::map<VariableId, LagEntry>;

inline void validate_lag_spec(const LagSpec& spec) {
    for (const auto& [var, entry] : spec) {
        auto check = [&](const std::vector<int>& lags, int min_value, const char* what) {
            for (std::size_t i = 0; i < lags.size(); ++i) {
                if (lags[i] < min_value)
                    throw ConfigError(std::string("lag spec: ") + to_string(var) + " " + what +
                                      " lag " + std::to_string(lags[i]) + " below minimum " +
                                      std::to_string(min_value));
                if (i > 0 && lags[i] <= lags[i - 1])
                    throw ConfigError(std::string("lag spec: ") + to_string(var) + " " + what +
                                      " lags must be strictly increasing");
            }
        };
        check(entry.minute_lags, 1, "minute");
        check(entry.hour_lags, 2, "hour");
        if (entry.minute_lags.empty() && entry.hour_lags.empty())
            throw ConfigError(std::string("lag spec: ") + to_string(var) + " has no lags");
    }
    if (spec.empty()) throw ConfigError("lag spec: empty");
}

inline std::size_t lag_spec_dimension(const LagSpec& spec) {
    std::size_t d = 0;
    for (const auto& [var, entry] : spec)
        d += entry.minute_lags.size() + entry.hour_lags.size();
    return d;
}

// The published 70-dimensional specification this pipeline reproduces.
inline LagSpec preset_table3() {
    auto seq = [](int from, int to) {
        std::vector<int> v;
        for (int i = from; i <= to; ++i) v.push_back(i);
        return v;
    };
    LagSpec spec;
    spec[VariableId::kb] = {{1, 2}, {2, 3, 24}};
    spec[VariableId::Patm] = {seq(1, 20), {2, 3, 4, 5, 6, 12, 24}};
    spec[VariableId::RH] = {seq(1, 5), {24}};
    spec[VariableId::Text] = {seq(1, 3), {12, 24}};
    spec[VariableId::WS_Mean] = {seq(1, 3), {2, 3, 12, 24}};
    spec[VariableId::UnitX] = {seq(1, 5), {2, 3, 4, 12, 24}};
    spec[VariableId::UnitY] = {seq(1, 6), {2, 3, 12, 24}};
    return spec;
}

inline json lag_spec_to_json(const LagSpec& spec) {
    json j = json::object();
    for (const auto& [var, entry] : spec)
        j[to_string(var)] = {{"minute_lags", entry.minute_lags}, {"hour_lags", entry.hour_lags}};
    return j;
}

inline LagSpec lag_spec_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("lag spec JSON must be an object keyed by variable");
    LagSpec spec;
    for (auto it = j.begin(); it != j.end(); ++it) {
        VariableId var = variable_from_string(it.key());
        LagEntry entry;
        entry.minute_lags = it.value().value("minute_lags", std::vector<int>{});
        entry.hour_lags = it.value().value("hour_lags", std::vector<int>{});
        spec[var] = std::move(entry);
    }
    validate_lag_spec(spec);
    return spec;
}

inline LagSpec load_lag_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lag spec '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("lag spec '" + path + "': " + e.what());
    }
    return lag_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// Feature layout: the ordered columns of the supervised matrix.
// ---------------------------------------------------------------------------

struct FeatureRef {
    VariableId var{};
    bool hourly = false;        // true: hour lag, false: minute lag
    int lag = 1;                // k for hour lags, j for minute lags
    std::int64_t minute_offset = 1;  // minutes behind the most recent slot, plus 1

    // Column label, e.g. "kb@t-2" (minute lag) or "Patm@T-12" (hour lag).
    std::string label() const {
        return std::string(to_string(var)) + (hourly ? "@T-" : "@t-") + std::to_string(lag);
    }
    bool operator==(const FeatureRef&) const = default;
};

inline FeatureRef minute_ref(VariableId var, int lag) {
    if (lag < 1) throw ConfigError("minute lag must be >= 1");
    return FeatureRef{var, false, lag, lag};
}

inline FeatureRef hour_ref(VariableId var, int lag) {
    return FeatureRef{var, true, lag, hour_offset_to_minute_offset(lag)};
}

inline FeatureRef feature_ref_from_label(const std::string& label) {
    auto at = label.find('@');
    if (at == std::string::npos || at + 3 > label.size())
        throw ConfigError("bad feature label '" + label + "'");
    VariableId var = variable_from_string(label.substr(0, at));
    std::string rest = label.substr(at + 1);
    bool hourly;
    if (rest.rfind("T-", 0) == 0)
        hourly = true;
    else if (rest.rfind("t-", 0) == 0)
        hourly = false;
    else
        throw ConfigError("bad feature label '" + label + "'");
    int lag = 0;
    try {
        lag = std::stoi(rest.substr(2));
    } catch (const std::exception&) {
        throw ConfigError("bad feature label '" + label + "'");
    }
    return hourly ? hour_ref(var, lag) : minute_ref(var, lag);
}

// The low-dimensional baseline: every model variable at the most recent slot.
inline std::vector<FeatureRef> instant_layout() {
    std::vector<FeatureRef> layout;
    for (VariableId v : model_variables()) layout.push_back(minute_ref(v, 1));
    return layout;
}

// Expands a lag spec into ordered columns: variables in canonical order,
// minute lags ascending, then hour lags ascending.
inline std::vector<FeatureRef> layout_from_spec(const LagSpec& spec) {
    validate_lag_spec(spec);
    std::vector<FeatureRef> layout;
    auto emit = [&](VariableId var, const LagEntry& entry) {
        for (int j : entry.minute_lags) layout.push_back(minute_ref(var, j));
        for (int k : entry.hour_lags) layout.push_back(hour_ref(var, k));
    };
    for (VariableId v : model_variables()) {
        auto it = spec.find(v);
        if (it != spec.end()) emit(v, it->second);
    }
    // Variables outside the canonical list, in enum order.
    for (const auto& [var, entry] : spec) {
        bool canonical = false;
        for (VariableId v : model_variables())
            if (v == var) canonical = true;
        if (!canonical) emit(var, entry);
    }
    return layout;
}

// ---------------------------------------------------------------------------
// Supervised assembly.
// ---------------------------------------------------------------------------

struct SupervisedSet {
    std::vector<FeatureRef> layout;
    std::string vector_kind;  // "instant" or "arima"
    std::vector<double> x;    // row-major, n_rows x dim
    std::vector<double> y;
    std::vector<MinuteTimestamp> target_ts;

    std::size_t dim() const { return layout.size(); }
    std::size_t n_rows() const { return target_ts.size(); }
    std::span<const double> row(std::size_t i) const {
        return {x.data() + i * dim(), dim()};
    }
};

struct AssembleOptions {
    int horizon_minutes = 60;
    VariableId target = VariableId::kb;
    std::string vector_kind = "custom";
    // When set, feature values are normalized by their own slot's
    // (month, hour) cell; targets always stay on the raw scale.
    const NormalizationStats* normalization = nullptr;
};

// Flattens the minute grid into supervised rows. For a row with target time
// a_T, the most recent usable slot is a_T - horizon; a feature with minute
// offset j reads slot a_T - horizon - (j - 1). A row is emitted only when the
// target and every feature slot are inside the grid, not excluded, and not
// missing. Rows are ordered by target time.
inline SupervisedSet assemble(const SiteDataset& ds, const std::vector<FeatureRef>& layout,
                              const AssembleOptions& opts = {}) {
    if (layout.empty()) throw ConfigError("assemble: empty feature layout");
    if (opts.horizon_minutes < 1) throw ConfigError("assemble: horizon must be >= 1 minute");
    for (const FeatureRef& f : layout)
        if (!ds.has(f.var))
            throw ConfigError(std::string("assemble: dataset lacks variable ") +
                              to_string(f.var));
    if (!ds.has(opts.target))
        throw ConfigError(std::string("assemble: dataset lacks target variable ") +
                          to_string(opts.target));

    const std::int64_t horizon = opts.horizon_minutes;
    std::int64_t max_offset = 0;
    for (const FeatureRef& f : layout) max_offset = std::max(max_offset, f.minute_offset);

    std::vector<const MinuteSeries*> cols;
    cols.reserve(layout.size());
    for (const FeatureRef& f : layout) cols.push_back(&ds.at(f.var));
    const MinuteSeries& target_series = ds.at(opts.target);

    SupervisedSet set;
    set.layout = layout;
    set.vector_kind = opts.vector_kind;

    const std::int64_t n = static_cast<std::int64_t>(ds.length());
    std::vector<double> row(layout.size());
    for (std::int64_t ti = horizon + max_offset - 1; ti < n; ++ti) {
        auto t = static_cast<std::size_t>(ti);
        if (ds.excluded(t) || target_series.is_missing(t)) continue;
        bool ok = true;
        for (std::size_t c = 0; c < layout.size(); ++c) {
            std::int64_t si = ti - horizon - (layout[c].minute_offset - 1);
            auto s = static_cast<std::size_t>(si);
            if (ds.excluded(s) || cols[c]->is_missing(s)) {
                ok = false;
                break;
            }
            double v = cols[c]->value(s);
            if (opts.normalization) {
                auto it = opts.normalization->find(layout[c].var);
                if (it != opts.normalization->end()) {
                    CivilDateTime civ =
                        to_civil(ds.start() + si, ds.tz_offset_minutes);
                    v = it->second.normalize(v, civ.date.month, civ.hour);
                }
            }
            row[c] = v;
        }
        if (!ok) continue;
        set.x.insert(set.x.end(), row.begin(), row.end());
        set.y.push_back(target_series.value(t));
        set.target_ts.push_back(ds.start() + ti);
    }
    return set;
}

// Writes a supervised set as CSV: target timestamp (local), target, then one
// column per feature label.
inline void export_supervised_csv(const SupervisedSet& set, const std::string& path,
                                  int tz_offset_minutes) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << "target_timestamp,target";
    for (const FeatureRef& f : set.layout) out << ',' << f.label();
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < set.n_rows(); ++i) {
        out << format_timestamp(set.target_ts[i], tz_offset_minutes);
        std::snprintf(buf, sizeof(buf), "%.17g", set.y[i]);
        out << ',' << buf;
        for (double v : set.row(i)) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
}

}  // namespace heliocast::features
