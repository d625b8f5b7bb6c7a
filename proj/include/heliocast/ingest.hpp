// Raw site file ingestion: CSV parsing with strict timestamp validation,
// gap detection, linear repair of missing values, exclusion frames, and the
// cleaned-dataset cache.
#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/series.hpp"
#include "heliocast/time.hpp"

namespace heliocast::ingest {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CSV schema. Defaults match the files the synth generator writes; column
// names, delimiter and the local-time offset are configurable for other
// sources.
// ---------------------------------------------------------------------------

struct CsvSchema {
    char delimiter = ',';
    std::string timestamp_column = "timestamp";
    std::map<VariableId, std::string> columns = {
        {VariableId::I_D, "I_D"},   {VariableId::I_G, "I_G"},
        {VariableId::Patm, "Patm"}, {VariableId::RH, "RH"},
        {VariableId::Text, "Text"}, {VariableId::WD, "WD"},
        {VariableId::WS_Mean, "WS_Mean"},
    };
    int tz_offset_minutes = 0;  // file timestamps are local civil time
};

struct SiteInfo {
    std::string name;
    double latitude = 0.0;
    double longitude = 0.0;
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == delim) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_real(const std::string& cell, std::size_t line_no) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw ParseError("unparseable numeric cell '" + cell + "'", line_no);
    return v;
}

}  // namespace detail

// Parses one per-site CSV into a dataset on the full minute grid between the
// first and last row. Slots without a source line are marked row-absent and
// every variable is missing there; empty cells are missing values.
inline SiteDataset parse_site_csv(const std::string& path, const CsvSchema& schema,
                                  const SiteInfo& site) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open site file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty site file '" + path + "'");
    line = detail::strip_cr(line);
    auto header = detail::split_line(line, schema.delimiter);

    auto column_index = [&](const std::string& name) -> std::size_t {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ValidationError("column '" + name + "' not found in '" + path + "'");
    };

    std::size_t ts_col = column_index(schema.timestamp_column);
    std::vector<std::pair<VariableId, std::size_t>> var_cols;
    for (const auto& [var, col_name] : schema.columns)
        var_cols.emplace_back(var, column_index(col_name));

    struct Row {
        MinuteTimestamp ts;
        std::vector<std::pair<VariableId, double>> values;  // present cells only
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto cells = detail::split_line(line, schema.delimiter);
        if (cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " cells, got " +
                                 std::to_string(cells.size()),
                             line_no);
        Row row;
        try {
            row.ts = parse_timestamp(cells[ts_col], schema.tz_offset_minutes);
        } catch (const ValidationError&) {
            throw;  // nonzero seconds field
        } catch (const Error& e) {
            throw ParseError(e.what(), line_no);
        }
        for (const auto& [var, col] : var_cols) {
            const std::string& cell = cells[col];
            if (cell.empty()) continue;  // missing value
            row.values.emplace_back(var, detail::parse_real(cell, line_no));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("no data rows in '" + path + "'");

    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].ts == rows[i - 1].ts)
            throw ValidationError("duplicate timestamp " +
                                  format_timestamp(rows[i].ts, schema.tz_offset_minutes) +
                                  " in '" + path + "'");
    }

    MinuteTimestamp start = rows.front().ts;
    std::size_t n = static_cast<std::size_t>(rows.back().ts - start) + 1;
    SiteDataset ds(site.name, site.latitude, site.longitude, start, n, schema.tz_offset_minutes);
    for (const auto& [var, col] : var_cols) ds.add_series(MinuteSeries(var, start, n));

    std::vector<std::uint8_t> present(n, 0);
    for (const Row& row : rows) {
        std::size_t i = static_cast<std::size_t>(row.ts - start);
        present[i] = 1;
        for (const auto& [var, value] : row.values) ds.at(var).set(i, value);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!present[i]) ds.mark_row_absent(i);
    return ds;
}

// ---------------------------------------------------------------------------
// Gap detection.
// ---------------------------------------------------------------------------

// Inclusive minute range used for reporting.
struct GapRange {
    MinuteTimestamp first{};
    MinuteTimestamp last{};
    std::int64_t length() const { return last - first + 1; }
};

struct GapReport {
    std::string site;
    std::vector<GapRange> missing_timestamps;
    std::map<VariableId, std::vector<GapRange>> missing_values;

    std::int64_t missing_timestamp_minutes() const {
        std::int64_t c = 0;
        for (const auto& r : missing_timestamps) c += r.length();
        return c;
    }
    std::int64_t missing_value_count(VariableId v) const {
        auto it = missing_values.find(v);
        if (it == missing_values.end()) return 0;
        std::int64_t c = 0;
        for (const auto& r : it->second) c += r.length();
        return c;
    }
    bool empty() const {
        if (!missing_timestamps.empty()) return false;
        for (const auto& [var, ranges] : missing_values)
            if (!ranges.empty()) return false;
        return true;
    }
};

// Reports every absent source line between the first and last timestamp, and
// every run of missing values on lines that are present. Ranges are maximal.
inline GapReport detect_gaps(const SiteDataset& ds) {
    GapReport report;
    report.site = ds.site_name;

    auto flush_runs = [&](auto is_gap, std::vector<GapRange>& out) {
        std::size_t i = 0;
        while (i < ds.length()) {
            if (!is_gap(i)) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j + 1 < ds.length() && is_gap(j + 1)) ++j;
            out.push_back(GapRange{ds.start() + static_cast<std::int64_t>(i),
                                   ds.start() + static_cast<std::int64_t>(j)});
            i = j + 1;
        }
    };

    flush_runs([&](std::size_t i) { return !ds.row_present(i); }, report.missing_timestamps);
    for (const auto& [var, series] : ds.series()) {
        std::vector<GapRange> runs;
        flush_runs([&](std::size_t i) { return ds.row_present(i) && series.is_missing(i); }, runs);
        if (!runs.empty()) report.missing_values[var] = std::move(runs);
    }
    return report;
}

inline json gap_report_to_json(const GapReport& r, int tz_offset_minutes) {
    json j;
    j["version"] = 1;
    j["site"] = r.site;
    auto range_json = [&](const GapRange& g) {
        return json{{"first", format_timestamp(g.first, tz_offset_minutes)},
                    {"last", format_timestamp(g.last, tz_offset_minutes)},
                    {"minutes", g.length()}};
    };
    j["missing_timestamps"] = json::array();
    for (const auto& g : r.missing_timestamps) j["missing_timestamps"].push_back(range_json(g));
    j["missing_values"] = json::object();
    for (const auto& [var, ranges] : r.missing_values) {
        json arr = json::array();
        for (const auto& g : ranges) arr.push_back(range_json(g));
        j["missing_values"][to_string(var)] = std::move(arr);
    }
    j["counts"] = {{"missing_timestamp_minutes", r.missing_timestamp_minutes()},
                   {"missing_value_cells", [&] {
                        std::int64_t c = 0;
                        for (const auto& [var, ranges] : r.missing_values)
                            for (const auto& g : ranges) c += g.length();
                        return c;
                    }()}};
    return j;
}

// ---------------------------------------------------------------------------
// Missing value repair.
// ---------------------------------------------------------------------------

// Completes every series by linear interpolation between the nearest observed
// neighbours. Runs without a neighbour on one side (series head or tail) are
// extended with the nearest observed value and a warning is recorded.
// Wind direction must be decomposed into UnitX/UnitY before repair: linear
// interpolation on raw angles is wrong across the 0/360 seam.
inline SiteDataset fill_missing(const SiteDataset& input,
                                std::vector<std::string>* warnings = nullptr) {
    if (input.has(VariableId::WD))
        throw ConfigError(
            "fill_missing: decompose WD into UnitX/UnitY before repairing gaps");

    SiteDataset ds = input;
    auto warn = [&](const std::string& msg) {
        log_warn(msg);
        if (warnings) warnings->push_back(msg);
    };

    std::vector<VariableId> vars;
    for (const auto& [var, unused] : ds.series()) vars.push_back(var);
    for (VariableId var : vars) {
        MinuteSeries& s = ds.at(var);
        const std::size_t n = s.size();
        std::vector<std::size_t> observed;
        observed.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            if (!s.is_missing(i)) observed.push_back(i);
        if (observed.empty())
            throw DataError(std::string("variable ") + to_string(var) +
                            " has no observed values; cannot repair");
        if (observed.size() == n) continue;

        // Head and tail: constant extension of the nearest observation.
        if (observed.front() > 0) {
            for (std::size_t i = 0; i < observed.front(); ++i) s.set(i, s.value(observed.front()));
            warn(ds.site_name + "/" + to_string(var) + ": leading " +
                 std::to_string(observed.front()) + " missing minutes filled by constant extension");
        }
        if (observed.back() + 1 < n) {
            for (std::size_t i = observed.back() + 1; i < n; ++i)
                s.set(i, s.value(observed.back()));
            warn(ds.site_name + "/" + to_string(var) + ": trailing " +
                 std::to_string(n - observed.back() - 1) +
                 " missing minutes filled by constant extension");
        }
        // Interior runs: straight line between the bracketing observations.
        for (std::size_t k = 0; k + 1 < observed.size(); ++k) {
            std::size_t a = observed[k], b = observed[k + 1];
            if (b == a + 1) continue;
            double va = s.value(a), vb = s.value(b);
            for (std::size_t i = a + 1; i < b; ++i) {
                double t = static_cast<double>(i - a) / static_cast<double>(b - a);
                s.set(i, va + t * (vb - va));
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Exclusion frames: day-rounded ranges removed from training and testing.
// ---------------------------------------------------------------------------

struct DayRange {
    CivilDate start;  // first excluded day
    CivilDate end;    // last excluded day, inclusive
};

struct ExclusionConfig {
    std::map<std::string, std::vector<DayRange>> sites;
};

inline ExclusionConfig exclusion_config_from_json(const json& j) {
    if (!j.contains("sites") || !j["sites"].is_object())
        throw ConfigError("exclusion config: missing 'sites' object");
    ExclusionConfig cfg;
    for (auto it = j["sites"].begin(); it != j["sites"].end(); ++it) {
        std::vector<DayRange> ranges;
        for (const auto& r : it.value()) {
            DayRange dr;
            try {
                dr.start = parse_date(r.at("start").get<std::string>());
                dr.end = parse_date(r.at("end").get<std::string>());
            } catch (const Error& e) {
                throw ConfigError(std::string("exclusion config: ranges must be day-aligned "
                                              "calendar dates: ") +
                                  e.what());
            }
            if (days_from_civil(dr.end.year, dr.end.month, dr.end.day) <
                days_from_civil(dr.start.year, dr.start.month, dr.start.day))
                throw ConfigError("exclusion config: range end before start");
            ranges.push_back(dr);
        }
        // Frames must be disjoint.
        std::sort(ranges.begin(), ranges.end(), [](const DayRange& a, const DayRange& b) {
            return days_from_civil(a.start.year, a.start.month, a.start.day) <
                   days_from_civil(b.start.year, b.start.month, b.start.day);
        });
        for (std::size_t i = 1; i < ranges.size(); ++i) {
            if (days_from_civil(ranges[i].start.year, ranges[i].start.month,
                                ranges[i].start.day) <=
                days_from_civil(ranges[i - 1].end.year, ranges[i - 1].end.month,
                                ranges[i - 1].end.day))
                throw ConfigError("exclusion config: overlapping frames for site '" + it.key() +
                                  "'");
        }
        cfg.sites[it.key()] = std::move(ranges);
    }
    return cfg;
}

inline json exclusion_config_to_json(const ExclusionConfig& cfg) {
    json sites = json::object();
    for (const auto& [name, ranges] : cfg.sites) {
        json arr = json::array();
        for (const auto& r : ranges)
            arr.push_back({{"start", format_date(r.start)}, {"end", format_date(r.end)}});
        sites[name] = std::move(arr);
    }
    return json{{"version", 1}, {"sites", sites}};
}

inline ExclusionConfig load_exclusion_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open exclusion config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("exclusion config '" + path + "': " + e.what());
    }
    return exclusion_config_from_json(j);
}

// Flags every slot falling inside the site's configured frames. Values are
// never altered; day ranges are interpreted in the site's local civil time.
inline SiteDataset apply_exclusions(const SiteDataset& input, const ExclusionConfig& cfg) {
    SiteDataset ds = input;
    auto it = cfg.sites.find(ds.site_name);
    if (it == cfg.sites.end()) return ds;
    for (const DayRange& r : it->second) {
        MinuteTimestamp begin = from_civil({r.start, 0, 0}, ds.tz_offset_minutes);
        MinuteTimestamp end =
            from_civil({r.end, 0, 0}, ds.tz_offset_minutes) + 1440;  // past last excluded day
        if (end.minutes_since_epoch <= ds.start().minutes_since_epoch ||
            begin.minutes_since_epoch > ds.end().minutes_since_epoch)
            continue;
        MinuteTimestamp lo = std::max(begin, ds.start());
        MinuteTimestamp hi = std::min(end, ds.end() + 1);
        for (std::int64_t m = lo - ds.start(); m < hi - ds.start(); ++m)
            ds.set_excluded(static_cast<std::size_t>(m));
        ds.add_exclusion_frame(MinuteRange{begin, end});
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Cleaned-dataset cache. One CSV with all derived columns plus a JSON
// sidecar carrying site metadata; doubles are printed with enough digits to
// round-trip exactly.
// ---------------------------------------------------------------------------

inline const std::vector<VariableId>& cache_variables() {
    static const std::vector<VariableId> v = {
        VariableId::I_D,  VariableId::I_G,     VariableId::Patm,  VariableId::RH,
        VariableId::Text, VariableId::WS_Mean, VariableId::UnitX, VariableId::UnitY,
        VariableId::kb};
    return v;
}

inline void write_clean_cache(const SiteDataset& ds, const std::string& csv_path,
                              const std::string& meta_path) {
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot write cache '" + csv_path + "'");
    out << "timestamp";
    for (VariableId v : cache_variables())
        if (ds.has(v)) out << ',' << to_string(v);
    out << ",excluded\n";
    char buf[32];
    for (std::size_t i = 0; i < ds.length(); ++i) {
        out << format_timestamp(ds.start() + static_cast<std::int64_t>(i), ds.tz_offset_minutes);
        for (VariableId v : cache_variables()) {
            if (!ds.has(v)) continue;
            std::snprintf(buf, sizeof(buf), "%.17g", ds.at(v).value(i));
            out << ',' << buf;
        }
        out << ',' << (ds.excluded(i) ? 1 : 0) << '\n';
    }
    out.close();
    if (!out) throw DataError("failed writing cache '" + csv_path + "'");

    json meta;
    meta["version"] = 1;
    meta["site"] = ds.site_name;
    meta["latitude"] = ds.latitude;
    meta["longitude"] = ds.longitude;
    meta["tz_offset_minutes"] = ds.tz_offset_minutes;
    meta["start"] = format_timestamp(ds.start(), ds.tz_offset_minutes);
    meta["length_minutes"] = ds.length();
    json frames = json::array();
    for (const auto& f : ds.exclusion_frames())
        frames.push_back({{"begin", format_timestamp(f.begin, ds.tz_offset_minutes)},
                          {"end", format_timestamp(f.end, ds.tz_offset_minutes)}});
    meta["exclusion_frames"] = std::move(frames);
    std::ofstream mout(meta_path);
    if (!mout) throw DataError("cannot write cache metadata '" + meta_path + "'");
    mout << meta.dump(2) << '\n';
}

inline SiteDataset read_clean_cache(const std::string& csv_path, const std::string& meta_path) {
    std::ifstream min(meta_path);
    if (!min) throw DataError("cannot open cache metadata '" + meta_path + "'");
    json meta;
    try {
        min >> meta;
    } catch (const json::exception& e) {
        throw DataError("cache metadata '" + meta_path + "': " + e.what());
    }
    int tz = meta.at("tz_offset_minutes").get<int>();

    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot open cache '" + csv_path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty cache '" + csv_path + "'");
    auto header = detail::split_line(detail::strip_cr(line), ',');
    if (header.empty() || header.front() != "timestamp" || header.back() != "excluded")
        throw DataError("cache '" + csv_path + "' has unexpected layout");
    std::vector<VariableId> vars;
    for (std::size_t i = 1; i + 1 < header.size(); ++i)
        vars.push_back(variable_from_string(header[i]));

    MinuteTimestamp start = parse_timestamp(meta.at("start").get<std::string>(), tz);
    std::size_t n = meta.at("length_minutes").get<std::size_t>();
    SiteDataset ds(meta.at("site").get<std::string>(), meta.at("latitude").get<double>(),
                   meta.at("longitude").get<double>(), start, n, tz);
    for (VariableId v : vars) ds.add_series(MinuteSeries(v, start, n));

    std::size_t i = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        if (i >= n) throw DataError("cache '" + csv_path + "' longer than metadata declares");
        auto cells = detail::split_line(line, ',');
        if (cells.size() != header.size())
            throw ParseError("cache row width mismatch", line_no);
        for (std::size_t k = 0; k < vars.size(); ++k)
            ds.at(vars[k]).set(i, detail::parse_real(cells[k + 1], line_no));
        if (cells.back() == "1") ds.set_excluded(i);
        ++i;
    }
    if (i != n) throw DataError("cache '" + csv_path + "' shorter than metadata declares");
    for (const auto& f : meta.at("exclusion_frames"))
        ds.add_exclusion_frame(
            MinuteRange{parse_timestamp(f.at("begin").get<std::string>(), tz),
                        parse_timestamp(f.at("end").get<std::string>(), tz)});
    return ds;
}

}  // namespace heliocast::ingest
