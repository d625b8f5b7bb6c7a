// End-to-end orchestration: one JSON config drives cleaning, synthesis, lag
// selection, training, evaluation, cross-site transfer and report rendering.
// Every stage writes deterministic files under the configured output
// directory; rerunning a stage with the same config and inputs reproduces
// its outputs byte for byte.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "heliocast/arima.hpp"
#include "heliocast/core.hpp"
#include "heliocast/eval.hpp"
#include "heliocast/features.hpp"
#include "heliocast/gbt.hpp"
#include "heliocast/ingest.hpp"
#include "heliocast/mlp.hpp"
#include "heliocast/model_io.hpp"
#include "heliocast/series.hpp"
#include "heliocast/solar.hpp"
#include "heliocast/synth.hpp"

namespace heliocast::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct SiteEntry {
    std::string name;
    std::string csv;
    double latitude = 0.0;
    double longitude = 0.0;
};

struct GbtGrid {
    std::vector<double> eta = {0.05, 0.1, 0.3};
    std::vector<int> max_depth = {3, 6, 9};
    std::vector<double> gamma = {0.0, 1.0};
    std::vector<int> n_rounds = {100, 300};
    std::vector<double> min_child_weight = {1.0};
    std::vector<double> subsample = {1.0};
    std::vector<double> lambda = {1.0};
    int cv_folds = 3;

    std::vector<gbt::GbtParams> expand() const {
        std::vector<gbt::GbtParams> grid;
        for (double e : eta)
            for (int d : max_depth)
                for (double g : gamma)
                    for (int r : n_rounds)
                        for (double mcw : min_child_weight)
                            for (double ss : subsample)
                                for (double l : lambda) {
                                    gbt::GbtParams p;
                                    p.eta = e;
                                    p.max_depth = d;
                                    p.gamma = g;
                                    p.n_rounds = r;
                                    p.min_child_weight = mcw;
                                    p.subsample = ss;
                                    p.lambda = l;
                                    p.validate();
                                    grid.push_back(p);
                                }
        if (grid.empty()) throw ConfigError("gbt grid expands to nothing");
        return grid;
    }
};

struct MlpSection {
    std::vector<int> hidden_candidates = {10, 30};
    int cv_folds = 10;
    int restarts = 10;
    int keep = 5;
    mlp::MlpConfig train;
};

struct PipelineConfig {
    std::vector<SiteEntry> sites;
    int tz_offset_minutes = 0;
    std::string csv_delimiter = ",";
    std::string timestamp_column = "timestamp";
    std::map<std::string, std::string> column_names;  // variable -> CSV header

    int train_year = 2014;
    int test_year = 2015;
    int horizon_minutes = 60;
    VariableId target = VariableId::kb;

    std::string exclusions_file;  // empty: no exclusions
    double nocturnal_sigma = 0.01;
    std::string sun_source = "computed";  // or "table"
    std::string sun_table_file;
    double low_irradiance_floor = 5.0;
    int max_gap_warn_minutes = 60;

    std::string lag_spec_source = "preset_table3";  // preset_table3 | auto | file
    std::string lag_spec_file;
    std::string reference_site;  // default: first site
    int arima_max_order = 20;
    std::uint64_t arima_max_minute_points = 0;

    std::vector<std::string> vector_kinds = {"instant", "arima"};
    std::vector<std::string> model_kinds = {"gbt", "mlp"};
    GbtGrid gbt_grid;
    MlpSection mlp_section;

    std::uint64_t seed = 42;
    int workers = 0;  // 0: hardware concurrency
    std::string out_dir = "out";

    synth::SynthConfig synth_config;
    std::map<std::string, synth::GapSpec> synth_gaps;  // keyed by site name

    ingest::CsvSchema csv_schema() const {
        ingest::CsvSchema s;
        if (csv_delimiter.size() != 1)
            throw ConfigError("csv_delimiter must be a single character");
        s.delimiter = csv_delimiter[0];
        s.timestamp_column = timestamp_column;
        s.tz_offset_minutes = tz_offset_minutes;
        for (const auto& [var, name] : column_names)
            s.columns[variable_from_string(var)] = name;
        return s;
    }

    void validate() const {
        if (train_year == test_year) throw ConfigError("train_year must differ from test_year");
        if (horizon_minutes < 1) throw ConfigError("horizon_minutes must be >= 1");
        if (!(nocturnal_sigma >= 0.0)) throw ConfigError("nocturnal_sigma must be >= 0");
        if (!(low_irradiance_floor >= 0.0))
            throw ConfigError("low_irradiance_floor must be >= 0");
        if (sun_source != "computed" && sun_source != "table")
            throw ConfigError("sun_source must be 'computed' or 'table'");
        if (sun_source == "table" && sun_table_file.empty())
            throw ConfigError("sun_source 'table' needs sun_table_file");
        if (lag_spec_source != "preset_table3" && lag_spec_source != "auto" &&
            lag_spec_source != "file")
            throw ConfigError("lag_spec_source must be preset_table3, auto or file");
        if (lag_spec_source == "file" && lag_spec_file.empty())
            throw ConfigError("lag_spec_source 'file' needs lag_spec_file");
        for (const auto& v : vector_kinds)
            if (v != "instant" && v != "arima")
                throw ConfigError("vector_kinds entries must be 'instant' or 'arima'");
        for (const auto& m : model_kinds)
            if (m != "gbt" && m != "mlp")
                throw ConfigError("model_kinds entries must be 'gbt' or 'mlp'");
        if (workers < 0) throw ConfigError("workers must be >= 0");
        if (mlp_section.keep < 1 || mlp_section.restarts < mlp_section.keep)
            throw ConfigError("mlp: need restarts >= keep >= 1");
        mlp_section.train.validate();
    }
};

namespace detail {

inline std::vector<std::pair<MinuteTimestamp, MinuteTimestamp>> parse_range_array(
    const json& arr, int tz) {
    std::vector<std::pair<MinuteTimestamp, MinuteTimestamp>> out;
    for (const auto& r : arr) {
        if (!r.is_array() || r.size() != 2)
            throw ConfigError("range entries must be [begin, end] timestamp pairs");
        out.emplace_back(parse_timestamp(r[0].get<std::string>(), tz),
                         parse_timestamp(r[1].get<std::string>(), tz));
    }
    return out;
}

inline json ranges_to_json(const std::vector<MinuteRange>& ranges, int tz) {
    json arr = json::array();
    for (const auto& r : ranges)
        arr.push_back(json::array({format_timestamp(r.begin, tz), format_timestamp(r.end, tz)}));
    return arr;
}

}  // namespace detail

inline json config_to_json(const PipelineConfig& c) {
    json j;
    json sites = json::array();
    for (const auto& s : c.sites)
        sites.push_back({{"name", s.name},
                         {"csv", s.csv},
                         {"latitude", s.latitude},
                         {"longitude", s.longitude}});
    j["sites"] = std::move(sites);
    j["tz_offset_minutes"] = c.tz_offset_minutes;
    j["csv_delimiter"] = c.csv_delimiter;
    j["timestamp_column"] = c.timestamp_column;
    j["column_names"] = c.column_names;
    j["train_year"] = c.train_year;
    j["test_year"] = c.test_year;
    j["horizon_minutes"] = c.horizon_minutes;
    j["target"] = to_string(c.target);
    j["exclusions_file"] = c.exclusions_file;
    j["nocturnal_sigma"] = c.nocturnal_sigma;
    j["sun_source"] = c.sun_source;
    j["sun_table_file"] = c.sun_table_file;
    j["low_irradiance_floor"] = c.low_irradiance_floor;
    j["max_gap_warn_minutes"] = c.max_gap_warn_minutes;
    j["lag_spec_source"] = c.lag_spec_source;
    j["lag_spec_file"] = c.lag_spec_file;
    j["reference_site"] = c.reference_site;
    j["arima_max_order"] = c.arima_max_order;
    j["arima_max_minute_points"] = c.arima_max_minute_points;
    j["vector_kinds"] = c.vector_kinds;
    j["model_kinds"] = c.model_kinds;
    j["gbt"] = {{"eta", c.gbt_grid.eta},
                {"max_depth", c.gbt_grid.max_depth},
                {"gamma", c.gbt_grid.gamma},
                {"n_rounds", c.gbt_grid.n_rounds},
                {"min_child_weight", c.gbt_grid.min_child_weight},
                {"subsample", c.gbt_grid.subsample},
                {"lambda", c.gbt_grid.lambda},
                {"cv_folds", c.gbt_grid.cv_folds}};
    j["mlp"] = {{"hidden_candidates", c.mlp_section.hidden_candidates},
                {"cv_folds", c.mlp_section.cv_folds},
                {"restarts", c.mlp_section.restarts},
                {"keep", c.mlp_section.keep},
                {"train", c.mlp_section.train.to_json()}};
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["out_dir"] = c.out_dir;
    j["synth"] = c.synth_config.to_json();
    json gaps = json::object();
    for (const auto& [site, spec] : c.synth_gaps) {
        json g;
        std::vector<MinuteRange> rows;
        for (const auto& r : spec.drop_rows) rows.push_back(r);
        g["drop_rows"] = detail::ranges_to_json(rows, c.synth_config.tz_offset_minutes);
        json vals = json::object();
        for (const auto& [var, ranges] : spec.drop_values)
            vals[to_string(var)] = detail::ranges_to_json(ranges, c.synth_config.tz_offset_minutes);
        g["drop_values"] = std::move(vals);
        gaps[site] = std::move(g);
    }
    j["synth_gaps"] = std::move(gaps);
    return j;
}

inline PipelineConfig config_from_json(const json& j) {
    static const std::set<std::string> known = {
        "sites",          "tz_offset_minutes",   "csv_delimiter",
        "timestamp_column", "column_names",      "train_year",
        "test_year",      "horizon_minutes",     "target",
        "exclusions_file", "nocturnal_sigma",    "sun_source",
        "sun_table_file", "low_irradiance_floor", "max_gap_warn_minutes",
        "lag_spec_source", "lag_spec_file",      "reference_site",
        "arima_max_order", "arima_max_minute_points", "vector_kinds",
        "model_kinds",    "gbt",                 "mlp",
        "seed",           "workers",             "out_dir",
        "synth",          "synth_gaps"};
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.contains(it.key()))
            log_warn("pipeline config: unknown key '" + it.key() + "' ignored");

    PipelineConfig c;
    if (j.contains("sites"))
        for (const auto& js : j["sites"])
            c.sites.push_back(SiteEntry{js.at("name").get<std::string>(),
                                        js.value("csv", ""), js.value("latitude", 0.0),
                                        js.value("longitude", 0.0)});
    c.tz_offset_minutes = j.value("tz_offset_minutes", c.tz_offset_minutes);
    c.csv_delimiter = j.value("csv_delimiter", c.csv_delimiter);
    c.timestamp_column = j.value("timestamp_column", c.timestamp_column);
    if (j.contains("column_names"))
        c.column_names = j["column_names"].get<std::map<std::string, std::string>>();
    c.train_year = j.value("train_year", c.train_year);
    c.test_year = j.value("test_year", c.test_year);
    c.horizon_minutes = j.value("horizon_minutes", c.horizon_minutes);
    if (j.contains("target")) c.target = variable_from_string(j["target"].get<std::string>());
    c.exclusions_file = j.value("exclusions_file", c.exclusions_file);
    c.nocturnal_sigma = j.value("nocturnal_sigma", c.nocturnal_sigma);
    c.sun_source = j.value("sun_source", c.sun_source);
    c.sun_table_file = j.value("sun_table_file", c.sun_table_file);
    c.low_irradiance_floor = j.value("low_irradiance_floor", c.low_irradiance_floor);
    c.max_gap_warn_minutes = j.value("max_gap_warn_minutes", c.max_gap_warn_minutes);
    c.lag_spec_source = j.value("lag_spec_source", c.lag_spec_source);
    c.lag_spec_file = j.value("lag_spec_file", c.lag_spec_file);
    c.reference_site = j.value("reference_site", c.reference_site);
    c.arima_max_order = j.value("arima_max_order", c.arima_max_order);
    c.arima_max_minute_points =
        j.value("arima_max_minute_points", c.arima_max_minute_points);
    c.vector_kinds = j.value("vector_kinds", c.vector_kinds);
    c.model_kinds = j.value("model_kinds", c.model_kinds);
    if (j.contains("gbt")) {
        const json& g = j["gbt"];
        c.gbt_grid.eta = g.value("eta", c.gbt_grid.eta);
        c.gbt_grid.max_depth = g.value("max_depth", c.gbt_grid.max_depth);
        c.gbt_grid.gamma = g.value("gamma", c.gbt_grid.gamma);
        c.gbt_grid.n_rounds = g.value("n_rounds", c.gbt_grid.n_rounds);
        c.gbt_grid.min_child_weight = g.value("min_child_weight", c.gbt_grid.min_child_weight);
        c.gbt_grid.subsample = g.value("subsample", c.gbt_grid.subsample);
        c.gbt_grid.lambda = g.value("lambda", c.gbt_grid.lambda);
        c.gbt_grid.cv_folds = g.value("cv_folds", c.gbt_grid.cv_folds);
    }
    if (j.contains("mlp")) {
        const json& m = j["mlp"];
        c.mlp_section.hidden_candidates =
            m.value("hidden_candidates", c.mlp_section.hidden_candidates);
        c.mlp_section.cv_folds = m.value("cv_folds", c.mlp_section.cv_folds);
        c.mlp_section.restarts = m.value("restarts", c.mlp_section.restarts);
        c.mlp_section.keep = m.value("keep", c.mlp_section.keep);
        if (m.contains("train")) c.mlp_section.train = mlp::MlpConfig::from_json(m["train"]);
    }
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("synth")) c.synth_config = synth::SynthConfig::from_json(j["synth"]);
    if (j.contains("synth_gaps")) {
        for (auto it = j["synth_gaps"].begin(); it != j["synth_gaps"].end(); ++it) {
            synth::GapSpec spec;
            const json& g = it.value();
            if (g.contains("drop_rows"))
                for (auto [b, e] :
                     detail::parse_range_array(g["drop_rows"], c.synth_config.tz_offset_minutes))
                    spec.drop_rows.push_back(MinuteRange{b, e});
            if (g.contains("drop_values"))
                for (auto vt = g["drop_values"].begin(); vt != g["drop_values"].end(); ++vt) {
                    std::vector<MinuteRange> ranges;
                    for (auto [b, e] : detail::parse_range_array(
                             vt.value(), c.synth_config.tz_offset_minutes))
                        ranges.push_back(MinuteRange{b, e});
                    spec.drop_values[variable_from_string(vt.key())] = std::move(ranges);
                }
            c.synth_gaps[it.key()] = std::move(spec);
        }
    }
    c.validate();
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string slug(const std::string& name) {
    std::string out;
    bool gap = false;
    for (unsigned char ch : name) {
        if ((ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9')) {
            out.push_back(static_cast<char>(ch));
            gap = false;
        } else if (ch >= 'A' && ch <= 'Z') {
            out.push_back(static_cast<char>(ch - 'A' + 'a'));
            gap = false;
        } else if (!out.empty() && !gap) {
            out.push_back('_');
            gap = true;
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    if (out.empty()) throw ConfigError("site name '" + name + "' has no usable characters");
    return out;
}

inline void write_json_file(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
    out.close();
    if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline json read_json_file(const fs::path& path, const char* what) {
    std::ifstream in(path);
    if (!in)
        throw DataError(std::string("cannot open ") + what + " '" + path.string() +
                        "'; run the producing step first");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string(what) + " '" + path.string() + "': " + e.what());
    }
    return j;
}

// Runs fn(0..n-1) on a shared-counter worker pool. Output slots must be
// preallocated by the caller; the first exception wins and is rethrown after
// all workers drain.
inline void run_parallel(int workers, std::size_t n, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    std::size_t pool = workers > 0 ? static_cast<std::size_t>(workers)
                                   : std::max<std::size_t>(hw ? hw : 1, 1);
    pool = std::min(pool, n);
    if (pool <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (std::size_t t = 0; t < pool; ++t) {
        threads.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                    return;
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline fs::path clean_csv_path(const PipelineConfig& c, const std::string& site) {
    return fs::path(c.out_dir) / "clean" / (slug(site) + ".csv");
}
inline fs::path clean_meta_path(const PipelineConfig& c, const std::string& site) {
    return fs::path(c.out_dir) / "clean" / (slug(site) + ".meta.json");
}
inline fs::path model_path(const PipelineConfig& c, const std::string& site,
                           const std::string& vector_kind, const std::string& model_kind) {
    return fs::path(c.out_dir) / "models" /
           (slug(site) + "." + vector_kind + "." + model_kind + ".json");
}

inline std::vector<SiteEntry> selected_sites(const PipelineConfig& c,
                                             const std::string& site_filter) {
    if (c.sites.empty()) throw ConfigError("config lists no sites");
    if (site_filter.empty()) return c.sites;
    for (const auto& s : c.sites)
        if (s.name == site_filter) return {s};
    throw ConfigError("site '" + site_filter + "' not in config");
}

inline solar::SunTimes sun_for(const PipelineConfig& c, const SiteDataset& ds) {
    if (c.sun_source == "table")
        return solar::SunTimes::from_table_file(c.sun_table_file, ds.tz_offset_minutes);
    CivilDate first = to_civil(ds.start(), ds.tz_offset_minutes).date;
    CivilDate last = to_civil(ds.end(), ds.tz_offset_minutes).date;
    return solar::SunTimes::computed(ds.latitude, ds.longitude, ds.tz_offset_minutes, first,
                                     last);
}

inline SiteDataset load_clean(const PipelineConfig& c, const std::string& site) {
    return ingest::read_clean_cache(clean_csv_path(c, site).string(),
                                    clean_meta_path(c, site).string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage: synth.
// ---------------------------------------------------------------------------

struct SynthResult {
    std::vector<std::string> csv_paths;
    std::string manifest_path;
};

// Generates the configured synthetic sites, injects any configured gaps and
// writes raw CSVs plus a manifest that can be pasted into the `sites` config
// section.
inline SynthResult run_synth(const PipelineConfig& cfg) {
    fs::path dir = fs::path(cfg.out_dir) / "synth";
    fs::create_directories(dir);
    std::vector<SiteDataset> sites = synth::generate(cfg.synth_config);
    ingest::CsvSchema schema;
    schema.tz_offset_minutes = cfg.synth_config.tz_offset_minutes;

    SynthResult result;
    json manifest = json::array();
    for (SiteDataset& ds : sites) {
        auto it = cfg.synth_gaps.find(ds.site_name);
        if (it != cfg.synth_gaps.end()) {
            auto [wounded, truth] = synth::inject_gaps(ds, it->second);
            ds = std::move(wounded);
            std::size_t cells = 0;
            for (const auto& [var, removed] : truth.removed) cells += removed.size();
            log_info("synth: injected gaps into " + ds.site_name + " (" +
                     std::to_string(cells) + " cells)");
        }
        fs::path csv = dir / (detail::slug(ds.site_name) + ".csv");
        synth::write_site_csv(ds, csv.string(), schema);
        result.csv_paths.push_back(csv.string());
        manifest.push_back({{"name", ds.site_name},
                            {"csv", csv.string()},
                            {"latitude", ds.latitude},
                            {"longitude", ds.longitude}});
    }
    fs::path mpath = dir / "sites.json";
    detail::write_json_file(json{{"sites", manifest}}, mpath);
    result.manifest_path = mpath.string();
    return result;
}

// ---------------------------------------------------------------------------
// Stage: clean.
// ---------------------------------------------------------------------------

struct CleanSiteSummary {
    std::string site;
    std::size_t rows = 0;
    std::size_t absent_rows = 0;
    std::size_t suspicious_kb = 0;
    std::size_t excluded_minutes = 0;
    std::vector<std::string> warnings;
};

struct CleanResult {
    std::vector<CleanSiteSummary> sites;
};

// Full cleaning recipe for one raw site file:
// parse -> gap report -> wind decomposition -> linear repair -> kb ->
// nocturnal masking -> exclusion flags -> cache.
inline CleanSiteSummary clean_one_site(const PipelineConfig& cfg, const SiteEntry& entry) {
    ingest::CsvSchema schema = cfg.csv_schema();
    ingest::SiteInfo info{entry.name, entry.latitude, entry.longitude};
    SiteDataset raw = ingest::parse_site_csv(entry.csv, schema, info);

    CleanSiteSummary summary;
    summary.site = entry.name;
    summary.rows = raw.length();
    summary.absent_rows = raw.absent_row_count();

    ingest::GapReport gaps = ingest::detect_gaps(raw);
    fs::path clean_dir = fs::path(cfg.out_dir) / "clean";
    fs::create_directories(clean_dir);
    detail::write_json_file(ingest::gap_report_to_json(gaps, cfg.tz_offset_minutes),
                            clean_dir / (detail::slug(entry.name) + ".gaps.json"));
    auto warn_long = [&](const ingest::GapRange& g, const std::string& what) {
        if (g.length() >= cfg.max_gap_warn_minutes) {
            std::string msg = entry.name + ": " + what + " gap of " +
                              std::to_string(g.length()) + " minutes starting " +
                              format_timestamp(g.first, cfg.tz_offset_minutes) +
                              "; consider an exclusion frame";
            log_warn(msg);
            summary.warnings.push_back(msg);
        }
    };
    for (const auto& g : gaps.missing_timestamps) warn_long(g, "missing-row");
    for (const auto& [var, ranges] : gaps.missing_values)
        for (const auto& g : ranges) warn_long(g, std::string(to_string(var)) + " missing-value");

    SiteDataset ds = features::decompose_wind(raw);
    ds = ingest::fill_missing(ds, &summary.warnings);

    solar::SunTimes sun = detail::sun_for(cfg, ds);
    features::KbSeries kb = features::compute_kb_series(ds, sun, cfg.low_irradiance_floor);
    summary.suspicious_kb = kb.suspicious_count;
    if (kb.suspicious_count > 0) {
        std::string msg = entry.name + ": " + std::to_string(kb.suspicious_count) +
                          " daytime slots with global irradiance below " +
                          std::to_string(cfg.low_irradiance_floor) + " W/m^2";
        log_warn(msg);
        summary.warnings.push_back(msg);
    }
    features::NocturnalMask mask;
    mask.sigma = cfg.nocturnal_sigma;
    mask.seed = derive_seed(cfg.seed, detail::fnv1a(entry.name));
    ds.add_series(features::mask_nocturnal(kb.kb, sun, mask));

    if (!cfg.exclusions_file.empty()) {
        ingest::ExclusionConfig exclusions = ingest::load_exclusion_config(cfg.exclusions_file);
        ds = ingest::apply_exclusions(ds, exclusions);
    }
    summary.excluded_minutes = ds.excluded_count();

    ingest::write_clean_cache(ds, detail::clean_csv_path(cfg, entry.name).string(),
                              detail::clean_meta_path(cfg, entry.name).string());
    return summary;
}

inline CleanResult run_clean(const PipelineConfig& cfg, const std::string& site_filter = "") {
    auto sites = detail::selected_sites(cfg, site_filter);
    CleanResult result;
    result.sites.resize(sites.size());
    detail::run_parallel(cfg.workers, sites.size(), [&](std::size_t i) {
        result.sites[i] = clean_one_site(cfg, sites[i]);
    });
    json j = json::array();
    for (const auto& s : result.sites)
        j.push_back({{"site", s.site},
                     {"rows", s.rows},
                     {"absent_rows", s.absent_rows},
                     {"suspicious_kb", s.suspicious_kb},
                     {"excluded_minutes", s.excluded_minutes},
                     {"warnings", s.warnings}});
    detail::write_json_file(json{{"version", 1}, {"sites", j}},
                            fs::path(cfg.out_dir) / "clean" / "summary.json");
    return result;
}

// ---------------------------------------------------------------------------
// Stage: lag selection.
// ---------------------------------------------------------------------------

struct LagStageResult {
    features::LagSpec spec;
    std::string spec_path;
};

// Resolves the lag specification per the configured source. "auto" runs the
// full selection recipe on the reference site's cleaned training year and
// writes a report alongside the spec.
inline LagStageResult run_select_lags(const PipelineConfig& cfg) {
    fs::path dir = fs::path(cfg.out_dir) / "lags";
    fs::create_directories(dir);
    LagStageResult result;
    json meta;
    meta["source"] = cfg.lag_spec_source;
    if (cfg.lag_spec_source == "preset_table3") {
        result.spec = features::preset_table3();
    } else if (cfg.lag_spec_source == "file") {
        result.spec = features::load_lag_spec(cfg.lag_spec_file);
        meta["file"] = cfg.lag_spec_file;
    } else {
        std::string ref = cfg.reference_site.empty()
                              ? detail::selected_sites(cfg, "").front().name
                              : cfg.reference_site;
        meta["reference_site"] = ref;
        SiteDataset ds = detail::load_clean(cfg, ref);
        arima::LagSelectionOptions opts;
        opts.range = MinuteRange{from_civil({{cfg.train_year, 1, 1}, 0, 0}, cfg.tz_offset_minutes),
                                 from_civil({{cfg.train_year + 1, 1, 1}, 0, 0}, cfg.tz_offset_minutes)};
        opts.max_order = cfg.arima_max_order;
        opts.max_minute_points = cfg.arima_max_minute_points;
        arima::SelectionReport report;
        result.spec = arima::build_lag_spec(ds, opts, &report);
        detail::write_json_file(arima::selection_report_to_json(report),
                                dir / "selection_report.json");
    }
    features::validate_lag_spec(result.spec);
    meta["dimension"] = features::lag_spec_dimension(result.spec);
    fs::path spec_path = dir / "lag_spec.json";
    detail::write_json_file(features::lag_spec_to_json(result.spec), spec_path);
    detail::write_json_file(meta, dir / "lag_spec.meta.json");
    result.spec_path = spec_path.string();
    return result;
}

// The spec the train/evaluate stages should use, resolving "auto" to the
// select-lags output on disk.
inline features::LagSpec resolve_lag_spec(const PipelineConfig& cfg) {
    if (cfg.lag_spec_source == "preset_table3") return features::preset_table3();
    if (cfg.lag_spec_source == "file") return features::load_lag_spec(cfg.lag_spec_file);
    fs::path spec_path = fs::path(cfg.out_dir) / "lags" / "lag_spec.json";
    return features::lag_spec_from_json(
        detail::read_json_file(spec_path, "lag specification"));
}

// ---------------------------------------------------------------------------
// Stage: train.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<features::FeatureRef> layout_for(const PipelineConfig& cfg,
                                                    const std::string& vector_kind,
                                                    const features::LagSpec& spec) {
    if (vector_kind == "instant") return features::instant_layout();
    if (vector_kind == "arima") return features::layout_from_spec(spec);
    throw ConfigError("unknown vector kind '" + vector_kind + "'");
}

// Variables appearing in a layout, deduplicated.
inline std::vector<VariableId> layout_variables(const std::vector<features::FeatureRef>& layout) {
    std::vector<VariableId> vars;
    for (const auto& f : layout)
        if (std::find(vars.begin(), vars.end(), f.var) == vars.end()) vars.push_back(f.var);
    return vars;
}

inline MinuteRange year_range(const PipelineConfig& cfg, int year) {
    return MinuteRange{from_civil({{year, 1, 1}, 0, 0}, cfg.tz_offset_minutes),
                       from_civil({{year + 1, 1, 1}, 0, 0}, cfg.tz_offset_minutes)};
}

// Train-year month-by-hour cells for every variable used by the layout.
inline features::NormalizationStats fit_layout_stats(const PipelineConfig& cfg,
                                                     const SiteDataset& ds,
                                                     const std::vector<features::FeatureRef>& layout) {
    features::NormalizationStats stats;
    for (VariableId var : layout_variables(layout))
        stats[var] = features::fit_monthly_hourly(ds, var, year_range(cfg, cfg.train_year));
    return stats;
}

// Assembles the full supervised set for one (site, vector kind) and splits
// off daytime-target train/test rows by year.
struct AssembledSplit {
    eval::TrainTestSplit split;
    features::NormalizationStats stats;  // empty unless normalized
};

inline AssembledSplit assemble_split(const PipelineConfig& cfg, const SiteDataset& ds,
                                     const solar::SunTimes& sun,
                                     const std::vector<features::FeatureRef>& layout,
                                     const std::string& vector_kind, bool normalized,
                                     const features::NormalizationStats* stats_override = nullptr) {
    AssembledSplit out;
    features::AssembleOptions opts;
    opts.horizon_minutes = cfg.horizon_minutes;
    opts.target = cfg.target;
    opts.vector_kind = vector_kind;
    if (normalized) {
        if (stats_override)
            out.stats = *stats_override;
        else
            out.stats = fit_layout_stats(cfg, ds, layout);
        opts.normalization = &out.stats;
    }
    features::SupervisedSet set = features::assemble(ds, layout, opts);
    set = eval::filter_nocturnal_targets(set, sun);
    out.split = eval::split_train_test(set, cfg.train_year, cfg.test_year,
                                       cfg.tz_offset_minutes);
    return out;
}

}  // namespace detail

struct TrainResult {
    std::vector<std::string> artifact_paths;
    std::map<std::string, int> mlp_sizes;  // per vector kind
};

// Trains every configured (site, vector kind, model kind) combination.
// Perceptron sizes are selected once per vector kind on the reference site
// and reused everywhere, then each site trains its own restart ensemble;
// boosted trees grid-tune per site. Artifacts land under out/models.
inline TrainResult run_train(const PipelineConfig& cfg, const std::string& site_filter = "") {
    auto sites = detail::selected_sites(cfg, site_filter);
    features::LagSpec spec = resolve_lag_spec(cfg);
    fs::path models_dir = fs::path(cfg.out_dir) / "models";
    fs::create_directories(models_dir);

    TrainResult result;
    const bool want_gbt =
        std::find(cfg.model_kinds.begin(), cfg.model_kinds.end(), "gbt") != cfg.model_kinds.end();
    const bool want_mlp =
        std::find(cfg.model_kinds.begin(), cfg.model_kinds.end(), "mlp") != cfg.model_kinds.end();

    // Stage 1: perceptron size per vector kind, chosen on the reference site.
    std::map<std::string, mlp::SizeSelection> mlp_selection;
    if (want_mlp) {
        std::string ref = cfg.reference_site.empty() ? cfg.sites.front().name
                                                     : cfg.reference_site;
        SiteDataset ref_ds = detail::load_clean(cfg, ref);
        solar::SunTimes ref_sun = detail::sun_for(cfg, ref_ds);
        json sizes_json = json::object();
        for (const auto& vk : cfg.vector_kinds) {
            auto layout = detail::layout_for(cfg, vk, spec);
            auto assembled = detail::assemble_split(cfg, ref_ds, ref_sun, layout, vk, true);
            mlp::SizeSelection sel = mlp::select_size(
                assembled.split.train, cfg.mlp_section.hidden_candidates,
                cfg.mlp_section.cv_folds, cfg.mlp_section.train,
                derive_seed(cfg.seed, 0x73697a65, detail::fnv1a(vk)));
            mlp_selection[vk] = sel;
            result.mlp_sizes[vk] = sel.best;
            json cv = json::object();
            for (std::size_t i = 0; i < cfg.mlp_section.hidden_candidates.size(); ++i)
                cv[std::to_string(cfg.mlp_section.hidden_candidates[i])] = sel.cv_rmse[i];
            sizes_json[vk] = {{"reference_site", ref}, {"best", sel.best}, {"cv_rmse", cv}};
        }
        detail::write_json_file(sizes_json, models_dir / "mlp_size_selection.json");
    }

    // Stage 2: per-site training units in parallel.
    struct Unit {
        std::string site;
        std::string vector_kind;
        std::string model_kind;
    };
    std::vector<Unit> units;
    for (const auto& site : sites)
        for (const auto& vk : cfg.vector_kinds) {
            if (want_gbt) units.push_back({site.name, vk, "gbt"});
            if (want_mlp) units.push_back({site.name, vk, "mlp"});
        }
    std::vector<std::string> paths(units.size());

    detail::run_parallel(cfg.workers, units.size(), [&](std::size_t ui) {
        const Unit& u = units[ui];
        SiteDataset ds = detail::load_clean(cfg, u.site);
        solar::SunTimes sun = detail::sun_for(cfg, ds);
        auto layout = detail::layout_for(cfg, u.vector_kind, spec);

        model_io::ModelArtifact artifact;
        artifact.vector_kind = u.vector_kind;
        artifact.site = u.site;
        artifact.train_year = cfg.train_year;
        artifact.tz_offset_minutes = cfg.tz_offset_minutes;
        artifact.layout = layout;
        artifact.seed = derive_seed(cfg.seed, detail::fnv1a(u.site),
                                    detail::fnv1a(u.vector_kind), detail::fnv1a(u.model_kind));

        if (u.model_kind == "gbt") {
            auto assembled = detail::assemble_split(cfg, ds, sun, layout, u.vector_kind, false);
            auto grid = cfg.gbt_grid.expand();
            gbt::TuneResult tuned = grid.size() > 1
                                        ? gbt::tune(assembled.split.train, grid,
                                                    cfg.gbt_grid.cv_folds, artifact.seed)
                                        : gbt::TuneResult{grid.front(), {}};
            artifact.kind = model_io::ModelKind::Gbt;
            artifact.gbt_model = gbt::fit(assembled.split.train, tuned.best, artifact.seed);
            artifact.hyper = {{"tuned", tuned.best.to_json()},
                              {"grid_cv_rmse", tuned.cv_rmse},
                              {"train_rows", assembled.split.train.n_rows()}};
        } else {
            auto assembled = detail::assemble_split(cfg, ds, sun, layout, u.vector_kind, true);
            int hidden = mlp_selection.at(u.vector_kind).best;
            artifact.kind = model_io::ModelKind::MlpEnsemble;
            artifact.mlp_ensemble =
                mlp::train_ensemble(assembled.split.train, hidden, cfg.mlp_section.train,
                                    artifact.seed, cfg.mlp_section.restarts, cfg.mlp_section.keep);
            artifact.normalization = assembled.stats;
            json members = json::array();
            for (const auto& m : artifact.mlp_ensemble.members)
                members.push_back(m.validation_rmse);
            artifact.hyper = {{"hidden", hidden},
                              {"restarts", cfg.mlp_section.restarts},
                              {"keep", cfg.mlp_section.keep},
                              {"member_validation_rmse", members},
                              {"train_rows", assembled.split.train.n_rows()}};
        }
        fs::path path = detail::model_path(cfg, u.site, u.vector_kind, u.model_kind);
        model_io::save_model(artifact, path.string());
        paths[ui] = path.string();
    });
    result.artifact_paths = paths;
    return result;
}

// ---------------------------------------------------------------------------
// Stage: evaluate.
// ---------------------------------------------------------------------------

struct EvaluateResult {
    std::vector<eval::EvalRow> rows;
    std::vector<eval::CorrelationSummary> correlations;
    std::string report_json_path;
};

// Scores every trained artifact on its own site's test year (daytime targets
// only), dumps per-row predictions, computes between-site correlations of
// the cleaned signals and writes the evaluation report (JSON + CSV).
inline EvaluateResult run_evaluate(const PipelineConfig& cfg) {
    auto sites = detail::selected_sites(cfg, "");
    fs::path eval_dir = fs::path(cfg.out_dir) / "eval";
    fs::path pred_dir = eval_dir / "predictions";
    fs::create_directories(pred_dir);

    struct Unit {
        std::string site;
        std::string vector_kind;
        std::string model_kind;
    };
    std::vector<Unit> units;
    for (const auto& site : sites)
        for (const auto& vk : cfg.vector_kinds)
            for (const auto& mk : cfg.model_kinds) units.push_back({site.name, vk, mk});

    std::vector<eval::EvalRow> rows(units.size());
    detail::run_parallel(cfg.workers, units.size(), [&](std::size_t ui) {
        const Unit& u = units[ui];
        model_io::ModelArtifact artifact =
            model_io::load_model(detail::model_path(cfg, u.site, u.vector_kind, u.model_kind).string());
        SiteDataset ds = detail::load_clean(cfg, u.site);
        solar::SunTimes sun = detail::sun_for(cfg, ds);
        bool normalized = artifact.kind == model_io::ModelKind::MlpEnsemble;
        auto assembled = detail::assemble_split(cfg, ds, sun, artifact.layout, u.vector_kind,
                                                normalized,
                                                normalized ? &artifact.normalization : nullptr);
        const features::SupervisedSet& test = assembled.split.test;
        model_io::check_layout(artifact, test);
        std::vector<double> pred(test.n_rows());
        for (std::size_t i = 0; i < test.n_rows(); ++i)
            pred[i] = artifact.predict_row(test.row(i));
        eval::Score score{eval::rmse(test.y, pred), eval::mae(test.y, pred), test.n_rows()};
        rows[ui] = eval::EvalRow{u.site, u.site, u.vector_kind, u.model_kind, score};
        eval::dump_predictions(
            (pred_dir / (detail::slug(u.site) + "." + u.vector_kind + "." + u.model_kind + ".csv"))
                .string(),
            test, pred, cfg.tz_offset_minutes);
    });

    // Raw-signal correlations need at least two sites; skip quietly otherwise.
    std::vector<eval::CorrelationSummary> correlations;
    if (sites.size() >= 2) {
        std::vector<SiteDataset> datasets;
        datasets.reserve(sites.size());
        for (const auto& s : sites) datasets.push_back(detail::load_clean(cfg, s.name));
        std::vector<const SiteDataset*> ptrs;
        for (const auto& d : datasets) ptrs.push_back(&d);
        for (VariableId var : model_variables()) {
            try {
                correlations.push_back(eval::between_site_correlation(ptrs, var));
            } catch (const DataError& e) {
                log_warn(std::string("correlation for ") + to_string(var) + " skipped: " +
                         e.what());
            }
        }
    }

    json report = eval::build_report_json(rows, {}, correlations);
    eval::validate_report_json(report);
    detail::write_json_file(report, eval_dir / "eval_report.json");
    eval::detail::write_text((eval_dir / "eval_report.csv").string(),
                             eval::eval_rows_to_csv(rows));
    eval::detail::write_text((eval_dir / "correlations.csv").string(),
                             eval::correlations_to_csv(correlations));

    EvaluateResult result;
    result.rows = rows;
    result.correlations = correlations;
    result.report_json_path = (eval_dir / "eval_report.json").string();
    return result;
}

// ---------------------------------------------------------------------------
// Stage: cross-site transfer.
// ---------------------------------------------------------------------------

struct CrossEvalResult {
    std::vector<eval::CrossSiteMatrix> matrices;
};

// Every artifact of one (model kind, vector kind) family is scored on every
// site's test rows. Normalized models carry their own statistics, so the
// test features for site j are re-normalized per training artifact.
inline CrossEvalResult run_cross_eval(const PipelineConfig& cfg) {
    auto sites = detail::selected_sites(cfg, "");
    if (sites.size() < 2) throw ConfigError("cross-eval needs at least two sites");
    features::LagSpec spec = resolve_lag_spec(cfg);
    fs::path eval_dir = fs::path(cfg.out_dir) / "eval";
    fs::create_directories(eval_dir);

    std::map<std::string, SiteDataset> datasets;
    std::map<std::string, solar::SunTimes> suns;
    for (const auto& s : sites) {
        datasets.emplace(s.name, detail::load_clean(cfg, s.name));
        suns.emplace(s.name, detail::sun_for(cfg, datasets.at(s.name)));
    }

    CrossEvalResult result;
    for (const auto& mk : cfg.model_kinds) {
        for (const auto& vk : cfg.vector_kinds) {
            std::map<std::string, model_io::ModelArtifact> artifacts;
            for (const auto& s : sites)
                artifacts.emplace(
                    s.name,
                    model_io::load_model(detail::model_path(cfg, s.name, vk, mk).string()));
            auto layout = detail::layout_for(cfg, vk, spec);

            eval::CrossSiteMatrix matrix;
            matrix.model_kind = mk;
            matrix.vector_kind = vk;
            for (const auto& kv : artifacts) matrix.sites.push_back(kv.first);
            matrix.rmse.assign(matrix.sites.size(),
                               std::vector<double>(matrix.sites.size(), 0.0));

            if (mk == "gbt") {
                // Raw features: one test set per site serves all artifacts.
                std::map<std::string, features::SupervisedSet> tests;
                for (const auto& s : sites) {
                    auto assembled = detail::assemble_split(cfg, datasets.at(s.name),
                                                            suns.at(s.name), layout, vk, false);
                    tests.emplace(s.name, std::move(assembled.split.test));
                }
                matrix = eval::cross_site_evaluate(artifacts, tests);
            } else {
                // Normalization travels with the artifact: assemble site j's
                // test rows with site i's training statistics.
                for (std::size_t i = 0; i < matrix.sites.size(); ++i) {
                    const auto& artifact = artifacts.at(matrix.sites[i]);
                    for (std::size_t jx = 0; jx < matrix.sites.size(); ++jx) {
                        auto assembled = detail::assemble_split(
                            cfg, datasets.at(matrix.sites[jx]), suns.at(matrix.sites[jx]),
                            layout, vk, true, &artifact.normalization);
                        eval::Score s = eval::score_artifact(artifact, assembled.split.test);
                        matrix.rmse[i][jx] = s.rmse;
                    }
                }
            }
            detail::write_json_file(eval::cross_site_to_json(matrix),
                                    eval_dir / ("cross_site." + mk + "." + vk + ".json"));
            eval::detail::write_text(
                (eval_dir / ("cross_site." + mk + "." + vk + ".csv")).string(),
                eval::cross_site_to_csv(matrix));
            result.matrices.push_back(std::move(matrix));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Stage: report.
// ---------------------------------------------------------------------------

struct ReportResult {
    std::string summary_path;
};

// Collates the outputs of evaluate and cross-eval into presentation tables:
// single-site error by (vector, model) x site, correlations, and one
// transfer table per model/vector family found on disk.
inline ReportResult run_report(const PipelineConfig& cfg) {
    fs::path eval_dir = fs::path(cfg.out_dir) / "eval";
    fs::path report_dir = fs::path(cfg.out_dir) / "report";
    fs::create_directories(report_dir);
    json eval_report = detail::read_json_file(eval_dir / "eval_report.json",
                                              "evaluation report");
    eval::validate_report_json(eval_report);

    // Pivot per-site rows: lines = (vector, model, metric), columns = sites.
    std::vector<std::string> site_order;
    for (const auto& r : eval_report["per_site"]) {
        std::string s = r["test_site"].get<std::string>();
        if (std::find(site_order.begin(), site_order.end(), s) == site_order.end())
            site_order.push_back(s);
    }
    std::string csv = "vector_kind,model_kind,metric";
    for (const auto& s : site_order) csv += "," + s;
    csv += "\n";
    for (const auto& vk : cfg.vector_kinds)
        for (const auto& mk : cfg.model_kinds)
            for (const char* metric : {"rmse", "mae"}) {
                csv += vk + "," + mk + "," + metric;
                for (const auto& site : site_order) {
                    double value = std::numeric_limits<double>::quiet_NaN();
                    for (const auto& r : eval_report["per_site"])
                        if (r["vector_kind"] == vk && r["model_kind"] == mk &&
                            r["test_site"] == site)
                            value = r[metric].get<double>();
                    csv += ",";
                    csv += std::isnan(value) ? "" : eval::detail::fmt(value);
                }
                csv += "\n";
            }
    eval::detail::write_text((report_dir / "single_site.csv").string(), csv);

    json summary;
    summary["version"] = 1;
    summary["single_site"] = eval_report["per_site"];
    summary["correlations"] = eval_report["correlations"];
    json transfers = json::array();
    for (const auto& mk : cfg.model_kinds) {
        for (const auto& vk : cfg.vector_kinds) {
            fs::path p = eval_dir / ("cross_site." + mk + "." + vk + ".json");
            if (fs::exists(p)) {
                json m = detail::read_json_file(p, "cross-site matrix");
                transfers.push_back(m);
                std::ifstream csv_in(eval_dir / ("cross_site." + mk + "." + vk + ".csv"));
                if (csv_in) {
                    std::string content((std::istreambuf_iterator<char>(csv_in)),
                                        std::istreambuf_iterator<char>());
                    eval::detail::write_text(
                        (report_dir / ("transfer_" + mk + "_" + vk + ".csv")).string(), content);
                }
            }
        }
    }
    summary["cross_site"] = std::move(transfers);
    fs::path spath = report_dir / "summary.json";
    detail::write_json_file(summary, spath);
    return ReportResult{spath.string()};
}

}  // namespace heliocast::pipeline
