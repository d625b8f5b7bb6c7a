// Synthetic multi-site weather generator with known ground truth. The sky is
// a two-state cloud chain plus a recursive day-over-day memory term, the
// irradiance envelope follows computed sun times, and the auxiliary signals
// are seasonal/diurnal shapes with AR(1) noise. Sites can be coupled: with
// coupling 1 and one seed all sites are bit-identical, with coupling 0 they
// are independent. Every random draw is keyed by (stream, minute), so output
// never depends on evaluation order.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/ingest.hpp"
#include "heliocast/series.hpp"
#include "heliocast/solar.hpp"
#include "heliocast/time.hpp"

namespace heliocast::synth {

using nlohmann::json;

struct SynthSite {
    std::string name;
    double latitude = -21.1;
    double longitude = 55.5;
};

struct SynthConfig {
    std::vector<SynthSite> sites;  // empty: n_sites are generated at one location
    int n_sites = 1;
    CivilDate start_date{2014, 1, 1};
    int days = 30;
    int tz_offset_minutes = 0;
    std::uint64_t seed = 1;
    double coupling = 0.0;  // 0: independent sites, 1: identical randomness

    // Sky process.
    double irradiance_peak = 1000.0;  // W/m^2 at the top of the clear-sky bell
    double p_stay_clear = 0.995;      // per-minute persistence of the clear state
    double p_stay_cloud = 0.993;
    double kb_clear = 0.88;
    double kb_cloud = 0.15;
    double kb_noise_phi = 0.97;   // AR(1) on the kb disturbance
    double kb_noise_sigma = 0.02;
    double kb_daily_weight = 0.45;  // weight of yesterday's same-minute kb

    void validate() const {
        if (n_sites < 1 && sites.empty()) throw ConfigError("synth: need at least one site");
        if (days < 1) throw ConfigError("synth: days must be >= 1");
        if (!(coupling >= 0.0 && coupling <= 1.0))
            throw ConfigError("synth: coupling must be in [0, 1]");
        for (double p : {p_stay_clear, p_stay_cloud})
            if (!(p > 0.0 && p < 1.0)) throw ConfigError("synth: stay probabilities in (0, 1)");
        if (!(kb_daily_weight >= 0.0 && kb_daily_weight < 1.0))
            throw ConfigError("synth: kb_daily_weight must be in [0, 1)");
        if (!(irradiance_peak > 0.0)) throw ConfigError("synth: irradiance_peak must be > 0");
    }

    std::vector<SynthSite> resolved_sites() const {
        if (!sites.empty()) return sites;
        std::vector<SynthSite> out;
        for (int i = 0; i < n_sites; ++i)
            out.push_back(SynthSite{"site" + std::to_string(i + 1), -21.1, 55.5});
        return out;
    }

    json to_json() const {
        json js = json::array();
        for (const auto& s : sites)
            js.push_back({{"name", s.name}, {"latitude", s.latitude}, {"longitude", s.longitude}});
        return json{{"sites", js},
                    {"n_sites", n_sites},
                    {"start_date", format_date(start_date)},
                    {"days", days},
                    {"tz_offset_minutes", tz_offset_minutes},
                    {"seed", seed},
                    {"coupling", coupling},
                    {"irradiance_peak", irradiance_peak},
                    {"p_stay_clear", p_stay_clear},
                    {"p_stay_cloud", p_stay_cloud},
                    {"kb_clear", kb_clear},
                    {"kb_cloud", kb_cloud},
                    {"kb_noise_phi", kb_noise_phi},
                    {"kb_noise_sigma", kb_noise_sigma},
                    {"kb_daily_weight", kb_daily_weight}};
    }
    static SynthConfig from_json(const json& j) {
        SynthConfig c;
        if (j.contains("sites"))
            for (const auto& js : j["sites"])
                c.sites.push_back(SynthSite{js.at("name").get<std::string>(),
                                            js.value("latitude", -21.1),
                                            js.value("longitude", 55.5)});
        c.n_sites = j.value("n_sites", c.n_sites);
        if (j.contains("start_date")) c.start_date = parse_date(j["start_date"].get<std::string>());
        c.days = j.value("days", c.days);
        c.tz_offset_minutes = j.value("tz_offset_minutes", c.tz_offset_minutes);
        c.seed = j.value("seed", c.seed);
        c.coupling = j.value("coupling", c.coupling);
        c.irradiance_peak = j.value("irradiance_peak", c.irradiance_peak);
        c.p_stay_clear = j.value("p_stay_clear", c.p_stay_clear);
        c.p_stay_cloud = j.value("p_stay_cloud", c.p_stay_cloud);
        c.kb_clear = j.value("kb_clear", c.kb_clear);
        c.kb_cloud = j.value("kb_cloud", c.kb_cloud);
        c.kb_noise_phi = j.value("kb_noise_phi", c.kb_noise_phi);
        c.kb_noise_sigma = j.value("kb_noise_sigma", c.kb_noise_sigma);
        c.kb_daily_weight = j.value("kb_daily_weight", c.kb_daily_weight);
        c.validate();
        return c;
    }
};

namespace detail {

// Coupled randomness: every draw blends a shared stream with a per-site
// stream. Gaussians mix with sqrt weights (variance stays 1); uniforms pick
// one stream per draw with probability `coupling`.
struct CoupledStreams {
    std::uint64_t shared;
    std::uint64_t local;
    std::uint64_t selector;
    double coupling;

    double gaussian(std::uint64_t counter) const {
        if (coupling >= 1.0) return counter_gaussian(shared, counter);
        if (coupling <= 0.0) return counter_gaussian(local, counter);
        return std::sqrt(coupling) * counter_gaussian(shared, counter) +
               std::sqrt(1.0 - coupling) * counter_gaussian(local, counter);
    }
    double uniform(std::uint64_t counter) const {
        bool use_shared = counter_uniform(selector, counter) < coupling;
        return counter_uniform(use_shared ? shared : local, counter);
    }
};

inline CoupledStreams make_streams(const SynthConfig& cfg, std::size_t site_index,
                                   std::uint64_t var_tag) {
    return CoupledStreams{
        derive_seed(cfg.seed, 0x73686172, var_tag),                       // shar
        derive_seed(cfg.seed, 0x6c6f6361, site_index + 1, var_tag),       // loca
        derive_seed(cfg.seed, 0x73656c65, site_index + 1, var_tag),       // sele
        cfg.coupling,
    };
}

}  // namespace detail

// Generates one dataset per site with the raw observed variables
// (I_D, I_G, Patm, RH, Text, WD, WS_Mean), complete rows and no missing
// cells. Night slots have exactly zero irradiance; daytime follows a bell
// envelope so the kb definition inverts exactly: I_D = (1 - kb) * I_G.
inline std::vector<SiteDataset> generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::vector<SynthSite> sites = cfg.resolved_sites();
    const int tz = cfg.tz_offset_minutes;
    const MinuteTimestamp start = from_civil({cfg.start_date, 0, 0}, tz);
    const std::size_t n = static_cast<std::size_t>(cfg.days) * 1440;
    const std::int64_t burn = 2880;  // two days of spin-up for AR states and daily memory

    std::vector<SiteDataset> out;
    out.reserve(sites.size());

    for (std::size_t si = 0; si < sites.size(); ++si) {
        const SynthSite& site = sites[si];
        SiteDataset ds(site.name, site.latitude, site.longitude, start, n, tz);
        for (VariableId v : raw_variables()) ds.add_series(MinuteSeries(v, start, n));

        std::int64_t last_day =
            days_from_civil(cfg.start_date.year, cfg.start_date.month, cfg.start_date.day) +
            cfg.days;
        auto [ly, lm, ld] = civil_from_days(last_day);
        solar::SunTimes sun = solar::SunTimes::computed(site.latitude, site.longitude, tz,
                                                        cfg.start_date, CivilDate{ly, lm, ld});

        auto sky = detail::make_streams(cfg, si, 1);
        auto kbn = detail::make_streams(cfg, si, 2);
        auto ign = detail::make_streams(cfg, si, 3);
        auto patm = detail::make_streams(cfg, si, 4);
        auto rh = detail::make_streams(cfg, si, 5);
        auto text = detail::make_streams(cfg, si, 6);
        auto wd = detail::make_streams(cfg, si, 7);
        auto ws = detail::make_streams(cfg, si, 8);

        bool clear = true;
        double kb_disturb = 0.0;
        std::vector<double> kb_true(n, 0.5);
        std::vector<double> kb_hist(1440, 0.0);  // ring over the last day
        bool kb_hist_full = false;
        double patm_state = 0.0, rh_state = 0.0, text_state = 0.0, ws_state = 0.0;
        double wd_angle = 360.0 * wd.uniform(0);

        MinuteSeries& s_id = ds.at(VariableId::I_D);
        MinuteSeries& s_ig = ds.at(VariableId::I_G);
        MinuteSeries& s_patm = ds.at(VariableId::Patm);
        MinuteSeries& s_rh = ds.at(VariableId::RH);
        MinuteSeries& s_text = ds.at(VariableId::Text);
        MinuteSeries& s_wd = ds.at(VariableId::WD);
        MinuteSeries& s_ws = ds.at(VariableId::WS_Mean);

        for (std::int64_t step = -burn; step < static_cast<std::int64_t>(n); ++step) {
            const auto counter = static_cast<std::uint64_t>(step + burn + 1);

            // Cloud chain and the kb disturbance evolve every minute.
            const double stay = clear ? cfg.p_stay_clear : cfg.p_stay_cloud;
            if (sky.uniform(counter) >= stay) clear = !clear;
            kb_disturb = cfg.kb_noise_phi * kb_disturb + cfg.kb_noise_sigma * kbn.gaussian(counter);
            double kb_base =
                std::clamp((clear ? cfg.kb_clear : cfg.kb_cloud) + kb_disturb, 0.02, 0.98);
            double prev_day = kb_hist[static_cast<std::size_t>((step + burn) % 1440)];
            double kb_now = kb_hist_full
                                ? (1.0 - cfg.kb_daily_weight) * kb_base +
                                      cfg.kb_daily_weight * prev_day
                                : kb_base;
            kb_hist[static_cast<std::size_t>((step + burn) % 1440)] = kb_now;
            if (step + burn + 1 >= 1440) kb_hist_full = true;

            // Auxiliary AR states.
            patm_state = 0.995 * patm_state + 0.05 * patm.gaussian(counter);
            rh_state = 0.99 * rh_state + 0.8 * rh.gaussian(counter);
            text_state = 0.99 * text_state + 0.12 * text.gaussian(counter);
            ws_state = 0.995 * ws_state + 0.08 * ws.gaussian(counter);
            wd_angle = std::fmod(wd_angle + 0.03 + 1.2 * wd.gaussian(counter), 360.0);
            if (wd_angle < 0.0) wd_angle += 360.0;

            if (step < 0) continue;  // burn-in: evolve states only
            const auto i = static_cast<std::size_t>(step);
            kb_true[i] = kb_now;

            const MinuteTimestamp ts = start + step;
            const CivilDateTime civ = to_civil(ts, tz);
            const int mod = civ.hour * 60 + civ.minute;
            const int doy = static_cast<int>(days_from_civil(civ.date.year, civ.date.month,
                                                             civ.date.day) -
                                             days_from_civil(civ.date.year, 1, 1));
            const double seasonal = std::sin(2.0 * std::numbers::pi * (doy - 80) / 365.25);
            const double diurnal =
                std::sin(2.0 * std::numbers::pi * (mod - 840) / 1440.0);  // peaks at 14:00

            double ig = 0.0, id = 0.0;
            if (!sun.is_nocturnal(ts)) {
                solar::SunEvents ev = sun.events_for_day(ts);
                const double len = static_cast<double>(ev.sunset - ev.sunrise);
                const double pos = static_cast<double>(ts - ev.sunrise);
                const double bell = std::sin(std::numbers::pi * (pos + 1.0) / (len + 2.0));
                double atten = 0.30 + 0.70 * kb_now;
                ig = cfg.irradiance_peak * bell * atten * (1.0 + 0.02 * ign.gaussian(counter));
                ig = std::max(ig, 0.0);
                id = (1.0 - kb_now) * ig;
            }
            s_ig.set(i, ig);
            s_id.set(i, id);
            s_patm.set(i, 1013.0 + 3.0 * seasonal + 1.2 * diurnal + patm_state);
            s_rh.set(i, std::clamp(72.0 - 12.0 * diurnal + rh_state, 5.0, 100.0));
            s_text.set(i, 24.0 + 4.0 * seasonal + 4.5 * diurnal + text_state);
            s_wd.set(i, wd_angle);
            s_ws.set(i, std::max(4.0 + 1.0 * diurnal + ws_state, 0.05));
        }
        out.push_back(std::move(ds));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gap injection with ground truth.
// ---------------------------------------------------------------------------

struct GapSpec {
    std::vector<MinuteRange> drop_rows;  // whole source lines vanish
    std::map<VariableId, std::vector<MinuteRange>> drop_values;  // cells blank out
};

struct GapTruth {
    // Every deleted cell with its original value, per variable.
    std::map<VariableId, std::vector<std::pair<MinuteTimestamp, double>>> removed;
};

// Applies the spec to a dataset: dropped rows are marked absent with all
// their values missing, dropped values lose single cells. The returned truth
// holds every removed value for repair-accuracy checks.
inline std::pair<SiteDataset, GapTruth> inject_gaps(const SiteDataset& input,
                                                    const GapSpec& spec) {
    SiteDataset ds = input;
    GapTruth truth;
    auto wipe = [&](VariableId var, std::size_t i) {
        MinuteSeries& s = ds.at(var);
        if (s.is_missing(i)) return;
        truth.removed[var].emplace_back(ds.start() + static_cast<std::int64_t>(i), s.value(i));
        s.set_missing(i);
    };
    auto clamp_range = [&](const MinuteRange& r) {
        std::int64_t lo = std::max<std::int64_t>(0, r.begin - ds.start());
        std::int64_t hi = std::min<std::int64_t>(static_cast<std::int64_t>(ds.length()),
                                                 r.end - ds.start());
        return std::pair<std::int64_t, std::int64_t>{lo, hi};
    };
    std::vector<VariableId> vars;
    for (const auto& [var, unused] : ds.series()) vars.push_back(var);
    for (const MinuteRange& r : spec.drop_rows) {
        auto [lo, hi] = clamp_range(r);
        for (std::int64_t m = lo; m < hi; ++m) {
            auto i = static_cast<std::size_t>(m);
            for (VariableId var : vars) wipe(var, i);
            ds.mark_row_absent(i);
        }
    }
    for (const auto& [var, ranges] : spec.drop_values) {
        if (!ds.has(var))
            throw ConfigError(std::string("inject_gaps: dataset lacks variable ") +
                              to_string(var));
        for (const MinuteRange& r : ranges) {
            auto [lo, hi] = clamp_range(r);
            for (std::int64_t m = lo; m < hi; ++m) wipe(var, static_cast<std::size_t>(m));
        }
    }
    return {std::move(ds), std::move(truth)};
}

// ---------------------------------------------------------------------------
// CSV emission in the ingest schema.
// ---------------------------------------------------------------------------

// Writes the dataset as a raw site file: absent rows are skipped entirely,
// missing cells are left empty. Output parses back through the ingest path
// into an identical dataset.
inline void write_site_csv(const SiteDataset& ds, const std::string& path,
                           const ingest::CsvSchema& schema = {}) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    std::vector<VariableId> vars;
    for (VariableId v : raw_variables())
        if (ds.has(v)) vars.push_back(v);
    out << schema.timestamp_column;
    for (VariableId v : vars) {
        auto it = schema.columns.find(v);
        out << schema.delimiter << (it != schema.columns.end() ? it->second : to_string(v));
    }
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < ds.length(); ++i) {
        if (!ds.row_present(i)) continue;
        out << format_timestamp(ds.start() + static_cast<std::int64_t>(i), schema.tz_offset_minutes);
        for (VariableId v : vars) {
            out << schema.delimiter;
            const MinuteSeries& s = ds.at(v);
            if (s.is_missing(i)) continue;
            std::snprintf(buf, sizeof(buf), "%.17g", s.value(i));
            out << buf;
        }
        out << '\n';
    }
    out.close();
    if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace heliocast::synth
