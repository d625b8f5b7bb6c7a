// Evaluation protocol: error metrics, the year-based train/test split,
// nocturnal target filtering, per-site and cross-site scoring, between-site
// correlation of the raw signals, and report emission (JSON + CSV) with a
// structural validator for the JSON side.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/features.hpp"
#include "heliocast/model_io.hpp"
#include "heliocast/solar.hpp"
#include "heliocast/stats.hpp"

namespace heliocast::eval {

using nlohmann::json;

inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size()) throw DataError("rmse: length mismatch");
    if (actual.empty()) throw DataError("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        double e = predicted[i] - actual[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(actual.size()));
}

inline double mae(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size()) throw DataError("mae: length mismatch");
    if (actual.empty()) throw DataError("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) s += std::abs(predicted[i] - actual[i]);
    return s / static_cast<double>(actual.size());
}

// ---------------------------------------------------------------------------
// Row filtering and splitting.
// ---------------------------------------------------------------------------

namespace detail {

inline features::SupervisedSet take_rows(const features::SupervisedSet& set,
                                         const std::vector<std::size_t>& rows) {
    features::SupervisedSet out;
    out.layout = set.layout;
    out.vector_kind = set.vector_kind;
    const std::size_t dim = set.dim();
    out.x.reserve(rows.size() * dim);
    out.y.reserve(rows.size());
    out.target_ts.reserve(rows.size());
    for (std::size_t i : rows) {
        auto row = set.row(i);
        out.x.insert(out.x.end(), row.begin(), row.end());
        out.y.push_back(set.y[i]);
        out.target_ts.push_back(set.target_ts[i]);
    }
    return out;
}

}  // namespace detail

struct TrainTestSplit {
    features::SupervisedSet train;
    features::SupervisedSet test;
};

// Partitions rows by the local civil year of the target timestamp. Rows of
// other years are dropped. Either side coming up empty is an error: the
// protocol needs a full train year and a full test year.
inline TrainTestSplit split_train_test(const features::SupervisedSet& set, int train_year,
                                       int test_year, int tz_offset_minutes) {
    if (train_year == test_year)
        throw ConfigError("split_train_test: train and test year must differ");
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < set.n_rows(); ++i) {
        int y = year_of(set.target_ts[i], tz_offset_minutes);
        if (y == train_year) train_rows.push_back(i);
        else if (y == test_year) test_rows.push_back(i);
    }
    if (train_rows.empty())
        throw DataError("split_train_test: no rows with targets in year " +
                        std::to_string(train_year));
    if (test_rows.empty())
        throw DataError("split_train_test: no rows with targets in year " +
                        std::to_string(test_year));
    return {detail::take_rows(set, train_rows), detail::take_rows(set, test_rows)};
}

// Drops rows whose target falls at night. Idempotent: a second pass removes
// nothing.
inline features::SupervisedSet filter_nocturnal_targets(const features::SupervisedSet& set,
                                                        const solar::SunTimes& sun) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < set.n_rows(); ++i)
        if (!sun.is_nocturnal(set.target_ts[i])) keep.push_back(i);
    return detail::take_rows(set, keep);
}

// ---------------------------------------------------------------------------
// Scoring.
// ---------------------------------------------------------------------------

using Predictor = std::function<double(std::span<const double>)>;

struct Score {
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t n = 0;
};

inline Score score_set(const features::SupervisedSet& set, const Predictor& predict) {
    if (set.n_rows() == 0) throw DataError("score_set: no rows to score");
    std::vector<double> pred(set.n_rows());
    for (std::size_t i = 0; i < set.n_rows(); ++i) pred[i] = predict(set.row(i));
    return {rmse(set.y, pred), mae(set.y, pred), set.n_rows()};
}

inline Score score_artifact(const model_io::ModelArtifact& artifact,
                            const features::SupervisedSet& set) {
    model_io::check_layout(artifact, set);
    return score_set(set, [&](std::span<const double> x) { return artifact.predict_row(x); });
}

struct EvalRow {
    std::string train_site;
    std::string test_site;
    std::string vector_kind;
    std::string model_kind;
    Score score;
};

// ---------------------------------------------------------------------------
// Cross-site transfer matrix.
// ---------------------------------------------------------------------------

struct CrossSiteMatrix {
    std::string model_kind;
    std::string vector_kind;
    std::vector<std::string> sites;       // sorted; rows = training site
    std::vector<std::vector<double>> rmse;  // rmse[i][j]: trained on i, tested on j

    double at(const std::string& train, const std::string& test) const {
        auto idx = [&](const std::string& s) {
            auto it = std::find(sites.begin(), sites.end(), s);
            if (it == sites.end()) throw DataError("cross-site matrix: unknown site '" + s + "'");
            return static_cast<std::size_t>(it - sites.begin());
        };
        return rmse[idx(train)][idx(test)];
    }
};

// Scores every artifact on every site's test rows. All artifacts must share
// the model kind and vector kind; every site needs both an artifact and a
// test set. The diagonal equals single-site evaluation by construction.
inline CrossSiteMatrix cross_site_evaluate(
    const std::map<std::string, model_io::ModelArtifact>& artifacts,
    const std::map<std::string, features::SupervisedSet>& test_sets) {
    if (artifacts.empty()) throw ConfigError("cross_site_evaluate: no artifacts");
    CrossSiteMatrix m;
    for (const auto& [site, artifact] : artifacts) {
        if (test_sets.find(site) == test_sets.end())
            throw DataError("cross_site_evaluate: no test set for site '" + site + "'");
        m.sites.push_back(site);
    }
    const auto& first = artifacts.begin()->second;
    m.model_kind = model_io::to_string(first.kind);
    m.vector_kind = first.vector_kind;
    for (const auto& [site, artifact] : artifacts) {
        if (model_io::to_string(artifact.kind) != m.model_kind ||
            artifact.vector_kind != m.vector_kind)
            throw ConfigError("cross_site_evaluate: artifacts mix model or vector kinds");
    }
    m.rmse.assign(m.sites.size(), std::vector<double>(m.sites.size(), 0.0));
    for (std::size_t i = 0; i < m.sites.size(); ++i) {
        const auto& artifact = artifacts.at(m.sites[i]);
        for (std::size_t j = 0; j < m.sites.size(); ++j) {
            Score s = score_artifact(artifact, test_sets.at(m.sites[j]));
            m.rmse[i][j] = s.rmse;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Between-site correlation of raw signals.
// ---------------------------------------------------------------------------

struct CorrelationSummary {
    VariableId var{};
    double mean = 0.0;
    double stddev = 0.0;  // sample spread over pairs; 0 with a single pair
    std::size_t n_pairs = 0;
};

// Pearson correlation per unordered site pair over the timestamps where both
// sites have a usable (present, non-missing, non-excluded) observation, then
// mean and spread across pairs. Pairs with fewer than two overlapping points
// are skipped with a warning.
inline CorrelationSummary between_site_correlation(const std::vector<const SiteDataset*>& sites,
                                                   VariableId var) {
    if (sites.size() < 2)
        throw DataError("between_site_correlation: need at least two sites");
    std::vector<double> rs;
    for (std::size_t a = 0; a < sites.size(); ++a) {
        for (std::size_t b = a + 1; b < sites.size(); ++b) {
            const SiteDataset& da = *sites[a];
            const SiteDataset& db = *sites[b];
            if (!da.has(var) || !db.has(var))
                throw DataError(std::string("between_site_correlation: variable ") +
                                to_string(var) + " absent");
            MinuteTimestamp lo = std::max(da.start(), db.start());
            MinuteTimestamp hi = std::min(da.end(), db.end());
            std::vector<double> xa, xb;
            const MinuteSeries& sa = da.at(var);
            const MinuteSeries& sb = db.at(var);
            for (MinuteTimestamp t = lo; !(hi < t); t = t + 1) {
                std::size_t ia = da.index_of(t), ib = db.index_of(t);
                if (!da.row_present(ia) || !db.row_present(ib)) continue;
                if (da.excluded(ia) || db.excluded(ib)) continue;
                if (sa.is_missing(ia) || sb.is_missing(ib)) continue;
                xa.push_back(sa.value(ia));
                xb.push_back(sb.value(ib));
            }
            if (xa.size() < 2) {
                log_warn("between_site_correlation: " + da.site_name + " and " + db.site_name +
                         " overlap on fewer than two points for " + to_string(var) +
                         "; pair skipped");
                continue;
            }
            try {
                rs.push_back(stats::pearson(xa, xb));
            } catch (const DataError&) {
                log_warn("between_site_correlation: degenerate overlap between " + da.site_name +
                         " and " + db.site_name + " for " + to_string(var) + "; pair skipped");
            }
        }
    }
    if (rs.empty())
        throw DataError("between_site_correlation: no site pair had a usable overlap");
    CorrelationSummary out;
    out.var = var;
    out.n_pairs = rs.size();
    out.mean = stats::mean(rs);
    out.stddev = rs.size() > 1 ? stats::stddev(rs) : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Report emission.
// ---------------------------------------------------------------------------

inline json eval_rows_to_json(const std::vector<EvalRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows)
        arr.push_back({{"train_site", r.train_site},
                       {"test_site", r.test_site},
                       {"vector_kind", r.vector_kind},
                       {"model_kind", r.model_kind},
                       {"rmse", r.score.rmse},
                       {"mae", r.score.mae},
                       {"n", r.score.n}});
    return arr;
}

inline json cross_site_to_json(const CrossSiteMatrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.sites.size(); ++i) {
        json row = json::object();
        for (std::size_t j = 0; j < m.sites.size(); ++j) row[m.sites[j]] = m.rmse[i][j];
        rows.push_back({{"train_site", m.sites[i]}, {"rmse", row}});
    }
    return json{{"model_kind", m.model_kind},
                {"vector_kind", m.vector_kind},
                {"sites", m.sites},
                {"rows", rows}};
}

inline json correlations_to_json(const std::vector<CorrelationSummary>& cs) {
    json arr = json::array();
    for (const auto& c : cs)
        arr.push_back({{"variable", to_string(c.var)},
                       {"mean", c.mean},
                       {"std", c.stddev},
                       {"n_pairs", c.n_pairs}});
    return arr;
}

// Full evaluation report. Structure:
//   { "version": 1, "per_site": [...], "cross_site": [...],
//     "correlations": [...] }
inline json build_report_json(const std::vector<EvalRow>& rows,
                              const std::vector<CrossSiteMatrix>& matrices,
                              const std::vector<CorrelationSummary>& correlations) {
    json j;
    j["version"] = 1;
    j["per_site"] = eval_rows_to_json(rows);
    json cross = json::array();
    for (const auto& m : matrices) cross.push_back(cross_site_to_json(m));
    j["cross_site"] = std::move(cross);
    j["correlations"] = correlations_to_json(correlations);
    return j;
}

// Structural check of a report produced by build_report_json. Returns
// normally when the shape is right; throws ValidationError naming the first
// problem otherwise.
inline void validate_report_json(const json& j) {
    auto need = [&](bool ok, const std::string& what) {
        if (!ok) throw ValidationError("report: " + what);
    };
    need(j.is_object(), "root must be an object");
    need(j.contains("version") && j["version"].is_number_integer(), "missing integer 'version'");
    need(j.contains("per_site") && j["per_site"].is_array(), "missing array 'per_site'");
    for (const auto& r : j["per_site"]) {
        need(r.is_object(), "per_site entries must be objects");
        for (const char* key : {"train_site", "test_site", "vector_kind", "model_kind"})
            need(r.contains(key) && r[key].is_string(), std::string("per_site entry missing '") + key + "'");
        for (const char* key : {"rmse", "mae"})
            need(r.contains(key) && r[key].is_number(), std::string("per_site entry missing '") + key + "'");
        need(r.contains("n") && r["n"].is_number_integer(), "per_site entry missing 'n'");
    }
    need(j.contains("cross_site") && j["cross_site"].is_array(), "missing array 'cross_site'");
    for (const auto& m : j["cross_site"]) {
        need(m.contains("sites") && m["sites"].is_array(), "cross_site entry missing 'sites'");
        need(m.contains("rows") && m["rows"].is_array(), "cross_site entry missing 'rows'");
        need(m["rows"].size() == m["sites"].size(), "cross_site rows/sites size mismatch");
        for (const auto& row : m["rows"]) {
            need(row.contains("train_site") && row["train_site"].is_string(),
                 "cross_site row missing 'train_site'");
            need(row.contains("rmse") && row["rmse"].is_object(),
                 "cross_site row missing 'rmse' object");
            need(row["rmse"].size() == m["sites"].size(), "cross_site rmse width mismatch");
        }
    }
    need(j.contains("correlations") && j["correlations"].is_array(),
         "missing array 'correlations'");
    for (const auto& c : j["correlations"]) {
        need(c.contains("variable") && c["variable"].is_string(),
             "correlation entry missing 'variable'");
        for (const char* key : {"mean", "std"})
            need(c.contains(key) && c[key].is_number(), std::string("correlation entry missing '") + key + "'");
        need(c.contains("n_pairs") && c["n_pairs"].is_number_integer(),
             "correlation entry missing 'n_pairs'");
    }
}

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
    out.close();
    if (!out) throw DataError("failed writing '" + path + "'");
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace detail

// CSV twin of the per-site rows: one line per (site, vector, model).
inline std::string eval_rows_to_csv(const std::vector<EvalRow>& rows) {
    std::string out = "train_site,test_site,vector_kind,model_kind,rmse,mae,n\n";
    for (const auto& r : rows)
        out += r.train_site + "," + r.test_site + "," + r.vector_kind + "," + r.model_kind +
               "," + detail::fmt(r.score.rmse) + "," + detail::fmt(r.score.mae) + "," +
               std::to_string(r.score.n) + "\n";
    return out;
}

// CSV twin of a transfer matrix: training sites as rows, test sites as
// columns.
inline std::string cross_site_to_csv(const CrossSiteMatrix& m) {
    std::string out = "train_site";
    for (const auto& s : m.sites) out += "," + s;
    out += "\n";
    for (std::size_t i = 0; i < m.sites.size(); ++i) {
        out += m.sites[i];
        for (std::size_t j = 0; j < m.sites.size(); ++j) out += "," + detail::fmt(m.rmse[i][j]);
        out += "\n";
    }
    return out;
}

inline std::string correlations_to_csv(const std::vector<CorrelationSummary>& cs) {
    std::string out = "variable,mean,std,n_pairs\n";
    for (const auto& c : cs)
        out += std::string(to_string(c.var)) + "," + detail::fmt(c.mean) + "," +
               detail::fmt(c.stddev) + "," + std::to_string(c.n_pairs) + "\n";
    return out;
}

// Per-row prediction dump for offline analysis; timestamps in local time.
inline void dump_predictions(const std::string& path, const features::SupervisedSet& set,
                             std::span<const double> predictions, int tz_offset_minutes) {
    if (predictions.size() != set.n_rows())
        throw DataError("dump_predictions: prediction count mismatch");
    std::string out = "timestamp,actual,predicted\n";
    for (std::size_t i = 0; i < set.n_rows(); ++i)
        out += format_timestamp(set.target_ts[i], tz_offset_minutes) + "," +
               detail::fmt(set.y[i]) + "," + detail::fmt(predictions[i]) + "\n";
    detail::write_text(path, out);
}

}  // namespace heliocast::eval
