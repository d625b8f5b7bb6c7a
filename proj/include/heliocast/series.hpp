// Time-indexed storage: one variable on a regular minute grid, and the
// aligned per-site collection of all variables.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heliocast/core.hpp"
#include "heliocast/time.hpp"

namespace heliocast {

enum class VariableId {
    I_D,      // diffuse solar irradiance, W/m^2
    I_G,      // global solar irradiance, W/m^2
    Patm,     // atmospheric pressure, hPa
    RH,       // relative humidity, %
    Text,     // external temperature, degC
    WD,       // wind direction, degrees (raw; decomposed before use)
    WS_Mean,  // wind speed, m/s
    kb,       // direct-to-global irradiance ratio, derived
    UnitX,    // cos(WD)
    UnitY,    // sin(WD)
};

inline const char* to_string(VariableId v) {
    switch (v) {
        case VariableId::I_D: return "I_D";
        case VariableId::I_G: return "I_G";
        case VariableId::Patm: return "Patm";
        case VariableId::RH: return "RH";
        case VariableId::Text: return "Text";
        case VariableId::WD: return "WD";
        case VariableId::WS_Mean: return "WS_Mean";
        case VariableId::kb: return "kb";
        case VariableId::UnitX: return "UnitX";
        case VariableId::UnitY: return "UnitY";
    }
    return "?";
}

inline VariableId variable_from_string(const std::string& s) {
    if (s == "I_D") return VariableId::I_D;
    if (s == "I_G") return VariableId::I_G;
    if (s == "Patm") return VariableId::Patm;
    if (s == "RH") return VariableId::RH;
    if (s == "Text") return VariableId::Text;
    if (s == "WD") return VariableId::WD;
    if (s == "WS_Mean" || s == "WS") return VariableId::WS_Mean;  // WS is an input alias
    if (s == "kb") return VariableId::kb;
    if (s == "UnitX") return VariableId::UnitX;
    if (s == "UnitY") return VariableId::UnitY;
    throw ConfigError("unknown variable id '" + s + "'");
}

// The 7 raw file columns, in canonical order.
inline const std::vector<VariableId>& raw_variables() {
    static const std::vector<VariableId> v = {VariableId::I_D,  VariableId::I_G,
                                              VariableId::Patm, VariableId::RH,
                                              VariableId::Text, VariableId::WD,
                                              VariableId::WS_Mean};
    return v;
}

// The 7 usable model variables after deriving kb and the wind components.
inline const std::vector<VariableId>& model_variables() {
    static const std::vector<VariableId> v = {VariableId::kb,      VariableId::Patm,
                                              VariableId::RH,      VariableId::Text,
                                              VariableId::WS_Mean, VariableId::UnitX,
                                              VariableId::UnitY};
    return v;
}

// ---------------------------------------------------------------------------
// MinuteSeries: values on a contiguous grid of `step_minutes` spacing
// (1 for raw data, 60 after hourly subsampling). Missing samples carry an
// explicit per-slot flag rather than a sentinel value.
// ---------------------------------------------------------------------------

class MinuteSeries {
public:
    MinuteSeries() = default;
    MinuteSeries(VariableId id, MinuteTimestamp start, std::size_t n, int step_minutes = 1)
        : id_(id), start_(start), step_(step_minutes), values_(n, 0.0), missing_(n, 1) {
        if (step_minutes < 1) throw ConfigError("series step must be >= 1 minute");
    }

    VariableId id() const { return id_; }
    void set_id(VariableId id) { id_ = id; }
    MinuteTimestamp start() const { return start_; }
    int step_minutes() const { return step_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    MinuteTimestamp timestamp(std::size_t i) const {
        return start_ + static_cast<std::int64_t>(i) * step_;
    }
    MinuteTimestamp end() const {  // timestamp of the last slot
        return timestamp(values_.empty() ? 0 : values_.size() - 1);
    }

    bool covers(MinuteTimestamp ts) const {
        if (values_.empty()) return false;
        std::int64_t d = ts - start_;
        return d >= 0 && d % step_ == 0 &&
               d / step_ < static_cast<std::int64_t>(values_.size());
    }

    std::size_t index_of(MinuteTimestamp ts) const {
        std::int64_t d = ts - start_;
        if (d < 0 || d % step_ != 0 || d / step_ >= static_cast<std::int64_t>(values_.size()))
            throw std::out_of_range("timestamp " + format_timestamp(ts) + " outside series grid");
        return static_cast<std::size_t>(d / step_);
    }

    bool is_missing(std::size_t i) const { return missing_[i] != 0; }
    double value(std::size_t i) const { return values_[i]; }
    std::optional<double> get(std::size_t i) const {
        if (missing_[i]) return std::nullopt;
        return values_[i];
    }

    void set(std::size_t i, double v) {
        values_[i] = v;
        missing_[i] = 0;
    }
    void set_missing(std::size_t i) {
        values_[i] = 0.0;
        missing_[i] = 1;
    }

    std::size_t missing_count() const {
        std::size_t c = 0;
        for (auto m : missing_) c += m;
        return c;
    }

    const std::vector<double>& values() const { return values_; }

    // Dense copy; requires a gap-free series.
    std::vector<double> dense() const {
        if (missing_count() != 0)
            throw DataError(std::string("series ") + to_string(id_) + " still has missing values");
        return values_;
    }

private:
    VariableId id_ = VariableId::I_G;
    MinuteTimestamp start_{};
    int step_ = 1;
    std::vector<double> values_;
    std::vector<std::uint8_t> missing_;
};

// Contiguous sub-series, endpoints inclusive. Both bounds must sit on the grid.
inline MinuteSeries slice(const MinuteSeries& s, MinuteTimestamp from, MinuteTimestamp to) {
    if (from > to) throw std::out_of_range("slice: from > to");
    std::size_t a = s.index_of(from);
    std::size_t b = s.index_of(to);
    MinuteSeries out(s.id(), from, b - a + 1, s.step_minutes());
    for (std::size_t i = a; i <= b; ++i) {
        if (!s.is_missing(i)) out.set(i - a, s.value(i));
    }
    return out;
}

// Keeps exactly the slots whose civil timestamp has a zero minutes field
// (seconds are zero by construction). Output step is 60 minutes.
inline MinuteSeries hourly_subsample(const MinuteSeries& s, int tz_offset_minutes = 0) {
    std::int64_t local_start = s.start().minutes_since_epoch + tz_offset_minutes;
    // First index at a minute-0 local timestamp reachable on this grid.
    std::size_t first = s.size();
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((local_start + static_cast<std::int64_t>(i) * s.step_minutes()) % 60 == 0) {
            first = i;
            break;
        }
    }
    if (first == s.size()) return MinuteSeries(s.id(), s.start(), 0, 60);
    if (60 % s.step_minutes() != 0)
        throw ConfigError("hourly_subsample: step does not divide 60 minutes");
    std::size_t stride = static_cast<std::size_t>(60 / s.step_minutes());
    std::size_t n = (s.size() - first + stride - 1) / stride;
    MinuteSeries out(s.id(), s.timestamp(first), n, 60);
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t i = first + j * stride;
        if (!s.is_missing(i)) out.set(j, s.value(i));
    }
    return out;
}

// ---------------------------------------------------------------------------
// SiteDataset: all variables of one site on one shared minute grid, plus the
// bookkeeping the cleaning stage produces (row presence, exclusion flags).
// ---------------------------------------------------------------------------

// Half-open minute range [begin, end).
struct MinuteRange {
    MinuteTimestamp begin{};
    MinuteTimestamp end{};
    std::int64_t length() const { return end - begin; }
};

class SiteDataset {
public:
    std::string site_name;
    double latitude = 0.0;
    double longitude = 0.0;
    int tz_offset_minutes = 0;

    SiteDataset() = default;
    SiteDataset(std::string name, double lat, double lon, MinuteTimestamp start, std::size_t n,
                int tz_offset = 0)
        : site_name(std::move(name)),
          latitude(lat),
          longitude(lon),
          tz_offset_minutes(tz_offset),
          start_(start),
          length_(n),
          excluded_(n, 0),
          row_present_(n, 1) {}

    MinuteTimestamp start() const { return start_; }
    std::size_t length() const { return length_; }
    MinuteTimestamp end() const { return start_ + static_cast<std::int64_t>(length_ - 1); }

    std::size_t index_of(MinuteTimestamp ts) const {
        std::int64_t d = ts - start_;
        if (d < 0 || d >= static_cast<std::int64_t>(length_))
            throw std::out_of_range("timestamp " + format_timestamp(ts) + " outside dataset");
        return static_cast<std::size_t>(d);
    }
    bool covers(MinuteTimestamp ts) const {
        std::int64_t d = ts - start_;
        return d >= 0 && d < static_cast<std::int64_t>(length_);
    }

    void add_series(MinuteSeries s) {
        if (s.step_minutes() != 1) throw ConfigError("site series must be on the 1-minute grid");
        if (s.start() != start_ || s.size() != length_)
            throw ValidationError(std::string("series ") + to_string(s.id()) +
                                  " is not aligned with the site grid");
        series_.insert_or_assign(s.id(), std::move(s));
    }
    bool has(VariableId id) const { return series_.count(id) != 0; }
    const MinuteSeries& at(VariableId id) const {
        auto it = series_.find(id);
        if (it == series_.end())
            throw DataError(std::string("variable ") + to_string(id) + " absent from dataset");
        return it->second;
    }
    MinuteSeries& at(VariableId id) {
        auto it = series_.find(id);
        if (it == series_.end())
            throw DataError(std::string("variable ") + to_string(id) + " absent from dataset");
        return it->second;
    }
    void remove_series(VariableId id) { series_.erase(id); }
    const std::map<VariableId, MinuteSeries>& series() const { return series_; }

    // Row-presence: 0 where the source file had no line for the slot.
    void mark_row_absent(std::size_t i) { row_present_[i] = 0; }
    bool row_present(std::size_t i) const { return row_present_[i] != 0; }
    std::size_t absent_row_count() const {
        std::size_t c = 0;
        for (auto p : row_present_) c += (p == 0);
        return c;
    }

    // Exclusion flags: slots inside configured exclusion frames.
    bool excluded(std::size_t i) const { return excluded_[i] != 0; }
    void set_excluded(std::size_t i) { excluded_[i] = 1; }
    std::size_t excluded_count() const {
        std::size_t c = 0;
        for (auto e : excluded_) c += e;
        return c;
    }
    const std::vector<MinuteRange>& exclusion_frames() const { return frames_; }
    void add_exclusion_frame(MinuteRange r) { frames_.push_back(r); }

private:
    MinuteTimestamp start_{};
    std::size_t length_ = 0;
    std::map<VariableId, MinuteSeries> series_;
    std::vector<std::uint8_t> excluded_;
    std::vector<std::uint8_t> row_present_;
    std::vector<MinuteRange> frames_;
};

}  // namespace heliocast
