// heliocast: short-term solar irradiance forecasting toolkit.
// Errors, logging and deterministic RNG substream derivation shared by all
// other headers.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>

namespace heliocast {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto exit codes, so new error kinds
// should derive from one of the four roots below.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration supplied by the user (exit code 1).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed or inconsistent data (exit code 2).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class ParseError : public DataError {
public:
    ParseError(const std::string& msg, std::size_t line)
        : DataError(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public DataError {
public:
    explicit ValidationError(const std::string& msg) : DataError(msg) {}
};

// Model training failures (exit code 3).
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Logging. Verbosity is controlled by the HELIOCAST_LOG environment variable:
// silent, error, warn, info, debug. Default is warn.
// ---------------------------------------------------------------------------

enum class LogLevel : int { Silent = 0, Error = 1, Warn = 2, Info = 3, Debug = 4 };

inline LogLevel log_level_from_env() {
    const char* v = std::getenv("HELIOCAST_LOG");
    if (!v) return LogLevel::Warn;
    std::string s(v);
    if (s == "silent") return LogLevel::Silent;
    if (s == "error") return LogLevel::Error;
    if (s == "warn") return LogLevel::Warn;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
}

inline LogLevel& log_level() {
    static LogLevel level = log_level_from_env();
    return level;
}

inline std::mutex& log_mutex() {
    static std::mutex m;
    return m;
}

inline void log_msg(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    std::lock_guard<std::mutex> lock(log_mutex());
    std::cerr << "[heliocast " << names[static_cast<int>(level)] << "] " << msg << "\n";
}

inline void log_error(const std::string& msg) { log_msg(LogLevel::Error, msg); }
inline void log_warn(const std::string& msg) { log_msg(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log_msg(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::Debug, msg); }

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// All randomness in the pipeline flows from a single root seed. Substreams
// are derived by hashing the root seed with small integer tags, so adding a
// site or a model never shifts the draws of unrelated tasks.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag) {
    return splitmix64(root ^ splitmix64(tag + 0x51ed2701a2b9e4d3ULL));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t tag_a, std::uint64_t tag_b) {
    return derive_seed(derive_seed(root, tag_a), tag_b);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
    return derive_seed(derive_seed(root, a, b), c);
}

// Uniform in [0,1) keyed by (seed, counter). Stateless, so a value depends
// only on its key and not on how many draws happened before it.
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t bits = splitmix64(seed ^ splitmix64(counter));
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Standard normal keyed by (seed, counter), via Box-Muller.
inline double counter_gaussian(std::uint64_t seed, std::uint64_t counter) {
    double u1 = counter_uniform(seed, 2 * counter);
    double u2 = counter_uniform(seed, 2 * counter + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

}  // namespace heliocast
