// Small numeric helpers shared by the ARIMA and evaluation code: moments,
// Pearson correlation, chi-square tail probabilities and dense symmetric
// solves for the normal equations.
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "heliocast/core.hpp"

namespace heliocast::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) throw DataError("mean of empty vector");
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

// Sample variance (n-1 denominator).
inline double variance(std::span<const double> x) {
    if (x.size() < 2) throw DataError("variance needs at least 2 samples");
    double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

inline double stddev(std::span<const double> x) { return std::sqrt(variance(x)); }

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("pearson: length mismatch");
    if (x.size() < 2) throw DataError("pearson: need at least 2 points");
    double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw DataError("pearson: zero-variance input");
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Regularized incomplete gamma, for chi-square tail probabilities
// (Ljung-Box p-values). Series + continued-fraction split at x = a+1.
// ---------------------------------------------------------------------------

namespace detail {

inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

// P(X > x) for X ~ Gamma(a, 1); chi2_sf(x, df) = gamma_q(df/2, x/2).
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw DataError("gamma_q: invalid arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_contfrac(a, x);
}

inline double chi2_sf(double x, double df) { return gamma_q(df / 2.0, x / 2.0); }

// ---------------------------------------------------------------------------
// Dense symmetric positive definite solve (Cholesky), column-major n x n.
// Used for OLS normal equations and Levenberg-Marquardt steps; systems are
// small (tens of parameters).
// ---------------------------------------------------------------------------

// Solves A x = b in place; A symmetric positive definite, row-major.
// Returns false if the factorization breaks down.
inline bool cholesky_solve(std::vector<double> a, std::size_t n, std::vector<double> b,
                           std::vector<double>& x) {
    // Factor A = L L^T.
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (!(d > 0.0)) return false;
        double lj = std::sqrt(d);
        a[j * n + j] = lj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / lj;
        }
    }
    // Forward then backward substitution.
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    x = std::move(b);
    return true;
}

// Ordinary least squares via normal equations with a light ridge fallback.
// X row-major (rows x cols), returns coefficient vector of size cols.
inline std::vector<double> ols(const std::vector<double>& X, std::size_t rows, std::size_t cols,
                               const std::vector<double>& y) {
    if (rows < cols) throw DataError("ols: fewer rows than parameters");
    std::vector<double> xtx(cols * cols, 0.0), xty(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = &X[r * cols];
        for (std::size_t i = 0; i < cols; ++i) {
            xty[i] += row[i] * y[r];
            for (std::size_t j = i; j < cols; ++j) xtx[i * cols + j] += row[i] * row[j];
        }
    }
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j = 0; j < i; ++j) xtx[i * cols + j] = xtx[j * cols + i];

    std::vector<double> beta;
    if (cholesky_solve(xtx, cols, xty, beta)) return beta;
    // Near-singular design: add a small ridge and retry.
    double scale = 0.0;
    for (std::size_t i = 0; i < cols; ++i) scale = std::max(scale, xtx[i * cols + i]);
    double ridge = std::max(scale, 1.0) * 1e-10;
    for (std::size_t i = 0; i < cols; ++i) xtx[i * cols + i] += ridge;
    if (!cholesky_solve(xtx, cols, xty, beta)) throw DataError("ols: singular design matrix");
    return beta;
}

}  // namespace heliocast::stats
