// ARIMA machinery for data-driven lag selection: differencing, a KPSS level
// test, conditional sum-of-squares estimation (OLS for pure AR, Hannan-
// Rissanen start plus Levenberg-Marquardt for mixed models), AICc-guided
// stepwise order search, seasonal lag probing on the hourly grid, residual
// diagnostics, and the translation of fitted orders into lag entries.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/features.hpp"
#include "heliocast/series.hpp"
#include "heliocast/stats.hpp"

namespace heliocast::arima {

using nlohmann::json;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Differencing and stationarity.
// ---------------------------------------------------------------------------

inline std::vector<double> difference(std::span<const double> x, int d) {
    if (d < 0) throw ConfigError("difference: d must be >= 0");
    std::vector<double> w(x.begin(), x.end());
    for (int r = 0; r < d; ++r) {
        if (w.size() < 2) throw DataError("difference: series too short");
        for (std::size_t i = w.size() - 1; i > 0; --i) w[i] -= w[i - 1];
        w.erase(w.begin());
    }
    return w;
}

// KPSS statistic for level stationarity: partial sums of the demeaned series
// against a Bartlett-window long-run variance with the customary bandwidth
// trunc(4 (n/100)^{1/4}).
inline double kpss_statistic(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 12) throw DataError("kpss: need at least 12 observations");
    const double mu = stats::mean(x);
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) e[i] = x[i] - mu;

    double eta = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += e[i];
        eta += s * s;
    }
    eta /= static_cast<double>(n) * static_cast<double>(n);

    const auto bw = static_cast<std::size_t>(4.0 * std::pow(n / 100.0, 0.25));
    double lrv = 0.0;
    for (std::size_t i = 0; i < n; ++i) lrv += e[i] * e[i];
    lrv /= n;
    for (std::size_t l = 1; l <= bw; ++l) {
        double g = 0.0;
        for (std::size_t t = l; t < n; ++t) g += e[t] * e[t - l];
        g /= n;
        lrv += 2.0 * (1.0 - static_cast<double>(l) / (bw + 1)) * g;
    }
    if (!(lrv > 0.0)) return kInf;  // constant series: maximally nonstationary by convention
    return eta / lrv;
}

inline constexpr double kKpssCritical5pct = 0.463;

// Smallest d in {0, 1, 2} whose d-th difference passes the KPSS level test at
// the 5% critical value. Capped at 2.
inline int select_d(std::span<const double> x) {
    std::vector<double> w(x.begin(), x.end());
    for (int d = 0; d <= 2; ++d) {
        if (d > 0) w = difference(w, 1);
        if (kpss_statistic(w) < kKpssCritical5pct) return d;
    }
    log_warn("select_d: series still nonstationary after two differences; using d=2");
    return 2;
}

// ---------------------------------------------------------------------------
// Model representation.
// ---------------------------------------------------------------------------

struct ArimaOrder {
    int p = 0;
    int d = 0;
    int q = 0;
    bool operator==(const ArimaOrder&) const = default;
    std::string str() const {
        return "(" + std::to_string(p) + "," + std::to_string(d) + "," + std::to_string(q) + ")";
    }
};

struct ArimaModel {
    ArimaOrder order;
    // Lags may be sparse (seasonal probes add isolated AR lags); coefficients
    // align element-wise with the lag vectors.
    std::vector<int> ar_lags;
    std::vector<int> ma_lags;
    std::vector<double> phi;
    std::vector<double> theta;
    bool with_intercept = false;
    double intercept = 0.0;

    double css = kInf;
    double sigma2 = 0.0;  // css / n_eff
    // Gaussian likelihood of sigma2 evaluated at the full differenced length,
    // not at n_eff: candidates conditioning on different lag depths must rank
    // on a common sample or AICc rewards deep lags for shrinking the sum.
    double loglik = -kInf;
    double aicc = kInf;
    std::size_t n_eff = 0;  // residual count actually summed (length - max AR lag)

    bool converged = true;
    bool stationary = true;
    bool invertible = true;
    bool flagged() const { return !converged || !stationary || !invertible; }

    int max_ar_lag() const { return ar_lags.empty() ? 0 : ar_lags.back(); }
    int max_ma_lag() const { return ma_lags.empty() ? 0 : ma_lags.back(); }
    int n_coeffs() const {
        return static_cast<int>(ar_lags.size() + ma_lags.size()) + (with_intercept ? 1 : 0);
    }
};

// Thrown when the optimizer exhausts its iteration budget; carries the best
// parameters reached so callers can still inspect them.
class ArimaConvergenceError : public TrainingError {
  public:
    ArimaConvergenceError(const std::string& msg, ArimaModel best)
        : TrainingError(msg), best_so_far(std::move(best)) {}
    ArimaModel best_so_far;
};

namespace detail {

// Schur-Cohn step-down: all reflection coefficients of the polynomial
// 1 - a_1 z - ... - a_L z^L inside the unit interval iff every root lies
// outside the unit circle.
inline bool poly_stable(std::vector<double> a) {
    while (!a.empty() && a.back() == 0.0) a.pop_back();
    while (!a.empty()) {
        const std::size_t p = a.size();
        const double k = a.back();
        if (!(std::abs(k) < 1.0 - 1e-9)) return false;
        if (p == 1) break;
        std::vector<double> next(p - 1);
        const double denom = 1.0 - k * k;
        for (std::size_t i = 0; i < p - 1; ++i) next[i] = (a[i] + k * a[p - 2 - i]) / denom;
        a = std::move(next);
    }
    return true;
}

inline std::vector<double> dense_coeffs(const std::vector<int>& lags,
                                        const std::vector<double>& coef) {
    std::vector<double> dense(lags.empty() ? 0 : static_cast<std::size_t>(lags.back()), 0.0);
    for (std::size_t i = 0; i < lags.size(); ++i)
        dense[static_cast<std::size_t>(lags[i]) - 1] = coef[i];
    return dense;
}

inline bool ar_stationary(const ArimaModel& m) {
    return poly_stable(dense_coeffs(m.ar_lags, m.phi));
}

inline bool ma_invertible(const ArimaModel& m) {
    // 1 + theta_1 z + ... roots outside the circle iff 1 - (-theta) stable.
    std::vector<double> a = dense_coeffs(m.ma_lags, m.theta);
    for (double& v : a) v = -v;
    return poly_stable(a);
}

// One streaming pass through the conditional recursion: residuals, the
// sum of squares, and (optionally) the normal-equation blocks for the
// current parameters. Residuals start at t0 = max AR lag with earlier
// innovations pinned to zero.
struct CssPass {
    double css = 0.0;
    std::size_t n_eff = 0;
    std::vector<double> jtj;  // K x K, row-major (only when wanted)
    std::vector<double> jtr;  // K
};

inline CssPass css_pass(std::span<const double> w, const std::vector<int>& ar_lags,
                        const std::vector<int>& ma_lags, bool with_intercept, double c,
                        std::span<const double> phi, std::span<const double> theta,
                        bool want_gradient, std::vector<double>* residuals_out = nullptr) {
    const std::size_t n = w.size();
    const std::size_t t0 = ar_lags.empty() ? 0 : static_cast<std::size_t>(ar_lags.back());
    const std::size_t max_ma = ma_lags.empty() ? 0 : static_cast<std::size_t>(ma_lags.back());
    const std::size_t K =
        (with_intercept ? 1 : 0) + ar_lags.size() + ma_lags.size();
    const std::size_t ring = max_ma + 1;

    CssPass out;
    if (want_gradient) {
        out.jtj.assign(K * K, 0.0);
        out.jtr.assign(K, 0.0);
    }
    if (n <= t0) throw DataError("arima: series shorter than largest AR lag");

    std::vector<double> eps_hist(ring, 0.0);
    std::vector<double> d_hist(want_gradient ? K * ring : 0, 0.0);
    std::vector<double> deps(want_gradient ? K : 0, 0.0);
    if (residuals_out) residuals_out->assign(n - t0, 0.0);

    for (std::size_t t = t0; t < n; ++t) {
        double eps = w[t];
        if (with_intercept) eps -= c;
        for (std::size_t i = 0; i < ar_lags.size(); ++i)
            eps -= phi[i] * w[t - static_cast<std::size_t>(ar_lags[i])];
        for (std::size_t j = 0; j < ma_lags.size(); ++j) {
            const std::size_t back = static_cast<std::size_t>(ma_lags[j]);
            if (t >= t0 + back) eps -= theta[j] * eps_hist[(t - back) % ring];
        }

        if (want_gradient) {
            std::size_t k = 0;
            auto ma_feedback = [&](std::size_t param) {
                double acc = 0.0;
                for (std::size_t j = 0; j < ma_lags.size(); ++j) {
                    const std::size_t back = static_cast<std::size_t>(ma_lags[j]);
                    if (t >= t0 + back) acc += theta[j] * d_hist[param * ring + (t - back) % ring];
                }
                return acc;
            };
            if (with_intercept) {
                deps[k] = -1.0 - ma_feedback(k);
                ++k;
            }
            for (std::size_t i = 0; i < ar_lags.size(); ++i, ++k)
                deps[k] = -w[t - static_cast<std::size_t>(ar_lags[i])] - ma_feedback(k);
            for (std::size_t j = 0; j < ma_lags.size(); ++j, ++k) {
                const std::size_t back = static_cast<std::size_t>(ma_lags[j]);
                double lagged_eps = (t >= t0 + back) ? eps_hist[(t - back) % ring] : 0.0;
                deps[k] = -lagged_eps - ma_feedback(k);
            }
            for (std::size_t a = 0; a < K; ++a) {
                out.jtr[a] += deps[a] * eps;
                for (std::size_t b = a; b < K; ++b) out.jtj[a * K + b] += deps[a] * deps[b];
            }
            for (std::size_t a = 0; a < K; ++a) d_hist[a * ring + t % ring] = deps[a];
        }

        eps_hist[t % ring] = eps;
        if (residuals_out) (*residuals_out)[t - t0] = eps;
        out.css += eps * eps;
        ++out.n_eff;
    }
    if (want_gradient) {
        const std::size_t Kn = K;
        for (std::size_t a = 0; a < Kn; ++a)
            for (std::size_t b = 0; b < a; ++b) out.jtj[a * Kn + b] = out.jtj[b * Kn + a];
    }
    return out;
}

// total_n is the full differenced-series length. The likelihood is evaluated
// there rather than at n_eff: with per-model n_eff every extra AR lag removes
// one residual term and buys ~log(2*pi*sigma2)+1 of -2*loglik against a
// parameter penalty of only 2, so order selection drifts toward deep lags.
inline void finalize_fit(ArimaModel& m, double css, std::size_t n_eff, std::size_t total_n) {
    m.css = css;
    m.n_eff = n_eff;
    m.sigma2 = n_eff > 0 ? css / static_cast<double>(n_eff) : 0.0;
    if (m.sigma2 <= 0.0) m.sigma2 = 1e-300;  // exact fit; keep the likelihood finite
    const double n = static_cast<double>(total_n);
    m.loglik = -0.5 * n * (std::log(2.0 * std::numbers::pi * m.sigma2) + 1.0);
    const double k = static_cast<double>(m.n_coeffs() + 1);  // +1 for sigma^2
    if (n - k - 1.0 > 0.0)
        m.aicc = -2.0 * m.loglik + 2.0 * k * n / (n - k - 1.0);
    else
        m.aicc = kInf;
    m.stationary = ar_stationary(m);
    m.invertible = ma_invertible(m);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimation.
// ---------------------------------------------------------------------------

// Fits an ARMA model with the given (possibly sparse) lag structure on an
// already-differenced series, minimizing the conditional sum of squares.
// Pure AR models reduce to least squares; mixed models start from a
// Hannan-Rissanen regression and are polished by Levenberg-Marquardt with
// analytic derivatives.
inline ArimaModel fit_arma(std::span<const double> w, std::vector<int> ar_lags,
                           std::vector<int> ma_lags, bool with_intercept) {
    std::sort(ar_lags.begin(), ar_lags.end());
    std::sort(ma_lags.begin(), ma_lags.end());
    for (const auto& lags : {ar_lags, ma_lags})
        for (std::size_t i = 0; i < lags.size(); ++i)
            if (lags[i] < 1 || (i > 0 && lags[i] == lags[i - 1]))
                throw ConfigError("fit_arma: lags must be distinct and >= 1");

    ArimaModel m;
    m.ar_lags = ar_lags;
    m.ma_lags = ma_lags;
    m.with_intercept = with_intercept;
    m.phi.assign(ar_lags.size(), 0.0);
    m.theta.assign(ma_lags.size(), 0.0);
    m.order = ArimaOrder{m.max_ar_lag(), 0, m.max_ma_lag()};

    const std::size_t n = w.size();
    const std::size_t t0 = static_cast<std::size_t>(m.max_ar_lag());
    const int K = m.n_coeffs();
    if (n < t0 + static_cast<std::size_t>(std::max(10 * (K + 1), 8)))
        throw DataError("fit_arma: series too short for requested lags (" + std::to_string(n) +
                        " points)");

    if (ma_lags.empty()) {
        // Least squares on the AR regression, exact CSS minimizer.
        if (K == 0) {
            auto pass = detail::css_pass(w, {}, {}, false, 0.0, {}, {}, false);
            detail::finalize_fit(m, pass.css, pass.n_eff, w.size());
            return m;
        }
        const std::size_t rows = n - t0;
        const std::size_t cols = static_cast<std::size_t>(K);
        std::vector<double> X(rows * cols), y(rows);
        for (std::size_t t = t0; t < n; ++t) {
            std::size_t r = t - t0;
            std::size_t col = 0;
            if (with_intercept) X[r * cols + col++] = 1.0;
            for (int lag : ar_lags) X[r * cols + col++] = w[t - static_cast<std::size_t>(lag)];
            y[r] = w[t];
        }
        std::vector<double> beta = stats::ols(X, rows, cols, y);
        std::size_t col = 0;
        if (with_intercept) m.intercept = beta[col++];
        for (std::size_t i = 0; i < ar_lags.size(); ++i) m.phi[i] = beta[col++];
        auto pass = detail::css_pass(w, ar_lags, {}, with_intercept, m.intercept, m.phi, {},
                                     false);
        detail::finalize_fit(m, pass.css, pass.n_eff, w.size());
        return m;
    }

    // Hannan-Rissanen: long-AR residuals stand in for the unobserved
    // innovations in a linear regression that seeds the optimizer.
    const int max_ar = m.max_ar_lag();
    const int max_ma = m.max_ma_lag();
    std::size_t L = static_cast<std::size_t>(std::max(20, 2 * (max_ar + max_ma)));
    L = std::min(L, n / 4);
    L = std::max<std::size_t>(L, 1);
    std::vector<double> eps_hat(n, 0.0);
    {
        const std::size_t rows = n - L;
        const std::size_t cols = L + 1;
        if (rows > cols) {
            std::vector<double> X(rows * cols), y(rows);
            for (std::size_t t = L; t < n; ++t) {
                std::size_t r = t - L;
                X[r * cols] = 1.0;
                for (std::size_t j = 1; j <= L; ++j) X[r * cols + j] = w[t - j];
                y[r] = w[t];
            }
            std::vector<double> beta = stats::ols(X, rows, cols, y);
            for (std::size_t t = L; t < n; ++t) {
                double pred = beta[0];
                for (std::size_t j = 1; j <= L; ++j) pred += beta[j] * w[t - j];
                eps_hat[t] = w[t] - pred;
            }
        }
    }
    {
        const std::size_t t1 =
            std::max(static_cast<std::size_t>(max_ar), L + static_cast<std::size_t>(max_ma));
        const std::size_t cols = static_cast<std::size_t>(K);
        if (n > t1 && n - t1 > cols + 2) {
            const std::size_t rows = n - t1;
            std::vector<double> X(rows * cols), y(rows);
            for (std::size_t t = t1; t < n; ++t) {
                std::size_t r = t - t1;
                std::size_t col = 0;
                if (with_intercept) X[r * cols + col++] = 1.0;
                for (int lag : ar_lags) X[r * cols + col++] = w[t - static_cast<std::size_t>(lag)];
                for (int lag : ma_lags)
                    X[r * cols + col++] = eps_hat[t - static_cast<std::size_t>(lag)];
                y[r] = w[t];
            }
            try {
                std::vector<double> beta = stats::ols(X, rows, cols, y);
                std::size_t col = 0;
                if (with_intercept) m.intercept = beta[col++];
                for (std::size_t i = 0; i < ar_lags.size(); ++i) m.phi[i] = beta[col++];
                for (std::size_t j = 0; j < ma_lags.size(); ++j) {
                    double th = beta[col++];
                    m.theta[j] = std::clamp(th, -0.95, 0.95);
                }
            } catch (const DataError&) {
                // Singular start: begin from zeros.
            }
        }
    }
    if (!detail::ar_stationary(m)) m.phi.assign(m.phi.size(), 0.0);

    // Levenberg-Marquardt on the conditional sum of squares.
    const std::size_t Ksz = static_cast<std::size_t>(K);
    std::vector<double> params(Ksz);
    auto pack = [&](const ArimaModel& model, std::vector<double>& out) {
        std::size_t k = 0;
        if (with_intercept) out[k++] = model.intercept;
        for (double v : model.phi) out[k++] = v;
        for (double v : model.theta) out[k++] = v;
    };
    auto unpack = [&](const std::vector<double>& in, ArimaModel& model) {
        std::size_t k = 0;
        if (with_intercept) model.intercept = in[k++];
        for (double& v : model.phi) v = in[k++];
        for (double& v : model.theta) v = in[k++];
    };
    pack(m, params);

    auto evaluate = [&](const std::vector<double>& p, bool grad) {
        ArimaModel probe = m;
        unpack(p, probe);
        return detail::css_pass(w, ar_lags, ma_lags, with_intercept, probe.intercept, probe.phi,
                                probe.theta, grad);
    };

    detail::CssPass cur = evaluate(params, true);
    double lambda = 1e-3;
    int small_steps = 0;
    bool converged = false;
    const int max_iter = 200;
    for (int iter = 0; iter < max_iter; ++iter) {
        std::vector<double> lhs = cur.jtj;
        for (std::size_t i = 0; i < Ksz; ++i) {
            double dmp = lambda * std::max(cur.jtj[i * Ksz + i], 1e-12);
            lhs[i * Ksz + i] += dmp;
        }
        std::vector<double> rhs(Ksz), delta;
        for (std::size_t i = 0; i < Ksz; ++i) rhs[i] = -cur.jtr[i];
        if (!stats::cholesky_solve(lhs, Ksz, rhs, delta)) {
            lambda *= 10.0;
            if (lambda > 1e14) break;
            continue;
        }
        std::vector<double> trial = params;
        for (std::size_t i = 0; i < Ksz; ++i) trial[i] += delta[i];
        detail::CssPass next = evaluate(trial, true);
        if (next.css < cur.css) {
            const double improvement = cur.css - next.css;
            params = std::move(trial);
            cur = std::move(next);
            lambda = std::max(lambda * 0.3, 1e-12);
            if (improvement <= 1e-12 * (cur.css + 1e-12)) {
                if (++small_steps >= 2) {
                    converged = true;
                    break;
                }
            } else {
                small_steps = 0;
            }
        } else {
            lambda *= 10.0;
            if (lambda > 1e14) {
                converged = true;  // no descent direction left; at a minimum
                break;
            }
        }
    }
    unpack(params, m);
    detail::finalize_fit(m, cur.css, cur.n_eff, w.size());
    m.converged = converged;
    if (!converged)
        throw ArimaConvergenceError("fit_arma: no convergence after " +
                                        std::to_string(max_iter) + " iterations",
                                    m);
    return m;
}

// intercept_mode: -1 default (intercept iff d == 0), 0 off, 1 on.
inline ArimaModel fit_arima(std::span<const double> x, const ArimaOrder& order,
                            int intercept_mode = -1) {
    if (order.p < 0 || order.d < 0 || order.q < 0)
        throw ConfigError("fit_arima: negative order");
    std::vector<double> w = difference(x, order.d);
    std::vector<int> ar(static_cast<std::size_t>(order.p));
    std::vector<int> ma(static_cast<std::size_t>(order.q));
    for (int i = 0; i < order.p; ++i) ar[static_cast<std::size_t>(i)] = i + 1;
    for (int j = 0; j < order.q; ++j) ma[static_cast<std::size_t>(j)] = j + 1;
    bool intercept = intercept_mode == -1 ? order.d == 0 : intercept_mode == 1;
    ArimaModel m = fit_arma(w, std::move(ar), std::move(ma), intercept);
    m.order = order;
    return m;
}

// Residuals of a fitted model on a (possibly new) undifferenced series.
inline std::vector<double> residuals(const ArimaModel& m, std::span<const double> x) {
    std::vector<double> w = difference(x, m.order.d);
    std::vector<double> out;
    detail::css_pass(w, m.ar_lags, m.ma_lags, m.with_intercept, m.intercept, m.phi, m.theta,
                     false, &out);
    return out;
}

// Minimum mean-square-error forecast of the next h values (innovations after
// the sample pinned at zero). Supports d <= 2.
inline std::vector<double> forecast(const ArimaModel& m, std::span<const double> history,
                                    int h) {
    if (h < 1) throw ConfigError("forecast: horizon must be >= 1");
    if (m.order.d > 2) throw ConfigError("forecast: d > 2 unsupported");
    std::vector<double> w = difference(history, m.order.d);
    std::vector<double> eps;
    detail::css_pass(w, m.ar_lags, m.ma_lags, m.with_intercept, m.intercept, m.phi, m.theta,
                     false, &eps);
    const std::size_t t0 = m.ar_lags.empty() ? 0 : static_cast<std::size_t>(m.ar_lags.back());
    // Extend w and the innovation sequence step by step.
    std::vector<double> eps_full(w.size(), 0.0);
    for (std::size_t i = 0; i < eps.size(); ++i) eps_full[t0 + i] = eps[i];
    std::vector<double> x_ext(history.begin(), history.end());
    for (int step = 0; step < h; ++step) {
        double next = m.with_intercept ? m.intercept : 0.0;
        const std::size_t t = w.size();
        for (std::size_t i = 0; i < m.ar_lags.size(); ++i) {
            const auto lag = static_cast<std::size_t>(m.ar_lags[i]);
            if (t >= lag) next += m.phi[i] * w[t - lag];
        }
        for (std::size_t j = 0; j < m.ma_lags.size(); ++j) {
            const auto lag = static_cast<std::size_t>(m.ma_lags[j]);
            if (t >= lag) next += m.theta[j] * eps_full[t - lag];
        }
        w.push_back(next);
        eps_full.push_back(0.0);
        const std::size_t nx = x_ext.size();
        double xv = next;
        if (m.order.d == 1) xv = x_ext[nx - 1] + next;
        if (m.order.d == 2) xv = 2.0 * x_ext[nx - 1] - x_ext[nx - 2] + next;
        x_ext.push_back(xv);
    }
    return {x_ext.end() - h, x_ext.end()};
}

// ---------------------------------------------------------------------------
// Diagnostics.
// ---------------------------------------------------------------------------

struct AcfProfile {
    std::vector<double> values;  // index = lag, values[0] == 1
    double band = 0.0;           // +- 1.96 / sqrt(n)
};

inline AcfProfile acf(std::span<const double> x, int max_lag) {
    const std::size_t n = x.size();
    if (max_lag < 1 || static_cast<std::size_t>(max_lag) >= n / 2)
        throw DataError("acf: max_lag must be in [1, n/2)");
    const double mu = stats::mean(x);
    double denom = 0.0;
    for (double v : x) denom += (v - mu) * (v - mu);
    if (!(denom > 0.0)) throw DataError("acf: constant series");
    AcfProfile out;
    out.values.resize(static_cast<std::size_t>(max_lag) + 1);
    out.values[0] = 1.0;
    for (int k = 1; k <= max_lag; ++k) {
        double num = 0.0;
        for (std::size_t t = static_cast<std::size_t>(k); t < n; ++t)
            num += (x[t] - mu) * (x[t - static_cast<std::size_t>(k)] - mu);
        out.values[static_cast<std::size_t>(k)] = num / denom;
    }
    out.band = 1.96 / std::sqrt(static_cast<double>(n));
    return out;
}

// Portmanteau whiteness test on residuals; df adjusted for fitted orders.
inline double ljung_box_pvalue(std::span<const double> resid, int h, int fitted_params) {
    const std::size_t n = resid.size();
    if (h < 1 || static_cast<std::size_t>(h) >= n / 2)
        throw DataError("ljung_box: h must be in [1, n/2)");
    AcfProfile profile = acf(resid, h);
    double q = 0.0;
    for (int k = 1; k <= h; ++k) {
        double r = profile.values[static_cast<std::size_t>(k)];
        q += r * r / static_cast<double>(n - static_cast<std::size_t>(k));
    }
    q *= static_cast<double>(n) * (static_cast<double>(n) + 2.0);
    const int df = std::max(1, h - fitted_params);
    return stats::chi2_sf(q, df);
}

struct ResidualDiagnostics {
    int lags_checked = 0;
    int lags_exceeding = 0;
    double band = 0.0;
    bool acf_ok = false;        // at most 5% of checked lags outside the band
    double ljung_box_p = 0.0;
    bool ljung_box_ok = false;  // p > 0.05
};

inline ResidualDiagnostics residual_diagnostics(const ArimaModel& m,
                                                std::span<const double> x) {
    std::vector<double> resid = residuals(m, x);
    ResidualDiagnostics d;
    const std::size_t n = resid.size();
    if (n < 16) throw DataError("residual_diagnostics: too few residuals");
    const int max_lag = static_cast<int>(std::min<std::size_t>(40, n / 2 - 1));
    AcfProfile profile = acf(resid, max_lag);
    d.lags_checked = max_lag;
    d.band = profile.band;
    for (int k = 1; k <= max_lag; ++k)
        if (std::abs(profile.values[static_cast<std::size_t>(k)]) > profile.band)
            ++d.lags_exceeding;
    d.acf_ok = d.lags_exceeding <= static_cast<int>(0.05 * max_lag + 1e-9);
    const int h = static_cast<int>(std::min<std::size_t>(40, n / 4));
    const int fitted = static_cast<int>(m.ar_lags.size() + m.ma_lags.size());
    if (h >= 1 && static_cast<std::size_t>(h) < n / 2) {
        d.ljung_box_p = ljung_box_pvalue(resid, h, fitted);
        d.ljung_box_ok = d.ljung_box_p > 0.05;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Stepwise order search.
// ---------------------------------------------------------------------------

struct TrailEntry {
    ArimaOrder order;
    bool intercept = false;
    double aicc = kInf;
    bool accepted = false;
};

struct StepwiseOptions {
    int max_order = 20;       // cap on p and q
    int d = -1;               // -1: choose via KPSS
    double min_improvement = 1e-8;
};

struct StepwiseResult {
    ArimaModel best;
    std::vector<TrailEntry> trail;  // all evaluations; accepted moves flagged
};

// Hill-climbs AICc over (p, q, intercept) from a small set of anchors,
// moving to the best neighbouring model until none improves. Candidates that
// fail to fit, or fit outside the stationary/invertible region, are treated
// as infinitely bad.
inline StepwiseResult stepwise_search(std::span<const double> x, const StepwiseOptions& opts = {}) {
    const int d = opts.d >= 0 ? opts.d : select_d(x);
    std::vector<double> w = difference(x, d);

    struct Key {
        int p, q;
        bool c;
        auto operator<=>(const Key&) const = default;
    };
    std::map<Key, ArimaModel> cache;
    StepwiseResult result;

    auto fit_key = [&](const Key& key) -> const ArimaModel& {
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        ArimaModel m;
        try {
            std::vector<int> ar(static_cast<std::size_t>(key.p));
            std::vector<int> ma(static_cast<std::size_t>(key.q));
            for (int i = 0; i < key.p; ++i) ar[static_cast<std::size_t>(i)] = i + 1;
            for (int j = 0; j < key.q; ++j) ma[static_cast<std::size_t>(j)] = j + 1;
            m = fit_arma(w, std::move(ar), std::move(ma), key.c);
            m.order = ArimaOrder{key.p, d, key.q};
            if (m.flagged()) m.aicc = kInf;
        } catch (const ArimaConvergenceError& e) {
            m = e.best_so_far;
            m.order = ArimaOrder{key.p, d, key.q};
            m.aicc = kInf;
        } catch (const Error&) {
            m.order = ArimaOrder{key.p, d, key.q};
            m.aicc = kInf;
        }
        result.trail.push_back(TrailEntry{m.order, key.c, m.aicc, false});
        return cache.emplace(key, std::move(m)).first->second;
    };

    auto better = [](const ArimaModel& a, const ArimaModel& b) {
        if (a.aicc != b.aicc) return a.aicc < b.aicc;
        if (a.order.p + a.order.q != b.order.p + b.order.q)
            return a.order.p + a.order.q < b.order.p + b.order.q;
        return a.order.p < b.order.p;
    };

    const bool c0 = d == 0;
    std::vector<Key> anchors = {{0, 0, c0}, {1, 0, c0}, {0, 1, c0}, {2, 2, c0}};
    Key best_key = anchors[0];
    const ArimaModel* best = &fit_key(best_key);
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        const ArimaModel& m = fit_key(anchors[i]);
        if (better(m, *best)) {
            best = &m;
            best_key = anchors[i];
        }
    }
    if (!std::isfinite(best->aicc))
        throw TrainingError("stepwise_search: no anchor model could be fitted");
    result.trail.push_back(TrailEntry{best->order, best_key.c, best->aicc, true});

    while (true) {
        std::vector<Key> neighbours = {
            {best_key.p + 1, best_key.q, best_key.c}, {best_key.p - 1, best_key.q, best_key.c},
            {best_key.p, best_key.q + 1, best_key.c}, {best_key.p, best_key.q - 1, best_key.c},
            {best_key.p, best_key.q, !best_key.c},
        };
        const ArimaModel* challenger = nullptr;
        Key challenger_key{};
        for (const Key& k : neighbours) {
            if (k.p < 0 || k.q < 0 || k.p > opts.max_order || k.q > opts.max_order) continue;
            const ArimaModel& m = fit_key(k);
            if (!challenger || better(m, *challenger)) {
                challenger = &m;
                challenger_key = k;
            }
        }
        if (!challenger || !(challenger->aicc < best->aicc - opts.min_improvement)) break;
        best = challenger;
        best_key = challenger_key;
        result.trail.push_back(TrailEntry{best->order, best_key.c, best->aicc, true});
    }
    result.best = *best;
    return result;
}

// ---------------------------------------------------------------------------
// Seasonal probing on the hourly grid.
// ---------------------------------------------------------------------------

struct SeasonalCheck {
    std::vector<int> kept;  // subset of {12, 24} that improved AICc
    ArimaModel model;       // winning augmented (or base) model
};

// Tries adding AR terms at the half-daily and daily hourly lags to the
// selected hourly model; keeps the combination with the lowest AICc.
inline SeasonalCheck seasonal_check(std::span<const double> w_hourly, const ArimaModel& base) {
    const std::vector<std::vector<int>> candidates = {{}, {12}, {24}, {12, 24}};
    SeasonalCheck out;
    out.model = base;
    double best_aicc = base.aicc;
    for (const auto& extra : candidates) {
        if (extra.empty()) continue;
        std::vector<int> ar = base.ar_lags;
        bool fresh = false;
        for (int lag : extra)
            if (std::find(ar.begin(), ar.end(), lag) == ar.end()) {
                ar.push_back(lag);
                fresh = true;
            }
        if (!fresh) continue;
        try {
            ArimaModel m = fit_arma(w_hourly, ar, base.ma_lags, base.with_intercept);
            m.order = base.order;
            if (!m.flagged() && m.aicc < best_aicc) {
                best_aicc = m.aicc;
                out.model = m;
                out.kept = extra;
            }
        } catch (const Error&) {
            continue;  // candidate unfittable; keep what we have
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// From fitted orders to lag entries.
// ---------------------------------------------------------------------------

// Minute lags run 1..max(p, q) of the minute model (at least 1, capped);
// hour lags run 2..max(p, q) of the hourly model plus any seasonal lags that
// survived. Hour lag 1 is excluded: it is the same information as the most
// recent minutes.
inline features::LagEntry derive_lag_entry(const ArimaModel& minute_model,
                                           const ArimaModel& hourly_model,
                                           const std::vector<int>& seasonal_kept,
                                           int lag_cap = 20) {
    features::LagEntry entry;
    int m = std::max({1, minute_model.order.p, minute_model.order.q});
    m = std::min(m, lag_cap);
    for (int j = 1; j <= m; ++j) entry.minute_lags.push_back(j);

    std::set<int> hours;
    int hmax = std::min(std::max(hourly_model.order.p, hourly_model.order.q), lag_cap);
    for (int k = 2; k <= hmax; ++k) hours.insert(k);
    for (int k : seasonal_kept)
        if (k >= 2) hours.insert(k);
    entry.hour_lags.assign(hours.begin(), hours.end());
    return entry;
}

// ---------------------------------------------------------------------------
// Whole-dataset lag selection.
// ---------------------------------------------------------------------------

struct LagSelectionOptions {
    MinuteRange range{};               // training window (half-open)
    int max_order = 20;
    int lag_cap = 20;
    std::size_t max_minute_points = 0;  // 0: no cap; otherwise use the most recent points
};

struct VariableSelection {
    VariableId var{};
    bool fallback = false;
    std::string error;

    int minute_d = 0;
    ArimaOrder minute_order;
    bool minute_intercept = false;
    double minute_aicc = kInf;
    ResidualDiagnostics minute_diag;
    std::vector<TrailEntry> minute_trail;

    int hourly_d = 0;
    ArimaOrder hourly_order;
    bool hourly_intercept = false;
    double hourly_aicc = kInf;
    ResidualDiagnostics hourly_diag;
    std::vector<TrailEntry> hourly_trail;
    std::vector<int> seasonal_kept;

    features::LagEntry lags;
};

struct SelectionReport {
    std::string site;
    std::vector<VariableSelection> variables;
};

namespace detail {

// Longest run of slots in [range) that are present, non-excluded and
// non-missing for the given series.
inline std::pair<std::size_t, std::size_t> longest_usable_run(const SiteDataset& ds,
                                                              const MinuteSeries& s,
                                                              const MinuteRange& range) {
    MinuteTimestamp lo = std::max(range.begin, ds.start());
    MinuteTimestamp hi = std::min(range.end, ds.end() + 1);
    std::size_t best_b = 0, best_e = 0, run_b = 0;
    bool in_run = false;
    auto flush = [&](std::size_t end) {
        if (in_run && end - run_b > best_e - best_b) {
            best_b = run_b;
            best_e = end;
        }
        in_run = false;
    };
    for (std::int64_t m = lo - ds.start(); m < hi - ds.start(); ++m) {
        auto i = static_cast<std::size_t>(m);
        bool ok = ds.row_present(i) && !ds.excluded(i) && !s.is_missing(i);
        if (ok && !in_run) {
            run_b = i;
            in_run = true;
        } else if (!ok) {
            flush(i);
        }
    }
    flush(static_cast<std::size_t>(hi - ds.start()));
    return {best_b, best_e};
}

}  // namespace detail

// Runs the full selection recipe for every model variable of one site:
// KPSS-chosen differencing and a stepwise AICc search on the minute grid,
// the same on the hourly grid plus seasonal probing, then translation into
// lag entries. A variable whose selection fails in any way falls back to the
// most recent minute with a warning; the report records everything.
inline features::LagSpec build_lag_spec(const SiteDataset& ds, const LagSelectionOptions& opts,
                                        SelectionReport* report = nullptr) {
    features::LagSpec spec;
    if (report) {
        report->site = ds.site_name;
        report->variables.clear();
    }
    for (VariableId var : model_variables()) {
        VariableSelection sel;
        sel.var = var;
        try {
            if (!ds.has(var)) throw DataError(std::string("missing variable ") + to_string(var));
            const MinuteSeries& s = ds.at(var);
            auto [b, e] = detail::longest_usable_run(ds, s, opts.range);
            if (e - b < 2000)
                throw DataError("usable run too short for selection (" + std::to_string(e - b) +
                                " minutes)");

            std::vector<double> minute_vals;
            minute_vals.reserve(e - b);
            for (std::size_t i = b; i < e; ++i) minute_vals.push_back(s.value(i));
            if (opts.max_minute_points > 0 && minute_vals.size() > opts.max_minute_points)
                minute_vals.erase(minute_vals.begin(),
                                  minute_vals.end() - static_cast<std::ptrdiff_t>(
                                                          opts.max_minute_points));

            StepwiseOptions sw;
            sw.max_order = opts.max_order;
            sel.minute_d = select_d(minute_vals);
            sw.d = sel.minute_d;
            StepwiseResult minute_res = stepwise_search(minute_vals, sw);
            sel.minute_order = minute_res.best.order;
            sel.minute_intercept = minute_res.best.with_intercept;
            sel.minute_aicc = minute_res.best.aicc;
            sel.minute_trail = std::move(minute_res.trail);
            sel.minute_diag = residual_diagnostics(minute_res.best, minute_vals);

            // Hourly grid: local top-of-hour samples of the same run.
            MinuteSeries run = slice(s, s.timestamp(b), s.timestamp(e - 1));
            MinuteSeries hourly = hourly_subsample(run, ds.tz_offset_minutes);
            std::vector<double> hourly_vals = hourly.dense();
            if (hourly_vals.size() < 64)
                throw DataError("hourly run too short for selection");

            StepwiseOptions swh;
            swh.max_order = opts.max_order;
            sel.hourly_d = select_d(hourly_vals);
            swh.d = sel.hourly_d;
            StepwiseResult hourly_res = stepwise_search(hourly_vals, swh);
            std::vector<double> w_h = difference(hourly_vals, sel.hourly_d);
            SeasonalCheck seasonal = seasonal_check(w_h, hourly_res.best);
            sel.hourly_order = hourly_res.best.order;
            sel.hourly_intercept = hourly_res.best.with_intercept;
            sel.hourly_aicc = seasonal.model.aicc;
            sel.hourly_trail = std::move(hourly_res.trail);
            sel.seasonal_kept = seasonal.kept;
            sel.hourly_diag = residual_diagnostics(hourly_res.best, hourly_vals);

            sel.lags = derive_lag_entry(minute_res.best, hourly_res.best, seasonal.kept,
                                        opts.lag_cap);
        } catch (const Error& e) {
            sel.fallback = true;
            sel.error = e.what();
            sel.lags = features::LagEntry{{1}, {}};
            log_warn(std::string("lag selection for ") + to_string(var) + " on " + ds.site_name +
                     " failed (" + e.what() + "); falling back to the most recent minute");
        }
        spec[var] = sel.lags;
        if (report) report->variables.push_back(std::move(sel));
    }
    return spec;
}

inline json selection_report_to_json(const SelectionReport& r) {
    auto trail_json = [](const std::vector<TrailEntry>& trail) {
        json arr = json::array();
        for (const auto& t : trail)
            arr.push_back({{"order", t.order.str()},
                           {"intercept", t.intercept},
                           {"aicc", std::isfinite(t.aicc) ? json(t.aicc) : json()},
                           {"accepted", t.accepted}});
        return arr;
    };
    auto diag_json = [](const ResidualDiagnostics& d) {
        return json{{"lags_checked", d.lags_checked}, {"lags_exceeding", d.lags_exceeding},
                    {"band", d.band},                 {"acf_ok", d.acf_ok},
                    {"ljung_box_p", d.ljung_box_p},   {"ljung_box_ok", d.ljung_box_ok}};
    };
    json vars = json::array();
    for (const auto& v : r.variables) {
        json jv;
        jv["variable"] = to_string(v.var);
        jv["fallback"] = v.fallback;
        if (v.fallback) jv["error"] = v.error;
        if (!v.fallback) {
            jv["minute"] = {{"d", v.minute_d},
                            {"order", v.minute_order.str()},
                            {"intercept", v.minute_intercept},
                            {"aicc", v.minute_aicc},
                            {"diagnostics", diag_json(v.minute_diag)},
                            {"trail", trail_json(v.minute_trail)}};
            jv["hourly"] = {{"d", v.hourly_d},
                            {"order", v.hourly_order.str()},
                            {"intercept", v.hourly_intercept},
                            {"aicc", v.hourly_aicc},
                            {"diagnostics", diag_json(v.hourly_diag)},
                            {"trail", trail_json(v.hourly_trail)},
                            {"seasonal_kept", v.seasonal_kept}};
        }
        jv["lags"] = {{"minute_lags", v.lags.minute_lags}, {"hour_lags", v.lags.hour_lags}};
        vars.push_back(std::move(jv));
    }
    return json{{"version", 1}, {"site", r.site}, {"variables", vars}};
}

}  // namespace heliocast::arima
