// Order-selection walkthrough: simulate an AR(2) process, let the stepwise
// AICc search recover its order and translate the fit into lagged-feature
// offsets for the hour-ahead vectors.
#include <iostream>

#include "heliocast/heliocast.hpp"

using namespace heliocast;

int main() {
    // x_t = 0.6 x_{t-1} - 0.3 x_{t-2} + e_t with unit-variance noise.
    std::vector<double> x(4000, 0.0);
    for (std::size_t t = 2; t < x.size(); ++t)
        x[t] = 0.6 * x[t - 1] - 0.3 * x[t - 2] +
               counter_gaussian(derive_seed(11, 0), t);

    int d = arima::select_d(x);
    arima::StepwiseOptions opts;
    opts.d = d;
    arima::StepwiseResult search = arima::stepwise_search(x, opts);
    const arima::ArimaModel& best = search.best;

    std::cout << "chosen order: " << best.order.str()
              << (best.with_intercept ? " with intercept" : "") << "\n"
              << "AICc: " << best.aicc << ", evaluated " << search.trail.size()
              << " candidates\n"
              << "phi:";
    for (double p : best.phi) std::cout << ' ' << p;
    std::cout << "\n";

    arima::ArimaModel hourly;  // pretend the hourly search returned AR(2)
    hourly.order = {2, 0, 0};
    hourly.ar_lags = {1, 2};
    hourly.phi = {0.5, 0.2};
    features::LagEntry entry = arima::derive_lag_entry(best, hourly, {24});
    std::cout << "minute lags:";
    for (int m : entry.minute_lags) std::cout << ' ' << m;
    std::cout << "\nhour lags:";
    for (int h : entry.hour_lags) std::cout << ' ' << h;
    std::cout << "\n";
    return 0;
}
