// Single-hidden-layer perceptron for regression: tanh units, identity
// output, mini-batch SGD on squared loss with early stopping, plus the size
// selection and best-of-restarts ensembling recipe used by the pipeline.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/features.hpp"
#include "heliocast/gbt.hpp"  // contiguous_folds
#include "heliocast/stats.hpp"

namespace heliocast::mlp {

using nlohmann::json;

struct MlpConfig {
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 0.01;
    double lr_decay = 0.99;          // per-epoch geometric decay
    double validation_fraction = 0.1;  // tail of the training rows
    int patience = 10;               // epochs without validation improvement

    void validate() const {
        if (epochs < 0) throw ConfigError("mlp: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("mlp: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("mlp: learning_rate must be > 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0))
            throw ConfigError("mlp: lr_decay must be in (0, 1]");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
            throw ConfigError("mlp: validation_fraction must be in [0, 1)");
        if (patience < 1) throw ConfigError("mlp: patience must be >= 1");
    }

    json to_json() const {
        return json{{"epochs", epochs},
                    {"batch_size", batch_size},
                    {"learning_rate", learning_rate},
                    {"lr_decay", lr_decay},
                    {"validation_fraction", validation_fraction},
                    {"patience", patience}};
    }
    static MlpConfig from_json(const json& j) {
        MlpConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.lr_decay = j.value("lr_decay", c.lr_decay);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.patience = j.value("patience", c.patience);
        c.validate();
        return c;
    }
};

struct MlpModel {
    int input_dim = 0;
    int hidden = 0;
    std::vector<double> w1;  // hidden x input, row-major
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // hidden
    double b2 = 0.0;
    double validation_rmse = std::numeric_limits<double>::quiet_NaN();

    std::size_t n_params() const {
        return static_cast<std::size_t>(hidden) * static_cast<std::size_t>(input_dim) +
               2 * static_cast<std::size_t>(hidden) + 1;
    }

    double predict(std::span<const double> x) const {
        if (static_cast<int>(x.size()) != input_dim)
            throw ValidationError("mlp: feature vector has dimension " +
                                  std::to_string(x.size()) + ", model expects " +
                                  std::to_string(input_dim));
        double out = b2;
        for (int h = 0; h < hidden; ++h) {
            double a = b1[static_cast<std::size_t>(h)];
            const double* row = &w1[static_cast<std::size_t>(h) * static_cast<std::size_t>(input_dim)];
            for (int i = 0; i < input_dim; ++i) a += row[i] * x[static_cast<std::size_t>(i)];
            out += w2[static_cast<std::size_t>(h)] * std::tanh(a);
        }
        return out;
    }

    // Flat view [w1, b1, w2, b2] so gradients can be checked numerically.
    std::vector<double> flat_params() const {
        std::vector<double> p;
        p.reserve(n_params());
        p.insert(p.end(), w1.begin(), w1.end());
        p.insert(p.end(), b1.begin(), b1.end());
        p.insert(p.end(), w2.begin(), w2.end());
        p.push_back(b2);
        return p;
    }
    void set_flat_params(std::span<const double> p) {
        if (p.size() != n_params()) throw ValidationError("mlp: flat parameter size mismatch");
        std::size_t k = 0;
        for (double& v : w1) v = p[k++];
        for (double& v : b1) v = p[k++];
        for (double& v : w2) v = p[k++];
        b2 = p[k];
    }
};

// Fan-in scaled uniform init; biases start at zero.
inline MlpModel init(int input_dim, int hidden, std::uint64_t seed) {
    if (input_dim < 1) throw ConfigError("mlp: input_dim must be >= 1");
    if (hidden < 1) throw ConfigError("mlp: hidden must be >= 1");
    MlpModel m;
    m.input_dim = input_dim;
    m.hidden = hidden;
    m.w1.resize(static_cast<std::size_t>(hidden) * static_cast<std::size_t>(input_dim));
    m.b1.assign(static_cast<std::size_t>(hidden), 0.0);
    m.w2.resize(static_cast<std::size_t>(hidden));
    std::uint64_t s = derive_seed(seed, 0x6d6c7069);  // mlpi
    std::uint64_t c = 0;
    const double r1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    for (double& v : m.w1) v = (2.0 * counter_uniform(s, c++) - 1.0) * r1;
    const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& v : m.w2) v = (2.0 * counter_uniform(s, c++) - 1.0) * r2;
    m.b2 = 0.0;
    return m;
}

// Mean squared-error loss over the given rows and its gradient in flat
// parameter order. Loss = mean over rows of (prediction - y)^2 / 2.
inline std::pair<double, std::vector<double>> loss_and_grad(const MlpModel& m,
                                                            std::span<const double> x,
                                                            std::span<const double> y,
                                                            std::span<const std::size_t> rows) {
    const auto dim = static_cast<std::size_t>(m.input_dim);
    const auto hidden = static_cast<std::size_t>(m.hidden);
    std::vector<double> grad(m.n_params(), 0.0);
    double* gw1 = grad.data();
    double* gb1 = gw1 + hidden * dim;
    double* gw2 = gb1 + hidden;
    double* gb2 = gw2 + hidden;

    double loss = 0.0;
    std::vector<double> h(hidden);
    const double inv_b = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
    for (std::size_t r : rows) {
        const double* xr = &x[r * dim];
        double out = m.b2;
        for (std::size_t j = 0; j < hidden; ++j) {
            double a = m.b1[j];
            const double* row = &m.w1[j * dim];
            for (std::size_t i = 0; i < dim; ++i) a += row[i] * xr[i];
            h[j] = std::tanh(a);
            out += m.w2[j] * h[j];
        }
        const double err = out - y[r];
        loss += 0.5 * err * err;
        const double e = err * inv_b;
        *gb2 += e;
        for (std::size_t j = 0; j < hidden; ++j) {
            gw2[j] += e * h[j];
            const double da = e * m.w2[j] * (1.0 - h[j] * h[j]);
            gb1[j] += da;
            double* grow = &gw1[j * dim];
            for (std::size_t i = 0; i < dim; ++i) grow[i] += da * xr[i];
        }
    }
    return {loss * inv_b, std::move(grad)};
}

// Mini-batch SGD with geometric learning-rate decay. The last
// validation_fraction of the rows (latest targets) form the early-stopping
// split; the parameters with the best validation RMSE are returned. A
// non-finite loss aborts training: the step size is too large for the data.
inline MlpModel fit(std::span<const double> x, std::span<const double> y, std::size_t dim,
                    int hidden, const MlpConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t n = y.size();
    if (n == 0) throw TrainingError("mlp: empty training set");
    if (x.size() != n * dim) throw ValidationError("mlp: feature matrix shape mismatch");

    MlpModel model = init(static_cast<int>(dim), hidden, seed);
    if (cfg.epochs == 0) return model;

    std::size_t n_val = static_cast<std::size_t>(
        std::ceil(cfg.validation_fraction * static_cast<double>(n)));
    if (n_val >= n) n_val = n - 1;
    const std::size_t n_train = n - n_val;
    if (n_train == 0) throw TrainingError("mlp: no training rows after validation split");

    std::vector<std::size_t> train_rows(n_train);
    std::iota(train_rows.begin(), train_rows.end(), 0);
    std::vector<std::size_t> val_rows(n_val);
    std::iota(val_rows.begin(), val_rows.end(), n_train);

    auto val_rmse = [&](const MlpModel& m) {
        if (val_rows.empty()) return std::numeric_limits<double>::quiet_NaN();
        double se = 0.0;
        for (std::size_t r : val_rows) {
            double e = m.predict(std::span<const double>(&x[r * dim], dim)) - y[r];
            se += e * e;
        }
        return std::sqrt(se / static_cast<double>(val_rows.size()));
    };

    std::mt19937_64 shuffle_rng(derive_seed(seed, 0x73687566));  // shuf
    std::vector<double> best_params = model.flat_params();
    double best_val = val_rows.empty() ? std::numeric_limits<double>::infinity() : val_rmse(model);
    int stale = 0;
    double lr = cfg.learning_rate;

    std::vector<std::size_t> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_rows.begin(), train_rows.end(), shuffle_rng);
        for (std::size_t ofs = 0; ofs < n_train; ofs += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t take = std::min<std::size_t>(cfg.batch_size, n_train - ofs);
            batch.assign(train_rows.begin() + static_cast<std::ptrdiff_t>(ofs),
                         train_rows.begin() + static_cast<std::ptrdiff_t>(ofs + take));
            auto [loss, grad] = loss_and_grad(model, x, y, batch);
            if (!std::isfinite(loss))
                throw TrainingError("mlp: training diverged; lower the learning rate or "
                                    "normalize the inputs");
            std::vector<double> params = model.flat_params();
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
            model.set_flat_params(params);
        }
        lr *= cfg.lr_decay;
        if (!val_rows.empty()) {
            double v = val_rmse(model);
            if (!std::isfinite(v))
                throw TrainingError("mlp: training diverged; lower the learning rate or "
                                    "normalize the inputs");
            if (v < best_val - 1e-12) {
                best_val = v;
                best_params = model.flat_params();
                stale = 0;
            } else if (++stale >= cfg.patience) {
                break;
            }
        }
    }
    if (!val_rows.empty()) {
        model.set_flat_params(best_params);
        model.validation_rmse = best_val;
    }
    return model;
}

inline MlpModel fit(const features::SupervisedSet& set, int hidden, const MlpConfig& cfg,
                    std::uint64_t seed) {
    return fit(set.x, set.y, set.dim(), hidden, cfg, seed);
}

// ---------------------------------------------------------------------------
// Size selection and ensembling.
// ---------------------------------------------------------------------------

struct SizeSelection {
    int best = 0;
    std::vector<double> cv_rmse;  // aligned with the candidate list
};

// Contiguous k-fold cross-validation over hidden-layer sizes. Rows stay in
// time order; each fold is a block of consecutive targets. Ties keep the
// smaller network.
inline SizeSelection select_size(const features::SupervisedSet& set,
                                 const std::vector<int>& candidates, int folds,
                                 const MlpConfig& cfg, std::uint64_t seed) {
    if (candidates.empty()) throw ConfigError("mlp select_size: no candidates");
    const std::size_t n = set.n_rows();
    auto blocks = gbt::contiguous_folds(n, folds);
    const std::size_t dim = set.dim();

    SizeSelection out;
    out.cv_rmse.assign(candidates.size(), 0.0);
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        double total = 0.0;
        for (std::size_t f = 0; f < blocks.size(); ++f) {
            auto [hb, he] = blocks[f];
            std::vector<double> xt, yt;
            xt.reserve((n - (he - hb)) * dim);
            for (std::size_t i = 0; i < n; ++i) {
                if (i >= hb && i < he) continue;
                auto row = set.row(i);
                xt.insert(xt.end(), row.begin(), row.end());
                yt.push_back(set.y[i]);
            }
            MlpModel m = fit(xt, yt, dim, candidates[ci], cfg,
                             derive_seed(seed, 0x6376666f, f, static_cast<std::uint64_t>(ci)));
            double se = 0.0;
            for (std::size_t i = hb; i < he; ++i) {
                double e = m.predict(set.row(i)) - set.y[i];
                se += e * e;
            }
            total += std::sqrt(se / static_cast<double>(he - hb));
        }
        out.cv_rmse[ci] = total / static_cast<double>(blocks.size());
        if (out.cv_rmse[ci] < best_score) {
            best_score = out.cv_rmse[ci];
            out.best = candidates[ci];
        }
    }
    return out;
}

struct MlpEnsemble {
    std::vector<MlpModel> members;

    double predict(std::span<const double> x) const {
        if (members.empty()) throw ValidationError("mlp ensemble: no members");
        double s = 0.0;
        for (const MlpModel& m : members) s += m.predict(x);
        return s / static_cast<double>(members.size());
    }
};

// Trains `restarts` networks from different seeds and keeps the `keep` with
// the lowest early-stopping validation RMSE; prediction is the member mean.
inline MlpEnsemble train_ensemble(const features::SupervisedSet& set, int hidden,
                                  const MlpConfig& cfg, std::uint64_t seed, int restarts = 10,
                                  int keep = 5) {
    if (keep < 1 || restarts < keep)
        throw ConfigError("mlp ensemble: need restarts >= keep >= 1");
    if (cfg.validation_fraction <= 0.0)
        throw ConfigError("mlp ensemble: ranking restarts needs a validation split");
    std::vector<MlpModel> pool;
    pool.reserve(static_cast<std::size_t>(restarts));
    for (int r = 0; r < restarts; ++r)
        pool.push_back(fit(set, hidden, cfg, derive_seed(seed, 0x656e736d, static_cast<std::uint64_t>(r))));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pool[a].validation_rmse < pool[b].validation_rmse;
    });
    MlpEnsemble ens;
    for (int i = 0; i < keep; ++i) ens.members.push_back(std::move(pool[order[static_cast<std::size_t>(i)]]));
    return ens;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline json model_to_json(const MlpModel& m) {
    return json{{"input_dim", m.input_dim}, {"hidden", m.hidden},     {"w1", m.w1},
                {"b1", m.b1},               {"w2", m.w2},             {"b2", m.b2},
                {"validation_rmse", std::isfinite(m.validation_rmse) ? json(m.validation_rmse)
                                                                     : json()}};
}

inline MlpModel model_from_json(const json& j) {
    MlpModel m;
    m.input_dim = j.at("input_dim").get<int>();
    m.hidden = j.at("hidden").get<int>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<double>();
    if (!j.at("validation_rmse").is_null())
        m.validation_rmse = j.at("validation_rmse").get<double>();
    if (m.w1.size() != static_cast<std::size_t>(m.hidden) * static_cast<std::size_t>(m.input_dim) ||
        m.b1.size() != static_cast<std::size_t>(m.hidden) ||
        m.w2.size() != static_cast<std::size_t>(m.hidden))
        throw ValidationError("mlp: corrupt serialized model (shape mismatch)");
    return m;
}

inline json ensemble_to_json(const MlpEnsemble& e) {
    json members = json::array();
    for (const MlpModel& m : e.members) members.push_back(model_to_json(m));
    return json{{"members", members}};
}

inline MlpEnsemble ensemble_from_json(const json& j) {
    MlpEnsemble e;
    for (const auto& jm : j.at("members")) e.members.push_back(model_from_json(jm));
    if (e.members.empty()) throw ValidationError("mlp: serialized ensemble has no members");
    return e;
}

}  // namespace heliocast::mlp
