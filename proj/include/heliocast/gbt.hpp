// Gradient-boosted regression trees with squared loss: second-order leaf
// weights, gain-gated greedy splits on presorted columns, optional row
// subsampling, and a small time-blocked cross-validation tuner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/features.hpp"
#include "heliocast/stats.hpp"

namespace heliocast::gbt {

using nlohmann::json;

struct GbtParams {
    double eta = 0.1;             // shrinkage on leaf weights
    int max_depth = 6;
    double gamma = 0.0;           // minimum gain to accept a split
    int n_rounds = 100;
    double min_child_weight = 1.0;  // minimum hessian mass per child
    double subsample = 1.0;         // row fraction grown on per round
    double lambda = 1.0;            // L2 on leaf weights

    void validate() const {
        if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("gbt: eta must be in (0, 1]");
        if (max_depth < 1) throw ConfigError("gbt: max_depth must be >= 1");
        if (!(gamma >= 0.0)) throw ConfigError("gbt: gamma must be >= 0");
        if (n_rounds < 0) throw ConfigError("gbt: n_rounds must be >= 0");
        if (!(min_child_weight >= 0.0)) throw ConfigError("gbt: min_child_weight must be >= 0");
        if (!(subsample > 0.0 && subsample <= 1.0))
            throw ConfigError("gbt: subsample must be in (0, 1]");
        if (!(lambda >= 0.0)) throw ConfigError("gbt: lambda must be >= 0");
    }

    bool operator==(const GbtParams&) const = default;

    json to_json() const {
        return json{{"eta", eta},
                    {"max_depth", max_depth},
                    {"gamma", gamma},
                    {"n_rounds", n_rounds},
                    {"min_child_weight", min_child_weight},
                    {"subsample", subsample},
                    {"lambda", lambda}};
    }
    static GbtParams from_json(const json& j) {
        GbtParams p;
        p.eta = j.value("eta", p.eta);
        p.max_depth = j.value("max_depth", p.max_depth);
        p.gamma = j.value("gamma", p.gamma);
        p.n_rounds = j.value("n_rounds", p.n_rounds);
        p.min_child_weight = j.value("min_child_weight", p.min_child_weight);
        p.subsample = j.value("subsample", p.subsample);
        p.lambda = j.value("lambda", p.lambda);
        p.validate();
        return p;
    }
};

// Nodes index into the tree's own array; feature < 0 marks a leaf whose
// stored value already includes the learning-rate shrinkage.
struct GbtNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    bool is_leaf() const { return feature < 0; }
};

struct GbtTree {
    std::vector<GbtNode> nodes;

    double predict(std::span<const double> x) const {
        int i = 0;
        while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
            const GbtNode& nd = nodes[static_cast<std::size_t>(i)];
            i = x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(i)].value;
    }
};

struct GbtModel {
    GbtParams params;
    std::size_t input_dim = 0;
    double base_score = 0.0;
    std::vector<GbtTree> trees;
    std::vector<double> train_loss;  // mean squared error after each round, [0] = base only
    std::uint64_t seed = 0;

    double predict(std::span<const double> x) const {
        if (x.size() != input_dim)
            throw ValidationError("gbt: feature vector has dimension " +
                                  std::to_string(x.size()) + ", model expects " +
                                  std::to_string(input_dim));
        double s = base_score;
        for (const GbtTree& t : trees) s += t.predict(x);
        return s;
    }
};

namespace detail {

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
    bool found = false;
};

}  // namespace detail

// Fits the boosting ensemble on row-major features. Deterministic for a
// fixed (data, params, seed) triple: column scans use index-stable sorts and
// subsampling draws are keyed by (seed, round, row).
inline GbtModel fit(std::span<const double> x, std::span<const double> y, std::size_t dim,
                    const GbtParams& params, std::uint64_t seed = 0) {
    params.validate();
    if (dim == 0) throw ConfigError("gbt: zero feature dimension");
    const std::size_t n = y.size();
    if (n == 0) throw TrainingError("gbt: empty training set");
    if (x.size() != n * dim) throw ValidationError("gbt: feature matrix shape mismatch");

    GbtModel model;
    model.params = params;
    model.input_dim = dim;
    model.seed = seed;
    model.base_score = stats::mean(y);

    std::vector<double> pred(n, model.base_score);
    auto mse = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double e = pred[i] - y[i];
            s += e * e;
        }
        return s / static_cast<double>(n);
    };
    model.train_loss.push_back(mse());

    bool constant_target = true;
    for (std::size_t i = 1; i < n; ++i)
        if (y[i] != y[0]) {
            constant_target = false;
            break;
        }
    if (constant_target || params.n_rounds == 0) return model;

    // Presorted row indices per feature, shared across rounds.
    std::vector<std::vector<std::uint32_t>> order(dim);
    for (std::size_t f = 0; f < dim; ++f) {
        auto& idx = order[f];
        idx.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
        std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
            double va = x[a * dim + f], vb = x[b * dim + f];
            if (va != vb) return va < vb;
            return a < b;
        });
    }

    std::vector<std::int32_t> leaf_of(n);
    std::vector<double> grad(n);

    for (int round = 0; round < params.n_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - y[i];  // hessian is 1

        const std::uint64_t round_seed = derive_seed(seed, 0x67627472, static_cast<std::uint64_t>(round));
        std::vector<std::uint8_t> in_sample(n, 1);
        if (params.subsample < 1.0) {
            std::size_t kept = 0;
            for (std::size_t i = 0; i < n; ++i) {
                in_sample[i] = counter_uniform(round_seed, i) < params.subsample ? 1 : 0;
                kept += in_sample[i];
            }
            if (kept == 0) in_sample.assign(n, 1);  // degenerate draw; train on everything
        }

        GbtTree tree;
        tree.nodes.push_back(GbtNode{});
        double g0 = 0.0, h0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (in_sample[i]) {
                leaf_of[i] = 0;
                g0 += grad[i];
                h0 += 1.0;
            } else {
                leaf_of[i] = -1;
            }
        }
        std::vector<int> active = {0};
        std::vector<double> leaf_g = {g0}, leaf_h = {h0};

        for (int depth = 0; depth < params.max_depth && !active.empty(); ++depth) {
            const std::size_t n_leaves = tree.nodes.size();
            std::vector<detail::SplitCandidate> best(n_leaves);
            std::vector<double> run_g(n_leaves), run_h(n_leaves), last_val(n_leaves);
            std::vector<std::uint8_t> seen(n_leaves);

            for (std::size_t f = 0; f < dim; ++f) {
                for (int leaf : active) {
                    auto l = static_cast<std::size_t>(leaf);
                    run_g[l] = 0.0;
                    run_h[l] = 0.0;
                    seen[l] = 0;
                }
                for (std::uint32_t row : order[f]) {
                    std::int32_t leaf = leaf_of[row];
                    if (leaf < 0) continue;
                    auto l = static_cast<std::size_t>(leaf);
                    const double v = x[row * dim + f];
                    if (seen[l] && v > last_val[l] && run_h[l] >= params.min_child_weight) {
                        const double gl = run_g[l], hl = run_h[l];
                        const double gr = leaf_g[l] - gl, hr = leaf_h[l] - hl;
                        if (hr >= params.min_child_weight) {
                            const double gain =
                                0.5 * (gl * gl / (hl + params.lambda) +
                                       gr * gr / (hr + params.lambda) -
                                       leaf_g[l] * leaf_g[l] / (leaf_h[l] + params.lambda));
                            if (gain > params.gamma &&
                                (!best[l].found || gain > best[l].gain)) {
                                best[l] = detail::SplitCandidate{
                                    gain, static_cast<int>(f), 0.5 * (last_val[l] + v), true};
                            }
                        }
                    }
                    run_g[l] += grad[row];
                    run_h[l] += 1.0;
                    last_val[l] = v;
                    seen[l] = 1;
                }
            }

            std::vector<int> next_active;
            bool any_split = false;
            for (int leaf : active) {
                auto l = static_cast<std::size_t>(leaf);
                if (!best[l].found) continue;
                any_split = true;
                GbtNode& nd = tree.nodes[l];
                nd.feature = best[l].feature;
                nd.threshold = best[l].threshold;
                nd.left = static_cast<int>(tree.nodes.size());
                nd.right = nd.left + 1;
                tree.nodes.push_back(GbtNode{});
                tree.nodes.push_back(GbtNode{});
                next_active.push_back(nd.left);
                next_active.push_back(nd.right);
            }
            if (!any_split) break;

            leaf_g.assign(tree.nodes.size(), 0.0);
            leaf_h.assign(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                std::int32_t leaf = leaf_of[i];
                if (leaf < 0) continue;
                const GbtNode& nd = tree.nodes[static_cast<std::size_t>(leaf)];
                if (!nd.is_leaf()) {
                    leaf_of[i] = x[i * dim + static_cast<std::size_t>(nd.feature)] < nd.threshold
                                     ? nd.left
                                     : nd.right;
                }
                auto l = static_cast<std::size_t>(leaf_of[i]);
                leaf_g[l] += grad[i];
                leaf_h[l] += 1.0;
            }
            active = std::move(next_active);
        }

        for (std::size_t l = 0; l < tree.nodes.size(); ++l) {
            GbtNode& nd = tree.nodes[l];
            if (nd.is_leaf())
                nd.value = -params.eta * leaf_g[l] / (leaf_h[l] + params.lambda);
        }

        for (std::size_t i = 0; i < n; ++i)
            pred[i] += tree.predict(std::span<const double>(&x[i * dim], dim));
        model.trees.push_back(std::move(tree));
        model.train_loss.push_back(mse());
    }
    return model;
}

inline GbtModel fit(const features::SupervisedSet& set, const GbtParams& params,
                    std::uint64_t seed = 0) {
    return fit(set.x, set.y, set.dim(), params, seed);
}

// ---------------------------------------------------------------------------
// Hyperparameter tuning on contiguous time blocks.
// ---------------------------------------------------------------------------

// [begin, end) row blocks splitting n rows as evenly as possible.
inline std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n,
                                                                         int folds) {
    if (folds < 2) throw ConfigError("contiguous_folds: need at least 2 folds");
    if (n < static_cast<std::size_t>(folds))
        throw DataError("contiguous_folds: fewer rows than folds");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t begin = 0;
    for (int f = 0; f < folds; ++f) {
        std::size_t size = n / static_cast<std::size_t>(folds) +
                           (static_cast<std::size_t>(f) < n % static_cast<std::size_t>(folds) ? 1 : 0);
        out.emplace_back(begin, begin + size);
        begin += size;
    }
    return out;
}

inline std::vector<GbtParams> default_grid() {
    std::vector<GbtParams> grid;
    for (double eta : {0.05, 0.1, 0.3})
        for (int depth : {3, 6, 9})
            for (double gamma : {0.0, 1.0})
                for (int rounds : {100, 300}) {
                    GbtParams p;
                    p.eta = eta;
                    p.max_depth = depth;
                    p.gamma = gamma;
                    p.n_rounds = rounds;
                    grid.push_back(p);
                }
    return grid;
}

struct TuneResult {
    GbtParams best;
    std::vector<double> cv_rmse;  // aligned with the grid
};

// Grid search scored by mean RMSE over contiguous time-block folds (rows are
// ordered by target time, so blocks are time ranges). Ties keep the earliest
// grid entry. The caller refits on the full training set with the winner.
inline TuneResult tune(const features::SupervisedSet& set, const std::vector<GbtParams>& grid,
                       int folds = 3, std::uint64_t seed = 0) {
    if (grid.empty()) throw ConfigError("gbt tune: empty grid");
    const std::size_t n = set.n_rows();
    auto blocks = contiguous_folds(n, folds);
    const std::size_t dim = set.dim();

    TuneResult result;
    result.cv_rmse.assign(grid.size(), 0.0);
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        grid[g].validate();
        double total = 0.0;
        for (std::size_t f = 0; f < blocks.size(); ++f) {
            auto [hb, he] = blocks[f];
            std::vector<double> xt, yt;
            xt.reserve((n - (he - hb)) * dim);
            for (std::size_t i = 0; i < n; ++i) {
                if (i >= hb && i < he) continue;
                const auto row = set.row(i);
                xt.insert(xt.end(), row.begin(), row.end());
                yt.push_back(set.y[i]);
            }
            GbtModel m = fit(xt, yt, dim, grid[g], derive_seed(seed, 0x74756e65, f));
            double se = 0.0;
            for (std::size_t i = hb; i < he; ++i) {
                double e = m.predict(set.row(i)) - set.y[i];
                se += e * e;
            }
            total += std::sqrt(se / static_cast<double>(he - hb));
        }
        result.cv_rmse[g] = total / static_cast<double>(blocks.size());
        if (result.cv_rmse[g] < best_score) {
            best_score = result.cv_rmse[g];
            result.best = grid[g];
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialization.
// ---------------------------------------------------------------------------

inline json model_to_json(const GbtModel& m) {
    json trees = json::array();
    for (const GbtTree& t : m.trees) {
        json nodes = json::array();
        for (const GbtNode& nd : t.nodes)
            nodes.push_back({{"f", nd.feature},
                             {"t", nd.threshold},
                             {"l", nd.left},
                             {"r", nd.right},
                             {"v", nd.value}});
        trees.push_back(std::move(nodes));
    }
    return json{{"params", m.params.to_json()},
                {"input_dim", m.input_dim},
                {"base_score", m.base_score},
                {"seed", m.seed},
                {"train_loss", m.train_loss},
                {"trees", trees}};
}

inline GbtModel model_from_json(const json& j) {
    GbtModel m;
    m.params = GbtParams::from_json(j.at("params"));
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.base_score = j.at("base_score").get<double>();
    m.seed = j.value("seed", 0ULL);
    m.train_loss = j.value("train_loss", std::vector<double>{});
    for (const auto& jt : j.at("trees")) {
        GbtTree t;
        for (const auto& jn : jt)
            t.nodes.push_back(GbtNode{jn.at("f").get<int>(), jn.at("t").get<double>(),
                                      jn.at("l").get<int>(), jn.at("r").get<int>(),
                                      jn.at("v").get<double>()});
        m.trees.push_back(std::move(t));
    }
    return m;
}

}  // namespace heliocast::gbt
