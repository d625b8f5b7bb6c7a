// Library-level walkthrough: generate a synthetic site, derive the
// direct-fraction series, assemble hour-ahead training vectors and fit a
// small boosted-tree model, then score it on the most recent days.
#include <iostream>

#include "heliocast/heliocast.hpp"

using namespace heliocast;

int main() {
    synth::SynthConfig gen;
    gen.n_sites = 1;
    gen.days = 40;
    gen.seed = 7;
    SiteDataset site = synth::generate(gen).front();

    solar::SunTimes sun = solar::SunTimes::computed(
        site.latitude, site.longitude, site.tz_offset_minutes,
        to_civil(site.start(), site.tz_offset_minutes).date,
        to_civil(site.end(), site.tz_offset_minutes).date);

    site = features::decompose_wind(site);
    features::KbSeries kb = features::compute_kb_series(site, sun);
    site.add_series(features::mask_nocturnal(kb.kb, sun, {.sigma = 0.01, .seed = 1}));

    features::AssembleOptions opts;
    opts.vector_kind = "instant";
    features::SupervisedSet set =
        features::assemble(site, features::instant_layout(), opts);
    set = eval::filter_nocturnal_targets(set, sun);

    // Last quarter of the rows held out for scoring.
    std::size_t cut = set.n_rows() - set.n_rows() / 4;
    features::SupervisedSet train, test;
    train.layout = test.layout = set.layout;
    train.vector_kind = test.vector_kind = set.vector_kind;
    for (std::size_t i = 0; i < set.n_rows(); ++i) {
        auto& dst = i < cut ? train : test;
        auto row = set.row(i);
        dst.x.insert(dst.x.end(), row.begin(), row.end());
        dst.y.push_back(set.y[i]);
        dst.target_ts.push_back(set.target_ts[i]);
    }

    gbt::GbtParams params;
    params.eta = 0.1;
    params.max_depth = 4;
    params.n_rounds = 80;
    gbt::GbtModel model = gbt::fit(train, params, /*seed=*/3);

    eval::Score score = eval::score_set(
        test, [&](std::span<const double> x) { return model.predict(x); });
    std::cout << "rows train/test: " << train.n_rows() << "/" << test.n_rows() << "\n"
              << "hour-ahead direct-fraction RMSE: " << score.rmse << "\n"
              << "MAE: " << score.mae << "\n";
    return 0;
}
