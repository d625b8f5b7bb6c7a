// Trained-model artifacts: a single JSON file carrying the learner, the
// exact feature layout it was trained on, normalization statistics when the
// inputs were normalized, and enough provenance (site, year, seed) to
// reproduce or audit a result. Loading verifies shape and version; applying
// an artifact to a mismatched feature layout is an error, not a warning.
#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "heliocast/core.hpp"
#include "heliocast/features.hpp"
#include "heliocast/gbt.hpp"
#include "heliocast/mlp.hpp"

namespace heliocast::model_io {

using nlohmann::json;

enum class ModelKind { Gbt, MlpEnsemble };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Gbt: return "gbt";
        case ModelKind::MlpEnsemble: return "mlp";
    }
    throw ConfigError("unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "gbt") return ModelKind::Gbt;
    if (s == "mlp") return ModelKind::MlpEnsemble;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline constexpr int kArtifactVersion = 1;

struct ModelArtifact {
    int version = kArtifactVersion;
    ModelKind kind = ModelKind::Gbt;
    std::string vector_kind;  // "instant" or "arima"
    std::string site;
    int train_year = 0;
    int tz_offset_minutes = 0;
    std::uint64_t seed = 0;
    std::vector<features::FeatureRef> layout;

    gbt::GbtModel gbt_model;
    mlp::MlpEnsemble mlp_ensemble;

    // Month-by-hour cells per variable; present only when features were
    // normalized at assembly time (the perceptron path).
    features::NormalizationStats normalization;

    json hyper;  // free-form provenance: tuned parameters, grids, sizes

    std::size_t input_dim() const { return layout.size(); }

    double predict_row(std::span<const double> x) const {
        if (x.size() != layout.size())
            throw ValidationError("artifact: feature vector has dimension " +
                                  std::to_string(x.size()) + ", layout expects " +
                                  std::to_string(layout.size()));
        return kind == ModelKind::Gbt ? gbt_model.predict(x) : mlp_ensemble.predict(x);
    }
};

// Throws when a supervised set was assembled with a different layout than
// the artifact was trained on.
inline void check_layout(const ModelArtifact& artifact, const features::SupervisedSet& set) {
    if (artifact.layout == set.layout) return;
    std::string msg = "feature layout mismatch: artifact expects [";
    for (std::size_t i = 0; i < std::min<std::size_t>(artifact.layout.size(), 4); ++i)
        msg += (i ? "," : "") + artifact.layout[i].label();
    msg += artifact.layout.size() > 4 ? ",...]" : "]";
    msg += " (" + std::to_string(artifact.layout.size()) + " columns), set has " +
           std::to_string(set.layout.size()) + " columns";
    throw ValidationError(msg);
}

inline json artifact_to_json(const ModelArtifact& a) {
    json j;
    j["format"] = "heliocast-model";
    j["version"] = a.version;
    j["kind"] = to_string(a.kind);
    j["vector_kind"] = a.vector_kind;
    j["site"] = a.site;
    j["train_year"] = a.train_year;
    j["tz_offset_minutes"] = a.tz_offset_minutes;
    j["seed"] = a.seed;
    json layout = json::array();
    for (const auto& f : a.layout) layout.push_back(f.label());
    j["feature_layout"] = std::move(layout);
    if (a.kind == ModelKind::Gbt)
        j["gbt"] = gbt::model_to_json(a.gbt_model);
    else
        j["mlp"] = mlp::ensemble_to_json(a.mlp_ensemble);
    if (!a.normalization.empty()) {
        json norm = json::object();
        for (const auto& [var, stats] : a.normalization)
            norm[heliocast::to_string(var)] = stats.to_json();
        j["normalization"] = std::move(norm);
    }
    if (!a.hyper.is_null()) j["hyper"] = a.hyper;
    return j;
}

inline ModelArtifact artifact_from_json(const json& j) {
    ModelArtifact a;
    try {
        if (j.value("format", "") != "heliocast-model")
            throw ValidationError("not a model artifact (missing format marker)");
        a.version = j.at("version").get<int>();
        if (a.version != kArtifactVersion)
            throw ValidationError("artifact version " + std::to_string(a.version) +
                                  " unsupported (expected " + std::to_string(kArtifactVersion) +
                                  ")");
        a.kind = model_kind_from_string(j.at("kind").get<std::string>());
        a.vector_kind = j.at("vector_kind").get<std::string>();
        a.site = j.at("site").get<std::string>();
        a.train_year = j.at("train_year").get<int>();
        a.tz_offset_minutes = j.value("tz_offset_minutes", 0);
        a.seed = j.value("seed", 0ULL);
        for (const auto& lbl : j.at("feature_layout"))
            a.layout.push_back(features::feature_ref_from_label(lbl.get<std::string>()));
        if (a.kind == ModelKind::Gbt) {
            a.gbt_model = gbt::model_from_json(j.at("gbt"));
            if (a.gbt_model.input_dim != a.layout.size())
                throw ValidationError("artifact: learner dimension disagrees with layout");
        } else {
            a.mlp_ensemble = mlp::ensemble_from_json(j.at("mlp"));
            for (const auto& m : a.mlp_ensemble.members)
                if (static_cast<std::size_t>(m.input_dim) != a.layout.size())
                    throw ValidationError("artifact: learner dimension disagrees with layout");
        }
        if (j.contains("normalization")) {
            for (auto it = j["normalization"].begin(); it != j["normalization"].end(); ++it)
                a.normalization[variable_from_string(it.key())] =
                    features::MonthlyHourlyStats::from_json(it.value());
        }
        if (j.contains("hyper")) a.hyper = j["hyper"];
    } catch (const json::exception& e) {
        throw ValidationError(std::string("corrupt model artifact: ") + e.what());
    }
    return a;
}

inline void save_model(const ModelArtifact& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model artifact '" + path + "'");
    out << artifact_to_json(a).dump(1) << '\n';
    out.close();
    if (!out) throw DataError("failed writing model artifact '" + path + "'");
}

inline ModelArtifact load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model artifact '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("corrupt model artifact '" + path + "': " + e.what());
    }
    return artifact_from_json(j);
}

}  // namespace heliocast::model_io
