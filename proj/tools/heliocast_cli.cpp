// Command-line front end for the forecasting pipeline. Every subcommand
// reads one JSON config, applies the few runtime overrides, writes the
// materialized config next to its outputs and runs one stage. Outputs carry
// no timestamps, so rerunning a command with unchanged inputs reproduces
// every file byte for byte.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 data error,
// 3 training error. Failures print one machine-readable JSON line to stderr.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "heliocast/heliocast.hpp"

namespace {

using nlohmann::json;
namespace hc = heliocast;

struct CommonArgs {
    std::string config_path;
    std::string site;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_site) {
    cmd->add_option("-c,--config", args.config_path, "pipeline config JSON")->required();
    cmd->add_option("-o,--out", args.out_dir, "override the configured output directory");
    cmd->add_option("--seed", args.seed, "override the configured root seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    if (with_site)
        cmd->add_option("-s,--site", args.site, "restrict the stage to one configured site");
}

hc::pipeline::PipelineConfig load_with_overrides(const CommonArgs& args) {
    hc::pipeline::PipelineConfig cfg = hc::pipeline::load_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.seed_set) cfg.seed = args.seed;
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream mat(std::filesystem::path(cfg.out_dir) / "config.materialized.json");
    mat << hc::pipeline::config_to_json(cfg).dump(2) << '\n';
    return cfg;
}

void emit_error(const std::string& type, int code, const std::string& message) {
    json j = {{"error", {{"type", type}, {"exit_code", code}, {"message", message}}}};
    std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hour-ahead direct-fraction forecasting pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string stage;
    auto stage_cmd = [&](const char* name, const char* help, bool with_site) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, args, with_site);
        cmd->callback([&stage, name] { stage = name; });
        return cmd;
    };
    stage_cmd("synth", "generate synthetic raw site CSVs", false);
    stage_cmd("clean", "parse, repair and cache the configured site CSVs", true);
    stage_cmd("select-lags", "resolve or estimate the lag specification", false);
    stage_cmd("train", "fit the configured models per site", true);
    stage_cmd("evaluate", "score trained models on the held-out year", false);
    stage_cmd("cross-eval", "score every site's models on every other site", false);
    stage_cmd("report", "collate evaluation outputs into summary tables", false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit_error("usage", 1, e.what());
        return 1;
    }

    try {
        hc::pipeline::PipelineConfig cfg = load_with_overrides(args);
        json out;
        out["stage"] = stage;
        if (stage == "synth") {
            auto r = hc::pipeline::run_synth(cfg);
            out["csv_paths"] = r.csv_paths;
            out["manifest"] = r.manifest_path;
        } else if (stage == "clean") {
            auto r = hc::pipeline::run_clean(cfg, args.site);
            json sites = json::array();
            for (const auto& s : r.sites)
                sites.push_back({{"site", s.site},
                                 {"rows", s.rows},
                                 {"absent_rows", s.absent_rows},
                                 {"suspicious_kb", s.suspicious_kb},
                                 {"excluded_minutes", s.excluded_minutes},
                                 {"warnings", s.warnings.size()}});
            out["sites"] = sites;
        } else if (stage == "select-lags") {
            auto r = hc::pipeline::run_select_lags(cfg);
            out["lag_spec"] = r.spec_path;
            out["dimension"] = hc::features::lag_spec_dimension(r.spec);
        } else if (stage == "train") {
            auto r = hc::pipeline::run_train(cfg, args.site);
            out["artifacts"] = r.artifact_paths;
            out["mlp_hidden"] = r.mlp_sizes;
        } else if (stage == "evaluate") {
            auto r = hc::pipeline::run_evaluate(cfg);
            out["report"] = r.report_json_path;
            json rows = json::array();
            for (const auto& row : r.rows)
                rows.push_back({{"site", row.test_site},
                                {"vector_kind", row.vector_kind},
                                {"model_kind", row.model_kind},
                                {"rmse", row.score.rmse},
                                {"mae", row.score.mae},
                                {"n", row.score.n}});
            out["scores"] = rows;
        } else if (stage == "cross-eval") {
            auto r = hc::pipeline::run_cross_eval(cfg);
            json ms = json::array();
            for (const auto& m : r.matrices)
                ms.push_back({{"model_kind", m.model_kind},
                              {"vector_kind", m.vector_kind},
                              {"sites", m.sites}});
            out["matrices"] = ms;
        } else if (stage == "report") {
            auto r = hc::pipeline::run_report(cfg);
            out["summary"] = r.summary_path;
        }
        std::cout << out.dump(2) << std::endl;
        return 0;
    } catch (const hc::TrainingError& e) {
        emit_error("training", 3, e.what());
        return 3;
    } catch (const hc::DataError& e) {
        emit_error("data", 2, e.what());
        return 2;
    } catch (const hc::ConfigError& e) {
        emit_error("config", 1, e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error("internal", 1, e.what());
        return 1;
    }
}
