// Command line driver for the keyphrase-retrieval distillation pipeline.
// Stages write artifacts plus a manifest into the output directory; re-running
// a stage with unchanged inputs is a checksum-verified no-op.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "kpdistill/kpdistill.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;

int exit_code_for(const kpd::Error& e) {
    switch (e.kind()) {
        case kpd::ErrorKind::Config: return kExitConfig;
        case kpd::ErrorKind::MissingArtifact: return kExitMissingArtifact;
        default: return 1;
    }
}

nlohmann::json load_raw_config(const std::string& path) {
    std::ifstream in(path);
    kpd::require(in.good(), kpd::ErrorKind::MissingArtifact, "config file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        kpd::throw_error(kpd::ErrorKind::Config, "config parse error: " + std::string(e.what()));
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-step distillation pipeline for advertiser keyphrase retrieval"};
    app.require_subcommand(1);

    std::string config_path = "config.json";
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
    app.add_option("--config", config_path, "pipeline config file (json)");
    app.add_option("--out", out_override, "override the configured output directory");
    app.add_option_function<std::uint64_t>(
           "--seed",
           [&](std::uint64_t v) {
               seed_override = v;
               has_seed_override = true;
           },
           "override the configured master seed");

    const std::vector<std::string> stages = {"gen",   "train-cross", "kd-score", "train-bi",
                                             "index", "eval",        "ablate",   "report"};
    for (const auto& name : stages) app.add_subcommand(name);
    auto* run_all = app.add_subcommand("run", "run every stage in order");

    CLI11_PARSE(app, argc, argv);

    try {
        nlohmann::json raw = load_raw_config(config_path);
        if (has_seed_override) raw["seed"] = seed_override;
        if (!out_override.empty()) raw["output_dir"] = out_override;
        kpd::PipelineConfig cfg = kpd::parse_pipeline_config(raw);
        kpd::Pipeline pipeline(cfg, raw);

        auto dispatch = [&](const std::string& stage) {
            bool ran = true;
            if (stage == "gen") ran = pipeline.gen();
            else if (stage == "train-cross") ran = pipeline.train_cross_stage();
            else if (stage == "kd-score") ran = pipeline.kd_score_stage();
            else if (stage == "train-bi") ran = pipeline.train_bi_stage();
            else if (stage == "index") ran = pipeline.index_stage();
            else if (stage == "eval") ran = pipeline.eval_stage();
            else if (stage == "ablate") ran = pipeline.ablate_stage();
            else if (stage == "report") ran = pipeline.report_stage();
            std::cout << stage << (ran ? ": done" : ": up to date, skipped") << "\n";
        };

        if (run_all->parsed()) {
            for (const auto& stage : stages) dispatch(stage);
        } else {
            for (const auto& name : stages)
                if (app.get_subcommand(name)->parsed()) dispatch(name);
        }
        return 0;
    } catch (const kpd::Error& e) {
        std::cerr << "error: " << kpd::error_kind_name(e.kind()) << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}
