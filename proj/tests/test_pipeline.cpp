#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kpdistill/pipeline.hpp"

using namespace kpd;
namespace fs = std::filesystem;

namespace {

// Small world and short trainings keep the CLI tests quick.
nlohmann::json tiny_config(const std::string& out_dir) {
    nlohmann::json j;
    j["seed"] = 7;
    j["output_dir"] = out_dir;
    j["world"] = {{"n_topics", 4},     {"n_items", 40},          {"n_keyphrases", 80},
                  {"vocab_size", 128}, {"title_len_range", {3, 6}}};
    j["logs"] = {{"n_impressions", 60000}};
    j["labels"] = {{"n_pairs", 1500}};
    j["encoders"] = {{"bi_hidden", 8}, {"bi_dim", 32}, {"cross_hidden", 16}};
    j["trainer"] = {{"batch_size", 16}, {"epochs_bi", 2}, {"epochs_cross", 2}};
    j["losses"] = {{"matryoshka", {{"dims", {8, 32}}}}};
    j["retrieval"] = {{"k", 10}, {"dim_prefix", 8}};
    j["evaluation"] = {{"item_sample_size", 20}, {"n_eval_pairs", 600},
                       {"judge_sample_size", 500}};
    j["ablate_combos"] = {{"CTR"}, {"LLM", "CTR", "KD"}};
    return j;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "kpd_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(KPD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

void write_config(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2);
}

}  // namespace

TEST_CASE("config validation rejects unknown keys with exit 2") {
    const fs::path dir = fresh_dir("badcfg");
    nlohmann::json j = tiny_config((dir / "out").string());
    j["world"]["n_itemz"] = 10;  // typo
    write_config(dir / "config.json", j);
    REQUIRE(run_cli("--config " + (dir / "config.json").string() + " gen") == 2);
}

TEST_CASE("missing config file exits 3") {
    REQUIRE(run_cli("--config /nonexistent/config.json gen") == 3);
}

TEST_CASE("eval before training exits 3 naming the missing artifact") {
    const fs::path dir = fresh_dir("missing");
    write_config(dir / "config.json", tiny_config((dir / "out").string()));
    const std::string cmd = std::string(KPD_CLI_PATH) + " --config " +
                            (dir / "config.json").string() + " eval 2>" +
                            (dir / "err.txt").string();
    const int status = WEXITSTATUS(std::system(cmd.c_str()));
    REQUIRE(status == 3);
    std::ifstream err(dir / "err.txt");
    std::string line;
    std::getline(err, line);
    REQUIRE(line.find("missing-artifact") != std::string::npos);
    REQUIRE(line.find("world.json") != std::string::npos);
}

TEST_CASE("gen is deterministic and idempotent") {
    const fs::path dir = fresh_dir("gen_det");
    write_config(dir / "config.json", tiny_config((dir / "out").string()));
    REQUIRE(run_cli("--config " + (dir / "config.json").string() + " gen") == 0);
    const auto first = file_checksum(dir / "out" / "world.json");
    const auto first_ctr = file_checksum(dir / "out" / "ctr.jsonl");
    // second run is a checksum no-op, artifacts unchanged
    REQUIRE(run_cli("--config " + (dir / "config.json").string() + " gen") == 0);
    REQUIRE(file_checksum(dir / "out" / "world.json") == first);
    REQUIRE(file_checksum(dir / "out" / "ctr.jsonl") == first_ctr);
    // a fresh directory reproduces identical bytes
    const fs::path dir2 = fresh_dir("gen_det2");
    nlohmann::json j2 = tiny_config((dir2 / "out").string());
    write_config(dir2 / "config.json", j2);
    REQUIRE(run_cli("--config " + (dir2 / "config.json").string() + " gen") == 0);
    REQUIRE(file_checksum(dir2 / "out" / "world.json") == first);
}

TEST_CASE("full pipeline runs through report and ablate output is ordered") {
    const fs::path dir = fresh_dir("full_run");
    write_config(dir / "config.json", tiny_config((dir / "out").string()));
    const std::string base = "--config " + (dir / "config.json").string() + " ";
    for (const std::string stage :
         {"gen", "train-cross", "kd-score", "train-bi", "index", "eval", "ablate", "report"})
        REQUIRE(run_cli(base + stage) == 0);
    for (const std::string name :
         {"world.json", "ctr.jsonl", "sr.jsonl", "llm.jsonl", "cross.bin", "kd.jsonl",
          "kd_distribution.json", "bi.bin", "bi_history.jsonl", "index.bin",
          "eval_report.json", "retrievals.jsonl", "other_recall.jsonl", "ablate_report.json",
          "ablate_report.md", "report.md"})
        REQUIRE(fs::exists(dir / "out" / name));
    // per-epoch checkpoints written by train-bi
    REQUIRE(fs::exists(dir / "out" / "checkpoints" / "bi_epoch_0.bin"));
    // rows ordered by median desc then pass rate desc
    const auto rows = nlohmann::json::parse(read_file(dir / "out" / "ablate_report.json"));
    REQUIRE(rows.size() == 2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double prev = rows[i - 1].at("median_kw_cnt").get<double>();
        const double cur = rows[i].at("median_kw_cnt").get<double>();
        REQUIRE(prev >= cur);
    }
    // every stage leaves a manifest
    for (const std::string m : {"gen", "train-cross", "kd-score", "train-bi", "index", "eval",
                                "ablate", "report"})
        REQUIRE(fs::exists(dir / "out" / (m + ".manifest.json")));
}

TEST_CASE("ablate reruns byte-identically in fresh directories") {
    const fs::path dir1 = fresh_dir("ablate_a");
    const fs::path dir2 = fresh_dir("ablate_b");
    for (const fs::path& dir : {dir1, dir2}) {
        write_config(dir / "config.json", tiny_config((dir / "out").string()));
        const std::string base = "--config " + (dir / "config.json").string() + " ";
        for (const std::string stage : {"gen", "train-cross", "kd-score", "ablate"})
            REQUIRE(run_cli(base + stage) == 0);
    }
    REQUIRE(read_file(dir1 / "out" / "ablate_report.json") ==
            read_file(dir2 / "out" / "ablate_report.json"));
    REQUIRE(read_file(dir1 / "out" / "ablate_report.md") ==
            read_file(dir2 / "out" / "ablate_report.md"));
}

TEST_CASE("seed override changes the generated world") {
    const fs::path dir = fresh_dir("seed_override");
    write_config(dir / "config.json", tiny_config((dir / "out").string()));
    const std::string base = "--config " + (dir / "config.json").string() + " ";
    REQUIRE(run_cli(base + "gen") == 0);
    const auto first = file_checksum(dir / "out" / "world.json");
    const fs::path dir2 = fresh_dir("seed_override2");
    write_config(dir2 / "config.json", tiny_config((dir2 / "out").string()));
    REQUIRE(run_cli("--config " + (dir2 / "config.json").string() + " --seed 99 gen") == 0);
    REQUIRE(file_checksum(dir2 / "out" / "world.json") != first);
}

TEST_CASE("pipeline config parses defaults from an empty document") {
    const PipelineConfig cfg = parse_pipeline_config(nlohmann::json::object());
    REQUIRE(cfg.world.n_items == 200);
    REQUIRE(cfg.world.vocab_size == 256);
    REQUIRE(cfg.encoders.bi_hidden == 16);
    REQUIRE(cfg.trainer_bi.epochs == 12);
    REQUIRE(cfg.trainer_cross.epochs == 8);
    REQUIRE(cfg.ablate_combos.size() == 8);
    REQUIRE(cfg.trainer_bi.task_map.at(LabelSource::Kd) == LossId::Pearson);
}

TEST_CASE("pipeline config validation failures carry the config error kind") {
    nlohmann::json j;
    j["retrieval"] = {{"dim_prefix", 4096}};
    try {
        parse_pipeline_config(j);
        FAIL();
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::Config);
    }
    nlohmann::json j2;
    j2["trainer"] = {{"task_map", {{"KD", "ndcg"}}}};
    REQUIRE_THROWS_AS(parse_pipeline_config(j2), Error);
}
