#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/distillation.hpp"
#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/evaluation.hpp"
#include "kpdistill/retrieval.hpp"
#include "kpdistill/synthworld.hpp"
#include "kpdistill/trainer.hpp"

namespace kpd {

namespace fs = std::filesystem;

// --- pipeline configuration ---------------------------------------------------

struct EncoderConfig {
    std::size_t bi_hidden = 16;
    std::size_t bi_dim = 256;
    std::size_t cross_hidden = 64;
};

struct LabelConfig {
    std::size_t n_pairs = 16000;      // shared SR/LLM labeling pool
    double sr_threshold = 0.5;
    double judge_noise_rate = 0.1;
};

struct RetrievalConfig {
    std::size_t k = 20;
    std::size_t dim_prefix = 64;
};

struct EvaluationConfig {
    // The assistant is deliberately stopped before its scores saturate, so its
    // operating band sits below 0.5; the filter cut matches that band.
    double filter_threshold = 0.3;
    std::size_t item_sample_size = 100;
    std::size_t judge_sample_size = 10000;
    std::size_t n_eval_pairs = 4000;  // held-out pairs for classification metrics
    std::size_t other_recall_top = 5;
    std::string other_recall_path;  // optional jsonl override
    double threshold_grid_step = 0.01;
};

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::string output_dir = "out";
    WorldConfig world;
    LogSimConfig logs;
    LabelConfig labels;
    EncoderConfig encoders;
    TrainConfig trainer_bi;
    TrainConfig trainer_cross;
    RetrievalConfig retrieval;
    EvaluationConfig evaluation;
    std::vector<std::vector<LabelSource>> ablate_combos = {
        {LabelSource::Llm},
        {LabelSource::Kd},
        {LabelSource::Sr, LabelSource::Kd},
        {LabelSource::Llm, LabelSource::Kd},
        {LabelSource::Llm, LabelSource::Ctr, LabelSource::Kd},
        {LabelSource::Llm, LabelSource::Sr, LabelSource::Kd},
        {LabelSource::Llm, LabelSource::Sr, LabelSource::Ctr, LabelSource::Kd},
        {LabelSource::Ctr},
    };

    PipelineConfig() {
        trainer_bi.batch_size = 64;
        trainer_bi.epochs = 12;
        trainer_bi.optimizer.learning_rate = 3e-3;
        trainer_cross = trainer_bi;
        trainer_cross.epochs = 8;
        trainer_cross.optimizer.learning_rate = 1e-2;
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        require(allowed.count(it.key()) > 0, ErrorKind::Config,
                "unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read_into(const nlohmann::json& obj, const char* key, T& slot) {
    if (obj.contains(key)) slot = obj.at(key).get<T>();
}

}  // namespace detail

// Parse and schema-validate the pipeline config. Unknown keys anywhere are
// rejected before any work happens.
inline PipelineConfig parse_pipeline_config(const nlohmann::json& j) {
    PipelineConfig cfg;
    detail::reject_unknown_keys(
        j,
        {"seed", "output_dir", "world", "logs", "labels", "encoders", "trainer", "losses",
         "retrieval", "evaluation", "ablate_combos"},
        "config root");
    detail::read_into(j, "seed", cfg.seed);
    detail::read_into(j, "output_dir", cfg.output_dir);

    if (j.contains("world")) {
        const auto& w = j.at("world");
        detail::reject_unknown_keys(w,
                                    {"n_topics", "n_items", "n_keyphrases", "vocab_size",
                                     "title_len_range", "relevance_threshold", "sr_gain",
                                     "sr_noise_sd"},
                                    "world");
        detail::read_into(w, "n_topics", cfg.world.n_topics);
        detail::read_into(w, "n_items", cfg.world.n_items);
        detail::read_into(w, "n_keyphrases", cfg.world.n_keyphrases);
        detail::read_into(w, "vocab_size", cfg.world.vocab_size);
        if (w.contains("title_len_range")) {
            const auto range = w.at("title_len_range").get<std::vector<std::size_t>>();
            require(range.size() == 2, ErrorKind::Config,
                    "world.title_len_range must be [min, max]");
            cfg.world.title_len_min = range[0];
            cfg.world.title_len_max = range[1];
        }
        detail::read_into(w, "relevance_threshold", cfg.world.relevance_threshold);
        detail::read_into(w, "sr_gain", cfg.world.sr_gain);
        detail::read_into(w, "sr_noise_sd", cfg.world.sr_noise_sd);
    }
    if (j.contains("logs")) {
        const auto& l = j.at("logs");
        detail::reject_unknown_keys(l,
                                    {"n_impressions", "position_decay", "sr_filter_threshold",
                                     "ctr_threshold", "min_impressions", "min_clicks"},
                                    "logs");
        detail::read_into(l, "n_impressions", cfg.logs.n_impressions);
        detail::read_into(l, "position_decay", cfg.logs.position_decay);
        detail::read_into(l, "sr_filter_threshold", cfg.logs.sr_filter_threshold);
        detail::read_into(l, "ctr_threshold", cfg.logs.ctr_threshold);
        detail::read_into(l, "min_impressions", cfg.logs.min_impressions);
        detail::read_into(l, "min_clicks", cfg.logs.min_clicks);
    }
    if (j.contains("labels")) {
        const auto& l = j.at("labels");
        detail::reject_unknown_keys(l, {"n_pairs", "sr_threshold", "judge_noise_rate"},
                                    "labels");
        detail::read_into(l, "n_pairs", cfg.labels.n_pairs);
        detail::read_into(l, "sr_threshold", cfg.labels.sr_threshold);
        detail::read_into(l, "judge_noise_rate", cfg.labels.judge_noise_rate);
    }
    if (j.contains("encoders")) {
        const auto& e = j.at("encoders");
        detail::reject_unknown_keys(e, {"bi_hidden", "bi_dim", "cross_hidden"}, "encoders");
        detail::read_into(e, "bi_hidden", cfg.encoders.bi_hidden);
        detail::read_into(e, "bi_dim", cfg.encoders.bi_dim);
        detail::read_into(e, "cross_hidden", cfg.encoders.cross_hidden);
    }
    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        detail::reject_unknown_keys(t,
                                    {"batch_size", "epochs_bi", "epochs_cross", "task_map",
                                     "matryoshka_enabled", "matryoshka_by_task", "optimizer"},
                                    "trainer");
        detail::read_into(t, "batch_size", cfg.trainer_bi.batch_size);
        detail::read_into(t, "epochs_bi", cfg.trainer_bi.epochs);
        detail::read_into(t, "epochs_cross", cfg.trainer_cross.epochs);
        if (t.contains("task_map")) {
            for (auto it = t.at("task_map").begin(); it != t.at("task_map").end(); ++it)
                cfg.trainer_bi.task_map[parse_label_source(it.key())] =
                    parse_loss_id(it.value().get<std::string>());
        }
        detail::read_into(t, "matryoshka_enabled", cfg.trainer_bi.matryoshka_enabled);
        if (t.contains("matryoshka_by_task")) {
            for (auto it = t.at("matryoshka_by_task").begin();
                 it != t.at("matryoshka_by_task").end(); ++it)
                cfg.trainer_bi.matryoshka_by_task[parse_label_source(it.key())] =
                    it.value().get<bool>();
        }
        if (t.contains("optimizer")) {
            const auto& o = t.at("optimizer");
            detail::reject_unknown_keys(o, {"kind", "lr", "lr_cross"}, "trainer.optimizer");
            if (o.contains("kind")) {
                cfg.trainer_bi.optimizer.kind =
                    parse_optimizer_kind(o.at("kind").get<std::string>());
                cfg.trainer_cross.optimizer.kind = cfg.trainer_bi.optimizer.kind;
            }
            detail::read_into(o, "lr", cfg.trainer_bi.optimizer.learning_rate);
            detail::read_into(o, "lr_cross", cfg.trainer_cross.optimizer.learning_rate);
        }
        cfg.trainer_cross.batch_size = cfg.trainer_bi.batch_size;
    }
    if (j.contains("losses")) {
        const auto& l = j.at("losses");
        detail::reject_unknown_keys(l, {"mnr", "contrastive", "cosent", "matryoshka"}, "losses");
        if (l.contains("mnr")) {
            detail::reject_unknown_keys(l.at("mnr"), {"temperature"}, "losses.mnr");
            detail::read_into(l.at("mnr"), "temperature",
                              cfg.trainer_bi.losses.mnr.temperature);
        }
        if (l.contains("contrastive")) {
            detail::reject_unknown_keys(l.at("contrastive"), {"margin"}, "losses.contrastive");
            detail::read_into(l.at("contrastive"), "margin",
                              cfg.trainer_bi.losses.contrastive.margin);
        }
        if (l.contains("cosent")) {
            detail::reject_unknown_keys(l.at("cosent"), {"scale"}, "losses.cosent");
            detail::read_into(l.at("cosent"), "scale", cfg.trainer_bi.losses.cosent.scale);
        }
        if (l.contains("matryoshka")) {
            detail::reject_unknown_keys(l.at("matryoshka"), {"dims", "weights"},
                                        "losses.matryoshka");
            detail::read_into(l.at("matryoshka"), "dims", cfg.trainer_bi.matryoshka.dims);
            if (l.at("matryoshka").contains("weights"))
                cfg.trainer_bi.matryoshka.weights =
                    l.at("matryoshka").at("weights").get<std::vector<double>>();
            else
                cfg.trainer_bi.matryoshka.weights.assign(cfg.trainer_bi.matryoshka.dims.size(),
                                                         1.0);
        }
    }
    if (j.contains("retrieval")) {
        const auto& r = j.at("retrieval");
        detail::reject_unknown_keys(r, {"k", "dim_prefix"}, "retrieval");
        detail::read_into(r, "k", cfg.retrieval.k);
        detail::read_into(r, "dim_prefix", cfg.retrieval.dim_prefix);
    }
    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        detail::reject_unknown_keys(e,
                                    {"filter_threshold", "item_sample_size", "judge_sample_size",
                                     "n_eval_pairs", "other_recall_top", "other_recall_path",
                                     "threshold_grid_step"},
                                    "evaluation");
        detail::read_into(e, "filter_threshold", cfg.evaluation.filter_threshold);
        detail::read_into(e, "item_sample_size", cfg.evaluation.item_sample_size);
        detail::read_into(e, "judge_sample_size", cfg.evaluation.judge_sample_size);
        detail::read_into(e, "n_eval_pairs", cfg.evaluation.n_eval_pairs);
        detail::read_into(e, "other_recall_top", cfg.evaluation.other_recall_top);
        detail::read_into(e, "other_recall_path", cfg.evaluation.other_recall_path);
        detail::read_into(e, "threshold_grid_step", cfg.evaluation.threshold_grid_step);
    }
    if (j.contains("ablate_combos")) {
        cfg.ablate_combos.clear();
        for (const auto& combo : j.at("ablate_combos")) {
            std::vector<LabelSource> sources;
            for (const auto& s : combo) sources.push_back(parse_label_source(s.get<std::string>()));
            require(!sources.empty(), ErrorKind::Config, "ablate_combos entries must be non-empty");
            cfg.ablate_combos.push_back(sources);
        }
        require(!cfg.ablate_combos.empty(), ErrorKind::Config,
                "ablate_combos must be non-empty when given");
    }

    // derived fields: the world seed and trainer seeds flow from the top seed
    cfg.world.seed = cfg.seed;
    cfg.trainer_bi.seed = hash2(cfg.seed, 0x62695F74ULL);
    cfg.trainer_cross.seed = hash2(cfg.seed, 0x63655F74ULL);
    validate(cfg.world);
    validate(cfg.logs);
    require(cfg.labels.sr_threshold >= 0.0 && cfg.labels.sr_threshold <= 1.0, ErrorKind::Config,
            "labels.sr_threshold must be in [0,1]");
    require(cfg.retrieval.dim_prefix >= 1 && cfg.retrieval.dim_prefix <= cfg.encoders.bi_dim,
            ErrorKind::Config, "retrieval.dim_prefix must be in [1, bi_dim]");
    validate(cfg.trainer_bi, cfg.encoders.bi_dim);
    return cfg;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::MissingArtifact, "config file not found: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw_error(ErrorKind::Config, "config parse error: " + std::string(e.what()));
    }
    try {
        return parse_pipeline_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw_error(ErrorKind::Config, "config schema error: " + std::string(e.what()));
    }
}

// --- artifact bookkeeping --------------------------------------------------------

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::MissingArtifact, "missing artifact: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out << content;
    require(out.good(), ErrorKind::Io, "write failed for " + path.string());
}

inline std::string checksum_hex(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

inline std::string file_checksum(const fs::path& path) { return checksum_hex(read_file(path)); }

// Stage manifest: config hash plus input/output checksums. A stage whose
// manifest matches current inputs and outputs is a no-op on re-run.
struct Manifest {
    std::string stage;
    std::string config_hash;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["stage"] = stage;
        j["config_hash"] = config_hash;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        return j;
    }
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg, nlohmann::json raw_config)
        : cfg_(std::move(cfg)), raw_config_(std::move(raw_config)) {
        config_hash_ = checksum_hex(raw_config_.dump());
    }

    const PipelineConfig& config() const { return cfg_; }
    fs::path out(const std::string& name) const { return fs::path(cfg_.output_dir) / name; }

    // --- stages; each returns true when work ran, false on a fresh no-op ---

    bool gen() {
        const std::vector<std::string> inputs = {};
        if (stage_fresh("gen", inputs,
                        {"world.json", "ctr.jsonl", "sr.jsonl", "llm.jsonl"}))
            return false;
        const SyntheticWorld world = generate_world(cfg_.world);
        const SearchLogs logs = simulate_search_logs(world, cfg_.logs);
        const auto pool = sample_pairs(world, cfg_.labels.n_pairs, kLabelPoolStream);
        const SrLabelSet sr = sr_labels(world, pool, cfg_.labels.sr_threshold);
        const auto llm = llm_labels(world, pool, cfg_.labels.judge_noise_rate);
        write_file(out("world.json"), world_to_json(world).dump());
        write_file(out("ctr.jsonl"), to_jsonl(logs.ctr_positives));
        write_file(out("sr.jsonl"), to_jsonl(sr.pairs));
        write_file(out("llm.jsonl"), to_jsonl(llm));
        write_manifest("gen", inputs,
                       {"world.json", "ctr.jsonl", "sr.jsonl", "llm.jsonl"});
        return true;
    }

    bool train_cross_stage() {
        const std::vector<std::string> inputs = {"world.json", "llm.jsonl"};
        if (stage_fresh("train-cross", inputs, {"cross.bin", "cross_history.jsonl"}))
            return false;
        const SyntheticWorld world = load_world();
        const auto llm = from_jsonl(read_file(out("llm.jsonl")));
        auto params = CrossEncoderParams::random(cfg_.world.vocab_size,
                                                 cfg_.encoders.cross_hidden, cfg_.seed);
        const auto examples = materialize_cross_examples(world, llm);
        const TrainHistory history = train_cross(params, examples, cfg_.trainer_cross);
        std::ostringstream os(std::ios::binary);
        save_cross(os, params);
        write_file(out("cross.bin"), os.str());
        write_file(out("cross_history.jsonl"), history.to_jsonl());
        write_manifest("train-cross", inputs, {"cross.bin", "cross_history.jsonl"});
        return true;
    }

    bool kd_score_stage() {
        const std::vector<std::string> inputs = {"world.json", "cross.bin", "ctr.jsonl",
                                                 "llm.jsonl"};
        if (stage_fresh("kd-score", inputs, {"kd.jsonl", "kd_distribution.json"})) return false;
        const SyntheticWorld world = load_world();
        const CrossEncoderParams assistant = load_assistant();
        const auto ctr = from_jsonl(read_file(out("ctr.jsonl")));
        const auto llm = from_jsonl(read_file(out("llm.jsonl")));
        // the student's training pairs: everything the bi-encoder can see
        std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
        for (const auto& p : ctr) pairs.emplace_back(p.item_id, p.keyphrase_id);
        for (const auto& p : llm) pairs.emplace_back(p.item_id, p.keyphrase_id);
        const auto kd = kd_score(assistant, world, pairs);
        write_file(out("kd.jsonl"), to_jsonl(kd));
        // diagnostic: assistant score spread vs hard teacher labels
        std::vector<double> assistant_scores, teacher_labels;
        for (const auto& p : kd) assistant_scores.push_back(p.value);
        for (const auto& p : llm) teacher_labels.push_back(p.value);
        const auto rep = score_distribution_report(assistant_scores, teacher_labels);
        write_file(out("kd_distribution.json"), distribution_report_to_json(rep).dump(2));
        write_manifest("kd-score", inputs, {"kd.jsonl", "kd_distribution.json"});
        return true;
    }

    bool train_bi_stage() {
        const std::vector<std::string> inputs = {"world.json", "ctr.jsonl", "sr.jsonl",
                                                 "llm.jsonl", "kd.jsonl"};
        if (stage_fresh("train-bi", inputs, {"bi.bin", "bi_history.jsonl"})) return false;
        const SyntheticWorld world = load_world();
        const auto datasets = load_datasets(default_sources());
        auto params = BiEncoderParams::random(cfg_.world.vocab_size, cfg_.encoders.bi_hidden,
                                              cfg_.encoders.bi_dim, cfg_.seed);
        const fs::path ckpt_dir = out("checkpoints");
        const TrainHistory history = train_bi(
            params, world, datasets, cfg_.trainer_bi,
            [&](std::size_t epoch, const BiEncoderParams& p) {
                std::ostringstream os(std::ios::binary);
                save_bi(os, p);
                write_file(ckpt_dir / ("bi_epoch_" + std::to_string(epoch) + ".bin"), os.str());
            });
        std::ostringstream os(std::ios::binary);
        save_bi(os, params);
        write_file(out("bi.bin"), os.str());
        write_file(out("bi_history.jsonl"), history.to_jsonl());
        write_manifest("train-bi", inputs, {"bi.bin", "bi_history.jsonl"});
        return true;
    }

    bool index_stage() {
        const std::vector<std::string> inputs = {"world.json", "bi.bin"};
        if (stage_fresh("index", inputs, {"index.bin"})) return false;
        const SyntheticWorld world = load_world();
        const BiEncoderParams student = load_student(out("bi.bin"));
        const Index idx = build_student_index(student, world, cfg_.retrieval.dim_prefix);
        std::ostringstream os(std::ios::binary);
        save_index(os, idx);
        write_file(out("index.bin"), os.str());
        write_manifest("index", inputs, {"index.bin"});
        return true;
    }

    bool eval_stage() {
        const std::vector<std::string> inputs = {"world.json", "bi.bin", "index.bin",
                                                 "cross.bin"};
        if (stage_fresh("eval", inputs,
                        {"eval_report.json", "retrievals.jsonl", "other_recall.jsonl"}))
            return false;
        const SyntheticWorld world = load_world();
        const BiEncoderParams student = load_student(out("bi.bin"));
        const CrossEncoderParams assistant = load_assistant();
        std::istringstream is(read_file(out("index.bin")), std::ios::binary);
        const Index index = load_index(is);
        const EvalReport report =
            evaluate_student(world, student, assistant, index, /*emit_artifacts=*/true);
        write_file(out("eval_report.json"), eval_report_to_json(report).dump(2));
        write_manifest("eval", inputs,
                       {"eval_report.json", "retrievals.jsonl", "other_recall.jsonl"});
        return true;
    }

    bool ablate_stage() {
        const std::vector<std::string> inputs = {"world.json", "ctr.jsonl", "sr.jsonl",
                                                 "llm.jsonl", "kd.jsonl", "cross.bin"};
        if (stage_fresh("ablate", inputs, {"ablate_report.json", "ablate_report.md"}))
            return false;
        const SyntheticWorld world = load_world();
        const CrossEncoderParams assistant = load_assistant();
        const auto all = load_datasets(default_sources());
        std::vector<std::pair<std::string, EvalReport>> rows;
        for (const auto& combo : cfg_.ablate_combos) {
            std::map<LabelSource, std::vector<LabeledPair>> datasets;
            std::string label;
            for (LabelSource s : combo) {
                require(all.count(s) > 0, ErrorKind::MissingArtifact,
                        std::string("ablate: no dataset for source ") + label_source_name(s));
                datasets[s] = all.at(s);
                if (!label.empty()) label += "+";
                label += label_source_name(s);
            }
            auto params = BiEncoderParams::random(cfg_.world.vocab_size,
                                                  cfg_.encoders.bi_hidden, cfg_.encoders.bi_dim,
                                                  cfg_.seed);
            TrainConfig tcfg = cfg_.trainer_bi;
            tcfg.seed = hash2(cfg_.trainer_bi.seed, fnv1a64(label));
            train_bi(params, world, datasets, tcfg);
            const Index index = build_student_index(params, world, cfg_.retrieval.dim_prefix);
            rows.emplace_back(label,
                              evaluate_student(world, params, assistant, index, false));
        }
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            if (a.second.median_kw_cnt != b.second.median_kw_cnt)
                return a.second.median_kw_cnt > b.second.median_kw_cnt;
            if (a.second.judge_pass_rate != b.second.judge_pass_rate)
                return a.second.judge_pass_rate > b.second.judge_pass_rate;
            return a.first < b.first;
        });
        nlohmann::json j = nlohmann::json::array();
        for (const auto& [label, rep] : rows) {
            nlohmann::json row = eval_report_to_json(rep);
            row["labels"] = label;
            j.push_back(row);
        }
        write_file(out("ablate_report.json"), j.dump(2));
        write_file(out("ablate_report.md"), ablation_markdown(rows));
        write_manifest("ablate", inputs, {"ablate_report.json", "ablate_report.md"});
        return true;
    }

    bool report_stage() {
        const std::vector<std::string> inputs = {"eval_report.json", "ablate_report.json"};
        for (const auto& name : inputs) read_file(out(name));  // missing -> error
        std::string md = "# Evaluation report\n\n## Pipeline run\n\n";
        const auto eval = nlohmann::json::parse(read_file(out("eval_report.json")));
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "precision %.3f, recall %.3f, F1 %.3f, C.E. corr %.3f, median kw cnt "
                      "%.1f, judge pass rate %.2f%%\n\n",
                      eval.at("precision").get<double>(), eval.at("recall").get<double>(),
                      eval.at("f1").get<double>(), eval.at("ce_corr").get<double>(),
                      eval.at("median_kw_cnt").get<double>(),
                      eval.at("judge_pass_rate").get<double>() * 100.0);
        md += buf;
        md += "## Label ablation\n\n";
        md += read_file(out("ablate_report.md"));
        write_file(out("report.md"), md);
        write_manifest("report", inputs, {"report.md"});
        return true;
    }

    // Shared evaluation: classification metrics on held-out pairs, correlation
    // with the assistant, and the production-settings walk of the retrievals.
    EvalReport evaluate_student(const SyntheticWorld& world, const BiEncoderParams& student,
                                const CrossEncoderParams& assistant, const Index& index,
                                bool emit_artifacts) {
        // held-out pairs, disjoint from the training label pool
        const auto train_pool = sample_pairs(world, cfg_.labels.n_pairs, kLabelPoolStream);
        std::set<std::pair<std::int64_t, std::int64_t>> train_set(train_pool.begin(),
                                                                  train_pool.end());
        auto eval_pool =
            sample_pairs(world, cfg_.labels.n_pairs + cfg_.evaluation.n_eval_pairs,
                         kEvalPoolStream);
        std::vector<std::pair<std::int64_t, std::int64_t>> held_out;
        for (const auto& pr : eval_pool) {
            if (train_set.count(pr)) continue;
            held_out.push_back(pr);
            if (held_out.size() == cfg_.evaluation.n_eval_pairs) break;
        }
        require(held_out.size() >= 4, ErrorKind::Config,
                "evaluation: not enough held-out pairs; increase n_eval_pairs or world size");

        std::vector<double> cosines, truth, assistant_scores;
        for (const auto& [item, kp] : held_out) {
            cosines.push_back(cosine(encode_bi(student, world.item_text(item)),
                                     encode_bi(student, world.keyphrase(kp).tokens)));
            truth.push_back(
                world.relevance[static_cast<std::size_t>(item)][static_cast<std::size_t>(kp)]
                    ? 1.0
                    : 0.0);
            assistant_scores.push_back(score_cross(assistant, world.keyphrase(kp).tokens,
                                                   world.item(item).category_tokens,
                                                   world.item(item).title_tokens));
        }
        // validation/test split for the threshold
        const std::size_t half = held_out.size() / 2;
        const std::vector<double> val_scores(cosines.begin(),
                                             cosines.begin() + static_cast<std::ptrdiff_t>(half));
        const std::vector<double> val_labels(truth.begin(),
                                             truth.begin() + static_cast<std::ptrdiff_t>(half));
        const std::vector<double> test_scores(cosines.begin() + static_cast<std::ptrdiff_t>(half),
                                              cosines.end());
        const std::vector<double> test_labels(truth.begin() + static_cast<std::ptrdiff_t>(half),
                                              truth.end());
        const Threshold thr =
            select_threshold(val_scores, val_labels, cfg_.evaluation.threshold_grid_step);
        const ClassMetrics cm = classification_metrics(test_scores, test_labels, thr.value);

        // production walk
        Rng item_rng(hash2(cfg_.seed, kItemSampleStream));
        std::vector<std::int64_t> item_sample;
        {
            std::vector<std::size_t> perm = item_rng.permutation(world.items.size());
            const std::size_t take =
                std::min(cfg_.evaluation.item_sample_size, world.items.size());
            for (std::size_t i = 0; i < take; ++i)
                item_sample.push_back(static_cast<std::int64_t>(perm[i]));
        }
        const auto other = other_recall_lists(world, item_sample);
        const RelevanceFilter filter =
            assistant_filter(assistant, world, cfg_.evaluation.filter_threshold);
        ProductionEvalConfig pcfg;
        pcfg.k = cfg_.retrieval.k;
        pcfg.judge_sample_size = cfg_.evaluation.judge_sample_size;
        pcfg.judge_noise_rate = cfg_.labels.judge_noise_rate;
        pcfg.seed = cfg_.seed;
        EvalReport report =
            production_eval(world, student, index, other, filter, item_sample, pcfg);
        report.precision = cm.precision;
        report.recall = cm.recall;
        report.f1 = cm.f1;
        report.ce_corr = ce_corr(cosines, assistant_scores);
        report.config_echo["threshold"] = thr.value;
        report.config_echo["dim_prefix"] = index.dim_prefix;

        if (emit_artifacts) {
            const auto retrievals =
                retrieve_for_items(student, world, item_sample, index, cfg_.retrieval.k);
            write_file(out("retrievals.jsonl"), results_to_jsonl(retrievals));
            std::string lines;
            for (const auto& [item, kps] : other) {
                nlohmann::json j;
                j["item"] = item;
                j["kps"] = kps;
                lines += j.dump();
                lines += '\n';
            }
            write_file(out("other_recall.jsonl"), lines);
        }
        return report;
    }

    // Other recall models: by default the top ground-truth-relevant keyphrases
    // by sr_score per item; a jsonl file overrides when configured.
    std::map<std::int64_t, std::set<std::int64_t>> other_recall_lists(
        const SyntheticWorld& world, const std::vector<std::int64_t>& items) {
        std::map<std::int64_t, std::set<std::int64_t>> out_map;
        if (!cfg_.evaluation.other_recall_path.empty()) {
            const std::string text = read_file(cfg_.evaluation.other_recall_path);
            std::size_t pos = 0;
            while (pos < text.size()) {
                std::size_t end = text.find('\n', pos);
                if (end == std::string::npos) end = text.size();
                const std::string line = text.substr(pos, end - pos);
                pos = end + 1;
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                std::set<std::int64_t> kps;
                for (const auto& kp : j.at("kps")) kps.insert(kp.get<std::int64_t>());
                out_map[j.at("item").get<std::int64_t>()] = std::move(kps);
            }
            return out_map;
        }
        for (std::int64_t item : items) {
            std::vector<std::pair<double, std::int64_t>> relevant;
            const auto i = static_cast<std::size_t>(item);
            for (std::size_t k = 0; k < world.keyphrases.size(); ++k)
                if (world.relevance[i][k])
                    relevant.emplace_back(world.sr_score[i][k], static_cast<std::int64_t>(k));
            std::sort(relevant.begin(), relevant.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::set<std::int64_t>& kps = out_map[item];
            for (std::size_t i2 = 0;
                 i2 < std::min(cfg_.evaluation.other_recall_top, relevant.size()); ++i2)
                kps.insert(relevant[i2].second);
        }
        return out_map;
    }

    SyntheticWorld load_world() {
        return world_from_json(nlohmann::json::parse(read_file(out("world.json"))));
    }
    CrossEncoderParams load_assistant() {
        std::istringstream is(read_file(out("cross.bin")), std::ios::binary);
        return load_cross(is);
    }
    BiEncoderParams load_student(const fs::path& path) {
        std::istringstream is(read_file(path), std::ios::binary);
        return load_bi(is);
    }

    std::map<LabelSource, std::vector<LabeledPair>> load_datasets(
        const std::vector<LabelSource>& sources) {
        std::map<LabelSource, std::vector<LabeledPair>> out_map;
        for (LabelSource s : sources) {
            std::string name;
            switch (s) {
                case LabelSource::Ctr: name = "ctr.jsonl"; break;
                case LabelSource::Sr: name = "sr.jsonl"; break;
                case LabelSource::Llm: name = "llm.jsonl"; break;
                case LabelSource::Kd: name = "kd.jsonl"; break;
            }
            out_map[s] = from_jsonl(read_file(out(name)));
        }
        return out_map;
    }

private:
    static std::vector<LabelSource> default_sources() {
        return {LabelSource::Ctr, LabelSource::Sr, LabelSource::Llm, LabelSource::Kd};
    }

    static constexpr std::uint64_t kLabelPoolStream = 0x706F6F6CULL;
    static constexpr std::uint64_t kEvalPoolStream = 0x6576616CULL;
    static constexpr std::uint64_t kItemSampleStream = 0x6974656DULL;

    bool stage_fresh(const std::string& stage, const std::vector<std::string>& inputs,
                     const std::vector<std::string>& outputs) {
        const fs::path mpath = out(stage + ".manifest.json");
        if (!fs::exists(mpath)) return false;
        nlohmann::json m;
        try {
            m = nlohmann::json::parse(read_file(mpath));
        } catch (...) {
            return false;
        }
        if (m.value("config_hash", "") != config_hash_) return false;
        auto matches = [&](const char* key, const std::vector<std::string>& names) {
            if (!m.contains(key)) return names.empty();
            for (const auto& name : names) {
                const fs::path p = out(name);
                if (!fs::exists(p)) return false;
                if (m.at(key).value(name, "") != file_checksum(p)) return false;
            }
            return true;
        };
        return matches("inputs", inputs) && matches("outputs", outputs);
    }

    void write_manifest(const std::string& stage, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
        Manifest m;
        m.stage = stage;
        m.config_hash = config_hash_;
        for (const auto& name : inputs) m.inputs[name] = file_checksum(out(name));
        for (const auto& name : outputs) m.outputs[name] = file_checksum(out(name));
        write_file(out(stage + ".manifest.json"), m.to_json().dump(2));
    }

    PipelineConfig cfg_;
    nlohmann::json raw_config_;
    std::string config_hash_;
};

}  // namespace kpd
