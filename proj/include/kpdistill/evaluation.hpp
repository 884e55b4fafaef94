#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/numerics.hpp"
#include "kpdistill/retrieval.hpp"
#include "kpdistill/rng.hpp"
#include "kpdistill/synthworld.hpp"

namespace kpd {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // some denominator was zero
};

inline ClassMetrics classification_metrics(const std::vector<double>& scores,
                                           const std::vector<double>& labels,
                                           double threshold) {
    require(scores.size() == labels.size(), ErrorKind::Shape,
            "classification_metrics: scores and labels must have equal length");
    require(!scores.empty(), ErrorKind::Shape, "classification_metrics: empty inputs");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] != 0.0;
        if (pred && truth) ++tp;
        if (pred && !truth) ++fp;
        if (!pred && truth) ++fn;
    }
    ClassMetrics m;
    if (tp + fp == 0) {
        m.degenerate = true;
    } else {
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
        m.degenerate = true;
    } else {
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

struct Threshold {
    double value = 0.0;
    double grid_step = 0.01;
    double best_f1 = 0.0;
};

// Grid search over [-1, 1] maximizing F1 on a validation split; ties go to the
// lowest threshold.
inline Threshold select_threshold(const std::vector<double>& val_scores,
                                  const std::vector<double>& val_labels,
                                  double grid_step = 0.01) {
    require(grid_step > 0.0 && grid_step <= 1.0, ErrorKind::Config,
            "select_threshold: grid_step must be in (0,1]");
    bool has_pos = false, has_neg = false;
    for (double y : val_labels) (y != 0.0 ? has_pos : has_neg) = true;
    require(has_pos && has_neg, ErrorKind::DegenerateData,
            "select_threshold: validation set must contain both classes");
    Threshold best;
    best.grid_step = grid_step;
    best.best_f1 = -1.0;
    const auto steps = static_cast<std::size_t>(2.0 / grid_step + 0.5);
    for (std::size_t i = 0; i <= steps; ++i) {
        const double t = -1.0 + static_cast<double>(i) * grid_step;
        const ClassMetrics m = classification_metrics(val_scores, val_labels, t);
        if (m.f1 > best.best_f1) {
            best.best_f1 = m.f1;
            best.value = t;
        }
    }
    return best;
}

// Pearson correlation between student cosines and assistant scores; the
// degenerate sentinel maps to 0.
inline double ce_corr(const std::vector<double>& student_cosines,
                      const std::vector<double>& assistant_scores) {
    const auto corr = pearson_corr(student_cosines, assistant_scores);
    return corr.value_or(0.0);
}

// --- production-settings evaluation ------------------------------------------------

// The downstream relevance filter: a scorer over (item, keyphrase) plus a
// threshold. The pipeline instantiates it from the trained assistant.
struct RelevanceFilter {
    std::function<double(std::int64_t, std::int64_t)> scorer;
    double threshold = 0.5;
};

inline RelevanceFilter assistant_filter(const CrossEncoderParams& assistant,
                                        const SyntheticWorld& world, double threshold) {
    RelevanceFilter f;
    f.threshold = threshold;
    f.scorer = [&assistant, &world](std::int64_t item, std::int64_t kp) {
        return score_cross(assistant, world.keyphrase(kp).tokens,
                           world.item(item).category_tokens, world.item(item).title_tokens);
    };
    return f;
}

struct ProductionEvalConfig {
    std::size_t k = 20;
    std::size_t item_sample_size = 100;
    std::size_t judge_sample_size = 10000;
    double judge_noise_rate = 0.1;
    std::uint64_t seed = 7;
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double ce_corr = 0.0;
    double median_kw_cnt = 0.0;
    double judge_pass_rate = 0.0;
    nlohmann::json config_echo;
};

// One item's trace through the evaluation: retrieve top-k, keep the filter
// passes, drop keyphrases served by any other recall model, count survivors.
// The report carries the lower median over items and the judge pass rate on a
// seeded sample of the survivors.
inline EvalReport production_eval(
    const SyntheticWorld& world, const BiEncoderParams& student, const Index& index,
    const std::map<std::int64_t, std::set<std::int64_t>>& other_recall_lists,
    const RelevanceFilter& filter, const std::vector<std::int64_t>& item_sample,
    const ProductionEvalConfig& cfg) {
    require(!item_sample.empty(), ErrorKind::Config,
            "production_eval: item sample must be non-empty");
    const auto retrievals = retrieve_for_items(student, world, item_sample, index, cfg.k);

    std::vector<double> counts;
    std::vector<std::pair<std::int64_t, std::int64_t>> survivors;
    for (const auto& res : retrievals) {
        const auto other = other_recall_lists.find(res.item_id);
        std::size_t kept = 0;
        for (const auto& [kp, score] : res.ranked) {
            if (filter.scorer(res.item_id, kp) < filter.threshold) continue;
            if (other != other_recall_lists.end() && other->second.count(kp)) continue;
            ++kept;
            survivors.emplace_back(res.item_id, kp);
        }
        counts.push_back(static_cast<double>(kept));
    }
    std::sort(counts.begin(), counts.end());
    const double median = counts[(counts.size() - 1) / 2];  // lower median

    // judge a seeded sample of the surviving pairs
    double pass_rate = 0.0;
    if (!survivors.empty()) {
        Rng rng(hash2(cfg.seed, 0x70617373ULL));
        std::vector<std::size_t> order = rng.permutation(survivors.size());
        const std::size_t take = std::min(cfg.judge_sample_size, survivors.size());
        std::size_t passed = 0;
        for (std::size_t i = 0; i < take; ++i) {
            const auto& [item, kp] = survivors[order[i]];
            passed += judge(world, item, kp, cfg.judge_noise_rate) == 1.0 ? 1 : 0;
        }
        pass_rate = static_cast<double>(passed) / static_cast<double>(take);
    }

    EvalReport rep;
    rep.median_kw_cnt = median;
    rep.judge_pass_rate = pass_rate;
    rep.config_echo["k"] = cfg.k;
    rep.config_echo["item_sample_size"] = item_sample.size();
    rep.config_echo["judge_sample_size"] = cfg.judge_sample_size;
    rep.config_echo["judge_noise_rate"] = cfg.judge_noise_rate;
    rep.config_echo["filter_threshold"] = filter.threshold;
    rep.config_echo["seed"] = cfg.seed;
    return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["precision"] = rep.precision;
    j["recall"] = rep.recall;
    j["f1"] = rep.f1;
    j["ce_corr"] = rep.ce_corr;
    j["median_kw_cnt"] = rep.median_kw_cnt;
    j["judge_pass_rate"] = rep.judge_pass_rate;
    j["config"] = rep.config_echo;
    return j;
}

// Markdown table in the layout of the label-ablation results: one row per
// model, ordered by median count then pass rate.
inline std::string ablation_markdown(
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::vector<std::pair<std::string, EvalReport>> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second.median_kw_cnt != b.second.median_kw_cnt)
            return a.second.median_kw_cnt > b.second.median_kw_cnt;
        if (a.second.judge_pass_rate != b.second.judge_pass_rate)
            return a.second.judge_pass_rate > b.second.judge_pass_rate;
        return a.first < b.first;
    });
    std::string out = "| Labels | median kw cnt | judge pass rate |\n|---|---|---|\n";
    char buf[128];
    for (const auto& [label, rep] : sorted) {
        std::snprintf(buf, sizeof(buf), "| %s | %.1f | %.2f%% |\n", label.c_str(),
                      rep.median_kw_cnt, rep.judge_pass_rate * 100.0);
        out += buf;
    }
    return out;
}

// Markdown table in the layout of the KD-loss comparison: loss, correlation
// with the assistant, then classification metrics.
inline std::string kd_loss_markdown(
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::string out = "| K.D. Loss | C.E. corr | F1 | Precision | Recall |\n|---|---|---|---|---|\n";
    char buf[160];
    for (const auto& [label, rep] : rows) {
        std::snprintf(buf, sizeof(buf), "| %s | %.3f | %.3f | %.3f | %.3f |\n", label.c_str(),
                      rep.ce_corr, rep.f1, rep.precision, rep.recall);
        out += buf;
    }
    return out;
}

}  // namespace kpd
