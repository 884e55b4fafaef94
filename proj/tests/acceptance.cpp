// Acceptance suite: one criterion per function, each printing a single
// PASS/FAIL line. Run with no arguments for all criteria or with a list of
// criterion numbers. Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "kpdistill/kpdistill.hpp"

using namespace kpd;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// --- shared fixtures: default-config world, assistant, datasets ---------------

struct SeedRun {
    SyntheticWorld world;
    std::vector<LabeledPair> ctr, sr, llm, kd;
    CrossEncoderParams assistant{};
    std::vector<std::pair<std::int64_t, std::int64_t>> eval_pairs;
    std::vector<double> truth;
    std::vector<double> assistant_scores;
};

// Mirrors the pipeline's gen / train-cross / kd-score stages at the default
// configuration, seeded per run.
SeedRun build_seed_run(std::uint64_t seed) {
    const PipelineConfig defaults;
    SeedRun r;
    WorldConfig wc = defaults.world;
    wc.seed = seed;
    r.world = generate_world(wc);
    r.ctr = simulate_search_logs(r.world, defaults.logs).ctr_positives;
    const auto pool = sample_pairs(r.world, defaults.labels.n_pairs, 0x706F6F6CULL);
    r.sr = sr_labels(r.world, pool, defaults.labels.sr_threshold).pairs;
    r.llm = llm_labels(r.world, pool, defaults.labels.judge_noise_rate);
    r.assistant =
        CrossEncoderParams::random(wc.vocab_size, defaults.encoders.cross_hidden, seed);
    TrainConfig cc = defaults.trainer_cross;
    cc.seed = hash2(seed, 1);
    train_cross(r.assistant, materialize_cross_examples(r.world, r.llm), cc);
    std::vector<std::pair<std::int64_t, std::int64_t>> kd_pairs;
    for (const auto& p : r.ctr) kd_pairs.emplace_back(p.item_id, p.keyphrase_id);
    for (const auto& p : r.llm) kd_pairs.emplace_back(p.item_id, p.keyphrase_id);
    r.kd = kd_score(r.assistant, r.world, kd_pairs);

    std::set<std::pair<std::int64_t, std::int64_t>> train_set(pool.begin(), pool.end());
    const auto eval_pool =
        sample_pairs(r.world, defaults.labels.n_pairs + 8000, 0x6576616CULL);
    for (const auto& pr : eval_pool) {
        if (train_set.count(pr)) continue;
        r.eval_pairs.push_back(pr);
        if (r.eval_pairs.size() == defaults.evaluation.n_eval_pairs) break;
    }
    for (const auto& [item, kp] : r.eval_pairs) {
        r.truth.push_back(r.world.relevance[static_cast<std::size_t>(item)]
                                           [static_cast<std::size_t>(kp)]
                              ? 1.0
                              : 0.0);
        r.assistant_scores.push_back(score_cross(r.assistant, r.world.keyphrase(kp).tokens,
                                                 r.world.item(item).category_tokens,
                                                 r.world.item(item).title_tokens));
    }
    return r;
}

BiEncoderParams train_student(const SeedRun& r,
                              const std::map<LabelSource, std::vector<LabeledPair>>& datasets,
                              LossId kd_loss, std::uint64_t seed) {
    const PipelineConfig defaults;
    auto params = BiEncoderParams::random(defaults.world.vocab_size,
                                          defaults.encoders.bi_hidden,
                                          defaults.encoders.bi_dim, seed);
    TrainConfig tc = defaults.trainer_bi;
    tc.seed = hash2(seed, 2);
    tc.task_map[LabelSource::Kd] = kd_loss;
    train_bi(params, r.world, datasets, tc);
    return params;
}

struct StudentScores {
    double f1 = 0.0;
    double ce_corr_value = 0.0;
};

StudentScores score_student(const SeedRun& r, const BiEncoderParams& params) {
    std::vector<double> cosines;
    for (const auto& [item, kp] : r.eval_pairs)
        cosines.push_back(cosine(encode_bi(params, r.world.item_text(item)),
                                 encode_bi(params, r.world.keyphrase(kp).tokens)));
    const std::size_t half = cosines.size() / 2;
    const std::vector<double> vs(cosines.begin(), cosines.begin() + half);
    const std::vector<double> vl(r.truth.begin(), r.truth.begin() + half);
    const std::vector<double> ts(cosines.begin() + half, cosines.end());
    const std::vector<double> tl(r.truth.begin() + half, r.truth.end());
    const Threshold thr = select_threshold(vs, vl);
    StudentScores out;
    out.f1 = classification_metrics(ts, tl, thr.value).f1;
    out.ce_corr_value = ce_corr(cosines, r.assistant_scores);
    return out;
}

// --- criteria -------------------------------------------------------------------

// finite differences for every loss and full backprop, max rel err < 1e-4
bool criterion_1() {
    bool ok = true;
    // loss-level checks on embedding/score inputs
    Rng rng(1);
    auto random_embs = [&](std::size_t n, std::size_t d, std::uint64_t seed) {
        Rng r(seed);
        std::vector<Embedding> out(n);
        for (auto& e : out) {
            e.values.resize(d);
            for (double& x : e.values) x = r.normal();
            const double nrm = norm2(e.values);
            for (double& x : e.values) x /= nrm;
        }
        return out;
    };
    auto fd_embeddings = [&](std::vector<Embedding>& inputs,
                             const std::vector<std::vector<double>>& analytic,
                             const std::function<double()>& value) {
        double worst = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            for (std::size_t t = 0; t < inputs[i].dim(); ++t) {
                double& slot = inputs[i].values[t];
                const double saved = slot;
                slot = saved + 1e-5;
                const double up = value();
                slot = saved - 1e-5;
                const double down = value();
                slot = saved;
                const double numeric = (up - down) / 2e-5;
                const double err = std::abs(analytic[i][t] - numeric) /
                                   (std::abs(analytic[i][t]) + std::abs(numeric) + 1e-12);
                worst = std::max(worst, err);
            }
        }
        return worst;
    };

    LossConfigs cfg;
    cfg.mnr.temperature = 0.5;
    cfg.cosent.scale = 2.0;
    MatryoshkaConfig mat;
    mat.dims = {4, 8, 16};
    mat.weights = {1.0, 0.5, 2.0};
    double worst = 0.0;
    for (LossId id :
         {LossId::Mnr, LossId::Contrastive, LossId::Pearson, LossId::Cosent, LossId::Mse}) {
        for (bool wrapped : {false, true}) {
            auto left = random_embs(6, 16, 100 + static_cast<int>(id));
            auto right = random_embs(6, 16, 200 + static_cast<int>(id));
            std::vector<double> targets(6);
            for (double& t : targets)
                t = id == LossId::Contrastive ? (rng.uniform01() < 0.5 ? 0.0 : 1.0)
                                              : rng.uniform01();
            auto value = [&] {
                return wrapped
                           ? matryoshka_wrap(id, left, right, targets, cfg, mat).value
                           : pair_loss(id, left, right, targets, cfg).value;
            };
            const EmbeddingLossOutput out =
                wrapped ? matryoshka_wrap(id, left, right, targets, cfg, mat)
                        : pair_loss(id, left, right, targets, cfg);
            worst = std::max(worst, fd_embeddings(left, out.grad_left, value));
            worst = std::max(worst, fd_embeddings(right, out.grad_right, value));
        }
    }
    std::printf("  loss-input gradients: max rel err %.3g\n", worst);
    ok = ok && worst < 1e-4;

    // full backprop through the toy bi-encoder
    const auto params = BiEncoderParams::random(64, 8, 8, 3);
    double worst_bp = 0.0;
    Rng brng(9);
    for (LossId id :
         {LossId::Mnr, LossId::Contrastive, LossId::Pearson, LossId::Cosent, LossId::Mse}) {
        for (bool wrapped : {false, true}) {
            PairBatch batch;
            for (int r = 0; r < 6; ++r) {
                TokenSeq item, kp;
                for (int i = 0; i < 2 + static_cast<int>(brng.uniform_below(4)); ++i)
                    item.ids.push_back(static_cast<std::int32_t>(brng.uniform_below(64)));
                for (int i = 0; i < 1 + static_cast<int>(brng.uniform_below(3)); ++i)
                    kp.ids.push_back(static_cast<std::int32_t>(brng.uniform_below(64)));
                batch.items.push_back(item);
                batch.keyphrases.push_back(kp);
                batch.targets.push_back(id == LossId::Contrastive
                                            ? (brng.uniform01() < 0.5 ? 0.0 : 1.0)
                                            : brng.uniform01());
            }
            BiLossSpec spec;
            spec.loss = id;
            spec.configs = cfg;
            spec.matryoshka = wrapped;
            spec.matryoshka_cfg.dims = {2, 4, 8};
            spec.matryoshka_cfg.weights = {1.0, 1.0, 1.0};
            const GradCheckReport rep = finite_diff_check(params, batch, spec, 1e-5);
            worst_bp = std::max(worst_bp, rep.max_relative_error);
        }
    }
    std::printf("  backprop parameter gradients: max rel err %.3g\n", worst_bp);
    return ok && worst_bp < 1e-4;
}

// frozen loss identities
bool criterion_2() {
    bool ok = true;
    Matrix uniform(4, 4);
    for (double& x : uniform.a) x = 0.25;
    ok = ok && std::abs(mnr_from_similarity(uniform, MnrConfig{0.05}).value - std::log(4.0)) <
                   1e-9;
    ok = ok && pearson_ri_loss({0.1, 0.5, 0.9}, {0.1, 0.5, 0.9}).value == 0.0;
    ok = ok && pearson_ri_loss({0.1, 0.5, 0.9}, {0.9, 0.5, 0.1}).value == 2.0;
    ok = ok && cosent_loss({0.5, 0.5, 0.5}, {0.9, 0.1, 0.3}, CosentConfig{20.0}).value == 0.0;
    ok = ok && mse_loss({0.3, 0.8}, {0.3, 0.8}).value == 0.0;
    // hinge inactive at distance >= margin: rotate a unit vector to cosine 0.3
    const Embedding u{{1.0, 0.0}};
    const double c = 0.3, s = std::sqrt(1.0 - c * c);
    const Embedding v{{c, s}};
    ok = ok && contrastive_loss(u, v, 0.0, ContrastiveConfig{0.5}).value == 0.0;
    return ok;
}

// KD-loss ordering on the default world across 5 seeds
bool criterion_3() {
    int ordered = 0;
    double mean_p = 0.0, mean_c = 0.0, mean_m = 0.0;
    for (std::uint64_t seed = 7; seed <= 11; ++seed) {
        const SeedRun r = build_seed_run(seed);
        const std::map<LabelSource, std::vector<LabeledPair>> kd_only = {
            {LabelSource::Kd, r.kd}};
        const double p =
            score_student(r, train_student(r, kd_only, LossId::Pearson, seed)).ce_corr_value;
        const double cg =
            score_student(r, train_student(r, kd_only, LossId::Cosent, seed)).ce_corr_value;
        const double m =
            score_student(r, train_student(r, kd_only, LossId::Mse, seed)).ce_corr_value;
        const bool order = p >= cg && cg >= m;
        ordered += order ? 1 : 0;
        mean_p += p / 5.0;
        mean_c += cg / 5.0;
        mean_m += m / 5.0;
        std::printf("  seed %llu: pearson %.3f cosent %.3f mse %.3f %s\n",
                    static_cast<unsigned long long>(seed), p, cg, m,
                    order ? "(ordered)" : "(violated)");
    }
    std::printf("  means: pearson %.3f cosent %.3f mse %.3f, seeds ordered %d/5\n", mean_p,
                mean_c, mean_m, ordered);
    return mean_p >= mean_c && mean_c >= mean_m && (mean_p - mean_m) >= 0.03 && ordered >= 4;
}

// multi-task gain over the CTR-only baseline, 3 seeds
bool criterion_4() {
    double mean_gain = 0.0;
    for (std::uint64_t seed = 7; seed <= 9; ++seed) {
        const SeedRun r = build_seed_run(seed);
        const double f_ctr =
            score_student(r, train_student(r, {{LabelSource::Ctr, r.ctr}}, LossId::Pearson,
                                           seed))
                .f1;
        const double f_full =
            score_student(r, train_student(r,
                                           {{LabelSource::Llm, r.llm},
                                            {LabelSource::Ctr, r.ctr},
                                            {LabelSource::Kd, r.kd}},
                                           LossId::Pearson, seed))
                .f1;
        std::printf("  seed %llu: F1 ctr-only %.3f vs llm+ctr+kd %.3f (gain %+.3f)\n",
                    static_cast<unsigned long long>(seed), f_ctr, f_full, f_full - f_ctr);
        mean_gain += (f_full - f_ctr) / 3.0;
    }
    std::printf("  mean gain %+.3f (needs >= +0.05)\n", mean_gain);
    return mean_gain >= 0.05;
}

// knn equals an independent brute-force scan
bool criterion_5() {
    const std::size_t n = 10000, d = 32, q = 1000, k = 10;
    Rng rng(5);
    std::vector<Embedding> corpus(n);
    std::vector<std::int64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids[i] = static_cast<std::int64_t>(i);
        corpus[i].values.resize(d);
        for (double& x : corpus[i].values) x = rng.normal();
        const double nrm = norm2(corpus[i].values);
        for (double& x : corpus[i].values) x /= nrm;
    }
    const Index index = build_index(ids, corpus, d);
    for (std::size_t qi = 0; qi < q; ++qi) {
        Embedding query;
        query.values.resize(d);
        for (double& x : query.values) x = rng.normal();
        const double nrm = norm2(query.values);
        for (double& x : query.values) x /= nrm;
        const RetrievalResult res = knn(index, query, k);
        // independent oracle: full scan with the same tie rule
        std::vector<std::pair<double, std::int64_t>> scored(n);
        for (std::size_t i = 0; i < n; ++i)
            scored[i] = {dot(corpus[i].values, query.values), ids[i]};
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t i = 0; i < k; ++i)
            if (res.ranked[i].first != scored[i].second) {
                std::printf("  mismatch at query %zu rank %zu\n", qi, i);
                return false;
            }
    }
    std::printf("  %zu queries over %zu vectors: identical id lists\n", q, n);
    return true;
}

// prefix-64 retrieval stays close to full-dimension retrieval
bool criterion_6() {
    const SeedRun r = build_seed_run(7);
    const auto student = train_student(r,
                                       {{LabelSource::Ctr, r.ctr},
                                        {LabelSource::Sr, r.sr},
                                        {LabelSource::Llm, r.llm},
                                        {LabelSource::Kd, r.kd}},
                                       LossId::Pearson, 7);
    const Index idx64 = build_student_index(student, r.world, 64);
    const Index idx_full = build_student_index(student, r.world, student.dim());
    std::vector<std::int64_t> items;
    for (const auto& it : r.world.items) items.push_back(it.id);
    const double jaccard =
        mean_jaccard(retrieve_for_items(student, r.world, items, idx64, 20),
                     retrieve_for_items(student, r.world, items, idx_full, 20));
    std::printf("  mean top-20 jaccard (dim 64 vs %zu): %.3f (needs >= 0.8)\n", student.dim(),
                jaccard);
    return jaccard >= 0.8;
}

// hand-traced fixture plus threshold monotonicity
bool criterion_7() {
    SyntheticWorld world;
    world.seed = 99;
    world.n_topics = 1;
    for (std::size_t i = 0; i < 1; ++i) {
        ItemDoc d;
        d.id = 0;
        d.title_tokens.ids = {1};
        d.topic_weights[0] = 1.0;
        world.items.push_back(d);
    }
    for (std::size_t k = 0; k < 3; ++k) {
        Keyphrase kp;
        kp.id = static_cast<std::int64_t>(k);
        kp.tokens.ids = {static_cast<std::int32_t>(2 + k)};
        kp.topic_weights[0] = 1.0;
        world.keyphrases.push_back(kp);
    }
    world.relevance.assign(1, std::vector<bool>(3, true));
    world.sr_score.assign(1, std::vector<double>(3, 1.0));
    const auto student = BiEncoderParams::random(16, 4, 8, 1);
    const Index index = build_student_index(student, world, 8);
    RelevanceFilter filter;
    filter.threshold = 0.5;
    filter.scorer = [](std::int64_t, std::int64_t kp) {
        return kp == 0 ? 0.9 : (kp == 1 ? 0.6 : 0.2);
    };
    ProductionEvalConfig cfg;
    cfg.k = 3;
    const std::map<std::int64_t, std::set<std::int64_t>> other = {{0, {1}}};
    const EvalReport rep = production_eval(world, student, index, other, filter, {0}, cfg);
    const bool fixture_ok = rep.median_kw_cnt == 1.0;
    std::printf("  fixture median %.1f (needs exactly 1.0)\n", rep.median_kw_cnt);

    bool monotone = true;
    double prev = -1.0;
    for (double threshold : {0.95, 0.7, 0.55, 0.3, 0.1}) {
        RelevanceFilter f2;
        f2.threshold = threshold;
        f2.scorer = filter.scorer;
        const EvalReport r2 = production_eval(world, student, index, {}, f2, {0}, cfg);
        if (r2.median_kw_cnt < prev) monotone = false;
        prev = r2.median_kw_cnt;
    }
    std::printf("  5-point filter sweep monotone: %s\n", monotone ? "yes" : "no");
    return fixture_ok && monotone;
}

// middleman subset property and MNAR witness at the default configuration
bool criterion_8() {
    const PipelineConfig defaults;
    const SyntheticWorld world = generate_world(defaults.world);
    const SearchLogs logs = simulate_search_logs(world, defaults.logs);
    std::size_t below = 0;
    for (const auto& p : logs.ctr_positives)
        if (world.sr_score[static_cast<std::size_t>(p.item_id)]
                          [static_cast<std::size_t>(p.keyphrase_id)] <
            defaults.logs.sr_filter_threshold)
            ++below;
    std::set<std::pair<std::int64_t, std::int64_t>> clicked;
    for (const auto& log : logs.logs)
        if (log.clicks > 0) clicked.insert({log.item_id, log.keyphrase_id});
    std::size_t witnesses = 0;
    for (std::size_t i = 0; i < world.items.size(); ++i)
        for (std::size_t k = 0; k < world.keyphrases.size(); ++k)
            if (world.relevance[i][k] &&
                !clicked.count({static_cast<std::int64_t>(i), static_cast<std::int64_t>(k)}))
                ++witnesses;
    std::printf("  ctr positives %zu, below-filter %zu, relevant-unclicked witnesses %zu\n",
                logs.ctr_positives.size(), below, witnesses);
    return !logs.ctr_positives.empty() && below == 0 && witnesses >= 1;
}

// multinomial 3-sigma bound on per-source batch counts
bool criterion_9() {
    // sizes 8000/2000 at batch 100: 100 slots, p=0.8, 3 sigma = 12
    bool ok = true;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto schedule = make_schedule(
            {{LabelSource::Ctr, 8000}, {LabelSource::Sr, 2000}}, 100, 1, seed);
        if (schedule.size() != 100) ok = false;
        std::size_t a = 0;
        for (const auto& b : schedule) a += b.source == LabelSource::Ctr ? 1 : 0;
        if (a < 68 || a > 92) {
            std::printf("  seed %llu: count %zu outside [68, 92]\n",
                        static_cast<unsigned long long>(seed), a);
            ok = false;
        }
    }
    if (ok) std::printf("  20 seeds within the 3-sigma bound [68, 92]\n");
    return ok;
}

// ablate reruns produce byte-identical report json
bool criterion_10() {
    nlohmann::json cfg;
    cfg["seed"] = 7;
    cfg["trainer"] = {{"epochs_bi", 3}, {"epochs_cross", 3}};
    cfg["labels"] = {{"n_pairs", 3000}};
    cfg["evaluation"] = {{"item_sample_size", 40},
                         {"n_eval_pairs", 1000},
                         {"judge_sample_size", 2000}};
    cfg["ablate_combos"] = {{"CTR"}, {"LLM", "KD"}, {"LLM", "CTR", "KD"}};
    std::string first, second;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir =
            fs::temp_directory_path() / "kpd_acceptance" / ("ablate_" + std::to_string(run));
        fs::remove_all(dir);
        fs::create_directories(dir);
        nlohmann::json run_cfg = cfg;
        run_cfg["output_dir"] = (dir / "out").string();
        Pipeline pipeline(parse_pipeline_config(run_cfg), run_cfg);
        pipeline.gen();
        pipeline.train_cross_stage();
        pipeline.kd_score_stage();
        pipeline.ablate_stage();
        (run == 0 ? first : second) = read_file(dir / "out" / "ablate_report.json");
    }
    std::printf("  ablate report bytes: %zu vs %zu, identical: %s\n", first.size(),
                second.size(), first == second ? "yes" : "no");
    return !first.empty() && first == second;
}

struct Criterion {
    int number;
    const char* title;
    std::function<bool()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient correctness (losses + backprop, fd eps 1e-5, rel err < 1e-4)",
         criterion_1},
        {2, "loss identities (lnK, pearson 0/2, cosent empty, mse zero, hinge)", criterion_2},
        {3, "kd-loss ordering pearson >= cosent >= mse over 5 seeds", criterion_3},
        {4, "multi-task gain >= 5 F1 points over ctr-only, 3 seeds", criterion_4},
        {5, "knn equals brute-force scan on 10^3 queries over 10^4 vectors", criterion_5},
        {6, "matryoshka prefix-64 retrieval jaccard >= 0.8", criterion_6},
        {7, "production-settings fixture and filter monotonicity", criterion_7},
        {8, "middleman subset and MNAR witness at defaults", criterion_8},
        {9, "scheduler proportionality 3-sigma over 20 seeds", criterion_9},
        {10, "ablate reruns byte-identical", criterion_10},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    bool all_ok = true;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.number)) continue;
        const double start = now_seconds();
        bool ok = false;
        try {
            ok = c.run();
        } catch (const std::exception& e) {
            std::printf("  exception: %s\n", e.what());
        }
        std::printf("%s criterion %d: %s (%.1fs)\n", ok ? "PASS" : "FAIL", c.number, c.title,
                    now_seconds() - start);
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
