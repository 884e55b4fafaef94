#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/losses.hpp"
#include "kpdistill/numerics.hpp"
#include "kpdistill/rng.hpp"
#include "kpdistill/synthworld.hpp"

namespace kpd {

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 4;
    std::uint64_t seed = 7;
    // label source -> loss id; the defaults follow the multi-task mapping:
    // CTR batches use in-batch negatives, SR/LLM batches the contrastive
    // loss on binary labels, KD batches the rank-imitation loss.
    std::map<LabelSource, LossId> task_map = {
        {LabelSource::Ctr, LossId::Mnr},
        {LabelSource::Sr, LossId::Contrastive},
        {LabelSource::Llm, LossId::Contrastive},
        {LabelSource::Kd, LossId::Pearson},
    };
    std::map<LabelSource, bool> matryoshka_by_task;  // default: all wrapped
    bool matryoshka_enabled = true;
    MatryoshkaConfig matryoshka;
    LossConfigs losses;
    OptimizerConfig optimizer;

    bool task_matryoshka(LabelSource s) const {
        if (!matryoshka_enabled) return false;
        const auto it = matryoshka_by_task.find(s);
        return it == matryoshka_by_task.end() ? true : it->second;
    }
};

inline void validate(const TrainConfig& cfg, std::size_t embedding_dim) {
    require(cfg.batch_size >= 2, ErrorKind::Config, "trainer: batch_size must be >= 2");
    if (cfg.matryoshka_enabled) {
        validate(cfg.matryoshka, embedding_dim);
        require(embedding_dim % cfg.matryoshka.dims.front() == 0, ErrorKind::Config,
                "trainer: embedding dim must be divisible by the smallest matryoshka dim");
    }
}

struct TrainStep {
    std::uint64_t step = 0;
    LabelSource source = LabelSource::Ctr;
    double loss = 0.0;
};

struct EpochStat {
    std::size_t epoch = 0;
    std::map<LabelSource, double> mean_loss;
    std::map<LabelSource, std::size_t> batches;
};

struct TrainHistory {
    std::vector<TrainStep> steps;
    std::vector<EpochStat> epochs;

    std::string to_jsonl() const {
        std::string out;
        for (const auto& s : steps) {
            nlohmann::json j;
            j["step"] = s.step;
            j["source"] = label_source_name(s.source);
            j["loss"] = s.loss;
            out += j.dump();
            out += '\n';
        }
        return out;
    }
};

// --- batch scheduling ---------------------------------------------------------

struct ScheduledBatch {
    LabelSource source = LabelSource::Ctr;
    std::vector<std::size_t> indices;  // rows into that source's dataset
};

namespace detail {

// Per-source stream of index batches: each epoch is a fresh seeded permutation
// chunked into batch_size pieces, with a final chunk below 2 rows dropped.
class SourceStream {
public:
    SourceStream(LabelSource source, std::size_t size, std::size_t batch_size,
                 std::uint64_t seed)
        : source_(source), size_(size), batch_size_(batch_size), seed_(seed) {}

    std::size_t batches_per_epoch() const {
        const std::size_t full = size_ / batch_size_;
        const std::size_t rem = size_ % batch_size_;
        return full + (rem >= 2 ? 1 : 0);
    }

    std::vector<std::size_t> next_batch() {
        if (queue_.empty()) refill();
        auto batch = std::move(queue_.front());
        queue_.pop_front();
        return batch;
    }

private:
    void refill() {
        Rng rng(hash3(seed_, static_cast<std::uint64_t>(source_), epoch_));
        ++epoch_;
        std::vector<std::size_t> perm = rng.permutation(size_);
        std::size_t pos = 0;
        while (pos < perm.size()) {
            const std::size_t take = std::min(batch_size_, perm.size() - pos);
            if (take < 2) break;  // drop a trailing partial batch below 2 rows
            queue_.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                perm.begin() + static_cast<std::ptrdiff_t>(pos + take));
            pos += take;
        }
    }

    LabelSource source_;
    std::size_t size_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::deque<std::vector<std::size_t>> queue_;
};

}  // namespace detail

// Single-source batches, sources drawn per slot in proportion to dataset size,
// indices cycling through per-epoch permutations without replacement. The
// total slot count is epochs x (sum of per-source batches per epoch).
inline std::vector<ScheduledBatch> make_schedule(
    const std::map<LabelSource, std::size_t>& dataset_sizes, std::size_t batch_size,
    std::size_t epochs, std::uint64_t seed) {
    require(batch_size >= 2, ErrorKind::Config, "make_schedule: batch_size must be >= 2");
    std::vector<LabelSource> sources;
    std::vector<detail::SourceStream> streams;
    std::vector<double> weights;
    double total_size = 0.0;
    std::size_t slots_per_epoch = 0;
    for (const auto& [source, size] : dataset_sizes) {
        if (size == 0) continue;  // empty sources are excluded
        detail::SourceStream stream(source, size, batch_size, seed);
        if (stream.batches_per_epoch() == 0) continue;  // size 1: no valid batch
        sources.push_back(source);
        weights.push_back(static_cast<double>(size));
        slots_per_epoch += stream.batches_per_epoch();
        total_size += static_cast<double>(size);
        streams.push_back(std::move(stream));
    }
    require(!sources.empty(), ErrorKind::Config,
            "make_schedule: all datasets are empty or too small to batch");
    for (double& w : weights) w /= total_size;

    const std::size_t total_slots = epochs * slots_per_epoch;
    std::vector<ScheduledBatch> schedule;
    schedule.reserve(total_slots);
    Rng rng(hash2(seed, 0x7363686564ULL));
    for (std::size_t slot = 0; slot < total_slots; ++slot) {
        const double u = rng.uniform01();
        double acc = 0.0;
        std::size_t pick = sources.size() - 1;
        for (std::size_t s = 0; s < sources.size(); ++s) {
            acc += weights[s];
            if (u < acc) {
                pick = s;
                break;
            }
        }
        schedule.push_back(ScheduledBatch{sources[pick], streams[pick].next_batch()});
    }
    return schedule;
}

// --- cross-encoder training -----------------------------------------------------

// A scoring example materialized from the world: keyphrase, category, title
// plus a binary judge label.
struct CrossExample {
    TokenSeq keyphrase;
    TokenSeq category;
    TokenSeq title;
    double label = 0.0;
};

inline std::vector<CrossExample> materialize_cross_examples(
    const SyntheticWorld& world, const std::vector<LabeledPair>& pairs) {
    std::vector<CrossExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        CrossExample ex;
        ex.keyphrase = world.keyphrase(p.keyphrase_id).tokens;
        ex.category = world.item(p.item_id).category_tokens;
        ex.title = world.item(p.item_id).title_tokens;
        ex.label = p.value;
        out.push_back(std::move(ex));
    }
    return out;
}

// Numerically stable binary cross entropy from the logit.
inline double bce_from_logit(double logit, double label) {
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

// Fine-tune the joint scorer on judge labels with cross entropy. The dataset
// must contain both classes.
inline TrainHistory train_cross(CrossEncoderParams& params,
                                const std::vector<CrossExample>& examples,
                                const TrainConfig& cfg) {
    bool has_pos = false, has_neg = false;
    for (const auto& ex : examples) {
        require(ex.label == 0.0 || ex.label == 1.0, ErrorKind::Config,
                "train_cross: labels must be binary");
        (ex.label == 1.0 ? has_pos : has_neg) = true;
    }
    require(has_pos && has_neg, ErrorKind::DegenerateData,
            "train_cross: dataset must contain both classes");
    require(cfg.batch_size >= 2, ErrorKind::Config, "train_cross: batch_size must be >= 2");

    TrainHistory history;
    OptimizerState opt;
    opt.kind = cfg.optimizer.kind;
    opt.learning_rate = cfg.optimizer.learning_rate;
    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(hash3(cfg.seed, 0x63726F7373ULL, epoch));
        const std::vector<std::size_t> perm = rng.permutation(examples.size());
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        std::size_t pos = 0;
        while (pos < perm.size()) {
            const std::size_t take = std::min(cfg.batch_size, perm.size() - pos);
            if (take < 2) break;
            CrossEncoderGrads grads = CrossEncoderGrads::zeros_like(params);
            double batch_loss = 0.0;
            for (std::size_t r = 0; r < take; ++r) {
                const CrossExample& ex = examples[perm[pos + r]];
                const CrossForward f =
                    score_cross_cached(params, ex.keyphrase, ex.category, ex.title);
                batch_loss += bce_from_logit(f.logit, ex.label);
                const double d_logit = (f.score - ex.label) / static_cast<double>(take);
                score_cross_backward(params, f, d_logit, grads);
            }
            batch_loss /= static_cast<double>(take);
            pos += take;
            optimizer_step(
                {&params.token_table, &params.w1, &params.b1, &params.w2, &params.b2},
                {&grads.d_token_table, &grads.d_w1, &grads.d_b1, &grads.d_w2, &grads.d_b2},
                opt);
            history.steps.push_back(TrainStep{step++, LabelSource::Llm, batch_loss});
            epoch_loss += batch_loss;
            ++epoch_batches;
        }
        if (epoch_batches > 0) {
            EpochStat stat;
            stat.epoch = epoch;
            stat.mean_loss[LabelSource::Llm] = epoch_loss / static_cast<double>(epoch_batches);
            stat.batches[LabelSource::Llm] = epoch_batches;
            history.epochs.push_back(stat);
        }
    }
    if (cfg.epochs > 0) params.trained = true;
    return history;
}

inline double cross_accuracy(const CrossEncoderParams& params,
                             const std::vector<CrossExample>& examples,
                             double threshold = 0.5) {
    require(!examples.empty(), ErrorKind::EmptyInput, "cross_accuracy: no examples");
    std::size_t correct = 0;
    for (const auto& ex : examples) {
        const double s = score_cross(params, ex.keyphrase, ex.category, ex.title);
        const double pred = s >= threshold ? 1.0 : 0.0;
        if (pred == ex.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

// --- bi-encoder multi-task training ----------------------------------------------

using EpochCallback = std::function<void(std::size_t epoch, const BiEncoderParams& params)>;

// Runs the proportional single-source schedule and dispatches each batch to
// the loss mapped for its label source. Epoch statistics are computed over
// consecutive windows of the schedule (one window per configured epoch).
inline TrainHistory train_bi(BiEncoderParams& params, const SyntheticWorld& world,
                             const std::map<LabelSource, std::vector<LabeledPair>>& datasets,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    validate(cfg, params.dim());
    std::map<LabelSource, std::size_t> sizes;
    for (const auto& [source, pairs] : datasets) {
        require(cfg.task_map.count(source) > 0, ErrorKind::Config,
                std::string("train_bi: no loss mapped for source ") + label_source_name(source));
        validate_dataset(pairs);
        sizes[source] = pairs.size();
    }
    require(!sizes.empty(), ErrorKind::Config, "train_bi: no datasets provided");

    // materialize token sequences once per source
    struct SourceRows {
        std::vector<TokenSeq> items;
        std::vector<TokenSeq> kps;
        std::vector<double> targets;
    };
    std::map<LabelSource, SourceRows> rows;
    for (const auto& [source, pairs] : datasets) {
        SourceRows& r = rows[source];
        r.items.reserve(pairs.size());
        for (const auto& p : pairs) {
            r.items.push_back(world.item_text(p.item_id));
            r.kps.push_back(world.keyphrase(p.keyphrase_id).tokens);
            r.targets.push_back(p.value);
        }
    }

    const auto schedule = make_schedule(sizes, cfg.batch_size, cfg.epochs, cfg.seed);
    const std::size_t slots_per_epoch = cfg.epochs > 0 ? schedule.size() / cfg.epochs : 0;

    OptimizerState opt;
    opt.kind = cfg.optimizer.kind;
    opt.learning_rate = cfg.optimizer.learning_rate;

    TrainHistory history;
    std::map<LabelSource, double> window_loss;
    std::map<LabelSource, std::size_t> window_batches;
    std::size_t epoch_index = 0;
    for (std::size_t slot = 0; slot < schedule.size(); ++slot) {
        const ScheduledBatch& sb = schedule[slot];
        const SourceRows& src = rows.at(sb.source);
        PairBatch batch;
        batch.items.reserve(sb.indices.size());
        for (std::size_t idx : sb.indices) {
            batch.items.push_back(src.items[idx]);
            batch.keyphrases.push_back(src.kps[idx]);
            batch.targets.push_back(src.targets[idx]);
        }
        BiLossSpec spec;
        spec.loss = cfg.task_map.at(sb.source);
        spec.configs = cfg.losses;
        spec.matryoshka = cfg.task_matryoshka(sb.source);
        spec.matryoshka_cfg = cfg.matryoshka;
        const BackpropResult res = backprop(params, batch, spec);
        optimizer_step({&params.token_table, &params.projection},
                       {&res.grads.d_token_table, &res.grads.d_projection}, opt);
        history.steps.push_back(
            TrainStep{static_cast<std::uint64_t>(slot), sb.source, res.loss});
        window_loss[sb.source] += res.loss;
        ++window_batches[sb.source];
        const bool window_end =
            slots_per_epoch > 0 && (slot + 1) % slots_per_epoch == 0;
        if (window_end) {
            EpochStat stat;
            stat.epoch = epoch_index;
            for (const auto& [source, total] : window_loss)
                stat.mean_loss[source] = total / static_cast<double>(window_batches[source]);
            stat.batches = window_batches;
            history.epochs.push_back(stat);
            window_loss.clear();
            window_batches.clear();
            if (on_epoch) on_epoch(epoch_index, params);
            ++epoch_index;
        }
    }
    return history;
}

}  // namespace kpd
