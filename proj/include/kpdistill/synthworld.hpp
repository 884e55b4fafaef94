#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/rng.hpp"

namespace kpd {

enum class LabelSource { Ctr, Sr, Llm, Kd };

inline const char* label_source_name(LabelSource s) {
    switch (s) {
        case LabelSource::Ctr: return "CTR";
        case LabelSource::Sr: return "SR";
        case LabelSource::Llm: return "LLM";
        case LabelSource::Kd: return "KD";
    }
    return "?";
}

inline LabelSource parse_label_source(const std::string& s) {
    if (s == "CTR") return LabelSource::Ctr;
    if (s == "SR") return LabelSource::Sr;
    if (s == "LLM") return LabelSource::Llm;
    if (s == "KD") return LabelSource::Kd;
    throw_error(ErrorKind::Config, "unknown label source '" + s + "'");
}

struct LabeledPair {
    std::int64_t item_id = 0;
    std::int64_t keyphrase_id = 0;
    LabelSource source = LabelSource::Ctr;
    double value = 0.0;

    bool operator==(const LabeledPair&) const = default;
};

struct ItemDoc {
    std::int64_t id = 0;
    TokenSeq title_tokens;
    TokenSeq category_tokens;
    std::map<std::int32_t, double> topic_weights;  // sparse, sums to 1
};

struct Keyphrase {
    std::int64_t id = 0;
    TokenSeq tokens;
    std::map<std::int32_t, double> topic_weights;
};

struct ClickLog {
    std::int64_t item_id = 0;
    std::int64_t keyphrase_id = 0;
    std::int64_t impressions = 0;
    std::int64_t clicks = 0;
};

struct WorldConfig {
    std::uint64_t seed = 7;
    std::size_t n_topics = 8;
    std::size_t n_items = 200;
    std::size_t n_keyphrases = 500;
    std::size_t vocab_size = 256;
    std::size_t title_len_min = 3;
    std::size_t title_len_max = 8;
    double relevance_threshold = 0.35;
    double sr_gain = 6.0;      // slope of the logistic on topic affinity
    double sr_noise_sd = 1.0;  // gaussian noise inside the logistic
};

struct SyntheticWorld {
    std::uint64_t seed = 0;
    std::size_t n_topics = 0;
    std::vector<ItemDoc> items;
    std::vector<Keyphrase> keyphrases;
    std::vector<std::vector<bool>> relevance;    // item x keyphrase ground truth
    std::vector<std::vector<double>> sr_score;   // item x keyphrase in [0,1]

    const ItemDoc& item(std::int64_t id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < items.size(), ErrorKind::Lookup,
                "unknown item id " + std::to_string(id));
        return items[static_cast<std::size_t>(id)];
    }
    const Keyphrase& keyphrase(std::int64_t id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < keyphrases.size(), ErrorKind::Lookup,
                "unknown keyphrase id " + std::to_string(id));
        return keyphrases[static_cast<std::size_t>(id)];
    }
    // Bi-encoder item text is the title concatenated with the category.
    TokenSeq item_text(std::int64_t id) const {
        const ItemDoc& doc = item(id);
        TokenSeq seq = doc.title_tokens;
        seq.ids.insert(seq.ids.end(), doc.category_tokens.ids.begin(),
                       doc.category_tokens.ids.end());
        return seq;
    }
};

// Cosine similarity of two sparse topic-weight maps.
inline double topic_affinity(const std::map<std::int32_t, double>& a,
                             const std::map<std::int32_t, double>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [t, w] : a) {
        na += w * w;
        const auto it = b.find(t);
        if (it != b.end()) num += w * it->second;
    }
    for (const auto& [t, w] : b) nb += w * w;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / std::sqrt(na * nb);
}

namespace detail {

// Tokens carry topical signal: each vocab slot has a home topic, and texts
// draw tokens from their active topics.
inline std::int32_t draw_topic_token(Rng& rng, std::int32_t topic, std::size_t n_topics,
                                     std::size_t vocab_size) {
    // hashed tokens live in [1, vocab); slot 0 is the separator
    const std::size_t usable = vocab_size - 1;
    const std::size_t per_topic = usable / n_topics;
    if (per_topic == 0) return 1 + static_cast<std::int32_t>(rng.uniform_below(usable));
    const std::size_t base = static_cast<std::size_t>(topic) * per_topic;
    return 1 + static_cast<std::int32_t>(base + rng.uniform_below(per_topic));
}

// One dominant topic plus zero or more minor ones. Concentrated weights keep
// the affinity distribution away from the relevance threshold, so relevance
// is mostly decided by whether the dominant topics coincide.
inline std::map<std::int32_t, double> draw_topic_weights(Rng& rng, std::size_t n_topics,
                                                         std::size_t max_active) {
    const std::size_t active = 1 + rng.uniform_below(std::min(max_active, n_topics));
    std::vector<std::size_t> topics(n_topics);
    for (std::size_t i = 0; i < n_topics; ++i) topics[i] = i;
    rng.shuffle(topics);
    std::map<std::int32_t, double> weights;
    double total = 1.0;
    weights[static_cast<std::int32_t>(topics[0])] = 1.0;
    for (std::size_t i = 1; i < active; ++i) {
        const double w = 0.15 + 0.25 * rng.uniform01();
        weights[static_cast<std::int32_t>(topics[i])] = w;
        total += w;
    }
    for (auto& [t, w] : weights) w /= total;
    return weights;
}

inline std::int32_t sample_weighted_topic(Rng& rng,
                                          const std::map<std::int32_t, double>& weights) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (const auto& [t, w] : weights) {
        acc += w;
        if (u < acc) return t;
    }
    return weights.rbegin()->first;
}

}  // namespace detail

inline void validate(const WorldConfig& c) {
    require(c.n_topics >= 1, ErrorKind::Config, "world config: n_topics must be >= 1");
    require(c.n_items >= 1, ErrorKind::Config, "world config: n_items must be >= 1");
    require(c.n_keyphrases >= 1, ErrorKind::Config, "world config: n_keyphrases must be >= 1");
    require(c.vocab_size >= 2, ErrorKind::Config, "world config: vocab_size must be >= 2");
    require(c.vocab_size >= c.n_topics, ErrorKind::Config,
            "world config: vocab_size must be >= n_topics");
    require(c.title_len_min >= 1, ErrorKind::Config, "world config: title_len_min must be >= 1");
    require(c.title_len_max >= c.title_len_min, ErrorKind::Config,
            "world config: title_len_max must be >= title_len_min");
    require(c.relevance_threshold >= 0.0 && c.relevance_threshold <= 1.0, ErrorKind::Config,
            "world config: relevance_threshold must be in [0,1]");
    require(c.sr_gain > 0.0, ErrorKind::Config, "world config: sr_gain must be > 0");
    require(c.sr_noise_sd >= 0.0, ErrorKind::Config, "world config: sr_noise_sd must be >= 0");
}

// Deterministic synthetic marketplace: latent topics drive titles, keyphrases,
// ground-truth relevance (topic cosine against a threshold) and a noisy
// search-relevance score surface.
inline SyntheticWorld generate_world(const WorldConfig& cfg) {
    validate(cfg);
    SyntheticWorld w;
    w.seed = cfg.seed;
    w.n_topics = cfg.n_topics;

    Rng item_rng(hash2(cfg.seed, 0x6974656D73ULL));
    w.items.resize(cfg.n_items);
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
        ItemDoc& doc = w.items[i];
        doc.id = static_cast<std::int64_t>(i);
        doc.topic_weights = detail::draw_topic_weights(item_rng, cfg.n_topics, 3);
        const std::size_t len =
            cfg.title_len_min + item_rng.uniform_below(cfg.title_len_max - cfg.title_len_min + 1);
        for (std::size_t t = 0; t < len; ++t) {
            const std::int32_t topic = detail::sample_weighted_topic(item_rng, doc.topic_weights);
            doc.title_tokens.ids.push_back(
                detail::draw_topic_token(item_rng, topic, cfg.n_topics, cfg.vocab_size));
        }
        // category: 1-2 tokens keyed to the dominant topic
        std::int32_t dominant = doc.topic_weights.begin()->first;
        double best = -1.0;
        for (const auto& [t, wt] : doc.topic_weights)
            if (wt > best) {
                best = wt;
                dominant = t;
            }
        const std::size_t cat_len = 1 + item_rng.uniform_below(2);
        for (std::size_t t = 0; t < cat_len; ++t)
            doc.category_tokens.ids.push_back(
                detail::draw_topic_token(item_rng, dominant, cfg.n_topics, cfg.vocab_size));
    }

    Rng kp_rng(hash2(cfg.seed, 0x6B707321ULL));
    w.keyphrases.resize(cfg.n_keyphrases);
    for (std::size_t k = 0; k < cfg.n_keyphrases; ++k) {
        Keyphrase& kp = w.keyphrases[k];
        kp.id = static_cast<std::int64_t>(k);
        kp.topic_weights = detail::draw_topic_weights(kp_rng, cfg.n_topics, 2);
        const std::size_t len = 2 + kp_rng.uniform_below(4);
        for (std::size_t t = 0; t < len; ++t) {
            const std::int32_t topic = detail::sample_weighted_topic(kp_rng, kp.topic_weights);
            kp.tokens.ids.push_back(
                detail::draw_topic_token(kp_rng, topic, cfg.n_topics, cfg.vocab_size));
        }
    }

    Rng sr_rng(hash2(cfg.seed, 0x73725F6EULL));
    w.relevance.assign(cfg.n_items, std::vector<bool>(cfg.n_keyphrases, false));
    w.sr_score.assign(cfg.n_items, std::vector<double>(cfg.n_keyphrases, 0.0));
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
        for (std::size_t k = 0; k < cfg.n_keyphrases; ++k) {
            const double affinity =
                topic_affinity(w.items[i].topic_weights, w.keyphrases[k].topic_weights);
            w.relevance[i][k] = affinity >= cfg.relevance_threshold;
            const double noise = cfg.sr_noise_sd > 0.0 ? sr_rng.normal() * cfg.sr_noise_sd : 0.0;
            w.sr_score[i][k] =
                sigmoid(cfg.sr_gain * (affinity - cfg.relevance_threshold) + noise);
        }
    }
    return w;
}

// --- search log simulation ---------------------------------------------------

struct LogSimConfig {
    std::int64_t n_impressions = 300000;
    double position_decay = 0.5;       // click prob multiplier per rank step
    double sr_filter_threshold = 0.6;  // middleman filter on sr_score
    double ctr_threshold = 0.05;
    std::int64_t min_impressions = 20;
    std::int64_t min_clicks = 2;
};

inline void validate(const LogSimConfig& c) {
    require(c.n_impressions >= 1, ErrorKind::Config, "log config: n_impressions must be >= 1");
    require(c.position_decay > 0.0 && c.position_decay <= 1.0, ErrorKind::Config,
            "log config: position_decay must be in (0,1]");
    require(c.sr_filter_threshold >= 0.0 && c.sr_filter_threshold <= 1.0, ErrorKind::Config,
            "log config: sr_filter_threshold must be in [0,1]");
    require(c.ctr_threshold >= 0.0 && c.ctr_threshold <= 1.0, ErrorKind::Config,
            "log config: ctr_threshold must be in [0,1]");
    require(c.min_impressions >= 1, ErrorKind::Config,
            "log config: min_impressions must be >= 1");
    require(c.min_clicks >= 0, ErrorKind::Config, "log config: min_clicks must be >= 0");
}

struct SearchLogs {
    std::vector<ClickLog> logs;              // only pairs that passed the SR filter
    std::vector<LabeledPair> ctr_positives;  // source=CTR, value 1.0
};

// CTR emission rule, split out so the noise thresholds are testable directly.
inline bool ctr_positive(const ClickLog& log, const LogSimConfig& cfg) {
    if (log.impressions < cfg.min_impressions) return false;
    if (log.clicks < cfg.min_clicks) return false;
    return static_cast<double>(log.clicks) >=
           cfg.ctr_threshold * static_cast<double>(log.impressions);
}

// Impressions land only on filter-passing pairs (middleman bias); clicks fire
// with probability rel(i,k) * decay^rank where rank orders the item's eligible
// keyphrases by sr_score (position bias). Everything derives from world.seed.
inline SearchLogs simulate_search_logs(const SyntheticWorld& world, const LogSimConfig& cfg) {
    validate(cfg);
    require(!world.sr_score.empty() && !world.sr_score[0].empty(), ErrorKind::InvalidWorld,
            "simulate_search_logs: world has an empty sr_score matrix");
    const std::size_t n_items = world.items.size();

    // eligible keyphrases per item, ranked by sr_score desc (ties: id asc)
    std::vector<std::vector<std::size_t>> eligible(n_items);
    std::vector<std::size_t> items_with_any;
    for (std::size_t i = 0; i < n_items; ++i) {
        std::vector<std::size_t>& list = eligible[i];
        for (std::size_t k = 0; k < world.sr_score[i].size(); ++k)
            if (world.sr_score[i][k] >= cfg.sr_filter_threshold) list.push_back(k);
        std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
            if (world.sr_score[i][a] != world.sr_score[i][b])
                return world.sr_score[i][a] > world.sr_score[i][b];
            return a < b;
        });
        if (!list.empty()) items_with_any.push_back(i);
    }

    SearchLogs out;
    if (items_with_any.empty()) return out;

    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::int64_t, std::int64_t>> counts;
    Rng rng(hash2(world.seed, 0x636C69636B73ULL));
    for (std::int64_t imp = 0; imp < cfg.n_impressions; ++imp) {
        const std::size_t i =
            items_with_any[rng.uniform_below(items_with_any.size())];
        const std::size_t rank = rng.uniform_below(eligible[i].size());
        const std::size_t k = eligible[i][rank];
        auto& [imps, clicks] = counts[{i, k}];
        ++imps;
        if (world.relevance[i][k]) {
            const double p = std::pow(cfg.position_decay, static_cast<double>(rank));
            if (rng.uniform01() < p) ++clicks;
        }
    }
    for (const auto& [key, val] : counts) {
        ClickLog log;
        log.item_id = static_cast<std::int64_t>(key.first);
        log.keyphrase_id = static_cast<std::int64_t>(key.second);
        log.impressions = val.first;
        log.clicks = val.second;
        out.logs.push_back(log);
        if (ctr_positive(log, cfg))
            out.ctr_positives.push_back(LabeledPair{log.item_id, log.keyphrase_id,
                                                    LabelSource::Ctr, 1.0});
    }
    return out;
}

// --- SR and judge labels -------------------------------------------------------

struct SrLabelSet {
    std::vector<LabeledPair> pairs;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

inline SrLabelSet sr_labels(const SyntheticWorld& world,
                            const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs,
                            double threshold) {
    require(threshold >= 0.0 && threshold <= 1.0, ErrorKind::Config,
            "sr_labels: threshold must be in [0,1]");
    SrLabelSet out;
    out.pairs.reserve(pairs.size());
    for (const auto& [item, kp] : pairs) {
        world.item(item);
        world.keyphrase(kp);
        const double score = world.sr_score[static_cast<std::size_t>(item)]
                                           [static_cast<std::size_t>(kp)];
        const double value = score >= threshold ? 1.0 : 0.0;  // >= : boundary is positive
        out.pairs.push_back(LabeledPair{item, kp, LabelSource::Sr, value});
        if (value == 1.0)
            ++out.positives;
        else
            ++out.negatives;
    }
    return out;
}

// Ground truth flipped independently with probability noise_rate,
// deterministic in (world.seed, item, keyphrase).
inline double judge(const SyntheticWorld& world, std::int64_t item_id, std::int64_t kp_id,
                    double noise_rate) {
    require(noise_rate >= 0.0 && noise_rate < 0.5, ErrorKind::Config,
            "judge: noise_rate must be in [0, 0.5)");
    world.item(item_id);
    world.keyphrase(kp_id);
    const bool truth = world.relevance[static_cast<std::size_t>(item_id)]
                                      [static_cast<std::size_t>(kp_id)];
    const std::uint64_t h = hash3(hash2(world.seed, 0x6A75646765ULL),
                                  static_cast<std::uint64_t>(item_id),
                                  static_cast<std::uint64_t>(kp_id));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    const bool flip = u < noise_rate;
    return (truth != flip) ? 1.0 : 0.0;
}

inline std::vector<LabeledPair> llm_labels(
    const SyntheticWorld& world,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs, double noise_rate) {
    std::vector<LabeledPair> out;
    out.reserve(pairs.size());
    for (const auto& [item, kp] : pairs)
        out.push_back(LabeledPair{item, kp, LabelSource::Llm, judge(world, item, kp, noise_rate)});
    return out;
}

// Deduplicated uniform sample of item x keyphrase pairs; the pool that the SR
// and LLM label sets share.
inline std::vector<std::pair<std::int64_t, std::int64_t>> sample_pairs(
    const SyntheticWorld& world, std::size_t count, std::uint64_t stream) {
    Rng rng(hash2(world.seed, stream));
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    std::map<std::pair<std::int64_t, std::int64_t>, bool> seen;
    const std::size_t universe = world.items.size() * world.keyphrases.size();
    const std::size_t target = std::min(count, universe);
    while (out.size() < target) {
        const auto item = static_cast<std::int64_t>(rng.uniform_below(world.items.size()));
        const auto kp = static_cast<std::int64_t>(rng.uniform_below(world.keyphrases.size()));
        if (seen.emplace(std::make_pair(item, kp), true).second) out.emplace_back(item, kp);
    }
    return out;
}

// --- dataset invariants and serialization ---------------------------------------

inline void validate_dataset(const std::vector<LabeledPair>& pairs) {
    for (const auto& p : pairs) {
        switch (p.source) {
            case LabelSource::Ctr:
                require(p.value == 1.0, ErrorKind::InvalidWorld,
                        "CTR pairs are positives-only with value 1.0");
                break;
            case LabelSource::Sr:
            case LabelSource::Llm:
                require(p.value == 0.0 || p.value == 1.0, ErrorKind::InvalidWorld,
                        "SR/LLM pairs must carry binary values");
                break;
            case LabelSource::Kd:
                require(p.value >= 0.0 && p.value <= 1.0, ErrorKind::InvalidWorld,
                        "KD pairs must carry values in [0,1]");
                break;
        }
    }
}

// One pair per line: {"item":int,"kp":int,"src":"CTR|SR|LLM|KD","v":float}
inline std::string to_jsonl(const std::vector<LabeledPair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        nlohmann::json j;
        j["item"] = p.item_id;
        j["kp"] = p.keyphrase_id;
        j["src"] = label_source_name(p.source);
        j["v"] = p.value;
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::vector<LabeledPair> from_jsonl(const std::string& text) {
    std::vector<LabeledPair> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        LabeledPair p;
        p.item_id = j.at("item").get<std::int64_t>();
        p.keyphrase_id = j.at("kp").get<std::int64_t>();
        p.source = parse_label_source(j.at("src").get<std::string>());
        p.value = j.at("v").get<double>();
        out.push_back(p);
    }
    validate_dataset(out);
    return out;
}

inline nlohmann::json world_to_json(const SyntheticWorld& w) {
    nlohmann::json j;
    j["seed"] = w.seed;
    j["n_topics"] = w.n_topics;
    auto weights_json = [](const std::map<std::int32_t, double>& m) {
        nlohmann::json o = nlohmann::json::object();
        for (const auto& [t, wt] : m) o[std::to_string(t)] = wt;
        return o;
    };
    j["items"] = nlohmann::json::array();
    for (const auto& it : w.items) {
        nlohmann::json o;
        o["id"] = it.id;
        o["title"] = it.title_tokens.ids;
        o["category"] = it.category_tokens.ids;
        o["topics"] = weights_json(it.topic_weights);
        j["items"].push_back(o);
    }
    j["keyphrases"] = nlohmann::json::array();
    for (const auto& kp : w.keyphrases) {
        nlohmann::json o;
        o["id"] = kp.id;
        o["tokens"] = kp.tokens.ids;
        o["topics"] = weights_json(kp.topic_weights);
        j["keyphrases"].push_back(o);
    }
    j["relevance"] = nlohmann::json::array();
    for (const auto& row : w.relevance) {
        nlohmann::json r = nlohmann::json::array();
        for (bool b : row) r.push_back(b ? 1 : 0);
        j["relevance"].push_back(r);
    }
    j["sr_score"] = w.sr_score;
    return j;
}

inline SyntheticWorld world_from_json(const nlohmann::json& j) {
    SyntheticWorld w;
    w.seed = j.at("seed").get<std::uint64_t>();
    w.n_topics = j.at("n_topics").get<std::size_t>();
    auto weights_from = [](const nlohmann::json& o) {
        std::map<std::int32_t, double> m;
        for (auto it = o.begin(); it != o.end(); ++it)
            m[static_cast<std::int32_t>(std::stoi(it.key()))] = it.value().get<double>();
        require(!m.empty(), ErrorKind::InvalidWorld, "topic weights must be non-empty");
        return m;
    };
    for (const auto& o : j.at("items")) {
        ItemDoc d;
        d.id = o.at("id").get<std::int64_t>();
        d.title_tokens.ids = o.at("title").get<std::vector<std::int32_t>>();
        d.category_tokens.ids = o.at("category").get<std::vector<std::int32_t>>();
        d.topic_weights = weights_from(o.at("topics"));
        require(!d.title_tokens.empty(), ErrorKind::InvalidWorld, "item title must be non-empty");
        w.items.push_back(std::move(d));
    }
    for (const auto& o : j.at("keyphrases")) {
        Keyphrase k;
        k.id = o.at("id").get<std::int64_t>();
        k.tokens.ids = o.at("tokens").get<std::vector<std::int32_t>>();
        k.topic_weights = weights_from(o.at("topics"));
        require(!k.tokens.empty(), ErrorKind::InvalidWorld, "keyphrase tokens must be non-empty");
        w.keyphrases.push_back(std::move(k));
    }
    for (const auto& row : j.at("relevance")) {
        std::vector<bool> r;
        for (const auto& v : row) r.push_back(v.get<int>() != 0);
        w.relevance.push_back(std::move(r));
    }
    w.sr_score = j.at("sr_score").get<std::vector<std::vector<double>>>();
    require(w.relevance.size() == w.sr_score.size() &&
                (w.relevance.empty() || w.relevance[0].size() == w.sr_score[0].size()),
            ErrorKind::InvalidWorld, "relevance and sr_score must have identical shape");
    return w;
}

}  // namespace kpd
