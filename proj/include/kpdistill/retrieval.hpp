#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/synthworld.hpp"
#include "kpdistill/tensor.hpp"

namespace kpd {

// Immutable exact-search index over keyphrase embeddings at a chosen prefix
// dimension. Rows are truncated and re-normalized at build time.
struct Index {
    std::vector<std::int64_t> ids;
    Matrix matrix;  // row per keyphrase, dim_prefix columns, unit rows
    std::size_t dim_prefix = 0;
    std::uint64_t source_checksum = 0;  // checksum of the params that embedded the rows

    std::size_t size() const { return ids.size(); }
};

inline Index build_index(const std::vector<std::int64_t>& ids,
                         const std::vector<Embedding>& embeddings, std::size_t dim_prefix,
                         std::uint64_t source_checksum = 0) {
    require(!embeddings.empty(), ErrorKind::EmptyIndex, "build_index: no embeddings");
    require(ids.size() == embeddings.size(), ErrorKind::Shape,
            "build_index: ids and embeddings must have equal length");
    const std::size_t full = embeddings[0].dim();
    require(dim_prefix >= 1 && dim_prefix <= full, ErrorKind::Config,
            "build_index: dim_prefix " + std::to_string(dim_prefix) +
                " exceeds embedding dim " + std::to_string(full));
    Index idx;
    idx.ids = ids;
    idx.dim_prefix = dim_prefix;
    idx.source_checksum = source_checksum;
    idx.matrix = Matrix(embeddings.size(), dim_prefix);
    for (std::size_t r = 0; r < embeddings.size(); ++r) {
        require(embeddings[r].dim() == full, ErrorKind::Shape,
                "build_index: inconsistent embedding dimensions");
        const Embedding p = prefix_embedding(embeddings[r], dim_prefix);
        for (std::size_t c = 0; c < dim_prefix; ++c) idx.matrix.at(r, c) = p.values[c];
    }
    return idx;
}

struct RetrievalResult {
    std::int64_t item_id = 0;
    std::vector<std::pair<std::int64_t, double>> ranked;  // (keyphrase id, cosine)
};

// Exact top-k by cosine over the truncated, re-normalized query. Ties break
// by ascending keyphrase id.
inline RetrievalResult knn(const Index& index, const Embedding& query, std::size_t k) {
    require(index.size() > 0, ErrorKind::EmptyIndex, "knn: empty index");
    require(k >= 1, ErrorKind::Config, "knn: k must be >= 1");
    require(query.dim() >= index.dim_prefix, ErrorKind::Shape,
            "knn: query dim below the index prefix dim");
    const Embedding q = prefix_embedding(query, index.dim_prefix);
    std::vector<std::pair<std::int64_t, double>> scored(index.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        double s = 0.0;
        const double* row = index.matrix.row(r);
        for (std::size_t c = 0; c < index.dim_prefix; ++c) s += row[c] * q.values[c];
        scored[r] = {index.ids[r], s};
    }
    const std::size_t take = std::min(k, scored.size());
    auto better = [](const std::pair<std::int64_t, double>& a,
                     const std::pair<std::int64_t, double>& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                      scored.end(), better);
    scored.resize(take);
    RetrievalResult res;
    res.ranked = std::move(scored);
    return res;
}

// Embed item title+category with the student and query the index. The index
// must have been built from the same checkpoint.
inline std::vector<RetrievalResult> retrieve_for_items(const BiEncoderParams& student,
                                                       const SyntheticWorld& world,
                                                       const std::vector<std::int64_t>& items,
                                                       const Index& index, std::size_t k = 20) {
    if (index.source_checksum != 0) {
        const std::uint64_t current = params_checksum(student);
        require(current == index.source_checksum, ErrorKind::Staleness,
                "retrieve_for_items: index was built from a different student checkpoint");
    }
    std::vector<RetrievalResult> out;
    out.reserve(items.size());
    for (std::int64_t id : items) {
        const Embedding e = encode_bi(student, world.item_text(id));
        RetrievalResult res = knn(index, e, k);
        res.item_id = id;
        out.push_back(std::move(res));
    }
    return out;
}

// Convenience: embed the whole keyphrase corpus and build the index.
inline Index build_student_index(const BiEncoderParams& student, const SyntheticWorld& world,
                                 std::size_t dim_prefix) {
    std::vector<std::int64_t> ids;
    std::vector<Embedding> embs;
    ids.reserve(world.keyphrases.size());
    embs.reserve(world.keyphrases.size());
    for (const auto& kp : world.keyphrases) {
        ids.push_back(kp.id);
        embs.push_back(encode_bi(student, kp.tokens));
    }
    return build_index(ids, embs, dim_prefix, params_checksum(student));
}

// Mean Jaccard overlap of retrieved id sets, used to quantify how much a
// prefix index loses against the full dimension.
inline double mean_jaccard(const std::vector<RetrievalResult>& a,
                           const std::vector<RetrievalResult>& b) {
    require(a.size() == b.size(), ErrorKind::Shape, "mean_jaccard: result lists differ");
    require(!a.empty(), ErrorKind::EmptyInput, "mean_jaccard: empty result lists");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::vector<std::int64_t> ia, ib;
        for (const auto& [id, s] : a[i].ranked) ia.push_back(id);
        for (const auto& [id, s] : b[i].ranked) ib.push_back(id);
        std::sort(ia.begin(), ia.end());
        std::sort(ib.begin(), ib.end());
        std::vector<std::int64_t> inter, uni;
        std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                              std::back_inserter(inter));
        std::set_union(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(uni));
        total += uni.empty() ? 0.0
                             : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    }
    return total / static_cast<double>(a.size());
}

// --- persistence -----------------------------------------------------------------

constexpr std::uint64_t kIndexMagic = 0x4B5044494458314DULL;  // "KPDIDX1M"

inline void save_index(std::ostream& os, const Index& idx) {
    write_u64_le(os, kIndexMagic);
    write_u64_le(os, kParamsVersion);
    write_u64_le(os, idx.size());
    write_u64_le(os, idx.dim_prefix);
    write_u64_le(os, idx.source_checksum);
    for (std::int64_t id : idx.ids) write_u64_le(os, static_cast<std::uint64_t>(id));
    write_matrix(os, idx.matrix);
}

inline Index load_index(std::istream& is) {
    require(read_u64_le(is) == kIndexMagic, ErrorKind::Io, "bad magic for index file");
    require(read_u64_le(is) == kParamsVersion, ErrorKind::Io, "unsupported index version");
    Index idx;
    const std::uint64_t n = read_u64_le(is);
    idx.dim_prefix = read_u64_le(is);
    idx.source_checksum = read_u64_le(is);
    idx.ids.resize(n);
    for (auto& id : idx.ids) id = static_cast<std::int64_t>(read_u64_le(is));
    idx.matrix = read_matrix(is);
    require(idx.matrix.rows == n && idx.matrix.cols == idx.dim_prefix, ErrorKind::Io,
            "index matrix shape does not match header");
    return idx;
}

// Results serialize one item per line: {"item":..., "kps":[[id,score],...]}
inline std::string results_to_jsonl(const std::vector<RetrievalResult>& results) {
    std::string out;
    for (const auto& r : results) {
        nlohmann::json j;
        j["item"] = r.item_id;
        nlohmann::json kps = nlohmann::json::array();
        for (const auto& [id, score] : r.ranked) kps.push_back({id, score});
        j["kps"] = kps;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace kpd
