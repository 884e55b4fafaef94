#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "kpdistill/errors.hpp"
#include "kpdistill/rng.hpp"
#include "kpdistill/tensor.hpp"

namespace kpd {

// Vocab slot 0 is the reserved separator; hashed tokens land in [1, vocab).
constexpr std::int32_t kSepId = 0;

struct TokenSeq {
    std::vector<std::int32_t> ids;

    bool empty() const { return ids.empty(); }
    std::size_t size() const { return ids.size(); }
    bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

// Lowercase, split on non-alphanumerics, FNV-1a hash into [1, vocab_size).
inline TokenSeq tokenize(std::string_view text, std::size_t vocab_size) {
    require(vocab_size >= 2, ErrorKind::Config, "tokenize: vocab_size must be >= 2");
    TokenSeq seq;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            const std::uint64_t h = fnv1a64(word);
            seq.ids.push_back(static_cast<std::int32_t>(1 + h % (vocab_size - 1)));
            word.clear();
        }
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    require(!seq.ids.empty(), ErrorKind::EmptyInput, "tokenize: text has no alphanumeric content");
    return seq;
}

// Unit vector with valid Matryoshka prefixes.
struct Embedding {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

// Truncate to the first m dims and re-normalize. At full dimension this is
// the identity, matching the index-build contract.
inline Embedding prefix_embedding(const Embedding& e, std::size_t m) {
    require(m >= 1 && m <= e.dim(), ErrorKind::Config,
            "prefix dimension must be in [1, d], got " + std::to_string(m));
    if (m == e.dim()) return e;
    Embedding out;
    out.values.assign(e.values.begin(), e.values.begin() + static_cast<std::ptrdiff_t>(m));
    const double n = norm2(out.values);
    require(n > 0.0, ErrorKind::Numeric, "prefix has zero norm, cannot re-normalize");
    for (double& x : out.values) x /= n;
    return out;
}

// Dot product of unit vectors; also 1 - cosine is the distance used by the
// contrastive loss.
inline double cosine(const Embedding& u, const Embedding& v) {
    require(u.dim() == v.dim(), ErrorKind::Shape,
            "cosine: dimension mismatch " + std::to_string(u.dim()) + " vs " +
                std::to_string(v.dim()));
    return dot(u.values, v.values);
}

inline double cosine_distance(const Embedding& u, const Embedding& v) {
    return 1.0 - cosine(u, v);
}

// Sorted (id, count) pairs. Pooling iterates unique ids in ascending order so
// the mean is exactly invariant under token permutation.
inline std::vector<std::pair<std::int32_t, std::size_t>> token_counts(const TokenSeq& seq) {
    std::map<std::int32_t, std::size_t> counts;
    for (std::int32_t id : seq.ids) ++counts[id];
    return {counts.begin(), counts.end()};
}

// --- bi-encoder -------------------------------------------------------------

struct BiEncoderParams {
    Matrix token_table;  // vocab x h
    Matrix projection;   // h x d

    std::size_t vocab() const { return token_table.rows; }
    std::size_t hidden() const { return token_table.cols; }
    std::size_t dim() const { return projection.cols; }

    static BiEncoderParams random(std::size_t vocab, std::size_t hidden, std::size_t dim,
                                  std::uint64_t seed) {
        require(vocab >= 2, ErrorKind::Config, "bi-encoder vocab must be >= 2");
        require(hidden >= 1, ErrorKind::Config, "bi-encoder hidden must be >= 1");
        require(dim >= 1, ErrorKind::Config, "bi-encoder dim must be >= 1");
        BiEncoderParams p;
        p.token_table = Matrix(vocab, hidden);
        p.projection = Matrix(hidden, dim);
        Rng rng(hash2(seed, 0x6269656E63ULL));
        const double ts = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& x : p.token_table.a) x = rng.normal() * ts;
        const double ps = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& x : p.projection.a) x = rng.normal() * ps;
        return p;
    }
};

// Forward cache kept for backpropagation.
struct BiForward {
    std::vector<std::pair<std::int32_t, std::size_t>> counts;
    std::size_t seq_len = 0;
    std::vector<double> pooled;   // h, mean of token rows
    std::vector<double> prenorm;  // d, pooled * projection
    double norm = 0.0;
    Embedding embedding;  // prenorm / norm
};

inline BiForward encode_bi_cached(const BiEncoderParams& p, const TokenSeq& seq) {
    require(!seq.empty(), ErrorKind::EmptyInput, "encode_bi: empty token sequence");
    const std::size_t h = p.hidden();
    const std::size_t d = p.dim();
    BiForward f;
    f.counts = token_counts(seq);
    f.seq_len = seq.size();
    f.pooled.assign(h, 0.0);
    for (const auto& [id, cnt] : f.counts) {
        require(id >= 0 && static_cast<std::size_t>(id) < p.vocab(), ErrorKind::Lookup,
                "encode_bi: token id " + std::to_string(id) + " outside vocab");
        const double w = static_cast<double>(cnt) / static_cast<double>(f.seq_len);
        const double* row = p.token_table.row(static_cast<std::size_t>(id));
        for (std::size_t j = 0; j < h; ++j) f.pooled[j] += w * row[j];
    }
    f.prenorm.assign(d, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        const double pj = f.pooled[j];
        if (pj == 0.0) continue;
        const double* prow = p.projection.row(j);
        for (std::size_t k = 0; k < d; ++k) f.prenorm[k] += pj * prow[k];
    }
    f.norm = norm2(f.prenorm);
    require(f.norm > 0.0 && std::isfinite(f.norm), ErrorKind::Numeric,
            "encode_bi: pre-normalization vector has zero or non-finite norm");
    f.embedding.values.resize(d);
    for (std::size_t k = 0; k < d; ++k) f.embedding.values[k] = f.prenorm[k] / f.norm;
    return f;
}

inline Embedding encode_bi(const BiEncoderParams& p, const TokenSeq& seq) {
    return encode_bi_cached(p, seq).embedding;
}

struct BiEncoderGrads {
    Matrix d_token_table;
    Matrix d_projection;

    static BiEncoderGrads zeros_like(const BiEncoderParams& p) {
        BiEncoderGrads g;
        g.d_token_table = Matrix(p.token_table.rows, p.token_table.cols);
        g.d_projection = Matrix(p.projection.rows, p.projection.cols);
        return g;
    }
};

// Chain rule through normalize -> projection -> mean pooling, accumulating
// into shared parameter gradients.
inline void encode_bi_backward(const BiEncoderParams& p, const BiForward& f,
                               const std::vector<double>& d_embedding, BiEncoderGrads& grads) {
    const std::size_t h = p.hidden();
    const std::size_t d = p.dim();
    // d prenorm = (g - z (z . g)) / norm
    const double zg = dot(f.embedding.values, d_embedding);
    std::vector<double> d_pre(d);
    for (std::size_t k = 0; k < d; ++k)
        d_pre[k] = (d_embedding[k] - f.embedding.values[k] * zg) / f.norm;
    // projection grad: pooled (x) d_pre; pooled grad: projection * d_pre
    std::vector<double> d_pooled(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        double* prow = grads.d_projection.row(j);
        const double* wrow = p.projection.row(j);
        const double pj = f.pooled[j];
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            prow[k] += pj * d_pre[k];
            acc += wrow[k] * d_pre[k];
        }
        d_pooled[j] = acc;
    }
    for (const auto& [id, cnt] : f.counts) {
        const double w = static_cast<double>(cnt) / static_cast<double>(f.seq_len);
        double* trow = grads.d_token_table.row(static_cast<std::size_t>(id));
        for (std::size_t j = 0; j < h; ++j) trow[j] += w * d_pooled[j];
    }
}

// --- cross-encoder ----------------------------------------------------------

// Joint scorer over keyphrase [SEP] category [SEP] title. The pooled vector is
// augmented with a token-overlap feature before the two-layer head, giving the
// joint model signal a dual tower cannot see.
struct CrossEncoderParams {
    Matrix token_table;  // vocab x h
    Matrix w1;           // (h+1) x h, input is pooled ++ overlap
    Matrix b1;           // 1 x h
    Matrix w2;           // 1 x h
    Matrix b2;           // 1 x 1
    bool trained = false;

    std::size_t vocab() const { return token_table.rows; }
    std::size_t hidden() const { return token_table.cols; }

    static CrossEncoderParams random(std::size_t vocab, std::size_t hidden, std::uint64_t seed) {
        require(vocab >= 2, ErrorKind::Config, "cross-encoder vocab must be >= 2");
        require(hidden >= 1, ErrorKind::Config, "cross-encoder hidden must be >= 1");
        CrossEncoderParams p;
        p.token_table = Matrix(vocab, hidden);
        p.w1 = Matrix(hidden + 1, hidden);
        p.b1 = Matrix(1, hidden);
        p.w2 = Matrix(1, hidden);
        p.b2 = Matrix(1, 1);
        Rng rng(hash2(seed, 0x63726F7373ULL));
        const double ts = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& x : p.token_table.a) x = rng.normal() * ts;
        for (double& x : p.w1.a) x = rng.normal() * ts;
        for (double& x : p.w2.a) x = rng.normal() * ts;
        return p;
    }
};

struct CrossForward {
    std::vector<std::pair<std::int32_t, std::size_t>> counts;
    std::size_t seq_len = 0;
    std::vector<double> input;   // h + 1: pooled ++ overlap
    std::vector<double> hidden;  // tanh layer
    double logit = 0.0;
    double score = 0.0;  // sigmoid(logit)
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Fraction of keyphrase token occurrences whose id appears in the title.
inline double overlap_fraction(const TokenSeq& kp, const TokenSeq& title) {
    std::unordered_set<std::int32_t> title_ids(title.ids.begin(), title.ids.end());
    std::size_t hits = 0;
    for (std::int32_t id : kp.ids) hits += title_ids.count(id) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(kp.size());
}

inline CrossForward score_cross_cached(const CrossEncoderParams& p, const TokenSeq& kp,
                                       const TokenSeq& category, const TokenSeq& title) {
    require(!kp.empty(), ErrorKind::EmptyInput, "score_cross: empty keyphrase");
    require(!title.empty(), ErrorKind::EmptyInput, "score_cross: empty title");
    const std::size_t h = p.hidden();

    TokenSeq joint;
    joint.ids.reserve(kp.size() + category.size() + title.size() + 2);
    joint.ids.insert(joint.ids.end(), kp.ids.begin(), kp.ids.end());
    joint.ids.push_back(kSepId);
    joint.ids.insert(joint.ids.end(), category.ids.begin(), category.ids.end());
    joint.ids.push_back(kSepId);
    joint.ids.insert(joint.ids.end(), title.ids.begin(), title.ids.end());

    CrossForward f;
    f.counts = token_counts(joint);
    f.seq_len = joint.size();
    f.input.assign(h + 1, 0.0);
    for (const auto& [id, cnt] : f.counts) {
        require(id >= 0 && static_cast<std::size_t>(id) < p.vocab(), ErrorKind::Lookup,
                "score_cross: token id " + std::to_string(id) + " outside vocab");
        const double w = static_cast<double>(cnt) / static_cast<double>(f.seq_len);
        const double* row = p.token_table.row(static_cast<std::size_t>(id));
        for (std::size_t j = 0; j < h; ++j) f.input[j] += w * row[j];
    }
    f.input[h] = overlap_fraction(kp, title);

    f.hidden.assign(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
        double acc = p.b1.a[j];
        for (std::size_t i = 0; i <= h; ++i) acc += f.input[i] * p.w1.at(i, j);
        f.hidden[j] = std::tanh(acc);
    }
    f.logit = p.b2.a[0];
    for (std::size_t j = 0; j < h; ++j) f.logit += f.hidden[j] * p.w2.a[j];
    require(std::isfinite(f.logit), ErrorKind::Numeric, "score_cross: non-finite logit");
    f.score = sigmoid(f.logit);
    return f;
}

inline double score_cross(const CrossEncoderParams& p, const TokenSeq& kp,
                          const TokenSeq& category, const TokenSeq& title) {
    return score_cross_cached(p, kp, category, title).score;
}

struct CrossEncoderGrads {
    Matrix d_token_table;
    Matrix d_w1;
    Matrix d_b1;
    Matrix d_w2;
    Matrix d_b2;

    static CrossEncoderGrads zeros_like(const CrossEncoderParams& p) {
        CrossEncoderGrads g;
        g.d_token_table = Matrix(p.token_table.rows, p.token_table.cols);
        g.d_w1 = Matrix(p.w1.rows, p.w1.cols);
        g.d_b1 = Matrix(1, p.b1.cols);
        g.d_w2 = Matrix(1, p.w2.cols);
        g.d_b2 = Matrix(1, 1);
        return g;
    }
};

// d_logit is dL/d(logit); the overlap slot has no parameter path.
inline void score_cross_backward(const CrossEncoderParams& p, const CrossForward& f,
                                 double d_logit, CrossEncoderGrads& grads) {
    const std::size_t h = p.hidden();
    grads.d_b2.a[0] += d_logit;
    std::vector<double> d_hidden(h);
    for (std::size_t j = 0; j < h; ++j) {
        grads.d_w2.a[j] += d_logit * f.hidden[j];
        d_hidden[j] = d_logit * p.w2.a[j];
    }
    std::vector<double> d_pre(h);
    for (std::size_t j = 0; j < h; ++j)
        d_pre[j] = d_hidden[j] * (1.0 - f.hidden[j] * f.hidden[j]);
    std::vector<double> d_input(h + 1, 0.0);
    for (std::size_t i = 0; i <= h; ++i) {
        double* wrow = grads.d_w1.row(i);
        const double* prow = p.w1.row(i);
        const double xi = f.input[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            wrow[j] += xi * d_pre[j];
            acc += prow[j] * d_pre[j];
        }
        d_input[i] = acc;
    }
    for (std::size_t j = 0; j < h; ++j) grads.d_b1.a[j] += d_pre[j];
    for (const auto& [id, cnt] : f.counts) {
        const double w = static_cast<double>(cnt) / static_cast<double>(f.seq_len);
        double* trow = grads.d_token_table.row(static_cast<std::size_t>(id));
        for (std::size_t j = 0; j < h; ++j) trow[j] += w * d_input[j];
    }
}

// --- binary parameter format ------------------------------------------------
// header {magic, version, dims}, then row-major doubles, little-endian.

constexpr std::uint64_t kBiMagic = 0x4B504442494E4331ULL;     // "KPDBINC1"
constexpr std::uint64_t kCrossMagic = 0x4B504443524F5331ULL;  // "KPDCROS1"
constexpr std::uint64_t kParamsVersion = 1;

inline void save_bi(std::ostream& os, const BiEncoderParams& p) {
    write_u64_le(os, kBiMagic);
    write_u64_le(os, kParamsVersion);
    write_u64_le(os, p.vocab());
    write_u64_le(os, p.hidden());
    write_u64_le(os, p.dim());
    write_matrix(os, p.token_table);
    write_matrix(os, p.projection);
}

inline BiEncoderParams load_bi(std::istream& is) {
    require(read_u64_le(is) == kBiMagic, ErrorKind::Io, "bad magic for bi-encoder parameters");
    require(read_u64_le(is) == kParamsVersion, ErrorKind::Io, "unsupported bi-encoder version");
    const auto vocab = read_u64_le(is);
    const auto hidden = read_u64_le(is);
    const auto dim = read_u64_le(is);
    BiEncoderParams p;
    p.token_table = read_matrix(is);
    p.projection = read_matrix(is);
    require(p.token_table.rows == vocab && p.token_table.cols == hidden, ErrorKind::Io,
            "bi-encoder token table shape does not match header");
    require(p.projection.rows == hidden && p.projection.cols == dim, ErrorKind::Io,
            "bi-encoder projection shape does not match header");
    return p;
}

inline void save_cross(std::ostream& os, const CrossEncoderParams& p) {
    write_u64_le(os, kCrossMagic);
    write_u64_le(os, kParamsVersion);
    write_u64_le(os, p.vocab());
    write_u64_le(os, p.hidden());
    write_u64_le(os, p.trained ? 1 : 0);
    write_matrix(os, p.token_table);
    write_matrix(os, p.w1);
    write_matrix(os, p.b1);
    write_matrix(os, p.w2);
    write_matrix(os, p.b2);
}

inline CrossEncoderParams load_cross(std::istream& is) {
    require(read_u64_le(is) == kCrossMagic, ErrorKind::Io,
            "bad magic for cross-encoder parameters");
    require(read_u64_le(is) == kParamsVersion, ErrorKind::Io, "unsupported cross-encoder version");
    const auto vocab = read_u64_le(is);
    const auto hidden = read_u64_le(is);
    const auto trained = read_u64_le(is);
    CrossEncoderParams p;
    p.trained = trained != 0;
    p.token_table = read_matrix(is);
    p.w1 = read_matrix(is);
    p.b1 = read_matrix(is);
    p.w2 = read_matrix(is);
    p.b2 = read_matrix(is);
    require(p.token_table.rows == vocab && p.token_table.cols == hidden, ErrorKind::Io,
            "cross-encoder token table shape does not match header");
    require(p.w1.rows == hidden + 1 && p.w1.cols == hidden, ErrorKind::Io,
            "cross-encoder w1 shape does not match header");
    require(p.b1.cols == hidden && p.w2.cols == hidden && p.b2.size() == 1, ErrorKind::Io,
            "cross-encoder head shapes do not match header");
    return p;
}

inline std::uint64_t params_checksum(const BiEncoderParams& p) {
    std::ostringstream os(std::ios::binary);
    save_bi(os, p);
    const std::string s = os.str();
    return fnv1a64(s.data(), s.size());
}

inline std::uint64_t params_checksum(const CrossEncoderParams& p) {
    std::ostringstream os(std::ios::binary);
    save_cross(os, p);
    const std::string s = os.str();
    return fnv1a64(s.data(), s.size());
}

}  // namespace kpd
