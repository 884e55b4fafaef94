#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/tensor.hpp"

namespace kpd {

struct MnrConfig {
    double temperature = 0.05;
};

struct ContrastiveConfig {
    double margin = 0.5;
};

struct CosentConfig {
    double scale = 20.0;
};

struct MatryoshkaConfig {
    std::vector<std::size_t> dims = {64, 128, 256};
    std::vector<double> weights = {1.0, 1.0, 1.0};
};

inline void validate(const MnrConfig& c) {
    require(c.temperature > 0.0, ErrorKind::Config, "mnr: temperature must be > 0");
}
inline void validate(const ContrastiveConfig& c) {
    require(c.margin > 0.0, ErrorKind::Config, "contrastive: margin must be > 0");
}
inline void validate(const CosentConfig& c) {
    require(c.scale > 0.0, ErrorKind::Config, "cosent: scale must be > 0");
}
inline void validate(const MatryoshkaConfig& c, std::size_t full_dim) {
    require(!c.dims.empty(), ErrorKind::Config, "matryoshka: dims must be non-empty");
    require(c.weights.size() == c.dims.size(), ErrorKind::Config,
            "matryoshka: weights must match dims in length");
    for (std::size_t i = 0; i < c.dims.size(); ++i) {
        require(c.dims[i] >= 1 && c.dims[i] <= full_dim, ErrorKind::Config,
                "matryoshka: dim " + std::to_string(c.dims[i]) + " exceeds embedding dim " +
                    std::to_string(full_dim));
        if (i > 0)
            require(c.dims[i] > c.dims[i - 1], ErrorKind::Config,
                    "matryoshka: dims must be strictly ascending");
        require(c.weights[i] > 0.0, ErrorKind::Config, "matryoshka: weights must be > 0");
    }
}

// Loss over paired embedding lists: value plus gradients matching the inputs.
struct EmbeddingLossOutput {
    double value = 0.0;
    std::vector<std::vector<double>> grad_left;
    std::vector<std::vector<double>> grad_right;
};

// Loss over a student score vector; teacher scores are constants.
struct ScoreLossOutput {
    double value = 0.0;
    std::vector<double> grad_student;
};

namespace detail {

inline void check_finite(double v, const char* what) {
    require(std::isfinite(v), ErrorKind::Numeric, std::string(what) + ": non-finite loss value");
}

// A centered sum of squares at ulp^2 level relative to the raw magnitude is
// pure cancellation noise, i.e. the vector is constant.
inline bool degenerate_variance(double centered_ss, double raw_ss) {
    return centered_ss <= 1e-24 * raw_ss;
}

inline std::vector<std::vector<double>> zero_grads(std::size_t n, std::size_t d) {
    return std::vector<std::vector<double>>(n, std::vector<double>(d, 0.0));
}

}  // namespace detail

// MNR on a raw similarity matrix: per-anchor softmax cross-entropy with the
// diagonal as the positive, averaged over anchors. Returns dL/dS as well.
struct MnrSimilarityOutput {
    double value = 0.0;
    Matrix grad_similarity;  // K x K
};

inline MnrSimilarityOutput mnr_from_similarity(const Matrix& sim, const MnrConfig& cfg) {
    validate(cfg);
    require(sim.rows == sim.cols, ErrorKind::Shape, "mnr: similarity matrix must be square");
    const std::size_t k = sim.rows;
    require(k >= 2, ErrorKind::BatchTooSmall,
            "mnr: batch must have at least 2 pairs, got " + std::to_string(k));
    MnrSimilarityOutput out;
    out.grad_similarity = Matrix(k, k);
    const double inv_tau = 1.0 / cfg.temperature;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double row_max = -1e300;
        for (std::size_t j = 0; j < k; ++j) row_max = std::max(row_max, sim.at(i, j) * inv_tau);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(sim.at(i, j) * inv_tau - row_max);
        const double log_denom = row_max + std::log(denom);
        total += log_denom - sim.at(i, i) * inv_tau;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = std::exp(sim.at(i, j) * inv_tau - log_denom);
            out.grad_similarity.at(i, j) =
                (p - (i == j ? 1.0 : 0.0)) * inv_tau / static_cast<double>(k);
        }
    }
    out.value = total / static_cast<double>(k);
    detail::check_finite(out.value, "mnr");
    return out;
}

// In-batch negatives: anchors score against every positive in the batch.
inline EmbeddingLossOutput mnr_loss(const std::vector<Embedding>& anchors,
                                    const std::vector<Embedding>& positives,
                                    const MnrConfig& cfg) {
    require(anchors.size() == positives.size(), ErrorKind::Shape,
            "mnr: anchors and positives must have equal length");
    const std::size_t k = anchors.size();
    require(k >= 2, ErrorKind::BatchTooSmall,
            "mnr: batch must have at least 2 pairs, got " + std::to_string(k));
    const std::size_t d = anchors[0].dim();
    Matrix sim(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        require(anchors[i].dim() == d && positives[i].dim() == d, ErrorKind::Shape,
                "mnr: inconsistent embedding dimensions");
        for (std::size_t j = 0; j < k; ++j)
            sim.at(i, j) = dot(anchors[i].values, positives[j].values);
    }
    const MnrSimilarityOutput s = mnr_from_similarity(sim, cfg);
    EmbeddingLossOutput out;
    out.value = s.value;
    out.grad_left = detail::zero_grads(k, d);
    out.grad_right = detail::zero_grads(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double g = s.grad_similarity.at(i, j);
            if (g == 0.0) continue;
            for (std::size_t t = 0; t < d; ++t) {
                out.grad_left[i][t] += g * positives[j].values[t];
                out.grad_right[j][t] += g * anchors[i].values[t];
            }
        }
    }
    return out;
}

// 1/2 (y d^2 + (1-y) max(0, m-d)^2) with d the cosine distance, batch mean.
inline EmbeddingLossOutput contrastive_loss(const std::vector<Embedding>& us,
                                            const std::vector<Embedding>& vs,
                                            const std::vector<double>& labels,
                                            const ContrastiveConfig& cfg) {
    validate(cfg);
    require(us.size() == vs.size() && us.size() == labels.size(), ErrorKind::Shape,
            "contrastive: lists must have equal length");
    require(!us.empty(), ErrorKind::BatchTooSmall, "contrastive: empty batch");
    const std::size_t n = us.size();
    const std::size_t d = us[0].dim();
    EmbeddingLossOutput out;
    out.grad_left = detail::zero_grads(n, d);
    out.grad_right = detail::zero_grads(n, d);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double y = labels[r];
        require(y == 0.0 || y == 1.0, ErrorKind::Config,
                "contrastive: labels must be binary 0/1");
        require(us[r].dim() == d && vs[r].dim() == d, ErrorKind::Shape,
                "contrastive: inconsistent embedding dimensions");
        const double dist = 1.0 - dot(us[r].values, vs[r].values);
        double d_cos = 0.0;  // dL_r / d cos
        if (y == 1.0) {
            total += 0.5 * dist * dist;
            d_cos = -dist;
        } else {
            const double gap = cfg.margin - dist;
            if (gap > 0.0) {
                total += 0.5 * gap * gap;
                d_cos = gap;
            }
        }
        if (d_cos != 0.0) {
            const double g = d_cos / static_cast<double>(n);
            for (std::size_t t = 0; t < d; ++t) {
                out.grad_left[r][t] += g * vs[r].values[t];
                out.grad_right[r][t] += g * us[r].values[t];
            }
        }
    }
    out.value = total / static_cast<double>(n);
    detail::check_finite(out.value, "contrastive");
    return out;
}

inline EmbeddingLossOutput contrastive_loss(const Embedding& u, const Embedding& v, double label,
                                            const ContrastiveConfig& cfg) {
    return contrastive_loss(std::vector<Embedding>{u}, std::vector<Embedding>{v},
                            std::vector<double>{label}, cfg);
}

// 1 - Pearson correlation of teacher and student scores. Degenerate
// (zero-variance) vectors map to loss 1 with zero gradient.
inline ScoreLossOutput pearson_ri_loss(const std::vector<double>& teacher,
                                       const std::vector<double>& student) {
    require(teacher.size() == student.size(), ErrorKind::Shape,
            "pearson: score vectors must have equal length");
    const std::size_t n = teacher.size();
    require(n >= 2, ErrorKind::BatchTooSmall,
            "pearson: need at least 2 scores, got " + std::to_string(n));
    ScoreLossOutput out;
    out.grad_student.assign(n, 0.0);
    double mean_t = 0.0, mean_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_t += teacher[i];
        mean_s += student[i];
    }
    mean_t /= static_cast<double>(n);
    mean_s /= static_cast<double>(n);
    double num = 0.0, tt = 0.0, ss = 0.0, raw_t = 0.0, raw_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = teacher[i] - mean_t;
        const double b = student[i] - mean_s;
        num += a * b;
        tt += a * a;
        ss += b * b;
        raw_t += teacher[i] * teacher[i];
        raw_s += student[i] * student[i];
    }
    if (detail::degenerate_variance(tt, raw_t) || detail::degenerate_variance(ss, raw_s)) {
        out.value = 1.0;
        return out;
    }
    const double denom = std::sqrt(tt * ss);
    const double corr = num / denom;
    out.value = 1.0 - corr;
    detail::check_finite(out.value, "pearson");
    // d corr / d s_i = t~_i / denom - corr * s~_i / ss
    for (std::size_t i = 0; i < n; ++i) {
        const double a = teacher[i] - mean_t;
        const double b = student[i] - mean_s;
        out.grad_student[i] = -(a / denom - corr * b / ss);
    }
    return out;
}

// log(1 + sum over teacher-ordered pairs (a,b), teacher[a] > teacher[b], of
// exp(scale * (student[b] - student[a]))). Log-sum-exp form for stability.
inline ScoreLossOutput cosent_loss(const std::vector<double>& teacher,
                                   const std::vector<double>& student,
                                   const CosentConfig& cfg) {
    validate(cfg);
    require(teacher.size() == student.size(), ErrorKind::Shape,
            "cosent: score vectors must have equal length");
    const std::size_t n = teacher.size();
    require(n >= 2, ErrorKind::BatchTooSmall,
            "cosent: need at least 2 scores, got " + std::to_string(n));
    ScoreLossOutput out;
    out.grad_student.assign(n, 0.0);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (preferred a, other b)
    double max_exponent = 0.0;  // the implicit "1" term has exponent 0
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (teacher[a] > teacher[b]) {
                pairs.emplace_back(a, b);
                max_exponent = std::max(max_exponent, cfg.scale * (student[b] - student[a]));
            }
        }
    }
    if (pairs.empty()) {
        out.value = 0.0;
        return out;
    }
    double denom = std::exp(-max_exponent);  // the 1 term, shifted
    for (const auto& [a, b] : pairs)
        denom += std::exp(cfg.scale * (student[b] - student[a]) - max_exponent);
    out.value = max_exponent + std::log(denom);
    detail::check_finite(out.value, "cosent");
    for (const auto& [a, b] : pairs) {
        const double w = std::exp(cfg.scale * (student[b] - student[a]) - max_exponent) / denom;
        out.grad_student[b] += w * cfg.scale;
        out.grad_student[a] -= w * cfg.scale;
    }
    return out;
}

// (1/N) sum (teacher_i - student_i)^2.
inline ScoreLossOutput mse_loss(const std::vector<double>& teacher,
                                const std::vector<double>& student) {
    require(teacher.size() == student.size(), ErrorKind::Shape,
            "mse: score vectors must have equal length");
    const std::size_t n = teacher.size();
    require(n >= 1, ErrorKind::BatchTooSmall, "mse: empty score vectors");
    ScoreLossOutput out;
    out.grad_student.assign(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = teacher[i] - student[i];
        total += diff * diff;
        out.grad_student[i] = -2.0 * diff / static_cast<double>(n);
    }
    out.value = total / static_cast<double>(n);
    detail::check_finite(out.value, "mse");
    return out;
}

// --- loss selection by string id ---------------------------------------------

enum class LossId { Mnr, Contrastive, Pearson, Cosent, Mse };

inline LossId parse_loss_id(std::string_view s) {
    if (s == "mnr") return LossId::Mnr;
    if (s == "contrastive") return LossId::Contrastive;
    if (s == "pearson") return LossId::Pearson;
    if (s == "cosent") return LossId::Cosent;
    if (s == "mse") return LossId::Mse;
    throw_error(ErrorKind::Config, "unknown loss id '" + std::string(s) + "'");
}

inline const char* loss_id_name(LossId id) {
    switch (id) {
        case LossId::Mnr: return "mnr";
        case LossId::Contrastive: return "contrastive";
        case LossId::Pearson: return "pearson";
        case LossId::Cosent: return "cosent";
        case LossId::Mse: return "mse";
    }
    return "?";
}

// Shared configuration blob for dispatching any of the five losses.
struct LossConfigs {
    MnrConfig mnr;
    ContrastiveConfig contrastive;
    CosentConfig cosent;
};

// Evaluate a loss on paired embedding lists at full dimension. Targets are
// binary labels for contrastive and teacher scores for the KD losses; for MNR
// they are ignored. Cosine-consuming losses map score gradients back to the
// embeddings through the dot product.
inline EmbeddingLossOutput pair_loss(LossId id, const std::vector<Embedding>& left,
                                     const std::vector<Embedding>& right,
                                     const std::vector<double>& targets,
                                     const LossConfigs& cfg) {
    switch (id) {
        case LossId::Mnr:
            return mnr_loss(left, right, cfg.mnr);
        case LossId::Contrastive:
            return contrastive_loss(left, right, targets, cfg.contrastive);
        default:
            break;
    }
    require(left.size() == right.size() && left.size() == targets.size(), ErrorKind::Shape,
            "loss: lists must have equal length");
    require(!left.empty(), ErrorKind::BatchTooSmall, "loss: empty batch");
    const std::size_t n = left.size();
    const std::size_t d = left[0].dim();
    std::vector<double> cosines(n);
    for (std::size_t r = 0; r < n; ++r) cosines[r] = dot(left[r].values, right[r].values);
    ScoreLossOutput s;
    switch (id) {
        case LossId::Pearson: s = pearson_ri_loss(targets, cosines); break;
        case LossId::Cosent: s = cosent_loss(targets, cosines, cfg.cosent); break;
        case LossId::Mse: s = mse_loss(targets, cosines); break;
        default: throw_error(ErrorKind::Config, "loss: unreachable dispatch");
    }
    EmbeddingLossOutput out;
    out.value = s.value;
    out.grad_left = detail::zero_grads(n, d);
    out.grad_right = detail::zero_grads(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double g = s.grad_student[r];
        if (g == 0.0) continue;
        for (std::size_t t = 0; t < d; ++t) {
            out.grad_left[r][t] += g * right[r].values[t];
            out.grad_right[r][t] += g * left[r].values[t];
        }
    }
    return out;
}

// Sum of weighted base losses over prefix-truncated, re-normalized embeddings.
// Gradients accumulate into the full-dimension embedding gradients; at the
// full dimension truncation is the identity, so dims = {d} with weight 1 is
// exactly the base loss.
inline EmbeddingLossOutput matryoshka_wrap(LossId id, const std::vector<Embedding>& left,
                                           const std::vector<Embedding>& right,
                                           const std::vector<double>& targets,
                                           const LossConfigs& cfg,
                                           const MatryoshkaConfig& mat) {
    require(!left.empty(), ErrorKind::BatchTooSmall, "matryoshka: empty batch");
    require(left.size() == right.size(), ErrorKind::Shape,
            "matryoshka: lists must have equal length");
    const std::size_t d = left[0].dim();
    validate(mat, d);
    const std::size_t n = left.size();
    EmbeddingLossOutput out;
    out.grad_left = detail::zero_grads(n, d);
    out.grad_right = detail::zero_grads(n, right[0].dim());

    for (std::size_t di = 0; di < mat.dims.size(); ++di) {
        const std::size_t m = mat.dims[di];
        const double w = mat.weights[di];
        std::vector<Embedding> lp(n), rp(n);
        std::vector<double> lnorm(n, 1.0), rnorm(n, 1.0);
        for (std::size_t r = 0; r < n; ++r) {
            if (m == left[r].dim()) {
                lp[r] = left[r];
            } else {
                lp[r].values.assign(left[r].values.begin(),
                                    left[r].values.begin() + static_cast<std::ptrdiff_t>(m));
                lnorm[r] = norm2(lp[r].values);
                require(lnorm[r] > 0.0, ErrorKind::Numeric, "matryoshka: zero-norm prefix");
                for (double& x : lp[r].values) x /= lnorm[r];
            }
            if (m == right[r].dim()) {
                rp[r] = right[r];
            } else {
                rp[r].values.assign(right[r].values.begin(),
                                    right[r].values.begin() + static_cast<std::ptrdiff_t>(m));
                rnorm[r] = norm2(rp[r].values);
                require(rnorm[r] > 0.0, ErrorKind::Numeric, "matryoshka: zero-norm prefix");
                for (double& x : rp[r].values) x /= rnorm[r];
            }
        }
        const EmbeddingLossOutput base = pair_loss(id, lp, rp, targets, cfg);
        out.value += w * base.value;
        auto accumulate = [&](const std::vector<double>& g_prefix, const Embedding& z,
                              double nrm, bool identity, std::vector<double>& g_full) {
            if (identity) {
                for (std::size_t t = 0; t < g_prefix.size(); ++t) g_full[t] += w * g_prefix[t];
                return;
            }
            // back through re-normalization: (g - z (z . g)) / |q|
            double zg = 0.0;
            for (std::size_t t = 0; t < m; ++t) zg += z.values[t] * g_prefix[t];
            for (std::size_t t = 0; t < m; ++t)
                g_full[t] += w * (g_prefix[t] - z.values[t] * zg) / nrm;
        };
        for (std::size_t r = 0; r < n; ++r) {
            accumulate(base.grad_left[r], lp[r], lnorm[r], m == left[r].dim(), out.grad_left[r]);
            accumulate(base.grad_right[r], rp[r], rnorm[r], m == right[r].dim(),
                       out.grad_right[r]);
        }
    }
    detail::check_finite(out.value, "matryoshka");
    return out;
}

}  // namespace kpd
