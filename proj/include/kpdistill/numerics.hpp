#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/losses.hpp"
#include "kpdistill/tensor.hpp"

namespace kpd {

// Sample Pearson correlation. Returns nullopt when either vector has zero
// variance; callers map the sentinel (loss 1 for rank imitation, 0 in reports).
inline std::optional<double> pearson_corr(const std::vector<double>& a,
                                          const std::vector<double>& b) {
    require(a.size() == b.size(), ErrorKind::Shape,
            "pearson_corr: vectors must have equal length");
    const std::size_t n = a.size();
    require(n >= 2, ErrorKind::BatchTooSmall,
            "pearson_corr: need at least 2 values, got " + std::to_string(n));
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double num = 0.0, va = 0.0, vb = 0.0, raw_a = 0.0, raw_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i] - mean_a;
        const double y = b[i] - mean_b;
        num += x * y;
        va += x * x;
        vb += y * y;
        raw_a += a[i] * a[i];
        raw_b += b[i] * b[i];
    }
    if (detail::degenerate_variance(va, raw_a) || detail::degenerate_variance(vb, raw_b))
        return std::nullopt;
    return num / std::sqrt(va * vb);
}

// --- optimizer ----------------------------------------------------------------

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    throw_error(ErrorKind::Config, "unknown optimizer kind '" + s + "'");
}

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<Matrix> m;  // first moments, one slot per parameter tensor
    std::vector<Matrix> v;  // second moments
};

// One update over an ordered list of (parameter, gradient) tensor pairs.
// Moment slots are allocated on first use and shape-checked afterwards.
inline void optimizer_step(std::vector<Matrix*> params, const std::vector<const Matrix*>& grads,
                           OptimizerState& state) {
    require(params.size() == grads.size(), ErrorKind::Shape,
            "optimizer_step: params and grads count mismatch");
    if (state.kind == OptimizerKind::Adam && state.m.empty()) {
        for (const Matrix* g : grads) {
            state.m.emplace_back(g->rows, g->cols);
            state.v.emplace_back(g->rows, g->cols);
        }
    }
    if (state.kind == OptimizerKind::Adam)
        require(state.m.size() == params.size(), ErrorKind::Shape,
                "optimizer_step: moment slot count mismatch");
    ++state.step;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Matrix& p = *params[t];
        const Matrix& g = *grads[t];
        require(p.same_shape(g), ErrorKind::Shape,
                "optimizer_step: parameter/gradient shape mismatch at slot " + std::to_string(t));
        if (state.kind == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < p.size(); ++i) p.a[i] -= state.learning_rate * g.a[i];
            continue;
        }
        Matrix& m = state.m[t];
        Matrix& v = state.v[t];
        require(m.same_shape(p), ErrorKind::Shape,
                "optimizer_step: moment shape mismatch at slot " + std::to_string(t));
        const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
        const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m.a[i] = state.beta1 * m.a[i] + (1.0 - state.beta1) * g.a[i];
            v.a[i] = state.beta2 * v.a[i] + (1.0 - state.beta2) * g.a[i] * g.a[i];
            const double mhat = m.a[i] / bc1;
            const double vhat = v.a[i] / bc2;
            p.a[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

// --- bi-encoder backprop -------------------------------------------------------

// A single-source training batch: item rows pair with keyphrase rows; targets
// carry the binary label (contrastive) or teacher score (KD losses) and are
// ignored by MNR.
struct PairBatch {
    std::vector<TokenSeq> items;
    std::vector<TokenSeq> keyphrases;
    std::vector<double> targets;
};

struct BiLossSpec {
    LossId loss = LossId::Mnr;
    LossConfigs configs;
    bool matryoshka = false;
    MatryoshkaConfig matryoshka_cfg;
};

struct BackpropResult {
    double loss = 0.0;
    BiEncoderGrads grads;
};

inline double bi_batch_loss_only(const BiEncoderParams& params, const PairBatch& batch,
                                 const BiLossSpec& spec) {
    const std::size_t n = batch.items.size();
    std::vector<Embedding> left(n), right(n);
    for (std::size_t r = 0; r < n; ++r) {
        left[r] = encode_bi(params, batch.items[r]);
        right[r] = encode_bi(params, batch.keyphrases[r]);
    }
    if (spec.matryoshka)
        return matryoshka_wrap(spec.loss, left, right, batch.targets, spec.configs,
                               spec.matryoshka_cfg)
            .value;
    return pair_loss(spec.loss, left, right, batch.targets, spec.configs).value;
}

// Exact chain-rule gradients through pooling, projection, normalization,
// cosine, and the chosen loss. Deterministic: rows are processed in order.
inline BackpropResult backprop(const BiEncoderParams& params, const PairBatch& batch,
                               const BiLossSpec& spec) {
    require(batch.items.size() == batch.keyphrases.size(), ErrorKind::Shape,
            "backprop: items and keyphrases must have equal length");
    require(!batch.items.empty(), ErrorKind::BatchTooSmall, "backprop: empty batch");
    const std::size_t n = batch.items.size();

    std::vector<BiForward> fwd_items(n), fwd_kps(n);
    std::vector<Embedding> left(n), right(n);
    for (std::size_t r = 0; r < n; ++r) {
        fwd_items[r] = encode_bi_cached(params, batch.items[r]);
        fwd_kps[r] = encode_bi_cached(params, batch.keyphrases[r]);
        left[r] = fwd_items[r].embedding;
        right[r] = fwd_kps[r].embedding;
    }

    EmbeddingLossOutput loss_out =
        spec.matryoshka ? matryoshka_wrap(spec.loss, left, right, batch.targets, spec.configs,
                                          spec.matryoshka_cfg)
                        : pair_loss(spec.loss, left, right, batch.targets, spec.configs);

    BackpropResult out;
    out.loss = loss_out.value;
    out.grads = BiEncoderGrads::zeros_like(params);
    for (std::size_t r = 0; r < n; ++r) {
        require(all_finite(loss_out.grad_left[r]) && all_finite(loss_out.grad_right[r]),
                ErrorKind::Numeric,
                "backprop: non-finite embedding gradient at batch row " + std::to_string(r));
        encode_bi_backward(params, fwd_items[r], loss_out.grad_left[r], out.grads);
        encode_bi_backward(params, fwd_kps[r], loss_out.grad_right[r], out.grads);
    }
    require(all_finite(out.grads.d_token_table), ErrorKind::Numeric,
            "backprop: non-finite gradient in token_table");
    require(all_finite(out.grads.d_projection), ErrorKind::Numeric,
            "backprop: non-finite gradient in projection");
    return out;
}

// --- finite-difference gradient check ------------------------------------------

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter_path;
    double epsilon = 0.0;
};

namespace detail {

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

}  // namespace detail

// Central differences per parameter against supplied analytic gradients.
inline GradCheckReport finite_diff_check_against(const BiEncoderParams& params,
                                                 const PairBatch& batch, const BiLossSpec& spec,
                                                 const BiEncoderGrads& analytic,
                                                 double epsilon = 1e-5) {
    const std::size_t total = params.token_table.size() + params.projection.size();
    require(total <= 100000, ErrorKind::TooLarge,
            "finite_diff_check: model has " + std::to_string(total) +
                " parameters, guard is 100000");
    BiEncoderParams work = params;
    GradCheckReport report;
    report.epsilon = epsilon;
    auto sweep = [&](Matrix& m, const Matrix& g, const std::string& name) {
        for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t c = 0; c < m.cols; ++c) {
                double& slot = m.at(r, c);
                const double saved = slot;
                slot = saved + epsilon;
                const double up = bi_batch_loss_only(work, batch, spec);
                slot = saved - epsilon;
                const double down = bi_batch_loss_only(work, batch, spec);
                slot = saved;
                const double numeric = (up - down) / (2.0 * epsilon);
                const double err = detail::relative_error(g.at(r, c), numeric);
                if (err > report.max_relative_error) {
                    report.max_relative_error = err;
                    report.worst_parameter_path = name + "[" + std::to_string(r) + "," +
                                                  std::to_string(c) + "]";
                }
            }
        }
    };
    sweep(work.token_table, analytic.d_token_table, "token_table");
    sweep(work.projection, analytic.d_projection, "projection");
    return report;
}

inline GradCheckReport finite_diff_check(const BiEncoderParams& params, const PairBatch& batch,
                                         const BiLossSpec& spec, double epsilon = 1e-5) {
    const BackpropResult bp = backprop(params, batch, spec);
    return finite_diff_check_against(params, batch, spec, bp.grads, epsilon);
}

}  // namespace kpd
