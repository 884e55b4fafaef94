#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/synthworld.hpp"

namespace kpd {

// Score every (item, keyphrase) pair with the fine-tuned assistant, producing
// the soft KD labels the student trains on. Duplicates collapse to the first
// occurrence. Refuses an untrained assistant unless explicitly overridden.
inline std::vector<LabeledPair> kd_score(
    const CrossEncoderParams& assistant, const SyntheticWorld& world,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs,
    bool allow_untrained = false) {
    require(assistant.trained || allow_untrained, ErrorKind::Config,
            "kd_score: assistant has no training history; score with an untrained model only "
            "with allow_untrained");
    std::vector<LabeledPair> out;
    out.reserve(pairs.size());
    std::set<std::pair<std::int64_t, std::int64_t>> seen;
    for (const auto& [item, kp] : pairs) {
        if (!seen.insert({item, kp}).second) continue;
        const double s = score_cross(assistant, world.keyphrase(kp).tokens,
                                     world.item(item).category_tokens,
                                     world.item(item).title_tokens);
        out.push_back(LabeledPair{item, kp, LabelSource::Kd, s});
    }
    return out;
}

// Histogram contrast between two score sets over [0,1]. Stands in for the
// kernel-density comparison of assistant scores versus teacher outputs: an
// assistant spreads its mass, hard teacher labels pile up in the end bins.
struct DistributionReport {
    std::vector<double> bin_edges;  // n_bins + 1 uniform edges over [0,1]
    std::vector<double> mass_a;
    std::vector<double> mass_b;
    std::vector<double> abs_diff;
    double extreme_ratio_a = 0.0;  // mass in the two outermost bins
    double extreme_ratio_b = 0.0;
    std::string summary_a;  // "even" | "peaked"
    std::string summary_b;
};

inline DistributionReport score_distribution_report(const std::vector<double>& scores_a,
                                                    const std::vector<double>& scores_b,
                                                    std::size_t n_bins = 20) {
    require(n_bins >= 2, ErrorKind::Config, "distribution report: n_bins must be >= 2");
    require(!scores_a.empty() && !scores_b.empty(), ErrorKind::EmptyInput,
            "distribution report: score sets must be non-empty");
    DistributionReport rep;
    rep.bin_edges.resize(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i)
        rep.bin_edges[i] = static_cast<double>(i) / static_cast<double>(n_bins);
    auto histogram = [&](const std::vector<double>& scores) {
        std::vector<double> mass(n_bins, 0.0);
        for (double s : scores) {
            const double clamped = std::min(std::max(s, 0.0), 1.0);
            std::size_t bin = static_cast<std::size_t>(clamped * static_cast<double>(n_bins));
            if (bin >= n_bins) bin = n_bins - 1;  // score 1.0 lands in the last bin
            mass[bin] += 1.0;
        }
        for (double& m : mass) m /= static_cast<double>(scores.size());
        return mass;
    };
    rep.mass_a = histogram(scores_a);
    rep.mass_b = histogram(scores_b);
    rep.abs_diff.resize(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i)
        rep.abs_diff[i] = std::abs(rep.mass_a[i] - rep.mass_b[i]);
    rep.extreme_ratio_a = rep.mass_a.front() + rep.mass_a.back();
    rep.extreme_ratio_b = rep.mass_b.front() + rep.mass_b.back();
    // "peaked" when the outermost bins hold more than twice the uniform share
    const double peak_cut = 4.0 / static_cast<double>(n_bins);
    rep.summary_a = rep.extreme_ratio_a > peak_cut ? "peaked" : "even";
    rep.summary_b = rep.extreme_ratio_b > peak_cut ? "peaked" : "even";
    return rep;
}

inline nlohmann::json distribution_report_to_json(const DistributionReport& rep) {
    nlohmann::json j;
    j["bin_edges"] = rep.bin_edges;
    j["mass_a"] = rep.mass_a;
    j["mass_b"] = rep.mass_b;
    j["abs_diff"] = rep.abs_diff;
    j["extreme_ratio_a"] = rep.extreme_ratio_a;
    j["extreme_ratio_b"] = rep.extreme_ratio_b;
    j["summary_a"] = rep.summary_a;
    j["summary_b"] = rep.summary_b;
    return j;
}

}  // namespace kpd
