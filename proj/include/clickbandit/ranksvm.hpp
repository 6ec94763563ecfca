#pragma once

// Pairwise linear ranker (hinge loss on graded preference pairs).
// One model per session topic; these are the experts voted over by GTS.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "clickbandit/common.hpp"
#include "clickbandit/featurize.hpp"
#include "clickbandit/logmodel.hpp"

namespace clickbandit {

class DimensionMismatch : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class NonFiniteLoss : public NumericError {
public:
    using NumericError::NumericError;
};

struct ExpertModel {
    std::uint64_t topic_id = 0;
    Features weights{};
    std::uint64_t training_pairs = 0;
    friend bool operator==(const ExpertModel&, const ExpertModel&) = default;
};

struct PreferencePair {
    Features preferred{};
    Features other{};
    double margin_weight = 1.0;
};

struct RankerConfig {
    int epochs = 20;
    double learning_rate = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 1;
};

/// One pair per (u, v) in the SERP with grade(u) > grade(v), weighted by the grade gap.
inline std::vector<PreferencePair> generate_pairs(const LabeledSerp& serp,
                                                  const std::array<FeatureVector, kSerpSize>& features) {
    const auto g = serp.grades();
    std::vector<PreferencePair> pairs;
    for (std::size_t u = 0; u < kSerpSize; ++u)
        for (std::size_t v = 0; v < kSerpSize; ++v)
            if (g[u] > g[v]) pairs.push_back({features[u].values, features[v].values, double(g[u] - g[v])});
    return pairs;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw DimensionMismatch("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double score(const ExpertModel& model, std::span<const double> x) { return dot(model.weights, x); }

/// Weighted hinge objective: sum_p w_p * max(0, 1 - w.(x_pref - x_other)) + l2/2 |w|^2.
inline double pairwise_objective(const Features& w, const std::vector<PreferencePair>& pairs, double l2) {
    double loss = 0.0;
    for (const auto& p : pairs) {
        double margin = 0.0;
        for (std::size_t k = 0; k < kFeatureDim; ++k) margin += w[k] * (p.preferred[k] - p.other[k]);
        loss += p.margin_weight * std::max(0.0, 1.0 - margin);
    }
    return loss + 0.5 * l2 * std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
}

/// Subgradient descent with step lr/(1 + t*l2) over seed-shuffled pairs.
/// Throws NonFiniteLoss when the objective stops being finite.
inline ExpertModel train(const std::vector<PreferencePair>& pairs, const RankerConfig& config,
                         std::uint64_t topic_id = 0) {
    if (config.epochs < 0 || !(config.learning_rate > 0.0) || config.l2 < 0.0)
        throw ConfigError("ranker config: epochs >= 0, learning_rate > 0, l2 >= 0 required");
    ExpertModel model;
    model.topic_id = topic_id;
    model.training_pairs = pairs.size();
    if (pairs.empty()) return model;

    Rng rng(config.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double reg = config.l2 / static_cast<double>(pairs.size());
    auto& w = model.weights;
    std::uint64_t t = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t idx : order) {
            const auto& p = pairs[idx];
            const double eta = config.learning_rate / (1.0 + static_cast<double>(t) * config.l2);
            ++t;
            double margin = 0.0;
            for (std::size_t k = 0; k < kFeatureDim; ++k) margin += w[k] * (p.preferred[k] - p.other[k]);
            const bool active = margin < 1.0;
            for (std::size_t k = 0; k < kFeatureDim; ++k) {
                double g = reg * w[k];
                if (active) g -= p.margin_weight * (p.preferred[k] - p.other[k]);
                w[k] -= eta * g;
            }
        }
        if (!std::isfinite(pairwise_objective(w, pairs, config.l2)))
            throw NonFiniteLoss("ranker training diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
    return model;
}

/// Rank-1 vote: argmax score with ties to the lowest original rank.
template <typename Candidates>
std::size_t vote(const ExpertModel& model, const Candidates& candidates) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double s = score(model, candidates[i].values);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

inline constexpr double kRewardClamp = 1e-6;

/// Logistic link clamped into [delta, 1 - delta] so the log loss stays finite.
inline double clamped_logistic(double s, double delta = kRewardClamp) {
    const double p = 1.0 / (1.0 + std::exp(-s));
    return std::clamp(p, delta, 1.0 - delta);
}

inline double predicted_reward(const ExpertModel& model, std::span<const double> x) {
    return clamped_logistic(score(model, x));
}

/// Fraction of pairs ordered correctly (strictly) by the model.
inline double pairwise_accuracy(const ExpertModel& model, const std::vector<PreferencePair>& pairs) {
    if (pairs.empty()) return 1.0;
    std::size_t ok = 0;
    for (const auto& p : pairs)
        if (score(model, p.preferred) > score(model, p.other)) ++ok;
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Model files: "CBEXPRT1", u64 count, then per model u64 topic_id,
// u64 training_pairs, u64 dimension, dimension x f64.

inline constexpr std::string_view kExpertMagic = "CBEXPRT1";

inline void write_experts(std::ostream& os, const std::vector<ExpertModel>& experts) {
    binio::put_magic(os, kExpertMagic);
    binio::put_u64(os, experts.size());
    for (const auto& e : experts) {
        binio::put_u64(os, e.topic_id);
        binio::put_u64(os, e.training_pairs);
        binio::put_u64(os, kFeatureDim);
        for (double w : e.weights) binio::put_f64(os, w);
    }
}

inline std::vector<ExpertModel> read_experts(std::istream& is) {
    binio::expect_magic(is, kExpertMagic);
    const auto n = binio::get_u64(is);
    if (n > (1u << 20)) throw DataError("expert count out of range");
    std::vector<ExpertModel> out(n);
    for (auto& e : out) {
        e.topic_id = binio::get_u64(is);
        e.training_pairs = binio::get_u64(is);
        const auto dim = binio::get_u64(is);
        if (dim != kFeatureDim) throw DimensionMismatch("expert file dimension " + std::to_string(dim));
        for (double& w : e.weights) w = binio::get_f64(is);
        for (double w : e.weights)
            if (!std::isfinite(w)) throw DataError("non-finite expert weight");
    }
    return out;
}

inline void write_experts_text(std::ostream& os, const std::vector<ExpertModel>& experts) {
    os.precision(17);
    for (const auto& e : experts) {
        os << "topic " << e.topic_id << " pairs " << e.training_pairs << " dim " << kFeatureDim << '\n';
        for (std::size_t k = 0; k < kFeatureDim; ++k) os << (k ? " " : "") << e.weights[k];
        os << '\n';
    }
}

}  // namespace clickbandit
