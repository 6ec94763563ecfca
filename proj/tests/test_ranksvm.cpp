#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "clickbandit/ranksvm.hpp"

using namespace clickbandit;

namespace {

LabeledSerp serp_with_grades(const std::vector<int>& grades) {
    LabeledSerp s;
    for (std::size_t i = 0; i < kSerpSize; ++i) s.results[i] = {i + 1, 0};
    for (std::size_t i = 0; i < grades.size(); ++i)
        if (grades[i] > 0) s.clicks.push_back({i + 1, 0, Dwell::of(0), grades[i]});
    return s;
}

std::array<FeatureVector, kSerpSize> rank_features() {
    std::array<FeatureVector, kSerpSize> f{};
    for (std::size_t i = 0; i < kSerpSize; ++i) {
        f[i].url_id = i + 1;
        f[i].values[0] = static_cast<double>(i);
    }
    return f;
}

Features unit(std::size_t k) {
    Features e{};
    e[k] = 1.0;
    return e;
}

struct PlantedSerps {
    Features direction{};
    std::vector<std::array<FeatureVector, kSerpSize>> serps;
    std::vector<std::size_t> best;
};

// Random candidates in [0,1]^18; the best one is shifted by `gap` along a planted unit direction.
PlantedSerps planted(std::size_t n, std::uint64_t seed, double gap) {
    Rng rng(seed);
    PlantedSerps p;
    double norm = 0.0;
    for (auto& d : p.direction) {
        d = standard_normal(rng);
        norm += d * d;
    }
    for (auto& d : p.direction) d /= std::sqrt(norm);
    Rng data(seed + 1);
    for (std::size_t s = 0; s < n; ++s) {
        std::array<FeatureVector, kSerpSize> f{};
        for (auto& fv : f)
            for (auto& v : fv.values) v = uniform01(data);
        const auto b = static_cast<std::size_t>(uniform_index(data, kSerpSize));
        for (std::size_t k = 0; k < kFeatureDim; ++k) f[b].values[k] += gap * p.direction[k];
        p.serps.push_back(f);
        p.best.push_back(b);
    }
    return p;
}

}  // namespace

TEST(Pairs, SingleGrade2) {
    const auto pairs = generate_pairs(serp_with_grades({2}), rank_features());
    ASSERT_EQ(pairs.size(), 9u);
    for (const auto& p : pairs) {
        EXPECT_EQ(p.preferred[0], 0.0);
        EXPECT_EQ(p.margin_weight, 2.0);
    }
}

TEST(Pairs, MixedGrades) {
    const auto pairs = generate_pairs(serp_with_grades({2, 1}), rank_features());
    ASSERT_EQ(pairs.size(), 17u);
    int w1 = 0, w2 = 0;
    for (const auto& p : pairs) (p.margin_weight == 1.0 ? w1 : w2)++;
    EXPECT_EQ(w1, 9);  // u1 over u2 and u2 over u3..u10
    EXPECT_EQ(w2, 8);
}

TEST(Pairs, UniformGradesEmpty) {
    EXPECT_TRUE(generate_pairs(serp_with_grades({}), rank_features()).empty());
}

TEST(Train, EmptyGivesZero) {
    const auto m = train({}, RankerConfig{});
    for (double w : m.weights) EXPECT_EQ(w, 0.0);
    EXPECT_EQ(m.training_pairs, 0u);
}

TEST(Train, SinglePairSatisfiesMargin) {
    RankerConfig c;
    c.l2 = 0.0;
    c.epochs = 50;
    const auto m = train({{unit(0), Features{}, 1.0}}, c);
    EXPECT_GE(m.weights[0], 1.0);
    for (std::size_t k = 1; k < kFeatureDim; ++k) EXPECT_EQ(m.weights[k], 0.0);
}

TEST(Train, SeparableReachesFullAccuracy) {
    const auto p = planted(20, 77, 1.0);
    std::vector<PreferencePair> pairs;
    for (std::size_t s = 0; s < 20; ++s) {
        const auto o = (p.best[s] + 1) % kSerpSize;
        pairs.push_back({p.serps[s][p.best[s]].values, p.serps[s][o].values, 1.0});
    }
    // separable by construction: the planted direction orders every pair
    ExpertModel planted_model;
    planted_model.weights = p.direction;
    ASSERT_DOUBLE_EQ(pairwise_accuracy(planted_model, pairs), 1.0);

    const auto m = train(pairs, RankerConfig{});
    EXPECT_DOUBLE_EQ(pairwise_accuracy(m, pairs), 1.0);
}

TEST(Train, DeterministicBitForBit) {
    const auto p = planted(30, 5, 1.5);
    std::vector<PreferencePair> pairs;
    for (std::size_t s = 0; s < 30; ++s)
        for (std::size_t o = 0; o < kSerpSize; ++o)
            if (o != p.best[s]) pairs.push_back({p.serps[s][p.best[s]].values, p.serps[s][o].values, 1.0});
    RankerConfig c;
    c.seed = 99;
    EXPECT_EQ(train(pairs, c), train(pairs, c));
    RankerConfig c2 = c;
    c2.seed = 100;
    EXPECT_NE(train(pairs, c).weights, train(pairs, c2).weights);
}

TEST(Train, VoteFindsPlantedBestOnHeldOut) {
    const auto p = planted(150, 21, 2.5);
    std::vector<PreferencePair> pairs;
    for (std::size_t s = 0; s < 50; ++s)
        for (std::size_t o = 0; o < kSerpSize; ++o)
            if (o != p.best[s]) pairs.push_back({p.serps[s][p.best[s]].values, p.serps[s][o].values, 1.0});
    const auto m = train(pairs, RankerConfig{});
    for (std::size_t s = 50; s < 150; ++s) EXPECT_EQ(vote(m, p.serps[s]), p.best[s]) << s;
}

TEST(Train, DivergenceIsReported) {
    Features big{};
    big.fill(1e200);
    RankerConfig c;
    c.learning_rate = 1e200;
    c.l2 = 0.0;
    EXPECT_THROW(train({{big, Features{}, 1.0}}, c), NonFiniteLoss);
}

TEST(Train, RejectsBadConfig) {
    RankerConfig c;
    c.learning_rate = 0.0;
    EXPECT_THROW(train({}, c), ConfigError);
}

TEST(Score, DotProduct) {
    ExpertModel m;
    m.weights = unit(0);
    Features x{};
    x[0] = 3.0;
    EXPECT_EQ(score(m, x), 3.0);
    const std::vector<double> short_x(5, 1.0);
    EXPECT_THROW(score(m, short_x), DimensionMismatch);
}

TEST(Score, ZeroWeightsVoteRankOne) {
    ExpertModel m;
    EXPECT_EQ(vote(m, rank_features()), 0u);
}

TEST(Score, TiesGoToLowestRank) {
    ExpertModel m;
    m.weights = unit(1);
    auto f = rank_features();
    f[4].values[1] = 2.0;
    f[7].values[1] = 2.0;
    EXPECT_EQ(vote(m, f), 4u);
}

TEST(Score, Linearity) {
    Rng rng(2);
    ExpertModel m;
    for (auto& w : m.weights) w = standard_normal(rng);
    for (int n = 0; n < 100; ++n) {
        Features x{}, y{}, z{};
        const double a = standard_normal(rng), b = standard_normal(rng);
        for (std::size_t k = 0; k < kFeatureDim; ++k) {
            x[k] = standard_normal(rng);
            y[k] = standard_normal(rng);
            z[k] = a * x[k] + b * y[k];
        }
        EXPECT_NEAR(score(m, z), a * score(m, x) + b * score(m, y), 1e-10);
    }
}

TEST(Calibration, ClampedLogistic) {
    EXPECT_DOUBLE_EQ(clamped_logistic(0.0), 0.5);
    EXPECT_EQ(clamped_logistic(1000.0), 1.0 - kRewardClamp);
    EXPECT_EQ(clamped_logistic(-1000.0), kRewardClamp);
    EXPECT_NEAR(clamped_logistic(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(ExpertFile, RoundTrip) {
    std::vector<ExpertModel> experts(3);
    Rng rng(1);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        experts[i].topic_id = i;
        experts[i].training_pairs = 10 * i;
        for (auto& w : experts[i].weights) w = standard_normal(rng);
    }
    std::stringstream buf;
    write_experts(buf, experts);
    EXPECT_EQ(read_experts(buf), experts);

    std::ostringstream text;
    write_experts_text(text, experts);
    EXPECT_EQ(text.str().rfind("topic 0 pairs 0 dim 18", 0), 0u);
}

TEST(ExpertFile, RejectsWrongDimension) {
    std::stringstream buf;
    binio::put_magic(buf, kExpertMagic);
    binio::put_u64(buf, 1);
    binio::put_u64(buf, 0);
    binio::put_u64(buf, 0);
    binio::put_u64(buf, 17);
    EXPECT_THROW(read_experts(buf), DimensionMismatch);
}
