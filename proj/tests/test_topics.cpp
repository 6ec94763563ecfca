#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "clickbandit/topics.hpp"

using namespace clickbandit;

namespace {

constexpr Id kA = 101;
constexpr Id kB = 202;

LabeledSerp serp(std::vector<Id> terms, std::vector<Id> clicked, Id base = 0) {
    LabeledSerp s;
    s.terms = std::move(terms);
    for (std::size_t i = 0; i < kSerpSize; ++i) s.results[i] = {base + i, 0};
    for (Id u : clicked) s.clicks.push_back({u, 0, Dwell::end(), 2});
    return s;
}

Session session(Id id, std::vector<LabeledSerp> serps) {
    Session s;
    s.session_id = id;
    s.serps = std::move(serps);
    return s;
}

std::vector<SessionDoc> planted_corpus() {
    std::vector<SessionDoc> docs;
    for (Id i = 0; i < 100; ++i) docs.push_back({i, i < 50 ? std::vector<Id>{kA, kA, kA} : std::vector<Id>{kB, kB, kB}});
    return docs;
}

std::vector<std::size_t> planted_labels() {
    std::vector<std::size_t> l(100);
    for (std::size_t i = 0; i < 100; ++i) l[i] = i < 50 ? 0 : 1;
    return l;
}

LdaConfig two_topics() {
    LdaConfig c;
    c.num_topics = 2;
    c.iterations = 200;
    c.seed = 7;
    return c;
}

}  // namespace

TEST(SessionDocs, SingleClickedQuery) {
    const auto docs = build_session_docs({session(1, {serp({5, 9}, {3})})});
    EXPECT_EQ(docs[0].terms, (std::vector<Id>{5, 9}));
}

TEST(SessionDocs, UnclickedQueryExcluded) {
    const auto docs = build_session_docs({session(1, {serp({1, 2}, {3}), serp({3}, {})})});
    EXPECT_EQ(docs[0].terms, (std::vector<Id>{1, 2}));
}

TEST(SessionDocs, NoClickFallback) {
    const auto docs = build_session_docs({session(1, {serp({1}, {}), serp({2}, {})})});
    EXPECT_EQ(docs[0].terms, (std::vector<Id>{1, 2}));
}

TEST(SessionDocs, ClickedUrlCarriesTermsAcrossSessions) {
    // url 4 was reached from {7} in session 1 and from {8} in session 2
    const auto docs = build_session_docs({session(1, {serp({7}, {4})}), session(2, {serp({8}, {4})})});
    EXPECT_EQ(docs[0].terms, (std::vector<Id>{7, 8}));
    EXPECT_EQ(docs[1].terms, (std::vector<Id>{7, 8}));
}

TEST(Lda, SingleTopic) {
    std::vector<SessionDoc> docs{{0, {1, 1, 2}}, {1, {2, 3}}};
    LdaConfig c;
    c.num_topics = 1;
    c.iterations = 10;
    const auto fit = gibbs_train(docs, c);
    // counts: 1 -> 2, 2 -> 2, 3 -> 1 of 5 tokens
    const double vb = 3 * c.beta_prior;
    EXPECT_NEAR(fit.model.phi_at(0, 0), (2 + c.beta_prior) / (5 + vb), 1e-12);
    EXPECT_NEAR(fit.model.phi_at(0, 2), (1 + c.beta_prior) / (5 + vb), 1e-12);
    for (const auto& t : fit.doc_topics) EXPECT_DOUBLE_EQ(t[0], 1.0);
    EXPECT_DOUBLE_EQ(infer_topic(fit.model, {1, 2})[0], 1.0);
}

TEST(Lda, PlantedRecovery) {
    const auto fit = gibbs_train(planted_corpus(), two_topics());
    EXPECT_GE(normalized_mutual_information(fit.assignments, planted_labels()), 0.9);
    const auto a = *fit.model.term_index(kA);
    const auto b = *fit.model.term_index(kB);
    const std::size_t ka = fit.model.phi_at(0, a) > fit.model.phi_at(1, a) ? 0 : 1;
    const std::size_t kb = fit.model.phi_at(0, b) > fit.model.phi_at(1, b) ? 0 : 1;
    EXPECT_NE(ka, kb);
    EXPECT_EQ(argmax_lowest(infer_topic(fit.model, {kA, kA, kA})), ka);
}

TEST(Lda, Deterministic) {
    const auto a = gibbs_train(planted_corpus(), two_topics());
    const auto b = gibbs_train(planted_corpus(), two_topics());
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(a.assignments, b.assignments);
    EXPECT_EQ(a.log_likelihood, b.log_likelihood);
}

TEST(Lda, ZeroIterationsReproducible) {
    auto c = two_topics();
    c.iterations = 0;
    const auto a = gibbs_train(planted_corpus(), c);
    EXPECT_EQ(a.model, gibbs_train(planted_corpus(), c).model);
    EXPECT_EQ(a.log_likelihood.size(), 1u);
}

TEST(Lda, NormalizationAndFiniteLikelihood) {
    const auto fit = gibbs_train(planted_corpus(), two_topics());
    for (std::size_t k = 0; k < 2; ++k) {
        double s = 0.0;
        for (std::size_t w = 0; w < fit.model.vocab_size(); ++w) s += fit.model.phi_at(k, w);
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    for (double ll : fit.log_likelihood) EXPECT_TRUE(std::isfinite(ll));
    for (const auto& t : fit.doc_topics) EXPECT_NEAR(std::accumulate(t.begin(), t.end(), 0.0), 1.0, 1e-9);
    const auto th = infer_topic(fit.model, {kB, 999});
    EXPECT_NEAR(std::accumulate(th.begin(), th.end(), 0.0), 1.0, 1e-9);
}

TEST(Lda, EmptyDocIsPrior) {
    const auto fit = gibbs_train(planted_corpus(), two_topics());
    const auto th = infer_topic(fit.model, {});
    EXPECT_DOUBLE_EQ(th[0], 0.5);
    EXPECT_DOUBLE_EQ(th[1], 0.5);
}

TEST(Lda, Errors) {
    EXPECT_THROW(gibbs_train({}, LdaConfig{}), EmptyVocabulary);
    EXPECT_THROW(gibbs_train({{0, {}}}, LdaConfig{}), EmptyVocabulary);
    LdaConfig c;
    c.num_topics = 0;
    EXPECT_THROW(gibbs_train(planted_corpus(), c), ConfigError);
}

TEST(Lda, DefaultAlpha) {
    LdaConfig c;
    c.num_topics = 5;
    EXPECT_DOUBLE_EQ(c.alpha(), 10.0);
}

TEST(Nmi, KnownValues) {
    EXPECT_DOUBLE_EQ(normalized_mutual_information({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
    EXPECT_NEAR(normalized_mutual_information({0, 1, 0, 1}, {0, 0, 1, 1}), 0.0, 1e-12);
    // a = {0,0,1,1}, b = {0,0,0,1}: H(a) = ln2, H(b) = H(1/4), I = H(b) - H(b|a) = H(1/4) - ln2/2
    const double hq = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
    const double expect = 2.0 * (hq - 0.5 * std::log(2.0)) / (std::log(2.0) + hq);
    EXPECT_NEAR(normalized_mutual_information({0, 0, 1, 1}, {0, 0, 0, 1}), expect, 1e-12);
}

TEST(TopicFile, RoundTrip) {
    const auto fit = gibbs_train(planted_corpus(), two_topics());
    std::stringstream buf;
    write_topic_model(buf, fit.model);
    EXPECT_EQ(read_topic_model(buf), fit.model);
}
