#pragma once

// Session documents built from click-anchored query terms, and an LDA topic
// model fitted by collapsed Gibbs sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <unordered_map>
#include <vector>

#include "clickbandit/common.hpp"
#include "clickbandit/logmodel.hpp"

namespace clickbandit {

struct SessionDoc {
    Id session_id = 0;
    std::vector<Id> terms;
    friend bool operator==(const SessionDoc&, const SessionDoc&) = default;
};

/// Maps each clicked URL to the set of query terms that led to a click on it,
/// then represents each session by the union of its clicked URLs' term sets.
/// Sessions without clicks fall back to all their query terms.
inline std::vector<SessionDoc> build_session_docs(const std::vector<Session>& sessions) {
    std::unordered_map<Id, std::set<Id>> url_terms;
    for (const auto& s : sessions)
        for (const auto& serp : s.serps)
            for (const auto& c : serp.clicks) url_terms[c.url_id].insert(serp.terms.begin(), serp.terms.end());

    std::vector<SessionDoc> docs;
    docs.reserve(sessions.size());
    for (const auto& s : sessions) {
        std::set<Id> terms;
        bool any_click = false;
        for (const auto& serp : s.serps) {
            for (const auto& c : serp.clicks) {
                any_click = true;
                const auto& t = url_terms[c.url_id];
                terms.insert(t.begin(), t.end());
            }
        }
        if (!any_click)
            for (const auto& serp : s.serps) terms.insert(serp.terms.begin(), serp.terms.end());
        docs.push_back({s.session_id, std::vector<Id>(terms.begin(), terms.end())});
    }
    return docs;
}

class EmptyVocabulary : public DataError {
public:
    using DataError::DataError;
};

struct TopicModel {
    std::size_t num_topics = 0;
    double alpha_prior = 0.0;
    double beta_prior = 0.0;
    std::vector<Id> vocab;      // sorted term ids; position is the column index
    std::vector<double> phi;    // num_topics x vocab.size(), row-major

    std::size_t vocab_size() const noexcept { return vocab.size(); }

    std::optional<std::size_t> term_index(Id term) const {
        auto it = std::lower_bound(vocab.begin(), vocab.end(), term);
        if (it == vocab.end() || *it != term) return std::nullopt;
        return static_cast<std::size_t>(it - vocab.begin());
    }

    double phi_at(std::size_t k, std::size_t w) const { return phi[k * vocab.size() + w]; }

    friend bool operator==(const TopicModel&, const TopicModel&) = default;
};

struct LdaConfig {
    std::size_t num_topics = 7;
    double alpha_prior = 0.0;  // <= 0 selects 50 / K
    double beta_prior = 0.01;
    int iterations = 200;
    std::uint64_t seed = 1;

    double alpha() const { return alpha_prior > 0.0 ? alpha_prior : 50.0 / static_cast<double>(num_topics); }
};

struct LdaFit {
    TopicModel model;
    std::vector<std::vector<double>> doc_topics;  // smoothed proportions per doc
    std::vector<std::size_t> assignments;         // argmax topic per doc
    std::vector<double> log_likelihood;           // log p(w | z) after init and each sweep
};

inline std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

namespace detail {

inline std::size_t sample_discrete(const std::vector<double>& weights, Rng& rng) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform01(rng) * total;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        u -= weights[k];
        if (u < 0.0) return k;
    }
    return weights.size() - 1;
}

}  // namespace detail

/// Collapsed Gibbs LDA. Deterministic given config (including seed).
inline LdaFit gibbs_train(const std::vector<SessionDoc>& docs, const LdaConfig& config) {
    const std::size_t K = config.num_topics;
    if (K < 1) throw ConfigError("LDA needs at least one topic");
    if (docs.empty()) throw EmptyVocabulary("LDA corpus has no documents");
    if (!(config.beta_prior > 0.0) || config.iterations < 0) throw ConfigError("LDA: beta > 0, iterations >= 0");
    const double alpha = config.alpha();
    const double beta = config.beta_prior;

    TopicModel model;
    model.num_topics = K;
    model.alpha_prior = alpha;
    model.beta_prior = beta;
    {
        std::set<Id> vocab;
        for (const auto& d : docs) vocab.insert(d.terms.begin(), d.terms.end());
        if (vocab.empty()) throw EmptyVocabulary("LDA corpus contains no terms");
        model.vocab.assign(vocab.begin(), vocab.end());
    }
    const std::size_t V = model.vocab.size();
    const double vbeta = static_cast<double>(V) * beta;

    std::vector<std::vector<std::size_t>> words(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d)
        for (Id t : docs[d].terms) words[d].push_back(*model.term_index(t));

    std::vector<std::vector<std::size_t>> z(docs.size());
    std::vector<std::vector<double>> n_dk(docs.size(), std::vector<double>(K, 0.0));
    std::vector<double> n_kw(K * V, 0.0);
    std::vector<double> n_k(K, 0.0);

    Rng rng(config.seed);
    for (std::size_t d = 0; d < docs.size(); ++d) {
        z[d].resize(words[d].size());
        for (std::size_t i = 0; i < words[d].size(); ++i) {
            const auto k = static_cast<std::size_t>(uniform_index(rng, K));
            z[d][i] = k;
            n_dk[d][k] += 1;
            n_kw[k * V + words[d][i]] += 1;
            n_k[k] += 1;
        }
    }

    LdaFit fit;
    auto corpus_ll = [&] {
        double ll = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            ll += std::lgamma(vbeta) - std::lgamma(n_k[k] + vbeta);
            for (std::size_t w = 0; w < V; ++w) ll += std::lgamma(n_kw[k * V + w] + beta) - std::lgamma(beta);
        }
        return ll;
    };
    fit.log_likelihood.push_back(corpus_ll());

    std::vector<double> p(K);
    for (int it = 0; it < config.iterations; ++it) {
        for (std::size_t d = 0; d < docs.size(); ++d) {
            for (std::size_t i = 0; i < words[d].size(); ++i) {
                const std::size_t w = words[d][i];
                std::size_t k = z[d][i];
                n_dk[d][k] -= 1;
                n_kw[k * V + w] -= 1;
                n_k[k] -= 1;
                for (std::size_t j = 0; j < K; ++j)
                    p[j] = (n_dk[d][j] + alpha) * (n_kw[j * V + w] + beta) / (n_k[j] + vbeta);
                k = detail::sample_discrete(p, rng);
                z[d][i] = k;
                n_dk[d][k] += 1;
                n_kw[k * V + w] += 1;
                n_k[k] += 1;
            }
        }
        fit.log_likelihood.push_back(corpus_ll());
    }

    model.phi.resize(K * V);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t w = 0; w < V; ++w) model.phi[k * V + w] = (n_kw[k * V + w] + beta) / (n_k[k] + vbeta);

    fit.doc_topics.resize(docs.size());
    fit.assignments.resize(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const double denom = static_cast<double>(words[d].size()) + static_cast<double>(K) * alpha;
        fit.doc_topics[d].resize(K);
        for (std::size_t k = 0; k < K; ++k) fit.doc_topics[d][k] = (n_dk[d][k] + alpha) / denom;
        fit.assignments[d] = argmax_lowest(fit.doc_topics[d]);
    }
    fit.model = std::move(model);
    return fit;
}

/// Fixed-phi Gibbs folding-in. Unknown terms are ignored; an empty doc returns the prior (uniform).
inline std::vector<double> infer_topic(const TopicModel& model, const std::vector<Id>& terms, int sweeps = 20,
                                       std::uint64_t seed = 1) {
    const std::size_t K = model.num_topics;
    std::vector<std::size_t> words;
    for (Id t : terms)
        if (auto w = model.term_index(t)) words.push_back(*w);
    std::vector<double> n_k(K, 0.0);
    std::vector<std::size_t> z(words.size());
    Rng rng(seed);
    std::vector<double> p(K);
    for (std::size_t i = 0; i < words.size(); ++i) {
        for (std::size_t k = 0; k < K; ++k) p[k] = model.phi_at(k, words[i]);
        z[i] = detail::sample_discrete(p, rng);
        n_k[z[i]] += 1;
    }
    for (int s = 0; s < sweeps; ++s) {
        for (std::size_t i = 0; i < words.size(); ++i) {
            n_k[z[i]] -= 1;
            for (std::size_t k = 0; k < K; ++k) p[k] = (n_k[k] + model.alpha_prior) * model.phi_at(k, words[i]);
            z[i] = detail::sample_discrete(p, rng);
            n_k[z[i]] += 1;
        }
    }
    const double denom = static_cast<double>(words.size()) + static_cast<double>(K) * model.alpha_prior;
    std::vector<double> theta(K);
    for (std::size_t k = 0; k < K; ++k) theta[k] = (n_k[k] + model.alpha_prior) / denom;
    return theta;
}

/// NMI with arithmetic-mean normalization; 1.0 when both labelings are constant and equal.
inline double normalized_mutual_information(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.size() != b.size() || a.empty()) throw ConfigError("NMI needs two equal-length non-empty labelings");
    const double n = static_cast<double>(a.size());
    std::map<std::size_t, double> ca, cb;
    std::map<std::pair<std::size_t, std::size_t>, double> cab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1;
        cb[b[i]] += 1;
        cab[{a[i], b[i]}] += 1;
    }
    auto entropy = [n](const std::map<std::size_t, double>& c) {
        double h = 0.0;
        for (const auto& [k, v] : c) h -= (v / n) * std::log(v / n);
        return h;
    };
    double mi = 0.0;
    for (const auto& [k, v] : cab) mi += (v / n) * std::log(v * n / (ca[k.first] * cb[k.second]));
    const double ha = entropy(ca), hb = entropy(cb);
    if (ha + hb == 0.0) return 1.0;
    return std::clamp(2.0 * mi / (ha + hb), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Model file: "CBTOPIC1", u64 K, u64 V, f64 alpha, f64 beta, K*V f64 phi
// (row-major), then V pairs of (u64 term id, u64 index).

inline constexpr std::string_view kTopicMagic = "CBTOPIC1";

inline void write_topic_model(std::ostream& os, const TopicModel& m) {
    binio::put_magic(os, kTopicMagic);
    binio::put_u64(os, m.num_topics);
    binio::put_u64(os, m.vocab.size());
    binio::put_f64(os, m.alpha_prior);
    binio::put_f64(os, m.beta_prior);
    for (double v : m.phi) binio::put_f64(os, v);
    for (std::size_t i = 0; i < m.vocab.size(); ++i) {
        binio::put_u64(os, m.vocab[i]);
        binio::put_u64(os, i);
    }
}

inline TopicModel read_topic_model(std::istream& is) {
    binio::expect_magic(is, kTopicMagic);
    TopicModel m;
    m.num_topics = binio::get_u64(is);
    const auto V = binio::get_u64(is);
    if (m.num_topics == 0 || m.num_topics > 100000 || V > (1ULL << 28)) throw DataError("topic model size out of range");
    m.alpha_prior = binio::get_f64(is);
    m.beta_prior = binio::get_f64(is);
    m.phi.resize(m.num_topics * V);
    for (double& v : m.phi) v = binio::get_f64(is);
    m.vocab.resize(V);
    for (std::uint64_t i = 0; i < V; ++i) {
        const Id term = binio::get_u64(is);
        const auto idx = binio::get_u64(is);
        if (idx != i) throw DataError("topic vocab not in index order");
        m.vocab[i] = term;
    }
    if (!std::is_sorted(m.vocab.begin(), m.vocab.end())) throw DataError("topic vocab not sorted");
    return m;
}

}  // namespace clickbandit
