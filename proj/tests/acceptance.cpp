// Acceptance suite: prints one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "clickbandit/clickbandit.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace clickbandit;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// ---------------------------------------------------------------------------

Verdict ts_ridge_oracle() {
    Rng rng(101);
    TsLinear ts(kFeatureDim);
    std::vector<std::vector<double>> xs;
    std::vector<double> rs;
    for (int n = 0; n < 1000; ++n) {
        Vec x(kFeatureDim);
        for (auto& v : x) v = std::log1p(20.0 * uniform01(rng));
        const int r = uniform01(rng) < 0.4 ? 1 : 0;
        ts.update(x, r);
        xs.emplace_back(x.data(), x.data() + x.size());
        rs.push_back(r);
    }
    const auto want = oracle::ridge(xs, rs);
    double worst = 0.0;
    for (std::size_t k = 0; k < kFeatureDim; ++k) worst = std::max(worst, std::abs(ts.mu_hat()[Eigen::Index(k)] - want[k]));
    return {worst <= 1e-8, fmt("max |mu_hat - ridge| = %.3g over 1000 updates", worst)};
}

Verdict hsmm_enumeration() {
    Rng rng(202);
    double worst_l = 0.0, worst_f = 0.0, worst_p = 0.0;
    for (int n = 0; n < 50; ++n) {
        const std::size_t M = 2 + uniform_index(rng, 2), D = 1 + uniform_index(rng, 3), V = 1 + uniform_index(rng, 3);
        const std::size_t T = 1 + uniform_index(rng, 6);
        const auto m = hsmm::random_model(M, D, V, rng);
        hsmm::Sequence obs(T);
        for (auto& o : obs) o = uniform_index(rng, V);
        const auto tr = hsmm::forward(m, obs);
        worst_l = std::max(worst_l, std::abs(std::exp(tr.log_likelihood) - oracle::likelihood(m, obs)));
        for (std::size_t t = 1; t <= T; ++t) {
            const auto f = hsmm::filter(m, tr, t), fo = oracle::filter(m, obs, t);
            const auto p = hsmm::predict_next(m, tr, t), po = oracle::predict(m, obs, t);
            for (std::size_t k = 0; k < f.size(); ++k) {
                worst_f = std::max(worst_f, std::abs(f[k] - fo[k]));
                worst_p = std::max(worst_p, std::abs(p[k] - po[k]));
            }
        }
    }
    return {worst_l <= 1e-10 && worst_f <= 1e-10 && worst_p <= 1e-10,
            fmt("50 instances: likelihood %.2g, filter %.2g, predict %.2g", worst_l, worst_f, worst_p)};
}

Verdict em_monotone() {
    Rng rng(303);
    const auto truth = hsmm::random_model(3, 3, 4, rng);
    std::vector<hsmm::Sequence> corpus;
    for (int n = 0; n < 60; ++n) corpus.push_back(hsmm::sample_sequence(truth, 2 + uniform_index(rng, 6), rng));
    auto m = hsmm::random_model(3, 3, 4, rng);
    double prev = hsmm::corpus_log_likelihood(m, corpus);
    const double first = prev;
    double worst_drop = 0.0;
    for (int it = 0; it < 10; ++it) {
        m = hsmm::reestimate(m, corpus).model;
        const double now = hsmm::corpus_log_likelihood(m, corpus);
        worst_drop = std::max(worst_drop, prev - now);
        prev = now;
    }
    return {worst_drop <= 1e-9, fmt("log-likelihood %.4f -> %.4f, largest decrease %.2g", first, prev, worst_drop)};
}

Verdict gts_algebra() {
    GeneralizedThompson split(2, 0.0, 1.0);
    split.set_weights({3.0, 1.0});
    const std::vector<std::size_t> votes{0, 1};
    const auto p = split.probabilities(votes, 10);
    GeneralizedThompson up(1, 0.05, 1.0), down(1, 0.05, 1.0);
    const std::vector<double> rh{0.9};
    up.update(rh, 1);
    down.update(rh, 0);
    const bool ok = p[0] == 0.75 && p[1] == 0.25 && std::abs(up.weights()[0] - 0.9) < 1e-15 &&
                    std::abs(down.weights()[0] - 0.1) < 1e-15;
    return {ok, fmt("P = (%.17g, %.17g), w' = %.17g", p[0], p[1], up.weights()[0])};
}

// Votes the clicked URL; predicts a high click probability for its own vote.
class PerfectExpert : public Expert {
public:
    std::size_t vote(const ReplayEvent& e) override {
        for (std::size_t i = 0; i < kSerpSize; ++i)
            if (e.reward_of(i)) return i;
        return 0;
    }
    double predicted_reward(const ReplayEvent& e, std::size_t arm) override {
        return clamped_logistic(vote(e) == arm ? 4.0 : -4.0);
    }
};

class RandomExpert : public Expert {
public:
    explicit RandomExpert(std::uint64_t seed) : rng_(seed) {}
    std::size_t vote(const ReplayEvent& e) override {
        if (e.event_index != cached_for_ || !has_vote_) {
            cached_ = uniform_index(rng_, kSerpSize);
            cached_for_ = e.event_index;
            has_vote_ = true;
        }
        return cached_;
    }
    double predicted_reward(const ReplayEvent& e, std::size_t arm) override {
        return clamped_logistic(vote(e) == arm ? 4.0 : -4.0);
    }

private:
    Rng rng_;
    std::size_t cached_ = 0, cached_for_ = 0;
    bool has_vote_ = false;
};

class FollowExpert : public Policy {
public:
    std::string name() const override { return "perfect-expert"; }
    std::size_t select(const ReplayEvent& e, Rng&) override { return expert_.vote(e); }

private:
    PerfectExpert expert_;
};

Verdict expert_identification() {
    SynthConfig c;
    c.seed = 505;
    c.users = 10;
    c.intents = 7;
    c.days = 2;
    c.sessions_per_user_day = 200;
    c.p_top = 0.0;
    c.p_best = 1.0;
    c.p_pool = 0.0;
    c.p_distractor = 0.0;
    const auto log = fixture::synth(c);
    PipelineConfig cfg;
    cfg.lda.num_topics = 7;
    cfg.lda.iterations = 20;
    cfg.retrain_daily = false;
    const auto st = build_event_stream(log.sessions, cfg);
    if (st.events.size() < 5500) return {false, "too few scored events: " + std::to_string(st.events.size())};

    std::vector<std::unique_ptr<Expert>> experts;
    experts.push_back(std::make_unique<PerfectExpert>());
    for (int i = 1; i < 7; ++i) experts.push_back(std::make_unique<RandomExpert>(derive_seed(505, "random/" + std::to_string(i))));
    GtsPolicy gts("gts", std::move(experts), 0.05, 1.0);

    std::size_t reached = 0;
    bool hit = false;
    ReplayOptions opt;
    opt.keep_choices = true;
    opt.observer = [&](const ReplayEvent& e, std::size_t, int) {
        if (!hit && gts.normalized_weight(0) >= 0.95) {
            hit = true;
            reached = e.event_index + 1;
        }
    };
    const auto rep = replay(st, gts, policy_seed(505, "gts"), opt);
    std::uint64_t tail = 0;
    const std::size_t from = st.events.size() - 5000;
    for (std::size_t i = from; i < st.events.size(); ++i) tail += st.events[i].reward_of(rep.choices[i]);
    const double gts_tail = static_cast<double>(tail) / 5000.0;

    FollowExpert follow;
    ReplayOptions opt2;
    opt2.keep_choices = true;
    const auto solo = replay(st, follow, 1, opt2);
    std::uint64_t solo_tail = 0;
    for (std::size_t i = from; i < st.events.size(); ++i) solo_tail += st.events[i].reward_of(solo.choices[i]);
    const double expert_tail = static_cast<double>(solo_tail) / 5000.0;

    const bool ok = hit && reached <= 500 && gts_tail >= 0.95 * expert_tail;
    return {ok, "weight >= 0.95 after " + (hit ? std::to_string(reached) : std::string("never")) + " events; " +
                    fmt("final-5000 CTR gts %.4f vs expert %.4f", gts_tail, expert_tail)};
}

struct SharedLog {
    fixture::SynthLog log;
    PipelineConfig config;
    EventStream stream;
};

SharedLog& figure_log() {
    static SharedLog s = [] {
        SharedLog out;
        SynthConfig c;  // 10 users, 7 intents, 4 days, p_best 0.5, p_top 0.2
        c.seed = 606;
        out.log = fixture::synth(c);
        out.config.lda.num_topics = 7;
        out.stream = build_event_stream(out.log.sessions, out.config);
        return out;
    }();
    return s;
}

Verdict end_to_end_ordering() {
    auto& s = figure_log();
    const auto cmp = compare(s.stream, {"default", "gts", "ts-linear"}, s.config, &s.log.truth);
    const double n = static_cast<double>(s.stream.events.size());
    const double d = cmp.results[0].ctr_at_1;
    bool ok = n >= 1e4 && s.stream.warm_days == 3;
    std::string detail = fmt("%.0f events, default %.4f", n, d);
    for (std::size_t i = 1; i < cmp.results.size(); ++i) {
        const double p = cmp.results[i].ctr_at_1;
        const double sigma = std::sqrt(p * (1 - p) / n + 1.21 * d * (1 - d) / n);
        const double z = (p - 1.10 * d) / sigma;
        ok = ok && z >= 3.0;
        detail += ", " + cmp.results[i].policy + fmt(" %.4f (z=%.1f over +10%%)", p, z);
    }
    return {ok, detail};
}

Verdict regret_sublinear() {
    auto& s = figure_log();
    const auto rep = replay_named(s.stream, "ts-linear", s.config, &s.log.truth);
    if (rep.trace.size() < 10) return {false, "fewer than 10^4 scored events"};
    const double at1k = rep.trace[0].regret / 1000.0;
    const double at10k = rep.trace[9].regret / 10000.0;
    return {at10k < 0.5 * at1k, fmt("regret/t %.5f at 10^3, %.5f at 10^4 (ratio %.3f)", at1k, at10k, at10k / at1k)};
}

Verdict cluster_sweep() {
    auto& s = figure_log();
    const std::vector<std::size_t> ks{1, 3, 5, 7, 10};
    const auto sweep = sweep_clusters(s.log.sessions, ks, {"random", "gts"}, s.config, &s.log.truth);
    std::string curve;
    for (const auto& p : sweep) curve += fmt(" K=%.0f:%.4f", static_cast<double>(p.clusters), p.results[1].ctr_at_1);
    const bool ok = sweep.size() == ks.size() && sweep[0].results[1].ctr_at_1 >= sweep[0].results[0].ctr_at_1;
    return {ok, "gts CTR" + curve + fmt("; K=1 random %.4f", sweep[0].results[0].ctr_at_1)};
}

Verdict lda_recovery() {
    std::vector<SessionDoc> docs;
    std::vector<std::size_t> labels;
    for (Id i = 0; i < 100; ++i) {
        docs.push_back({i, i < 50 ? std::vector<Id>{11, 11, 11} : std::vector<Id>{22, 22, 22}});
        labels.push_back(i < 50 ? 0 : 1);
    }
    LdaConfig c;
    c.num_topics = 2;
    c.iterations = 200;
    c.seed = 909;
    const auto a = gibbs_train(docs, c);
    const auto b = gibbs_train(docs, c);
    const double nmi = normalized_mutual_information(a.assignments, labels);
    const bool same = a.model == b.model && a.assignments == b.assignments;
    return {nmi >= 0.9 && same, fmt("NMI %.4f; rerun identical: ", nmi) + (same ? "yes" : "no")};
}

Verdict labeling_table() {
    const std::vector<Dwell> dwell{Dwell::of(1),   Dwell::of(49),      Dwell::of(50), Dwell::of(399),
                                   Dwell::of(400), Dwell::of(1000000), Dwell::end()};
    const std::vector<int> want{0, 0, 1, 1, 2, 2, 2};
    std::string got;
    bool ok = true;
    for (std::size_t i = 0; i < dwell.size(); ++i) {
        const int g = grade_for(dwell[i]);
        ok = ok && g == want[i];
        got += std::to_string(g);
    }
    return {ok, "grades " + got};
}

Verdict compare_determinism() {
    SynthConfig c;
    c.seed = 1111;
    c.users = 6;
    c.days = 3;
    c.sessions_per_user_day = 60;
    const auto log = fixture::synth(c);
    PipelineConfig cfg;
    cfg.seed = 77;
    auto run = [&] {
        const auto st = build_event_stream(log.sessions, cfg);
        auto j = compare_json(cfg, st, compare(st, policy_names(), cfg, &log.truth), false);
        return j.dump(2);
    };
    const auto a = run(), b = run();
    return {a == b, std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no")};
}

Verdict parser_fuzz() {
    SynthConfig c;
    c.seed = 1212;
    c.users = 2;
    c.days = 1;
    c.sessions_per_user_day = 20;
    const auto log = fixture::synth(c);
    std::vector<std::string> lines;
    std::istringstream in(log.text);
    for (std::string l; std::getline(in, l);) lines.push_back(l);

    Rng rng(1212);
    const std::string alphabet = "0123456789\t,MQC -x";
    std::size_t parsed = 0, malformed = 0, other = 0;
    for (int n = 0; n < 100000; ++n) {
        std::string s = lines[uniform_index(rng, lines.size())];
        const auto edits = 1 + uniform_index(rng, 4);
        for (std::uint64_t k = 0; k < edits; ++k) {
            const std::size_t pos = s.empty() ? 0 : uniform_index(rng, s.size());
            switch (uniform_index(rng, 6)) {
                case 0: if (!s.empty()) s[pos] = alphabet[uniform_index(rng, alphabet.size())]; break;
                case 1: s.insert(pos, 1, alphabet[uniform_index(rng, alphabet.size())]); break;
                case 2: if (!s.empty()) s.erase(pos, 1); break;
                case 3: s.resize(pos); break;
                case 4: if (!s.empty()) s[pos] = static_cast<char>(uniform_index(rng, 256)); break;
                default: s += s.substr(pos); break;
            }
        }
        try {
            parse_log_line(s, static_cast<std::size_t>(n) + 1);
            ++parsed;
        } catch (const MalformedLine&) {
            ++malformed;
        } catch (...) {
            ++other;
        }
    }
    return {other == 0 && parsed + malformed == 100000,
            std::to_string(parsed) + " parsed, " + std::to_string(malformed) + " malformed, " + std::to_string(other) +
                " other"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"ts-linear matches ridge oracle", ts_ridge_oracle},
        {"hsmm matches segmentation enumeration", hsmm_enumeration},
        {"em log-likelihood non-decreasing", em_monotone},
        {"gts selection and weight algebra", gts_algebra},
        {"gts identifies the perfect expert", expert_identification},
        {"gts and ts-linear beat default", end_to_end_ordering},
        {"ts-linear regret sublinear", regret_sublinear},
        {"cluster sweep, K=1 gts >= random", cluster_sweep},
        {"lda planted-topic recovery", lda_recovery},
        {"dwell labeling truth table", labeling_table},
        {"compare json deterministic", compare_determinism},
        {"parser fuzz", parser_fuzz},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s AC%zu %s: %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed ? 1 : 0;
}
