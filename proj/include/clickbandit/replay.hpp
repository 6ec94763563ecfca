#pragma once

// Offline replay of labeled sessions against rank-1 policies.
//
// The log is split by day into a warm-start prefix and a scored suffix. The
// warm prefix builds count stores, the session topic model and one ranker per
// topic. Scored SERPs become ReplayEvents whose features are extracted before
// the SERP's own clicks reach the count stores. Because stores evolve from
// logged clicks only, the event stream is policy independent and is built once
// and shared by every policy in a comparison.

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "clickbandit/bandit.hpp"
#include "clickbandit/common.hpp"
#include "clickbandit/featurize.hpp"
#include "clickbandit/logmodel.hpp"
#include "clickbandit/ranksvm.hpp"
#include "clickbandit/synthgen.hpp"
#include "clickbandit/topics.hpp"

namespace clickbandit {

class MissingTruth : public DataError {
public:
    using DataError::DataError;
};

class PolicyStateCorruption : public NumericError {
public:
    using NumericError::NumericError;
};

struct ReplayEvent {
    std::size_t serp_index = 0;  // global SERP index in log order (truth sidecar row)
    std::size_t event_index = 0; // position among scored events
    Id session_id = 0;
    Id user_id = 0;
    std::uint64_t day = 0;
    bool session_start = false;
    std::size_t expert_version = 0;
    const LabeledSerp* serp = nullptr;
    std::array<FeatureVector, kSerpSize> features{};
    std::vector<Vec> x;  // features as vectors, for the linear bandits

    int reward_of(std::size_t choice) const { return serp->clicked(serp->results.at(choice).url_id) ? 1 : 0; }
};

// ---------------------------------------------------------------------------
// Policies

class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual void begin_session(const ReplayEvent&) {}
    virtual std::size_t select(const ReplayEvent& event, Rng& rng) = 0;
    virtual void update(const ReplayEvent&, std::size_t /*chosen*/, int /*reward*/) {}
    virtual void set_experts(const std::vector<ExpertModel>&) {}
    /// Throws PolicyStateCorruption when an internal invariant no longer holds.
    virtual void check_state() const {}
};

/// Keeps the engine's original rank 1.
class DefaultPolicy : public Policy {
public:
    std::string name() const override { return "default"; }
    std::size_t select(const ReplayEvent&, Rng&) override { return 0; }
};

class RandomPolicy : public Policy {
public:
    std::string name() const override { return "random"; }
    std::size_t select(const ReplayEvent& e, Rng& rng) override {
        return static_cast<std::size_t>(uniform_index(rng, e.features.size()));
    }
};

class LinUcbPolicy : public Policy {
public:
    LinUcbPolicy(double alpha_explore) : state_(kFeatureDim, alpha_explore) {}
    std::string name() const override { return "linucb"; }
    std::size_t select(const ReplayEvent& e, Rng&) override { return state_.select(e.x); }
    void update(const ReplayEvent& e, std::size_t chosen, int reward) override { state_.update(e.x[chosen], reward); }
    void check_state() const override {
        if (state_.ridge().factor().info() != Eigen::Success || !state_.ridge().b().allFinite())
            throw PolicyStateCorruption("LinUCB design matrix lost positive definiteness");
    }
    const LinUcb& state() const noexcept { return state_; }

private:
    LinUcb state_;
};

class TsLinearPolicy : public Policy {
public:
    explicit TsLinearPolicy(double v) : state_(kFeatureDim, v) {}
    std::string name() const override { return "ts-linear"; }
    std::size_t select(const ReplayEvent& e, Rng& rng) override { return state_.select(e.x, rng); }
    void update(const ReplayEvent& e, std::size_t chosen, int reward) override { state_.update(e.x[chosen], reward); }
    void check_state() const override {
        if (!state_.mu_hat().allFinite()) throw PolicyStateCorruption("TS-linear posterior mean is not finite");
    }
    const TsLinear& state() const noexcept { return state_; }

private:
    TsLinear state_;
};

/// A voter inside GTS: proposes a rank-1 candidate and predicts the click
/// probability of whichever candidate was finally shown.
class Expert {
public:
    virtual ~Expert() = default;
    virtual std::size_t vote(const ReplayEvent& e) = 0;
    virtual double predicted_reward(const ReplayEvent& e, std::size_t arm) = 0;
    virtual void observe(const ReplayEvent&, std::size_t /*chosen*/, int /*reward*/) {}
};

class RankerExpert : public Expert {
public:
    explicit RankerExpert(ExpertModel model) : model_(std::move(model)) {}
    std::size_t vote(const ReplayEvent& e) override { return clickbandit::vote(model_, e.features); }
    double predicted_reward(const ReplayEvent& e, std::size_t arm) override {
        return clickbandit::predicted_reward(model_, e.features[arm].values);
    }
    void set_model(ExpertModel m) { model_ = std::move(m); }
    const ExpertModel& model() const noexcept { return model_; }

private:
    ExpertModel model_;
};

/// Long-term pseudo-expert: votes the TS-linear greedy choice and learns from
/// every shown candidate.
class TsPseudoExpert : public Expert {
public:
    explicit TsPseudoExpert(double v) : state_(kFeatureDim, v) {}
    std::size_t vote(const ReplayEvent& e) override { return state_.greedy(e.x); }
    double predicted_reward(const ReplayEvent& e, std::size_t arm) override {
        return std::clamp(state_.predicted(e.x[arm]), kRewardClamp, 1.0 - kRewardClamp);
    }
    void observe(const ReplayEvent& e, std::size_t chosen, int reward) override { state_.update(e.x[chosen], reward); }
    const TsLinear& state() const noexcept { return state_; }

private:
    TsLinear state_;
};

class GtsPolicy : public Policy {
public:
    GtsPolicy(std::string name, std::vector<std::unique_ptr<Expert>> experts, double gamma, double eta,
              bool reset_per_session = false)
        : name_(std::move(name)), experts_(std::move(experts)), gts_(experts_.size(), gamma, eta),
          reset_per_session_(reset_per_session) {}

    std::string name() const override { return name_; }

    void begin_session(const ReplayEvent&) override {
        if (reset_per_session_) gts_.reset();
    }

    std::size_t select(const ReplayEvent& e, Rng& rng) override {
        votes_.resize(experts_.size());
        for (std::size_t i = 0; i < experts_.size(); ++i) votes_[i] = experts_[i]->vote(e);
        const auto choice = gts_.select(votes_, e.features.size(), rng);
        last_probability_ = choice.probability;
        return choice.index;
    }

    void update(const ReplayEvent& e, std::size_t chosen, int reward) override {
        r_hat_.resize(experts_.size());
        for (std::size_t i = 0; i < experts_.size(); ++i) r_hat_[i] = experts_[i]->predicted_reward(e, chosen);
        gts_.update(r_hat_, reward);
        for (auto& ex : experts_) ex->observe(e, chosen, reward);
    }

    /// Replaces ranker experts' models in order; weights are kept.
    void set_experts(const std::vector<ExpertModel>& models) override {
        std::size_t k = 0;
        for (auto& ex : experts_)
            if (auto* r = dynamic_cast<RankerExpert*>(ex.get()); r && k < models.size()) r->set_model(models[k++]);
    }

    void check_state() const override {
        const double W = gts_.total_weight();
        if (!(W > 0.0) || !std::isfinite(W)) throw PolicyStateCorruption("GTS weight mass is not positive and finite");
    }

    const GeneralizedThompson& gts() const noexcept { return gts_; }
    double last_probability() const noexcept { return last_probability_; }

    /// Weight share of expert i.
    double normalized_weight(std::size_t i) const { return gts_.weights().at(i) / gts_.total_weight(); }

private:
    std::string name_;
    std::vector<std::unique_ptr<Expert>> experts_;
    GeneralizedThompson gts_;
    bool reset_per_session_;
    std::vector<std::size_t> votes_;
    std::vector<double> r_hat_;
    double last_probability_ = 0.0;
};

// ---------------------------------------------------------------------------
// Pipeline configuration

struct PipelineConfig {
    std::uint64_t seed = 42;
    double warm_fraction = 24.0 / 27.0;
    std::optional<std::uint64_t> warm_days;  // overrides warm_fraction
    LdaConfig lda{};
    RankerConfig ranker{};
    int infer_sweeps = 20;
    double gamma = 0.05;
    double eta = 1.0;
    double v = 0.5;
    double alpha_explore = 1.0;
    bool retrain_daily = true;
    bool gts_session_reset = false;
    std::size_t trace_every = 1000;
};

inline const std::vector<std::string>& policy_names() {
    static const std::vector<std::string> names{"default", "random", "linucb", "ts-linear", "gts", "gts+ts"};
    return names;
}

inline std::unique_ptr<Policy> make_policy(const std::string& name, const PipelineConfig& config,
                                           const std::vector<ExpertModel>& experts) {
    if (name == "default") return std::make_unique<DefaultPolicy>();
    if (name == "random") return std::make_unique<RandomPolicy>();
    if (name == "linucb") return std::make_unique<LinUcbPolicy>(config.alpha_explore);
    if (name == "ts-linear") return std::make_unique<TsLinearPolicy>(config.v);
    if (name == "gts" || name == "gts+ts") {
        std::vector<std::unique_ptr<Expert>> ex;
        for (const auto& m : experts) ex.push_back(std::make_unique<RankerExpert>(m));
        if (name == "gts+ts") ex.push_back(std::make_unique<TsPseudoExpert>(config.v));
        if (ex.empty()) throw ConfigError("gts needs at least one trained expert");
        return std::make_unique<GtsPolicy>(name, std::move(ex), config.gamma, config.eta, config.gts_session_reset);
    }
    throw ConfigError("unknown policy '" + name + "'");
}

inline std::uint64_t policy_seed(std::uint64_t master, const std::string& name) {
    return derive_seed(master, "policy/" + name);
}

// ---------------------------------------------------------------------------
// Event stream

enum class FeatureTiming { BeforeUpdate, AfterUpdate };

struct TrainingSerp {
    std::size_t session_pos = 0;  // index into the session list
    std::vector<PreferencePair> pairs;
};

struct EventStream {
    std::vector<Session> sessions;
    std::size_t warm_session_count = 0;
    std::uint64_t first_scored_day = 0;
    std::uint64_t warm_days = 0;
    TopicModel topics;
    std::vector<std::size_t> session_topic;          // per session in `sessions`
    std::vector<std::vector<ExpertModel>> experts;   // version 0 = warm-trained
    std::vector<ReplayEvent> events;
    std::vector<std::uint64_t> retrain_days;         // day that closed before each version > 0
    std::size_t total_serps = 0;
};

/// Called after each scored day closes. Returning a model list installs a new expert version.
using DayEndHook = std::function<std::optional<std::vector<ExpertModel>>(std::uint64_t day, const EventStream&,
                                                                         const std::vector<TrainingSerp>&)>;

inline std::vector<ExpertModel> train_topic_experts(const std::vector<TrainingSerp>& training,
                                                    const std::vector<std::size_t>& session_topic,
                                                    std::size_t num_topics, const RankerConfig& base,
                                                    std::uint64_t master_seed) {
    std::vector<std::vector<PreferencePair>> per_topic(num_topics);
    for (const auto& t : training) {
        auto& dst = per_topic[session_topic[t.session_pos]];
        dst.insert(dst.end(), t.pairs.begin(), t.pairs.end());
    }
    std::vector<ExpertModel> experts;
    for (std::size_t k = 0; k < num_topics; ++k) {
        RankerConfig cfg = base;
        cfg.seed = derive_seed(master_seed, "ranker/" + std::to_string(k));
        experts.push_back(train(per_topic[k], cfg, k));
    }
    return experts;
}

struct WarmModels {
    CountStores stores;
    std::vector<TrainingSerp> training;
    TopicModel topics;
    std::vector<std::size_t> session_topic;
    std::vector<ExpertModel> experts;
    std::vector<double> lda_log_likelihood;
    std::size_t serps = 0;
};

/// Warm-start pass over `sessions`: count stores, preference pairs, session
/// topics (hard LDA assignment) and one ranker per topic.
inline WarmModels fit_warm_models(const std::vector<Session>& sessions, const PipelineConfig& config) {
    WarmModels wm;
    for (std::size_t pos = 0; pos < sessions.size(); ++pos) {
        const auto& s = sessions[pos];
        for (const auto& serp : s.serps) {
            const auto f = extract_serp_features(wm.stores, serp, s.session_id, s.user_id);
            auto pairs = generate_pairs(serp, f);
            if (!pairs.empty()) wm.training.push_back({pos, std::move(pairs)});
            update_counts(wm.stores, serp, s.session_id, s.user_id);
            ++wm.serps;
        }
        wm.stores.evict_session(s.session_id);
    }
    LdaConfig lda = config.lda;
    lda.seed = derive_seed(config.seed, "lda");
    auto fit = gibbs_train(build_session_docs(sessions), lda);
    wm.topics = std::move(fit.model);
    wm.session_topic = std::move(fit.assignments);
    wm.lda_log_likelihood = std::move(fit.log_likelihood);
    wm.experts = train_topic_experts(wm.training, wm.session_topic, wm.topics.num_topics, config.ranker, config.seed);
    return wm;
}

inline std::uint64_t resolve_warm_days(const PipelineConfig& config, std::uint64_t num_days) {
    if (num_days < 2) throw ConfigError("replay needs at least two distinct days (warm-start and scored)");
    std::uint64_t w = config.warm_days ? *config.warm_days
                                       : static_cast<std::uint64_t>(config.warm_fraction * static_cast<double>(num_days));
    return std::clamp<std::uint64_t>(w, 1, num_days - 1);
}

inline std::vector<ExpertModel> retrain_experts(const EventStream& stream, const std::vector<TrainingSerp>& training,
                                                const PipelineConfig& config) {
    return train_topic_experts(training, stream.session_topic, stream.topics.num_topics, config.ranker, config.seed);
}

/// Builds the shared scored-event stream: warm pass, topics, experts, then
/// scored events with daily retraining (when enabled).
inline EventStream build_event_stream(std::vector<Session> sessions, const PipelineConfig& config,
                                      FeatureTiming timing = FeatureTiming::BeforeUpdate,
                                      DayEndHook day_end = nullptr) {
    EventStream st;
    st.sessions = std::move(sessions);
    if (st.sessions.empty()) throw DataError("log contains no sessions");
    for (std::size_t i = 1; i < st.sessions.size(); ++i)
        if (st.sessions[i].day < st.sessions[i - 1].day) throw DataError("sessions are not in day order");
    std::set<std::uint64_t> days;
    for (const auto& s : st.sessions) days.insert(s.day);
    st.warm_days = resolve_warm_days(config, days.size());
    st.first_scored_day = *std::next(days.begin(), static_cast<std::ptrdiff_t>(st.warm_days));
    for (const auto& s : st.sessions) {
        if (s.day >= st.first_scored_day) break;
        ++st.warm_session_count;
    }

    const std::vector<Session> warm(st.sessions.begin(),
                                    st.sessions.begin() + static_cast<std::ptrdiff_t>(st.warm_session_count));
    WarmModels wm = fit_warm_models(warm, config);
    CountStores stores = std::move(wm.stores);
    std::vector<TrainingSerp> training = std::move(wm.training);
    std::size_t serp_index = wm.serps;
    st.topics = std::move(wm.topics);
    st.session_topic = std::move(wm.session_topic);
    st.session_topic.resize(st.sessions.size(), 0);
    st.experts.push_back(std::move(wm.experts));

    auto features_for = [&](const Session& s, const LabeledSerp& serp) {
        return extract_serp_features(stores, serp, s.session_id, s.user_id);
    };

    if (!day_end && config.retrain_daily) {
        day_end = [&config](std::uint64_t, const EventStream& s, const std::vector<TrainingSerp>& t)
            -> std::optional<std::vector<ExpertModel>> { return retrain_experts(s, t, config); };
    }

    // Scored pass.
    std::size_t day_begin = st.warm_session_count;
    for (std::size_t pos = st.warm_session_count; pos < st.sessions.size(); ++pos) {
        const auto& s = st.sessions[pos];
        bool first = true;
        for (const auto& serp : s.serps) {
            ReplayEvent e;
            e.serp_index = serp_index++;
            e.event_index = st.events.size();
            e.session_id = s.session_id;
            e.user_id = s.user_id;
            e.day = s.day;
            e.session_start = first;
            e.expert_version = st.experts.size() - 1;
            e.serp = &serp;
            first = false;
            if (timing == FeatureTiming::AfterUpdate) update_counts(stores, serp, s.session_id, s.user_id);
            e.features = features_for(s, serp);
            auto pairs = generate_pairs(serp, e.features);
            if (!pairs.empty()) training.push_back({pos, std::move(pairs)});
            if (timing == FeatureTiming::BeforeUpdate) update_counts(stores, serp, s.session_id, s.user_id);
            e.x.reserve(kSerpSize);
            for (const auto& fv : e.features) e.x.push_back(Eigen::Map<const Vec>(fv.values.data(), kFeatureDim));
            st.events.push_back(std::move(e));
        }
        stores.evict_session(s.session_id);

        const bool day_closes = pos + 1 == st.sessions.size() || st.sessions[pos + 1].day != s.day;
        if (day_closes) {
            // Topic of each session scored today, by folding its document into the fixed topic model.
            const std::vector<Session> today(st.sessions.begin() + static_cast<std::ptrdiff_t>(day_begin),
                                             st.sessions.begin() + static_cast<std::ptrdiff_t>(pos + 1));
            const auto docs = build_session_docs(today);
            for (std::size_t i = 0; i < docs.size(); ++i) {
                const auto theta = infer_topic(st.topics, docs[i].terms, config.infer_sweeps,
                                               derive_seed(config.seed, "infer/" + std::to_string(docs[i].session_id)));
                st.session_topic[day_begin + i] = argmax_lowest(theta);
            }
            day_begin = pos + 1;
            if (pos + 1 < st.sessions.size() && day_end) {
                if (auto next = day_end(s.day, st, training)) {
                    st.experts.push_back(std::move(*next));
                    st.retrain_days.push_back(s.day);
                }
            }
        }
    }
    st.total_serps = serp_index;
    return st;
}

// ---------------------------------------------------------------------------
// Replay

struct TracePoint {
    std::size_t event_index = 0;  // events processed so far
    double cumulative_ctr = 0.0;
    double regret = 0.0;          // cumulative, when truth is available
};

struct RegretLedger {
    double cumulative_reward = 0.0;  // expected reward of the chosen URLs
    double oracle_reward = 0.0;      // expected reward of the best shown URL
    double regret() const { return oracle_reward - cumulative_reward; }
};

struct ReplayReport {
    std::string policy;
    std::uint64_t seed = 0;
    std::size_t events = 0;
    std::uint64_t cumulative_reward = 0;
    double ctr_at_1 = 0.0;
    double default_ctr = 0.0;
    double lift_vs_default = 0.0;
    std::vector<TracePoint> trace;
    std::optional<RegretLedger> regret;
    std::vector<std::size_t> choices;
};

struct ReplayOptions {
    std::size_t trace_every = 1000;
    const std::vector<TruthRow>* truth = nullptr;
    bool keep_choices = false;
    std::function<void(const ReplayEvent&, std::size_t chosen, int reward)> observer;
};

inline double default_ctr(const EventStream& st) {
    if (st.events.empty()) return 0.0;
    std::uint64_t r = 0;
    for (const auto& e : st.events) r += static_cast<std::uint64_t>(e.reward_of(0));
    return static_cast<double>(r) / static_cast<double>(st.events.size());
}

/// Replays every scored event through the policy. Deterministic given (stream, policy, seed).
inline ReplayReport replay(const EventStream& st, Policy& policy, std::uint64_t seed, const ReplayOptions& options = {}) {
    if (options.truth && options.truth->size() != st.total_serps)
        throw MissingTruth("truth sidecar has " + std::to_string(options.truth->size()) + " rows but the log has " +
                           std::to_string(st.total_serps) + " SERPs");
    ReplayReport rep;
    rep.policy = policy.name();
    rep.seed = seed;
    Rng rng(seed);
    std::size_t version = 0;
    if (!st.experts.empty()) policy.set_experts(st.experts[0]);
    RegretLedger ledger;
    for (const auto& e : st.events) {
        if (e.expert_version != version) {
            version = e.expert_version;
            policy.set_experts(st.experts[version]);
        }
        if (e.session_start) policy.begin_session(e);
        const std::size_t chosen = policy.select(e, rng);
        if (chosen >= e.features.size()) throw PolicyStateCorruption(policy.name() + " chose an out-of-range candidate");
        const int reward = e.reward_of(chosen);
        policy.update(e, chosen, reward);
        if (options.observer) options.observer(e, chosen, reward);
        rep.cumulative_reward += static_cast<std::uint64_t>(reward);
        ++rep.events;
        if (options.keep_choices) rep.choices.push_back(chosen);
        if (options.truth) {
            const auto& p = (*options.truth)[e.serp_index].p;
            ledger.cumulative_reward += p[chosen];
            ledger.oracle_reward += *std::max_element(p.begin(), p.end());
        }
        if (options.trace_every && rep.events % options.trace_every == 0) {
            policy.check_state();
            rep.trace.push_back({rep.events, static_cast<double>(rep.cumulative_reward) / static_cast<double>(rep.events),
                                 options.truth ? ledger.regret() : 0.0});
        }
    }
    policy.check_state();
    rep.ctr_at_1 = rep.events ? static_cast<double>(rep.cumulative_reward) / static_cast<double>(rep.events) : 0.0;
    rep.default_ctr = default_ctr(st);
    rep.lift_vs_default = rep.default_ctr > 0.0 ? rep.ctr_at_1 / rep.default_ctr - 1.0 : 0.0;
    if (options.truth) rep.regret = ledger;
    return rep;
}

/// Replays a named policy with its seed derived from the master seed.
inline ReplayReport replay_named(const EventStream& st, const std::string& name, const PipelineConfig& config,
                                 const std::vector<TruthRow>* truth = nullptr) {
    auto policy = make_policy(name, config, st.experts.front());
    ReplayOptions opt;
    opt.trace_every = config.trace_every;
    opt.truth = truth;
    return replay(st, *policy, policy_seed(config.seed, name), opt);
}

struct ComparisonReport {
    std::vector<ReplayReport> results;
    double default_ctr = 0.0;
};

/// Runs each policy over the same event stream with independent derived seeds.
inline ComparisonReport compare(const EventStream& st, const std::vector<std::string>& policies,
                                const PipelineConfig& config, const std::vector<TruthRow>* truth = nullptr) {
    ComparisonReport cmp;
    cmp.default_ctr = default_ctr(st);
    for (const auto& name : policies) cmp.results.push_back(replay_named(st, name, config, truth));
    return cmp;
}

struct SweepPoint {
    std::size_t clusters = 0;
    std::vector<ReplayReport> results;
};

/// Re-runs the pipeline for each topic count (mirrors a CTR-vs-clusters curve).
inline std::vector<SweepPoint> sweep_clusters(const std::vector<Session>& sessions, const std::vector<std::size_t>& ks,
                                              const std::vector<std::string>& policies, PipelineConfig config,
                                              const std::vector<TruthRow>* truth = nullptr) {
    std::vector<SweepPoint> out;
    for (std::size_t k : ks) {
        config.lda.num_topics = k;
        const auto st = build_event_stream(sessions, config);
        out.push_back({k, compare(st, policies, config, truth).results});
    }
    return out;
}

}  // namespace clickbandit
