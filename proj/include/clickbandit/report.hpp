#pragma once

// JSON and CSV renderings of replay results.

#include <chrono>
#include <ctime>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "clickbandit/common.hpp"
#include "clickbandit/replay.hpp"

namespace clickbandit {

using Json = nlohmann::ordered_json;

inline Json to_json(const PipelineConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["warm_fraction"] = c.warm_fraction;
    j["warm_days"] = c.warm_days ? Json(*c.warm_days) : Json(nullptr);
    j["lda"] = {{"num_topics", c.lda.num_topics},
                {"alpha", c.lda.alpha()},
                {"beta", c.lda.beta_prior},
                {"iterations", c.lda.iterations}};
    j["ranker"] = {{"epochs", c.ranker.epochs}, {"learning_rate", c.ranker.learning_rate}, {"l2", c.ranker.l2}};
    j["infer_sweeps"] = c.infer_sweeps;
    j["gamma"] = c.gamma;
    j["eta"] = c.eta;
    j["v"] = c.v;
    j["alpha_explore"] = c.alpha_explore;
    j["retrain_daily"] = c.retrain_daily;
    j["gts_session_reset"] = c.gts_session_reset;
    j["trace_every"] = c.trace_every;
    return j;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline Json to_json(const ReplayReport& r) {
    Json j;
    j["policy"] = r.policy;
    j["seed"] = r.seed;
    j["events"] = r.events;
    j["clicks"] = r.cumulative_reward;
    j["ctr_at_1"] = r.ctr_at_1;
    j["default_ctr"] = r.default_ctr;
    j["lift_vs_default"] = r.lift_vs_default;
    if (r.regret) {
        j["regret"] = {{"expected_reward", r.regret->cumulative_reward},
                       {"oracle_reward", r.regret->oracle_reward},
                       {"cumulative_regret", r.regret->regret()}};
    }
    Json trace = Json::array();
    for (const auto& t : r.trace) {
        Json p{{"event_index", t.event_index}, {"cumulative_ctr", t.cumulative_ctr}};
        if (r.regret) p["regret"] = t.regret;
        trace.push_back(std::move(p));
    }
    j["trace"] = std::move(trace);
    return j;
}

/// Top-level envelope. `generated_at` is the only field that varies between identical runs.
inline Json report_envelope(const PipelineConfig& c, const EventStream* st, bool with_timestamp = true) {
    Json j;
    j["version"] = kVersion;
    j["seed"] = c.seed;
    j["config_hash"] = config_hash(c);
    if (with_timestamp) j["generated_at"] = utc_timestamp();
    j["config"] = to_json(c);
    if (st) {
        j["data"] = {{"sessions", st->sessions.size()},
                     {"warm_sessions", st->warm_session_count},
                     {"warm_days", st->warm_days},
                     {"first_scored_day", st->first_scored_day},
                     {"scored_events", st->events.size()},
                     {"expert_versions", st->experts.size()}};
    }
    return j;
}

inline Json replay_json(const PipelineConfig& c, const EventStream& st, const ReplayReport& r, bool with_timestamp = true) {
    Json j = report_envelope(c, &st, with_timestamp);
    j["result"] = to_json(r);
    return j;
}

inline Json compare_json(const PipelineConfig& c, const EventStream& st, const ComparisonReport& cmp,
                         bool with_timestamp = true) {
    Json j = report_envelope(c, &st, with_timestamp);
    j["default_ctr"] = cmp.default_ctr;
    Json arr = Json::array();
    for (const auto& r : cmp.results) arr.push_back(to_json(r));
    j["results"] = std::move(arr);
    return j;
}

inline Json sweep_json(const PipelineConfig& c, const std::vector<SweepPoint>& sweep, bool with_timestamp = true) {
    Json j = report_envelope(c, nullptr, with_timestamp);
    Json arr = Json::array();
    for (const auto& p : sweep) {
        Json row{{"clusters", p.clusters}};
        Json res = Json::array();
        for (const auto& r : p.results) res.push_back(to_json(r));
        row["results"] = std::move(res);
        arr.push_back(std::move(row));
    }
    j["sweep"] = std::move(arr);
    return j;
}

inline void write_trace_csv(std::ostream& os, const ReplayReport& r) {
    os << "event_index,cumulative_ctr";
    if (r.regret) os << ",regret";
    os << '\n';
    os << std::setprecision(17);
    for (const auto& t : r.trace) {
        os << t.event_index << ',' << t.cumulative_ctr;
        if (r.regret) os << ',' << t.regret;
        os << '\n';
    }
}

/// Human-readable table of a comparison.
inline void write_summary(std::ostream& os, const ComparisonReport& cmp) {
    os << std::left << std::setw(12) << "policy" << std::right << std::setw(10) << "events" << std::setw(12)
       << "ctr@1" << std::setw(12) << "lift" << std::setw(14) << "regret" << '\n';
    os << std::fixed;
    for (const auto& r : cmp.results) {
        os << std::left << std::setw(12) << r.policy << std::right << std::setw(10) << r.events << std::setw(12)
           << std::setprecision(4) << r.ctr_at_1 << std::setw(12) << std::showpos << r.lift_vs_default
           << std::noshowpos << std::setw(14);
        if (r.regret)
            os << std::setprecision(2) << r.regret->regret();
        else
            os << "-";
        os << '\n';
    }
    os << std::defaultfloat;
}

}  // namespace clickbandit
