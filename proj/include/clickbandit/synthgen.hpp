#pragma once

// Seeded synthetic click logs with planted intents and click probabilities,
// plus a truth sidecar holding the true click probability of every shown URL.
//
// Each intent owns a URL pool: a "top" URL that the default ranking always
// shows at rank 1, a "best" URL shown at a random lower rank, and further pool
// URLs. Remaining slots are filled with shared distractors. Clicks are
// independent Bernoulli draws; dwell times are drawn so that the labeler
// recovers each URL's intended grade.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "clickbandit/common.hpp"
#include "clickbandit/logmodel.hpp"

namespace clickbandit {

class ConfigInvalid : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct SynthConfig {
    std::optional<std::uint64_t> seed;
    std::uint64_t users = 10;
    std::uint64_t days = 4;
    std::uint64_t intents = 7;
    std::uint64_t sessions_per_user_day = 280;
    std::uint64_t min_queries = 2;
    std::uint64_t max_queries = 6;
    std::uint64_t terms_per_query = 3;
    std::uint64_t vocab_per_intent = 30;
    std::uint64_t shared_vocab = 0;        // terms common to all intents (overlap knob)
    std::uint64_t queries_per_intent = 12;
    std::uint64_t pool_size = 6;           // top + best + others, per intent
    std::uint64_t distractors = 200;
    std::uint64_t best_rank_min = 2;       // best URL lands uniformly in [best_rank_min, 10]
    double p_top = 0.2;
    double p_best = 0.5;
    double p_pool = 0.08;
    double p_distractor = 0.02;
    double user_affinity = 0.6;            // P(session intent = user's home intent)
    double grade2_min_p = 0.4;             // intended grade from click probability
    double grade1_min_p = 0.1;
    std::uint64_t dwell2_min = 400, dwell2_max = 800;
    std::uint64_t dwell1_min = 50, dwell1_max = 399;
    std::uint64_t dwell0_min = 1, dwell0_max = 49;

    /// Sets one key from text. Throws ConfigInvalid on unknown keys or bad values.
    void set(const std::string& key, const std::string& value) {
        auto as_u64 = [&]() {
            std::uint64_t v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc{} || p != value.data() + value.size())
                throw ConfigInvalid("config key '" + key + "' expects a non-negative integer, got '" + value + "'");
            return v;
        };
        auto as_f64 = [&]() {
            double v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc{} || p != value.data() + value.size())
                throw ConfigInvalid("config key '" + key + "' expects a number, got '" + value + "'");
            return v;
        };
        std::map<std::string, std::uint64_t*> ints{
            {"users", &users},
            {"days", &days},
            {"intents", &intents},
            {"sessions_per_user_day", &sessions_per_user_day},
            {"min_queries", &min_queries},
            {"max_queries", &max_queries},
            {"terms_per_query", &terms_per_query},
            {"vocab_per_intent", &vocab_per_intent},
            {"shared_vocab", &shared_vocab},
            {"queries_per_intent", &queries_per_intent},
            {"pool_size", &pool_size},
            {"distractors", &distractors},
            {"best_rank_min", &best_rank_min},
            {"dwell2_min", &dwell2_min},
            {"dwell2_max", &dwell2_max},
            {"dwell1_min", &dwell1_min},
            {"dwell1_max", &dwell1_max},
            {"dwell0_min", &dwell0_min},
            {"dwell0_max", &dwell0_max},
        };
        std::map<std::string, double*> reals{
            {"p_top", &p_top},
            {"p_best", &p_best},
            {"p_pool", &p_pool},
            {"p_distractor", &p_distractor},
            {"user_affinity", &user_affinity},
            {"grade2_min_p", &grade2_min_p},
            {"grade1_min_p", &grade1_min_p},
        };
        if (key == "seed") {
            seed = as_u64();
        } else if (auto it = ints.find(key); it != ints.end()) {
            *it->second = as_u64();
        } else if (auto jt = reals.find(key); jt != reals.end()) {
            *jt->second = as_f64();
        } else {
            throw ConfigInvalid("unknown config key '" + key + "'");
        }
    }

    void validate() const {
        if (!seed) throw ConfigInvalid("seed is mandatory");
        auto prob = [](double p, const char* name) {
            if (!(p >= 0.0 && p <= 1.0)) throw ConfigInvalid(std::string(name) + " must be in [0, 1]");
        };
        prob(p_top, "p_top");
        prob(p_best, "p_best");
        prob(p_pool, "p_pool");
        prob(p_distractor, "p_distractor");
        prob(user_affinity, "user_affinity");
        if (users == 0 || days == 0 || intents == 0 || sessions_per_user_day == 0)
            throw ConfigInvalid("users, days, intents and sessions_per_user_day must be positive");
        if (min_queries == 0 || min_queries > max_queries) throw ConfigInvalid("need 1 <= min_queries <= max_queries");
        if (terms_per_query == 0 || terms_per_query > vocab_per_intent + shared_vocab)
            throw ConfigInvalid("terms_per_query must be in [1, vocab_per_intent + shared_vocab]");
        if (queries_per_intent == 0) throw ConfigInvalid("queries_per_intent must be positive");
        if (pool_size < 2 || pool_size > kSerpSize) throw ConfigInvalid("pool_size must be in [2, 10]");
        if (distractors < kSerpSize - pool_size) throw ConfigInvalid("not enough distractors to fill a SERP");
        if (best_rank_min < 2 || best_rank_min > kSerpSize) throw ConfigInvalid("best_rank_min must be in [2, 10]");
        if (dwell2_min > dwell2_max || dwell1_min > dwell1_max || dwell0_min > dwell0_max)
            throw ConfigInvalid("dwell ranges must satisfy min <= max");
        if (dwell2_min < kDwellHighlyRelevant || dwell1_min < kDwellRelevant || dwell1_max >= kDwellHighlyRelevant ||
            dwell0_max >= kDwellRelevant)
            throw ConfigInvalid("dwell ranges must stay inside their grade's dwell band");
    }

    /// key=value dump in a fixed order, used for config echo and hashing.
    std::string to_text() const {
        std::ostringstream os;
        os << "seed=" << (seed ? std::to_string(*seed) : std::string("unset")) << '\n';
        os << "users=" << users << "\ndays=" << days << "\nintents=" << intents
           << "\nsessions_per_user_day=" << sessions_per_user_day << "\nmin_queries=" << min_queries
           << "\nmax_queries=" << max_queries << "\nterms_per_query=" << terms_per_query
           << "\nvocab_per_intent=" << vocab_per_intent << "\nshared_vocab=" << shared_vocab
           << "\nqueries_per_intent=" << queries_per_intent << "\npool_size=" << pool_size
           << "\ndistractors=" << distractors << "\nbest_rank_min=" << best_rank_min;
        os.precision(17);
        os << "\np_top=" << p_top << "\np_best=" << p_best << "\np_pool=" << p_pool << "\np_distractor=" << p_distractor
           << "\nuser_affinity=" << user_affinity << "\ngrade2_min_p=" << grade2_min_p
           << "\ngrade1_min_p=" << grade1_min_p;
        os << "\ndwell2_min=" << dwell2_min << "\ndwell2_max=" << dwell2_max << "\ndwell1_min=" << dwell1_min
           << "\ndwell1_max=" << dwell1_max << "\ndwell0_min=" << dwell0_min << "\ndwell0_max=" << dwell0_max << '\n';
        return os.str();
    }
};

/// Parses flat key=value text; blank lines and '#' comments are ignored.
inline SynthConfig parse_synth_config(std::istream& in, SynthConfig base = {}) {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string{};
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigInvalid("config line " + std::to_string(n) + ": expected key=value");
        base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

struct TruthRow {
    std::array<double, kSerpSize> p{};
    std::uint64_t intent = 0;
    friend bool operator==(const TruthRow&, const TruthRow&) = default;
};

struct SynthStats {
    std::size_t sessions = 0;
    std::size_t serps = 0;
    std::size_t clicks = 0;
    std::size_t lines = 0;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace detail

inline void write_truth_header(std::ostream& os) {
    os << "serp_index";
    for (std::size_t i = 1; i <= kSerpSize; ++i) os << ",p" << i;
    os << ",intent_id\n";
}

inline void write_truth_row(std::ostream& os, std::size_t serp_index, const TruthRow& row) {
    os << serp_index;
    for (double p : row.p) os << ',' << detail::format_double(p);
    os << ',' << row.intent << '\n';
}

/// Reads a truth sidecar; rows must be in serp_index order starting at 0.
inline std::vector<TruthRow> read_truth(std::istream& in) {
    std::vector<TruthRow> rows;
    std::string line;
    if (!std::getline(in, line)) throw DataError("truth sidecar is empty");
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        const auto f = detail::split(line, ',');
        if (f.size() != kSerpSize + 2) throw DataError("truth line " + std::to_string(n) + ": wrong field count");
        auto idx = detail::parse_uint(f[0]);
        auto intent = detail::parse_uint(f.back());
        if (!idx || !intent || *idx != rows.size())
            throw DataError("truth line " + std::to_string(n) + ": bad serp_index or intent");
        TruthRow row;
        row.intent = *intent;
        for (std::size_t i = 0; i < kSerpSize; ++i) {
            const auto s = f[1 + i];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), row.p[i]);
            if (ec != std::errc{} || p != s.data() + s.size() || !(row.p[i] >= 0.0 && row.p[i] <= 1.0))
                throw DataError("truth line " + std::to_string(n) + ": bad probability");
        }
        rows.push_back(row);
    }
    return rows;
}

inline std::vector<TruthRow> read_truth_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_truth(in);
}

/// Writes the log and the truth sidecar. Deterministic given config.
inline SynthStats generate(const SynthConfig& config, std::ostream& log, std::ostream& truth) {
    config.validate();
    const std::uint64_t seed = *config.seed;
    const std::uint64_t K = config.intents;
    const std::uint64_t pool = config.pool_size;
    const Id distractor_base = K * pool;
    const Id term_base_shared = K * config.vocab_per_intent;

    // Query templates per intent: fixed term sets.
    Rng tpl_rng(derive_seed(seed, "synth/templates"));
    std::vector<std::vector<std::vector<Id>>> templates(K);
    for (std::uint64_t k = 0; k < K; ++k) {
        std::vector<Id> vocab;
        for (std::uint64_t v = 0; v < config.vocab_per_intent; ++v) vocab.push_back(k * config.vocab_per_intent + v);
        for (std::uint64_t v = 0; v < config.shared_vocab; ++v) vocab.push_back(term_base_shared + v);
        for (std::uint64_t q = 0; q < config.queries_per_intent; ++q) {
            auto v = vocab;
            shuffle(v, tpl_rng);
            v.resize(config.terms_per_query);
            templates[k].push_back(std::move(v));
        }
    }

    auto url_prob = [&](Id url) {
        if (url >= distractor_base) return config.p_distractor;
        const auto r = url % pool;
        return r == 0 ? config.p_top : r == 1 ? config.p_best : config.p_pool;
    };
    auto intended_grade = [&](double p) { return p >= config.grade2_min_p ? 2 : p >= config.grade1_min_p ? 1 : 0; };

    Rng rng(derive_seed(seed, "synth/events"));
    auto draw_dwell = [&](int grade) -> std::uint64_t {
        switch (grade) {
            case 2: return static_cast<std::uint64_t>(uniform_int(rng, std::int64_t(config.dwell2_min), std::int64_t(config.dwell2_max)));
            case 1: return static_cast<std::uint64_t>(uniform_int(rng, std::int64_t(config.dwell1_min), std::int64_t(config.dwell1_max)));
            default: return static_cast<std::uint64_t>(uniform_int(rng, std::int64_t(config.dwell0_min), std::int64_t(config.dwell0_max)));
        }
    };

    SynthStats stats;
    write_truth_header(truth);
    Id next_session = 0;
    std::size_t serp_index = 0;
    auto emit = [&](const LogRecord& r) {
        log << serialize(r) << '\n';
        ++stats.lines;
    };

    for (std::uint64_t day = 0; day < config.days; ++day) {
        std::vector<Id> order;
        for (Id u = 0; u < config.users; ++u)
            for (std::uint64_t s = 0; s < config.sessions_per_user_day; ++s) order.push_back(u);
        shuffle(order, rng);

        for (Id user : order) {
            const Id sid = next_session++;
            ++stats.sessions;
            const std::uint64_t home = user % K;
            const std::uint64_t intent =
                uniform01(rng) < config.user_affinity ? home : uniform_index(rng, K);
            emit(SessionMeta{sid, day, user});

            const auto nq = static_cast<std::uint64_t>(
                uniform_int(rng, std::int64_t(config.min_queries), std::int64_t(config.max_queries)));
            std::uint64_t clock = 0;
            for (std::uint64_t q = 0; q < nq; ++q) {
                const auto tpl = uniform_index(rng, config.queries_per_intent);
                QueryAction qa;
                qa.session_id = sid;
                qa.time_passed = clock;
                qa.serp_id = q;
                qa.query_id = intent * config.queries_per_intent + tpl;
                qa.terms = templates[intent][tpl];

                // rank 1: top URL; best URL at a random rank in [best_rank_min, 10];
                // other pool URLs and distractors fill the remaining ranks.
                std::array<Id, kSerpSize> urls{};
                urls[0] = intent * pool;
                std::vector<Id> rest;
                for (std::uint64_t r = 2; r < pool; ++r) rest.push_back(intent * pool + r);
                std::vector<Id> dpool;
                while (rest.size() + dpool.size() < kSerpSize - 2) {
                    const Id d = distractor_base + uniform_index(rng, config.distractors);
                    if (std::find(dpool.begin(), dpool.end(), d) == dpool.end()) dpool.push_back(d);
                }
                rest.insert(rest.end(), dpool.begin(), dpool.end());
                shuffle(rest, rng);
                const auto best_rank = static_cast<std::size_t>(
                    uniform_int(rng, std::int64_t(config.best_rank_min), std::int64_t(kSerpSize)) - 1);
                std::size_t ri = 0;
                for (std::size_t r = 1; r < kSerpSize; ++r) urls[r] = r == best_rank ? intent * pool + 1 : rest[ri++];

                TruthRow row;
                row.intent = intent;
                for (std::size_t r = 0; r < kSerpSize; ++r) {
                    qa.results[r] = {urls[r], 1000000 + urls[r] / 3};
                    row.p[r] = url_prob(urls[r]);
                }
                emit(qa);
                write_truth_row(truth, serp_index++, row);
                ++stats.serps;

                std::vector<std::size_t> clicked;
                for (std::size_t r = 0; r < kSerpSize; ++r)
                    if (uniform01(rng) < row.p[r]) clicked.push_back(r);

                std::uint64_t t = clock + static_cast<std::uint64_t>(uniform_int(rng, 1, 20));
                for (std::size_t r : clicked) {
                    emit(ClickAction{sid, t, qa.serp_id, urls[r]});
                    ++stats.clicks;
                    t += draw_dwell(intended_grade(row.p[r]));
                }
                clock = clicked.empty() ? clock + static_cast<std::uint64_t>(uniform_int(rng, 5, 60)) : t;
            }
        }
    }
    return stats;
}

}  // namespace clickbandit
