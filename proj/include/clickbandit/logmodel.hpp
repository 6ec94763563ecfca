#pragma once

// Click-log records, session assembly, dwell times and 3-grade relevance labels.
//
// Line grammar (tab separated, one record per line):
//   SessionID  M  Day  UserID
//   SessionID  TimePassed  Q  SERPID  QueryID  t1,t2,...  url1,dom1 ... url10,dom10
//   SessionID  TimePassed  C  SERPID  URLID
// Integers are canonical non-negative decimals (no sign, no leading zeros).

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "clickbandit/common.hpp"

namespace clickbandit {

inline constexpr std::size_t kSerpSize = 10;

// Relevance thresholds in time units.
inline constexpr std::uint64_t kDwellRelevant = 50;
inline constexpr std::uint64_t kDwellHighlyRelevant = 400;

using Id = std::uint64_t;

struct SessionMeta {
    Id session_id = 0;
    std::uint64_t day = 0;
    Id user_id = 0;
    friend bool operator==(const SessionMeta&, const SessionMeta&) = default;
};

struct ResultEntry {
    Id url_id = 0;
    Id domain_id = 0;
    friend bool operator==(const ResultEntry&, const ResultEntry&) = default;
};

using ResultList = std::array<ResultEntry, kSerpSize>;

struct QueryAction {
    Id session_id = 0;
    std::uint64_t time_passed = 0;
    Id serp_id = 0;
    Id query_id = 0;
    std::vector<Id> terms;
    ResultList results{};
    friend bool operator==(const QueryAction&, const QueryAction&) = default;
};

struct ClickAction {
    Id session_id = 0;
    std::uint64_t time_passed = 0;
    Id serp_id = 0;
    Id url_id = 0;
    friend bool operator==(const ClickAction&, const ClickAction&) = default;
};

using LogRecord = std::variant<SessionMeta, QueryAction, ClickAction>;

inline Id record_session_id(const LogRecord& r) {
    return std::visit([](const auto& v) { return v.session_id; }, r);
}

class MalformedLine : public DataError {
public:
    MalformedLine(std::size_t line_no, const std::string& what)
        : DataError("line " + std::to_string(line_no) + ": " + what), line_no_(line_no) {}
    std::size_t line_no() const noexcept { return line_no_; }

private:
    std::size_t line_no_;
};

class OrphanClick : public DataError {
public:
    using DataError::DataError;
};

class DanglingSession : public DataError {
public:
    using DataError::DataError;
};

class NegativeDwell : public DataError {
public:
    using DataError::DataError;
};

/// Dwell time of a click, or the end-of-session marker when nothing follows it.
struct Dwell {
    std::uint64_t units = 0;
    bool end_of_session = false;

    static constexpr Dwell end() noexcept { return {0, true}; }
    static constexpr Dwell of(std::uint64_t u) noexcept { return {u, false}; }
    friend bool operator==(const Dwell&, const Dwell&) = default;
};

struct LabeledClick {
    Id url_id = 0;
    std::uint64_t time_passed = 0;
    Dwell dwell;
    int grade = 0;
    friend bool operator==(const LabeledClick&, const LabeledClick&) = default;
};

struct LabeledSerp {
    Id serp_id = 0;
    Id query_id = 0;
    std::uint64_t time_passed = 0;
    std::vector<Id> terms;
    ResultList results{};
    std::vector<LabeledClick> clicks;

    /// Rank (0-based) of url in the results, or nullopt.
    std::optional<std::size_t> rank_of(Id url) const {
        for (std::size_t i = 0; i < results.size(); ++i)
            if (results[i].url_id == url) return i;
        return std::nullopt;
    }

    bool clicked(Id url) const {
        return std::any_of(clicks.begin(), clicks.end(), [url](const LabeledClick& c) { return c.url_id == url; });
    }

    /// Grade of a shown URL: maximum over its clicks, 0 when unclicked.
    int url_grade(Id url) const {
        int g = 0;
        for (const auto& c : clicks)
            if (c.url_id == url) g = std::max(g, c.grade);
        return g;
    }

    std::array<int, kSerpSize> grades() const {
        std::array<int, kSerpSize> g{};
        for (std::size_t i = 0; i < kSerpSize; ++i) g[i] = url_grade(results[i].url_id);
        return g;
    }

    friend bool operator==(const LabeledSerp&, const LabeledSerp&) = default;
};

struct Session {
    Id session_id = 0;
    std::uint64_t day = 0;
    Id user_id = 0;
    std::vector<LabeledSerp> serps;

    std::size_t click_count() const {
        std::size_t n = 0;
        for (const auto& s : serps) n += s.clicks.size();
        return n;
    }

    friend bool operator==(const Session&, const Session&) = default;
};

// ---------------------------------------------------------------------------
// Parsing and serialization

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
    if (s.empty() || (s.size() > 1 && s[0] == '0')) return std::nullopt;
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Parses one log line. Throws MalformedLine carrying line_no on any grammar violation.
inline LogRecord parse_log_line(std::string_view line, std::size_t line_no = 0) {
    const auto fields = detail::split(line, '\t');
    auto num = [&](std::size_t i, const char* what) {
        auto v = detail::parse_uint(fields[i]);
        if (!v) throw MalformedLine(line_no, std::string("non-integer ") + what + " field");
        return *v;
    };
    if (fields.size() < 4) throw MalformedLine(line_no, "too few fields (" + std::to_string(fields.size()) + ")");

    if (fields[1] == "M") {
        if (fields.size() != 4) throw MalformedLine(line_no, "metadata record needs 4 fields");
        return SessionMeta{num(0, "session"), num(2, "day"), num(3, "user")};
    }
    if (fields[2] == "C") {
        if (fields.size() != 5) throw MalformedLine(line_no, "click record needs 5 fields");
        return ClickAction{num(0, "session"), num(1, "time"), num(3, "serp"), num(4, "url")};
    }
    if (fields[2] == "Q") {
        if (fields.size() != 6 + kSerpSize)
            throw MalformedLine(line_no, "query record needs 10 results, got " +
                                             std::to_string(fields.size() < 6 ? 0 : fields.size() - 6));
        QueryAction q;
        q.session_id = num(0, "session");
        q.time_passed = num(1, "time");
        q.serp_id = num(3, "serp");
        q.query_id = num(4, "query");
        if (!fields[5].empty()) {
            for (auto t : detail::split(fields[5], ',')) {
                auto v = detail::parse_uint(t);
                if (!v) throw MalformedLine(line_no, "non-integer term");
                q.terms.push_back(*v);
            }
        }
        for (std::size_t i = 0; i < kSerpSize; ++i) {
            auto pair = detail::split(fields[6 + i], ',');
            if (pair.size() != 2) throw MalformedLine(line_no, "result " + std::to_string(i + 1) + " is not url,domain");
            auto url = detail::parse_uint(pair[0]);
            auto dom = detail::parse_uint(pair[1]);
            if (!url || !dom) throw MalformedLine(line_no, "non-integer url or domain in result " + std::to_string(i + 1));
            q.results[i] = {*url, *dom};
        }
        for (std::size_t i = 0; i < kSerpSize; ++i)
            for (std::size_t j = i + 1; j < kSerpSize; ++j)
                if (q.results[i].url_id == q.results[j].url_id)
                    throw MalformedLine(line_no, "duplicate url in results");
        return q;
    }
    throw MalformedLine(line_no, "unknown record type");
}

inline std::string serialize(const LogRecord& record) {
    struct Visitor {
        std::string operator()(const SessionMeta& m) const {
            return std::to_string(m.session_id) + "\tM\t" + std::to_string(m.day) + "\t" + std::to_string(m.user_id);
        }
        std::string operator()(const QueryAction& q) const {
            std::string s = std::to_string(q.session_id) + "\t" + std::to_string(q.time_passed) + "\tQ\t" +
                             std::to_string(q.serp_id) + "\t" + std::to_string(q.query_id) + "\t";
            for (std::size_t i = 0; i < q.terms.size(); ++i) {
                if (i) s += ',';
                s += std::to_string(q.terms[i]);
            }
            for (const auto& r : q.results) s += "\t" + std::to_string(r.url_id) + "," + std::to_string(r.domain_id);
            return s;
        }
        std::string operator()(const ClickAction& c) const {
            return std::to_string(c.session_id) + "\t" + std::to_string(c.time_passed) + "\tC\t" +
                   std::to_string(c.serp_id) + "\t" + std::to_string(c.url_id);
        }
    };
    return std::visit(Visitor{}, record);
}

// ---------------------------------------------------------------------------
// Dwell and labels

/// Dwell of a click given the time of the next click/query in the session (nullopt = none).
inline Dwell compute_dwell(std::uint64_t click_time, std::optional<std::uint64_t> next_time) {
    if (!next_time) return Dwell::end();
    if (*next_time < click_time)
        throw NegativeDwell("next action at t=" + std::to_string(*next_time) + " precedes click at t=" +
                            std::to_string(click_time));
    return Dwell::of(*next_time - click_time);
}

inline int grade_for(const Dwell& d) noexcept {
    if (d.end_of_session || d.units >= kDwellHighlyRelevant) return 2;
    if (d.units >= kDwellRelevant) return 1;
    return 0;
}

/// Assigns grades to every click from its dwell.
inline LabeledSerp label_relevance(LabeledSerp serp) {
    for (auto& c : serp.clicks) c.grade = grade_for(c.dwell);
    return serp;
}

// ---------------------------------------------------------------------------
// Session assembly

struct AssemblyStats {
    std::size_t sessions = 0;
    std::size_t serps = 0;
    std::size_t clicks = 0;
    std::size_t dropped_orphan_clicks = 0;
    std::size_t dropped_dangling_records = 0;
    std::size_t dropped_unordered_sessions = 0;
};

/// Groups a session-contiguous record stream into labeled sessions.
/// Strict mode throws OrphanClick / DanglingSession; lenient mode drops and counts.
class SessionAssembler {
public:
    explicit SessionAssembler(bool strict = true) : strict_(strict) {}

    /// Feeds one record; returns the previous session when this record starts a new one.
    std::optional<Session> push(const LogRecord& record) {
        std::optional<Session> done;
        if (const auto* meta = std::get_if<SessionMeta>(&record)) {
            done = finish();
            current_.emplace();
            current_->meta = *meta;
            return done;
        }
        const Id sid = record_session_id(record);
        if (!current_ || current_->meta.session_id != sid) {
            if (strict_)
                throw DanglingSession("record for session " + std::to_string(sid) + " without preceding metadata");
            ++stats_.dropped_dangling_records;
            return done;
        }
        auto& cur = *current_;
        if (const auto* q = std::get_if<QueryAction>(&record)) {
            cur.serps.push_back(*q);
            cur.events.push_back({q->time_passed, cur.serps.size() - 1, std::nullopt});
        } else {
            const auto& c = std::get<ClickAction>(record);
            std::optional<std::size_t> serp_index;
            for (std::size_t i = cur.serps.size(); i-- > 0;) {
                if (cur.serps[i].serp_id == c.serp_id) {
                    serp_index = i;
                    break;
                }
            }
            bool shown = false;
            if (serp_index)
                for (const auto& r : cur.serps[*serp_index].results) shown = shown || r.url_id == c.url_id;
            if (!serp_index || !shown) {
                if (strict_)
                    throw OrphanClick("click on url " + std::to_string(c.url_id) + " in session " +
                                      std::to_string(sid) + " has no matching SERP " + std::to_string(c.serp_id));
                ++stats_.dropped_orphan_clicks;
                return done;
            }
            cur.events.push_back({c.time_passed, *serp_index, c.url_id});
        }
        return done;
    }

    /// Flushes the open session, if any.
    std::optional<Session> finish() {
        if (!current_) return std::nullopt;
        Pending cur = std::move(*current_);
        current_.reset();

        Session s;
        s.session_id = cur.meta.session_id;
        s.day = cur.meta.day;
        s.user_id = cur.meta.user_id;
        s.serps.reserve(cur.serps.size());
        for (const auto& q : cur.serps) {
            LabeledSerp ls;
            ls.serp_id = q.serp_id;
            ls.query_id = q.query_id;
            ls.time_passed = q.time_passed;
            ls.terms = q.terms;
            ls.results = q.results;
            s.serps.push_back(std::move(ls));
        }
        for (std::size_t e = 1; e < cur.events.size(); ++e) {
            if (cur.events[e].time >= cur.events[e - 1].time) continue;
            if (strict_) throw NegativeDwell("time_passed decreases within session " + std::to_string(s.session_id));
            ++stats_.dropped_unordered_sessions;
            return std::nullopt;
        }
        for (std::size_t e = 0; e < cur.events.size(); ++e) {
            const auto& ev = cur.events[e];
            if (!ev.click_url) continue;
            std::optional<std::uint64_t> next;
            if (e + 1 < cur.events.size()) next = cur.events[e + 1].time;
            LabeledClick click{*ev.click_url, ev.time, compute_dwell(ev.time, next), 0};
            click.grade = grade_for(click.dwell);
            s.serps[ev.serp_index].clicks.push_back(click);
        }
        ++stats_.sessions;
        stats_.serps += s.serps.size();
        stats_.clicks += s.click_count();
        return s;
    }

    const AssemblyStats& stats() const noexcept { return stats_; }

private:
    struct Event {
        std::uint64_t time;
        std::size_t serp_index;
        std::optional<Id> click_url;
    };
    struct Pending {
        SessionMeta meta;
        std::vector<QueryAction> serps;
        std::vector<Event> events;
    };

    bool strict_;
    std::optional<Pending> current_;
    AssemblyStats stats_;
};

/// Convenience for tests and small inputs: assembles a whole record list.
inline std::vector<Session> assemble_sessions(const std::vector<LogRecord>& records, bool strict = true) {
    SessionAssembler assembler(strict);
    std::vector<Session> out;
    for (const auto& r : records)
        if (auto s = assembler.push(r)) out.push_back(std::move(*s));
    if (auto s = assembler.finish()) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Reading log files

struct ReadOptions {
    bool strict = false;
    std::size_t max_diagnostics = 20;
};

struct ReadStats {
    std::size_t lines = 0;
    std::size_t records = 0;
    std::size_t malformed = 0;
    std::vector<std::string> diagnostics;
    AssemblyStats assembly;
};

/// Streams sessions from a log, invoking on_session for each completed session.
/// Malformed lines are skipped and counted unless options.strict.
inline ReadStats for_each_session(std::istream& in, const ReadOptions& options,
                                  const std::function<void(Session&&)>& on_session) {
    ReadStats stats;
    SessionAssembler assembler(options.strict);
    std::string line;
    while (std::getline(in, line)) {
        ++stats.lines;
        if (line.empty()) continue;
        LogRecord record;
        try {
            record = parse_log_line(line, stats.lines);
        } catch (const MalformedLine& e) {
            if (options.strict) throw;
            ++stats.malformed;
            if (stats.diagnostics.size() < options.max_diagnostics) stats.diagnostics.emplace_back(e.what());
            continue;
        }
        ++stats.records;
        if (auto s = assembler.push(record)) on_session(std::move(*s));
    }
    if (auto s = assembler.finish()) on_session(std::move(*s));
    stats.assembly = assembler.stats();
    return stats;
}

struct LogData {
    std::vector<Session> sessions;
    ReadStats stats;
};

/// Whole-file read: parses every line first, then assembles.
inline LogData read_log(std::istream& in, const ReadOptions& options = {}) {
    LogData data;
    std::vector<LogRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        ++data.stats.lines;
        if (line.empty()) continue;
        try {
            records.push_back(parse_log_line(line, data.stats.lines));
        } catch (const MalformedLine& e) {
            if (options.strict) throw;
            ++data.stats.malformed;
            if (data.stats.diagnostics.size() < options.max_diagnostics) data.stats.diagnostics.emplace_back(e.what());
        }
    }
    data.stats.records = records.size();
    SessionAssembler assembler(options.strict);
    for (const auto& r : records)
        if (auto s = assembler.push(r)) data.sessions.push_back(std::move(*s));
    if (auto s = assembler.finish()) data.sessions.push_back(std::move(*s));
    data.stats.assembly = assembler.stats();
    return data;
}

inline LogData read_log_file(const std::filesystem::path& path, const ReadOptions& options = {}) {
    auto in = open_input(path);
    return read_log(in, options);
}

}  // namespace clickbandit
