#pragma once

// Per-URL click counters at session, user and global scope, and the
// 18-dimensional feature vector built from them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "clickbandit/common.hpp"
#include "clickbandit/logmodel.hpp"

namespace clickbandit {

inline constexpr std::size_t kCountersPerScope = 6;
inline constexpr std::size_t kFeatureDim = 18;

/// Counter order matches the feature layout within each scope block.
struct UrlCounters {
    std::uint64_t level2 = 0;
    std::uint64_t level1 = 0;
    std::uint64_t level0 = 0;
    std::uint64_t shown = 0;
    std::uint64_t missed = 0;
    std::uint64_t skipped = 0;

    std::array<std::uint64_t, kCountersPerScope> as_array() const {
        return {level2, level1, level0, shown, missed, skipped};
    }
    static UrlCounters from_array(const std::array<std::uint64_t, kCountersPerScope>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5]};
    }
    UrlCounters& operator+=(const UrlCounters& o) {
        level2 += o.level2;
        level1 += o.level1;
        level0 += o.level0;
        shown += o.shown;
        missed += o.missed;
        skipped += o.skipped;
        return *this;
    }
    friend bool operator==(const UrlCounters&, const UrlCounters&) = default;
};

using Features = std::array<double, kFeatureDim>;

struct FeatureVector {
    Id url_id = 0;
    Features values{};
};

enum class OutcomeKind { Clicked, Skipped, Missed };

struct Outcome {
    OutcomeKind kind = OutcomeKind::Missed;
    int grade = 0;  // meaningful for Clicked only
    friend bool operator==(const Outcome&, const Outcome&) = default;
};

class UrlNotShown : public DataError {
public:
    using DataError::DataError;
};

/// Clicked if any click hits the URL; otherwise skipped when it ranks strictly
/// above the lowest-ranked clicked URL, else missed.
inline Outcome classify_outcome(const LabeledSerp& serp, Id url_id) {
    const auto rank = serp.rank_of(url_id);
    if (!rank) throw UrlNotShown("url " + std::to_string(url_id) + " not in SERP " + std::to_string(serp.serp_id));
    if (serp.clicked(url_id)) return {OutcomeKind::Clicked, serp.url_grade(url_id)};
    std::optional<std::size_t> lowest_click;
    for (const auto& c : serp.clicks) {
        const auto r = serp.rank_of(c.url_id);
        if (r && (!lowest_click || *r > *lowest_click)) lowest_click = r;
    }
    if (lowest_click && *rank < *lowest_click) return {OutcomeKind::Skipped, 0};
    return {OutcomeKind::Missed, 0};
}

namespace detail {
struct PairHash {
    std::size_t operator()(const std::pair<Id, Id>& k) const noexcept {
        return static_cast<std::size_t>(mix64(k.first * 0x9e3779b97f4a7c15ULL ^ k.second));
    }
};
}  // namespace detail

enum class Scope : std::uint8_t { Session = 0, User = 1, Global = 2 };

class CountStores {
public:
    /// Counters for one (scope, key, url); absent entries read as zero.
    UrlCounters session(Id session_id, Id url) const {
        auto it = session_.find(session_id);
        if (it == session_.end()) return {};
        return lookup(it->second, url);
    }
    UrlCounters user(Id user_id, Id url) const {
        auto it = user_.find({user_id, url});
        return it == user_.end() ? UrlCounters{} : it->second;
    }
    UrlCounters global(Id url) const { return lookup(global_, url); }

    void add(Scope scope, Id key, Id url, const UrlCounters& delta) {
        switch (scope) {
            case Scope::Session: session_[key][url] += delta; break;
            case Scope::User: user_[{key, url}] += delta; break;
            case Scope::Global: global_[url] += delta; break;
        }
    }

    /// Drops the session-scope counters of a finished session.
    void evict_session(Id session_id) { session_.erase(session_id); }

    std::size_t session_count() const noexcept { return session_.size(); }

    /// All non-empty entries sorted by (scope, key, url).
    std::vector<std::tuple<Scope, Id, Id, UrlCounters>> entries() const {
        std::vector<std::tuple<Scope, Id, Id, UrlCounters>> out;
        for (const auto& [sid, m] : session_)
            for (const auto& [url, c] : m) out.emplace_back(Scope::Session, sid, url, c);
        for (const auto& [k, c] : user_) out.emplace_back(Scope::User, k.first, k.second, c);
        for (const auto& [url, c] : global_) out.emplace_back(Scope::Global, Id{0}, url, c);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return std::make_tuple(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
                   std::make_tuple(std::get<0>(b), std::get<1>(b), std::get<2>(b));
        });
        return out;
    }

    friend bool operator==(const CountStores& a, const CountStores& b) { return a.entries() == b.entries(); }

private:
    static UrlCounters lookup(const std::unordered_map<Id, UrlCounters>& m, Id url) {
        auto it = m.find(url);
        return it == m.end() ? UrlCounters{} : it->second;
    }

    std::unordered_map<Id, std::unordered_map<Id, UrlCounters>> session_;
    std::unordered_map<std::pair<Id, Id>, UrlCounters, detail::PairHash> user_;
    std::unordered_map<Id, UrlCounters> global_;
};

/// Applies one labeled SERP to all three scopes. Call only after features for
/// this SERP have been extracted.
inline void update_counts(CountStores& stores, const LabeledSerp& serp, Id session_id, Id user_id) {
    for (const auto& r : serp.results) {
        UrlCounters delta;
        delta.shown = 1;
        const Outcome o = classify_outcome(serp, r.url_id);
        switch (o.kind) {
            case OutcomeKind::Clicked:
                for (const auto& c : serp.clicks) {
                    if (c.url_id != r.url_id) continue;
                    if (c.grade == 2) ++delta.level2;
                    else if (c.grade == 1) ++delta.level1;
                    else ++delta.level0;
                }
                break;
            case OutcomeKind::Skipped: delta.skipped = 1; break;
            case OutcomeKind::Missed: delta.missed = 1; break;
        }
        stores.add(Scope::Session, session_id, r.url_id, delta);
        stores.add(Scope::User, user_id, r.url_id, delta);
        stores.add(Scope::Global, 0, r.url_id, delta);
    }
}

/// Untransformed counts in feature order: session block, user block, global block.
inline std::array<std::uint64_t, kFeatureDim> raw_feature_counts(const CountStores& stores, Id session_id, Id user_id,
                                                                 Id url_id) {
    std::array<std::uint64_t, kFeatureDim> out{};
    const std::array<UrlCounters, 3> blocks{stores.session(session_id, url_id), stores.user(user_id, url_id),
                                            stores.global(url_id)};
    for (std::size_t b = 0; b < 3; ++b) {
        const auto a = blocks[b].as_array();
        std::copy(a.begin(), a.end(), out.begin() + static_cast<std::ptrdiff_t>(b * kCountersPerScope));
    }
    return out;
}

/// Count transform applied before any model sees the features.
inline double transform_count(std::uint64_t c) { return std::log1p(static_cast<double>(c)); }

inline FeatureVector extract_features(const CountStores& stores, Id session_id, Id user_id, Id url_id) {
    FeatureVector fv;
    fv.url_id = url_id;
    const auto raw = raw_feature_counts(stores, session_id, user_id, url_id);
    for (std::size_t i = 0; i < kFeatureDim; ++i) fv.values[i] = transform_count(raw[i]);
    return fv;
}

/// Features of all 10 shown URLs in rank order.
inline std::array<FeatureVector, kSerpSize> extract_serp_features(const CountStores& stores, const LabeledSerp& serp,
                                                                  Id session_id, Id user_id) {
    std::array<FeatureVector, kSerpSize> out;
    for (std::size_t i = 0; i < kSerpSize; ++i)
        out[i] = extract_features(stores, session_id, user_id, serp.results[i].url_id);
    return out;
}

// ---------------------------------------------------------------------------
// Snapshots: "CBCOUNT1", u64 record count, then per record
// u8 scope, u64 key, u64 url, 6 x u64 counters; all little-endian, sorted.

inline constexpr std::string_view kCountSnapshotMagic = "CBCOUNT1";

inline void write_snapshot(std::ostream& os, const CountStores& stores) {
    const auto entries = stores.entries();
    binio::put_magic(os, kCountSnapshotMagic);
    binio::put_u64(os, entries.size());
    for (const auto& [scope, key, url, c] : entries) {
        binio::put_u8(os, static_cast<std::uint8_t>(scope));
        binio::put_u64(os, key);
        binio::put_u64(os, url);
        for (auto v : c.as_array()) binio::put_u64(os, v);
    }
}

inline CountStores read_snapshot(std::istream& is) {
    binio::expect_magic(is, kCountSnapshotMagic);
    const std::uint64_t n = binio::get_u64(is);
    CountStores stores;
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto tag = binio::get_u8(is);
        if (tag > 2) throw DataError("bad scope tag in count snapshot");
        const Id key = binio::get_u64(is);
        const Id url = binio::get_u64(is);
        std::array<std::uint64_t, kCountersPerScope> a{};
        for (auto& v : a) v = binio::get_u64(is);
        stores.add(static_cast<Scope>(tag), key, url, UrlCounters::from_array(a));
    }
    return stores;
}

inline void write_snapshot_csv(std::ostream& os, const CountStores& stores) {
    static constexpr const char* kScopeNames[] = {"session", "user", "global"};
    os << "scope,key,url,level2,level1,level0,shown,missed,skipped\n";
    for (const auto& [scope, key, url, c] : stores.entries()) {
        os << kScopeNames[static_cast<int>(scope)] << ',' << key << ',' << url;
        for (auto v : c.as_array()) os << ',' << v;
        os << '\n';
    }
}

}  // namespace clickbandit
