#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "clickbandit/featurize.hpp"

using namespace clickbandit;

namespace {

// urls 1..10 at ranks 1..10; clicks given as (url, grade)
LabeledSerp serp_with(std::vector<std::pair<Id, int>> clicks) {
    LabeledSerp s;
    for (std::size_t i = 0; i < kSerpSize; ++i) s.results[i] = {i + 1, 0};
    for (auto [u, g] : clicks) s.clicks.push_back({u, 0, Dwell::of(0), g});
    return s;
}

}  // namespace

TEST(Outcome, StatedRule) {
    const auto s = serp_with({{3, 2}});
    EXPECT_EQ(classify_outcome(s, 1).kind, OutcomeKind::Skipped);
    EXPECT_EQ(classify_outcome(s, 7).kind, OutcomeKind::Missed);
    EXPECT_EQ(classify_outcome(s, 3).kind, OutcomeKind::Clicked);
    EXPECT_EQ(classify_outcome(s, 3).grade, 2);
    const auto none = serp_with({});
    EXPECT_EQ(classify_outcome(none, 5).kind, OutcomeKind::Missed);
    EXPECT_THROW(classify_outcome(s, 99), UrlNotShown);
}

TEST(Outcome, LowestClickedRankGoverns) {
    const auto s = serp_with({{2, 1}, {6, 0}});
    EXPECT_EQ(classify_outcome(s, 1).kind, OutcomeKind::Skipped);
    EXPECT_EQ(classify_outcome(s, 5).kind, OutcomeKind::Skipped);
    EXPECT_EQ(classify_outcome(s, 7).kind, OutcomeKind::Missed);
}

TEST(Counts, SingleGrade2Click) {
    CountStores st;
    const auto s = serp_with({{7, 2}});
    update_counts(st, s, 100, 5);
    UrlCounters want7;
    want7.level2 = 1;
    want7.shown = 1;
    EXPECT_EQ(st.session(100, 7), want7);
    EXPECT_EQ(st.user(5, 7), want7);
    EXPECT_EQ(st.global(7), want7);
    UrlCounters want1;
    want1.skipped = 1;
    want1.shown = 1;
    EXPECT_EQ(st.session(100, 1), want1);
    UrlCounters want9;
    want9.missed = 1;
    want9.shown = 1;
    EXPECT_EQ(st.global(9), want9);
}

TEST(Counts, PerSerpConservation) {
    // each url gets exactly one of clicked/skipped/missed; shown is 10
    Rng rng(5);
    for (int n = 0; n < 200; ++n) {
        std::vector<std::pair<Id, int>> clicks;
        for (Id u = 1; u <= 10; ++u)
            if (uniform01(rng) < 0.2) clicks.push_back({u, static_cast<int>(uniform_index(rng, 3))});
        CountStores st;
        update_counts(st, serp_with(clicks), 1, 1);
        std::uint64_t events = 0, shown = 0;
        for (Id u = 1; u <= 10; ++u) {
            const auto c = st.global(u);
            events += c.level2 + c.level1 + c.level0 + c.skipped + c.missed;
            shown += c.shown;
        }
        EXPECT_EQ(events, 10u);
        EXPECT_EQ(shown, 10u);
    }
}

TEST(Counts, RepeatedClicksCountedPerEvent) {
    CountStores st;
    update_counts(st, serp_with({{4, 0}, {4, 2}}), 1, 1);
    const auto c = st.global(4);
    EXPECT_EQ(c.level0, 1u);
    EXPECT_EQ(c.level2, 1u);
    EXPECT_EQ(c.shown, 1u);
}

TEST(Counts, ScopesAreKeyed) {
    CountStores st;
    update_counts(st, serp_with({{2, 1}}), 1, 10);
    update_counts(st, serp_with({{2, 1}}), 2, 10);
    update_counts(st, serp_with({{2, 1}}), 3, 11);
    EXPECT_EQ(st.session(1, 2).level1, 1u);
    EXPECT_EQ(st.user(10, 2).level1, 2u);
    EXPECT_EQ(st.user(11, 2).level1, 1u);
    EXPECT_EQ(st.global(2).level1, 3u);
    st.evict_session(1);
    EXPECT_EQ(st.session(1, 2), UrlCounters{});
    EXPECT_EQ(st.global(2).level1, 3u);
}

TEST(Features, LayoutAndTransform) {
    CountStores st;
    update_counts(st, serp_with({{3, 2}}), 1, 9);
    update_counts(st, serp_with({{3, 1}}), 2, 9);
    const auto fv = extract_features(st, 2, 9, 3);
    // session 2: one level1 click
    EXPECT_DOUBLE_EQ(fv.values[0], 0.0);
    EXPECT_DOUBLE_EQ(fv.values[1], std::log(2.0));
    EXPECT_DOUBLE_EQ(fv.values[3], std::log(2.0));
    // user block starts at 6: one level2, one level1, shown twice
    EXPECT_DOUBLE_EQ(fv.values[6], std::log(2.0));
    EXPECT_DOUBLE_EQ(fv.values[7], std::log(2.0));
    EXPECT_DOUBLE_EQ(fv.values[9], std::log(3.0));
    // global block starts at 12
    EXPECT_DOUBLE_EQ(fv.values[15], std::log(3.0));
    const auto raw = raw_feature_counts(st, 2, 9, 1);
    EXPECT_EQ(raw[5], 1u);   // session skipped
    EXPECT_EQ(raw[17], 2u);  // global skipped
}

TEST(Features, ExtractBeforeUpdateSeesNoCurrentClicks) {
    CountStores st;
    const auto s = serp_with({{4, 2}});
    const auto before = extract_serp_features(st, s, 1, 1);
    for (const auto& fv : before)
        for (double v : fv.values) EXPECT_EQ(v, 0.0);
    update_counts(st, s, 1, 1);
    EXPECT_GT(extract_serp_features(st, s, 1, 1)[3].values[0], 0.0);
}

TEST(Snapshot, RoundTrip) {
    CountStores st;
    Rng rng(9);
    for (int n = 0; n < 50; ++n) {
        std::vector<std::pair<Id, int>> clicks;
        clicks.push_back({1 + uniform_index(rng, 10), static_cast<int>(uniform_index(rng, 3))});
        update_counts(st, serp_with(clicks), uniform_index(rng, 5), uniform_index(rng, 3));
    }
    std::stringstream buf;
    write_snapshot(buf, st);
    const auto back = read_snapshot(buf);
    EXPECT_TRUE(back == st);

    std::ostringstream csv;
    write_snapshot_csv(csv, st);
    EXPECT_EQ(csv.str().rfind("scope,key,url,level2", 0), 0u);
}

TEST(Snapshot, RejectsBadMagic) {
    std::stringstream buf("NOTMAGIC");
    EXPECT_THROW(read_snapshot(buf), DataError);
}
