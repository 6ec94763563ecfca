#pragma once

// Synthetic logs built in memory for tests.

#include <sstream>
#include <vector>

#include "clickbandit/logmodel.hpp"
#include "clickbandit/synthgen.hpp"

namespace fixture {

struct SynthLog {
    std::vector<clickbandit::Session> sessions;
    std::vector<clickbandit::TruthRow> truth;
    clickbandit::SynthStats stats;
    std::string text;
};

inline SynthLog synth(const clickbandit::SynthConfig& c) {
    std::ostringstream log, truth;
    SynthLog out;
    out.stats = clickbandit::generate(c, log, truth);
    out.text = log.str();
    std::istringstream lin(out.text), tin(truth.str());
    out.sessions = clickbandit::read_log(lin, {true, 20}).sessions;
    out.truth = clickbandit::read_truth(tin);
    return out;
}

inline clickbandit::SynthConfig small_config(std::uint64_t seed) {
    clickbandit::SynthConfig c;
    c.seed = seed;
    c.users = 6;
    c.days = 3;
    c.intents = 3;
    c.sessions_per_user_day = 40;
    return c;
}

}  // namespace fixture
