// clickbandit: command-line front end for the re-ranking pipeline.
//
// Exit codes: 0 success, 1 data/io/numeric error, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clickbandit/clickbandit.hpp"

namespace cb = clickbandit;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) {
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || v == 0) throw cb::ConfigError("expected a list of positive integers, got '" + s + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw cb::ConfigError("empty list");
    return out;
}

/// Expands `--config FILE` into `--key=value` arguments placed before the
/// explicit ones, so anything on the command line overrides the file.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string file;
        std::size_t consumed = 0;
        if (args[i] == "--config" && i + 1 < args.size()) {
            file = args[i + 1];
            consumed = 2;
        } else if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
            consumed = 1;
        } else {
            continue;
        }
        // synth owns its own config format
        if (!args.empty() && args[0] == "synth") return args;
        std::ifstream in(file);
        if (!in) throw cb::IoError("cannot open config: " + file);
        std::vector<std::string> injected;
        std::string line;
        while (std::getline(in, line)) {
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw cb::ConfigError("config line '" + line + "': expected key=value");
            auto key = line.substr(0, eq);
            auto value = line.substr(eq + 1);
            key.erase(key.find_last_not_of(" \t") + 1);
            value.erase(0, value.find_first_not_of(" \t"));
            injected.push_back("--" + key + "=" + value);
        }
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                   args.begin() + static_cast<std::ptrdiff_t>(i + consumed));
        // insert right after the subcommand path (leading non-dash tokens)
        std::size_t at = 0;
        while (at < args.size() && !args[at].empty() && args[at][0] != '-') ++at;
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
        return args;
    }
    return args;
}

struct PipelineFlags {
    cb::PipelineConfig config;
    std::string log;
    std::string truth;
    bool strict = false;
    std::uint64_t warm_days = 0;
    std::size_t clusters = 7;
    bool no_retrain = false;
};

void add_input_flags(CLI::App* sub, PipelineFlags& f, bool truth) {
    sub->add_option("--log", f.log, "Click log (tab-separated)")->required()->check(CLI::ExistingFile);
    if (truth) sub->add_option("--truth", f.truth, "Truth sidecar CSV from synth; enables regret")->check(CLI::ExistingFile);
    sub->add_flag("--strict", f.strict, "Abort on the first malformed line or orphan record");
}

void add_pipeline_flags(CLI::App* sub, PipelineFlags& f) {
    auto& c = f.config;
    sub->add_option("--seed", c.seed, "Master seed; all component seeds derive from it")->capture_default_str();
    sub->add_option("--clusters", f.clusters, "Number of LDA session topics (one expert per topic)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    sub->add_option("--lda-iterations", c.lda.iterations, "Collapsed Gibbs sweeps")->capture_default_str();
    sub->add_option("--alpha-prior", c.lda.alpha_prior, "LDA document prior; <= 0 means 50/K")->capture_default_str();
    sub->add_option("--beta-prior", c.lda.beta_prior, "LDA topic-word prior")->capture_default_str();
    sub->add_option("--infer-sweeps", c.infer_sweeps, "Gibbs sweeps when folding a new session into the topics")
        ->capture_default_str();
    sub->add_option("--epochs", c.ranker.epochs, "Ranker training epochs")->capture_default_str();
    sub->add_option("--learning-rate", c.ranker.learning_rate, "Ranker base step size")->capture_default_str();
    sub->add_option("--l2", c.ranker.l2, "Ranker L2 penalty")->capture_default_str();
    sub->add_option("--gamma", c.gamma, "GTS uniform exploration mass")->capture_default_str();
    sub->add_option("--eta", c.eta, "GTS learning rate")->capture_default_str();
    sub->add_option("--v", c.v, "TS-linear posterior scale")->capture_default_str();
    sub->add_option("--alpha-explore", c.alpha_explore, "LinUCB confidence multiplier")->capture_default_str();
    sub->add_option("--warm-fraction", c.warm_fraction, "Fraction of days used for warm start")->capture_default_str();
    sub->add_option("--warm-days", f.warm_days, "Warm-start day count (overrides --warm-fraction when > 0)");
    sub->add_flag("--no-retrain", f.no_retrain, "Keep the warm-start experts instead of retraining each day");
    sub->add_flag("--gts-session-reset", c.gts_session_reset, "Reset GTS weights at every session start");
    sub->add_option("--trace-every", c.trace_every, "Trace granularity in events")->capture_default_str();
    sub->add_option("--config", "Flat key=value file of the flags above (command line wins)");
}

cb::PipelineConfig resolve(PipelineFlags& f) {
    auto c = f.config;
    c.lda.num_topics = f.clusters;
    c.retrain_daily = !f.no_retrain;
    if (f.warm_days > 0) c.warm_days = f.warm_days;
    if (c.trace_every == 0) throw cb::ConfigError("--trace-every must be positive");
    return c;
}

cb::LogData load_log(const PipelineFlags& f) {
    cb::ReadOptions opt;
    opt.strict = f.strict;
    auto data = cb::read_log_file(f.log, opt);
    for (const auto& d : data.stats.diagnostics) std::cerr << "warning: " << d << '\n';
    if (data.stats.malformed > data.stats.diagnostics.size())
        std::cerr << "warning: " << data.stats.malformed - data.stats.diagnostics.size()
                  << " further malformed lines not shown\n";
    return data;
}

std::optional<std::vector<cb::TruthRow>> load_truth(const PipelineFlags& f) {
    if (f.truth.empty()) return std::nullopt;
    return cb::read_truth_file(f.truth);
}

void write_json(const std::string& path, const cb::Json& j) {
    cb::write_file_atomic(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

void write_trace(const std::string& path, const cb::PipelineConfig& c, const cb::ReplayReport& r) {
    cb::write_file_atomic(path, [&](std::ostream& os) {
        os << "# clickbandit " << cb::kVersion << " seed=" << c.seed << " config_hash=" << cb::config_hash(c)
           << " policy=" << r.policy << '\n';
        cb::write_trace_csv(os, r);
    });
}

std::string fixed4(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_parse_check(const PipelineFlags& f, std::size_t max_diag) {
    cb::ReadOptions opt;
    opt.strict = f.strict;
    opt.max_diagnostics = max_diag;
    cb::LogData data;
    try {
        data = cb::read_log_file(f.log, opt);
    } catch (const cb::DataError& e) {
        std::cerr << f.log << ": " << e.what() << '\n';
        return kExitData;
    }
    for (const auto& d : data.stats.diagnostics) std::cerr << f.log << ": " << d << '\n';
    const auto& a = data.stats.assembly;
    std::cout << "lines=" << data.stats.lines << " records=" << data.stats.records
              << " malformed=" << data.stats.malformed << " sessions=" << a.sessions << " serps=" << a.serps
              << " clicks=" << a.clicks << " dropped_orphan_clicks=" << a.dropped_orphan_clicks
              << " dropped_dangling_records=" << a.dropped_dangling_records << " dropped_unordered_sessions=" << a.dropped_unordered_sessions << '\n';
    return kExitOk;
}

int cmd_label(const PipelineFlags& f, const std::string& out) {
    const auto data = load_log(f);
    std::array<std::size_t, 3> by_grade{};
    cb::write_file_atomic(out, [&](std::ostream& os) {
        os << "session_id\tserp_id\turl_id\trank\ttime_passed\tdwell\tgrade\n";
        for (const auto& s : data.sessions)
            for (const auto& serp : s.serps)
                for (const auto& c : serp.clicks) {
                    os << s.session_id << '\t' << serp.serp_id << '\t' << c.url_id << '\t'
                       << *serp.rank_of(c.url_id) + 1 << '\t' << c.time_passed << '\t';
                    if (c.dwell.end_of_session)
                        os << "END";
                    else
                        os << c.dwell.units;
                    os << '\t' << c.grade << '\n';
                    ++by_grade[static_cast<std::size_t>(c.grade)];
                }
    });
    std::cout << "clicks=" << by_grade[0] + by_grade[1] + by_grade[2] << " grade0=" << by_grade[0]
              << " grade1=" << by_grade[1] << " grade2=" << by_grade[2] << " out=" << out << '\n';
    return kExitOk;
}

int cmd_synth(const std::string& config_path, const std::vector<std::string>& sets, std::optional<std::uint64_t> seed,
              const std::string& out, const std::string& truth) {
    cb::SynthConfig cfg;
    if (!config_path.empty()) {
        auto in = cb::open_input(config_path);
        cfg = cb::parse_synth_config(in, cfg);
    }
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw cb::ConfigInvalid("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    cb::SynthStats stats;
    // both files are generated in one pass; write into temps then rename
    std::ostringstream truth_buf;
    cb::write_file_atomic(out, [&](std::ostream& os) { stats = cb::generate(cfg, os, truth_buf); });
    cb::write_file_atomic(truth, [&](std::ostream& os) { os << truth_buf.str(); });
    std::cout << "sessions=" << stats.sessions << " serps=" << stats.serps << " clicks=" << stats.clicks
              << " seed=" << *cfg.seed << " config_hash=" << cb::hex64(cb::fnv1a(cfg.to_text())) << " out=" << out
              << " truth=" << truth << '\n';
    return kExitOk;
}

/// Planted intent per session (from the truth row of its first SERP).
std::vector<std::size_t> planted_intents(const std::vector<cb::Session>& sessions, const std::vector<cb::TruthRow>& truth) {
    std::vector<std::size_t> out;
    std::size_t row = 0;
    for (const auto& s : sessions) {
        if (row >= truth.size()) throw cb::MissingTruth("truth sidecar shorter than the log");
        out.push_back(static_cast<std::size_t>(truth[row].intent));
        row += s.serps.size();
    }
    if (row != truth.size()) throw cb::MissingTruth("truth sidecar length does not match the log's SERP count");
    return out;
}

int cmd_topics(PipelineFlags& f, const std::string& out, const std::string& assignments) {
    const auto c = resolve(f);
    const auto data = load_log(f);
    auto lda = c.lda;
    lda.seed = cb::derive_seed(c.seed, "lda");
    const auto fit = cb::gibbs_train(cb::build_session_docs(data.sessions), lda);
    cb::write_file_atomic(out, [&](std::ostream& os) { cb::write_topic_model(os, fit.model); }, true);
    if (!assignments.empty()) {
        cb::write_file_atomic(assignments, [&](std::ostream& os) {
            os << "session_id,topic\n";
            for (std::size_t i = 0; i < data.sessions.size(); ++i)
                os << data.sessions[i].session_id << ',' << fit.assignments[i] << '\n';
        });
    }
    std::cout << "sessions=" << data.sessions.size() << " topics=" << fit.model.num_topics
              << " vocab=" << fit.model.vocab_size() << " log_likelihood=" << fixed4(fit.log_likelihood.back());
    if (const auto truth = load_truth(f))
        std::cout << " nmi=" << fixed4(cb::normalized_mutual_information(fit.assignments, planted_intents(data.sessions, *truth)));
    std::cout << " out=" << out << '\n';
    return kExitOk;
}

int cmd_train_experts(PipelineFlags& f, const std::string& out, const std::string& text_out) {
    const auto c = resolve(f);
    const auto data = load_log(f);
    const auto wm = cb::fit_warm_models(data.sessions, c);
    cb::write_file_atomic(out, [&](std::ostream& os) { cb::write_experts(os, wm.experts); }, true);
    if (!text_out.empty()) cb::write_file_atomic(text_out, [&](std::ostream& os) { cb::write_experts_text(os, wm.experts); });
    std::size_t pairs = 0;
    for (const auto& e : wm.experts) pairs += e.training_pairs;
    std::cout << "experts=" << wm.experts.size() << " pairs=" << pairs << " serps=" << wm.serps << " out=" << out << '\n';
    return kExitOk;
}

int cmd_replay(PipelineFlags& f, const std::string& policy, const std::string& out, const std::string& trace) {
    const auto c = resolve(f);
    auto data = load_log(f);
    const auto truth = load_truth(f);
    const auto st = cb::build_event_stream(std::move(data.sessions), c);
    const auto rep = cb::replay_named(st, policy, c, truth ? &*truth : nullptr);
    write_json(out, cb::replay_json(c, st, rep));
    if (!trace.empty()) write_trace(trace, c, rep);
    std::cout << "policy=" << rep.policy << " events=" << rep.events << " ctr_at_1=" << fixed4(rep.ctr_at_1)
              << " lift_vs_default=" << fixed4(rep.lift_vs_default);
    if (rep.regret) std::cout << " regret=" << fixed4(rep.regret->regret());
    std::cout << " out=" << out << '\n';
    return kExitOk;
}

int cmd_compare(PipelineFlags& f, const std::string& policies, const std::string& out, const std::string& trace_dir,
                const std::string& sweep) {
    const auto c = resolve(f);
    const auto names = split_list(policies);
    if (names.empty()) throw cb::ConfigError("--policies is empty");
    for (const auto& n : names)
        if (std::find(cb::policy_names().begin(), cb::policy_names().end(), n) == cb::policy_names().end())
            throw cb::ConfigError("unknown policy '" + n + "'");
    auto data = load_log(f);
    const auto truth = load_truth(f);
    const auto* tp = truth ? &*truth : nullptr;
    if (!sweep.empty()) {
        const auto ks = parse_sizes(sweep);
        const auto points = cb::sweep_clusters(data.sessions, ks, names, c, tp);
        write_json(out, cb::sweep_json(c, points));
        if (!trace_dir.empty()) {
            fs::create_directories(trace_dir);
            cb::write_file_atomic(fs::path(trace_dir) / "sweep.csv", [&](std::ostream& os) {
                os << "# clickbandit " << cb::kVersion << " seed=" << c.seed << " config_hash=" << cb::config_hash(c) << '\n';
                os << "clusters,policy,ctr_at_1\n";
                os.precision(17);
                for (const auto& p : points)
                    for (const auto& r : p.results) os << p.clusters << ',' << r.policy << ',' << r.ctr_at_1 << '\n';
            });
        }
        std::cout << "sweep";
        for (const auto& p : points) {
            std::cout << " K=" << p.clusters;
            for (const auto& r : p.results) std::cout << ' ' << r.policy << '=' << fixed4(r.ctr_at_1);
        }
        std::cout << " out=" << out << '\n';
        return kExitOk;
    }
    const auto st = cb::build_event_stream(std::move(data.sessions), c);
    const auto cmp = cb::compare(st, names, c, tp);
    write_json(out, cb::compare_json(c, st, cmp));
    if (!trace_dir.empty()) {
        fs::create_directories(trace_dir);
        for (const auto& r : cmp.results) write_trace((fs::path(trace_dir) / (r.policy + ".csv")).string(), c, r);
    }
    std::cout << "events=" << st.events.size();
    for (const auto& r : cmp.results) std::cout << ' ' << r.policy << '=' << fixed4(r.ctr_at_1);
    std::cout << " out=" << out << '\n';
    return kExitOk;
}

// --- hsmm -------------------------------------------------------------------

std::vector<cb::hsmm::Sequence> read_sequences(const std::string& path) {
    auto in = cb::open_input(path);
    std::vector<cb::hsmm::Sequence> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        std::istringstream ls(line);
        cb::hsmm::Sequence seq;
        std::string tok;
        while (ls >> tok) {
            std::size_t pos = 0;
            unsigned long v = 0;
            try {
                v = std::stoul(tok, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != tok.size()) throw cb::DataError("sequence line " + std::to_string(n) + ": bad symbol '" + tok + "'");
            seq.push_back(static_cast<cb::hsmm::Symbol>(v));
        }
        if (!seq.empty()) out.push_back(std::move(seq));
    }
    if (out.empty()) throw cb::DataError("no sequences in " + path);
    return out;
}

/// One sequence per session: the topic of each query, folded into a topic model.
std::vector<cb::hsmm::Sequence> sequences_from_log(const PipelineFlags& f, const std::string& topics_path,
                                                   std::uint64_t seed, int sweeps) {
    auto in = cb::open_input(topics_path, true);
    const auto model = cb::read_topic_model(in);
    const auto data = load_log(f);
    std::vector<cb::hsmm::Sequence> out;
    for (const auto& s : data.sessions) {
        cb::hsmm::Sequence seq;
        for (const auto& serp : s.serps) {
            const auto theta = cb::infer_topic(model, serp.terms, sweeps,
                                               cb::derive_seed(seed, "hsmm/" + std::to_string(s.session_id) + "/" +
                                                                         std::to_string(serp.serp_id)));
            seq.push_back(static_cast<cb::hsmm::Symbol>(cb::argmax_lowest(theta)));
        }
        if (!seq.empty()) out.push_back(std::move(seq));
    }
    if (out.empty()) throw cb::DataError("log has no SERPs");
    return out;
}

struct HsmmFlags {
    PipelineFlags input;
    std::string sequences;
    std::string topics;
    std::string model;
    std::string out;
    std::size_t states = 2;
    std::size_t max_duration = 3;
    std::size_t symbols = 0;
    int iterations = 10;
    std::uint64_t seed = 42;
    std::string sequence;
    std::size_t t = 0;
};

std::vector<cb::hsmm::Sequence> hsmm_corpus(HsmmFlags& h) {
    if (!h.sequences.empty()) return read_sequences(h.sequences);
    if (!h.input.log.empty() && !h.topics.empty()) return sequences_from_log(h.input, h.topics, h.seed, 20);
    throw cb::ConfigError("give --sequences, or --log together with --topics");
}

int cmd_hsmm_train(HsmmFlags& h) {
    const auto corpus = hsmm_corpus(h);
    std::size_t V = h.symbols;
    if (V == 0)
        for (const auto& s : corpus)
            for (auto o : s) V = std::max<std::size_t>(V, o + 1);
    cb::Rng rng(cb::derive_seed(h.seed, "hsmm/init"));
    auto model = cb::hsmm::random_model(h.states, h.max_duration, V, rng);
    const double ll0 = cb::hsmm::corpus_log_likelihood(model, corpus);
    for (int i = 0; i < h.iterations; ++i) model = cb::hsmm::reestimate(model, corpus).model;
    const double ll = cb::hsmm::corpus_log_likelihood(model, corpus);
    cb::write_file_atomic(h.out, [&](std::ostream& os) { cb::hsmm::write_model(os, model); }, true);
    std::cout << "sequences=" << corpus.size() << " states=" << h.states << " max_duration=" << h.max_duration
              << " symbols=" << V << " iterations=" << h.iterations << " log_likelihood_initial=" << fixed4(ll0)
              << " log_likelihood=" << fixed4(ll) << " out=" << h.out << '\n';
    return kExitOk;
}

cb::hsmm::HsmmModel load_hsmm(const std::string& path) {
    auto in = cb::open_input(path, true);
    return cb::hsmm::read_model(in);
}

int cmd_hsmm_eval(HsmmFlags& h) {
    const auto model = load_hsmm(h.model);
    const auto corpus = hsmm_corpus(h);
    double total = 0.0;
    std::vector<double> per;
    for (const auto& s : corpus) {
        per.push_back(cb::hsmm::forward(model, s).log_likelihood);
        total += per.back();
    }
    if (!h.out.empty()) {
        cb::write_file_atomic(h.out, [&](std::ostream& os) {
            os << "sequence,length,log_likelihood\n";
            os.precision(17);
            for (std::size_t i = 0; i < corpus.size(); ++i) os << i << ',' << corpus[i].size() << ',' << per[i] << '\n';
        });
    }
    std::cout << "sequences=" << corpus.size() << " log_likelihood=" << fixed4(total) << '\n';
    return kExitOk;
}

int cmd_hsmm_predict(HsmmFlags& h) {
    const auto model = load_hsmm(h.model);
    cb::hsmm::Sequence seq;
    {
        std::istringstream in(h.sequence);
        long long v = 0;
        while (in >> v) {
            if (v < 0) throw cb::DataError("negative symbol in --sequence");
            seq.push_back(static_cast<cb::hsmm::Symbol>(v));
        }
        if (!in.eof()) throw cb::DataError("--sequence must be whitespace-separated integers");
    }
    if (seq.empty()) throw cb::DataError("--sequence is empty");
    const std::size_t t = h.t == 0 ? seq.size() : h.t;
    if (t > seq.size()) throw cb::ConfigError("--t exceeds the sequence length");
    const auto tr = cb::hsmm::forward(model, std::span<const cb::hsmm::Symbol>(seq.data(), t));
    const auto filt = cb::hsmm::filter(model, tr, t);
    const auto next = cb::hsmm::predict_next(model, tr, t);
    auto render = [&](std::ostream& os) {
        os << "state,duration,filter,predict_next\n";
        os.precision(17);
        for (std::size_t j = 0; j < model.states(); ++j)
            for (std::size_t d = 1; d <= model.max_duration(); ++d) {
                const auto k = model.seg(j, d);
                os << j << ',' << d << ',' << filt[k] << ',' << next[k] << '\n';
            }
    };
    if (!h.out.empty())
        cb::write_file_atomic(h.out, render);
    else
        render(std::cout);
    std::size_t best = 0;
    for (std::size_t k = 1; k < next.size(); ++k)
        if (next[k] > next[best]) best = k;
    std::cerr << "t=" << t << " most_likely_next_state=" << best / model.max_duration()
              << " duration=" << best % model.max_duration() + 1 << " probability=" << fixed4(next[best]) << '\n';
    return kExitOk;
}

// --- report -------------------------------------------------------------------

int cmd_report(const std::string& in_path, const std::string& format, const std::string& policy, const std::string& out) {
    auto in = cb::open_input(in_path);
    cb::Json j;
    try {
        j = cb::Json::parse(in);
    } catch (const cb::Json::exception& e) {
        throw cb::DataError(in_path + ": not a JSON report: " + e.what());
    }
    for (const char* key : {"version", "seed", "config_hash"})
        if (!j.contains(key)) throw cb::DataError(in_path + ": report lacks '" + key + "'");

    std::vector<cb::Json> results;
    if (j.contains("results"))
        for (const auto& r : j["results"]) results.push_back(r);
    else if (j.contains("result"))
        results.push_back(j["result"]);

    auto emit = [&](const std::function<void(std::ostream&)>& w) {
        if (out.empty())
            w(std::cout);
        else
            cb::write_file_atomic(out, w);
    };

    if (format == "json") {
        emit([&](std::ostream& os) { os << j.dump(2) << '\n'; });
    } else if (format == "csv") {
        const cb::Json* pick = nullptr;
        for (const auto& r : results)
            if (policy.empty() || r.value("policy", "") == policy) {
                pick = &r;
                break;
            }
        if (!pick) throw cb::DataError("no result for policy '" + policy + "' in " + in_path);
        const bool with_regret = pick->contains("regret");
        emit([&](std::ostream& os) {
            os << "# clickbandit " << j["version"].get<std::string>() << " seed=" << j["seed"].get<std::uint64_t>()
               << " config_hash=" << j["config_hash"].get<std::string>() << " policy=" << (*pick)["policy"].get<std::string>()
               << '\n';
            os << "event_index,cumulative_ctr" << (with_regret ? ",regret" : "") << '\n';
            os.precision(17);
            for (const auto& t : (*pick)["trace"]) {
                os << t["event_index"].get<std::size_t>() << ',' << t["cumulative_ctr"].get<double>();
                if (with_regret) os << ',' << t["regret"].get<double>();
                os << '\n';
            }
        });
    } else {
        emit([&](std::ostream& os) {
            os << "version " << j["version"].get<std::string>() << "  seed " << j["seed"].get<std::uint64_t>()
               << "  config_hash " << j["config_hash"].get<std::string>() << '\n';
            cb::ComparisonReport cmp;
            for (const auto& r : results) {
                cb::ReplayReport rr;
                rr.policy = r["policy"].get<std::string>();
                rr.events = r["events"].get<std::size_t>();
                rr.ctr_at_1 = r["ctr_at_1"].get<double>();
                rr.lift_vs_default = r["lift_vs_default"].get<double>();
                if (r.contains("regret")) {
                    cb::RegretLedger l;
                    l.cumulative_reward = r["regret"]["expected_reward"].get<double>();
                    l.oracle_reward = r["regret"]["oracle_reward"].get<double>();
                    rr.regret = l;
                }
                cmp.results.push_back(rr);
            }
            cb::write_summary(os, cmp);
            os << "reward: chosen URL clicked anywhere in the logged SERP (position bias uncorrected)\n";
        });
    }
    if (!out.empty()) std::cout << "format=" << format << " results=" << results.size() << " out=" << out << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual-bandit re-ranking of search click logs, evaluated by offline replay", "clickbandit"};
    app.set_version_flag("--version", std::string(cb::kVersion));
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    PipelineFlags flags;
    std::size_t max_diag = 20;
    std::string out, trace, trace_dir, assignments, text_out, policy = "gts", policies, sweep;

    auto* parse_check = app.add_subcommand("parse-check", "Validate a click log and print record counts");
    add_input_flags(parse_check, flags, false);
    parse_check->add_option("--max-diagnostics", max_diag, "Malformed-line messages to print")->capture_default_str();

    auto* label = app.add_subcommand("label", "Write per-click dwell times and relevance grades");
    add_input_flags(label, flags, false);
    label->add_option("--out", out, "Output TSV")->required();

    std::string synth_config, truth_out;
    std::vector<std::string> synth_sets;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic log and its truth sidecar");
    synth->add_option("--config", synth_config, "Flat key=value generator config")->check(CLI::ExistingFile);
    synth->add_option("--set", synth_sets, "Override one config key (key=value, repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    synth->add_option("--seed", synth_seed, "Generator seed (overrides the config file)");
    synth->add_option("--out", out, "Output log")->required();
    synth->add_option("--truth", truth_out, "Output truth CSV")->required();

    auto* topics = app.add_subcommand("topics", "Fit the session topic model");
    add_input_flags(topics, flags, true);
    add_pipeline_flags(topics, flags);
    topics->add_option("--out", out, "Output topic model (binary)")->required();
    topics->add_option("--assignments", assignments, "Optional CSV of session_id,topic");

    auto* train_experts = app.add_subcommand("train-experts", "Train one pairwise ranker per session topic");
    add_input_flags(train_experts, flags, false);
    add_pipeline_flags(train_experts, flags);
    train_experts->add_option("--out", out, "Output expert file (binary)")->required();
    train_experts->add_option("--text", text_out, "Optional text export of the weights");

    auto* replay = app.add_subcommand("replay", "Replay one policy over the scored days");
    add_input_flags(replay, flags, true);
    add_pipeline_flags(replay, flags);
    replay->add_option("--policy", policy, "default|random|linucb|ts-linear|gts|gts+ts")
        ->capture_default_str()
        ->check(CLI::IsMember(cb::policy_names()));
    replay->add_option("--out", out, "Output JSON report")->required();
    replay->add_option("--trace", trace, "Optional CSV trace (event_index,cumulative_ctr)");

    auto* compare = app.add_subcommand("compare", "Replay several policies over one event stream");
    add_input_flags(compare, flags, true);
    add_pipeline_flags(compare, flags);
    compare->add_option("--policies", policies, "Comma-separated policy names")->required();
    compare->add_option("--out", out, "Output JSON report")->required();
    compare->add_option("--trace-dir", trace_dir, "Optional directory for per-policy CSV traces");
    compare->add_option("--sweep-clusters", sweep, "Comma-separated topic counts; runs the cluster-count sweep");

    HsmmFlags hf;
    auto* hsmm = app.add_subcommand("hsmm", "Hidden semi-Markov model of query-cluster sequences");
    hsmm->require_subcommand(1);
    auto add_corpus = [&](CLI::App* s) {
        s->add_option("--sequences", hf.sequences, "Text file, one whitespace-separated symbol sequence per line")
            ->check(CLI::ExistingFile);
        s->add_option("--log", hf.input.log, "Click log; each session becomes a sequence of query topics")
            ->check(CLI::ExistingFile);
        s->add_option("--topics", hf.topics, "Topic model used with --log")->check(CLI::ExistingFile);
        s->add_flag("--strict", hf.input.strict, "Strict log parsing");
        s->add_option("--seed", hf.seed, "Seed")->capture_default_str();
    };
    auto* hsmm_train = hsmm->add_subcommand("train", "Fit by EM from a random start");
    add_corpus(hsmm_train);
    hsmm_train->add_option("--states", hf.states, "Hidden states M (>= 2)")->capture_default_str();
    hsmm_train->add_option("--max-duration", hf.max_duration, "Maximum duration D")->capture_default_str();
    hsmm_train->add_option("--symbols", hf.symbols, "Vocabulary size V (0 = infer from data)")->capture_default_str();
    hsmm_train->add_option("--iterations", hf.iterations, "EM iterations")->capture_default_str();
    hsmm_train->add_option("--out", hf.out, "Output model (binary)")->required();
    auto* hsmm_eval = hsmm->add_subcommand("eval", "Log-likelihood of a corpus");
    add_corpus(hsmm_eval);
    hsmm_eval->add_option("--model", hf.model, "Model file")->required()->check(CLI::ExistingFile);
    hsmm_eval->add_option("--out", hf.out, "Optional per-sequence CSV");
    auto* hsmm_predict = hsmm->add_subcommand("predict", "Filter and next-segment distribution after a prefix");
    hsmm_predict->add_option("--model", hf.model, "Model file")->required()->check(CLI::ExistingFile);
    hsmm_predict->add_option("--sequence", hf.sequence, "Observed symbols, e.g. \"0 1 1 2\"")->required();
    hsmm_predict->add_option("--t", hf.t, "Prefix length (0 = whole sequence)")->capture_default_str();
    hsmm_predict->add_option("--out", hf.out, "Optional CSV (stdout otherwise)");

    std::string report_in, report_format = "text", report_policy;
    auto* report = app.add_subcommand("report", "Render a JSON report as text, CSV trace or JSON");
    report->add_option("--in", report_in, "Report from replay or compare")->required()->check(CLI::ExistingFile);
    report->add_option("--format", report_format, "text|csv|json")
        ->capture_default_str()
        ->check(CLI::IsMember({"text", "csv", "json"}));
    report->add_option("--policy", report_policy, "Policy whose trace to emit (csv; default first)");
    report->add_option("--out", out, "Output file (stdout otherwise)");

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const cb::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const cb::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }

    try {
        if (*parse_check) return cmd_parse_check(flags, max_diag);
        if (*label) return cmd_label(flags, out);
        if (*synth) return cmd_synth(synth_config, synth_sets, synth_seed, out, truth_out);
        if (*topics) return cmd_topics(flags, out, assignments);
        if (*train_experts) return cmd_train_experts(flags, out, text_out);
        if (*replay) return cmd_replay(flags, policy, out, trace);
        if (*compare) return cmd_compare(flags, policies, out, trace_dir, sweep);
        if (*hsmm_train) return cmd_hsmm_train(hf);
        if (*hsmm_eval) return cmd_hsmm_eval(hf);
        if (*hsmm_predict) return cmd_hsmm_predict(hf);
        if (*report) return cmd_report(report_in, report_format, report_policy, out);
    } catch (const cb::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const cb::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
