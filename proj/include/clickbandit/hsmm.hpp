#pragma once

// Explicit-duration hidden semi-Markov model over discrete observations.
//
// A segment (j, d) is an occupancy of state j for d consecutive steps. The
// first segment is drawn from init(j, d); each later segment (j, d) follows
// (i, d') with probability trans((i,d'), (j,d)), j != i. Within a segment the
// observations are i.i.d. from emit(j, .), so b_{j,d}(o_{s..s+d-1}) is the
// product of per-step probabilities. A sequence of length T is explained by
// segmentations whose last segment ends exactly at T.
//
// Inference runs in the log domain. forward_scaled() is an independent
// per-step scaled implementation kept for cross-checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "clickbandit/common.hpp"

namespace clickbandit::hsmm {

using Symbol = std::size_t;
using Sequence = std::vector<Symbol>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class ZeroLikelihood : public NumericError {
public:
    using NumericError::NumericError;
};

class HsmmModel {
public:
    HsmmModel() = default;
    HsmmModel(std::size_t states, std::size_t max_duration, std::size_t symbols)
        : M_(states), D_(max_duration), V_(symbols),
          init_(states * max_duration, 0.0),
          trans_(states * max_duration * states * max_duration, 0.0),
          emit_(states * symbols, 0.0) {
        if (states < 2) throw ConfigError("HSMM needs at least 2 states (self-transitions are excluded)");
        if (max_duration < 1 || symbols < 1) throw ConfigError("HSMM needs max_duration >= 1 and symbols >= 1");
    }

    std::size_t states() const noexcept { return M_; }
    std::size_t max_duration() const noexcept { return D_; }
    std::size_t symbols() const noexcept { return V_; }

    /// Durations are 1-based throughout the public interface.
    std::size_t seg(std::size_t j, std::size_t d) const noexcept { return j * D_ + (d - 1); }
    std::size_t segments() const noexcept { return M_ * D_; }

    double& init(std::size_t j, std::size_t d) { return init_[seg(j, d)]; }
    double init(std::size_t j, std::size_t d) const { return init_[seg(j, d)]; }
    double& trans(std::size_t i, std::size_t dp, std::size_t j, std::size_t d) {
        return trans_[seg(i, dp) * segments() + seg(j, d)];
    }
    double trans(std::size_t i, std::size_t dp, std::size_t j, std::size_t d) const {
        return trans_[seg(i, dp) * segments() + seg(j, d)];
    }
    double& emit(std::size_t j, Symbol v) { return emit_[j * V_ + v]; }
    double emit(std::size_t j, Symbol v) const { return emit_[j * V_ + v]; }

    std::vector<double>& init_table() noexcept { return init_; }
    std::vector<double>& trans_table() noexcept { return trans_; }
    std::vector<double>& emit_table() noexcept { return emit_; }
    const std::vector<double>& init_table() const noexcept { return init_; }
    const std::vector<double>& trans_table() const noexcept { return trans_; }
    const std::vector<double>& emit_table() const noexcept { return emit_; }

    /// Block emission probability of obs[start, start + d).
    double block(std::size_t j, std::span<const Symbol> obs, std::size_t start, std::size_t d) const {
        double p = 1.0;
        for (std::size_t s = start; s < start + d; ++s) p *= emit(j, obs[s]);
        return p;
    }

    double log_block(std::size_t j, std::span<const Symbol> obs, std::size_t start, std::size_t d) const {
        double lp = 0.0;
        for (std::size_t s = start; s < start + d; ++s) lp += std::log(emit(j, obs[s]));
        return lp;
    }

    /// Throws ConfigError when any distribution is not normalized within tol.
    void validate(double tol = 1e-12) const {
        auto bad = [](double x) { return !(x >= 0.0) || !std::isfinite(x); };
        double s = 0.0;
        for (double x : init_) {
            if (bad(x)) throw ConfigError("HSMM init has invalid entry");
            s += x;
        }
        if (std::abs(s - 1.0) > tol) throw ConfigError("HSMM init does not sum to 1");
        for (std::size_t i = 0; i < M_; ++i)
            for (std::size_t dp = 1; dp <= D_; ++dp) {
                double row = 0.0;
                for (std::size_t j = 0; j < M_; ++j)
                    for (std::size_t d = 1; d <= D_; ++d) {
                        const double a = trans(i, dp, j, d);
                        if (bad(a)) throw ConfigError("HSMM transition has invalid entry");
                        if (j == i && a != 0.0) throw ConfigError("HSMM self-transition must be zero");
                        row += a;
                    }
                if (std::abs(row - 1.0) > tol) throw ConfigError("HSMM transition row does not sum to 1");
            }
        for (std::size_t j = 0; j < M_; ++j) {
            double row = 0.0;
            for (Symbol v = 0; v < V_; ++v) {
                if (bad(emit(j, v))) throw ConfigError("HSMM emission has invalid entry");
                row += emit(j, v);
            }
            if (std::abs(row - 1.0) > tol) throw ConfigError("HSMM emission row does not sum to 1");
        }
    }

    void check_sequence(std::span<const Symbol> obs) const {
        if (obs.empty()) throw ConfigError("HSMM sequence must be non-empty");
        for (Symbol o : obs)
            if (o >= V_) throw ConfigError("observation symbol " + std::to_string(o) + " outside vocabulary");
    }

    friend bool operator==(const HsmmModel&, const HsmmModel&) = default;

private:
    std::size_t M_ = 0, D_ = 0, V_ = 0;
    std::vector<double> init_;
    std::vector<double> trans_;
    std::vector<double> emit_;
};

/// Random model with strictly positive entries (except the zero self-transitions).
inline HsmmModel random_model(std::size_t M, std::size_t D, std::size_t V, Rng& rng) {
    HsmmModel m(M, D, V);
    auto draw = [&] { return 0.05 + uniform01(rng); };
    double s = 0.0;
    for (auto& x : m.init_table()) s += (x = draw());
    for (auto& x : m.init_table()) x /= s;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t dp = 1; dp <= D; ++dp) {
            double row = 0.0;
            for (std::size_t j = 0; j < M; ++j)
                for (std::size_t d = 1; d <= D; ++d) row += (m.trans(i, dp, j, d) = (j == i ? 0.0 : draw()));
            for (std::size_t j = 0; j < M; ++j)
                for (std::size_t d = 1; d <= D; ++d) m.trans(i, dp, j, d) /= row;
        }
    for (std::size_t j = 0; j < M; ++j) {
        double row = 0.0;
        for (Symbol v = 0; v < V; ++v) row += (m.emit(j, v) = draw());
        for (Symbol v = 0; v < V; ++v) m.emit(j, v) /= row;
    }
    return m;
}

/// Draws num_segments segments; the sequence ends on a segment boundary.
inline Sequence sample_sequence(const HsmmModel& m, std::size_t num_segments, Rng& rng) {
    auto draw_index = [&](auto&& prob, std::size_t n) {
        double u = uniform01(rng);
        for (std::size_t k = 0; k < n; ++k) {
            u -= prob(k);
            if (u < 0.0) return k;
        }
        std::size_t k = n - 1;
        while (k > 0 && prob(k) == 0.0) --k;
        return k;
    };
    Sequence obs;
    const std::size_t S = m.segments();
    std::size_t cur = draw_index([&](std::size_t k) { return m.init_table()[k]; }, S);
    for (std::size_t n = 0; n < num_segments; ++n) {
        const std::size_t j = cur / m.max_duration();
        const std::size_t d = cur % m.max_duration() + 1;
        for (std::size_t s = 0; s < d; ++s) obs.push_back(draw_index([&](std::size_t v) { return m.emit(j, v); }, m.symbols()));
        cur = draw_index([&](std::size_t k) { return m.trans_table()[cur * S + k]; }, S);
    }
    return obs;
}

namespace detail {

inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

}  // namespace detail

/// Log-domain forward/backward tables, indexed by t in 1..T and segment (j, d).
struct Trellis {
    std::size_t T = 0, M = 0, D = 0;
    std::vector<double> log_alpha;
    std::vector<double> log_beta;
    double log_likelihood = kNegInf;

    std::size_t at(std::size_t t, std::size_t j, std::size_t d) const { return ((t - 1) * M + j) * D + (d - 1); }
    double alpha(std::size_t t, std::size_t j, std::size_t d) const { return log_alpha[at(t, j, d)]; }
    double beta(std::size_t t, std::size_t j, std::size_t d) const { return log_beta[at(t, j, d)]; }
};

/// alpha_t(j,d) = P(segment (j,d) ends at t, o_{1:t}). Fills log_alpha and log_likelihood.
/// Throws ZeroLikelihood when no segmentation explains the sequence.
inline Trellis forward(const HsmmModel& m, std::span<const Symbol> obs) {
    m.check_sequence(obs);
    Trellis tr;
    tr.T = obs.size();
    tr.M = m.states();
    tr.D = m.max_duration();
    tr.log_alpha.assign(tr.T * tr.M * tr.D, kNegInf);
    const std::size_t M = tr.M, D = tr.D;

    // log a, precomputed once
    std::vector<double> log_a(m.trans_table().size());
    for (std::size_t k = 0; k < log_a.size(); ++k) log_a[k] = detail::safe_log(m.trans_table()[k]);

    for (std::size_t t = 1; t <= tr.T; ++t) {
        for (std::size_t j = 0; j < M; ++j) {
            for (std::size_t d = 1; d <= std::min(D, t); ++d) {
                const double eb = m.log_block(j, obs, t - d, d);
                if (eb == kNegInf) continue;
                double acc;
                if (t == d) {
                    acc = detail::safe_log(m.init(j, d));
                } else {
                    acc = kNegInf;
                    for (std::size_t i = 0; i < M; ++i) {
                        if (i == j) continue;
                        for (std::size_t dp = 1; dp <= D; ++dp) {
                            const double la = tr.alpha(t - d, i, dp);
                            if (la == kNegInf) continue;
                            acc = detail::log_add(acc, la + log_a[m.seg(i, dp) * m.segments() + m.seg(j, d)]);
                        }
                    }
                }
                tr.log_alpha[tr.at(t, j, d)] = acc + eb;
            }
        }
    }
    double ll = kNegInf;
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t d = 1; d <= D; ++d) ll = detail::log_add(ll, tr.alpha(tr.T, j, d));
    if (ll == kNegInf) throw ZeroLikelihood("observation sequence has zero likelihood under the model");
    tr.log_likelihood = ll;
    return tr;
}

/// beta_t(j,d) = P(o_{t+1:T} | segment (j,d) ends at t); beta_T = 1.
inline void backward(const HsmmModel& m, std::span<const Symbol> obs, Trellis& tr) {
    m.check_sequence(obs);
    const std::size_t T = obs.size(), M = m.states(), D = m.max_duration();
    tr.T = T;
    tr.M = M;
    tr.D = D;
    tr.log_beta.assign(T * M * D, kNegInf);
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t d = 1; d <= D; ++d) tr.log_beta[tr.at(T, j, d)] = 0.0;

    // Next-segment term n_t(i,d') = log b_{i,d'}(o_{t+1:t+d'}) + log beta_{t+d'}(i,d'), shared by all (j,d).
    std::vector<double> next(M * D);
    for (std::size_t t = T - 1; t >= 1; --t) {
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t dp = 1; dp <= D; ++dp) {
                double v = kNegInf;
                if (t + dp <= T) {
                    const double eb = m.log_block(i, obs, t, dp);
                    if (eb != kNegInf) v = eb + tr.beta(t + dp, i, dp);
                }
                next[m.seg(i, dp)] = v;
            }
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t d = 1; d <= D; ++d) {
                double acc = kNegInf;
                for (std::size_t i = 0; i < M; ++i) {
                    if (i == j) continue;
                    for (std::size_t dp = 1; dp <= D; ++dp) {
                        const double n = next[m.seg(i, dp)];
                        const double a = m.trans(j, d, i, dp);
                        if (n == kNegInf || a <= 0.0) continue;
                        acc = detail::log_add(acc, std::log(a) + n);
                    }
                }
                tr.log_beta[tr.at(t, j, d)] = acc;
            }
        if (t == 1) break;
    }
}

inline Trellis forward_backward(const HsmmModel& m, std::span<const Symbol> obs) {
    Trellis tr = forward(m, obs);
    backward(m, obs, tr);
    return tr;
}

/// P(segment (j,d) ends at t | o_{1:t}) for every (j,d), flattened by HsmmModel::seg.
inline std::vector<double> filter(const HsmmModel& m, const Trellis& tr, std::size_t t) {
    if (t < 1 || t > tr.T) throw ConfigError("filter: t out of range");
    double norm = kNegInf;
    for (std::size_t j = 0; j < tr.M; ++j)
        for (std::size_t d = 1; d <= tr.D; ++d) norm = detail::log_add(norm, tr.alpha(t, j, d));
    if (norm == kNegInf) throw ZeroLikelihood("no segment can end at t=" + std::to_string(t));
    std::vector<double> out(m.segments());
    for (std::size_t j = 0; j < tr.M; ++j)
        for (std::size_t d = 1; d <= tr.D; ++d) out[m.seg(j, d)] = std::exp(tr.alpha(t, j, d) - norm);
    return out;
}

/// P(next segment is (j,d), occupying t+1..t+d | o_{1:t}) for every (j,d).
inline std::vector<double> predict_next(const HsmmModel& m, const Trellis& tr, std::size_t t) {
    const auto post = filter(m, tr, t);
    std::vector<double> out(m.segments(), 0.0);
    for (std::size_t i = 0; i < tr.M; ++i)
        for (std::size_t dp = 1; dp <= tr.D; ++dp) {
            const double p = post[m.seg(i, dp)];
            if (p == 0.0) continue;
            for (std::size_t j = 0; j < tr.M; ++j) {
                if (j == i) continue;
                for (std::size_t d = 1; d <= tr.D; ++d) out[m.seg(j, d)] += p * m.trans(i, dp, j, d);
            }
        }
    return out;
}

inline double predict_next(const HsmmModel& m, const Trellis& tr, std::size_t t, std::size_t j, std::size_t d) {
    return predict_next(m, tr, t)[m.seg(j, d)];
}

/// Per-step scaled forward pass; returns the log-likelihood.
inline double forward_scaled(const HsmmModel& m, std::span<const Symbol> obs) {
    m.check_sequence(obs);
    const std::size_t T = obs.size(), M = m.states(), D = m.max_duration();
    std::vector<double> ahat(T * M * D, 0.0);
    std::vector<double> c(T + 1, 1.0);
    auto idx = [&](std::size_t t, std::size_t j, std::size_t d) { return ((t - 1) * M + j) * D + (d - 1); };
    double log_scale = 0.0;
    bool last_zero = false;
    for (std::size_t t = 1; t <= T; ++t) {
        double total = 0.0;
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t d = 1; d <= std::min(D, t); ++d) {
                double acc = 0.0;
                if (t == d) {
                    acc = m.init(j, d);
                } else {
                    for (std::size_t i = 0; i < M; ++i) {
                        if (i == j) continue;
                        for (std::size_t dp = 1; dp <= D; ++dp) acc += ahat[idx(t - d, i, dp)] * m.trans(i, dp, j, d);
                    }
                }
                // alpha_t / S_{t-1} = (sum of scaled predecessors) / prod_{s=t-d+1}^{t-1} c_s
                for (std::size_t s = t - d + 1; s < t; ++s) acc /= c[s];
                acc *= m.block(j, obs, t - d, d);
                ahat[idx(t, j, d)] = acc;
                total += acc;
            }
        last_zero = total == 0.0;
        c[t] = last_zero ? 1.0 : total;
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t d = 1; d <= D; ++d) ahat[idx(t, j, d)] /= c[t];
        log_scale += std::log(c[t]);
    }
    if (last_zero) throw ZeroLikelihood("observation sequence has zero likelihood under the model");
    return log_scale;
}

// ---------------------------------------------------------------------------
// Expectation-maximization

struct ExpectedCounts {
    std::vector<double> init;   // segments
    std::vector<double> trans;  // segments x segments
    std::vector<double> emit;   // M x V
    double log_likelihood = 0.0;

    explicit ExpectedCounts(const HsmmModel& m)
        : init(m.segments(), 0.0), trans(m.segments() * m.segments(), 0.0), emit(m.states() * m.symbols(), 0.0) {}

    ExpectedCounts& operator+=(const ExpectedCounts& o) {
        for (std::size_t k = 0; k < init.size(); ++k) init[k] += o.init[k];
        for (std::size_t k = 0; k < trans.size(); ++k) trans[k] += o.trans[k];
        for (std::size_t k = 0; k < emit.size(); ++k) emit[k] += o.emit[k];
        log_likelihood += o.log_likelihood;
        return *this;
    }
};

/// Posterior expected counts for one sequence:
///   first segment       pi(j,d) b_{j,d}(o_{1:d}) beta_d(j,d) / L
///   transition at t     alpha_t(i,d') a((i,d'),(j,d)) b_{j,d}(o_{t+1:t+d}) beta_{t+d}(j,d) / L
///   segment ending at t alpha_t(j,d) beta_t(j,d) / L, spread over its d emissions
inline ExpectedCounts expected_counts(const HsmmModel& m, std::span<const Symbol> obs) {
    const Trellis tr = forward_backward(m, obs);
    const std::size_t T = obs.size(), M = m.states(), D = m.max_duration(), S = m.segments();
    const double ll = tr.log_likelihood;
    ExpectedCounts ec(m);
    ec.log_likelihood = ll;

    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t d = 1; d <= std::min(D, T); ++d) {
            const double lp = detail::safe_log(m.init(j, d)) + m.log_block(j, obs, 0, d) + tr.beta(d, j, d) - ll;
            if (lp != kNegInf) ec.init[m.seg(j, d)] += std::exp(lp);
        }

    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t dp = 1; dp <= D; ++dp) {
                const double la = tr.alpha(t, i, dp);
                if (la == kNegInf) continue;
                for (std::size_t j = 0; j < M; ++j) {
                    if (j == i) continue;
                    for (std::size_t d = 1; d <= D && t + d <= T; ++d) {
                        const double a = m.trans(i, dp, j, d);
                        if (a <= 0.0) continue;
                        const double lp = la + std::log(a) + m.log_block(j, obs, t, d) + tr.beta(t + d, j, d) - ll;
                        if (lp != kNegInf) ec.trans[m.seg(i, dp) * S + m.seg(j, d)] += std::exp(lp);
                    }
                }
            }

    for (std::size_t t = 1; t <= T; ++t)
        for (std::size_t j = 0; j < M; ++j)
            for (std::size_t d = 1; d <= std::min(D, t); ++d) {
                const double lp = tr.alpha(t, j, d) + tr.beta(t, j, d) - ll;
                if (lp == kNegInf) continue;
                const double post = std::exp(lp);
                for (std::size_t s = t - d; s < t; ++s) ec.emit[j * m.symbols() + obs[s]] += post;
            }
    return ec;
}

/// Normalizes expected counts into a new model. Rows with zero expected
/// mass keep their previous values.
inline HsmmModel maximize(const HsmmModel& m, const ExpectedCounts& ec) {
    HsmmModel out = m;
    const std::size_t M = m.states(), D = m.max_duration(), V = m.symbols(), S = m.segments();
    double total = 0.0;
    for (double x : ec.init) total += x;
    if (total > 0.0)
        for (std::size_t k = 0; k < S; ++k) out.init_table()[k] = ec.init[k] / total;

    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t dp = 1; dp <= D; ++dp) {
            const std::size_t row = m.seg(i, dp) * S;
            double mass = 0.0;
            for (std::size_t k = 0; k < S; ++k) mass += ec.trans[row + k];
            if (!(mass > 0.0)) continue;
            for (std::size_t k = 0; k < S; ++k) out.trans_table()[row + k] = ec.trans[row + k] / mass;
        }

    for (std::size_t j = 0; j < M; ++j) {
        double mass = 0.0;
        for (Symbol v = 0; v < V; ++v) mass += ec.emit[j * V + v];
        if (!(mass > 0.0)) continue;
        for (Symbol v = 0; v < V; ++v) out.emit(j, v) = ec.emit[j * V + v] / mass;
    }
    return out;
}

struct EmStep {
    HsmmModel model;
    double log_likelihood_before = 0.0;  // corpus log-likelihood under the input model
};

/// One EM iteration over a corpus. E-steps are merged in corpus order.
inline EmStep reestimate(const HsmmModel& m, const std::vector<Sequence>& corpus) {
    if (corpus.empty()) throw ConfigError("HSMM re-estimation needs a non-empty corpus");
    ExpectedCounts total(m);
    for (const auto& seq : corpus) total += expected_counts(m, seq);
    return {maximize(m, total), total.log_likelihood};
}

inline double corpus_log_likelihood(const HsmmModel& m, const std::vector<Sequence>& corpus) {
    double ll = 0.0;
    for (const auto& seq : corpus) ll += forward(m, seq).log_likelihood;
    return ll;
}

// ---------------------------------------------------------------------------
// Model file: "CBHSMM01", u64 M, u64 D, u64 V, then init (M*D), trans
// ((M*D)^2, row = from-segment), emit (M*V), all f64 little-endian.

inline constexpr std::string_view kHsmmMagic = "CBHSMM01";

inline void write_model(std::ostream& os, const HsmmModel& m) {
    binio::put_magic(os, kHsmmMagic);
    binio::put_u64(os, m.states());
    binio::put_u64(os, m.max_duration());
    binio::put_u64(os, m.symbols());
    for (double x : m.init_table()) binio::put_f64(os, x);
    for (double x : m.trans_table()) binio::put_f64(os, x);
    for (double x : m.emit_table()) binio::put_f64(os, x);
}

inline HsmmModel read_model(std::istream& is) {
    binio::expect_magic(is, kHsmmMagic);
    const auto M = binio::get_u64(is), D = binio::get_u64(is), V = binio::get_u64(is);
    if (M > 256 || D > 256 || V > (1u << 20)) throw DataError("HSMM model size out of range");
    HsmmModel m(M, D, V);
    for (double& x : m.init_table()) x = binio::get_f64(is);
    for (double& x : m.trans_table()) x = binio::get_f64(is);
    for (double& x : m.emit_table()) x = binio::get_f64(is);
    m.validate(1e-9);
    return m;
}

}  // namespace clickbandit::hsmm
