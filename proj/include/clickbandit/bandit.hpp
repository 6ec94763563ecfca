#pragma once

// Bandit policies over the 10 shown URLs of a SERP:
//   LinUcb              shared-parameter LinUCB (baseline)
//   TsLinear            Thompson sampling with a Gaussian linear payoff model
//   GeneralizedThompson exponential-weights mixture over expert votes

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "clickbandit/common.hpp"

namespace clickbandit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {

template <typename ScoreFn>
std::size_t argmax_index(std::size_t n, ScoreFn&& f) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double s = f(i);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

inline void check_dim(const Vec& x, Eigen::Index d) {
    if (x.size() != d)
        throw ConfigError("feature dimension " + std::to_string(x.size()) + " does not match model dimension " +
                          std::to_string(d));
}

}  // namespace detail

/// Ridge-regression state shared by LinUCB and TS-linear: A = I + sum x x^T,
/// b = sum r x, with A kept as a Cholesky factor updated by rank-1 modification.
class RidgeState {
public:
    explicit RidgeState(std::size_t dim)
        : A_(Mat::Identity(Eigen::Index(dim), Eigen::Index(dim))), b_(Vec::Zero(Eigen::Index(dim))), llt_(A_) {}

    Eigen::Index dim() const noexcept { return b_.size(); }

    void update(const Vec& x, double reward) {
        detail::check_dim(x, dim());
        A_.noalias() += x * x.transpose();
        b_.noalias() += reward * x;
        refactor();
    }

    /// A^{-1} b via the Cholesky factor.
    Vec solve_mean() const { return llt_.solve(b_); }

    /// x^T A^{-1} x = |L^{-1} x|^2.
    double quad_inv(const Vec& x) const {
        const Vec y = llt_.matrixL().solve(x);
        return y.squaredNorm();
    }

    const Mat& A() const noexcept { return A_; }
    const Vec& b() const noexcept { return b_; }
    const Eigen::LLT<Mat>& factor() const noexcept { return llt_; }

    void restore(Mat A, Vec b) {
        if (A.rows() != A.cols() || A.rows() != b.size()) throw DataError("ridge state shape mismatch");
        A_ = std::move(A);
        b_ = std::move(b);
        refactor();
    }

private:
    void refactor() {
        llt_.compute(A_);
        if (llt_.info() != Eigen::Success) throw NumericError("Cholesky factorization failed: matrix not positive definite");
    }

    Mat A_;
    Vec b_;
    Eigen::LLT<Mat> llt_;
};

class LinUcb {
public:
    explicit LinUcb(std::size_t dim, double alpha_explore = 1.0) : ridge_(dim), alpha_(alpha_explore) {
        if (alpha_explore < 0.0) throw ConfigError("alpha_explore must be >= 0");
    }

    Vec theta() const { return ridge_.solve_mean(); }

    /// x^T theta + alpha * sqrt(x^T A^{-1} x)
    double upper_bound(const Vec& x) const {
        detail::check_dim(x, ridge_.dim());
        return x.dot(theta()) + alpha_ * std::sqrt(ridge_.quad_inv(x));
    }

    std::size_t select(const std::vector<Vec>& candidates) const {
        const Vec th = theta();
        return detail::argmax_index(candidates.size(), [&](std::size_t i) {
            const Vec& x = candidates[i];
            detail::check_dim(x, ridge_.dim());
            return x.dot(th) + alpha_ * std::sqrt(ridge_.quad_inv(x));
        });
    }

    void update(const Vec& x, double reward) { ridge_.update(x, reward); }

    double alpha_explore() const noexcept { return alpha_; }
    const RidgeState& ridge() const noexcept { return ridge_; }
    RidgeState& ridge() noexcept { return ridge_; }

private:
    RidgeState ridge_;
    double alpha_;
};

/// B = I + sum x x^T, f = sum r x, mu_hat = B^{-1} f; samples N(mu_hat, v^2 B^{-1}).
class TsLinear {
public:
    explicit TsLinear(std::size_t dim, double v = 0.5) : ridge_(dim), mu_hat_(Vec::Zero(Eigen::Index(dim))), v_(v) {
        if (!(v >= 0.0)) throw ConfigError("posterior scale v must be >= 0");
    }

    const Vec& mu_hat() const noexcept { return mu_hat_; }
    const Mat& B() const noexcept { return ridge_.A(); }
    const Vec& f() const noexcept { return ridge_.b(); }
    double v() const noexcept { return v_; }

    /// mu_hat + v * L^{-T} z with B = L L^T, z ~ N(0, I); covariance v^2 B^{-1}.
    Vec sample(Rng& rng) const {
        if (v_ == 0.0) return mu_hat_;
        const auto& llt = ridge_.factor();
        if (llt.info() != Eigen::Success) throw NumericError("Cholesky factor unavailable for sampling");
        Vec z(mu_hat_.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
        const Vec y = llt.matrixU().solve(z);
        return mu_hat_ + v_ * y;
    }

    std::size_t select(const std::vector<Vec>& candidates, Rng& rng) const {
        const Vec mu = sample(rng);
        return detail::argmax_index(candidates.size(), [&](std::size_t i) {
            detail::check_dim(candidates[i], mu.size());
            return candidates[i].dot(mu);
        });
    }

    /// Greedy choice under mu_hat (no sampling).
    std::size_t greedy(const std::vector<Vec>& candidates) const {
        return detail::argmax_index(candidates.size(), [&](std::size_t i) { return candidates[i].dot(mu_hat_); });
    }

    double predicted(const Vec& x) const { return x.dot(mu_hat_); }

    void update(const Vec& x, double reward) {
        ridge_.update(x, reward);
        mu_hat_ = ridge_.solve_mean();
    }

    void restore(Mat B, Vec f) {
        ridge_.restore(std::move(B), std::move(f));
        mu_hat_ = ridge_.solve_mean();
    }
    const RidgeState& ridge() const noexcept { return ridge_; }

private:
    RidgeState ridge_;
    Vec mu_hat_;
    double v_;
};

class ZeroWeightMass : public NumericError {
public:
    using NumericError::NumericError;
};

/// Exponential weights over N experts. Each expert votes one of K candidates;
/// P(a) = (1 - gamma) * sum_i w_i [vote_i = a] / W + gamma / K.
class GeneralizedThompson {
public:
    static constexpr double kWeightFloor = 1e-12;
    static constexpr double kRescaleBelow = 1e-150;

    GeneralizedThompson(std::size_t num_experts, double gamma = 0.05, double eta = 1.0)
        : w_(num_experts, 1.0), gamma_(gamma), eta_(eta) {
        if (num_experts == 0) throw ConfigError("GTS needs at least one expert");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
        if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    }

    std::size_t num_experts() const noexcept { return w_.size(); }
    const std::vector<double>& weights() const noexcept { return w_; }
    double gamma() const noexcept { return gamma_; }
    double eta() const noexcept { return eta_; }

    double total_weight() const {
        double W = 0.0;
        for (double w : w_) W += w;
        return W;
    }

    void set_weights(std::vector<double> w) {
        if (w.size() != w_.size()) throw ConfigError("weight count mismatch");
        for (double x : w)
            if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("weights must be finite and non-negative");
        w_ = std::move(w);
    }

    void reset() { std::fill(w_.begin(), w_.end(), 1.0); }

    std::vector<double> probabilities(std::span<const std::size_t> votes, std::size_t num_candidates) const {
        if (votes.size() != w_.size()) throw ConfigError("one vote per expert required");
        if (num_candidates == 0) throw ConfigError("no candidates");
        const double W = total_weight();
        if (!(W > 0.0)) throw ZeroWeightMass("all expert weights are zero");
        std::vector<double> p(num_candidates, gamma_ / static_cast<double>(num_candidates));
        for (std::size_t i = 0; i < w_.size(); ++i) {
            if (votes[i] >= num_candidates) throw ConfigError("vote out of range");
            p[votes[i]] += (1.0 - gamma_) * w_[i] / W;
        }
        return p;
    }

    struct Choice {
        std::size_t index = 0;
        double probability = 0.0;
    };

    Choice select(std::span<const std::size_t> votes, std::size_t num_candidates, Rng& rng) const {
        const auto p = probabilities(votes, num_candidates);
        double u = uniform01(rng);
        for (std::size_t a = 0; a < p.size(); ++a) {
            if (u < p[a]) return {a, p[a]};
            u -= p[a];
        }
        std::size_t last = p.size() - 1;
        while (last > 0 && p[last] == 0.0) --last;
        return {last, p[last]};
    }

    /// Log loss of a predicted click probability.
    static double log_loss(double r_hat, int reward) {
        return reward == 1 ? std::log(1.0 / r_hat) : std::log(1.0 / (1.0 - r_hat));
    }

    /// w_i <- w_i * exp(-eta * loss(r_hat_i, r)), then floor at 1e-12 * W.
    void update(std::span<const double> r_hat, int reward) {
        if (r_hat.size() != w_.size()) throw ConfigError("one prediction per expert required");
        if (reward != 0 && reward != 1) throw ConfigError("reward must be 0 or 1");
        for (std::size_t i = 0; i < w_.size(); ++i) {
            if (!(r_hat[i] > 0.0 && r_hat[i] < 1.0)) throw ConfigError("predicted reward must lie in (0, 1)");
            w_[i] *= std::exp(-eta_ * log_loss(r_hat[i], reward));
        }
        double W = total_weight();
        if (W > 0.0 && W < kRescaleBelow) {
            // Probabilities are scale invariant; rescale before underflow.
            for (double& w : w_) w /= W;
            W = 1.0;
        }
        for (double& w : w_) w = std::max(w, kWeightFloor * W);
    }

private:
    std::vector<double> w_;
    double gamma_;
    double eta_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "CBCKPT01", u8 kind, u64 n, payload doubles, then rng state
// as a length-prefixed text blob.

enum class CheckpointKind : std::uint8_t { LinUcb = 1, TsLinear = 2, Gts = 3 };

inline constexpr std::string_view kCheckpointMagic = "CBCKPT01";

namespace detail {

inline void put_matrix(std::ostream& os, const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) binio::put_f64(os, m(i, j));
}

inline Mat get_matrix(std::istream& is, Eigen::Index n) {
    Mat m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = binio::get_f64(is);
    return m;
}

inline Vec get_vector(std::istream& is, Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = binio::get_f64(is);
    return v;
}

inline void put_rng(std::ostream& os, const Rng& rng) {
    std::ostringstream ss;
    ss << rng;
    binio::put_string(os, ss.str());
}

inline Rng get_rng(std::istream& is) {
    std::istringstream ss(binio::get_string(is));
    Rng rng;
    ss >> rng;
    if (!ss) throw DataError("bad rng state in checkpoint");
    return rng;
}

inline std::uint64_t get_dim(std::istream& is) {
    const auto d = binio::get_u64(is);
    if (d == 0 || d > 4096) throw DataError("checkpoint dimension out of range");
    return d;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const LinUcb& s, const Rng& rng) {
    binio::put_magic(os, kCheckpointMagic);
    binio::put_u8(os, static_cast<std::uint8_t>(CheckpointKind::LinUcb));
    binio::put_u64(os, static_cast<std::uint64_t>(s.ridge().dim()));
    binio::put_f64(os, s.alpha_explore());
    detail::put_matrix(os, s.ridge().A());
    for (Eigen::Index i = 0; i < s.ridge().dim(); ++i) binio::put_f64(os, s.ridge().b()[i]);
    detail::put_rng(os, rng);
}

inline void write_checkpoint(std::ostream& os, const TsLinear& s, const Rng& rng) {
    binio::put_magic(os, kCheckpointMagic);
    binio::put_u8(os, static_cast<std::uint8_t>(CheckpointKind::TsLinear));
    binio::put_u64(os, static_cast<std::uint64_t>(s.mu_hat().size()));
    binio::put_f64(os, s.v());
    detail::put_matrix(os, s.B());
    for (Eigen::Index i = 0; i < s.f().size(); ++i) binio::put_f64(os, s.f()[i]);
    detail::put_rng(os, rng);
}

inline void write_checkpoint(std::ostream& os, const GeneralizedThompson& s, const Rng& rng) {
    binio::put_magic(os, kCheckpointMagic);
    binio::put_u8(os, static_cast<std::uint8_t>(CheckpointKind::Gts));
    binio::put_u64(os, s.num_experts());
    binio::put_f64(os, s.gamma());
    binio::put_f64(os, s.eta());
    for (double w : s.weights()) binio::put_f64(os, w);
    detail::put_rng(os, rng);
}

inline CheckpointKind peek_checkpoint_kind(std::istream& is) {
    binio::expect_magic(is, kCheckpointMagic);
    const auto k = binio::get_u8(is);
    if (k < 1 || k > 3) throw DataError("unknown checkpoint kind");
    return static_cast<CheckpointKind>(k);
}

/// Reads the body after peek_checkpoint_kind returned LinUcb.
inline LinUcb read_linucb_body(std::istream& is, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(detail::get_dim(is));
    LinUcb s(static_cast<std::size_t>(d), binio::get_f64(is));
    Mat A = detail::get_matrix(is, d);
    Vec b = detail::get_vector(is, d);
    s.ridge().restore(std::move(A), std::move(b));
    rng = detail::get_rng(is);
    return s;
}

inline TsLinear read_ts_body(std::istream& is, Rng& rng) {
    const auto d = static_cast<Eigen::Index>(detail::get_dim(is));
    TsLinear s(static_cast<std::size_t>(d), binio::get_f64(is));
    Mat B = detail::get_matrix(is, d);
    Vec f = detail::get_vector(is, d);
    s.restore(std::move(B), std::move(f));
    rng = detail::get_rng(is);
    return s;
}

inline GeneralizedThompson read_gts_body(std::istream& is, Rng& rng) {
    const auto n = detail::get_dim(is);
    const double gamma = binio::get_f64(is);
    const double eta = binio::get_f64(is);
    GeneralizedThompson s(n, gamma, eta);
    std::vector<double> w(n);
    for (double& x : w) x = binio::get_f64(is);
    s.set_weights(std::move(w));
    rng = detail::get_rng(is);
    return s;
}

}  // namespace clickbandit
