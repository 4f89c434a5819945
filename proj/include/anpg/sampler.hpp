#pragma once

// Single-trajectory unbiased estimator of the compatible-loss gradient:
// an occupancy draw (s_hat, a_hat) from a geometric-horizon rollout, then a
// second geometric rollout that estimates either Q(s_hat, a_hat) or
// V(s_hat) depending on a fair coin.

#include "anpg/mdp.hpp"
#include "anpg/policy.hpp"
#include "anpg/rng.hpp"

#include <Eigen/Dense>

#include <optional>

namespace anpg {

struct SamplerOptions {
    /// Caps each geometric horizon. Biases the estimator; off by default.
    std::optional<long> max_horizon;
};

struct OccupancySample {
    State s_hat = 0;
    Action a_hat = 0;
    long horizon_used = 0;
    long steps = 0;  // (s, a, r) tuples generated
};

struct AdvantageEstimate {
    double q_hat = 0.0;
    double v_hat = 0.0;
    double a_hat_val = 0.0;
    bool coin = false;  // X = 1 selects the V branch
    long horizon_used = 0;
    long steps = 0;
};

struct GradEstimate {
    Vector vec;
    OccupancySample occupancy;
    AdvantageEstimate advantage;

    long steps() const { return occupancy.steps + advantage.steps; }
};

namespace detail {
inline long draw_horizon(RngStream& rng, double gamma, const SamplerOptions& opt) {
    long t = sample_geometric(rng, 1.0 - gamma);
    if (opt.max_horizon && t > *opt.max_horizon) t = *opt.max_horizon;
    return t;
}

inline auto action_sampler(const PolicySnapshot& pol) {
    return [&pol](State s, RngStream& r) { return pol.sample_action(s, r); };
}

// Substream ids within one estimator call.
enum : std::uint64_t { kFirstHorizon = 0, kFirstRollout = 1, kSecondHorizon = 2, kCoin = 3, kSecondRollout = 4 };
}  // namespace detail

/// (s_T, a_T) of a pi_theta rollout from s_0 ~ rho with T ~ Geo(1 - gamma).
inline OccupancySample sample_occupancy_pair(const TabularMdp& mdp, const PolicySnapshot& pol, RngStream& rng,
                                             const SamplerOptions& opt = {}) {
    const RngStream call = rng.split();
    RngStream horizon_rng = call.substream(detail::kFirstHorizon);
    RngStream walk_rng = call.substream(detail::kFirstRollout);
    const long T = detail::draw_horizon(horizon_rng, mdp.gamma(), opt);
    const State s0 = mdp.sample_initial(walk_rng);
    auto summary = walk(mdp, detail::action_sampler(pol), s0, std::nullopt, T, walk_rng, [](const Step&) {});
    return OccupancySample{summary.last_state, summary.last_action, T, summary.length};
}

/// Q-hat / V-hat / A-hat at (s_hat, a_hat) from one fresh rollout.
inline AdvantageEstimate sample_advantage(const TabularMdp& mdp, const PolicySnapshot& pol, State s_hat, Action a_hat,
                                          RngStream& rng, const SamplerOptions& opt = {}) {
    mdp.check_state(s_hat);
    mdp.check_action(a_hat);
    const RngStream call = rng.split();
    RngStream horizon_rng = call.substream(detail::kSecondHorizon);
    RngStream coin_rng = call.substream(detail::kCoin);
    RngStream walk_rng = call.substream(detail::kSecondRollout);
    const long T = detail::draw_horizon(horizon_rng, mdp.gamma(), opt);
    const bool x = coin_rng.coin();
    // X = 1 discards a_hat and restarts from s_hat with a fresh action.
    std::optional<Action> a0;
    if (!x) a0 = a_hat;
    auto summary = walk(mdp, detail::action_sampler(pol), s_hat, a0, T, walk_rng, [](const Step&) {});
    AdvantageEstimate out;
    out.coin = x;
    out.q_hat = x ? 0.0 : 2.0 * summary.total_reward;
    out.v_hat = x ? 2.0 * summary.total_reward : 0.0;
    out.a_hat_val = out.q_hat - out.v_hat;
    out.horizon_used = T;
    out.steps = summary.length;
    return out;
}

/// score (score^T omega) - A_hat score / (1 - gamma) at a sampled (s_hat, a_hat).
/// Advances `rng` by exactly two draws (one per stage); all randomness comes
/// from substreams keyed by those draws.
inline GradEstimate grad_estimate(const TabularMdp& mdp, const PolicySnapshot& pol, const Vector& omega,
                                  RngStream& rng, const SamplerOptions& opt = {}) {
    if (omega.size() != pol.dim()) throw std::invalid_argument("omega has wrong dimension");
    GradEstimate out;
    out.occupancy = sample_occupancy_pair(mdp, pol, rng, opt);
    out.advantage = sample_advantage(mdp, pol, out.occupancy.s_hat, out.occupancy.a_hat, rng, opt);
    const auto sc = pol.score_row(out.occupancy.s_hat, out.occupancy.a_hat).transpose();
    out.vec = sc * (sc.dot(omega) - out.advantage.a_hat_val / (1.0 - mdp.gamma()));
    return out;
}

/// Sample mean of g g^T with g the estimator evaluated at `omega`
/// (pass omega* for the noise-covariance bound).
inline Matrix empirical_noise_covariance(const TabularMdp& mdp, const PolicySnapshot& pol, const Vector& omega,
                                         long n_samples, RngStream& rng) {
    if (n_samples < 10000) throw std::invalid_argument("noise covariance needs at least 10^4 samples");
    Matrix m = Matrix::Zero(pol.dim(), pol.dim());
    for (long i = 0; i < n_samples; ++i) {
        const Vector g = grad_estimate(mdp, pol, omega, rng).vec;
        m.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0);
    }
    Matrix full = m.selfadjointView<Eigen::Lower>();
    return full / static_cast<double>(n_samples);
}

}  // namespace anpg
