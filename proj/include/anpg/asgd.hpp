#pragma once

#include "anpg/constants.hpp"
#include "anpg/oracle.hpp"
#include "anpg/sampler.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace anpg {

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Step parameters of the four-sequence accelerated recursion
///   y = alpha x + (1 - alpha) v
///   x' = y - delta g(y)
///   z = beta y + (1 - beta) v
///   v' = z - xi g(y)
/// alpha = beta = 1 collapses it to plain gradient descent with step delta.
struct AsgdRates {
    double alpha = 0.0;
    double beta = 0.0;
    double xi = 0.0;
    double delta = 0.0;

    static AsgdRates gradient_descent(double step) { return AsgdRates{1.0, 1.0, step, step}; }
};

/// Accelerated rates from the score bound G and the Fisher floor mu_F.
inline AsgdRates make_rates(double G, double mu_F) {
    if (!(G > 0.0)) throw std::invalid_argument("make_rates: G must be positive, got " + format_double(G));
    if (!(mu_F > 0.0)) throw std::invalid_argument("make_rates: mu_F must be positive, got " + format_double(mu_F));
    const double g2 = G * G;
    const double c = 3.0 * std::sqrt(5.0) * g2;
    AsgdRates r;
    r.alpha = c / (mu_F + c);
    r.beta = mu_F / (9.0 * g2);
    r.xi = 1.0 / c;
    r.delta = 1.0 / (5.0 * g2);
    if (!(r.beta < 1.0))
        throw std::invalid_argument("make_rates: beta = mu_F/(9 G^2) = " + format_double(r.beta) +
                                    " must be < 1 (mu_F too large relative to G^2)");
    return r;
}

inline AsgdRates make_rates(const SmoothnessConstants& c) { return make_rates(c.G, c.mu_F); }

/// Inner-loop iterate. x and v start at zero; the tail accumulator holds the
/// sum of x_h for floor(H/2) < h <= H.
struct AsgdState {
    Vector x;
    Vector v;
    int h = 0;
    int horizon = 0;
    Vector tail_sum;
    int tail_count = 0;

    static AsgdState start(int dim, int horizon) {
        if (horizon < 2) throw std::invalid_argument("inner loop length H must be >= 2");
        AsgdState s;
        s.x = Vector::Zero(dim);
        s.v = Vector::Zero(dim);
        s.tail_sum = Vector::Zero(dim);
        s.horizon = horizon;
        return s;
    }

    /// Starts from a given point (x = v = point); used for stationarity checks.
    static AsgdState start_at(const Vector& point, int horizon) {
        AsgdState s = start(static_cast<int>(point.size()), horizon);
        s.x = point;
        s.v = point;
        return s;
    }

    Vector tail_average() const {
        if (tail_count == 0) throw std::logic_error("tail average is empty before step floor(H/2) + 1");
        return tail_sum / static_cast<double>(tail_count);
    }
};

/// One step of the recursion: exactly one call to `grad_at`.
template <class GradFn>
AsgdState asgd_step(const AsgdState& state, const AsgdRates& rates, GradFn&& grad_at) {
    const Vector y = rates.alpha * state.x + (1.0 - rates.alpha) * state.v;
    const Vector g = grad_at(y);
    if (!g.allFinite())
        throw NumericalError("non-finite gradient at inner step h = " + std::to_string(state.h));
    AsgdState next = state;
    next.x = y - rates.delta * g;
    next.v = rates.beta * y + (1.0 - rates.beta) * state.v - rates.xi * g;
    next.h = state.h + 1;
    if (next.h > state.horizon / 2) {
        next.tail_sum += next.x;
        ++next.tail_count;
    }
    return next;
}

enum class GradientMode { stochastic, deterministic };

struct InnerLoopResult {
    Vector omega;
    long samples_used = 0;  // environment (s, a, r) steps
    long grad_calls = 0;
    double omega_norm = 0.0;
};

using InnerObserver = std::function<void(const AsgdState&)>;

/// H steps of the recursion from zero, returning the tail average.
template <class GradFn>
Vector run_recursion(int dim, int H, const AsgdRates& rates, GradFn&& grad_at, const InnerObserver& observer = {}) {
    AsgdState state = AsgdState::start(dim, H);
    for (int h = 0; h < H; ++h) {
        state = asgd_step(state, rates, grad_at);
        if (observer) observer(state);
    }
    return state.tail_average();
}

/// Inner loop at fixed theta. Stochastic mode draws one estimator sample per
/// step; deterministic mode uses the exact loss gradient (a test fixture for
/// the conditional-mean recursion).
inline InnerLoopResult run_inner_loop(const TabularMdp& mdp, const PolicyParams& params, int H, const AsgdRates& rates,
                                      GradientMode mode, RngStream& rng, const SamplerOptions& sampler = {},
                                      const InnerObserver& observer = {}) {
    InnerLoopResult out;
    if (mode == GradientMode::stochastic) {
        const PolicySnapshot pol(params);
        out.omega = run_recursion(
            params.dim(), H, rates,
            [&](const Vector& y) {
                GradEstimate g = grad_estimate(mdp, pol, y, rng, sampler);
                out.samples_used += g.steps();
                ++out.grad_calls;
                return g.vec;
            },
            observer);
    } else {
        const auto ev = evaluate_exact(mdp, params);
        out.omega = run_recursion(
            params.dim(), H, rates,
            [&](const Vector& y) {
                ++out.grad_calls;
                return Vector(ev.ng.fisher * y - ev.ng.pg);
            },
            observer);
    }
    out.omega_norm = out.omega.norm();
    return out;
}

/// Plain SGD with the same tail averaging and one estimator sample per step.
inline InnerLoopResult sgd_inner_loop(const TabularMdp& mdp, const PolicyParams& params, int H, double step_size,
                                      RngStream& rng, const SamplerOptions& sampler = {}) {
    if (!(step_size > 0.0)) throw std::invalid_argument("SGD step size must be positive");
    return run_inner_loop(mdp, params, H, AsgdRates::gradient_descent(step_size), GradientMode::stochastic, rng,
                          sampler);
}

/// ||P (omega_bar_H - omega*)|| for the noiseless recursion, where P projects
/// onto the Fisher row space. omega_bar_H equals E[omega | theta] of the
/// stochastic inner loop.
inline double deterministic_bias(const OracleEvaluation& ev, int H, const AsgdRates& rates,
                                 double pinv_cutoff = 1e-10) {
    const Matrix& F = ev.ng.fisher;
    const Vector& pg = ev.ng.pg;
    const Vector mean = run_recursion(static_cast<int>(pg.size()), H, rates,
                                      [&](const Vector& y) { return Vector(F * y - pg); });
    return (row_space_projector(F, pinv_cutoff) * (mean - ev.ng.omega_star)).norm();
}

struct BiasProbePoint {
    int H = 0;
    double error = 0.0;
};

inline std::vector<BiasProbePoint> bias_decay_probe(const TabularMdp& mdp, const PolicyParams& params,
                                                    const std::vector<int>& H_list, const AsgdRates& rates,
                                                    double pinv_cutoff = 1e-10) {
    for (std::size_t i = 1; i < H_list.size(); ++i)
        if (H_list[i] <= H_list[i - 1]) throw std::invalid_argument("H_list must be increasing");
    const auto ev = evaluate_exact(mdp, params, pinv_cutoff);
    std::vector<BiasProbePoint> out;
    for (int H : H_list) out.push_back({H, deterministic_bias(ev, H, rates, pinv_cutoff)});
    return out;
}

}  // namespace anpg
