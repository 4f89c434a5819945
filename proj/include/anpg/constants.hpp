#pragma once

#include "anpg/oracle.hpp"
#include "anpg/policy.hpp"
#include "anpg/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace anpg {

/// Score bound G, score smoothness B, Fisher floor mu_F, and the derived
/// objective smoothness L and gradient-noise scale sigma^2.
struct SmoothnessConstants {
    double G = 0.0;
    double B = 0.0;
    double L = 0.0;
    double mu_F = 0.0;
    double sigma_sq = 0.0;
    double gamma = 0.0;

    static double smoothness(double G, double B, double gamma) {
        const double c = 1.0 - gamma;
        return B / (c * c) + 2.0 * G * G / (c * c * c);
    }

    static double noise_scale(double G, double mu_F, double gamma) {
        const double c4 = std::pow(1.0 - gamma, 4);
        return 2.0 * std::pow(G, 4) / (mu_F * mu_F * c4) + 32.0 / c4;
    }

    static SmoothnessConstants from(double G, double B, double mu_F, double gamma) {
        SmoothnessConstants c;
        c.G = G;
        c.B = B;
        c.mu_F = mu_F;
        c.gamma = gamma;
        c.L = smoothness(G, B, gamma);
        c.sigma_sq = noise_scale(G, mu_F, gamma);
        return c;
    }

    /// Outer step mu_F^2 / (4 G^2 L).
    double default_eta() const { return mu_F * mu_F / (4.0 * G * G * L); }
};

/// Thrown when the Fisher matrix is (numerically) degenerate on the
/// effective subspace, i.e. the learning-rate formulas would blow up.
class DegenerateFisherError : public std::runtime_error {
public:
    DegenerateFisherError(const std::string& what, double measured) : std::runtime_error(what), measured_(measured) {}
    double measured() const { return measured_; }

private:
    double measured_;
};

struct ConstantsOptions {
    double mu_floor = 1e-4;
    double pair_radius = 2.0;   // B pairs are drawn in this ball around each grid point
    int pairs_per_point = 16;
    double near_step = 1e-3;    // length of the short finite-difference pairs
    std::uint64_t seed = 0x5eed;
};

namespace detail {
inline Vector random_in_ball(int d, double radius, RngStream& rng) {
    Vector u(d);
    for (int i = 0; i < d; ++i) {
        const double u1 = rng.uniform_open_zero();
        const double u2 = rng.uniform();
        u(i) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    const double n = u.norm();
    if (n == 0.0) return Vector::Zero(d);
    return u / n * radius * std::pow(rng.uniform(), 1.0 / d);
}
}  // namespace detail

/// Smallest eigenvalue of the Fisher matrix restricted to the family's
/// effective subspace.
inline double restricted_fisher_min_eigenvalue(const Matrix& fisher, const PolicyFamily& family) {
    const Matrix basis = family.effective_basis();
    if (basis.cols() == 0) return 0.0;
    const Matrix reduced = basis.transpose() * fisher * basis;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

inline double max_score_norm(const PolicyParams& params) {
    double g = 0.0;
    for (State s = 0; s < params.family->n_states(); ++s)
        for (Action a = 0; a < params.family->n_actions(); ++a) g = std::max(g, score(params, s, a).norm());
    return g;
}

/// Grid of parameters: `center` plus `n_points` random points within `radius`.
inline std::vector<PolicyParams> parameter_grid(const PolicyParams& center, int n_points, double radius,
                                                std::uint64_t seed) {
    std::vector<PolicyParams> grid{center};
    RngStream rng(seed);
    for (int i = 0; i < n_points; ++i)
        grid.push_back(center.with_theta(center.theta + detail::random_in_ball(center.dim(), radius, rng)));
    return grid;
}

/// Measures G, B and mu_F over a parameter grid; fills L and sigma^2.
inline SmoothnessConstants measure_constants(const std::vector<PolicyParams>& grid, const TabularMdp& mdp,
                                             const ConstantsOptions& opt = {}) {
    if (grid.empty()) throw std::invalid_argument("parameter grid is empty");
    RngStream rng(opt.seed);
    const auto& family = *grid.front().family;
    const int S = family.n_states();
    const int A = family.n_actions();

    double G = 0.0;
    double mu = std::numeric_limits<double>::infinity();
    for (const auto& p : grid) {
        if (!p.theta.allFinite()) throw std::invalid_argument("grid parameter is not finite");
        G = std::max(G, max_score_norm(p));
        mu = std::min(mu, restricted_fisher_min_eigenvalue(exact_fisher(mdp, p), family));
    }

    auto max_ratio = [&](const PolicyParams& p1, const PolicyParams& p2) {
        const double dist = (p1.theta - p2.theta).norm();
        if (dist == 0.0) return 0.0;
        double best = 0.0;
        for (State s = 0; s < S; ++s)
            for (Action a = 0; a < A; ++a) best = std::max(best, (score(p1, s, a) - score(p2, s, a)).norm() / dist);
        return best;
    };

    double B = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = i + 1; j < grid.size(); ++j) B = std::max(B, max_ratio(grid[i], grid[j]));
        for (int k = 0; k < opt.pairs_per_point; ++k) {
            const Vector t1 = grid[i].theta + detail::random_in_ball(grid[i].dim(), opt.pair_radius, rng);
            const Vector t2 = grid[i].theta + detail::random_in_ball(grid[i].dim(), opt.pair_radius, rng);
            Vector dir = detail::random_in_ball(grid[i].dim(), 1.0, rng);
            if (dir.norm() > 0.0) dir *= opt.near_step / dir.norm();
            const auto p1 = grid[i].with_theta(t1);
            B = std::max(B, max_ratio(p1, grid[i].with_theta(t2)));
            B = std::max(B, max_ratio(p1, grid[i].with_theta(t1 + dir)));
        }
    }

    if (!(mu > opt.mu_floor))
        throw DegenerateFisherError("Fisher matrix is degenerate on the visited region: mu_F = " + format_double(mu) +
                                        " <= mu_floor = " + format_double(opt.mu_floor),
                                    mu);
    return SmoothnessConstants::from(G, B, mu, mdp.gamma());
}

}  // namespace anpg
