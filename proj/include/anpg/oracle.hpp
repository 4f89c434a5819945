#pragma once

// Closed-form quantities for a tabular MDP under a fixed policy: values,
// occupancies, policy gradient, Fisher matrix, natural gradient and the
// compatible-function-approximation loss. Everything here is exact up to a
// dense linear solve; it is the ground truth the stochastic code is checked
// against, and the learner itself never calls it.

#include "anpg/mdp.hpp"
#include "anpg/policy.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace anpg {

struct ExactQuantities {
    Vector v;       // V(s)
    Matrix q;       // Q(s, a), S x A
    Matrix adv;     // A(s, a) = Q - V
    Vector d_occ;   // discounted state occupancy, sums to 1
    Matrix nu_occ;  // d(s) pi(a|s), S x A
    double j = 0.0; // rho^T V
};

namespace detail {

inline void check_policy_table(const TabularMdp& mdp, const Matrix& pi) {
    if (pi.rows() != mdp.n_states() || pi.cols() != mdp.n_actions())
        throw std::invalid_argument("policy table has wrong shape");
    for (Eigen::Index s = 0; s < pi.rows(); ++s) {
        if ((pi.row(s).array() < 0.0).any() || std::abs(pi.row(s).sum() - 1.0) > 1e-10)
            throw std::invalid_argument("policy table row " + std::to_string(s) + " is not a distribution");
    }
}

/// P_pi(s, s') = sum_a pi(a|s) P(s'|s,a).
inline Matrix state_kernel(const TabularMdp& mdp, const Matrix& pi) {
    const int S = mdp.n_states();
    Matrix P = Matrix::Zero(S, S);
    for (State s = 0; s < S; ++s)
        for (Action a = 0; a < mdp.n_actions(); ++a) {
            const double w = pi(s, a);
            if (w == 0.0) continue;
            P.row(s) += w * Eigen::Map<const Eigen::RowVectorXd>(mdp.row(s, a), S);
        }
    return P;
}

inline Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Solves the Bellman equations of `pi` exactly.
inline ExactQuantities exact_values(const TabularMdp& mdp, const Matrix& pi) {
    detail::check_policy_table(mdp, pi);
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    const double gamma = mdp.gamma();

    Matrix r(S, A);
    for (State s = 0; s < S; ++s)
        for (Action a = 0; a < A; ++a) r(s, a) = mdp.reward(s, a);
    const Vector r_pi = (r.cwiseProduct(pi)).rowwise().sum();

    const Matrix system = Matrix::Identity(S, S) - gamma * detail::state_kernel(mdp, pi);
    Eigen::PartialPivLU<Matrix> lu(system);
    ExactQuantities out;
    out.v = lu.solve(r_pi);
    const Vector rho = detail::to_vector(mdp.rho());
    out.d_occ = (1.0 - gamma) * Eigen::PartialPivLU<Matrix>(system.transpose()).solve(rho);
    if (!out.v.allFinite() || !out.d_occ.allFinite() || (system * out.v - r_pi).lpNorm<Eigen::Infinity>() > 1e-9)
        throw std::runtime_error("internal error: policy evaluation solve failed");

    out.q.resize(S, A);
    for (State s = 0; s < S; ++s)
        for (Action a = 0; a < A; ++a)
            out.q(s, a) = r(s, a) + gamma * Eigen::Map<const Eigen::RowVectorXd>(mdp.row(s, a), S).dot(out.v);
    out.adv = out.q.colwise() - out.v;
    out.nu_occ = pi.array().colwise() * out.d_occ.array();
    out.j = rho.dot(out.v);
    return out;
}

/// Moore-Penrose pseudoinverse of a symmetric matrix; eigenvalues with
/// |lambda| <= rel_cutoff * max|lambda| are treated as zero.
inline Matrix symmetric_pseudoinverse(const Matrix& m, double rel_cutoff) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const Vector& lambda = eig.eigenvalues();
    const double cutoff = rel_cutoff * lambda.cwiseAbs().maxCoeff();
    Vector inv = Vector::Zero(lambda.size());
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        if (std::abs(lambda(i)) > cutoff) inv(i) = 1.0 / lambda(i);
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// Orthogonal projector onto the span of eigenvectors kept by the cutoff.
inline Matrix row_space_projector(const Matrix& m, double rel_cutoff) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const Vector& lambda = eig.eigenvalues();
    const double cutoff = rel_cutoff * lambda.cwiseAbs().maxCoeff();
    Matrix p = Matrix::Zero(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        if (std::abs(lambda(i)) > cutoff) p += eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose();
    return p;
}

struct NaturalGradientSolution {
    Vector omega_star;
    Matrix fisher;
    Vector pg;
    Vector h_vec;
    double residual_loss = 0.0;
};

/// All exact quantities at one parameter value, computed together.
struct OracleEvaluation {
    Matrix pi;
    ExactQuantities values;
    Matrix scores;  // (S*A) x d
    NaturalGradientSolution ng;
};

namespace detail {

inline Matrix all_scores(const PolicyParams& params) {
    const auto& fam = *params.family;
    Matrix out(static_cast<Eigen::Index>(fam.n_states()) * fam.n_actions(), fam.dim());
    for (State s = 0; s < fam.n_states(); ++s)
        for (Action a = 0; a < fam.n_actions(); ++a) out.row(s * fam.n_actions() + a) = score(params, s, a).transpose();
    return out;
}

inline void check_compatible(const TabularMdp& mdp, const PolicyParams& params) {
    if (params.family->n_states() != mdp.n_states() || params.family->n_actions() != mdp.n_actions())
        throw std::invalid_argument("policy family does not match MDP dimensions");
}

inline Matrix fisher_from(const Matrix& nu, const Matrix& scores) {
    const Eigen::Index A = nu.cols();
    Matrix F = Matrix::Zero(scores.cols(), scores.cols());
    for (Eigen::Index s = 0; s < nu.rows(); ++s)
        for (Eigen::Index a = 0; a < A; ++a) {
            const double w = nu(s, a);
            if (w == 0.0) continue;
            F.selfadjointView<Eigen::Lower>().rankUpdate(scores.row(s * A + a).transpose(), w);
        }
    return F.selfadjointView<Eigen::Lower>();
}

inline Vector h_from(const Matrix& nu, const Matrix& adv, const Matrix& scores) {
    const Eigen::Index A = nu.cols();
    Vector h = Vector::Zero(scores.cols());
    for (Eigen::Index s = 0; s < nu.rows(); ++s)
        for (Eigen::Index a = 0; a < A; ++a) h += nu(s, a) * adv(s, a) * scores.row(s * A + a).transpose();
    return h;
}

inline double loss_from(const Matrix& weight_nu, const Matrix& adv, const Matrix& scores, const Vector& omega,
                        double gamma) {
    const Eigen::Index A = weight_nu.cols();
    double loss = 0.0;
    for (Eigen::Index s = 0; s < weight_nu.rows(); ++s)
        for (Eigen::Index a = 0; a < A; ++a) {
            const double e = adv(s, a) / (1.0 - gamma) - scores.row(s * A + a).dot(omega);
            loss += weight_nu(s, a) * e * e;
        }
    return 0.5 * loss;
}

}  // namespace detail

inline OracleEvaluation evaluate_exact(const TabularMdp& mdp, const PolicyParams& params, double pinv_cutoff = 1e-10) {
    detail::check_compatible(mdp, params);
    OracleEvaluation out;
    out.pi = policy_table(params);
    out.values = exact_values(mdp, out.pi);
    out.scores = detail::all_scores(params);
    auto& ng = out.ng;
    ng.fisher = detail::fisher_from(out.values.nu_occ, out.scores);
    ng.h_vec = detail::h_from(out.values.nu_occ, out.values.adv, out.scores);
    ng.pg = ng.h_vec / (1.0 - mdp.gamma());
    if (ng.pg.isZero(0.0))
        ng.omega_star = Vector::Zero(ng.pg.size());
    else
        ng.omega_star = symmetric_pseudoinverse(ng.fisher, pinv_cutoff) * ng.pg;
    ng.residual_loss = detail::loss_from(out.values.nu_occ, out.values.adv, out.scores, ng.omega_star, mdp.gamma());
    return out;
}

struct PolicyGradient {
    Vector pg;     // grad J
    Vector h_vec;  // (1 - gamma) grad J
};

inline PolicyGradient exact_policy_gradient(const TabularMdp& mdp, const PolicyParams& params) {
    detail::check_compatible(mdp, params);
    const Matrix pi = policy_table(params);
    const auto values = exact_values(mdp, pi);
    PolicyGradient out;
    out.h_vec = detail::h_from(values.nu_occ, values.adv, detail::all_scores(params));
    out.pg = out.h_vec / (1.0 - mdp.gamma());
    return out;
}

inline Matrix exact_fisher(const TabularMdp& mdp, const PolicyParams& params) {
    detail::check_compatible(mdp, params);
    const auto values = exact_values(mdp, policy_table(params));
    return detail::fisher_from(values.nu_occ, detail::all_scores(params));
}

inline NaturalGradientSolution exact_natural_gradient(const TabularMdp& mdp, const PolicyParams& params,
                                                      double pinv_cutoff = 1e-10) {
    return evaluate_exact(mdp, params, pinv_cutoff).ng;
}

/// (1/2) sum_{s,a} nu^{weighting}(s,a) [A^{pi_theta}(s,a)/(1-gamma) - omega^T score(s,a)]^2.
inline double compatible_loss(const TabularMdp& mdp, const PolicyParams& params, const Vector& omega,
                              const Matrix& weighting_policy) {
    detail::check_compatible(mdp, params);
    if (omega.size() != params.dim()) throw std::invalid_argument("omega has wrong dimension");
    const auto own = exact_values(mdp, policy_table(params));
    const auto weight = exact_values(mdp, weighting_policy);
    return detail::loss_from(weight.nu_occ, own.adv, detail::all_scores(params), omega, mdp.gamma());
}

/// F omega - H / (1 - gamma).
inline Vector compatible_loss_gradient(const TabularMdp& mdp, const PolicyParams& params, const Vector& omega) {
    if (omega.size() != params.dim()) throw std::invalid_argument("omega has wrong dimension");
    const auto ev = evaluate_exact(mdp, params);
    return ev.ng.fisher * omega - ev.ng.pg;
}

struct OptimalPolicy {
    std::vector<Action> actions;
    Matrix table;  // deterministic, S x A
    Vector v;
    double j_star = 0.0;
    double bellman_residual = 0.0;
    int iterations = 0;
};

/// Howard policy iteration from the all-zeros action choice. A state only
/// switches action on a strict improvement beyond 1e-12, so the loop
/// terminates.
inline OptimalPolicy exact_optimal_policy(const TabularMdp& mdp) {
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    OptimalPolicy out;
    out.actions.assign(S, 0);
    auto table_of = [&](const std::vector<Action>& acts) {
        Matrix t = Matrix::Zero(S, A);
        for (State s = 0; s < S; ++s) t(s, acts[s]) = 1.0;
        return t;
    };
    ExactQuantities values;
    const int max_iterations = 10000;
    for (;;) {
        ++out.iterations;
        values = exact_values(mdp, table_of(out.actions));
        bool changed = false;
        for (State s = 0; s < S; ++s) {
            Eigen::Index best = out.actions[s];
            double best_q = values.q(s, best);
            for (Action a = 0; a < A; ++a)
                if (values.q(s, a) > best_q + 1e-12) {
                    best_q = values.q(s, a);
                    best = a;
                }
            if (best != out.actions[s]) {
                out.actions[s] = static_cast<Action>(best);
                changed = true;
            }
        }
        if (!changed || out.iterations >= max_iterations) break;
    }
    out.table = table_of(out.actions);
    out.v = values.v;
    out.j_star = values.j;
    out.bellman_residual = (values.v - values.q.rowwise().maxCoeff()).cwiseAbs().maxCoeff();
    return out;
}

struct PerformanceDifference {
    double lhs = 0.0;  // J(pi1) - J(pi2)
    double rhs = 0.0;  // (1/(1-gamma)) E_{nu^{pi1}} A^{pi2}
};

inline PerformanceDifference performance_difference(const TabularMdp& mdp, const Matrix& pi1, const Matrix& pi2) {
    const auto v1 = exact_values(mdp, pi1);
    const auto v2 = exact_values(mdp, pi2);
    PerformanceDifference out;
    out.lhs = v1.j - v2.j;
    out.rhs = (v1.nu_occ.cwiseProduct(v2.adv)).sum() / (1.0 - mdp.gamma());
    return out;
}

/// E_{s ~ d}[KL(p(.|s) || q(.|s))] with 0 log 0 = 0.
inline double expected_kl(const Vector& d, const Matrix& p, const Matrix& q) {
    double total = 0.0;
    for (Eigen::Index s = 0; s < p.rows(); ++s) {
        double kl = 0.0;
        for (Eigen::Index a = 0; a < p.cols(); ++a)
            if (p(s, a) > 0.0) kl += p(s, a) * std::log(p(s, a) / q(s, a));
        total += d(s) * kl;
    }
    return total;
}

}  // namespace anpg
