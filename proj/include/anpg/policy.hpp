#pragma once

#include "anpg/mdp.hpp"
#include "anpg/rng.hpp"
#include "anpg/text_format.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace anpg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class FamilyKind { tabular_softmax, feature_softmax };

inline std::string to_string(FamilyKind k) { return k == FamilyKind::tabular_softmax ? "tabular" : "features"; }

/// Softmax parameterization over a finite action set.
///
/// Tabular: theta has one logit per (s, a), index s * n_actions + a.
/// Feature: logit(s, a) = phi(s, a)^T theta, with phi stored as rows
/// s * n_actions + a of an (S*A) x d table.
class PolicyFamily {
public:
    static PolicyFamily tabular(int n_states, int n_actions) {
        if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("tabular family needs S, A > 0");
        PolicyFamily f;
        f.kind_ = FamilyKind::tabular_softmax;
        f.n_states_ = n_states;
        f.n_actions_ = n_actions;
        f.dim_ = n_states * n_actions;
        return f;
    }

    static PolicyFamily features(int n_states, int n_actions, Matrix phi) {
        if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("feature family needs S, A > 0");
        if (phi.rows() != static_cast<Eigen::Index>(n_states) * n_actions || phi.cols() == 0)
            throw std::invalid_argument("feature table must be (S*A) x d with d > 0");
        if (!phi.allFinite()) throw std::invalid_argument("feature table has non-finite entries");
        PolicyFamily f;
        f.kind_ = FamilyKind::feature_softmax;
        f.n_states_ = n_states;
        f.n_actions_ = n_actions;
        f.dim_ = static_cast<int>(phi.cols());
        f.phi_ = std::move(phi);
        return f;
    }

    FamilyKind kind() const { return kind_; }
    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    int dim() const { return dim_; }

    /// Empty for the tabular family.
    const Matrix& feature_table() const { return phi_; }

    Vector logits(const Vector& theta, State s) const {
        if (kind_ == FamilyKind::tabular_softmax) return theta.segment(static_cast<Eigen::Index>(s) * n_actions_, n_actions_);
        return phi_.middleRows(static_cast<Eigen::Index>(s) * n_actions_, n_actions_) * theta;
    }

    /// Orthonormal basis (columns) of the subspace where the Fisher matrix can
    /// be nondegenerate. For tabular softmax this removes the per-state
    /// constant-shift directions, which leave the policy unchanged.
    Matrix effective_basis() const {
        if (kind_ == FamilyKind::feature_softmax) return Matrix::Identity(dim_, dim_);
        const int A = n_actions_;
        Matrix basis = Matrix::Zero(dim_, static_cast<Eigen::Index>(n_states_) * (A - 1));
        // Helmert contrasts within each state block.
        for (int s = 0; s < n_states_; ++s)
            for (int k = 1; k < A; ++k) {
                const double norm = std::sqrt(static_cast<double>(k) * (k + 1));
                const Eigen::Index col = static_cast<Eigen::Index>(s) * (A - 1) + (k - 1);
                for (int j = 0; j < k; ++j) basis(s * A + j, col) = 1.0 / norm;
                basis(s * A + k, col) = -static_cast<double>(k) / norm;
            }
        return basis;
    }

private:
    FamilyKind kind_ = FamilyKind::tabular_softmax;
    int n_states_ = 0;
    int n_actions_ = 0;
    int dim_ = 0;
    Matrix phi_;
};

/// A parameter vector together with the (shared, immutable) family it indexes.
struct PolicyParams {
    std::shared_ptr<const PolicyFamily> family;
    Vector theta;

    PolicyParams() = default;
    PolicyParams(std::shared_ptr<const PolicyFamily> fam, Vector th) : family(std::move(fam)), theta(std::move(th)) {
        if (!family) throw std::invalid_argument("policy family is null");
        if (theta.size() != family->dim())
            throw std::invalid_argument("theta has dimension " + std::to_string(theta.size()) + ", family expects " +
                                        std::to_string(family->dim()));
        if (!theta.allFinite()) throw std::invalid_argument("theta has non-finite entries");
    }

    static PolicyParams zeros(std::shared_ptr<const PolicyFamily> fam) {
        const int d = fam->dim();
        return PolicyParams(std::move(fam), Vector::Zero(d));
    }

    int dim() const { return static_cast<int>(theta.size()); }
    PolicyParams with_theta(Vector th) const { return PolicyParams(family, std::move(th)); }
};

namespace detail {
inline Vector softmax(const Vector& logits) {
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    return p / p.sum();
}
}  // namespace detail

inline Vector action_distribution(const PolicyParams& params, State s) {
    const auto& fam = *params.family;
    if (s < 0 || s >= fam.n_states()) throw std::out_of_range("state " + std::to_string(s) + " out of range");
    return detail::softmax(fam.logits(params.theta, s));
}

/// grad_theta log pi_theta(a | s).
inline Vector score(const PolicyParams& params, State s, Action a) {
    const auto& fam = *params.family;
    if (a < 0 || a >= fam.n_actions()) throw std::out_of_range("action " + std::to_string(a) + " out of range");
    const Vector pi = action_distribution(params, s);
    if (fam.kind() == FamilyKind::tabular_softmax) {
        Vector g = Vector::Zero(fam.dim());
        g.segment(static_cast<Eigen::Index>(s) * fam.n_actions(), fam.n_actions()) = -pi;
        g(s * fam.n_actions() + a) += 1.0;
        return g;
    }
    const auto block = fam.feature_table().middleRows(static_cast<Eigen::Index>(s) * fam.n_actions(), fam.n_actions());
    return block.row(a).transpose() - block.transpose() * pi;
}

/// S x A table of pi_theta(a | s).
inline Matrix policy_table(const PolicyParams& params) {
    const auto& fam = *params.family;
    Matrix table(fam.n_states(), fam.n_actions());
    for (State s = 0; s < fam.n_states(); ++s) table.row(s) = action_distribution(params, s).transpose();
    return table;
}

/// Everything the sampler needs about a fixed pi_theta: action
/// probabilities, their cumulative rows, and all scores. Built once per
/// outer iteration.
struct PolicySnapshot {
    Matrix probs;   // S x A
    Matrix cdf;     // S x A, cumulative along actions
    Matrix scores;  // (S*A) x d, row s*A + a

    explicit PolicySnapshot(const PolicyParams& params) {
        const auto& fam = *params.family;
        probs = policy_table(params);
        cdf = probs;
        for (Eigen::Index s = 0; s < cdf.rows(); ++s)
            for (Eigen::Index a = 1; a < cdf.cols(); ++a) cdf(s, a) += cdf(s, a - 1);
        scores.resize(static_cast<Eigen::Index>(fam.n_states()) * fam.n_actions(), fam.dim());
        for (State s = 0; s < fam.n_states(); ++s)
            for (Action a = 0; a < fam.n_actions(); ++a) scores.row(s * fam.n_actions() + a) = score(params, s, a).transpose();
    }

    int n_actions() const { return static_cast<int>(probs.cols()); }
    int dim() const { return static_cast<int>(scores.cols()); }

    Action sample_action(State s, RngStream& rng) const {
        const double u = rng.uniform();
        const int A = n_actions();
        for (int a = 0; a < A - 1; ++a)
            if (u < cdf(s, a)) return a;
        // Rounding tail: last action with positive mass.
        int a = A - 1;
        while (a > 0 && probs(s, a) == 0.0) --a;
        return a;
    }

    auto score_row(State s, Action a) const { return scores.row(static_cast<Eigen::Index>(s) * n_actions() + a); }
};

// ---------------------------------------------------------------------------
// Feature tables

inline Matrix make_random_features(int n_states, int n_actions, int dim, std::uint64_t seed, double scale = 1.0) {
    RngStream rng(seed);
    Matrix phi(static_cast<Eigen::Index>(n_states) * n_actions, dim);
    for (Eigen::Index i = 0; i < phi.size(); ++i) {
        // Box-Muller
        const double u1 = rng.uniform_open_zero();
        const double u2 = rng.uniform();
        phi(i / dim, i % dim) = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    return phi;
}

inline PolicyFamily features_from_document(const TextDocument& doc) {
    const auto S = doc.get_int("n_states");
    const auto A = doc.get_int("n_actions");
    const auto d = doc.get_int("dim");
    if (S <= 0 || A <= 0 || d <= 0) throw ConfigError("key 'dim': n_states, n_actions and dim must be positive");
    auto values = doc.get_doubles("features");
    if (values.size() != static_cast<std::size_t>(S * A * d))
        throw ConfigError("key 'features': expected " + std::to_string(S * A * d) + " entries, got " +
                          std::to_string(values.size()));
    Matrix phi(S * A, d);
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
        for (Eigen::Index c = 0; c < d; ++c) phi(r, c) = values[static_cast<std::size_t>(r * d + c)];
    return PolicyFamily::features(static_cast<int>(S), static_cast<int>(A), std::move(phi));
}

inline TextDocument features_to_document(const PolicyFamily& fam) {
    if (fam.kind() != FamilyKind::feature_softmax) throw std::invalid_argument("only feature families serialize");
    TextDocument doc;
    doc.set("n_states", fam.n_states());
    doc.set("n_actions", fam.n_actions());
    doc.set("dim", fam.dim());
    std::vector<double> values;
    const Matrix& phi = fam.feature_table();
    for (Eigen::Index r = 0; r < phi.rows(); ++r)
        for (Eigen::Index c = 0; c < phi.cols(); ++c) values.push_back(phi(r, c));
    doc.set_list("features", values, static_cast<std::size_t>(fam.dim()));
    return doc;
}

inline PolicyFamily load_features(const std::string& path) { return features_from_document(TextDocument::load(path)); }

}  // namespace anpg
