#pragma once

// Outer loop: theta_{k+1} = theta_k + eta omega_k, with omega_k from the
// configured inner solver, plus exact per-iteration diagnostics. The
// diagnostics read the oracle; the learner only ever sees samples.

#include "anpg/asgd.hpp"
#include "anpg/constants.hpp"
#include "anpg/oracle.hpp"
#include "anpg/sampler.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace anpg {

enum class InnerSolver { asgd, sgd, exact };

inline std::string to_string(InnerSolver s) {
    switch (s) {
        case InnerSolver::asgd: return "asgd";
        case InnerSolver::sgd: return "sgd";
        case InnerSolver::exact: return "exact-oracle";
    }
    return "?";
}

inline InnerSolver parse_inner_solver(const std::string& name) {
    if (name == "asgd") return InnerSolver::asgd;
    if (name == "sgd") return InnerSolver::sgd;
    if (name == "exact-oracle" || name == "exact") return InnerSolver::exact;
    throw ConfigError("key 'inner_solver': unknown solver '" + name + "' (expected asgd, sgd or exact-oracle)");
}

struct AnpgConfig {
    int K = 100;
    int H = 64;
    std::optional<double> eta;  // empty: mu_F^2 / (4 G^2 L)
    std::optional<AsgdRates> rates;  // empty: make_rates(constants)
    InnerSolver inner_solver = InnerSolver::asgd;
    std::optional<double> sgd_step;  // empty: 1 / G^2
    std::uint64_t seed = 0;
    std::optional<Vector> theta0;  // empty: zeros (uniform policy)
    double pinv_cutoff = 1e-10;
    double mu_floor = 1e-4;
    std::optional<SmoothnessConstants> constants;  // empty: measured around theta0
    int constants_grid_points = 8;
    double constants_grid_radius = 0.5;
    std::uint64_t constants_seed = 0x5eed;
    int constants_refresh = 0;  // 0: never
    bool probe_bias = true;     // deterministic-recursion proxy for E[omega_k | theta_k]
    double max_theta_norm = 1e6;
    int min_inner_H = 64;
    SamplerOptions sampler;

    void validate() const {
        if (K < 0) throw ConfigError("key 'K': must be >= 0");
        if (H < 2) throw ConfigError("key 'H': must be >= 2");
        if (H % 2 != 0) throw ConfigError("key 'H': H must be even");
        if (eta && !(*eta > 0.0)) throw ConfigError("key 'eta': must be > 0");
        if (sgd_step && !(*sgd_step > 0.0)) throw ConfigError("key 'sgd_step': must be > 0");
        if (!(pinv_cutoff > 0.0)) throw ConfigError("key 'pinv_cutoff': must be > 0");
        if (!(mu_floor >= 0.0)) throw ConfigError("key 'mu_floor': must be >= 0");
    }
};

struct IterationRecord {
    int k = 0;
    double J = 0.0;
    double gap = 0.0;
    double omega_norm = 0.0;  // zero in the final record (no inner loop runs at theta_K)
    double omega_err = 0.0;   // ||omega_k - omega*_k||
    double eps_bias_probe = 0.0;  // L_{nu*}(omega*_k, theta_k)
    double kl_to_opt = 0.0;   // E_{s~d*} KL(pi* || pi_k)
    long samples_cum = 0;     // environment steps consumed before theta_{k+1}
    double bias_err = 0.0;    // ||E[omega_k | theta_k] - omega*_k|| via the noiseless recursion
    double grad_norm_sq = 0.0;
    double mu_F = 0.0;        // realized restricted Fisher floor at theta_k
    double wall_seconds = 0.0;
    bool has_omega = false;
};

struct RunHistory {
    std::vector<IterationRecord> records;  // k = 0..K
    SmoothnessConstants constants;
    AsgdRates rates;
    double eta = 0.0;
    double sgd_step = 0.0;
    double j_star = 0.0;
    double kl0 = 0.0;
    std::uint64_t seed = 0;
    int K = 0;
    int H = 0;
    InnerSolver inner_solver = InnerSolver::asgd;
    long grad_calls = 0;
    Vector theta_final;
    std::vector<std::string> warnings;

    /// (1/K) sum_{k<K} (J* - J(theta_k)).
    double averaged_gap() const {
        if (K == 0) return records.front().gap;
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += records[k].gap;
        return s / K;
    }

    long total_samples() const { return records.empty() ? 0 : records.back().samples_cum; }
};

/// theta + eta omega; throws NumericalError on a non-finite result.
inline Vector outer_step(const Vector& theta, const Vector& omega, double eta, int k = -1) {
    if (theta.size() != omega.size()) throw std::invalid_argument("outer_step: dimension mismatch");
    Vector next = theta + eta * omega;
    if (!next.allFinite())
        throw NumericalError("non-finite policy parameter after outer iteration " + std::to_string(k));
    return next;
}

namespace detail {
inline SmoothnessConstants measure_around(const TabularMdp& mdp, const PolicyParams& center, const AnpgConfig& cfg) {
    ConstantsOptions opt;
    opt.mu_floor = cfg.mu_floor;
    opt.seed = cfg.constants_seed;
    return measure_constants(
        parameter_grid(center, cfg.constants_grid_points, cfg.constants_grid_radius, cfg.constants_seed ^ 0x9d1f),
        mdp, opt);
}
}  // namespace detail

inline RunHistory run_anpg(const TabularMdp& mdp, std::shared_ptr<const PolicyFamily> family, const AnpgConfig& cfg) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    RunHistory hist;
    hist.seed = cfg.seed;
    hist.K = cfg.K;
    hist.H = cfg.H;
    hist.inner_solver = cfg.inner_solver;
    if (cfg.H < cfg.min_inner_H)
        hist.warnings.push_back("H = " + std::to_string(cfg.H) + " is below min_inner_H = " +
                                std::to_string(cfg.min_inner_H) + "; inner-loop error bounds may not apply");

    PolicyParams params = cfg.theta0 ? PolicyParams(family, *cfg.theta0) : PolicyParams::zeros(family);

    auto set_constants = [&](const SmoothnessConstants& c) {
        hist.constants = c;
        hist.rates = cfg.rates ? *cfg.rates : make_rates(c);
        hist.eta = cfg.eta ? *cfg.eta : c.default_eta();
        hist.sgd_step = cfg.sgd_step ? *cfg.sgd_step : 1.0 / (c.G * c.G);
    };
    set_constants(cfg.constants ? *cfg.constants : detail::measure_around(mdp, params, cfg));

    const OptimalPolicy opt = exact_optimal_policy(mdp);
    const ExactQuantities opt_values = exact_values(mdp, opt.table);
    hist.j_star = opt.j_star;

    RngStream run_rng(cfg.seed);
    const bool stochastic = cfg.inner_solver != InnerSolver::exact;
    long samples = 0;

    for (int k = 0; k <= cfg.K; ++k) {
        const OracleEvaluation ev = evaluate_exact(mdp, params, cfg.pinv_cutoff);
        IterationRecord rec;
        rec.k = k;
        rec.J = ev.values.j;
        rec.gap = hist.j_star - rec.J;
        rec.kl_to_opt = expected_kl(opt_values.d_occ, opt.table, ev.pi);
        rec.eps_bias_probe =
            detail::loss_from(opt_values.nu_occ, ev.values.adv, ev.scores, ev.ng.omega_star, mdp.gamma());
        rec.grad_norm_sq = ev.ng.pg.squaredNorm();
        rec.mu_F = restricted_fisher_min_eigenvalue(ev.ng.fisher, *family);
        if (k == 0) hist.kl0 = rec.kl_to_opt;

        if (k < cfg.K) {
            if (stochastic && !(rec.mu_F > cfg.mu_floor))
                throw DegenerateFisherError("Fisher floor collapsed at outer iteration " + std::to_string(k) +
                                                ": mu_F = " + format_double(rec.mu_F) +
                                                " <= mu_floor = " + format_double(cfg.mu_floor),
                                            rec.mu_F);
            if (cfg.constants_refresh > 0 && k > 0 && k % cfg.constants_refresh == 0 && !cfg.constants)
                set_constants(detail::measure_around(mdp, params, cfg));

            Vector omega;
            AsgdRates bias_rates = hist.rates;
            RngStream inner_rng = run_rng.substream(static_cast<std::uint64_t>(k));
            switch (cfg.inner_solver) {
                case InnerSolver::exact:
                    omega = ev.ng.omega_star;
                    break;
                case InnerSolver::asgd: {
                    auto r = run_inner_loop(mdp, params, cfg.H, hist.rates, GradientMode::stochastic, inner_rng,
                                            cfg.sampler);
                    omega = std::move(r.omega);
                    samples += r.samples_used;
                    hist.grad_calls += r.grad_calls;
                    break;
                }
                case InnerSolver::sgd: {
                    auto r = sgd_inner_loop(mdp, params, cfg.H, hist.sgd_step, inner_rng, cfg.sampler);
                    omega = std::move(r.omega);
                    samples += r.samples_used;
                    hist.grad_calls += r.grad_calls;
                    bias_rates = AsgdRates::gradient_descent(hist.sgd_step);
                    break;
                }
            }
            rec.has_omega = true;
            rec.omega_norm = omega.norm();
            rec.omega_err = (omega - ev.ng.omega_star).norm();
            if (stochastic && cfg.probe_bias) rec.bias_err = deterministic_bias(ev, cfg.H, bias_rates, cfg.pinv_cutoff);
            rec.samples_cum = samples;

            params = params.with_theta(outer_step(params.theta, omega, hist.eta, k));
            if (params.theta.norm() > cfg.max_theta_norm)
                throw NumericalError("policy parameter norm " + format_double(params.theta.norm()) +
                                     " exceeds divergence guard at outer iteration " + std::to_string(k));
        } else {
            rec.samples_cum = samples;
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        hist.records.push_back(rec);
    }
    hist.theta_final = params.theta;
    return hist;
}

/// Terms of the averaged-optimality-gap bound, seed-averaged.
struct CorollaryAudit {
    double lhs = 0.0;            // J* - mean_k J(theta_k)
    double eps_bias = 0.0;       // max_k transferred loss
    double term_bias = 0.0;      // sqrt(eps_bias)
    double term_first = 0.0;     // (G/K) sum ||E[omega_k|theta_k] - omega*_k||
    double term_second = 0.0;    // (B/4L)(mu^2/G^2 + G^2) mean ||omega_k - omega*_k||^2
    double term_outer = 0.0;     // (G^2/(mu^2 K)) (B/(1-gamma) + 4 L KL_0)
    double rhs = 0.0;
    bool pass = false;
    double lemma4_lhs = 0.0;     // mean ||grad J(theta_k)||^2
    double lemma4_rhs = 0.0;
    bool lemma4_pass = false;
    int single_seed_violations = 0;  // flagged, not failed
    int n_runs = 0;
};

inline CorollaryAudit corollary_bound_audit(const std::vector<RunHistory>& runs, const SmoothnessConstants& c) {
    if (runs.empty()) throw std::invalid_argument("corollary audit needs at least one run");
    CorollaryAudit out;
    out.n_runs = static_cast<int>(runs.size());
    const double G = c.G, B = c.B, L = c.L, mu = c.mu_F, gamma = c.gamma;
    for (const auto& h : runs) {
        if (h.K < 1) throw std::invalid_argument("corollary audit needs K >= 1");
        const double K = h.K;
        double eps = 0.0, first = 0.0, second = 0.0, grad = 0.0;
        for (int k = 0; k < h.K; ++k) {
            const auto& r = h.records[k];
            eps = std::max(eps, r.eps_bias_probe);
            first += r.bias_err;
            second += r.omega_err * r.omega_err;
            grad += r.grad_norm_sq;
        }
        const double lhs = h.averaged_gap();
        const double t_bias = std::sqrt(std::max(eps, 0.0));
        const double t_first = G / K * first;
        const double t_second = B / (4.0 * L) * (mu * mu / (G * G) + G * G) * (second / K);
        const double t_outer = G * G / (mu * mu * K) * (B / (1.0 - gamma) + 4.0 * L * h.kl0);
        const double l4_rhs = 8.0 * std::pow(G, 4) * L / (mu * mu * (1.0 - gamma) * K) +
                              (2.0 * std::pow(G, 4) + mu * mu) * (second / K);
        if (lhs > t_bias + t_first + t_second + t_outer) ++out.single_seed_violations;
        out.lhs += lhs;
        out.eps_bias = std::max(out.eps_bias, eps);
        out.term_bias += t_bias;
        out.term_first += t_first;
        out.term_second += t_second;
        out.term_outer += t_outer;
        out.lemma4_lhs += grad / K;
        out.lemma4_rhs += l4_rhs;
    }
    const double n = static_cast<double>(runs.size());
    out.lhs /= n;
    out.term_bias /= n;
    out.term_first /= n;
    out.term_second /= n;
    out.term_outer /= n;
    out.lemma4_lhs /= n;
    out.lemma4_rhs /= n;
    out.rhs = out.term_bias + out.term_first + out.term_second + out.term_outer;
    out.pass = out.lhs <= out.rhs;
    out.lemma4_pass = out.lemma4_lhs <= out.lemma4_rhs;
    return out;
}

}  // namespace anpg
