#pragma once

// Experiment specs, sweeps, audit suites and file output behind the CLI.
// Everything here is deterministic given the spec: worker count changes
// wall-clock only, never the bytes of a CSV or report.

#include "anpg/driver.hpp"
#include "anpg/stats.hpp"
#include "anpg/text_format.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

namespace anpg {

inline constexpr const char* kVersion = "0.1.0";

struct AuditThresholds {
    double tv = 0.02;
    double ci_sigma = 4.0;
    double moment_sigma = 3.0;
    double slope_lo = -1.35;
    double slope_hi = -0.65;
    double r2 = 0.95;
    double identity_tol = 1e-10;
    double fd_rel_tol = 1e-5;
    double eps_bias_tol = 1e-8;
    double steps_rel_tol = 0.10;
};

struct ExperimentSpec {
    std::string name = "experiment";
    std::string mdp_generator = "random(3,2,1,2)";
    std::string mdp_file;  // resolved against the spec's directory
    std::optional<double> gamma;
    std::string family = "tabular";
    std::string features_file;
    int feature_dim = 2;
    std::uint64_t feature_seed = 1;
    double feature_scale = 1.0;

    AnpgConfig config;
    std::vector<int> sweep_H;
    std::vector<int> sweep_K;
    std::vector<double> sweep_gamma;
    std::vector<std::uint64_t> seeds{0};
    long sweep_cap = 10000;
    int workers = 0;  // 0: hardware concurrency

    std::vector<std::string> audits;
    std::string output_dir = "anpg_out";
    AuditThresholds thresholds;

    std::uint64_t audit_seed = 2024;
    long n_samples = 100000;
    int selfcheck_instances = 50;
    int lemma1_instances = 10;
    double lemma1_gamma = 0.8;
    std::vector<double> moment_gammas{0.5, 0.8};
    int lemma5_instances = 5;
    std::vector<int> lemma6_H{64, 128, 256, 512, 1024, 2048, 4096};
    int lemma6_seeds = 100;
    std::vector<int> lemma7_H{16, 32, 64, 128, 256};
    std::vector<std::pair<int, int>> scaling_pairs{{50, 64}, {100, 128}, {200, 256}};

    double default_gamma() const { return gamma ? *gamma : 0.9; }
};

inline const std::vector<std::string>& audit_names() {
    static const std::vector<std::string> names{"oracle-selfcheck", "lemma1", "lemma5", "lemma6",
                                                "lemma7", "corollary1", "scaling", "asgd-vs-sgd"};
    return names;
}

inline bool is_audit_name(const std::string& n) {
    const auto& all = audit_names();
    return std::find(all.begin(), all.end(), n) != all.end();
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline int checked_int(const std::string& key, std::int64_t v, std::int64_t lo) {
    if (v < lo || v > std::numeric_limits<int>::max())
        throw ConfigError("key '" + key + "': must be >= " + std::to_string(lo));
    return static_cast<int>(v);
}

inline std::vector<int> int_list(const TextDocument& doc, const std::string& key) {
    std::vector<int> out;
    for (auto v : doc.get_ints(key)) out.push_back(checked_int(key, v, 0));
    return out;
}

inline void require_even(const std::string& key, int H) {
    if (H < 2) throw ConfigError("key '" + key + "': H must be >= 2");
    if (H % 2 != 0) throw ConfigError("key '" + key + "': H must be even (got " + std::to_string(H) + ")");
}

}  // namespace detail

inline ExperimentSpec spec_from_document(const TextDocument& doc, const std::filesystem::path& base_dir = {}) {
    static const std::set<std::string> known{
        "name", "mdp", "mdp_file", "gamma", "family", "features_file", "feature_dim", "feature_seed",
        "feature_scale", "K", "H", "eta", "inner_solver", "sgd_step", "seeds", "sweep_H", "sweep_K",
        "sweep_gamma", "sweep_cap", "workers", "audits", "output_dir", "pinv_cutoff", "mu_floor",
        "min_inner_H", "constants_grid_points", "constants_grid_radius", "constants_seed", "constants_refresh",
        "probe_bias", "max_theta_norm", "max_horizon", "threshold_tv", "threshold_ci_sigma",
        "threshold_moment_sigma", "threshold_slope", "threshold_r2", "threshold_identity",
        "threshold_fd_rel", "threshold_eps_bias", "threshold_steps_rel", "audit_seed", "n_samples",
        "selfcheck_instances", "lemma1_instances", "lemma1_gamma", "moment_gammas", "lemma5_instances",
        "lemma6_H", "lemma6_seeds", "lemma7_H", "scaling_pairs"};
    for (const auto& k : doc.keys())
        if (!known.count(k)) throw ConfigError("unknown key '" + k + "'");

    ExperimentSpec spec;
    spec.name = doc.get_string("name", spec.name);
    if (spec.name.empty() || spec.name.find_first_of("/\\") != std::string::npos)
        throw ConfigError("key 'name': must be a non-empty file-name-safe string");
    if (doc.has("mdp") && doc.has("mdp_file")) throw ConfigError("key 'mdp_file': conflicts with key 'mdp'");
    spec.mdp_generator = doc.get_string("mdp", spec.mdp_generator);
    if (doc.has("mdp_file")) spec.mdp_file = (base_dir / doc.get_string("mdp_file")).string();
    if (doc.has("gamma")) spec.gamma = doc.get_double("gamma");

    spec.family = doc.get_string("family", spec.family);
    if (spec.family != "tabular" && spec.family != "features")
        throw ConfigError("key 'family': expected tabular or features, got '" + spec.family + "'");
    if (doc.has("features_file")) spec.features_file = (base_dir / doc.get_string("features_file")).string();
    spec.feature_dim = detail::checked_int("feature_dim", doc.get_int("feature_dim", spec.feature_dim), 1);
    spec.feature_seed = static_cast<std::uint64_t>(doc.get_int("feature_seed", 1));
    spec.feature_scale = doc.get_double("feature_scale", spec.feature_scale);

    AnpgConfig& cfg = spec.config;
    cfg.K = detail::checked_int("K", doc.get_int("K", 100), 1);
    cfg.H = detail::checked_int("H", doc.get_int("H", 64), 0);
    detail::require_even("H", cfg.H);
    if (doc.has("eta") && doc.get_string("eta") != "auto") cfg.eta = doc.get_double("eta");
    cfg.inner_solver = parse_inner_solver(doc.get_string("inner_solver", "asgd"));
    if (doc.has("sgd_step") && doc.get_string("sgd_step") != "auto") cfg.sgd_step = doc.get_double("sgd_step");
    cfg.pinv_cutoff = doc.get_double("pinv_cutoff", cfg.pinv_cutoff);
    cfg.mu_floor = doc.get_double("mu_floor", cfg.mu_floor);
    cfg.min_inner_H = detail::checked_int("min_inner_H", doc.get_int("min_inner_H", cfg.min_inner_H), 0);
    cfg.constants_grid_points =
        detail::checked_int("constants_grid_points", doc.get_int("constants_grid_points", cfg.constants_grid_points), 0);
    cfg.constants_grid_radius = doc.get_double("constants_grid_radius", cfg.constants_grid_radius);
    cfg.constants_seed = static_cast<std::uint64_t>(doc.get_int("constants_seed", static_cast<std::int64_t>(cfg.constants_seed)));
    cfg.constants_refresh = detail::checked_int("constants_refresh", doc.get_int("constants_refresh", 0), 0);
    if (doc.has("probe_bias")) cfg.probe_bias = detail::parse_bool("probe_bias", doc.get_string("probe_bias"));
    cfg.max_theta_norm = doc.get_double("max_theta_norm", cfg.max_theta_norm);
    if (doc.has("max_horizon")) cfg.sampler.max_horizon = detail::checked_int("max_horizon", doc.get_int("max_horizon"), 0);
    cfg.validate();

    if (doc.has("seeds")) {
        spec.seeds.clear();
        for (auto s : doc.get_ints("seeds")) {
            if (s < 0) throw ConfigError("key 'seeds': seeds must be nonnegative");
            spec.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        if (spec.seeds.empty()) throw ConfigError("key 'seeds': empty list");
    }
    if (doc.has("sweep_H")) {
        spec.sweep_H = detail::int_list(doc, "sweep_H");
        for (int H : spec.sweep_H) detail::require_even("sweep_H", H);
    }
    if (doc.has("sweep_K")) {
        spec.sweep_K = detail::int_list(doc, "sweep_K");
        for (int K : spec.sweep_K)
            if (K < 1) throw ConfigError("key 'sweep_K': K must be >= 1");
    }
    if (doc.has("sweep_gamma")) spec.sweep_gamma = doc.get_doubles("sweep_gamma");
    for (double g : spec.sweep_gamma)
        if (!(g > 0.0 && g < 1.0)) throw ConfigError("key 'sweep_gamma': values must lie in (0,1)");
    spec.sweep_cap = doc.get_int("sweep_cap", spec.sweep_cap);
    if (spec.sweep_cap < 1) throw ConfigError("key 'sweep_cap': must be >= 1");
    spec.workers = detail::checked_int("workers", doc.get_int("workers", 0), 0);

    if (doc.has("audits")) {
        for (const auto& a : doc.get_strings("audits")) {
            if (!is_audit_name(a)) throw ConfigError("key 'audits': unknown audit '" + a + "'");
            spec.audits.push_back(a);
        }
    }
    spec.output_dir = doc.get_string("output_dir", spec.output_dir);

    auto& th = spec.thresholds;
    th.tv = doc.get_double("threshold_tv", th.tv);
    th.ci_sigma = doc.get_double("threshold_ci_sigma", th.ci_sigma);
    th.moment_sigma = doc.get_double("threshold_moment_sigma", th.moment_sigma);
    if (doc.has("threshold_slope")) {
        auto w = doc.get_doubles("threshold_slope");
        if (w.size() != 2 || !(w[0] < w[1])) throw ConfigError("key 'threshold_slope': expected [lo hi] with lo < hi");
        th.slope_lo = w[0];
        th.slope_hi = w[1];
    }
    th.r2 = doc.get_double("threshold_r2", th.r2);
    th.identity_tol = doc.get_double("threshold_identity", th.identity_tol);
    th.fd_rel_tol = doc.get_double("threshold_fd_rel", th.fd_rel_tol);
    th.eps_bias_tol = doc.get_double("threshold_eps_bias", th.eps_bias_tol);
    th.steps_rel_tol = doc.get_double("threshold_steps_rel", th.steps_rel_tol);

    spec.audit_seed = static_cast<std::uint64_t>(doc.get_int("audit_seed", static_cast<std::int64_t>(spec.audit_seed)));
    spec.n_samples = doc.get_int("n_samples", spec.n_samples);
    if (spec.n_samples < 10000) throw ConfigError("key 'n_samples': must be >= 10000");
    spec.selfcheck_instances = detail::checked_int("selfcheck_instances", doc.get_int("selfcheck_instances", 50), 1);
    spec.lemma1_instances = detail::checked_int("lemma1_instances", doc.get_int("lemma1_instances", 10), 1);
    spec.lemma1_gamma = doc.get_double("lemma1_gamma", spec.lemma1_gamma);
    if (!(spec.lemma1_gamma > 0.0 && spec.lemma1_gamma < 1.0)) throw ConfigError("key 'lemma1_gamma': must lie in (0,1)");
    if (doc.has("moment_gammas")) spec.moment_gammas = doc.get_doubles("moment_gammas");
    for (double g : spec.moment_gammas)
        if (!(g > 0.0 && g < 1.0)) throw ConfigError("key 'moment_gammas': values must lie in (0,1)");
    spec.lemma5_instances = detail::checked_int("lemma5_instances", doc.get_int("lemma5_instances", 5), 1);
    if (doc.has("lemma6_H")) spec.lemma6_H = detail::int_list(doc, "lemma6_H");
    for (int H : spec.lemma6_H) detail::require_even("lemma6_H", H);
    if (spec.lemma6_H.size() < 2) throw ConfigError("key 'lemma6_H': needs at least two values");
    spec.lemma6_seeds = detail::checked_int("lemma6_seeds", doc.get_int("lemma6_seeds", 100), 2);
    if (doc.has("lemma7_H")) spec.lemma7_H = detail::int_list(doc, "lemma7_H");
    for (int H : spec.lemma7_H) detail::require_even("lemma7_H", H);
    if (spec.lemma7_H.size() < 3) throw ConfigError("key 'lemma7_H': needs at least three values");
    for (std::size_t i = 1; i < spec.lemma7_H.size(); ++i)
        if (spec.lemma7_H[i] <= spec.lemma7_H[i - 1]) throw ConfigError("key 'lemma7_H': must be increasing");
    if (doc.has("scaling_pairs")) {
        auto v = detail::int_list(doc, "scaling_pairs");
        if (v.size() < 4 || v.size() % 2 != 0)
            throw ConfigError("key 'scaling_pairs': expected a flat list of K H pairs, at least two pairs");
        spec.scaling_pairs.clear();
        for (std::size_t i = 0; i < v.size(); i += 2) {
            if (v[i] < 1) throw ConfigError("key 'scaling_pairs': K must be >= 1");
            detail::require_even("scaling_pairs", v[i + 1]);
            spec.scaling_pairs.emplace_back(v[i], v[i + 1]);
        }
    }

    const long points = static_cast<long>(std::max<std::size_t>(1, spec.sweep_H.size())) *
                        static_cast<long>(std::max<std::size_t>(1, spec.sweep_K.size())) *
                        static_cast<long>(std::max<std::size_t>(1, spec.sweep_gamma.size())) *
                        static_cast<long>(spec.seeds.size());
    if (points > spec.sweep_cap)
        throw ConfigError("key 'sweep_cap': sweep has " + std::to_string(points) + " points, cap is " +
                          std::to_string(spec.sweep_cap));
    return spec;
}

inline ExperimentSpec load_spec(const std::string& path) {
    const auto doc = TextDocument::load(path);
    return spec_from_document(doc, std::filesystem::path(path).parent_path());
}

struct Instance {
    TabularMdp mdp;
    std::shared_ptr<const PolicyFamily> family;
};

inline Instance make_instance(const ExperimentSpec& spec, std::optional<double> gamma_override = {}) {
    std::optional<double> gamma = gamma_override ? gamma_override : spec.gamma;
    TabularMdp mdp = spec.mdp_file.empty() ? make_from_generator(spec.mdp_generator, gamma.value_or(0.9))
                                           : load_mdp(spec.mdp_file);
    if (gamma && mdp.gamma() != *gamma) mdp = mdp.with_gamma(*gamma);
    std::shared_ptr<const PolicyFamily> fam;
    if (spec.family == "tabular") {
        fam = std::make_shared<const PolicyFamily>(PolicyFamily::tabular(mdp.n_states(), mdp.n_actions()));
    } else if (!spec.features_file.empty()) {
        fam = std::make_shared<const PolicyFamily>(load_features(spec.features_file));
        if (fam->n_states() != mdp.n_states() || fam->n_actions() != mdp.n_actions())
            throw ConfigError("key 'features_file': feature table shape does not match the MDP");
    } else {
        fam = std::make_shared<const PolicyFamily>(PolicyFamily::features(
            mdp.n_states(), mdp.n_actions(),
            make_random_features(mdp.n_states(), mdp.n_actions(), spec.feature_dim, spec.feature_seed,
                                 spec.feature_scale)));
    }
    return {std::move(mdp), std::move(fam)};
}

/// Runs f(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// exception after all workers have stopped.
template <class F>
void parallel_for(int n, int workers, F&& f) {
    if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    workers = std::min(workers, std::max(n, 1));
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- reports

struct AuditRow {
    std::string check;
    double measured = 0.0;
    double threshold = 0.0;
    bool pass = true;
};

struct AuditReport {
    std::string name;
    std::vector<AuditRow> rows;
    std::vector<std::pair<std::string, std::string>> extra_files;  // (suffix, contents)

    void add(std::string check, double measured, double threshold, bool pass) {
        rows.push_back({std::move(check), measured, threshold, pass});
    }
    bool passed() const {
        return std::all_of(rows.begin(), rows.end(), [](const AuditRow& r) { return r.pass; });
    }
    const AuditRow* first_failure() const {
        for (const auto& r : rows)
            if (!r.pass) return &r;
        return nullptr;
    }
    const AuditRow& row(const std::string& check) const {
        for (const auto& r : rows)
            if (r.check == check) return r;
        throw std::out_of_range("audit '" + name + "' has no check '" + check + "'");
    }
    std::string to_csv() const {
        std::string out = "check,measured,threshold,pass\n";
        for (const auto& r : rows)
            out += r.check + "," + format_double(r.measured) + "," + format_double(r.threshold) + "," +
                   (r.pass ? "true" : "false") + "\n";
        return out;
    }
};

namespace detail {

inline Vector random_normal(int d, double scale, RngStream& rng) {
    Vector v(d);
    for (int i = 0; i < d; ++i) {
        const double u1 = rng.uniform_open_zero();
        const double u2 = rng.uniform();
        v(i) = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    return v;
}

inline int uniform_int(RngStream& rng, int lo, int hi) {
    return lo + static_cast<int>(rng.uniform() * (hi - lo + 1));
}

/// Random (MDP, family, theta) for the Monte-Carlo audits. Even indices use
/// tabular softmax, odd ones random features.
struct RandomCase {
    TabularMdp mdp;
    PolicyParams params;
};

inline RandomCase random_case(RngStream rng, int max_states, int max_actions, double gamma, bool features,
                              double theta_scale) {
    const int S = uniform_int(rng, 2, max_states);
    const int A = uniform_int(rng, 2, max_actions);
    TabularMdp mdp = make_random_mdp(S, A, rng(), uniform_int(rng, 1, S), gamma);
    std::shared_ptr<const PolicyFamily> fam;
    if (features) {
        const int d = uniform_int(rng, 1, std::min(4, S * (A - 1)));  // generic full rank
        fam = std::make_shared<const PolicyFamily>(PolicyFamily::features(S, A, make_random_features(S, A, d, rng())));
    } else {
        fam = std::make_shared<const PolicyFamily>(PolicyFamily::tabular(S, A));
    }
    Vector theta = random_normal(static_cast<int>(fam->dim()), theta_scale, rng);
    return {std::move(mdp), PolicyParams(fam, std::move(theta))};
}

inline bool rank_deficient(const Matrix& fisher, double rel_cutoff) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(fisher, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    return ev.minCoeff() <= rel_cutoff * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
}

inline double exact_j(const TabularMdp& mdp, const PolicyParams& p) {
    return exact_values(mdp, policy_table(p)).j;
}

}  // namespace detail

// ---------------------------------------------------------------- audits

/// Bellman / occupancy / performance-difference identities and a
/// finite-difference check of the exact policy gradient.
inline AuditReport audit_oracle_selfcheck(const ExperimentSpec& spec) {
    const int n = spec.selfcheck_instances;
    struct Result {
        double v_err = 0, nu_err = 0, mass_err = 0, pd_err = 0, fd_rel = 0;
    };
    std::vector<Result> res(n);
    const RngStream root(spec.audit_seed);
    parallel_for(n, spec.workers, [&](int i) {
        RngStream rng = root.substream(static_cast<std::uint64_t>(i));
        const int S = detail::uniform_int(rng, 1, 10);
        const int A = detail::uniform_int(rng, 1, 4);
        const double gamma = 0.3 + 0.65 * rng.uniform();
        const TabularMdp mdp = make_random_mdp(S, A, rng(), detail::uniform_int(rng, 1, S), gamma);
        std::shared_ptr<const PolicyFamily> fam;
        if (i % 2 == 0)
            fam = std::make_shared<const PolicyFamily>(PolicyFamily::tabular(S, A));
        else
            fam = std::make_shared<const PolicyFamily>(
                PolicyFamily::features(S, A, make_random_features(S, A, detail::uniform_int(rng, 1, 4), rng())));
        const PolicyParams p(fam, detail::random_normal(static_cast<int>(fam->dim()), 1.0, rng));
        const PolicyParams p2(fam, detail::random_normal(static_cast<int>(fam->dim()), 1.0, rng));

        const Matrix pi = policy_table(p);
        const auto q = exact_values(mdp, pi);
        Result r;
        r.v_err = (q.v - (pi.cwiseProduct(q.q)).rowwise().sum()).lpNorm<Eigen::Infinity>();
        const Matrix nu = pi.array().colwise() * q.d_occ.array();
        r.nu_err = (q.nu_occ - nu).lpNorm<Eigen::Infinity>();
        r.mass_err = std::abs(q.d_occ.sum() - 1.0);
        const auto pd = performance_difference(mdp, policy_table(p2), pi);
        r.pd_err = std::abs(pd.lhs - pd.rhs);

        const Vector pg = exact_policy_gradient(mdp, p).pg;
        Vector fd(pg.size());
        const double h = 1e-3;  // five-point stencil, O(h^4)
        for (Eigen::Index j = 0; j < pg.size(); ++j) {
            auto at = [&](double t) {
                Vector th = p.theta;
                th(j) += t;
                return detail::exact_j(mdp, p.with_theta(th));
            };
            fd(j) = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        }
        r.fd_rel = (fd - pg).norm() / std::max(pg.norm(), 1e-6);
        res[i] = r;
    });

    AuditReport rep;
    rep.name = "oracle-selfcheck";
    const auto& th = spec.thresholds;
    auto worst = [&](double Result::*m) {
        double w = 0;
        for (const auto& r : res) w = std::max(w, r.*m);
        return w;
    };
    const double v = worst(&Result::v_err), nu = worst(&Result::nu_err), mass = worst(&Result::mass_err),
                 pd = worst(&Result::pd_err), fd = worst(&Result::fd_rel);
    rep.add("instances", n, n, true);
    rep.add("max_abs_V_minus_sum_pi_Q", v, th.identity_tol, v <= th.identity_tol);
    rep.add("max_abs_nu_minus_d_pi", nu, th.identity_tol, nu <= th.identity_tol);
    rep.add("max_abs_occupancy_mass_error", mass, th.identity_tol, mass <= th.identity_tol);
    rep.add("max_abs_performance_difference", pd, th.identity_tol, pd <= th.identity_tol);
    rep.add("max_rel_finite_difference_gradient", fd, th.fd_rel_tol, fd <= th.fd_rel_tol);
    return rep;
}

/// Monte-Carlo mean of the gradient estimator against the exact loss
/// gradient, component by component, plus the occupancy-sample law.
inline AuditReport audit_lemma1(const ExperimentSpec& spec) {
    const int n = spec.lemma1_instances;
    const long N = spec.n_samples;
    struct Result {
        Vector exact, mean, se;
        double tv = 0;
    };
    std::vector<Result> res(n);
    const RngStream root(spec.audit_seed ^ 0x1e3a1);
    parallel_for(n, spec.workers, [&](int i) {
        RngStream rng = root.substream(static_cast<std::uint64_t>(i));
        const auto rc = detail::random_case(rng.split(), 5, 3, spec.lemma1_gamma, i % 2 == 1, 0.5);
        const Vector omega = detail::random_normal(static_cast<int>(rc.params.dim()), 1.0, rng);
        const PolicySnapshot pol(rc.params);
        const int d = static_cast<int>(rc.params.dim());
        Vector mean = Vector::Zero(d), m2 = Vector::Zero(d);
        Matrix counts = Matrix::Zero(rc.mdp.n_states(), rc.mdp.n_actions());
        RngStream draws = rng.split();
        for (long t = 1; t <= N; ++t) {
            const GradEstimate g = grad_estimate(rc.mdp, pol, omega, draws);
            const Vector delta = g.vec - mean;
            mean += delta / static_cast<double>(t);
            m2 += delta.cwiseProduct(g.vec - mean);
            counts(g.occupancy.s_hat, g.occupancy.a_hat) += 1.0;
        }
        Result r;
        r.exact = compatible_loss_gradient(rc.mdp, rc.params, omega);
        r.mean = mean;
        r.se = (m2 / static_cast<double>(N - 1) / static_cast<double>(N)).cwiseSqrt();
        const auto q = exact_values(rc.mdp, policy_table(rc.params));
        r.tv = stats::total_variation(Eigen::Map<const Vector>(counts.data(), counts.size()) / static_cast<double>(N),
                                      Eigen::Map<const Vector>(q.nu_occ.data(), q.nu_occ.size()));
        res[i] = std::move(r);
    });

    AuditReport rep;
    rep.name = "lemma1";
    const auto& th = spec.thresholds;
    std::string ci = "instance,component,exact,mean,ci_lo,ci_hi,z\n";
    long components = 0, outside = 0;
    double worst_tv = 0;
    for (int i = 0; i < n; ++i) {
        const auto& r = res[i];
        double max_z = 0;
        for (Eigen::Index j = 0; j < r.exact.size(); ++j) {
            const double diff = std::abs(r.mean(j) - r.exact(j));
            const double z = r.se(j) > 0 ? diff / r.se(j) : (diff > 1e-12 ? INFINITY : 0.0);
            max_z = std::max(max_z, z);
            ++components;
            if (z > th.ci_sigma) ++outside;
            ci += std::to_string(i) + "," + std::to_string(j) + "," + format_double(r.exact(j)) + "," +
                  format_double(r.mean(j)) + "," + format_double(r.mean(j) - th.ci_sigma * r.se(j)) + "," +
                  format_double(r.mean(j) + th.ci_sigma * r.se(j)) + "," + format_double(z) + "\n";
        }
        rep.add("instance" + std::to_string(i) + ".max_z", max_z, th.ci_sigma, max_z <= th.ci_sigma);
        rep.add("instance" + std::to_string(i) + ".occupancy_tv", r.tv, th.tv, r.tv <= th.tv);
        worst_tv = std::max(worst_tv, r.tv);
    }
    // Two-sided normal tail mass beyond ci_sigma.
    const double tail = std::erfc(th.ci_sigma / std::sqrt(2.0));
    const double expected = tail * static_cast<double>(components);
    rep.add("components_outside_ci", static_cast<double>(outside), expected, outside <= expected);
    rep.extra_files.emplace_back("ci.csv", std::move(ci));
    return rep;
}

/// Second moments of the value estimates and the noise-covariance bound
/// sigma^2 F - E[g g^T] >= 0 at omega*.
inline AuditReport audit_lemma5(const ExperimentSpec& spec) {
    const long N = spec.n_samples;
    const auto& th = spec.thresholds;
    AuditReport rep;
    rep.name = "lemma5";

    const int ng = static_cast<int>(spec.moment_gammas.size());
    struct Moments {
        stats::RunningMoments q2, v2;
    };
    std::vector<Moments> mom(ng);
    const RngStream mroot(spec.audit_seed ^ 0x42);
    parallel_for(ng, spec.workers, [&](int i) {
        RngStream rng = mroot.substream(static_cast<std::uint64_t>(i));
        const auto rc = detail::random_case(rng.split(), 4, 3, spec.moment_gammas[i], false, 1.0);
        const PolicySnapshot pol(rc.params);
        RngStream draws = rng.split();
        for (long t = 0; t < N; ++t) {
            const auto occ = sample_occupancy_pair(rc.mdp, pol, draws);
            const auto adv = sample_advantage(rc.mdp, pol, occ.s_hat, occ.a_hat, draws);
            mom[i].q2.add(adv.q_hat * adv.q_hat);
            mom[i].v2.add(adv.v_hat * adv.v_hat);
        }
    });
    for (int i = 0; i < ng; ++i) {
        const double g = spec.moment_gammas[i];
        const double bound = 4.0 / ((1.0 - g) * (1.0 - g));
        const std::string tag = "gamma" + format_double(g);
        const double q_thr = bound + th.moment_sigma * mom[i].q2.standard_error();
        const double v_thr = bound + th.moment_sigma * mom[i].v2.standard_error();
        rep.add(tag + ".E[Q_hat^2]", mom[i].q2.mean(), q_thr, mom[i].q2.mean() <= q_thr);
        rep.add(tag + ".E[V_hat^2]", mom[i].v2.mean(), v_thr, mom[i].v2.mean() <= v_thr);
    }

    const int n = spec.lemma5_instances;
    struct Cov {
        double sigma_sq = 0, min_eig = 0, tol = 0;
    };
    std::vector<Cov> cov(n);
    const RngStream croot(spec.audit_seed ^ 0x55);
    const long batch = 10000;
    const long n_batches = std::max(2L, N / batch);
    parallel_for(n, spec.workers, [&](int i) {
        RngStream rng = croot.substream(static_cast<std::uint64_t>(i));
        const auto rc = detail::random_case(rng.split(), 4, 3, spec.lemma1_gamma, i % 2 == 1, 0.5);
        ConstantsOptions opt;
        opt.mu_floor = 0.0;
        const auto c = measure_constants({rc.params}, rc.mdp, opt);
        const auto ev = evaluate_exact(rc.mdp, rc.params);
        const PolicySnapshot pol(rc.params);
        RngStream draws = rng.split();
        Matrix mean = Matrix::Zero(rc.params.dim(), rc.params.dim());
        std::vector<double> batch_eigs;
        for (long b = 0; b < n_batches; ++b) {
            const Matrix m = empirical_noise_covariance(rc.mdp, pol, ev.ng.omega_star, batch, draws);
            mean += m / static_cast<double>(n_batches);
            Eigen::SelfAdjointEigenSolver<Matrix> es(c.sigma_sq * ev.ng.fisher - m, Eigen::EigenvaluesOnly);
            batch_eigs.push_back(es.eigenvalues().minCoeff());
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(c.sigma_sq * ev.ng.fisher - mean, Eigen::EigenvaluesOnly);
        Cov r;
        r.sigma_sq = c.sigma_sq;
        r.min_eig = es.eigenvalues().minCoeff();
        const double scale = c.sigma_sq * ev.ng.fisher.norm();
        r.tol = std::max(th.moment_sigma * std::sqrt(stats::variance(batch_eigs) / static_cast<double>(n_batches)),
                         1e-12 * std::max(scale, 1.0));
        cov[i] = r;
    });
    for (int i = 0; i < n; ++i) {
        const std::string tag = "instance" + std::to_string(i);
        rep.add(tag + ".sigma_sq", cov[i].sigma_sq, cov[i].sigma_sq, true);
        rep.add(tag + ".min_eig_sigma2F_minus_M", cov[i].min_eig, -cov[i].tol, cov[i].min_eig >= -cov[i].tol);
    }
    return rep;
}

namespace detail {
struct RunSetup {
    Instance inst;
    PolicyParams params;
    SmoothnessConstants constants;
    AsgdRates rates;
};

inline RunSetup run_setup(const ExperimentSpec& spec) {
    Instance inst = make_instance(spec);
    PolicyParams params = PolicyParams::zeros(inst.family);
    const auto c = measure_around(inst.mdp, params, spec.config);
    const AsgdRates rates = spec.config.rates ? *spec.config.rates : make_rates(c);
    return {std::move(inst), std::move(params), c, rates};
}
}  // namespace detail

/// Seed-averaged second-order error of the stochastic inner loop against H.
inline AuditReport audit_lemma6(const ExperimentSpec& spec) {
    if (spec.family != "features") throw ConfigError("key 'family': lemma6 needs a full-rank feature family");
    const auto setup = detail::run_setup(spec);
    const auto ev = evaluate_exact(setup.inst.mdp, setup.params, spec.config.pinv_cutoff);
    if (detail::rank_deficient(ev.ng.fisher, spec.config.pinv_cutoff))
        throw ConfigError("key 'family': lemma6 needs a full-rank Fisher matrix at theta_0");
    const auto& Hs = spec.lemma6_H;
    const int n_seeds = spec.lemma6_seeds;
    const int total = static_cast<int>(Hs.size()) * n_seeds;
    std::vector<double> sq(total);
    const RngStream root(spec.audit_seed ^ 0x6);
    parallel_for(total, spec.workers, [&](int idx) {
        const int hi = idx / n_seeds, s = idx % n_seeds;
        RngStream rng = root.substream(static_cast<std::uint64_t>(Hs[hi])).substream(static_cast<std::uint64_t>(s));
        const auto r = run_inner_loop(setup.inst.mdp, setup.params, Hs[hi], setup.rates, GradientMode::stochastic, rng,
                                      spec.config.sampler);
        sq[idx] = (r.omega - ev.ng.omega_star).squaredNorm();
    });

    AuditReport rep;
    rep.name = "lemma6";
    std::vector<double> lx, ly;
    std::string detail_csv = "H,mse,bias_sq\n";
    for (std::size_t hi = 0; hi < Hs.size(); ++hi) {
        const double mse =
            stats::mean(std::vector<double>(sq.begin() + static_cast<long>(hi) * n_seeds,
                                            sq.begin() + static_cast<long>(hi + 1) * n_seeds));
        const double b = deterministic_bias(ev, Hs[hi], setup.rates, spec.config.pinv_cutoff);
        lx.push_back(std::log(static_cast<double>(Hs[hi])));
        ly.push_back(std::log(mse));
        detail_csv += std::to_string(Hs[hi]) + "," + format_double(mse) + "," + format_double(b * b) + "\n";
        rep.add("H" + std::to_string(Hs[hi]) + ".mean_sq_error", mse, 0.0, std::isfinite(mse));
    }
    const auto fit = stats::linear_fit(lx, ly);
    const auto& th = spec.thresholds;
    rep.add("loglog_slope_ge", fit.slope, th.slope_lo, fit.slope >= th.slope_lo);
    rep.add("loglog_slope_le", fit.slope, th.slope_hi, fit.slope <= th.slope_hi);
    rep.add("loglog_r2", fit.r2, 0.0, true);
    rep.add("mu_F_over_G_sq", setup.constants.mu_F / (setup.constants.G * setup.constants.G), 0.0, true);
    rep.extra_files.emplace_back("detail.csv", std::move(detail_csv));
    return rep;
}

/// Exponential decay of the noiseless-recursion error in H.
inline AuditReport audit_lemma7(const ExperimentSpec& spec) {
    const auto setup = detail::run_setup(spec);
    const auto ev = evaluate_exact(setup.inst.mdp, setup.params, spec.config.pinv_cutoff);
    const auto& Hs = spec.lemma7_H;
    const double floor = 1e-12 * std::max(ev.ng.omega_star.norm(), 1e-300);
    AuditReport rep;
    rep.name = "lemma7";
    std::vector<double> x, y, poly;
    double min_err = INFINITY;
    std::string detail_csv = "H,error,error_gd\n";
    const AsgdRates gd{1.0, 1.0, setup.rates.delta, setup.rates.delta};
    for (int H : Hs) {
        const double e = deterministic_bias(ev, H, setup.rates, spec.config.pinv_cutoff);
        const double e_gd = deterministic_bias(ev, H, gd, spec.config.pinv_cutoff);
        min_err = std::min(min_err, e);
        x.push_back(H);
        y.push_back(std::log(std::max(e, 1e-300)));
        poly.push_back(std::log(1.0 / H));
        detail_csv += std::to_string(H) + "," + format_double(e) + "," + format_double(e_gd) + "\n";
        rep.add("H" + std::to_string(H) + ".error", e, floor, e > floor);
    }
    const auto fit = stats::linear_fit(x, y);
    const auto poly_fit = stats::linear_fit(x, poly);
    const auto& th = spec.thresholds;
    rep.add("kappa_hat", -fit.slope, 0.0, -fit.slope > 0.0);
    rep.add("loglinear_r2", fit.r2, th.r2, fit.r2 >= th.r2);
    rep.add("inverse_H_loglinear_r2", poly_fit.r2, th.r2, poly_fit.r2 < th.r2);
    rep.extra_files.emplace_back("detail.csv", std::move(detail_csv));
    return rep;
}

namespace detail {
inline std::vector<RunHistory> run_seeds(const ExperimentSpec& spec, const Instance& inst, AnpgConfig cfg,
                                         const std::vector<std::uint64_t>& seeds) {
    std::vector<RunHistory> out(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), spec.workers, [&](int i) {
        AnpgConfig c = cfg;
        c.seed = seeds[i];
        out[i] = run_anpg(inst.mdp, inst.family, c);
    });
    return out;
}
}  // namespace detail

inline AuditReport audit_corollary1(const ExperimentSpec& spec) {
    const Instance inst = make_instance(spec);
    const auto runs = detail::run_seeds(spec, inst, spec.config, spec.seeds);
    const auto a = corollary_bound_audit(runs, runs.front().constants);
    const auto& th = spec.thresholds;
    AuditReport rep;
    rep.name = "corollary1";
    rep.add("seeds", static_cast<double>(runs.size()), 0.0, true);
    rep.add("lhs_averaged_gap", a.lhs, a.rhs, a.pass);
    rep.add("term_sqrt_eps_bias", a.term_bias, 0.0, true);
    rep.add("term_first_order", a.term_first, 0.0, true);
    rep.add("term_second_order", a.term_second, 0.0, true);
    rep.add("term_outer", a.term_outer, 0.0, true);
    rep.add("rhs", a.rhs, a.lhs, a.pass);
    if (spec.family == "tabular")
        rep.add("eps_bias_probe", a.eps_bias, th.eps_bias_tol, a.eps_bias <= th.eps_bias_tol);
    else
        rep.add("eps_bias_probe", a.eps_bias, 0.0, true);
    rep.add("gradient_bound_lhs", a.lemma4_lhs, a.lemma4_rhs, a.lemma4_pass);
    rep.add("single_seed_violations", a.single_seed_violations, 0.0, true);  // flagged only
    double min_gap = INFINITY;
    bool monotone = true;
    for (const auto& h : runs)
        for (std::size_t k = 0; k < h.records.size(); ++k) {
            min_gap = std::min(min_gap, h.records[k].gap);
            if (k > 0 && h.records[k].samples_cum < h.records[k - 1].samples_cum) monotone = false;
        }
    rep.add("min_gap", min_gap, -1e-9, min_gap >= -1e-9);
    rep.add("samples_nondecreasing", monotone ? 1.0 : 0.0, 1.0, monotone);
    return rep;
}

/// Joint doubling of (K, H): the seed-median averaged gap must strictly fall
/// and the environment-step count must match K H 2/(1-gamma).
inline AuditReport audit_scaling(const ExperimentSpec& spec) {
    const Instance inst = make_instance(spec);
    AuditReport rep;
    rep.name = "scaling";
    const auto& th = spec.thresholds;
    const double gamma = inst.mdp.gamma();
    std::vector<double> medians;
    for (const auto& [K, H] : spec.scaling_pairs) {
        AnpgConfig cfg = spec.config;
        cfg.K = K;
        cfg.H = H;
        cfg.probe_bias = false;
        const auto runs = detail::run_seeds(spec, inst, cfg, spec.seeds);
        std::vector<double> gaps;
        double worst_steps = 0;
        const double expected = static_cast<double>(K) * H * 2.0 / (1.0 - gamma);
        for (const auto& h : runs) {
            gaps.push_back(h.averaged_gap());
            worst_steps = std::max(worst_steps, std::abs(static_cast<double>(h.total_samples()) / expected - 1.0));
        }
        const std::string tag = "K" + std::to_string(K) + "_H" + std::to_string(H);
        medians.push_back(stats::median(gaps));
        rep.add(tag + ".median_averaged_gap", medians.back(), 0.0, std::isfinite(medians.back()));
        rep.add(tag + ".steps_rel_deviation", worst_steps, th.steps_rel_tol, worst_steps <= th.steps_rel_tol);
    }
    for (std::size_t i = 1; i < medians.size(); ++i)
        rep.add("median_gap_decrease_" + std::to_string(i), medians[i - 1] - medians[i], 0.0,
                medians[i - 1] - medians[i] > 0.0);
    return rep;
}

/// Noiseless-recursion bias at the final iterate, ASGD against the SGD
/// baseline at the same (K, H).
inline AuditReport audit_asgd_vs_sgd(const ExperimentSpec& spec) {
    const Instance inst = make_instance(spec);
    AnpgConfig base = spec.config;
    base.probe_bias = false;
    AnpgConfig a_cfg = base, s_cfg = base;
    a_cfg.inner_solver = InnerSolver::asgd;
    s_cfg.inner_solver = InnerSolver::sgd;
    const auto a_runs = detail::run_seeds(spec, inst, a_cfg, spec.seeds);
    const auto s_runs = detail::run_seeds(spec, inst, s_cfg, spec.seeds);
    auto final_bias = [&](const RunHistory& h, const AsgdRates& rates) {
        const auto ev = evaluate_exact(inst.mdp, PolicyParams(inst.family, h.theta_final), base.pinv_cutoff);
        return deterministic_bias(ev, h.H, rates, base.pinv_cutoff);
    };
    std::vector<double> ab, sb;
    for (const auto& h : a_runs) ab.push_back(final_bias(h, h.rates));
    for (const auto& h : s_runs) sb.push_back(final_bias(h, AsgdRates::gradient_descent(h.sgd_step)));
    const double am = stats::median(ab), sm = stats::median(sb);
    AuditReport rep;
    rep.name = "asgd-vs-sgd";
    rep.add("sgd_step", s_runs.front().sgd_step, 0.0, true);
    rep.add("median_bias_sgd", sm, 0.0, true);
    rep.add("median_bias_asgd", am, sm, am <= sm);
    return rep;
}

inline AuditReport run_audit(const std::string& name, const ExperimentSpec& spec) {
    if (name == "oracle-selfcheck") return audit_oracle_selfcheck(spec);
    if (name == "lemma1") return audit_lemma1(spec);
    if (name == "lemma5") return audit_lemma5(spec);
    if (name == "lemma6") return audit_lemma6(spec);
    if (name == "lemma7") return audit_lemma7(spec);
    if (name == "corollary1") return audit_corollary1(spec);
    if (name == "scaling") return audit_scaling(spec);
    if (name == "asgd-vs-sgd") return audit_asgd_vs_sgd(spec);
    throw ConfigError("unknown audit '" + name + "'");
}

// ---------------------------------------------------------------- output

inline std::string history_csv(const RunHistory& h) {
    std::string out = "k,J,gap,omega_norm,omega_err,eps_bias_probe,kl_to_opt,samples_cum,seed\n";
    for (const auto& r : h.records)
        out += std::to_string(r.k) + "," + format_double(r.J) + "," + format_double(r.gap) + "," +
               format_double(r.omega_norm) + "," + format_double(r.omega_err) + "," + format_double(r.eps_bias_probe) +
               "," + format_double(r.kl_to_opt) + "," + std::to_string(r.samples_cum) + "," + std::to_string(h.seed) +
               "\n";
    return out;
}

/// One row per inner loop (k < K).
inline std::string inner_csv(const RunHistory& h) {
    std::string out = "k,H,samples_used,omega_norm,det_error\n";
    long prev = 0;
    for (const auto& r : h.records) {
        if (!r.has_omega) continue;
        out += std::to_string(r.k) + "," + std::to_string(h.H) + "," + std::to_string(r.samples_cum - prev) + "," +
               format_double(r.omega_norm) + "," + format_double(r.bias_err) + "\n";
        prev = r.samples_cum;
    }
    return out;
}

inline nlohmann::ordered_json summary_json(const ExperimentSpec& spec, const RunHistory& h, double gamma) {
    nlohmann::ordered_json j;
    j["name"] = spec.name;
    j["config"] = {{"mdp", spec.mdp_file.empty() ? spec.mdp_generator : spec.mdp_file},
                   {"family", spec.family},
                   {"gamma", gamma},
                   {"K", h.K},
                   {"H", h.H},
                   {"inner_solver", to_string(h.inner_solver)},
                   {"seed", h.seed},
                   {"eta", h.eta},
                   {"rates", {{"alpha", h.rates.alpha}, {"beta", h.rates.beta}, {"xi", h.rates.xi}, {"delta", h.rates.delta}}},
                   {"sgd_step", h.sgd_step}};
    j["constants"] = {{"G", h.constants.G},       {"B", h.constants.B},         {"L", h.constants.L},
                      {"mu_F", h.constants.mu_F}, {"sigma_sq", h.constants.sigma_sq}};
    const auto& last = h.records.back();
    j["final"] = {{"J", last.J},
                  {"J_star", h.j_star},
                  {"gap", last.gap},
                  {"averaged_gap", h.averaged_gap()},
                  {"kl_to_opt", last.kl_to_opt},
                  {"kl0", h.kl0},
                  {"samples", h.total_samples()},
                  {"grad_calls", h.grad_calls}};
    j["warnings"] = h.warnings;
    return j;
}

/// `dir/stem.ext`, or `dir/stem.N.ext` for the first free N. Names already
/// handed out in this process are skipped too.
inline std::filesystem::path unique_path(const std::filesystem::path& dir, const std::string& stem,
                                         const std::string& ext, std::set<std::string>& taken) {
    for (int n = 0;; ++n) {
        const std::string name = n == 0 ? stem + ext : stem + "." + std::to_string(n) + ext;
        const auto p = dir / name;
        if (!taken.count(p.string()) && !std::filesystem::exists(p)) {
            taken.insert(p.string());
            return p;
        }
    }
}

inline void write_file(const std::filesystem::path& p, const std::string& contents) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("key 'output_dir': cannot write '" + p.string() + "'");
    out << contents;
    if (!out) throw ConfigError("key 'output_dir': write failed for '" + p.string() + "'");
}

namespace detail {
inline std::filesystem::path prepare_output_dir(const ExperimentSpec& spec, const std::optional<std::string>& override_dir) {
    std::string dir = spec.output_dir;
    if (const char* env = std::getenv("ANPG_OUTPUT_DIR"); env && *env) dir = env;
    if (override_dir) dir = *override_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw ConfigError("key 'output_dir': cannot create '" + dir + "'");
    const auto probe = std::filesystem::path(dir) / ".anpg_write_probe";
    {
        std::ofstream t(probe);
        if (!t) throw ConfigError("key 'output_dir': '" + dir + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
    return dir;
}

inline std::string audit_failure_message(const AuditReport& rep) {
    const AuditRow* f = rep.first_failure();
    return "audit " + rep.name + " failed: " + f->check + " measured " + format_double(f->measured) +
           " (threshold " + format_double(f->threshold) + ")";
}

inline std::vector<std::filesystem::path> write_report(const AuditReport& rep, const std::filesystem::path& dir,
                                                       const std::string& prefix, std::set<std::string>& taken) {
    std::vector<std::filesystem::path> files;
    files.push_back(unique_path(dir, prefix + "." + rep.name, ".csv", taken));
    write_file(files.back(), rep.to_csv());
    for (const auto& [suffix, body] : rep.extra_files) {
        const auto dot = suffix.rfind('.');
        files.push_back(unique_path(dir, prefix + "." + rep.name + "." + suffix.substr(0, dot), suffix.substr(dot), taken));
        write_file(files.back(), body);
    }
    return files;
}
}  // namespace detail

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitAudit = 2, kExitRun = 3 };

struct CliOptions {
    std::optional<std::string> output_dir;
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;
};

/// Executes every sweep point and enabled audit of a spec file.
inline int cli_run(const std::string& spec_path, const CliOptions& opt = {}) {
    auto& out = *opt.out;
    auto& err = *opt.err;
    ExperimentSpec spec;
    std::filesystem::path dir;
    try {
        spec = load_spec(spec_path);
        dir = detail::prepare_output_dir(spec, opt.output_dir);
        (void)make_instance(spec);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    struct Point {
        int H, K;
        double gamma;
        std::uint64_t seed;
        std::filesystem::path csv, inner, summary;
        double wall = 0;
        std::string error;
        std::vector<std::string> warnings;
    };
    std::vector<Point> points;
    const std::vector<int> Hs = spec.sweep_H.empty() ? std::vector<int>{spec.config.H} : spec.sweep_H;
    const std::vector<int> Ks = spec.sweep_K.empty() ? std::vector<int>{spec.config.K} : spec.sweep_K;
    const std::vector<double> gs =
        spec.sweep_gamma.empty() ? std::vector<double>{make_instance(spec).mdp.gamma()} : spec.sweep_gamma;
    const bool single = Hs.size() * Ks.size() * gs.size() * spec.seeds.size() == 1;
    std::set<std::string> taken;
    for (int H : Hs)
        for (int K : Ks)
            for (double g : gs)
                for (auto seed : spec.seeds) {
                    Point p{H, K, g, seed, {}, {}, {}, 0.0, {}, {}};
                    const std::string stem =
                        single ? spec.name
                               : spec.name + "_H" + std::to_string(H) + "_K" + std::to_string(K) + "_g" +
                                     format_double(g) + "_s" + std::to_string(seed);
                    p.csv = unique_path(dir, stem, ".csv", taken);
                    const std::string base = p.csv.stem().string();
                    p.inner = unique_path(dir, base + ".inner", ".csv", taken);
                    p.summary = unique_path(dir, base + ".summary", ".json", taken);
                    points.push_back(std::move(p));
                }

    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(static_cast<int>(points.size()), spec.workers, [&](int i) {
        Point& p = points[i];
        const auto start = std::chrono::steady_clock::now();
        try {
            const Instance inst = make_instance(spec, p.gamma);
            AnpgConfig cfg = spec.config;
            cfg.H = p.H;
            cfg.K = p.K;
            cfg.seed = p.seed;
            const RunHistory h = run_anpg(inst.mdp, inst.family, cfg);
            write_file(p.csv, history_csv(h));
            write_file(p.inner, inner_csv(h));
            write_file(p.summary, summary_json(spec, h, p.gamma).dump(2) + "\n");
            p.warnings = h.warnings;
        } catch (const std::exception& e) {
            p.error = e.what();
        }
        p.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });

    int code = kExitOk;
    nlohmann::ordered_json manifest;
    manifest["name"] = spec.name;
    manifest["version"] = kVersion;
    manifest["spec"] = spec_path;
    manifest["runs"] = nlohmann::ordered_json::array();
    for (const auto& p : points) {
        nlohmann::ordered_json r{{"H", p.H},          {"K", p.K},
                                 {"gamma", p.gamma},  {"seed", p.seed},
                                 {"csv", p.csv.filename().string()}, {"wall_seconds", p.wall},
                                 {"ok", p.error.empty()}};
        if (!p.error.empty()) {
            r["error"] = p.error;
            err << "run H=" << p.H << " K=" << p.K << " gamma=" << format_double(p.gamma) << " seed=" << p.seed
                << " aborted: " << p.error << "\n";
            code = kExitRun;
        } else {
            r["inner_csv"] = p.inner.filename().string();
            r["summary"] = p.summary.filename().string();
        }
        for (const auto& w : p.warnings) err << "warning: " << w << "\n";
        manifest["runs"].push_back(r);
    }
    out << points.size() << " run(s) written to " << dir.string() << "\n";

    manifest["audits"] = nlohmann::ordered_json::array();
    for (const auto& name : spec.audits) {
        const auto start = std::chrono::steady_clock::now();
        nlohmann::ordered_json a{{"name", name}};
        try {
            const AuditReport rep = run_audit(name, spec);
            const auto files = detail::write_report(rep, dir, spec.name, taken);
            a["pass"] = rep.passed();
            a["report"] = files.front().filename().string();
            if (rep.passed()) {
                out << "audit " << name << ": pass\n";
            } else {
                err << detail::audit_failure_message(rep) << "\n";
                if (code == kExitOk) code = kExitAudit;
            }
        } catch (const ConfigError& e) {
            err << "config error: " << e.what() << "\n";
            a["pass"] = false;
            a["error"] = e.what();
            code = kExitConfig;
        } catch (const std::exception& e) {
            err << "audit " << name << " aborted: " << e.what() << "\n";
            a["pass"] = false;
            a["error"] = e.what();
            if (code == kExitOk) code = kExitAudit;
        }
        a["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        manifest["audits"].push_back(a);
    }
    manifest["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    manifest["exit_code"] = code;
    write_file(unique_path(dir, spec.name + ".manifest", ".json", taken), manifest.dump(2) + "\n");
    return code;
}

/// Runs one audit against a spec, independent of the spec's own audit list.
inline int cli_audit(const std::string& audit_name, const std::string& spec_path, const CliOptions& opt = {}) {
    auto& out = *opt.out;
    auto& err = *opt.err;
    if (!is_audit_name(audit_name)) {
        err << "config error: unknown audit '" << audit_name << "'\n";
        return kExitConfig;
    }
    try {
        const ExperimentSpec spec = load_spec(spec_path);
        const auto dir = detail::prepare_output_dir(spec, opt.output_dir);
        const AuditReport rep = run_audit(audit_name, spec);
        std::set<std::string> taken;
        const auto files = detail::write_report(rep, dir, spec.name, taken);
        for (const auto& r : rep.rows)
            out << r.check << " " << format_double(r.measured) << " " << format_double(r.threshold) << " "
                << (r.pass ? "pass" : "FAIL") << "\n";
        out << "report: " << files.front().string() << "\n";
        if (!rep.passed()) {
            err << detail::audit_failure_message(rep) << "\n";
            return kExitAudit;
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "audit " << audit_name << " aborted: " << e.what() << "\n";
        return kExitAudit;
    }
}

inline int cli_generate_mdp(const std::string& generator, const std::string& out_path, double gamma,
                            const CliOptions& opt = {}) {
    try {
        const TabularMdp mdp = make_from_generator(generator, gamma);
        write_file(out_path, serialize_mdp(mdp));
        const auto report = validate_mdp(load_mdp(out_path));
        if (!report.ok()) {
            *opt.err << "generated MDP failed validation: " << report.summary() << "\n";
            return kExitConfig;
        }
        *opt.out << "wrote " << out_path << " (" << mdp.n_states() << " states, " << mdp.n_actions() << " actions)\n";
        return kExitOk;
    } catch (const std::exception& e) {
        *opt.err << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
}

}  // namespace anpg
