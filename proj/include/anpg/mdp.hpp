#pragma once

#include "anpg/rng.hpp"
#include "anpg/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace anpg {

using State = int;
using Action = int;

/// Finite discounted MDP (S, A, r, P, gamma, rho) with dense tables.
///
/// transition is indexed ((s * n_actions) + a) * n_states + s'. Construction
/// does not validate; use validate_mdp() or TabularMdp::checked().
class TabularMdp {
public:
    TabularMdp() = default;

    TabularMdp(int n_states, int n_actions, double gamma, std::vector<double> rho, std::vector<double> reward,
               std::vector<double> transition)
        : n_states_(n_states),
          n_actions_(n_actions),
          gamma_(gamma),
          rho_(std::move(rho)),
          reward_(std::move(reward)),
          transition_(std::move(transition)) {
        if (n_states <= 0 || n_actions <= 0) throw std::invalid_argument("MDP needs at least one state and action");
        if (rho_.size() != static_cast<std::size_t>(n_states))
            throw std::invalid_argument("rho has length " + std::to_string(rho_.size()) + ", expected " +
                                        std::to_string(n_states));
        if (reward_.size() != static_cast<std::size_t>(n_states) * n_actions)
            throw std::invalid_argument("reward has " + std::to_string(reward_.size()) + " entries, expected " +
                                        std::to_string(n_states * n_actions));
        if (transition_.size() != static_cast<std::size_t>(n_states) * n_actions * n_states)
            throw std::invalid_argument("transition has " + std::to_string(transition_.size()) +
                                        " entries, expected " + std::to_string(n_states * n_actions * n_states));
        build_cdfs();
    }

    /// Constructs and throws std::invalid_argument listing every violation.
    static TabularMdp checked(int n_states, int n_actions, double gamma, std::vector<double> rho,
                              std::vector<double> reward, std::vector<double> transition);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    double gamma() const { return gamma_; }
    const std::vector<double>& rho() const { return rho_; }
    const std::vector<double>& rewards() const { return reward_; }
    const std::vector<double>& transitions() const { return transition_; }

    double reward(State s, Action a) const { return reward_[index(s, a)]; }
    double prob(State s, Action a, State next) const { return transition_[index(s, a) * n_states_ + next]; }

    /// Pointer to the n_states entries of row P(.|s, a).
    const double* row(State s, Action a) const { return transition_.data() + index(s, a) * n_states_; }

    void check_state(State s) const {
        if (s < 0 || s >= n_states_)
            throw std::out_of_range("state " + std::to_string(s) + " out of range [0," + std::to_string(n_states_) +
                                    ")");
    }
    void check_action(Action a) const {
        if (a < 0 || a >= n_actions_)
            throw std::out_of_range("action " + std::to_string(a) + " out of range [0," +
                                    std::to_string(n_actions_) + ")");
    }

    /// Same MDP with a different discount.
    TabularMdp with_gamma(double gamma) const {
        TabularMdp copy = *this;
        copy.gamma_ = gamma;
        return copy;
    }

    State sample_initial(RngStream& rng) const { return draw(rho_cdf_.data(), n_states_, rng.uniform()); }

    State sample_next(State s, Action a, RngStream& rng) const {
        return draw(cdf_.data() + index(s, a) * n_states_, n_states_, rng.uniform());
    }

private:
    std::size_t index(State s, Action a) const { return static_cast<std::size_t>(s) * n_actions_ + a; }

    // Inverse CDF; u beyond the last cumulative value (rounding) maps to the
    // last state with positive mass.
    static int draw(const double* cdf, int n, double u) {
        const double* it = std::upper_bound(cdf, cdf + n, u);
        int k = static_cast<int>(it - cdf);
        if (k >= n) {
            k = n - 1;
            while (k > 0 && cdf[k] == cdf[k - 1]) --k;
        }
        return k;
    }

    void build_cdfs() {
        cdf_.resize(transition_.size());
        for (std::size_t r = 0; r < transition_.size(); r += n_states_)
            std::partial_sum(transition_.begin() + r, transition_.begin() + r + n_states_, cdf_.begin() + r);
        rho_cdf_.resize(rho_.size());
        std::partial_sum(rho_.begin(), rho_.end(), rho_cdf_.begin());
    }

    int n_states_ = 0;
    int n_actions_ = 0;
    double gamma_ = 0.0;
    std::vector<double> rho_;
    std::vector<double> reward_;
    std::vector<double> transition_;
    std::vector<double> cdf_;
    std::vector<double> rho_cdf_;
};

struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
    std::string summary() const {
        std::string out;
        for (const auto& v : violations) {
            if (!out.empty()) out += "; ";
            out += v;
        }
        return out;
    }
};

inline ValidationReport validate_mdp(const TabularMdp& mdp) {
    constexpr double kSumTol = 1e-12;
    ValidationReport report;
    const int S = mdp.n_states();
    const int A = mdp.n_actions();
    auto fmt = [](double x) {
        std::ostringstream os;
        os.precision(12);
        os << x;
        return os.str();
    };

    if (!(mdp.gamma() > 0.0 && mdp.gamma() < 1.0))
        report.violations.push_back("gamma " + fmt(mdp.gamma()) + " not in (0,1)");

    for (State s = 0; s < S; ++s)
        for (Action a = 0; a < A; ++a) {
            const double r = mdp.reward(s, a);
            if (!(r >= 0.0 && r <= 1.0))
                report.violations.push_back("reward out of [0,1] at (s=" + std::to_string(s) +
                                            ",a=" + std::to_string(a) + "): " + fmt(r));
            const double* row = mdp.row(s, a);
            double sum = 0.0;
            for (State t = 0; t < S; ++t) {
                if (!(row[t] >= 0.0))
                    report.violations.push_back("negative transition entry at (s=" + std::to_string(s) + ",a=" +
                                                std::to_string(a) + ",s'=" + std::to_string(t) + "): " +
                                                fmt(row[t]));
                sum += row[t];
            }
            if (!(std::abs(sum - 1.0) <= kSumTol))
                report.violations.push_back("transition row (s=" + std::to_string(s) + ",a=" + std::to_string(a) +
                                            ") sums to " + fmt(sum));
        }

    double rho_sum = 0.0;
    for (State s = 0; s < S; ++s) {
        if (!(mdp.rho()[s] >= 0.0))
            report.violations.push_back("negative rho entry at s=" + std::to_string(s) + ": " + fmt(mdp.rho()[s]));
        rho_sum += mdp.rho()[s];
    }
    if (!(std::abs(rho_sum - 1.0) <= kSumTol)) report.violations.push_back("rho sums to " + fmt(rho_sum));
    return report;
}

inline TabularMdp TabularMdp::checked(int n_states, int n_actions, double gamma, std::vector<double> rho,
                                      std::vector<double> reward, std::vector<double> transition) {
    TabularMdp mdp(n_states, n_actions, gamma, std::move(rho), std::move(reward), std::move(transition));
    auto report = validate_mdp(mdp);
    if (!report.ok()) throw std::invalid_argument("invalid MDP: " + report.summary());
    return mdp;
}

/// T with P(T = t) = p (1 - p)^t on {0, 1, 2, ...}.
inline long sample_geometric(RngStream& rng, double success_prob) {
    if (!(success_prob > 0.0 && success_prob <= 1.0))
        throw std::invalid_argument("geometric success probability must lie in (0,1], got " +
                                    format_double(success_prob));
    if (success_prob == 1.0) return 0;
    const double t = std::floor(std::log(rng.uniform_open_zero()) / std::log1p(-success_prob));
    return static_cast<long>(t);
}

inline State sample_transition(const TabularMdp& mdp, State s, Action a, RngStream& rng) {
    mdp.check_state(s);
    mdp.check_action(a);
    return mdp.sample_next(s, a, rng);
}

struct Step {
    State state;
    Action action;
    double reward;
};

struct Trajectory {
    std::vector<Step> steps;
    double total_reward = 0.0;
};

/// End point and return of a rollout, without the per-step record.
struct WalkSummary {
    State last_state = 0;
    Action last_action = 0;
    double total_reward = 0.0;
    long length = 0;  // number of (s, a, r) steps, i.e. horizon + 1
};

/// Runs (s_0, a_0), ..., (s_T, a_T). `policy(s, rng)` draws an action. If
/// `a0` is empty the first action comes from the policy. `on_step` sees
/// every visited step.
template <class Policy, class Visitor>
WalkSummary walk(const TabularMdp& mdp, Policy&& policy, State s0, std::optional<Action> a0, long horizon,
                 RngStream& rng, Visitor&& on_step) {
    if (horizon < 0) throw std::invalid_argument("horizon must be nonnegative");
    mdp.check_state(s0);
    State s = s0;
    Action a = a0 ? *a0 : policy(s0, rng);
    mdp.check_action(a);
    WalkSummary out;
    for (long j = 0;; ++j) {
        const double r = mdp.reward(s, a);
        out.total_reward += r;
        on_step(Step{s, a, r});
        if (j == horizon) break;
        s = mdp.sample_next(s, a, rng);
        a = policy(s, rng);
    }
    out.last_state = s;
    out.last_action = a;
    out.length = horizon + 1;
    return out;
}

template <class Policy>
Trajectory rollout(const TabularMdp& mdp, Policy&& policy, State s0, std::optional<Action> a0, long horizon,
                   RngStream& rng) {
    Trajectory traj;
    traj.steps.reserve(static_cast<std::size_t>(horizon) + 1);
    auto summary = walk(mdp, policy, s0, a0, horizon, rng, [&](const Step& st) { traj.steps.push_back(st); });
    traj.total_reward = summary.total_reward;
    return traj;
}

// ---------------------------------------------------------------------------
// File format

inline TabularMdp mdp_from_document(const TextDocument& doc) {
    const auto S = doc.get_int("n_states");
    const auto A = doc.get_int("n_actions");
    if (S <= 0) throw ConfigError("key 'n_states': must be positive");
    if (A <= 0) throw ConfigError("key 'n_actions': must be positive");
    auto rho = doc.get_doubles("rho");
    auto reward = doc.get_doubles("reward");
    auto transition = doc.get_doubles("transition");
    if (rho.size() != static_cast<std::size_t>(S))
        throw ConfigError("key 'rho': expected " + std::to_string(S) + " entries, got " + std::to_string(rho.size()));
    if (reward.size() != static_cast<std::size_t>(S * A))
        throw ConfigError("key 'reward': expected " + std::to_string(S * A) + " entries, got " +
                          std::to_string(reward.size()));
    if (transition.size() != static_cast<std::size_t>(S * A * S))
        throw ConfigError("key 'transition': expected " + std::to_string(S * A * S) + " entries, got " +
                          std::to_string(transition.size()));
    return TabularMdp::checked(static_cast<int>(S), static_cast<int>(A), doc.get_double("gamma"), std::move(rho),
                      std::move(reward), std::move(transition));
}

inline TextDocument mdp_to_document(const TabularMdp& mdp) {
    TextDocument doc;
    doc.set("n_states", mdp.n_states());
    doc.set("n_actions", mdp.n_actions());
    doc.set("gamma", mdp.gamma());
    doc.set_list("rho", mdp.rho());
    doc.set_list("reward", mdp.rewards(), mdp.n_actions());
    doc.set_list("transition", mdp.transitions(), mdp.n_states());
    return doc;
}

inline TabularMdp load_mdp(const std::string& path) { return mdp_from_document(TextDocument::load(path)); }

inline std::string serialize_mdp(const TabularMdp& mdp) { return mdp_to_document(mdp).to_string(); }

// ---------------------------------------------------------------------------
// Generators

/// n-state corridor, actions {left, right}, deterministic moves. Reaching the
/// right end and pushing right pays 1; pushing left at the left end pays 0.2.
inline TabularMdp make_chain(int n, double gamma = 0.9) {
    if (n < 2) throw std::invalid_argument("chain needs n >= 2");
    const int A = 2;
    std::vector<double> P(static_cast<std::size_t>(n) * A * n, 0.0), r(static_cast<std::size_t>(n) * A, 0.0);
    for (int s = 0; s < n; ++s) {
        const int left = std::max(s - 1, 0);
        const int right = std::min(s + 1, n - 1);
        P[(s * A + 0) * n + left] = 1.0;
        P[(s * A + 1) * n + right] = 1.0;
    }
    r[0 * A + 0] = 0.2;
    r[(n - 1) * A + 1] = 1.0;
    std::vector<double> rho(n, 1.0 / n);
    return TabularMdp::checked(n, A, gamma, std::move(rho), std::move(r), std::move(P));
}

/// w x h grid, actions {up, down, left, right}. The intended move succeeds
/// with probability 0.8, otherwise the agent stays. Any action in the last
/// cell pays 1.
inline TabularMdp make_gridworld(int w, int h, double gamma = 0.9) {
    if (w < 1 || h < 1) throw std::invalid_argument("gridworld needs w, h >= 1");
    const int S = w * h;
    const int A = 4;
    const int dx[4] = {0, 0, -1, 1};
    const int dy[4] = {-1, 1, 0, 0};
    std::vector<double> P(static_cast<std::size_t>(S) * A * S, 0.0), r(static_cast<std::size_t>(S) * A, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int s = y * w + x;
            for (int a = 0; a < A; ++a) {
                const int nx = std::clamp(x + dx[a], 0, w - 1);
                const int ny = std::clamp(y + dy[a], 0, h - 1);
                const int t = ny * w + nx;
                P[(s * A + a) * S + t] += 0.8;
                P[(s * A + a) * S + s] += 0.2;
                if (s == S - 1) r[s * A + a] = 1.0;
            }
        }
    std::vector<double> rho(S, 1.0 / S);
    return TabularMdp::checked(S, A, gamma, std::move(rho), std::move(r), std::move(P));
}

/// Random MDP: each (s, a) row has `branching` distinct successors with
/// random weights; rewards uniform on [0,1]; rho has full support.
inline TabularMdp make_random_mdp(int n_states, int n_actions, std::uint64_t seed, int branching,
                                  double gamma = 0.9) {
    if (n_states < 1 || n_actions < 1) throw std::invalid_argument("random MDP needs n_states, n_actions >= 1");
    if (branching < 1 || branching > n_states)
        throw std::invalid_argument("branching must lie in [1, n_states]");
    RngStream rng(seed);
    const int S = n_states;
    const int A = n_actions;
    std::vector<double> P(static_cast<std::size_t>(S) * A * S, 0.0), r(static_cast<std::size_t>(S) * A, 0.0);
    std::vector<int> perm(S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            std::iota(perm.begin(), perm.end(), 0);
            for (int i = 0; i < branching; ++i) {
                const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(S - i));
                std::swap(perm[i], perm[j]);
            }
            double total = 0.0;
            std::vector<double> w(branching);
            for (auto& x : w) total += (x = 0.05 + rng.uniform());
            for (int i = 0; i < branching; ++i) P[(s * A + a) * S + perm[i]] = w[i] / total;
            r[s * A + a] = rng.uniform();
        }
    std::vector<double> rho(S);
    double total = 0.0;
    for (auto& x : rho) total += (x = 0.1 + rng.uniform());
    for (auto& x : rho) x /= total;
    return TabularMdp::checked(S, A, gamma, std::move(rho), std::move(r), std::move(P));
}

/// Parses "chain(3)", "gridworld(2,2)" or "random(5,3,7,2)".
inline TabularMdp make_from_generator(const std::string& spec, double gamma = 0.9) {
    auto open = spec.find('(');
    auto close = spec.rfind(')');
    if (open == std::string::npos || close == std::string::npos || close < open || close + 1 != spec.size())
        throw ConfigError("generator '" + spec + "': expected name(args)");
    const std::string name = spec.substr(0, open);
    std::vector<long long> args;
    std::stringstream ss(spec.substr(open + 1, close - open - 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (auto eq = tok.find('='); eq != std::string::npos) tok = tok.substr(eq + 1);  // seed=7 style
        try {
            std::size_t used = 0;
            args.push_back(std::stoll(tok, &used));
            if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("generator '" + spec + "': argument '" + tok + "' is not an integer");
        }
    }
    auto need = [&](std::size_t n) {
        if (args.size() != n)
            throw ConfigError("generator '" + name + "' takes " + std::to_string(n) + " arguments, got " +
                              std::to_string(args.size()));
    };
    try {
        if (name == "chain") {
            need(1);
            return make_chain(static_cast<int>(args[0]), gamma);
        }
        if (name == "gridworld") {
            need(2);
            return make_gridworld(static_cast<int>(args[0]), static_cast<int>(args[1]), gamma);
        }
        if (name == "random") {
            need(4);
            return make_random_mdp(static_cast<int>(args[0]), static_cast<int>(args[1]),
                                   static_cast<std::uint64_t>(args[2]), static_cast<int>(args[3]), gamma);
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError("generator '" + spec + "': " + e.what());
    }
    throw ConfigError("unknown generator '" + name + "' (expected chain, gridworld or random)");
}

}  // namespace anpg
