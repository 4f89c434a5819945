#pragma once

#include "anpg/anpg.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace anpg::testing {

/// Single-state MDP; every action loops back to the state.
inline TabularMdp one_state(std::vector<double> rewards, double gamma) {
    const int A = static_cast<int>(rewards.size());
    return TabularMdp(1, A, gamma, {1.0}, std::move(rewards), std::vector<double>(A, 1.0));
}

inline std::shared_ptr<const PolicyFamily> tabular_family(const TabularMdp& m) {
    return std::make_shared<const PolicyFamily>(PolicyFamily::tabular(m.n_states(), m.n_actions()));
}

inline std::shared_ptr<const PolicyFamily> feature_family(const TabularMdp& m, int d, std::uint64_t seed) {
    return std::make_shared<const PolicyFamily>(
        PolicyFamily::features(m.n_states(), m.n_actions(), make_random_features(m.n_states(), m.n_actions(), d, seed)));
}

inline Vector normal_vector(int d, double scale, std::uint64_t seed) {
    RngStream rng(seed);
    return detail::random_normal(d, scale, rng);
}

inline PolicyParams random_params(std::shared_ptr<const PolicyFamily> fam, std::uint64_t seed, double scale = 1.0) {
    const int d = fam->dim();
    return PolicyParams(std::move(fam), normal_vector(d, scale, seed));
}

inline TabularMdp zero_reward(const TabularMdp& m) {
    std::vector<double> rho(m.rho().begin(), m.rho().end());
    std::vector<double> trans;
    for (State s = 0; s < m.n_states(); ++s)
        for (Action a = 0; a < m.n_actions(); ++a)
            for (State n = 0; n < m.n_states(); ++n) trans.push_back(m.prob(s, a, n));
    return TabularMdp(m.n_states(), m.n_actions(), m.gamma(), rho,
                      std::vector<double>(static_cast<std::size_t>(m.n_states()) * m.n_actions(), 0.0), trans);
}

/// Fresh directory under the system temp dir, named after the running test.
inline std::filesystem::path scratch_dir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    auto dir = std::filesystem::temp_directory_path() / "anpg_tests" /
               (std::string(info->test_suite_name()) + "." + info->name());
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

}  // namespace anpg::testing
