// mdp-core: RNG streams, validation, geometric horizons, transitions, rollouts, files, generators
#include "helpers.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <map>

using namespace anpg;
using anpg::testing::one_state;

namespace {

TabularMdp two_state_valid() {
    return TabularMdp(2, 2, 0.9, {0.5, 0.5}, {0.0, 1.0, 0.5, 0.25}, {1, 0, 0, 1, 0.5, 0.5, 0.2, 0.8});
}

}  // namespace

// ---------------------------------------------------------------- RngStream

TEST(RngStream, SameSeedSameSequence) {
    RngStream a(42), b(42);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RngStream, DifferentSeedsDiffer) {
    RngStream a(1), b(2);
    int same = 0;
    for (int i = 0; i < 100; ++i) same += a() == b();
    EXPECT_EQ(same, 0);
}

TEST(RngStream, SubstreamDoesNotAdvanceParent) {
    RngStream a(7), b(7);
    auto child = a.substream(3);
    EXPECT_EQ(a(), b());
    auto child2 = RngStream(7).substream(3);
    EXPECT_EQ(child(), child2());
    EXPECT_NE(RngStream(7).substream(3)(), RngStream(7).substream(4)());
}

TEST(RngStream, SplitAdvancesParentByOne) {
    RngStream a(9), b(9);
    (void)a.split();
    (void)b();
    EXPECT_EQ(a(), b());
}

TEST(RngStream, UniformInUnitInterval) {
    RngStream r(5);
    double lo = 1, hi = 0, sum = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
    RngStream z(5);
    for (int i = 0; i < 1000; ++i) EXPECT_GT(z.uniform_open_zero(), 0.0);
}

// ---------------------------------------------------------------- validation

TEST(ValidateMdp, WellFormedIsOk) {
    const auto rep = validate_mdp(two_state_valid());
    EXPECT_TRUE(rep.ok()) << rep.summary();
}

TEST(ValidateMdp, ShortRowNamesIndexAndSum) {
    TabularMdp m(2, 2, 0.9, {0.5, 0.5}, {0, 0, 0, 0}, {1, 0, 0.6, 0.3, 0.5, 0.5, 0.2, 0.8});
    const auto rep = validate_mdp(m);
    ASSERT_EQ(rep.violations.size(), 1u);
    EXPECT_EQ(rep.violations[0], "transition row (s=0,a=1) sums to 0.9");
}

TEST(ValidateMdp, RewardOutOfRange) {
    TabularMdp m(2, 2, 0.9, {0.5, 0.5}, {0, 1.5, 0, 0}, {1, 0, 0, 1, 0.5, 0.5, 0.2, 0.8});
    const auto rep = validate_mdp(m);
    ASSERT_EQ(rep.violations.size(), 1u);
    EXPECT_NE(rep.violations[0].find("reward out of [0,1]"), std::string::npos);
    EXPECT_NE(rep.violations[0].find("(s=0,a=1)"), std::string::npos);
}

TEST(ValidateMdp, ListsEveryViolation) {
    TabularMdp m(2, 1, 1.0, {0.7, 0.7}, {-0.1, 0.2}, {1.2, -0.2, 0.5, 0.4});
    const auto rep = validate_mdp(m);
    // gamma, reward, negative entry, short row, rho
    EXPECT_EQ(rep.violations.size(), 5u) << rep.summary();
    EXPECT_THROW(TabularMdp::checked(2, 1, 1.0, {0.7, 0.7}, {-0.1, 0.2}, {1.2, -0.2, 0.5, 0.4}),
                 std::invalid_argument);
}

TEST(ValidateMdp, ShapeMismatchRejectedAtConstruction) {
    EXPECT_THROW(TabularMdp(2, 2, 0.9, {1.0}, {0, 0, 0, 0}, std::vector<double>(8, 0.5)), std::invalid_argument);
    EXPECT_THROW(TabularMdp(2, 2, 0.9, {0.5, 0.5}, {0, 0, 0}, std::vector<double>(8, 0.5)), std::invalid_argument);
    EXPECT_THROW(TabularMdp(2, 2, 0.9, {0.5, 0.5}, {0, 0, 0, 0}, std::vector<double>(7, 0.5)), std::invalid_argument);
    EXPECT_THROW(TabularMdp(0, 2, 0.9, {}, {}, {}), std::invalid_argument);
}

// ---------------------------------------------------------------- geometric

TEST(SampleGeometric, ProbabilityOneIsAlwaysZero) {
    RngStream r(1);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_geometric(r, 1.0), 0);
}

TEST(SampleGeometric, MeanAtGammaPointEight) {
    RngStream r(2);
    const int n = 1000000;
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += static_cast<double>(sample_geometric(r, 0.2));
    EXPECT_NEAR(sum / n, 4.0, 0.04);
}

TEST(SampleGeometric, MassAtZero) {
    RngStream r(3);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += sample_geometric(r, 0.5) == 0;
    EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 3 * std::sqrt(0.25 / n));
}

TEST(SampleGeometric, RejectsBadProbability) {
    RngStream r(4);
    EXPECT_THROW(sample_geometric(r, 0.0), std::invalid_argument);
    EXPECT_THROW(sample_geometric(r, -0.1), std::invalid_argument);
    EXPECT_THROW(sample_geometric(r, 1.5), std::invalid_argument);
    EXPECT_THROW(sample_geometric(r, std::nan("")), std::invalid_argument);
}

class GeometricPmf : public ::testing::TestWithParam<double> {};

// Bins {0..30, >=31}; sparse tail bins (expected count < 5) are merged into
// the overflow bin before computing the statistic.
TEST_P(GeometricPmf, ChiSquaredGoodnessOfFit) {
    const double p = GetParam();
    const int n = 100000;
    std::vector<double> observed(32, 0.0), expected(32, 0.0);
    RngStream r(static_cast<std::uint64_t>(p * 1000));
    for (int i = 0; i < n; ++i) observed[std::min<long>(sample_geometric(r, p), 31)] += 1;
    double tail = 1.0;
    for (int t = 0; t < 31; ++t) {
        expected[t] = n * p * std::pow(1 - p, t);
        tail -= p * std::pow(1 - p, t);
    }
    expected[31] = n * tail;

    std::vector<double> o, e;
    double o_acc = 0, e_acc = 0;
    for (int t = 31; t >= 0; --t) {
        o_acc += observed[t];
        e_acc += expected[t];
        if (e_acc >= 5.0) {
            o.push_back(o_acc);
            e.push_back(e_acc);
            o_acc = e_acc = 0;
        }
    }
    if (e_acc > 0) {
        o.back() += o_acc;
        e.back() += e_acc;
    }
    double chi2 = 0;
    for (std::size_t i = 0; i < o.size(); ++i) chi2 += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    const boost::math::chi_squared dist(static_cast<double>(o.size() - 1));
    EXPECT_LT(chi2, boost::math::quantile(dist, 1 - 1e-3)) << "bins=" << o.size();
}

INSTANTIATE_TEST_SUITE_P(SuccessProbabilities, GeometricPmf, ::testing::Values(0.1, 0.2, 0.5));

// ---------------------------------------------------------------- transitions

TEST(SampleTransition, PointMass) {
    std::vector<double> P(5 * 1 * 5, 0.0);
    for (int s = 0; s < 5; ++s) P[s * 5 + 3] = 1.0;
    TabularMdp m(5, 1, 0.9, std::vector<double>(5, 0.2), std::vector<double>(5, 0.0), P);
    RngStream r(1);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_transition(m, i % 5, 0, r), 3);
}

TEST(SampleTransition, UniformRow) {
    TabularMdp m(4, 1, 0.9, std::vector<double>(4, 0.25), std::vector<double>(4, 0.0), std::vector<double>(16, 0.25));
    RngStream r(2);
    const int n = 100000;
    std::vector<int> c(4, 0);
    for (int i = 0; i < n; ++i) ++c[sample_transition(m, 0, 0, r)];
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(c[k] / double(n), 0.25, 3 * std::sqrt(0.25 * 0.75 / n));
}

TEST(SampleTransition, TwoPointRow) {
    TabularMdp m(2, 1, 0.9, {0.5, 0.5}, {0, 0}, {0.7, 0.3, 0.7, 0.3});
    RngStream r(3);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i) zeros += sample_transition(m, 1, 0, r) == 0;
    EXPECT_NEAR(zeros / double(n), 0.7, 3 * std::sqrt(0.21 / n));
}

TEST(SampleTransition, OutOfRangeRejected) {
    const auto m = two_state_valid();
    RngStream r(4);
    EXPECT_THROW(sample_transition(m, 2, 0, r), std::out_of_range);
    EXPECT_THROW(sample_transition(m, -1, 0, r), std::out_of_range);
    EXPECT_THROW(sample_transition(m, 0, 2, r), std::out_of_range);
}

// ---------------------------------------------------------------- rollouts

namespace {
auto uniform_policy(int A) {
    return [A](State, RngStream& rng) { return static_cast<Action>(rng.uniform() * A); };
}
}  // namespace

TEST(Rollout, HorizonZeroIsOneStep) {
    const auto m = two_state_valid();
    RngStream r(1);
    const auto t = rollout(m, uniform_policy(2), 1, Action{0}, 0, r);
    ASSERT_EQ(t.steps.size(), 1u);
    EXPECT_DOUBLE_EQ(t.total_reward, m.reward(1, 0));
}

TEST(Rollout, ZeroRewardsGiveZeroReturn) {
    const auto m = anpg::testing::zero_reward(make_random_mdp(4, 3, 5, 2));
    RngStream r(2);
    for (long T : {0L, 1L, 7L, 50L}) EXPECT_EQ(rollout(m, uniform_policy(3), 0, std::nullopt, T, r).total_reward, 0.0);
}

TEST(Rollout, CountsStepsZeroThroughT) {
    const auto m = one_state({1.0}, 0.5);
    RngStream r(3);
    const auto t = rollout(m, uniform_policy(1), 0, std::nullopt, 5, r);
    EXPECT_EQ(t.steps.size(), 6u);
    EXPECT_DOUBLE_EQ(t.total_reward, 6.0);
}

TEST(Rollout, TotalIsExactSumAndLengthIsHorizonPlusOne) {
    const auto m = make_random_mdp(5, 3, 11, 3);
    RngStream r(4);
    for (long T = 0; T < 40; ++T) {
        const auto t = rollout(m, uniform_policy(3), static_cast<State>(T % 5), std::nullopt, T, r);
        ASSERT_EQ(t.steps.size(), static_cast<std::size_t>(T + 1));
        double s = 0;
        for (const auto& st : t.steps) s += st.reward;
        EXPECT_EQ(s, t.total_reward);
    }
}

TEST(Rollout, SuppliedFirstActionIsUsed) {
    const auto m = two_state_valid();
    RngStream r(5);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(rollout(m, uniform_policy(2), 0, Action{1}, 3, r).steps[0].action, 1);
}

TEST(Rollout, DeterministicGivenSeed) {
    const auto m = make_random_mdp(6, 3, 2, 3);
    RngStream a(77), b(77);
    const auto ta = rollout(m, uniform_policy(3), 2, std::nullopt, 30, a);
    const auto tb = rollout(m, uniform_policy(3), 2, std::nullopt, 30, b);
    ASSERT_EQ(ta.steps.size(), tb.steps.size());
    for (std::size_t i = 0; i < ta.steps.size(); ++i) {
        EXPECT_EQ(ta.steps[i].state, tb.steps[i].state);
        EXPECT_EQ(ta.steps[i].action, tb.steps[i].action);
    }
}

TEST(Rollout, StateMarginalMatchesPropagatedDistribution) {
    const auto m = make_random_mdp(4, 2, 9, 2);
    const int S = 4, n = 100000, T = 5;
    // uniform policy kernel
    Matrix P = Matrix::Zero(S, S);
    for (State s = 0; s < S; ++s)
        for (Action a = 0; a < 2; ++a)
            for (State t = 0; t < S; ++t) P(s, t) += 0.5 * m.prob(s, a, t);
    std::vector<Matrix> counts(T + 1, Matrix::Zero(1, S));
    RngStream r(10);
    for (int i = 0; i < n; ++i) {
        const State s0 = m.sample_initial(r);
        const auto tr = rollout(m, uniform_policy(2), s0, std::nullopt, T, r);
        for (int t = 0; t <= T; ++t) counts[t](0, tr.steps[t].state) += 1.0 / n;
    }
    Eigen::RowVectorXd dist(S);
    for (State s = 0; s < S; ++s) dist(s) = m.rho()[s];
    for (int t = 0; t <= T; ++t) {
        EXPECT_LE(stats::total_variation(counts[t].row(0), dist), 0.02) << "t=" << t;
        dist = dist * P;
    }
}

TEST(Rollout, NegativeHorizonRejected) {
    const auto m = two_state_valid();
    RngStream r(1);
    EXPECT_THROW(rollout(m, uniform_policy(2), 0, std::nullopt, -1, r), std::invalid_argument);
}

// ---------------------------------------------------------------- text format / files

TEST(TextDocument, ParsesScalarsListsAndComments) {
    const auto doc = TextDocument::parse(
        "# header\n"
        "gamma = 0.9   # trailing\n"
        "name = demo\n"
        "rho = [0.5, 0.5]\n"
        "reward = [ 1 0\n"
        "           0 1 ]\n");
    EXPECT_DOUBLE_EQ(doc.get_double("gamma"), 0.9);
    EXPECT_EQ(doc.get_string("name"), "demo");
    EXPECT_EQ(doc.get_doubles("rho"), (std::vector<double>{0.5, 0.5}));
    EXPECT_EQ(doc.get_doubles("reward").size(), 4u);
    EXPECT_EQ(doc.get_int("missing", 7), 7);
}

TEST(TextDocument, ErrorsNameTheKey) {
    try {
        TextDocument::parse("a = 1\na = 2\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
    }
    const auto doc = TextDocument::parse("x = abc\n");
    try {
        (void)doc.get_double("x");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
    }
    EXPECT_THROW((void)doc.get_string("nope"), ConfigError);
    EXPECT_THROW(TextDocument::parse("v = [1 2\n"), ConfigError);
}

TEST(MdpFile, RoundTripIsExact) {
    const auto m = make_random_mdp(5, 3, 21, 2, 0.85);
    const auto text = serialize_mdp(m);
    const auto back = mdp_from_document(TextDocument::parse(text));
    EXPECT_EQ(serialize_mdp(back), text);
    EXPECT_EQ(back.gamma(), 0.85);
    for (State s = 0; s < 5; ++s)
        for (Action a = 0; a < 3; ++a) {
            EXPECT_EQ(back.reward(s, a), m.reward(s, a));
            for (State t = 0; t < 5; ++t) EXPECT_EQ(back.prob(s, a, t), m.prob(s, a, t));
        }
}

TEST(MdpFile, InvalidContentRejected) {
    EXPECT_THROW(mdp_from_document(TextDocument::parse("n_states = 1\nn_actions = 1\ngamma = 0.9\nrho = [1]\n"
                                                       "reward = [2]\ntransition = [1]\n")),
                 std::invalid_argument);
    EXPECT_THROW(mdp_from_document(TextDocument::parse("n_states = 1\nn_actions = 1\n")), ConfigError);
}

// ---------------------------------------------------------------- generators

TEST(Generators, ChainIsDeterministicAndValid) {
    const auto m = make_from_generator("chain(3)");
    EXPECT_EQ(m.n_states(), 3);
    EXPECT_TRUE(validate_mdp(m).ok());
    for (State s = 0; s < 3; ++s)
        for (Action a = 0; a < 2; ++a) {
            int ones = 0;
            for (State t = 0; t < 3; ++t) ones += m.prob(s, a, t) == 1.0;
            EXPECT_EQ(ones, 1);
        }
}

TEST(Generators, RandomIsByteReproducible) {
    const auto a = serialize_mdp(make_from_generator("random(5,3,seed=7,branching=2)"));
    const auto b = serialize_mdp(make_from_generator("random(5,3,7,2)"));
    EXPECT_EQ(a, b);
    EXPECT_NE(a, serialize_mdp(make_from_generator("random(5,3,8,2)")));
    const auto m = make_from_generator("random(5,3,7,2)");
    for (State s = 0; s < 5; ++s)
        for (Action a2 = 0; a2 < 3; ++a2) {
            int support = 0;
            for (State t = 0; t < 5; ++t) support += m.prob(s, a2, t) > 0;
            EXPECT_EQ(support, 2);
        }
}

TEST(Generators, GridworldShape) {
    const auto m = make_from_generator("gridworld(2,2)");
    EXPECT_EQ(m.n_states(), 4);
    EXPECT_EQ(m.n_actions(), 4);
    EXPECT_TRUE(validate_mdp(m).ok());
}

TEST(Generators, BadSpecsRejected) {
    EXPECT_THROW(make_from_generator("chain(1)"), ConfigError);
    EXPECT_THROW(make_from_generator("chain(3,4)"), ConfigError);
    EXPECT_THROW(make_from_generator("random(3,2,1,5)"), ConfigError);
    EXPECT_THROW(make_from_generator("maze(3)"), ConfigError);
    EXPECT_THROW(make_from_generator("chain(x)"), ConfigError);
    EXPECT_THROW(make_from_generator("chain"), ConfigError);
}

TEST(Generators, GammaApplied) {
    EXPECT_EQ(make_from_generator("chain(4)", 0.7).gamma(), 0.7);
    EXPECT_EQ(make_from_generator("chain(4)", 0.7).with_gamma(0.5).gamma(), 0.5);
}
