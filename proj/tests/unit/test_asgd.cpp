// inner-asgd: rates, the four-sequence recursion, tail averaging, bias decay
#include "helpers.hpp"

using namespace anpg;
using anpg::testing::feature_family;
using anpg::testing::random_params;
using anpg::testing::tabular_family;

namespace {

// Independent transcription of the recursion on a quadratic with Hessian F and linear term b.
Vector reference_tail_average(const Matrix& F, const Vector& b, int H, double alpha, double beta, double xi,
                              double delta) {
    Vector x = Vector::Zero(b.size()), v = x, acc = x;
    int n = 0;
    for (int h = 1; h <= H; ++h) {
        const Vector y = alpha * x + (1 - alpha) * v;
        const Vector g = F * y - b;
        x = y - delta * g;
        v = beta * y + (1 - beta) * v - xi * g;
        if (2 * h > H) {
            acc += x;
            ++n;
        }
    }
    return acc / n;
}

}  // namespace

TEST(Rates, UnitConstants) {
    const auto r = make_rates(1.0, 1.0);
    EXPECT_NEAR(r.alpha, 0.870268, 1e-6);
    EXPECT_NEAR(r.beta, 1.0 / 9.0, 1e-15);
    EXPECT_NEAR(r.xi, 0.149071, 1e-6);
    EXPECT_NEAR(r.delta, 0.2, 1e-15);
}

TEST(Rates, Invariants) {
    for (double G : {0.5, 1.0, 1.4, 3.0})
        for (double mu : {1e-3, 0.05, 0.2}) {
            if (mu >= 9 * G * G) continue;
            const auto r = make_rates(G, mu);
            EXPECT_GT(r.alpha, 0.0);
            EXPECT_LT(r.alpha, 1.0);
            EXPECT_GT(r.beta, 0.0);
            EXPECT_LT(r.beta, 1.0);
            EXPECT_GT(r.xi, 0.0);
            EXPECT_GT(r.delta, 0.0);
            EXPECT_NEAR(r.xi / r.delta, 5.0 / (3.0 * std::sqrt(5.0)), 1e-12);
        }
    EXPECT_THROW(make_rates(0.0, 0.1), std::invalid_argument);
    EXPECT_THROW(make_rates(1.0, 0.0), std::invalid_argument);
    EXPECT_THROW(make_rates(0.1, 1.0), std::invalid_argument);
}

TEST(Recursion, MatchesIndependentTranscription) {
    const auto m = make_random_mdp(3, 3, 1, 2, 0.8);
    const auto p = random_params(feature_family(m, 3, 2), 3);
    const auto ev = evaluate_exact(m, p);
    const auto r = make_rates(1.2, 0.05);
    for (int H : {2, 3, 10, 64}) {
        const Vector got = run_recursion(3, H, r, [&](const Vector& y) { return Vector(ev.ng.fisher * y - ev.ng.pg); });
        const Vector ref = reference_tail_average(ev.ng.fisher, ev.ng.pg, H, r.alpha, r.beta, r.xi, r.delta);
        EXPECT_LE((got - ref).norm(), 1e-12 * std::max(1.0, ref.norm())) << "H=" << H;
    }
}

TEST(Recursion, GradientDescentSpecialCase) {
    Matrix F(2, 2);
    F << 2.0, 0.5, 0.5, 1.0;
    const Vector b = Vector::Ones(2);
    const double step = 0.3;
    Vector x = Vector::Zero(2), acc = x;
    for (int h = 1; h <= 8; ++h) {
        x -= step * (F * x - b);
        if (h > 4) acc += x;
    }
    const Vector got =
        run_recursion(2, 8, AsgdRates::gradient_descent(step), [&](const Vector& y) { return Vector(F * y - b); });
    EXPECT_LE((got - acc / 4).norm(), 1e-15);
}

TEST(Recursion, OneGradientCallPerStepAndTailCount) {
    int calls = 0;
    AsgdState last;
    const auto r = make_rates(1.0, 0.1);
    (void)run_recursion(
        2, 11, r,
        [&](const Vector& y) {
            ++calls;
            return Vector(y);
        },
        [&](const AsgdState& s) { last = s; });
    EXPECT_EQ(calls, 11);
    EXPECT_EQ(last.h, 11);
    EXPECT_EQ(last.tail_count, 6);  // h = 6..11
    EXPECT_THROW(AsgdState::start(2, 1), std::invalid_argument);
    EXPECT_THROW(AsgdState::start(2, 4).tail_average(), std::logic_error);
}

TEST(Recursion, MinimizerIsFixedPoint) {
    Matrix F(2, 2);
    F << 1.0, 0.2, 0.2, 0.5;
    const Vector b(Vector::Constant(2, 0.7));
    const Vector star = F.ldlt().solve(b);
    auto state = AsgdState::start_at(star, 20);
    for (int h = 0; h < 20; ++h) state = asgd_step(state, make_rates(1.0, 0.3), [&](const Vector& y) { return Vector(F * y - b); });
    EXPECT_LE((state.tail_average() - star).norm(), 1e-14);
}

TEST(Recursion, NonFiniteGradientRaises) {
    const auto r = make_rates(1.0, 0.1);
    EXPECT_THROW(run_recursion(2, 4, r, [](const Vector&) { return Vector::Constant(2, std::nan("")); }),
                 NumericalError);
}

TEST(DeterministicBias, DecaysWithHForBothSolvers) {
    const auto m = make_random_mdp(4, 2, 1, 2, 0.9);
    const auto p = random_params(tabular_family(m), 4, 0.5);
    const auto ev = evaluate_exact(m, p);
    const double G = max_score_norm(p);
    const double mu = restricted_fisher_min_eigenvalue(ev.ng.fisher, *p.family);
    for (const auto& rates : {make_rates(G, mu), AsgdRates::gradient_descent(1.0 / (G * G))}) {
        double prev = std::numeric_limits<double>::infinity();
        for (int H : {256, 1024, 4096, 16384}) {
            const double e = deterministic_bias(ev, H, rates);
            if (prev > 1e-10) {  // below that it is rounding
                EXPECT_LT(e, prev) << "H=" << H;
            }
            prev = e;
        }
        EXPECT_LT(prev, 1e-3 * ev.ng.omega_star.norm());
    }
}

TEST(DeterministicBias, ProbeRequiresIncreasingH) {
    const auto m = make_random_mdp(2, 2, 1, 2);
    const auto p = PolicyParams::zeros(tabular_family(m));
    EXPECT_THROW(bias_decay_probe(m, p, {64, 32}, make_rates(1.0, 0.1)), std::invalid_argument);
    EXPECT_EQ(bias_decay_probe(m, p, {8, 16}, make_rates(1.0, 0.1)).size(), 2u);
}

TEST(InnerLoop, DeterministicModeMatchesBiasRecursion) {
    const auto m = make_random_mdp(3, 2, 2, 2, 0.8);
    const auto p = random_params(tabular_family(m), 1);
    const auto ev = evaluate_exact(m, p);
    const auto r = make_rates(1.0, 0.05);
    RngStream rng(0);
    const auto out = run_inner_loop(m, p, 32, r, GradientMode::deterministic, rng);
    EXPECT_EQ(out.grad_calls, 32);
    EXPECT_EQ(out.samples_used, 0);
    const double bias = deterministic_bias(ev, 32, r);
    EXPECT_NEAR((row_space_projector(ev.ng.fisher, 1e-10) * (out.omega - ev.ng.omega_star)).norm(), bias, 1e-12);
}

// The recursion is affine in the gradient noise, so the stochastic tail
// average is unbiased for the noiseless one.
TEST(InnerLoop, StochasticMeanMatchesNoiselessRecursion) {
    const auto m = make_random_mdp(2, 2, 3, 2, 0.5);
    const auto p = random_params(tabular_family(m), 2);
    const auto ev = evaluate_exact(m, p);
    const auto r = make_rates(1.0, 0.1);
    const int H = 8;
    const Vector noiseless =
        run_recursion(4, H, r, [&](const Vector& y) { return Vector(ev.ng.fisher * y - ev.ng.pg); });
    RngStream rng(4);
    std::vector<stats::RunningMoments> mom(4);
    long samples = 0;
    for (int i = 0; i < 20000; ++i) {
        auto sub = rng.substream(static_cast<std::uint64_t>(i));
        const auto out = run_inner_loop(m, p, H, r, GradientMode::stochastic, sub);
        ASSERT_EQ(out.grad_calls, H);
        ASSERT_GE(out.samples_used, 2 * H);
        samples += out.samples_used;
        for (int j = 0; j < 4; ++j) mom[j].add(out.omega(j));
    }
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(mom[j].mean(), noiseless(j), 4 * mom[j].standard_error()) << "j=" << j;
    // each estimator call costs 2 + T1 + T2 steps, E[T] = gamma/(1-gamma) = 1
    EXPECT_NEAR(samples / (20000.0 * H), 4.0, 0.05);
}

TEST(InnerLoop, SgdRejectsNonPositiveStep) {
    const auto m = make_random_mdp(2, 2, 1, 2);
    const auto p = PolicyParams::zeros(tabular_family(m));
    RngStream rng(1);
    EXPECT_THROW(sgd_inner_loop(m, p, 8, 0.0, rng), std::invalid_argument);
    EXPECT_EQ(sgd_inner_loop(m, p, 8, 0.5, rng).grad_calls, 8);
}

TEST(InnerLoop, SameSeedSameOmega) {
    const auto m = make_random_mdp(3, 2, 1, 2, 0.9);
    const auto p = random_params(tabular_family(m), 1);
    RngStream a(5), b(5);
    const auto r = make_rates(1.0, 0.1);
    EXPECT_EQ(run_inner_loop(m, p, 16, r, GradientMode::stochastic, a).omega,
              run_inner_loop(m, p, 16, r, GradientMode::stochastic, b).omega);
}
