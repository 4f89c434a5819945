// policy: softmax tables, scores vs finite differences, snapshots, feature files
#include "helpers.hpp"

using namespace anpg;
using anpg::testing::feature_family;
using anpg::testing::random_params;
using anpg::testing::tabular_family;

namespace {

// log pi(a|s) recomputed from scratch, for finite differences.
double log_prob(const PolicyFamily& fam, const Vector& theta, State s, Action a) {
    Vector z(fam.n_actions());
    for (Action b = 0; b < fam.n_actions(); ++b) {
        if (fam.kind() == FamilyKind::tabular_softmax)
            z(b) = theta(s * fam.n_actions() + b);
        else
            z(b) = fam.feature_table().row(s * fam.n_actions() + b).dot(theta);
    }
    const double m = z.maxCoeff();
    return z(a) - m - std::log((z.array() - m).exp().sum());
}

}  // namespace

TEST(Policy, ZeroThetaIsUniform) {
    const auto m = make_random_mdp(3, 4, 1, 2);
    const auto p = PolicyParams::zeros(tabular_family(m));
    const Matrix t = policy_table(p);
    EXPECT_TRUE(t.isApproxToConstant(0.25, 1e-15));
}

TEST(Policy, RowsAreDistributions) {
    const auto m = make_random_mdp(4, 3, 2, 2);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto p = random_params(feature_family(m, 3, seed), seed, 5.0);
        const Matrix t = policy_table(p);
        EXPECT_TRUE((t.array() >= 0.0).all());
        EXPECT_LE((t.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-14);
    }
}

TEST(Policy, LargeLogitsStayFinite) {
    const auto m = make_random_mdp(2, 3, 3, 2);
    const auto fam = tabular_family(m);
    Vector th = Vector::Zero(6);
    th(0) = 800;
    th(1) = -800;
    const Matrix t = policy_table(PolicyParams(fam, th));
    EXPECT_TRUE(t.allFinite());
    EXPECT_DOUBLE_EQ(t(0, 0), 1.0);
    EXPECT_TRUE(score(PolicyParams(fam, th), 0, 1).allFinite());
}

TEST(Policy, ScoreMatchesFiniteDifferences) {
    const auto m = make_random_mdp(3, 3, 4, 2);
    for (auto fam : {tabular_family(m), feature_family(m, 4, 9)}) {
        const auto p = random_params(fam, 17);
        const double h = 1e-6;
        for (State s = 0; s < 3; ++s)
            for (Action a = 0; a < 3; ++a) {
                Vector fd(p.dim());
                for (int i = 0; i < p.dim(); ++i) {
                    Vector tp = p.theta, tm = p.theta;
                    tp(i) += h;
                    tm(i) -= h;
                    fd(i) = (log_prob(*fam, tp, s, a) - log_prob(*fam, tm, s, a)) / (2 * h);
                }
                EXPECT_LE((score(p, s, a) - fd).norm(), 1e-8) << to_string(fam->kind()) << " s=" << s << " a=" << a;
            }
    }
}

TEST(Policy, ScoreHasZeroMeanUnderPolicy) {
    const auto m = make_random_mdp(3, 4, 5, 2);
    const auto p = random_params(feature_family(m, 3, 1), 2);
    for (State s = 0; s < 3; ++s) {
        const Vector pi = action_distribution(p, s);
        Vector mean = Vector::Zero(p.dim());
        for (Action a = 0; a < 4; ++a) mean += pi(a) * score(p, s, a);
        EXPECT_LE(mean.norm(), 1e-14);
    }
}

TEST(Policy, ShapeAndFiniteChecks) {
    const auto m = make_random_mdp(2, 2, 1, 2);
    const auto fam = tabular_family(m);
    EXPECT_THROW(PolicyParams(fam, Vector::Zero(3)), std::invalid_argument);
    Vector bad = Vector::Zero(4);
    bad(2) = std::nan("");
    EXPECT_THROW(PolicyParams(fam, bad), std::invalid_argument);
    const auto p = PolicyParams::zeros(fam);
    EXPECT_THROW(action_distribution(p, 2), std::out_of_range);
    EXPECT_THROW(score(p, 0, 5), std::out_of_range);
    EXPECT_THROW(PolicyFamily::features(2, 2, Matrix::Zero(3, 2)), std::invalid_argument);
}

TEST(Policy, TabularEffectiveBasisIsOrthonormalAndKillsShifts) {
    const auto fam = PolicyFamily::tabular(3, 4);
    const Matrix b = fam.effective_basis();
    ASSERT_EQ(b.cols(), 9);
    EXPECT_LE((b.transpose() * b - Matrix::Identity(9, 9)).norm(), 1e-14);
    for (int s = 0; s < 3; ++s) {
        Vector shift = Vector::Zero(12);
        shift.segment(s * 4, 4).setOnes();
        EXPECT_LE((b.transpose() * shift).norm(), 1e-14);
    }
}

TEST(PolicySnapshot, SamplingFrequenciesMatchProbabilities) {
    const auto m = make_random_mdp(2, 4, 6, 2);
    const auto p = random_params(tabular_family(m), 3);
    const PolicySnapshot snap(p);
    RngStream r(8);
    const int n = 200000;
    Vector c = Vector::Zero(4);
    for (int i = 0; i < n; ++i) c(snap.sample_action(1, r)) += 1.0 / n;
    EXPECT_LE(stats::total_variation(c, Vector(snap.probs.row(1).transpose())), 0.01);
    for (Action a = 0; a < 4; ++a) EXPECT_EQ(Vector(snap.score_row(1, a).transpose()), score(p, 1, a));
}

TEST(PolicySnapshot, NeverSamplesZeroProbabilityTail) {
    const auto fam = std::make_shared<const PolicyFamily>(PolicyFamily::tabular(1, 3));
    Vector th(3);
    th << 0, 0, -2000;
    const PolicySnapshot snap(PolicyParams(fam, th));
    ASSERT_EQ(snap.probs(0, 2), 0.0);
    RngStream r(1);
    for (int i = 0; i < 100000; ++i) EXPECT_NE(snap.sample_action(0, r), 2);
}

TEST(Features, RandomFeaturesAreSeeded) {
    EXPECT_EQ(make_random_features(3, 2, 4, 11), make_random_features(3, 2, 4, 11));
    EXPECT_NE(make_random_features(3, 2, 4, 11), make_random_features(3, 2, 4, 12));
}

TEST(Features, FileRoundTrip) {
    const auto dir = anpg::testing::scratch_dir();
    const auto fam = PolicyFamily::features(3, 2, make_random_features(3, 2, 2, 5));
    const auto path = anpg::testing::write_text(dir / "f.txt", features_to_document(fam).to_string());
    const auto back = load_features(path.string());
    EXPECT_EQ(back.feature_table(), fam.feature_table());
    EXPECT_THROW(load_features((dir / "missing.txt").string()), ConfigError);
    anpg::testing::write_text(dir / "short.txt", "n_states = 1\nn_actions = 2\ndim = 2\nfeatures = [1 2 3]\n");
    EXPECT_THROW(load_features((dir / "short.txt").string()), ConfigError);
}

TEST(Features, ShippedCrossFeaturesLoad) {
    const auto fam = load_features(std::string(ANPG_CONFIG_DIR) + "/cross_features.txt");
    EXPECT_EQ(fam.n_states(), 2);
    EXPECT_EQ(fam.n_actions(), 4);
    EXPECT_EQ(fam.dim(), 2);
}
