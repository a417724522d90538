#include <gtest/gtest.h>

#include <oracles.hpp>
#include <varhaz/simgen.hpp>

#include <cmath>

using namespace varhaz;

namespace {

/// Copula uniforms S_j(T_j | V, Z) recovered from generated failure times.
std::vector<std::vector<double>> copula_uniforms(const SimScenario& scn) {
    const auto times = simulate_failure_times(scn);
    const auto factor = covariate_factor(scn);
    std::vector<std::vector<double>> u(scn.J, std::vector<double>(scn.n));
    for (int i = 0; i < scn.n; ++i) {
        const auto cov = gen_covariates(scn, i, factor);
        for (int j = 0; j < scn.J; ++j) {
            const double eta = scn.beta(cov.v[j]).dot(cov.z[j]) + scn.g(cov.v[j]);
            u[j][i] = std::exp(-scn.lambda_star[j] * std::pow(times[i][j], 4) * std::exp(eta));
        }
    }
    return u;
}

double censored_fraction(const Dataset& ds) {
    int censored = 0;
    for (const auto& r : ds.slots()) censored += r.event ? 0 : 1;
    return static_cast<double>(censored) / ds.slots().size();
}

} // namespace

TEST(Covariates, CorrelatedNormalMoments) {
    auto scn = set1_scenario(0.25, 2.0, 100000, 3);
    const auto factor = covariate_factor(scn);
    double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0, vmin = 1e9, vmax = -1e9;
    long m = 0;
    for (int i = 0; i < scn.n; ++i) {
        const auto cov = gen_covariates(scn, i, factor);
        for (int j = 0; j < scn.J; ++j) {
            const double a = cov.z[j](0), b = cov.z[j](1);
            s1 += a, s2 += b, s11 += a * a, s22 += b * b, s12 += a * b;
            vmin = std::min(vmin, cov.v[j]);
            vmax = std::max(vmax, cov.v[j]);
            ++m;
        }
    }
    const double var1 = s11 / m - (s1 / m) * (s1 / m);
    const double var2 = s22 / m - (s2 / m) * (s2 / m);
    const double corr = (s12 / m - s1 / m * s2 / m) / std::sqrt(var1 * var2);
    EXPECT_NEAR(corr, 0.4472, 0.01);
    EXPECT_NEAR(std::sqrt(var1), 5.0, 0.05);
    EXPECT_NEAR(std::sqrt(var2), 5.0, 0.05);
    EXPECT_GE(vmin, 0.0);
    EXPECT_LE(vmax, 3.0);

    auto two = set2_scenario(0.25, 2.0, 100000, 3);
    const auto f2 = covariate_factor(two);
    double t1 = 0, t11 = 0;
    long m2 = 0;
    for (int i = 0; i < two.n; ++i)
        for (const auto& z : gen_covariates(two, i, f2).z) t1 += z(0), t11 += z(0) * z(0), ++m2;
    EXPECT_NEAR(std::sqrt(t11 / m2 - (t1 / m2) * (t1 / m2)), 1.0, 0.01);
}

TEST(Copula, SequentialInversionMatchesConditionalLaws) {
    for (double theta : {0.25, 1.5, 4.0})
        for (const auto& q : std::vector<std::vector<double>>{{0.3, 0.6, 0.2}, {0.9, 0.05, 0.7}, {0.5, 0.5, 0.5}}) {
            const auto a = clayton_powers(theta, q);
            EXPECT_NEAR(a[0], std::pow(q[0], -theta), 1e-12);
            // P(U2 <= u2 | U1 = u1) = u1^{-theta-1} C(u1, u2)^{1+theta}
            const double u1 = std::pow(a[0], -1 / theta);
            const double s2 = a[0] + a[1] - 1.0;
            EXPECT_NEAR(std::pow(u1, -theta - 1) * std::pow(s2, -1 / theta - 1), q[1], 1e-12);
            // P(U3 <= u3 | U1, U2) = (C3 / C2)^{1 + 2 theta} in the power sums
            const double s3 = s2 + a[2] - 1.0;
            EXPECT_NEAR(std::pow(s3 / s2, -1 / theta - 2), q[2], 1e-12);
        }
}

TEST(Copula, KendallTauMatchesTheta) {
    for (double theta : {0.25, 1.5, 4.0}) {
        const auto u = copula_uniforms(set1_scenario(theta, 2.0, 100000, 11));
        const double target = theta / (2.0 + theta);
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b)
                EXPECT_NEAR(oracle::kendall_tau(u[a], u[b]), target, 0.01) << "theta " << theta;
    }
}

TEST(Copula, JointSurvivalMatchesClayton) {
    const double theta = 1.5;
    const auto u = copula_uniforms(set1_scenario(theta, 2.0, 100000, 12));
    for (const auto& s : std::vector<std::vector<double>>{{0.5, 0.5, 0.5}, {0.2, 0.7, 0.4}, {0.9, 0.3, 0.8}}) {
        int hits = 0;
        for (std::size_t i = 0; i < u[0].size(); ++i) hits += (u[0][i] <= s[0] && u[1][i] <= s[1] && u[2][i] <= s[2]);
        const double p = oracle::clayton_cdf(theta, s);
        const double freq = static_cast<double>(hits) / u[0].size();
        EXPECT_NEAR(freq, p, 3.0 * std::sqrt(p * (1 - p) / u[0].size()));
    }
}

TEST(Marginals, UniformAfterProbabilityTransform) {
    for (const auto& scn : {set1_scenario(4.0, 2.0, 5000, 13), set2_scenario(0.25, 2.0, 5000, 13)}) {
        const auto u = copula_uniforms(scn);
        for (int j = 0; j < scn.J; ++j)
            EXPECT_GT(oracle::ks_pvalue(u[j], [](double x) { return std::clamp(x, 0.0, 1.0); }), 0.01)
                << scn.id << " member " << j;
    }
}

TEST(Censoring, HugeBoundCensorsAlmostNothing) {
    EXPECT_LT(censored_fraction(simulate_dataset(set1_scenario(0.25, 1e6, 2000, 4))), 1e-3);
}

TEST(Censoring, BoundDoesNotChangeFailureTimes) {
    const auto a = simulate_dataset(set1_scenario(0.25, 2.0, 300, 5));
    const auto b = simulate_dataset(set1_scenario(0.25, 5.0, 300, 5));
    int shared = 0;
    for (std::size_t s = 0; s < a.slots().size(); ++s) {
        const auto& ra = a.slots()[s];
        const auto& rb = b.slots()[s];
        EXPECT_EQ(ra.v, rb.v);
        EXPECT_EQ(ra.z, rb.z);
        if (ra.event && rb.event) {
            EXPECT_EQ(ra.time, rb.time);
            ++shared;
        }
    }
    EXPECT_GT(shared, 100);
    EXPECT_LT(censored_fraction(b), censored_fraction(a));
}

TEST(Simulate, ShapeAndIds) {
    const auto ds = simulate_dataset(set1_scenario());
    EXPECT_EQ(ds.slots().size(), 600u);
    EXPECT_EQ(ds.n(), 200);
    EXPECT_EQ(ds.members(), 3);
    EXPECT_EQ(ds.dim(), 2);
    EXPECT_EQ(ds.cluster_ids().front(), 1);
    EXPECT_EQ(ds.cluster_ids().back(), 200);
}

TEST(Simulate, DeterministicAcrossWorkersAndSeeds) {
    const auto scn = set1_scenario(1.5, 2.0, 400, 77);
    const auto a = simulate_dataset(scn, 1);
    const auto b = simulate_dataset(scn, 3);
    auto other = scn;
    other.seed = 78;
    const auto c = simulate_dataset(other, 1);
    int differ = 0;
    for (std::size_t s = 0; s < a.slots().size(); ++s) {
        EXPECT_EQ(a.slots()[s].time, b.slots()[s].time);
        EXPECT_EQ(a.slots()[s].event, b.slots()[s].event);
        EXPECT_EQ(a.slots()[s].z, b.slots()[s].z);
        differ += a.slots()[s].time != c.slots()[s].time;
    }
    EXPECT_GT(differ, 1000);
}

TEST(Simulate, SubstreamsAreDistinct) {
    EXPECT_NE(substream_seed(1, StreamPurpose::failure, 0), substream_seed(1, StreamPurpose::censoring, 0));
    EXPECT_NE(substream_seed(1, StreamPurpose::failure, 0), substream_seed(1, StreamPurpose::failure, 1));
    EXPECT_NE(substream_seed(1, StreamPurpose::failure, 0), substream_seed(2, StreamPurpose::failure, 0));
}

TEST(Simulate, Validation) {
    EXPECT_THROW(simulate_dataset(set1_scenario(0.0)), DataError);
    EXPECT_THROW(simulate_dataset(set1_scenario(-1.0)), DataError);
    EXPECT_THROW(simulate_dataset(set1_scenario(0.25, 0.0)), DataError);
    auto bad = set1_scenario();
    bad.lambda_star = {1.0, 1.0};
    EXPECT_THROW(bad.validate(), DataError);
    EXPECT_THROW(scenario_preset("nope"), DataError);
}
