#include <gtest/gtest.h>

#include <oracles.hpp>
#include <varhaz/baseline.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace varhaz;
using oracle::record;

namespace {

CurveEstimate constant_curve(double beta, double g, int p = 1) {
    CurveEstimate c;
    c.grid = {-100.0, 100.0};
    c.beta_hat = Eigen::MatrixXd::Constant(2, p, beta);
    c.g_hat = Eigen::VectorXd::Constant(2, g);
    c.gprime_hat = Eigen::VectorXd::Zero(2);
    c.status.assign(2, PointStatus::fitted);
    return c;
}

Dataset three_subjects(bool events = true) {
    return Dataset::from_records({record(1, 0, 1.0, events, 0.2, {0.5}), record(2, 0, 2.0, events, 0.4, {-1.0}),
                                  record(3, 0, 3.0, events, 0.6, {2.0})});
}

} // namespace

TEST(Breslow, HandExample) {
    const auto step = breslow(three_subjects(), 0, constant_curve(0.0, 0.0));
    ASSERT_EQ(step.size(), 3u);
    EXPECT_NEAR(step.cumulative[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(step.cumulative[1], 5.0 / 6.0, 1e-15);
    EXPECT_NEAR(step.cumulative[2], 11.0 / 6.0, 1e-15);
    EXPECT_EQ(step(0.5), 0.0);
    EXPECT_NEAR(step(2.5), 5.0 / 6.0, 1e-15);
    EXPECT_NEAR(step(10.0), 11.0 / 6.0, 1e-15);
}

TEST(Breslow, ConstantShiftHalvesIncrements) {
    const auto base = breslow(three_subjects(), 0, constant_curve(0.0, 0.0));
    const auto shifted = breslow(three_subjects(), 0, constant_curve(0.0, std::log(2.0)));
    for (std::size_t k = 0; k < base.size(); ++k) EXPECT_NEAR(shifted.increments[k], 0.5 * base.increments[k], 1e-15);
}

TEST(Breslow, AllCensoredIsZero) {
    const auto step = breslow(three_subjects(false), 0, constant_curve(0.0, 0.0));
    EXPECT_EQ(step.size(), 0u);
    EXPECT_EQ(step(5.0), 0.0);
    EXPECT_EQ(step.total(), 0.0);
}

TEST(Breslow, TiesMergeIntoOneJump) {
    const auto ds = Dataset::from_records({record(1, 0, 1.0, true, 0, {0}), record(2, 0, 1.0, true, 0, {0}),
                                           record(3, 0, 2.0, true, 0, {0}), record(4, 0, 1.0, false, 0, {0})});
    const auto step = breslow(ds, 0, constant_curve(0.0, 0.0));
    ASSERT_EQ(step.size(), 2u);
    EXPECT_EQ(step.event_counts[0], 2);
    EXPECT_NEAR(step.increments[0], 2.0 / 4.0, 1e-15);
    EXPECT_NEAR(step.increments[1], 1.0, 1e-15);
}

TEST(Breslow, MatchesClassicalEstimator) {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto ds = oracle::random_dataset(40, 1, 2, seed);
        const auto curve = constant_curve(0.4, 0.1, 2);
        std::vector<double> risk(ds.n());
        for (int i = 0; i < ds.n(); ++i) risk[i] = std::exp(0.4 * ds.at(i, 0).z.sum() + 0.1);
        const auto step = breslow(ds, 0, curve);
        const auto naive = oracle::breslow(ds, 0, risk);
        ASSERT_EQ(step.size(), naive.size());
        for (std::size_t k = 0; k < naive.size(); ++k) {
            EXPECT_EQ(step.times[k], naive[k].first);
            EXPECT_NEAR(step.cumulative[k], naive[k].second, 1e-12 * naive[k].second);
        }
    }
}

TEST(Breslow, MonotoneAndOrderInvariant) {
    const auto ds = oracle::random_dataset(30, 3, 1, 8, 0.2);
    std::vector<SubjectRecord> recs;
    for (const auto& r : ds.slots())
        if (r.present) recs.push_back(r);
    std::mt19937 rng(3);
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto other = Dataset::from_records(recs, 3);
    const auto curve = constant_curve(0.7, -0.2);
    for (int j = 0; j < 3; ++j) {
        const auto a = breslow(ds, j, curve);
        const auto b = breslow(other, j, curve);
        EXPECT_EQ(a.cumulative, b.cumulative);
        double sum = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            sum += a.increments[k];
            EXPECT_GT(a.increments[k], 0.0);
            if (k) EXPECT_GT(a.times[k], a.times[k - 1]);
        }
        EXPECT_NEAR(a.total(), sum, 1e-14);
    }
}

TEST(SmoothHazard, SingleJump) {
    StepHazard step;
    step.times = {1.0};
    step.increments = {1.0};
    step.cumulative = {1.0};
    step.event_counts = {1};
    const auto lam = smooth_hazard(step, Kernel{}, 0.5);
    EXPECT_NEAR(lam(1.0), 0.79788, 1e-5);
    const auto epan = smooth_hazard(step, Kernel(KernelFamily::epanechnikov), 0.5);
    EXPECT_EQ(epan(3.0), 0.0);
    EXPECT_TRUE(lam.near_origin(0.2));
    EXPECT_FALSE(lam.near_origin(0.7));
    EXPECT_THROW(smooth_hazard(step, Kernel{}, 0.0), DataError);
}

TEST(SmoothHazard, RecoversDenseHazard) {
    // Lambda(t) = 0.2 t^4 sampled on a fine grid; the smoothed hazard approximates 0.8 t^3.
    StepHazard step;
    double prev = 0.0;
    for (int k = 1; k <= 4000; ++k) {
        const double t = 1.6 * k / 4000.0;
        const double cum = 0.2 * std::pow(t, 4);
        step.times.push_back(t);
        step.increments.push_back(cum - prev);
        step.cumulative.push_back(cum);
        step.event_counts.push_back(1);
        prev = cum;
    }
    const auto lam = smooth_hazard(step, Kernel(KernelFamily::epanechnikov), 0.1);
    for (double t : {0.4, 0.7, 1.0, 1.3}) EXPECT_NEAR(lam(t), 0.8 * t * t * t, 0.1 * 0.8 * t * t * t) << t;
}

TEST(SmoothHazard, IntegralApproachesTotalMass) {
    const auto ds = oracle::random_dataset(60, 1, 1, 5);
    const auto step = breslow(ds, 0, constant_curve(0.0, 0.0));
    const double tau = step.times.back() + 1.0;
    double prev_err = 1e300;
    for (double b : {0.1, 0.05, 0.025}) {
        const auto lam = smooth_hazard(step, Kernel(KernelFamily::epanechnikov), b);
        const int m = 40000;
        double integral = 0.0;
        for (int k = 0; k < m; ++k) integral += lam((k + 0.5) * tau / m) * tau / m;
        const double err = std::abs(integral - step.total());
        EXPECT_LE(err, prev_err + 1e-6);
        prev_err = err;
    }
    EXPECT_LT(prev_err, 1e-3 * step.total());
}

TEST(SmoothHazard, DefaultBandwidth) {
    StepHazard step;
    step.times = {1.0, 3.0};
    step.increments = {0.5, 0.5};
    step.cumulative = {0.5, 1.0};
    step.event_counts = {1, 1};
    EXPECT_DOUBLE_EQ(default_smoothing_bandwidth(step), 0.1);
    EXPECT_DOUBLE_EQ(default_smoothing_bandwidth(StepHazard{}), 1.0);
}

TEST(Breslow, CsvLayout) {
    const auto step = breslow(three_subjects(), 0, constant_curve(0.0, 0.0));
    std::ostringstream out;
    write_step_hazard_csv(out, step, 0);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "member,time,increment,cumulative");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3);
}
