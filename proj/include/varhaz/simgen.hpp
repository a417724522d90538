#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "parallel.hpp"

namespace varhaz {

/// SplitMix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent random streams used by the simulator.
enum class StreamPurpose : std::uint64_t { covariates = 1, failure = 2, censoring = 3, replication = 4 };

/**
 * Seed of substream (purpose, index) under `seed`: the three values are mixed
 * through chained SplitMix64 steps. Each cluster draws from its own substreams,
 * so output does not depend on worker count and changing one stream (say the
 * censoring bound) leaves the others untouched.
 */
inline std::uint64_t substream_seed(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index) noexcept {
    std::uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
    return splitmix64(s ^ splitmix64(index));
}

inline std::mt19937_64 substream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index) {
    return std::mt19937_64(substream_seed(seed, purpose, index));
}

inline constexpr double uniform_clamp = 1e-12;

inline double draw_uniform(std::mt19937_64& rng) {
    const double u = std::generate_canonical<double, 64>(rng);
    return std::clamp(u, uniform_clamp, 1.0 - uniform_clamp);
}

enum class CovariateLaw { mvnormal, std_normal };

struct SimScenario {
    std::string id = "custom";
    int n = 200;
    int J = 3;
    int p = 2;
    double theta = 0.25;
    std::vector<double> lambda_star{0.2, 1.0, 1.5};
    std::function<Eigen::VectorXd(double)> beta;
    std::function<double(double)> g;
    std::function<double(double)> gprime; // derivative of g; needed only for benchmark truth
    double v_lo = 0.0;
    double v_hi = 3.0;
    CovariateLaw z_law = CovariateLaw::mvnormal;
    double z_sd = 5.0;
    double z_rho = 0.0;
    double censor_c = 2.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1) throw DataError("scenario: n must be >= 1");
        if (J < 1) throw DataError("scenario: J must be >= 1");
        if (p < 1) throw DataError("scenario: p must be >= 1");
        if (!(theta > 0.0) || !std::isfinite(theta)) throw DataError("scenario: theta must be > 0");
        if (!(censor_c > 0.0)) throw DataError("scenario: censoring bound c must be > 0");
        if (static_cast<int>(lambda_star.size()) != J)
            throw DataError("scenario: lambda_star needs " + std::to_string(J) + " values");
        for (double l : lambda_star)
            if (!(l > 0.0) || !std::isfinite(l)) throw DataError("scenario: lambda_star values must be > 0");
        if (!(v_lo < v_hi)) throw DataError("scenario: empty V range");
        if (!beta || !g) throw DataError("scenario: truth functions missing");
        if (!(z_sd > 0.0)) throw DataError("scenario: z_sd must be > 0");
        if (!(std::abs(z_rho) < 1.0)) throw DataError("scenario: |z_rho| must be < 1");
    }

    /// Covariance of Z: sd^2 rho^|l-k| for mvnormal, identity for std_normal.
    Eigen::MatrixXd z_covariance() const {
        Eigen::MatrixXd cov(p, p);
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b)
                cov(a, b) = z_law == CovariateLaw::std_normal ? (a == b ? 1.0 : 0.0)
                                                              : z_sd * z_sd * std::pow(z_rho, std::abs(a - b));
        return cov;
    }
};

namespace truth {

inline Eigen::VectorXd set1_beta(double v) {
    Eigen::VectorXd b(2);
    b << 0.5 * v * (1.5 - v), std::sin(2.0 * v);
    return b;
}

inline double set1_g(double v) { return 0.5 * (std::exp(v - 1.5) - std::exp(-1.5)); }

inline double set1_gprime(double v) { return 0.5 * std::exp(v - 1.5); }

inline Eigen::VectorXd set2_beta(double u) { return Eigen::VectorXd::Constant(1, std::exp(2.0 * u - 1.0)); }

inline double set2_g(double u) { return 8.0 * u * (1.0 - u); }

inline double set2_gprime(double u) { return 8.0 - 16.0 * u; }

inline Eigen::VectorXd cohort_beta(double v) {
    const double s = (v - 16.3) / 72.7;
    Eigen::VectorXd b(5);
    b << 0.5, -0.3, 0.6 * (s - 0.5), 0.4 * std::sin(3.141592653589793 * s), 0.0;
    return b;
}

inline double cohort_g(double v) { return 1.5 * (v - 16.3) / 72.7; }

inline double cohort_gprime(double) { return 1.5 / 72.7; }

} // namespace truth

/// Three members, p = 2 correlated normal covariates with SD 5, V ~ U[0, 3].
inline SimScenario set1_scenario(double theta = 0.25, double c = 2.0, int n = 200, std::uint64_t seed = 1) {
    SimScenario s;
    s.id = "set1";
    s.n = n;
    s.theta = theta;
    s.censor_c = c;
    s.seed = seed;
    s.beta = truth::set1_beta;
    s.g = truth::set1_g;
    s.gprime = truth::set1_gprime;
    s.z_rho = 1.0 / std::sqrt(5.0);
    return s;
}

/// Three members, one standard normal covariate, V ~ U[0, 1].
inline SimScenario set2_scenario(double theta = 0.25, double c = 2.0, int n = 200, std::uint64_t seed = 1) {
    SimScenario s;
    s.id = "set2";
    s.n = n;
    s.p = 1;
    s.theta = theta;
    s.censor_c = c;
    s.seed = seed;
    s.beta = truth::set2_beta;
    s.g = truth::set2_g;
    s.gprime = truth::set2_gprime;
    s.v_hi = 1.0;
    s.z_law = CovariateLaw::std_normal;
    s.z_sd = 1.0;
    return s;
}

/// Two members, five standard normal covariates, V ~ U[16.3, 89.0]: the shape of an age-indexed cohort study.
inline SimScenario cohort_scenario(double theta = 0.25, double c = 2.0, int n = 200, std::uint64_t seed = 1) {
    SimScenario s;
    s.id = "cohort";
    s.n = n;
    s.J = 2;
    s.p = 5;
    s.theta = theta;
    s.censor_c = c;
    s.seed = seed;
    s.lambda_star = {0.2, 1.0};
    s.beta = truth::cohort_beta;
    s.g = truth::cohort_g;
    s.gprime = truth::cohort_gprime;
    s.v_lo = 16.3;
    s.v_hi = 89.0;
    s.z_law = CovariateLaw::std_normal;
    s.z_sd = 1.0;
    return s;
}

inline SimScenario scenario_preset(const std::string& name) {
    if (name == "set1") return set1_scenario();
    if (name == "set2") return set2_scenario();
    if (name == "cohort") return cohort_scenario();
    throw DataError("unknown scenario '" + name + "' (expected set1, set2 or cohort)");
}

struct ClusterCovariates {
    std::vector<double> v;         // per member
    std::vector<Eigen::VectorXd> z; // per member
};

/// (V, Z) for every member of cluster i, from the covariate substream of i.
inline ClusterCovariates gen_covariates(const SimScenario& scn, int i, const Eigen::MatrixXd& chol_lower) {
    auto rng = substream(scn.seed, StreamPurpose::covariates, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> normal(0.0, 1.0);
    ClusterCovariates out;
    for (int j = 0; j < scn.J; ++j) {
        out.v.push_back(scn.v_lo + (scn.v_hi - scn.v_lo) * std::generate_canonical<double, 64>(rng));
        Eigen::VectorXd e(scn.p);
        for (int k = 0; k < scn.p; ++k) e(k) = normal(rng);
        out.z.push_back(chol_lower * e);
    }
    return out;
}

inline Eigen::MatrixXd covariate_factor(const SimScenario& scn) {
    Eigen::LLT<Eigen::MatrixXd> llt(scn.z_covariance());
    if (llt.info() != Eigen::Success) throw DataError("scenario: covariate covariance not positive definite");
    return llt.matrixL();
}

/**
 * Clayton copula sample u_1..u_J from J uniforms by sequential conditional
 * inversion: with S = sum_{l<k} u_l^{-theta} - (k - 2),
 *
 *     u_k^{-theta} = 1 - S + S q_k^{-theta / (1 + (k-1) theta)},
 *
 * and u_1 = q_1. The joint survival is (sum u_k^{-theta} - J + 1)^{-1/theta}.
 * Returns the powers a_k = u_k^{-theta} so that -log u_k = log(a_k) / theta
 * stays accurate in the tails.
 */
inline std::vector<double> clayton_powers(double theta, const std::vector<double>& q) {
    std::vector<double> a(q.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
        if (k == 0) {
            a[k] = std::pow(q[k], -theta);
        } else {
            const double s = sum - static_cast<double>(k - 1);
            a[k] = 1.0 - s + s * std::pow(q[k], -theta / (1.0 + static_cast<double>(k) * theta));
        }
        sum += a[k];
    }
    return a;
}

/**
 * Failure times for cluster i. Member j has marginal cumulative hazard
 * t^4 lambda*_j exp(beta(V)'Z + g(V)), so T^4 = E / (lambda*_j exp(beta'Z + g))
 * with E = -log u_j standard exponential.
 */
inline std::vector<double> gen_failure_times(const SimScenario& scn, int i, const ClusterCovariates& cov) {
    auto rng = substream(scn.seed, StreamPurpose::failure, static_cast<std::uint64_t>(i));
    std::vector<double> q(scn.J);
    for (auto& x : q) x = draw_uniform(rng);
    const auto a = clayton_powers(scn.theta, q);
    std::vector<double> t(scn.J);
    for (int j = 0; j < scn.J; ++j) {
        const double e = std::log(a[j]) / scn.theta;
        const double eta = scn.beta(cov.v[j]).dot(cov.z[j]) + scn.g(cov.v[j]);
        t[j] = std::pow(e * std::exp(-eta) / scn.lambda_star[j], 0.25);
    }
    return t;
}

inline std::vector<double> gen_censoring(const SimScenario& scn, int i) {
    auto rng = substream(scn.seed, StreamPurpose::censoring, static_cast<std::uint64_t>(i));
    std::vector<double> c(scn.J);
    for (auto& x : c) x = scn.censor_c * std::generate_canonical<double, 64>(rng);
    return c;
}

/// Uncensored failure times only (one row per cluster); used for calibration checks.
inline std::vector<std::vector<double>> simulate_failure_times(const SimScenario& scn, int workers = 1) {
    scn.validate();
    const auto factor = covariate_factor(scn);
    std::vector<std::vector<double>> out(scn.n);
    parallel_for(scn.n, workers, [&](std::size_t i) {
        out[i] = gen_failure_times(scn, static_cast<int>(i), gen_covariates(scn, static_cast<int>(i), factor));
    });
    return out;
}

inline Dataset simulate_dataset(const SimScenario& scn, int workers = 1) {
    scn.validate();
    const auto factor = covariate_factor(scn);
    std::vector<SubjectRecord> records(static_cast<std::size_t>(scn.n) * scn.J);
    parallel_for(scn.n, workers, [&](std::size_t i) {
        const int ci = static_cast<int>(i);
        const auto cov = gen_covariates(scn, ci, factor);
        const auto t = gen_failure_times(scn, ci, cov);
        const auto c = gen_censoring(scn, ci);
        for (int j = 0; j < scn.J; ++j) {
            auto& rec = records[i * scn.J + j];
            rec.cluster_id = ci + 1;
            rec.member = j;
            rec.time = std::min(t[j], c[j]);
            rec.event = t[j] <= c[j];
            rec.v = cov.v[j];
            rec.z = cov.z[j];
            rec.present = true;
        }
    });
    return Dataset::from_records(std::move(records), scn.J);
}

} // namespace varhaz
