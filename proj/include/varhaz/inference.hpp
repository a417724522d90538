#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "baseline.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "locfit.hpp"
#include "solver.hpp"

namespace varhaz {

/// Standard normal quantile (Acklam's rational approximation refined by one Halley step).
inline double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw DataError("probability must lie in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double low = 0.02425;
    double x;
    if (prob < low) {
        const double q = std::sqrt(-2 * std::log(prob));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (prob <= 1 - low) {
        const double q = prob - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log(1 - prob));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - prob;
    const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

// ---------------------------------------------------------------------------
// Martingale residuals

/**
 * Ingredients of the residual increments
 *
 *     dM_ij(w) = dN_ij(w) - Y_ij(w) exp(beta(V_ij)' Z_ij + g(V_ij)) dLambda_0j(w)
 *
 * at the event times w of member j, with Breslow increments dLambda_0j.
 */
struct MemberResiduals {
    StepHazard baseline;
    std::vector<double> risk; // per cluster position; 0 for absent members
};

class Residuals {
public:
    Residuals() = default;

    /// From per-member relative risks. Members without a risk vector are left empty.
    static Residuals from_risks(const Dataset& ds, const std::vector<std::optional<std::vector<double>>>& risks) {
        Residuals out;
        out.members_.resize(ds.members());
        for (int j = 0; j < ds.members(); ++j) {
            if (j >= static_cast<int>(risks.size()) || !risks[j]) continue;
            out.members_[j] = MemberResiduals{breslow_from_risk(ds, j, *risks[j]), *risks[j]};
        }
        return out;
    }

    /// From a fitted curve, for every member or only `member`.
    static Residuals from_curve(const Dataset& ds, const CurveEstimate& curve,
                                Extrapolation policy = Extrapolation::reject,
                                std::optional<int> member = std::nullopt) {
        std::vector<std::optional<std::vector<double>>> risks(ds.members());
        for (int j = 0; j < ds.members(); ++j)
            if (!member || *member == j) risks[j] = relative_risks(ds, j, curve, policy);
        return from_risks(ds, risks);
    }

    bool has(int j) const { return j >= 0 && j < static_cast<int>(members_.size()) && members_[j].has_value(); }

    const MemberResiduals& member(int j) const {
        if (!has(j)) throw DataError("no residual model for member " + std::to_string(j + 1));
        return *members_[j];
    }

    /// (w, dM_ij(w)) at every event time w of member j with Y_ij(w) = 1.
    std::vector<std::pair<double, double>> increments(const Dataset& ds, int i, int j) const {
        const auto& m = member(j);
        const auto& rec = ds.at(i, j);
        std::vector<std::pair<double, double>> out;
        if (!rec.present) return out;
        for (std::size_t k = 0; k < m.baseline.size() && m.baseline.times[k] <= rec.time; ++k) {
            const double w = m.baseline.times[k];
            const double jump = (ds.counts_event(rec) && rec.time == w) ? 1.0 : 0.0;
            out.emplace_back(w, jump - m.risk[i] * m.baseline.increments[k]);
        }
        return out;
    }

private:
    std::vector<std::optional<MemberResiduals>> members_;
};

/// Â_n: minus the Hessian of the local log-likelihood in rescaled coordinates.
inline Eigen::MatrixXd a_hat(const LocalProblem& prob, const Eigen::VectorXd& theta) {
    return -prob.evaluate(theta, 2).hessian;
}

/// B̂_n = (nh)^{-1} sum K_h (U* - Ê) dN, i.e. the rescaled score divided by h; it vanishes at the maximizer.
inline Eigen::VectorXd b_hat(const LocalProblem& prob, const Eigen::VectorXd& theta) {
    return prob.evaluate(theta, 1).score / prob.design().h;
}

/**
 * Per-cluster residual scores
 *
 *     s_i = sum_j int K_h(V_ij - v) (U*_ij - Ê_j(w)) dM_ij(w),
 *
 * one row per cluster position, for the members present in the local problem.
 * Ê_j is evaluated at theta over the kernel-weighted risk set.
 */
inline Eigen::MatrixXd cluster_scores(const LocalProblem& prob, const Eigen::VectorXd& theta,
                                      const Residuals& residuals) {
    const auto& ds = prob.data();
    const int d = prob.dim();
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(ds.n(), d);
    for (int j = 0; j < prob.members(); ++j) {
        const auto& entries = prob.entries(j);
        if (entries.empty()) continue;
        const auto& res = residuals.member(j);
        const auto& base = res.baseline;
        const std::size_t m = base.size();

        // Ê_j at every event time, by a descending merge of event times and local entries.
        Eigen::MatrixXd e = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(m));
        {
            double shift = -std::numeric_limits<double>::infinity();
            double s0 = 0.0;
            Eigen::VectorXd s1 = Eigen::VectorXd::Zero(d);
            std::size_t q = 0;
            for (std::size_t k = m; k-- > 0;) {
                const double w = base.times[k];
                for (; q < entries.size() && entries[q].time >= w; ++q) {
                    const double a = theta.dot(entries[q].u) + entries[q].log_weight;
                    if (a > shift) {
                        const double r = std::exp(shift - a);
                        s0 *= r;
                        s1 *= r;
                        shift = a;
                    }
                    const double x = std::exp(a - shift);
                    s0 += x;
                    s1 += x * entries[q].u;
                }
                if (s0 > 0.0) e.col(static_cast<Eigen::Index>(k)) = s1 / s0;
            }
        }
        // Running sums Lambda(w_k) and F(w_k) = sum_{m <= k} Ê(w_m) dLambda(w_m).
        Eigen::MatrixXd f(d, static_cast<Eigen::Index>(m));
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
        for (std::size_t k = 0; k < m; ++k) {
            acc += e.col(static_cast<Eigen::Index>(k)) * base.increments[k];
            f.col(static_cast<Eigen::Index>(k)) = acc;
        }

        for (const auto& en : entries) {
            const auto upto = std::upper_bound(base.times.begin(), base.times.end(), en.time) - base.times.begin();
            Eigen::VectorXd term = Eigen::VectorXd::Zero(d);
            if (upto > 0) {
                const auto last = static_cast<Eigen::Index>(upto - 1);
                term = -res.risk[en.cluster] * (en.u * base.cumulative[last] - f.col(last));
                if (en.event) term += en.u - e.col(last);
            }
            scores.row(en.cluster) += en.weight * term.transpose();
        }
    }
    return scores;
}

/**
 * Π̂_n = (nh)^{-1} sum_i {sum_j int K((V_ij - v)/h) (U*_ij - Ê_j) dM_ij}^{(x)2}
 *      = (h/n) sum_i s_i s_i'  with s_i from cluster_scores (which carry K_h = K(./h)/h).
 */
inline Eigen::MatrixXd pi_hat(const LocalProblem& prob, const Eigen::VectorXd& theta, const Residuals& residuals) {
    const Eigen::MatrixXd s = cluster_scores(prob, theta, residuals);
    return (prob.design().h / prob.n()) * (s.transpose() * s);
}

struct SandwichParts {
    Eigen::MatrixXd A_hat;
    Eigen::MatrixXd Pi_hat;
    Eigen::VectorXd B_hat;
    Eigen::MatrixXd Sigma_hat; // covariance of H xi-hat
    Eigen::VectorXd se;        // sqrt(diag Sigma_hat): beta, h beta', h g'
};

inline Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& a, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
    const auto abs_lam = eig.eigenvalues().cwiseAbs();
    if (abs_lam.maxCoeff() == 0.0 || !(abs_lam.minCoeff() > 1e-10 * abs_lam.maxCoeff()))
        throw SingularMatrix(std::string("singular ") + what);
    return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

/// Sigma = (nh)^{-1} A^{-1} Pi A^{-1}.
inline SandwichParts sandwich(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Pi, double n, double h) {
    SandwichParts out;
    out.A_hat = A;
    out.Pi_hat = Pi;
    const Eigen::MatrixXd a_inv = checked_inverse(A, "A_hat");
    Eigen::MatrixXd sigma = a_inv * Pi * a_inv / (n * h);
    out.Sigma_hat = 0.5 * (sigma + sigma.transpose());
    out.se = out.Sigma_hat.diagonal().cwiseMax(0.0).cwiseSqrt();
    return out;
}

/// Full plug-in inference at one fitted point.
inline SandwichParts infer_point(const LocalProblem& prob, const LocalFit& fit, const Residuals& residuals) {
    const auto ev = prob.evaluate(fit.theta, 2);
    auto parts = sandwich(-ev.hessian, pi_hat(prob, fit.theta, residuals), prob.n(), prob.design().h);
    parts.B_hat = ev.score / prob.design().h;
    return parts;
}

/// Standard errors of (beta, beta', g') from the rescaled covariance.
struct NaturalSe {
    Eigen::VectorXd beta;
    Eigen::VectorXd beta_slope;
    double gprime = 0.0;
};

inline NaturalSe natural_se(const SandwichParts& parts, int p, double h) {
    return {parts.se.head(p), parts.se.segment(p, p) / h, parts.se(2 * p) / h};
}

struct Interval {
    double lower;
    double upper;
};

/// Pointwise estimate +/- z_{1-level/2} se; no bias correction.
inline Interval confidence_interval(double estimate, double se, double level = 0.05) {
    if (!(level > 0.0 && level < 1.0)) throw DataError("level must lie in (0, 1)");
    const double z = normal_quantile(1.0 - level / 2.0);
    return {estimate - z * se, estimate + z * se};
}

/// Per grid point and component intervals for the fitted beta curve; NaN at gaps.
inline std::vector<std::vector<Interval>> confidence_band(const CurveEstimate& curve, double level = 0.05) {
    std::vector<std::vector<Interval>> out(curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i)
        for (int k = 0; k < curve.p(); ++k)
            out[i].push_back(confidence_interval(curve.beta_hat(i, k), curve.se_beta(i, k), level));
    return out;
}

/// Curve fitted on the full range of V with gaps bridged: supplies beta(V) and g(V) for residuals.
inline CurveEstimate reference_curve(const Dataset& ds, const LocalDesign& design, int grid_size = 200,
                                     int workers = 1) {
    CurveOptions opts;
    opts.bridge_gaps = true;
    opts.workers = workers;
    return fit_curve(ds, full_range_grid(ds, grid_size), design, opts);
}

/**
 * Fill curve.se_beta and return the per-point sandwich parts (nullopt at gaps
 * and where A_hat is singular).
 */
inline std::vector<std::optional<SandwichParts>> attach_standard_errors(CurveEstimate& curve, const Dataset& ds,
                                                                        const LocalDesign& base,
                                                                        const Residuals& residuals,
                                                                        int workers = 1) {
    std::vector<std::optional<SandwichParts>> parts(curve.size());
    parallel_for(curve.size(), workers, [&](std::size_t i) {
        if (!curve.fitted(i)) return;
        LocalDesign design = base;
        design.v = curve.grid[i];
        LocalProblem prob(ds, design);
        try {
            parts[i] = infer_point(prob, *curve.fits[i], residuals);
        } catch (const SingularMatrix&) {
            return;
        }
    });
    for (std::size_t i = 0; i < curve.size(); ++i)
        if (parts[i]) curve.se_beta.row(static_cast<Eigen::Index>(i)) = parts[i]->se.head(curve.p()).transpose();
    return parts;
}

} // namespace varhaz
