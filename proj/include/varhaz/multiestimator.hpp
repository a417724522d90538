#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "inference.hpp"
#include "locfit.hpp"
#include "parallel.hpp"
#include "solver.hpp"

namespace varhaz {

/// Per-type bandwidth as a multiple of the pooled one.
inline constexpr double per_type_bandwidth_factor = 1.5;

/**
 * Separate local fits for each failure type at a common (v, h), with the
 * pieces needed for their joint covariance.
 */
struct TypeStack {
    double v = 0.0;
    double h = 0.0;
    Kernel kernel{};
    int p = 0;
    std::vector<std::optional<LocalFit>> fits;
    std::vector<Eigen::MatrixXd> a_hat;    // per type, empty when unavailable
    std::vector<Eigen::MatrixXd> w;        // per type, n x (2p+1) W vectors
    Eigen::MatrixXd sigma_star;            // J(2p+1) square; NaN blocks for unusable types

    int types() const noexcept { return static_cast<int>(fits.size()); }
    int dim() const noexcept { return 2 * p + 1; }
    bool fitted(int k) const { return fits[k].has_value() && fits[k]->converged; }
    bool usable(int k) const { return fitted(k) && k < static_cast<int>(w.size()) && w[k].size() > 0; }

    std::vector<int> usable_types() const {
        std::vector<int> out;
        for (int k = 0; k < types(); ++k)
            if (usable(k)) out.push_back(k);
        return out;
    }
};

/// Independent local fits for every member index, each using only that member's records.
inline TypeStack fit_per_type(const Dataset& ds, double v, double h, Kernel kernel = {}, const FitOptions& opts = {}) {
    TypeStack stack;
    stack.v = v;
    stack.h = h;
    stack.kernel = kernel;
    stack.p = ds.dim();
    stack.fits.resize(ds.members());
    for (int k = 0; k < ds.members(); ++k) {
        LocalProblem prob(ds, LocalDesign{v, h, kernel, k});
        if (!prob.has_enough_data()) continue;
        stack.fits[k] = maximize_local(prob, LocalParams::zero(ds.dim()), opts);
    }
    return stack;
}

/**
 * W_jk for every cluster j and type k:
 *
 *     Delta_jk (U*_jk - Ê_k(X_jk)) K_h(V_jk - v)
 *       - sum_m Delta_mk Y_jk(X_mk) r_jk / sum_i Y_ik(X_mk) r_ik (U*_jk(X_mk) - Ê_k(X_mk)) K_h(V_jk - v)
 *
 * with r = exp(beta_k(V)' Z + g_k(V)) of the subject in the numerator and Ê_k the
 * type-k kernel-weighted risk-set mean. This is the type-k cluster residual score.
 */
inline Eigen::MatrixXd w_vectors(const Dataset& ds, const TypeStack& stack, int k, const Residuals& residuals_k) {
    if (!stack.fitted(k)) throw NumericalError("type " + std::to_string(k + 1) + " has no fit");
    LocalProblem prob(ds, LocalDesign{stack.v, stack.h, stack.kernel, k});
    return cluster_scores(prob, stack.fits[k]->theta, residuals_k);
}

struct CrossCovariance {
    Eigen::MatrixXd D; // n^{-1} sum_j W_jk W_jl'
    Eigen::MatrixXd G; // A_k^{-1} (h D) A_l^{-1}
};

/**
 * D̂_kl and Ĝ_kl. The W vectors carry K_h, so h D̂ is the O(1) cross term and
 * Ĝ_kk coincides with the single-type sandwich core A^{-1} Π̂ A^{-1}.
 */
inline CrossCovariance cross_cov(const TypeStack& stack, int k, int l, double n) {
    if (!stack.usable(k) || !stack.usable(l)) throw NumericalError("cross covariance needs both types fitted");
    CrossCovariance out;
    out.D = stack.w[k].transpose() * stack.w[l] / n;
    const Eigen::MatrixXd ak = checked_inverse(stack.a_hat[k], "A_hat");
    const Eigen::MatrixXd al = checked_inverse(stack.a_hat[l], "A_hat");
    out.G = ak * (stack.h * out.D) * al;
    return out;
}

/**
 * Complete a stack: A_hat and W vectors per fitted type (given per-type
 * residual models) and Sigma* = (nh)^{-1} (Ĝ_kl).
 */
inline void complete_stack(const Dataset& ds, TypeStack& stack, const std::vector<Residuals>& residuals_by_type) {
    const int J = stack.types();
    const int d = stack.dim();
    stack.a_hat.assign(J, {});
    stack.w.assign(J, {});
    for (int k = 0; k < J; ++k) {
        if (!stack.fitted(k) || k >= static_cast<int>(residuals_by_type.size()) || !residuals_by_type[k].has(k))
            continue;
        LocalProblem prob(ds, LocalDesign{stack.v, stack.h, stack.kernel, k});
        Eigen::MatrixXd a = a_hat(prob, stack.fits[k]->theta);
        try {
            checked_inverse(a, "A_hat");
        } catch (const SingularMatrix&) {
            continue;
        }
        stack.a_hat[k] = std::move(a);
        stack.w[k] = cluster_scores(prob, stack.fits[k]->theta, residuals_by_type[k]);
    }
    const double n = ds.n();
    stack.sigma_star = Eigen::MatrixXd::Constant(J * d, J * d, std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < J; ++k)
        for (int l = k; l < J; ++l) {
            if (!stack.usable(k) || !stack.usable(l)) continue;
            const Eigen::MatrixXd g = cross_cov(stack, k, l, n).G / (n * stack.h);
            stack.sigma_star.block(k * d, l * d, d, d) = g;
            stack.sigma_star.block(l * d, k * d, d, d) = g.transpose();
        }
}

struct WeightSolution {
    Eigen::VectorXd c;
    bool ridge_applied = false;
    bool equal_fallback = false;
};

/**
 * c = Sigma^{-1} e / (e' Sigma^{-1} e), minimizing c' Sigma c subject to sum c = 1.
 * Ill-conditioned input (condition number above 1e10) gets a ridge of
 * 1e-8 trace/J; if that is not enough the weights fall back to 1/J.
 */
inline WeightSolution optimal_weights(const Eigen::MatrixXd& sigma_w) {
    const auto J = sigma_w.rows();
    if (J == 0 || sigma_w.cols() != J) throw DataError("Sigma_w must be square and non-empty");
    if (!sigma_w.allFinite()) throw SingularMatrix("Sigma_w has non-finite entries");
    const Eigen::MatrixXd sym = 0.5 * (sigma_w + sigma_w.transpose());
    auto well_conditioned = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        const double hi = eig.eigenvalues().maxCoeff();
        return lo > 0.0 && hi / lo <= 1e10;
    };
    WeightSolution out;
    Eigen::MatrixXd m = sym;
    if (!well_conditioned(m)) {
        m.diagonal().array() += 1e-8 * sym.trace() / static_cast<double>(J);
        out.ridge_applied = true;
        if (!well_conditioned(m)) {
            out.equal_fallback = true;
            out.c = Eigen::VectorXd::Constant(J, 1.0 / static_cast<double>(J));
            return out;
        }
    }
    const Eigen::VectorXd s = m.llt().solve(Eigen::VectorXd::Ones(J));
    out.c = s / s.sum();
    out.c /= out.c.sum();
    return out;
}

struct WeightedEstimate {
    int component = 0;
    std::vector<int> types;  // types entering the combination
    Eigen::VectorXd weights; // sums to 1
    double estimate = 0.0;
    double se = 0.0;
    bool equal_fallback = false;
};

/// Combine beta component `component` across the usable types; requires at least two.
inline WeightedEstimate combine(const TypeStack& stack, int component) {
    if (component < 0 || component >= stack.p) throw DataError("component out of range");
    const auto types = stack.usable_types();
    if (types.size() < 2) throw NumericalError("weighted estimate needs at least two fitted types");
    const int d = stack.dim();
    const auto m = static_cast<Eigen::Index>(types.size());
    Eigen::MatrixXd sigma_w(m, m);
    Eigen::VectorXd est(m);
    for (Eigen::Index a = 0; a < m; ++a) {
        est(a) = stack.fits[types[a]]->theta(component);
        for (Eigen::Index b = 0; b < m; ++b)
            sigma_w(a, b) = stack.sigma_star(types[a] * d + component, types[b] * d + component);
    }
    const auto sol = optimal_weights(sigma_w);
    WeightedEstimate out;
    out.component = component;
    out.types = types;
    out.weights = sol.c;
    out.estimate = sol.c.dot(est);
    out.se = std::sqrt(std::max(0.0, sol.c.dot(sigma_w * sol.c)));
    out.equal_fallback = sol.equal_fallback;
    return out;
}

/**
 * Residual model of every type k from its own full-range reference curve.
 * Types whose curve cannot be fitted anywhere get an empty model.
 */
inline std::vector<Residuals> per_type_residuals(const Dataset& ds, double h, Kernel kernel = {},
                                                 int grid_size = 200, int workers = 1) {
    std::vector<Residuals> out(ds.members());
    for (int k = 0; k < ds.members(); ++k) {
        try {
            const auto ref = reference_curve(ds, LocalDesign{0.0, h, kernel, k}, grid_size, workers);
            out[k] = Residuals::from_curve(ds, ref, Extrapolation::clamp, k);
        } catch (const NumericalError&) {
        }
    }
    return out;
}

/// Weighted-average curve: per grid point, the combined beta components with their weights.
struct WeightedCurve {
    std::vector<double> grid;
    double h = 0.0;
    int members = 0;
    Eigen::MatrixXd estimate;               // n_grid x p; NaN where fewer than two types fit
    Eigen::MatrixXd se;                     // n_grid x p
    std::vector<Eigen::MatrixXd> weights;   // per component, n_grid x J; NaN for types left out
    std::vector<int> types_used;            // per grid point
    std::vector<bool> equal_fallback;       // per grid point, any component

    std::size_t size() const noexcept { return grid.size(); }
    int p() const noexcept { return static_cast<int>(estimate.cols()); }
    bool available(std::size_t i) const { return types_used[i] >= 2; }
};

inline WeightedCurve weighted_curve(const Dataset& ds, const std::vector<double>& grid, double h,
                                    Kernel kernel = {}, const FitOptions& fit = {},
                                    int reference_grid_size = 200, int workers = 1) {
    const int J = ds.members();
    const int p = ds.dim();
    const auto n = static_cast<Eigen::Index>(grid.size());
    std::vector<std::optional<CurveEstimate>> curves(J);
    CurveOptions copts;
    copts.fit = fit;
    copts.fit.mode = FitMode::full_newton;
    copts.workers = workers;
    for (int k = 0; k < J; ++k) {
        try {
            curves[k] = fit_curve(ds, grid, LocalDesign{0.0, h, kernel, k}, copts);
        } catch (const NumericalError&) {
        }
    }
    const auto residuals = per_type_residuals(ds, h, kernel, reference_grid_size, workers);

    const double nan = std::numeric_limits<double>::quiet_NaN();
    WeightedCurve out;
    out.grid = grid;
    out.h = h;
    out.members = J;
    out.estimate = Eigen::MatrixXd::Constant(n, p, nan);
    out.se = Eigen::MatrixXd::Constant(n, p, nan);
    out.weights.assign(p, Eigen::MatrixXd::Constant(n, J, nan));
    out.types_used.assign(grid.size(), 0);
    out.equal_fallback.assign(grid.size(), false);
    parallel_for(grid.size(), workers, [&](std::size_t i) {
        TypeStack stack;
        stack.v = grid[i];
        stack.h = h;
        stack.kernel = kernel;
        stack.p = p;
        stack.fits.resize(J);
        for (int k = 0; k < J; ++k)
            if (curves[k] && curves[k]->fitted(i)) stack.fits[k] = curves[k]->fits[i];
        complete_stack(ds, stack, residuals);
        const auto used = stack.usable_types();
        out.types_used[i] = static_cast<int>(used.size());
        if (used.size() < 2) return;
        for (int c = 0; c < p; ++c) {
            WeightedEstimate est;
            try {
                est = combine(stack, c);
            } catch (const SingularMatrix&) {
                out.types_used[i] = 0;
                return;
            }
            const auto row = static_cast<Eigen::Index>(i);
            out.estimate(row, c) = est.estimate;
            out.se(row, c) = est.se;
            for (std::size_t a = 0; a < est.types.size(); ++a) out.weights[c](row, est.types[a]) = est.weights(a);
            if (est.equal_fallback) out.equal_fallback[i] = true;
        }
    });
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (!out.available(i)) {
            out.estimate.row(i).setConstant(nan);
            out.se.row(i).setConstant(nan);
            for (auto& w : out.weights) w.row(i).setConstant(nan);
        }
    return out;
}

} // namespace varhaz
