#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "locfit.hpp"
#include "parallel.hpp"

namespace varhaz {

enum class FitMode { full_newton, one_step, k_step };

struct FitOptions {
    int max_iterations = 50;
    double gradient_tolerance = 1e-8; // on the rescaled score norm
    int step_halving_max = 20;
    FitMode mode = FitMode::full_newton;
    int k = 1; // Newton updates per point in k_step mode

    void validate() const {
        if (max_iterations < 1) throw DataError("max_iterations must be >= 1");
        if (!(gradient_tolerance > 0.0)) throw DataError("gradient_tolerance must be positive");
        if (step_halving_max < 0) throw DataError("step_halving_max must be >= 0");
        if (k < 1) throw DataError("k must be >= 1");
    }
};

/// Result of one local fit. `theta`, `score` and `hessian` are in the rescaled coordinates theta = H xi.
struct LocalFit {
    double v = 0.0;
    double h = 0.0;
    LocalParams xi;
    Eigen::VectorXd theta;
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
    double effective_events = 0.0;

    double score_norm() const { return score.norm(); }
};

namespace detail {

inline LocalFit make_fit(const LocalProblem& prob, const Eigen::VectorXd& theta, LocalEvaluation ev,
                         int iterations, double tol) {
    LocalFit fit;
    fit.v = prob.design().v;
    fit.h = prob.design().h;
    fit.theta = theta;
    fit.xi = LocalParams::from_rescaled(theta, fit.h);
    fit.value = ev.value;
    fit.score = std::move(ev.score);
    fit.hessian = std::move(ev.hessian);
    fit.converged = fit.score.norm() <= tol;
    fit.iterations = iterations;
    fit.effective_events = prob.effective_events();
    return fit;
}

/// Newton direction -H^{-1} g for a negative semidefinite H, flooring tiny curvature.
inline Eigen::VectorXd ascent_direction(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& score) {
    const Eigen::MatrixXd neg = -hessian;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const auto d = ldlt.vectorD();
        if (d.minCoeff() > 1e-12 * std::max(1.0, d.maxCoeff())) {
            Eigen::VectorXd step = ldlt.solve(score);
            if (step.allFinite()) return step;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(neg);
    const auto& lam = eig.eigenvalues();
    const double floor = 1e-8 * std::max(1.0, lam.cwiseAbs().maxCoeff());
    Eigen::VectorXd inv = lam.unaryExpr([&](double x) { return 1.0 / std::max(x, floor); });
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() * score;
}

} // namespace detail

/**
 * Maximize the local log-likelihood by Newton-Raphson with step halving.
 * The objective is concave, so the result does not depend on `init` beyond the
 * tolerance. Returns the best iterate with converged = false when the score
 * norm is still above tolerance after max_iterations or when no step improves.
 */
inline LocalFit maximize_local(const LocalProblem& prob, const LocalParams& init, const FitOptions& opts = {}) {
    opts.validate();
    prob.require_data();
    const double h = prob.design().h;
    Eigen::VectorXd theta = init.rescaled(h);
    auto ev = prob.evaluate(theta, 2);
    int iterations = 0;
    while (iterations < opts.max_iterations && ev.score.norm() > opts.gradient_tolerance) {
        const Eigen::VectorXd dir = detail::ascent_direction(ev.hessian, ev.score);
        double step = 1.0;
        bool accepted = false;
        for (int halving = 0; halving <= opts.step_halving_max; ++halving, step *= 0.5) {
            Eigen::VectorXd cand = theta + step * dir;
            auto cand_ev = prob.evaluate(cand, 2);
            if (std::isfinite(cand_ev.value) && cand_ev.value >= ev.value - 1e-12 * (1.0 + std::abs(ev.value))) {
                theta = std::move(cand);
                ev = std::move(cand_ev);
                accepted = true;
                break;
            }
        }
        ++iterations;
        if (!accepted) break;
    }
    return detail::make_fit(prob, theta, std::move(ev), iterations, opts.gradient_tolerance);
}

/**
 * `steps` Newton updates xi <- xi - l''(xi)^{-1} l'(xi) from `init` without line search.
 * Throws SingularMatrix when the Hessian at an iterate has smallest absolute
 * eigenvalue below 1e-10 times the largest.
 */
inline LocalFit one_step(const LocalProblem& prob, const LocalParams& init, int steps = 1,
                         double gradient_tolerance = 1e-8) {
    if (steps < 1) throw DataError("steps must be >= 1");
    prob.require_data();
    Eigen::VectorXd theta = init.rescaled(prob.design().h);
    for (int s = 0; s < steps; ++s) {
        const auto ev = prob.evaluate(theta, 2);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ev.hessian, Eigen::EigenvaluesOnly);
        const auto abs_lam = eig.eigenvalues().cwiseAbs();
        if (!(abs_lam.minCoeff() >= 1e-10 * abs_lam.maxCoeff()) || abs_lam.maxCoeff() == 0.0)
            throw SingularMatrix("singular Hessian at v=" + std::to_string(prob.design().v));
        theta -= ev.hessian.ldlt().solve(ev.score);
    }
    return detail::make_fit(prob, theta, prob.evaluate(theta, 2), steps, gradient_tolerance);
}

// ---------------------------------------------------------------------------
// Curves

enum class PointStatus { fitted, no_local_data, not_converged, singular };

inline std::string to_string(PointStatus s) {
    switch (s) {
    case PointStatus::fitted: return "fitted";
    case PointStatus::no_local_data: return "no_local_data";
    case PointStatus::not_converged: return "not_converged";
    case PointStatus::singular: return "singular";
    }
    return "unknown";
}

enum class Extrapolation { reject, clamp };

struct CurveValue {
    Eigen::VectorXd beta;
    double g = 0.0;
};

/**
 * Estimated coefficient curves over a grid. Gaps (points without a usable fit)
 * hold NaN. g is anchored to 0 at `g_anchor`, the leftmost fitted point.
 */
struct CurveEstimate {
    std::vector<double> grid;
    double h = 0.0;
    std::vector<PointStatus> status;
    std::vector<std::optional<LocalFit>> fits; // diagnostics, kept for gaps too
    Eigen::MatrixXd beta_hat;                   // n_grid x p
    Eigen::VectorXd gprime_hat;
    Eigen::VectorXd g_hat;
    Eigen::MatrixXd se_beta;                    // filled by inference
    int g_anchor = -1;

    std::size_t size() const noexcept { return grid.size(); }
    int p() const noexcept { return static_cast<int>(beta_hat.cols()); }
    bool fitted(std::size_t i) const { return status[i] == PointStatus::fitted; }

    std::size_t fitted_count() const {
        return static_cast<std::size_t>(std::count(status.begin(), status.end(), PointStatus::fitted));
    }

    /// beta(v) and g(v) by linear interpolation between grid points where both are available.
    std::optional<CurveValue> lookup(double v, Extrapolation policy = Extrapolation::reject) const {
        auto usable = [&](std::size_t i) { return std::isfinite(g_hat(i)) && beta_hat.row(i).allFinite(); };
        std::optional<std::size_t> lo, hi;
        for (std::size_t i = 0; i < size(); ++i) {
            if (!usable(i)) continue;
            if (grid[i] <= v) lo = i;
            if (grid[i] >= v && !hi) hi = i;
        }
        if (!lo && !hi) return std::nullopt;
        if (!lo || !hi) {
            if (policy == Extrapolation::reject) return std::nullopt;
            const auto i = lo ? *lo : *hi;
            return CurveValue{beta_hat.row(i).transpose(), g_hat(i)};
        }
        if (*lo == *hi) return CurveValue{beta_hat.row(*lo).transpose(), g_hat(*lo)};
        const double t = (v - grid[*lo]) / (grid[*hi] - grid[*lo]);
        return CurveValue{((1 - t) * beta_hat.row(*lo) + t * beta_hat.row(*hi)).transpose(),
                          (1 - t) * g_hat(*lo) + t * g_hat(*hi)};
    }
};

/**
 * Cumulative trapezoid of g' over the grid, shifted so the result is 0 at
 * `anchor`. NaN entries of g' are gaps: without bridging the integral is NaN
 * beyond them; with bridging interior gaps are filled by linear interpolation.
 */
inline Eigen::VectorXd integrate_gprime(const std::vector<double>& grid, const Eigen::VectorXd& gprime,
                                        int anchor, bool bridge = false) {
    const auto n = static_cast<int>(grid.size());
    if (gprime.size() != n) throw DataError("grid and g' lengths differ");
    if (anchor < 0 || anchor >= n) throw DataError("anchor index out of range");
    Eigen::VectorXd d = gprime;
    if (!std::isfinite(d(anchor))) throw DataError("g' missing at the anchor");
    if (bridge) {
        int prev = -1;
        for (int i = 0; i < n; ++i) {
            if (!std::isfinite(gprime(i))) continue;
            if (prev >= 0 && i - prev > 1)
                for (int k = prev + 1; k < i; ++k) {
                    const double t = (grid[k] - grid[prev]) / (grid[i] - grid[prev]);
                    d(k) = (1 - t) * gprime(prev) + t * gprime(i);
                }
            prev = i;
        }
    }
    Eigen::VectorXd g = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    g(anchor) = 0.0;
    for (int i = anchor + 1; i < n && std::isfinite(d(i)); ++i)
        g(i) = g(i - 1) + 0.5 * (d(i) + d(i - 1)) * (grid[i] - grid[i - 1]);
    for (int i = anchor - 1; i >= 0 && std::isfinite(d(i)); --i)
        g(i) = g(i + 1) - 0.5 * (d(i) + d(i + 1)) * (grid[i + 1] - grid[i]);
    return g;
}

inline std::vector<double> linspace(double lo, double hi, int count) {
    if (count < 1) throw DataError("grid size must be >= 1");
    std::vector<double> out(count);
    for (int k = 0; k < count; ++k)
        out[k] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / (count - 1);
    return out;
}

/// `count` equally spaced points on [min V + h, max V - h].
inline std::vector<double> default_grid(const Dataset& ds, double h, int count = 200) {
    const auto [lo, hi] = ds.v_range();
    if (!(lo + h < hi - h)) throw DataError("bandwidth too large for the range of V");
    return linspace(lo + h, hi - h, count);
}

/// `count` equally spaced points on [min V, max V]; used where curve values are needed at every V.
inline std::vector<double> full_range_grid(const Dataset& ds, int count = 200) {
    const auto [lo, hi] = ds.v_range();
    return linspace(lo, hi, count);
}

/// Zero-based anchor positions at 10%, 30%, 50%, 70% and 90% of the grid (w_20, ..., w_180 for 200 points).
inline std::vector<int> default_anchors(int grid_size) {
    std::vector<int> out;
    for (int k = 1; k <= 5; ++k) {
        const int idx = static_cast<int>(std::lround(grid_size * (2.0 * k - 1.0) / 10.0)) - 1;
        const int clamped = std::clamp(idx, 0, grid_size - 1);
        if (out.empty() || out.back() != clamped) out.push_back(clamped);
    }
    return out;
}

struct CurveOptions {
    FitOptions fit{};
    std::vector<int> anchors{}; // empty: default_anchors(grid size); ignored in full_newton mode
    bool bridge_gaps = false;
    int workers = 1;
};

namespace detail {

/// For each grid index, the anchor slot it propagates from: nearest anchor, ties to the right.
inline std::vector<int> anchor_segments(int n, const std::vector<int>& anchors) {
    std::vector<int> owner(n, 0);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int a = 1; a < static_cast<int>(anchors.size()); ++a)
            if (std::abs(anchors[a] - i) <= std::abs(anchors[best] - i)) best = a;
        owner[i] = best;
    }
    return owner;
}

inline void fit_full(const Dataset& ds, const LocalDesign& base, double v, const FitOptions& opts,
                     const LocalParams& init, std::optional<LocalFit>& fit, PointStatus& status) {
    LocalDesign design = base;
    design.v = v;
    LocalProblem prob(ds, design);
    if (!prob.has_enough_data()) {
        status = PointStatus::no_local_data;
        return;
    }
    fit = maximize_local(prob, init, opts);
    status = fit->converged ? PointStatus::fitted : PointStatus::not_converged;
}

} // namespace detail

/**
 * Fit the local model at every grid point.
 *
 * full_newton: an independent maximization from zero at each point.
 * one_step / k_step: full maximization at the anchors, then Newton updates
 * propagated outward from each anchor, each point initialized at the nearest
 * previously fitted point of its segment. Segments split at the midpoints
 * between adjacent anchors. Failed points are skipped and propagation
 * continues from the last success.
 */
inline CurveEstimate fit_curve(const Dataset& ds, const std::vector<double>& grid, const LocalDesign& base,
                               const CurveOptions& options = {}) {
    const auto& opts = options.fit;
    opts.validate();
    const int n = static_cast<int>(grid.size());
    if (n == 0) throw DataError("empty grid");
    for (int i = 1; i < n; ++i)
        if (!(grid[i] > grid[i - 1])) throw DataError("grid must be strictly increasing");

    const int p = ds.dim();
    CurveEstimate curve;
    curve.grid = grid;
    curve.h = base.h;
    curve.status.assign(n, PointStatus::no_local_data);
    curve.fits.assign(n, std::nullopt);
    const auto zero = LocalParams::zero(p);

    if (opts.mode == FitMode::full_newton) {
        parallel_for(n, options.workers, [&](std::size_t i) {
            detail::fit_full(ds, base, grid[i], opts, zero, curve.fits[i], curve.status[i]);
        });
    } else {
        auto anchors = options.anchors.empty() ? default_anchors(n) : options.anchors;
        std::sort(anchors.begin(), anchors.end());
        anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());
        for (int a : anchors)
            if (a < 0 || a >= n) throw DataError("anchor index out of range");
        const auto owner = detail::anchor_segments(n, anchors);
        const int steps = opts.mode == FitMode::one_step ? 1 : opts.k;

        auto propagate_point = [&](int i, std::optional<LocalParams>& last) {
            LocalDesign design = base;
            design.v = grid[i];
            LocalProblem prob(ds, design);
            if (!prob.has_enough_data()) {
                curve.status[i] = PointStatus::no_local_data;
                return;
            }
            if (!last) {
                detail::fit_full(ds, base, grid[i], opts, zero, curve.fits[i], curve.status[i]);
            } else {
                try {
                    curve.fits[i] = one_step(prob, *last, steps, opts.gradient_tolerance);
                    curve.status[i] = curve.fits[i]->theta.allFinite() ? PointStatus::fitted : PointStatus::singular;
                } catch (const SingularMatrix&) {
                    curve.fits[i] = maximize_local(prob, *last, opts);
                    curve.status[i] = curve.fits[i]->converged ? PointStatus::fitted : PointStatus::not_converged;
                }
            }
            if (curve.status[i] == PointStatus::fitted) last = curve.fits[i]->xi;
        };

        parallel_for(anchors.size(), options.workers, [&](std::size_t a) {
            const int anchor = anchors[a];
            std::optional<LocalParams> last;
            propagate_point(anchor, last);
            const auto from_anchor = last;
            for (int i = anchor - 1; i >= 0 && owner[i] == static_cast<int>(a); --i) propagate_point(i, last);
            last = from_anchor;
            for (int i = anchor + 1; i < n && owner[i] == static_cast<int>(a); ++i) propagate_point(i, last);
        });
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    curve.beta_hat = Eigen::MatrixXd::Constant(n, p, nan);
    curve.gprime_hat = Eigen::VectorXd::Constant(n, nan);
    curve.se_beta = Eigen::MatrixXd::Constant(n, p, nan);
    for (int i = 0; i < n; ++i) {
        if (!curve.fitted(i)) continue;
        const auto& xi = curve.fits[i]->xi;
        curve.beta_hat.row(i) = xi.delta().transpose();
        curve.gprime_hat(i) = xi.gamma();
    }
    curve.g_hat = Eigen::VectorXd::Constant(n, nan);
    for (int i = 0; i < n; ++i)
        if (curve.fitted(i)) {
            curve.g_anchor = i;
            break;
        }
    if (curve.g_anchor < 0) throw NumericalError("no grid point could be fitted");
    curve.g_hat = integrate_gprime(grid, curve.gprime_hat, curve.g_anchor, options.bridge_gaps);
    return curve;
}

} // namespace varhaz
