#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "kernel.hpp"

namespace varhaz {

/// Minimum kernel-weighted event count, sum over events of K_h(V - v) * h, for a local fit.
inline constexpr double min_effective_events = 5.0;

/**
 * Local parameter xi = (delta, eta, gamma): the local value of beta, its slope,
 * and the slope of g. The level g(v) cancels from the partial likelihood and is
 * not part of the local problem.
 */
struct LocalParams {
    Eigen::VectorXd xi;

    LocalParams() = default;
    explicit LocalParams(Eigen::VectorXd values) : xi(std::move(values)) {}

    static LocalParams zero(int p) { return LocalParams(Eigen::VectorXd::Zero(2 * p + 1)); }

    int p() const noexcept { return static_cast<int>((xi.size() - 1) / 2); }
    auto delta() const { return xi.head(p()); }
    auto eta() const { return xi.segment(p(), p()); }
    double gamma() const { return xi(xi.size() - 1); }

    /// Diagonal of H: p ones followed by p + 1 copies of h.
    static Eigen::VectorXd scaling(int p, double h) {
        Eigen::VectorXd s = Eigen::VectorXd::Constant(2 * p + 1, h);
        s.head(p).setOnes();
        return s;
    }

    /// theta = H xi.
    Eigen::VectorXd rescaled(double h) const { return scaling(p(), h).cwiseProduct(xi); }

    static LocalParams from_rescaled(const Eigen::VectorXd& theta, double h) {
        const int p = static_cast<int>((theta.size() - 1) / 2);
        return LocalParams(theta.cwiseQuotient(scaling(p, h)));
    }
};

/// Evaluation point, bandwidth and kernel of one local fit. `member` restricts the fit to one failure type.
struct LocalDesign {
    double v = 0.0;
    double h = 1.0;
    Kernel kernel{};
    std::optional<int> member{};
};

/// Augmented covariate X* = (Z, Z (V - v), V - v).
inline Eigen::VectorXd augmented_covariate(const SubjectRecord& rec, double v) {
    const auto p = rec.z.size();
    Eigen::VectorXd x(2 * p + 1);
    const double dv = rec.v - v;
    x.head(p) = rec.z;
    x.segment(p, p) = rec.z * dv;
    x(2 * p) = dv;
    return x;
}

/// U* = H^{-1} X* = (Z, Z (V - v)/h, (V - v)/h).
inline Eigen::VectorXd rescaled_covariate(const SubjectRecord& rec, double v, double h) {
    const auto p = rec.z.size();
    Eigen::VectorXd u(2 * p + 1);
    const double dv = (rec.v - v) / h;
    u.head(p) = rec.z;
    u.segment(p, p) = rec.z * dv;
    u(2 * p) = dv;
    return u;
}

/// Kernel-weighted risk-set aggregates S_0, S_1, S_2 at one time point.
struct SHat {
    double s0 = 0.0;
    Eigen::VectorXd s1;
    Eigen::MatrixXd s2;
};

/// Value, score and Hessian of the local log-likelihood in the rescaled coordinates theta = H xi.
struct LocalEvaluation {
    double value = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
};

/**
 * The data around one evaluation point, prepared for repeated evaluation of the
 * local log pseudo-partial likelihood
 *
 *     l(theta) = n^-1 sum_j sum_i int K_h(V_ij - v) [theta' U*_ij
 *                 - log sum_l Y_lj(w) exp(theta' U*_lj) K_h(V_lj - v)] dN_ij(w).
 *
 * Records with zero kernel weight are dropped: they add nothing to any sum.
 * Each member's entries are kept in descending time order so risk sets are
 * prefixes. Sums are accumulated unnormalized and divided by n at the end.
 */
class LocalProblem {
public:
    struct Entry {
        int cluster;
        double time;
        bool event;        // counts as a jump within [0, tau]
        double weight;     // K_h(V - v)
        double log_weight;
        Eigen::VectorXd u; // U*
    };

    LocalProblem(const Dataset& ds, const LocalDesign& design) : ds_(&ds), design_(design) {
        if (!(design.h > 0.0)) throw DataError("bandwidth must be positive");
        if (design.member && (*design.member < 0 || *design.member >= ds.members()))
            throw DataError("member index out of range");
        dim_ = 2 * ds.dim() + 1;
        entries_.resize(ds.members());
        for (int j = 0; j < ds.members(); ++j) {
            if (design.member && *design.member != j) continue;
            for (int i : ds.order_desc(j)) {
                const auto& rec = ds.at(i, j);
                const double w = design.kernel.scaled(design.h, rec.v - design.v);
                if (w <= 0.0) continue;
                const bool ev = ds.counts_event(rec);
                entries_[j].push_back({i, rec.time, ev, w, std::log(w), rescaled_covariate(rec, design.v, design.h)});
                if (ev) effective_events_ += w * design.h;
            }
        }
    }

    const Dataset& data() const noexcept { return *ds_; }
    const LocalDesign& design() const noexcept { return design_; }
    int dim() const noexcept { return dim_; }
    int p() const noexcept { return (dim_ - 1) / 2; }
    double n() const noexcept { return static_cast<double>(ds_->n()); }
    double effective_events() const noexcept { return effective_events_; }
    const std::vector<Entry>& entries(int j) const { return entries_.at(j); }
    int members() const noexcept { return static_cast<int>(entries_.size()); }

    bool has_enough_data() const noexcept { return effective_events_ >= min_effective_events; }

    void require_data() const {
        if (!has_enough_data()) throw NoLocalData(design_.v, effective_events_);
    }

    /// order 0: value only; 1: value and score; 2: all three.
    LocalEvaluation evaluate(const Eigen::VectorXd& theta, int order = 2) const {
        auto out = evaluate_sums(theta, order);
        const double inv_n = 1.0 / n();
        out.value *= inv_n;
        out.score *= inv_n;
        if (order >= 2) out.hessian *= inv_n;
        return out;
    }

    /**
     * evaluate() before the 1/n normalization. Evaluation needs one event with
     * positive kernel weight; fitting additionally needs has_enough_data().
     */
    LocalEvaluation evaluate_sums(const Eigen::VectorXd& theta, int order = 2) const {
        if (!(effective_events_ > 0.0)) throw NoLocalData(design_.v, effective_events_);
        LocalEvaluation out;
        out.score = Eigen::VectorXd::Zero(dim_);
        if (order >= 2) out.hessian = Eigen::MatrixXd::Zero(dim_, dim_);

        Eigen::VectorXd s1(dim_), e(dim_);
        Eigen::MatrixXd s2(order >= 2 ? dim_ : 0, order >= 2 ? dim_ : 0);
        for (const auto& list : entries_) {
            if (list.empty()) continue;
            // Running log-sum-exp: s0, s1, s2 are scaled by exp(-shift).
            double shift = -std::numeric_limits<double>::infinity();
            double s0 = 0.0;
            s1.setZero();
            if (order >= 2) s2.setZero();
            std::size_t k = 0;
            while (k < list.size()) {
                const double t = list[k].time;
                std::size_t g = k;
                for (; g < list.size() && list[g].time == t; ++g) {
                    const auto& en = list[g];
                    const double a = theta.dot(en.u) + en.log_weight;
                    if (a > shift) {
                        const double r = std::exp(shift - a);
                        s0 *= r;
                        if (order >= 1) s1 *= r;
                        if (order >= 2) s2 *= r;
                        shift = a;
                    }
                    const double w = std::exp(a - shift);
                    s0 += w;
                    if (order >= 1) s1.noalias() += w * en.u;
                    if (order >= 2) s2.selfadjointView<Eigen::Lower>().rankUpdate(en.u, w);
                }
                bool any_event = false;
                for (std::size_t q = k; q < g; ++q) any_event = any_event || list[q].event;
                if (any_event) {
                    const double log_s0 = shift + std::log(s0);
                    if (order >= 1) e = s1 / s0;
                    for (std::size_t q = k; q < g; ++q) {
                        const auto& en = list[q];
                        if (!en.event) continue;
                        out.value += en.weight * (theta.dot(en.u) - log_s0);
                        if (order >= 1) out.score.noalias() += en.weight * (en.u - e);
                        if (order >= 2) {
                            out.hessian.selfadjointView<Eigen::Lower>().rankUpdate(e, en.weight);
                            out.hessian.triangularView<Eigen::Lower>() -= (en.weight / s0) * s2;
                        }
                    }
                }
                k = g;
            }
        }
        if (order >= 2) out.hessian.triangularView<Eigen::StrictlyUpper>() = out.hessian.transpose();
        return out;
    }

    /// (1/n) sum_i K_h(V_ij - v) Y_ij(w) exp(theta' U*_ij) U*_ij^{(x)k}, k = 0, 1, 2, without stabilization.
    SHat s_hat(int j, double w, const Eigen::VectorXd& theta) const {
        SHat s{0.0, Eigen::VectorXd::Zero(dim_), Eigen::MatrixXd::Zero(dim_, dim_)};
        for (const auto& en : entries_.at(j)) {
            if (en.time < w) break;
            const double r = en.weight * std::exp(theta.dot(en.u));
            s.s0 += r;
            s.s1 += r * en.u;
            s.s2 += r * en.u * en.u.transpose();
        }
        s.s0 /= n();
        s.s1 /= n();
        s.s2 /= n();
        return s;
    }

    /// Stabilized ratio S_1/S_0 over the member-j risk set at w; nullopt when the weighted risk set is empty.
    std::optional<Eigen::VectorXd> risk_mean(int j, double w, const Eigen::VectorXd& theta) const {
        double shift = -std::numeric_limits<double>::infinity();
        double s0 = 0.0;
        Eigen::VectorXd s1 = Eigen::VectorXd::Zero(dim_);
        for (const auto& en : entries_.at(j)) {
            if (en.time < w) break;
            const double a = theta.dot(en.u) + en.log_weight;
            if (a > shift) {
                const double r = std::exp(shift - a);
                s0 *= r;
                s1 *= r;
                shift = a;
            }
            const double x = std::exp(a - shift);
            s0 += x;
            s1 += x * en.u;
        }
        if (s0 <= 0.0) return std::nullopt;
        return Eigen::VectorXd(s1 / s0);
    }

private:
    const Dataset* ds_;
    LocalDesign design_;
    int dim_ = 0;
    double effective_events_ = 0.0;
    std::vector<std::vector<Entry>> entries_;
};

// Free-function surface in terms of xi; score and Hessian are with respect to theta = H xi.

inline SHat s_hat(const Dataset& ds, const LocalDesign& design, int j, double w, const LocalParams& xi) {
    LocalProblem prob(ds, design);
    return prob.s_hat(j, w, xi.rescaled(design.h));
}

inline double local_loglik(const Dataset& ds, const LocalDesign& design, const LocalParams& xi) {
    return LocalProblem(ds, design).evaluate(xi.rescaled(design.h), 0).value;
}

inline Eigen::VectorXd local_score(const Dataset& ds, const LocalDesign& design, const LocalParams& xi) {
    return LocalProblem(ds, design).evaluate(xi.rescaled(design.h), 1).score;
}

inline Eigen::MatrixXd local_hessian(const Dataset& ds, const LocalDesign& design, const LocalParams& xi) {
    return LocalProblem(ds, design).evaluate(xi.rescaled(design.h), 2).hessian;
}

} // namespace varhaz
