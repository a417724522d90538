#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "solver.hpp"

namespace varhaz {

/// Right-continuous step function with one jump per distinct event time.
struct StepHazard {
    std::vector<double> times;      // ascending
    std::vector<double> increments;
    std::vector<double> cumulative;
    std::vector<int> event_counts;  // tied events merged into one jump

    std::size_t size() const noexcept { return times.size(); }

    double operator()(double t) const {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return 0.0;
        return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
    }

    double total() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

/**
 * Breslow estimator for member j given per-cluster relative risks
 * exp(beta(V)' Z + g(V)) (indexed by cluster position; ignored for absent
 * members). Each distinct event time w gets the increment
 * d(w) / sum_l Y_lj(w) risk_l.
 */
inline StepHazard breslow_from_risk(const Dataset& ds, int j, const std::vector<double>& risk) {
    if (static_cast<int>(risk.size()) != ds.n()) throw DataError("risk vector length differs from n");
    const auto& order = ds.order_desc(j);
    struct Jump {
        double time;
        int count;
        double at_risk;
    };
    std::vector<Jump> jumps;
    double at_risk = 0.0;
    std::size_t k = 0;
    while (k < order.size()) {
        const double t = ds.at(order[k], j).time;
        int events = 0;
        std::size_t g = k;
        for (; g < order.size() && ds.at(order[g], j).time == t; ++g) {
            at_risk += risk[order[g]];
            if (ds.counts_event(ds.at(order[g], j))) ++events;
        }
        if (events > 0) {
            if (!(at_risk > 0.0)) throw NumericalError("empty risk set at an event time");
            jumps.push_back({t, events, at_risk});
        }
        k = g;
    }
    StepHazard out;
    double cum = 0.0;
    for (auto it = jumps.rbegin(); it != jumps.rend(); ++it) {
        const double inc = it->count / it->at_risk;
        cum += inc;
        out.times.push_back(it->time);
        out.increments.push_back(inc);
        out.cumulative.push_back(cum);
        out.event_counts.push_back(it->count);
    }
    return out;
}

/// Relative risks exp(beta(V_ij)' Z_ij + g(V_ij)) of member j read off a fitted curve.
inline std::vector<double> relative_risks(const Dataset& ds, int j, const CurveEstimate& curve,
                                          Extrapolation policy = Extrapolation::reject) {
    std::vector<double> risk(ds.n(), 0.0);
    for (int i = 0; i < ds.n(); ++i) {
        const auto& rec = ds.at(i, j);
        if (!rec.present) continue;
        const auto value = curve.lookup(rec.v, policy);
        if (!value)
            throw DataError("no curve value at V=" + std::to_string(rec.v) + " for cluster " +
                            std::to_string(rec.cluster_id) + ", member " + std::to_string(j + 1));
        risk[i] = std::exp(value->beta.dot(rec.z) + value->g);
    }
    return risk;
}

/// Cumulative baseline hazard of member j. Coefficients at V are interpolated linearly on the curve grid.
inline StepHazard breslow(const Dataset& ds, int j, const CurveEstimate& curve,
                          Extrapolation policy = Extrapolation::reject) {
    return breslow_from_risk(ds, j, relative_risks(ds, j, curve, policy));
}

/// Kernel-smoothed hazard lambda(t) = sum_k W_b(t - x_k) dLambda(x_k).
class SmoothHazard {
public:
    SmoothHazard(StepHazard step, Kernel kernel, double bandwidth)
        : step_(std::move(step)), kernel_(kernel), b_(bandwidth) {
        if (!(b_ > 0.0)) throw DataError("smoothing bandwidth must be positive");
    }

    double operator()(double t) const {
        double out = 0.0;
        for (std::size_t k = 0; k < step_.size(); ++k) out += kernel_.scaled(b_, t - step_.times[k]) * step_.increments[k];
        return out;
    }

    /// No boundary correction is applied; values within one bandwidth of 0 are biased downward.
    bool near_origin(double t) const noexcept { return t < b_; }

    double bandwidth() const noexcept { return b_; }
    const Kernel& kernel() const noexcept { return kernel_; }
    const StepHazard& step() const noexcept { return step_; }

private:
    StepHazard step_;
    Kernel kernel_;
    double b_;
};

inline SmoothHazard smooth_hazard(const StepHazard& step, Kernel kernel, double bandwidth) {
    return SmoothHazard(step, kernel, bandwidth);
}

/// range(event times) / 20, or 1 when there is at most one distinct event time.
inline double default_smoothing_bandwidth(const StepHazard& step) {
    if (step.size() < 2) return 1.0;
    return (step.times.back() - step.times.front()) / 20.0;
}

inline void write_step_hazard_csv(std::ostream& out, const StepHazard& step, int member) {
    out << "member,time,increment,cumulative\n";
    std::ostringstream row;
    row.precision(17);
    for (std::size_t k = 0; k < step.size(); ++k) {
        row.str({});
        row << (member + 1) << ',' << step.times[k] << ',' << step.increments[k] << ',' << step.cumulative[k];
        out << row.str() << '\n';
    }
}

} // namespace varhaz
