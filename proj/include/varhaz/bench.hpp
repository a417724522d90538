#pragma once

#include <Eigen/Core>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "inference.hpp"
#include "kernel.hpp"
#include "multiestimator.hpp"
#include "parallel.hpp"
#include "simgen.hpp"
#include "solver.hpp"

namespace varhaz {

enum class Estimator { pseudo_partial, one_step, weighted };

inline std::string to_string(Estimator e) {
    switch (e) {
    case Estimator::pseudo_partial: return "pseudo_partial";
    case Estimator::one_step: return "one_step";
    case Estimator::weighted: return "weighted";
    }
    return "?";
}

inline Estimator parse_estimator(const std::string& name) {
    if (name == "pseudo_partial" || name == "P") return Estimator::pseudo_partial;
    if (name == "one_step" || name == "OS") return Estimator::one_step;
    if (name == "weighted" || name == "W") return Estimator::weighted;
    throw DataError("unknown estimator '" + name + "' (expected pseudo_partial, one_step or weighted)");
}

/// Short label used in tables: P, OS, W.
inline std::string short_label(Estimator e) {
    switch (e) {
    case Estimator::pseudo_partial: return "P";
    case Estimator::one_step: return "OS";
    case Estimator::weighted: return "W";
    }
    return "?";
}

/// Root average squared error over the grid points where `estimate` is finite.
inline double rase(const std::vector<double>& grid, const std::vector<double>& estimate,
                   const std::function<double(double)>& truth) {
    if (grid.size() != estimate.size()) throw DataError("grid and estimate lengths differ");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!std::isfinite(estimate[k])) continue;
        const double e = estimate[k] - truth(grid[k]);
        sum += e * e;
        ++used;
    }
    if (used == 0) throw NumericalError("no grid point available for RASE");
    return std::sqrt(sum / static_cast<double>(used));
}

inline std::size_t available_points(const std::vector<double>& estimate) {
    return static_cast<std::size_t>(
        std::count_if(estimate.begin(), estimate.end(), [](double x) { return std::isfinite(x); }));
}

/// A target function with its closed-form truth.
struct Target {
    std::string name;
    std::function<double(double)> truth;
};

/// beta_1..beta_p, and g' unless `beta_only`.
inline std::vector<Target> scenario_targets(const SimScenario& scn, bool beta_only = false) {
    std::vector<Target> out;
    for (int k = 0; k < scn.p; ++k) {
        auto beta = scn.beta;
        out.push_back({"beta" + std::to_string(k + 1), [beta, k](double v) { return beta(v)(k); }});
    }
    if (!beta_only) {
        if (!scn.gprime) throw DataError("scenario has no g' truth");
        out.push_back({"gprime", scn.gprime});
    }
    return out;
}

struct McConfig {
    SimScenario scenario = set1_scenario();
    Estimator estimator = Estimator::pseudo_partial;
    int reps = 200;
    std::vector<double> bandwidths{0.15};
    std::vector<double> probes{};         // pointwise bias / SD / SE at these v
    bool curve_metrics = false;           // RASE/ASE over the grid
    bool standard_errors = true;          // probe and curve SEs (plug-in sandwich or combined)
    int grid_size = 200;
    double grid_trim = -1.0;              // grid on [v_lo + trim, v_hi - trim]; negative: trim by h
    int reference_grid_size = 200;
    Kernel kernel{};
    FitOptions fit{};
    std::uint64_t master_seed = 20240607;
    int workers = 1;

    void validate() const {
        scenario.validate();
        if (reps < 1) throw DataError("reps must be >= 1");
        if (bandwidths.empty()) throw DataError("at least one bandwidth is required");
        for (double h : bandwidths)
            if (!(h > 0.0)) throw DataError("bandwidths must be positive");
        if (probes.empty() && !curve_metrics) throw DataError("nothing to compute: no probes and no curve metrics");
        if (!probes.empty() && estimator == Estimator::one_step)
            throw DataError("probe summaries are available for pseudo_partial and weighted only");
        if (grid_size < 1) throw DataError("grid_size must be >= 1");
        fit.validate();
    }

    std::vector<Target> probe_targets() const {
        return scenario_targets(scenario, estimator == Estimator::weighted);
    }
    std::vector<Target> curve_targets() const { return scenario_targets(scenario, true); }

    std::vector<double> grid(double h) const {
        const double trim = grid_trim < 0.0 ? h : grid_trim;
        if (!(scenario.v_lo + trim < scenario.v_hi - trim)) throw DataError("bandwidth too large for the V range");
        return linspace(scenario.v_lo + trim, scenario.v_hi - trim, grid_size);
    }

    /// Scenario of replication r: the master seed's replication substream r.
    SimScenario replication_scenario(int r) const {
        SimScenario s = scenario;
        s.seed = substream_seed(master_seed, StreamPurpose::replication, static_cast<std::uint64_t>(r));
        return s;
    }

    /// Stable identity of the configuration, stored in checkpoints.
    std::string fingerprint() const {
        std::ostringstream out;
        out.precision(17);
        out << scenario.id << '|' << scenario.n << '|' << scenario.J << '|' << scenario.p << '|' << scenario.theta << '|'
            << scenario.censor_c << '|' << to_string(estimator) << '|' << master_seed << '|' << grid_size << '|'
            << grid_trim << '|' << reference_grid_size << '|' << kernel.name() << '|' << curve_metrics << '|'
            << standard_errors << "|h";
        for (double h : bandwidths) out << ',' << h;
        out << "|v";
        for (double v : probes) out << ',' << v;
        return out.str();
    }
};

/// Everything one replication contributes, per bandwidth.
struct ReplicationResult {
    int rep = 0;
    struct PerBandwidth {
        std::vector<std::vector<double>> probe_est; // [probe][target], NaN where skipped
        std::vector<std::vector<double>> probe_se;
        std::vector<std::vector<double>> curve_est; // [target][grid]
        std::vector<std::vector<double>> curve_se;
    };
    std::vector<PerBandwidth> by_h;
};

namespace detail {

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline ReplicationResult::PerBandwidth run_pooled(const McConfig& cfg, const Dataset& ds, double h) {
    ReplicationResult::PerBandwidth out;
    const auto probe_targets = cfg.probe_targets();
    const int p = ds.dim();
    const LocalDesign base{0.0, h, cfg.kernel, std::nullopt};

    std::optional<Residuals> residuals;
    auto get_residuals = [&]() -> const Residuals* {
        if (!residuals) {
            try {
                residuals = Residuals::from_curve(ds, reference_curve(ds, base, cfg.reference_grid_size),
                                                  Extrapolation::clamp);
            } catch (const NumericalError&) {
                residuals = Residuals{};
            }
        }
        return residuals->has(0) ? &*residuals : nullptr;
    };

    for (double v : cfg.probes) {
        std::vector<double> est(probe_targets.size(), nan()), se(probe_targets.size(), nan());
        LocalDesign design = base;
        design.v = v;
        LocalProblem prob(ds, design);
        if (prob.has_enough_data()) {
            const auto fit = maximize_local(prob, LocalParams::zero(p), cfg.fit);
            if (fit.converged) {
                for (int k = 0; k < p; ++k) est[k] = fit.xi.delta()(k);
                est[p] = fit.xi.gamma();
                if (cfg.standard_errors) {
                    if (const auto* res = get_residuals()) {
                        try {
                            const auto parts = infer_point(prob, fit, *res);
                            const auto nse = natural_se(parts, p, h);
                            for (int k = 0; k < p; ++k) se[k] = nse.beta(k);
                            se[p] = nse.gprime;
                        } catch (const SingularMatrix&) {
                        }
                    }
                }
            }
        }
        out.probe_est.push_back(std::move(est));
        out.probe_se.push_back(std::move(se));
    }

    if (cfg.curve_metrics) {
        const auto grid = cfg.grid(h);
        CurveOptions copts;
        copts.fit = cfg.fit;
        copts.fit.mode = cfg.estimator == Estimator::one_step ? FitMode::one_step : FitMode::full_newton;
        out.curve_est.assign(p, std::vector<double>(grid.size(), nan()));
        out.curve_se.assign(p, std::vector<double>(grid.size(), nan()));
        try {
            auto curve = fit_curve(ds, grid, base, copts);
            if (cfg.standard_errors)
                if (const auto* res = get_residuals()) attach_standard_errors(curve, ds, base, *res);
            for (int k = 0; k < p; ++k)
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    out.curve_est[k][i] = curve.beta_hat(static_cast<Eigen::Index>(i), k);
                    out.curve_se[k][i] = curve.se_beta(static_cast<Eigen::Index>(i), k);
                }
        } catch (const NumericalError&) {
        }
    }
    return out;
}

inline ReplicationResult::PerBandwidth run_weighted(const McConfig& cfg, const Dataset& ds, double h) {
    ReplicationResult::PerBandwidth out;
    const int p = ds.dim();
    const auto residuals = per_type_residuals(ds, h, cfg.kernel, cfg.reference_grid_size);
    for (double v : cfg.probes) {
        std::vector<double> est(p, nan()), se(p, nan());
        auto stack = fit_per_type(ds, v, h, cfg.kernel, cfg.fit);
        complete_stack(ds, stack, residuals);
        if (stack.usable_types().size() >= 2) {
            for (int k = 0; k < p; ++k) {
                try {
                    const auto w = combine(stack, k);
                    est[k] = w.estimate;
                    se[k] = w.se;
                } catch (const SingularMatrix&) {
                }
            }
        }
        out.probe_est.push_back(std::move(est));
        out.probe_se.push_back(std::move(se));
    }
    if (cfg.curve_metrics) {
        const auto grid = cfg.grid(h);
        const auto wc = weighted_curve(ds, grid, h, cfg.kernel, cfg.fit, cfg.reference_grid_size);
        out.curve_est.assign(p, std::vector<double>(grid.size(), nan()));
        out.curve_se.assign(p, std::vector<double>(grid.size(), nan()));
        for (int k = 0; k < p; ++k)
            for (std::size_t i = 0; i < grid.size(); ++i) {
                out.curve_est[k][i] = wc.estimate(static_cast<Eigen::Index>(i), k);
                out.curve_se[k][i] = wc.se(static_cast<Eigen::Index>(i), k);
            }
    }
    return out;
}

} // namespace detail

inline ReplicationResult run_replication(const McConfig& cfg, int r) {
    const auto ds = simulate_dataset(cfg.replication_scenario(r));
    ReplicationResult out;
    out.rep = r;
    for (double h : cfg.bandwidths)
        out.by_h.push_back(cfg.estimator == Estimator::weighted ? detail::run_weighted(cfg, ds, h)
                                                                 : detail::run_pooled(cfg, ds, h));
    return out;
}

// ---- checkpoints -----------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const std::vector<double>& v) {
    auto arr = nlohmann::json::array();
    for (double x : v) arr.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
    return arr;
}

inline std::vector<double> vec_from_json(const nlohmann::json& arr) {
    std::vector<double> out;
    for (const auto& x : arr) out.push_back(x.is_null() ? nan() : x.get<double>());
    return out;
}

inline nlohmann::json mat_to_json(const std::vector<std::vector<double>>& m) {
    auto arr = nlohmann::json::array();
    for (const auto& row : m) arr.push_back(vec_to_json(row));
    return arr;
}

inline std::vector<std::vector<double>> mat_from_json(const nlohmann::json& arr) {
    std::vector<std::vector<double>> out;
    for (const auto& row : arr) out.push_back(vec_from_json(row));
    return out;
}

} // namespace detail

inline nlohmann::json to_json(const ReplicationResult& r) {
    nlohmann::json j;
    j["rep"] = r.rep;
    auto hs = nlohmann::json::array();
    for (const auto& b : r.by_h)
        hs.push_back({{"probe_est", detail::mat_to_json(b.probe_est)},
                      {"probe_se", detail::mat_to_json(b.probe_se)},
                      {"curve_est", detail::mat_to_json(b.curve_est)},
                      {"curve_se", detail::mat_to_json(b.curve_se)}});
    j["by_h"] = hs;
    return j;
}

inline ReplicationResult replication_from_json(const nlohmann::json& j) {
    ReplicationResult r;
    r.rep = j.at("rep").get<int>();
    for (const auto& b : j.at("by_h"))
        r.by_h.push_back({detail::mat_from_json(b.at("probe_est")), detail::mat_from_json(b.at("probe_se")),
                          detail::mat_from_json(b.at("curve_est")), detail::mat_from_json(b.at("curve_se"))});
    return r;
}

/**
 * Per-replication checkpoint in JSON lines: a header with the configuration
 * fingerprint, then one line per finished replication. Lines from a
 * different configuration or a truncated final line are ignored.
 */
class Checkpoint {
public:
    Checkpoint(std::string path, std::string fingerprint) : path_(std::move(path)), fingerprint_(std::move(fingerprint)) {}

    std::map<int, ReplicationResult> load() const {
        std::map<int, ReplicationResult> out;
        std::ifstream in(path_);
        if (!in) return out;
        std::string line;
        if (!std::getline(in, line)) return out;
        try {
            const auto header = nlohmann::json::parse(line);
            if (header.value("fingerprint", std::string{}) != fingerprint_) return out;
        } catch (const nlohmann::json::exception&) {
            return out;
        }
        while (std::getline(in, line)) {
            try {
                auto r = replication_from_json(nlohmann::json::parse(line));
                out.emplace(r.rep, std::move(r));
            } catch (const nlohmann::json::exception&) {
            }
        }
        return out;
    }

    /// Rewrite the file with the header and `done`, leaving it ready for appends.
    void reset(const std::map<int, ReplicationResult>& done) const {
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + path_);
        out << nlohmann::json{{"fingerprint", fingerprint_}}.dump() << '\n';
        for (const auto& [rep, r] : done) out << to_json(r).dump() << '\n';
    }

    void append(const ReplicationResult& r) const {
        std::ofstream out(path_, std::ios::app);
        if (!out) throw DataError("cannot write checkpoint " + path_);
        out << to_json(r).dump() << '\n';
    }

private:
    std::string path_;
    std::string fingerprint_;
};

// ---- aggregation -----------------------------------------------------------

/// Pointwise summary at one probe, one bandwidth and one target.
struct ProbeRow {
    std::string target;
    double v = 0.0;
    double h = 0.0;
    int count = 0;
    int skips = 0;
    double bias = 0.0; // mean estimate - truth
    double se = 0.0;   // mean of estimated SEs; NaN when none
    double sd = 0.0;   // sample SD; NaN when count < 2
    double mse = 0.0;  // mean squared error
};

/// Grid summary for one bandwidth and one beta component.
struct CurveRow {
    std::string target;
    double h = 0.0;
    int count = 0;       // replications with at least one grid estimate
    int skips = 0;
    double abias = 0.0;  // grid average of |pointwise mean - truth|
    double sd = 0.0;     // grid average of pointwise SDs
    double se = 0.0;     // grid average of pointwise mean SEs
    double rase = 0.0;   // mean RASE over replications
    double ase_mean = 0.0;
    double ase_median = 0.0;
    double ase_std = 0.0;
};

struct McSummary {
    std::string scenario;
    Estimator estimator = Estimator::pseudo_partial;
    int reps = 0;
    std::vector<ProbeRow> probes;
    std::vector<CurveRow> curves;
    std::vector<std::vector<std::vector<double>>> ase; // [h][target][rep], NaN when skipped

    const ProbeRow& probe(const std::string& target, double v, double h) const {
        for (const auto& row : probes)
            if (row.target == target && row.v == v && row.h == h) return row;
        throw DataError("no probe row for " + target);
    }

    const CurveRow& curve(const std::string& target, double h) const {
        for (const auto& row : curves)
            if (row.target == target && row.h == h) return row;
        throw DataError("no curve row for " + target);
    }
};

namespace detail {

struct Moments {
    int count = 0;
    double mean = 0.0;
    double sd = 0.0;
};

/// Mean and sample SD of the finite entries, accumulated in index order.
inline Moments moments(const std::vector<double>& xs) {
    Moments m;
    double sum = 0.0;
    for (double x : xs)
        if (std::isfinite(x)) {
            sum += x;
            ++m.count;
        }
    if (m.count == 0) {
        m.mean = m.sd = nan();
        return m;
    }
    m.mean = sum / m.count;
    if (m.count < 2) {
        m.sd = nan();
        return m;
    }
    double ss = 0.0;
    for (double x : xs)
        if (std::isfinite(x)) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / (m.count - 1));
    return m;
}

inline double median(std::vector<double> xs) {
    xs.erase(std::remove_if(xs.begin(), xs.end(), [](double x) { return !std::isfinite(x); }), xs.end());
    if (xs.empty()) return nan();
    std::sort(xs.begin(), xs.end());
    const auto n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

} // namespace detail

/// Reduce replications (in replication order) into tables.
inline McSummary summarize(const McConfig& cfg, const std::vector<ReplicationResult>& results) {
    McSummary s;
    s.scenario = cfg.scenario.id;
    s.estimator = cfg.estimator;
    s.reps = static_cast<int>(results.size());
    const auto probe_targets = cfg.probe_targets();
    const auto curve_targets = cfg.curve_targets();
    const int R = s.reps;

    for (std::size_t hi = 0; hi < cfg.bandwidths.size(); ++hi) {
        const double h = cfg.bandwidths[hi];
        for (std::size_t t = 0; t < probe_targets.size(); ++t)
            for (std::size_t pi = 0; pi < cfg.probes.size(); ++pi) {
                const double v = cfg.probes[pi];
                const double truth = probe_targets[t].truth(v);
                std::vector<double> est(R), se(R), sq(R);
                for (int r = 0; r < R; ++r) {
                    est[r] = results[r].by_h[hi].probe_est[pi][t];
                    se[r] = results[r].by_h[hi].probe_se[pi][t];
                    if (!std::isfinite(est[r])) se[r] = detail::nan();
                    sq[r] = (est[r] - truth) * (est[r] - truth);
                }
                const auto m = detail::moments(est);
                ProbeRow row;
                row.target = probe_targets[t].name;
                row.v = v;
                row.h = h;
                row.count = m.count;
                row.skips = R - m.count;
                row.bias = m.mean - truth;
                row.sd = m.sd;
                row.se = detail::moments(se).mean;
                row.mse = detail::moments(sq).mean;
                s.probes.push_back(row);
            }

        std::vector<std::vector<double>> ase_h;
        if (cfg.curve_metrics) {
            const auto grid = cfg.grid(h);
            for (std::size_t t = 0; t < curve_targets.size(); ++t) {
                std::vector<double> rases(R, detail::nan());
                for (int r = 0; r < R; ++r) {
                    const auto& est = results[r].by_h[hi].curve_est[t];
                    if (available_points(est) > 0) rases[r] = rase(grid, est, curve_targets[t].truth);
                }
                std::vector<double> ases(R);
                for (int r = 0; r < R; ++r) ases[r] = rases[r] * rases[r];
                double abias = 0.0, sd = 0.0, se = 0.0;
                int n_abias = 0, n_sd = 0, n_se = 0;
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    std::vector<double> col(R), secol(R);
                    for (int r = 0; r < R; ++r) {
                        col[r] = results[r].by_h[hi].curve_est[t][i];
                        secol[r] = std::isfinite(col[r]) ? results[r].by_h[hi].curve_se[t][i] : detail::nan();
                    }
                    const auto m = detail::moments(col);
                    if (m.count > 0) {
                        abias += std::abs(m.mean - curve_targets[t].truth(grid[i]));
                        ++n_abias;
                    }
                    if (std::isfinite(m.sd)) {
                        sd += m.sd;
                        ++n_sd;
                    }
                    const auto ms = detail::moments(secol);
                    if (ms.count > 0) {
                        se += ms.mean;
                        ++n_se;
                    }
                }
                const auto mr = detail::moments(rases);
                const auto ma = detail::moments(ases);
                CurveRow row;
                row.target = curve_targets[t].name;
                row.h = h;
                row.count = mr.count;
                row.skips = R - mr.count;
                row.abias = n_abias ? abias / n_abias : detail::nan();
                row.sd = n_sd ? sd / n_sd : detail::nan();
                row.se = n_se ? se / n_se : detail::nan();
                row.rase = mr.mean;
                row.ase_mean = ma.mean;
                row.ase_median = detail::median(ases);
                row.ase_std = ma.sd;
                s.curves.push_back(row);
                ase_h.push_back(std::move(ases));
            }
        }
        s.ase.push_back(std::move(ase_h));
    }
    return s;
}

/// Raised when a run stops early on request; completed replications stay in the checkpoint.
class RunStopped : public Error {
public:
    using Error::Error;
};

struct RunOptions {
    std::optional<std::string> checkpoint;     // JSON-lines file; resumed when present
    std::optional<int> stop_after;             // stop once this many replications are stored (for resume tests)
    std::function<void(int done, int total)> progress{};
};

/**
 * Monte Carlo run. Replication r simulates from substream r of the master
 * seed, so the summary depends only on the configuration and never on the
 * worker count or on interruptions.
 */
inline McSummary run_mc(const McConfig& cfg, const RunOptions& run = {}) {
    cfg.validate();
    std::map<int, ReplicationResult> done;
    std::optional<Checkpoint> cp;
    if (run.checkpoint) {
        cp.emplace(*run.checkpoint, cfg.fingerprint());
        for (auto& [rep, r] : cp->load())
            if (rep >= 0 && rep < cfg.reps) done.emplace(rep, std::move(r));
        cp->reset(done);
    }
    std::vector<int> todo;
    for (int r = 0; r < cfg.reps; ++r)
        if (!done.count(r)) todo.push_back(r);
    if (run.stop_after) {
        const int room = std::max(0, *run.stop_after - static_cast<int>(done.size()));
        if (static_cast<int>(todo.size()) > room) todo.resize(room);
    }

    std::vector<std::optional<ReplicationResult>> fresh(todo.size());
    std::mutex mutex;
    int finished = static_cast<int>(done.size());
    parallel_for(todo.size(), cfg.workers, [&](std::size_t k) {
        auto r = run_replication(cfg, todo[k]);
        std::lock_guard lock(mutex);
        if (cp) cp->append(r);
        ++finished;
        if (run.progress) run.progress(finished, cfg.reps);
        fresh[k] = std::move(r);
    });
    for (auto& r : fresh) done.emplace(r->rep, std::move(*r));

    if (static_cast<int>(done.size()) < cfg.reps)
        throw RunStopped("stopped after " + std::to_string(done.size()) + " of " + std::to_string(cfg.reps) +
                         " replications; rerun with the same checkpoint to resume");
    std::vector<ReplicationResult> ordered;
    ordered.reserve(done.size());
    for (auto& [rep, r] : done) ordered.push_back(std::move(r));
    return summarize(cfg, ordered);
}

// ---- reports ---------------------------------------------------------------

enum class ReportFormat { csv, text };

inline ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "text") return ReportFormat::text;
    throw DataError("unknown report format '" + name + "' (expected csv or text)");
}

namespace detail {

inline std::string cell(double x, ReportFormat fmt) {
    if (!std::isfinite(x)) return "NA";
    std::ostringstream out;
    if (fmt == ReportFormat::csv)
        out << std::setprecision(17) << x;
    else
        out << std::fixed << std::setprecision(4) << x;
    return out.str();
}

inline std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                          ReportFormat fmt) {
    std::ostringstream out;
    if (fmt == ReportFormat::csv) {
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "," : "") << cells[c];
            out << '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out.str();
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c)
            out << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << cells[c];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out.str();
}

} // namespace detail

/// Pointwise table for one target: columns v, h, bias, SE, SD; rows ordered by v then h.
inline std::string report_probes(const McSummary& s, const std::string& target, ReportFormat fmt) {
    std::vector<const ProbeRow*> rows;
    for (const auto& r : s.probes)
        if (r.target == target) rows.push_back(&r);
    std::stable_sort(rows.begin(), rows.end(), [](const ProbeRow* a, const ProbeRow* b) {
        return a->v != b->v ? a->v < b->v : a->h < b->h;
    });
    std::vector<std::vector<std::string>> cells;
    for (const auto* r : rows)
        cells.push_back({detail::cell(r->v, fmt), detail::cell(r->h, fmt), detail::cell(r->bias, fmt),
                         detail::cell(r->se, fmt), detail::cell(r->sd, fmt)});
    return detail::render({"v", "h", "bias", "SE", "SD"}, cells, fmt);
}

/// Grid summary: estimator, target, h, Abias, SD, SE, RASE.
inline std::string report_curves(const std::vector<McSummary>& summaries, ReportFormat fmt) {
    std::vector<std::vector<std::string>> cells;
    for (const auto& s : summaries)
        for (const auto& r : s.curves)
            cells.push_back({short_label(s.estimator), r.target, detail::cell(r.h, fmt), detail::cell(r.abias, fmt),
                             detail::cell(r.sd, fmt), detail::cell(r.se, fmt), detail::cell(r.rase, fmt)});
    return detail::render({"estimator", "target", "h", "Abias", "SD", "SE", "RASE"}, cells, fmt);
}

/// ASE summary for one target: h, estimator, mean, median, std; estimators interleaved per bandwidth.
inline std::string report_ase(const std::vector<McSummary>& summaries, const std::string& target, ReportFormat fmt) {
    std::vector<double> hs;
    for (const auto& s : summaries)
        for (const auto& r : s.curves)
            if (r.target == target && std::find(hs.begin(), hs.end(), r.h) == hs.end()) hs.push_back(r.h);
    std::sort(hs.begin(), hs.end());
    std::vector<std::vector<std::string>> cells;
    for (double h : hs)
        for (const auto& s : summaries)
            for (const auto& r : s.curves)
                if (r.target == target && r.h == h)
                    cells.push_back({detail::cell(h, fmt), short_label(s.estimator), detail::cell(r.ase_mean, fmt),
                                     detail::cell(r.ase_median, fmt), detail::cell(r.ase_std, fmt)});
    return detail::render({"h", "estimator", "mean", "median", "std"}, cells, fmt);
}

/// Replication counts and skips per probe row and curve row.
inline std::string report_counts(const McSummary& s, ReportFormat fmt) {
    std::vector<std::vector<std::string>> cells;
    for (const auto& r : s.probes)
        cells.push_back({short_label(s.estimator), r.target, detail::cell(r.v, fmt), detail::cell(r.h, fmt),
                         std::to_string(r.count), std::to_string(r.skips)});
    for (const auto& r : s.curves)
        cells.push_back({short_label(s.estimator), r.target, "grid", detail::cell(r.h, fmt), std::to_string(r.count),
                         std::to_string(r.skips)});
    return detail::render({"estimator", "target", "v", "h", "count", "skips"}, cells, fmt);
}

} // namespace varhaz
