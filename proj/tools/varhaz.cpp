// Command-line front end: fit, simulate, bench, baseline.

#include <CLI11.hpp>

#include <varhaz/cli.hpp>

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace varhaz;

void add_data_options(CLI::App& cmd, cli::DataOptions& d) {
    cmd.add_option("--input", d.input, "Data CSV")->required();
    cmd.add_option("--cluster-col", d.schema.cluster, "Cluster id column")->capture_default_str();
    cmd.add_option("--member-col", d.schema.member, "Member index column (1-based)")->capture_default_str();
    cmd.add_option("--time-col", d.schema.time, "Observed time column")->capture_default_str();
    cmd.add_option("--status-col", d.schema.status, "Event indicator column")->capture_default_str();
    cmd.add_option("--v-col", d.schema.v, "Exposure column V")->capture_default_str();
    cmd.add_option("--z-cols", d.schema.z, "Covariate columns (default: z1..zp)")->delimiter(',');
    cmd.add_option("--tau", d.tau, "End of study; events after tau are ignored");
}

void add_bandwidth_options(CLI::App& cmd, std::optional<double>& h, std::optional<double>& frac) {
    auto* a = cmd.add_option("--h", h, "Bandwidth");
    auto* b = cmd.add_option("--h-frac", frac, "Bandwidth as a fraction of the V range");
    a->excludes(b);
    b->excludes(a);
}

int run(int argc, char** argv) {
    // --config FILE is expanded here; keys also given as flags are dropped so flags win.
    std::vector<std::string> args;
    std::vector<cli::ConfigEntry> entries;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--config" || a.rfind("--config=", 0) == 0) {
            std::string path;
            if (a == "--config") {
                if (i + 1 >= argc) {
                    std::cerr << "error: --config needs a file\n";
                    return cli::usage;
                }
                path = argv[++i];
            } else {
                path = a.substr(9);
            }
            try {
                const auto extra = cli::read_config(path);
                entries.insert(entries.end(), extra.begin(), extra.end());
            } catch (const DataError& e) {
                std::cerr << "error: " << e.what() << "\n";
                return cli::usage;
            }
            continue;
        }
        args.push_back(std::move(a));
    }
    if (!entries.empty()) {
        if (args.empty() || args.front().rfind("-", 0) == 0) {
            std::cerr << "error: the subcommand must come first when --config is used\n";
            return cli::usage;
        }
        args = cli::merge_config(args, entries);
    }

    CLI::App app{"Varying-coefficient marginal hazard models for clustered failure times"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit"); // -h is taken by the bandwidth
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    const int default_workers = varhaz::default_workers();

    cli::FitConfig fit;
    fit.workers = default_workers;
    auto* fit_cmd = app.add_subcommand("fit", "Estimate coefficient curves with pointwise standard errors");
    add_data_options(*fit_cmd, fit.data);
    add_bandwidth_options(*fit_cmd, fit.h, fit.h_frac);
    fit_cmd->add_option("--out-dir", fit.out_dir, "Output directory")->capture_default_str();
    fit_cmd->add_option("--kernel", fit.kernel, "gaussian or epanechnikov")->capture_default_str();
    fit_cmd->add_option("--grid-size", fit.grid_size, "Grid points on [min V + h, max V - h]")->capture_default_str();
    fit_cmd->add_option("--mode", fit.mode, "full_newton, one_step or k_step")->capture_default_str();
    fit_cmd->add_option("--k", fit.k, "Newton updates per point in k_step mode")->capture_default_str();
    fit_cmd->add_option("--anchors", fit.anchors, "1-based anchor grid positions for one_step/k_step")->delimiter(',');
    fit_cmd->add_option("--level", fit.level, "Confidence intervals at 1 - level")->capture_default_str();
    fit_cmd->add_option("--reference-grid", fit.reference_grid_size, "Grid size of the curve used for residuals")
        ->capture_default_str();
    fit_cmd->add_flag("--weighted", fit.weighted, "Also write the weighted-average estimator (combined.csv)");
    fit_cmd->add_option("--h-type", fit.h_type, "Per-type bandwidth for --weighted (default 1.5 h)");
    fit_cmd->add_option("--config", "key = value file (keys are flag names); explicit flags take precedence");
    fit_cmd->add_option("--workers", fit.workers, "Worker threads")->capture_default_str();

    cli::SimulateConfig sim;
    sim.workers = default_workers;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate clustered data from the Clayton copula model");
    sim_cmd->add_option("--scenario", sim.scenario, "set1, set2 or cohort")->capture_default_str();
    sim_cmd->add_option("--n", sim.n, "Clusters");
    sim_cmd->add_option("--theta", sim.theta, "Clayton dependence (> 0)");
    sim_cmd->add_option("--c", sim.c, "Censoring times ~ U(0, c)");
    sim_cmd->add_option("--seed", sim.seed, "Seed")->capture_default_str();
    sim_cmd->add_option("--out", sim.out, "Output CSV")->required();
    sim_cmd->add_option("--meta", sim.meta, "Metadata JSON (default: <out>.json)");
    sim_cmd->add_option("--config", "key = value file (keys are flag names); explicit flags take precedence");
    sim_cmd->add_option("--workers", sim.workers, "Worker threads")->capture_default_str();

    cli::BenchConfig bench;
    bench.workers = default_workers;
    auto* bench_cmd = app.add_subcommand("bench", "Monte Carlo tables");
    bench_cmd->add_option("--preset", bench.preset, "table1, table2 or table3")->capture_default_str();
    bench_cmd->add_option("--reps", bench.reps, "Replications")->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed, "Master seed")->capture_default_str();
    bench_cmd->add_option("--n", bench.n, "Clusters per replication");
    bench_cmd->add_option("--theta", bench.thetas, "Dependence values (comma separated)")->delimiter(',');
    bench_cmd->add_option("--c", bench.cs, "Censoring bounds (comma separated)")->delimiter(',');
    bench_cmd->add_option("--h", bench.bandwidths, "Bandwidths (comma separated)")->delimiter(',');
    bench_cmd->add_option("--format", bench.format, "csv, text or both")->capture_default_str();
    bench_cmd->add_option("--out-dir", bench.out_dir, "Output directory")->capture_default_str();
    bench_cmd->add_option("--checkpoint-dir", bench.checkpoint_dir, "Resume from / write per-replication checkpoints");
    bench_cmd->add_option("--stop-after", bench.stop_after, "Stop after this many stored replications")
        ->group("");
    bench_cmd->add_option("--reference-grid", bench.reference_grid_size, "Grid size of the residual curve")
        ->capture_default_str();
    bench_cmd->add_option("--config", "key = value file (keys are flag names); explicit flags take precedence");
    bench_cmd->add_option("--workers", bench.workers, "Worker threads")->capture_default_str();

    cli::BaselineConfig base;
    base.workers = default_workers;
    auto* base_cmd = app.add_subcommand("baseline", "Breslow cumulative baseline hazards per member");
    add_data_options(*base_cmd, base.data);
    add_bandwidth_options(*base_cmd, base.h, base.h_frac);
    base_cmd->add_option("--out-dir", base.out_dir, "Output directory")->capture_default_str();
    base_cmd->add_option("--kernel", base.kernel, "gaussian or epanechnikov")->capture_default_str();
    base_cmd->add_option("--reference-grid", base.reference_grid_size, "Grid size of the coefficient curve")
        ->capture_default_str();
    base_cmd->add_flag("--smooth", base.smooth, "Also write kernel-smoothed hazards");
    base_cmd->add_option("--smooth-bandwidth", base.smooth_bandwidth, "Smoothing bandwidth (default range/20)");
    base_cmd->add_option("--smooth-points", base.smooth_points, "Evaluation points")->capture_default_str();
    base_cmd->add_option("--config", "key = value file (keys are flag names); explicit flags take precedence");
    base_cmd->add_option("--workers", base.workers, "Worker threads")->capture_default_str();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cli::usage;
    }

    if (*fit_cmd) {
        if (!fit.h && !fit.h_frac) {
            std::cerr << "error: fit needs --h or --h-frac\n";
            return cli::usage;
        }
        cli::cmd_fit(fit);
    } else if (*sim_cmd) {
        cli::cmd_simulate(sim);
    } else if (*bench_cmd) {
        cli::cmd_bench(bench);
    } else if (*base_cmd) {
        if (!base.h && !base.h_frac) {
            std::cerr << "error: baseline needs --h or --h-frac\n";
            return cli::usage;
        }
        cli::cmd_baseline(base);
    }
    return cli::ok;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const varhaz::RunStopped& e) {
        std::cerr << e.what() << "\n";
        return varhaz::cli::ok;
    } catch (const varhaz::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return varhaz::cli::data_error;
    } catch (const varhaz::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return varhaz::cli::numerical_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return varhaz::cli::numerical_error;
    }
}
