#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("varhaz_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) + "_" +
                std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Result run(const std::string& args) const {
        const auto log = path("log.txt");
        const std::string cmd = std::string(VARHAZ_CLI_PATH) + " " + args + " > " + log + " 2>&1";
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = read(log);
        return r;
    }

    static std::string read(const std::string& file) {
        std::ifstream in(file);
        std::stringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }

    static std::size_t lines(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, HelpListsFlagsPerSubcommand) {
    const std::vector<std::pair<std::string, std::vector<std::string>>> expect{
        {"fit", {"--input", "--h", "--h-frac", "--kernel", "--grid-size", "--mode", "--weighted", "--config"}},
        {"simulate", {"--scenario", "--n", "--theta", "--c", "--seed", "--out"}},
        {"bench", {"--preset", "--reps", "--checkpoint-dir", "--format", "--workers"}},
        {"baseline", {"--input", "--smooth", "--smooth-bandwidth"}}};
    for (const auto& [sub, flags] : expect) {
        const auto r = run(sub + " --help");
        EXPECT_EQ(r.code, 0) << sub;
        for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
    }
    EXPECT_EQ(run("bench --help").out.find("--stop-after"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitOne) {
    EXPECT_EQ(run("fit --input x.csv --h 1 --bogus").code, 1);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("fit --input x.csv").code, 1);
    EXPECT_EQ(run("fit --input x.csv --h 1 --h-frac 0.1").code, 1);
    EXPECT_EQ(run("simulate --out " + path("a.csv") + " --config " + path("missing.cfg")).code, 1);
}

TEST_F(Cli, SimulateIsDeterministic) {
    ASSERT_EQ(run("simulate --scenario set1 --seed 5 --out " + path("a.csv")).code, 0);
    ASSERT_EQ(run("simulate --scenario set1 --seed 5 --workers 3 --out " + path("b.csv")).code, 0);
    const auto a = read(path("a.csv"));
    EXPECT_EQ(lines(a), 601u);
    EXPECT_EQ(a, read(path("b.csv")));
    EXPECT_EQ(a.substr(0, a.find('\n')), "cluster,member,time,status,v,z1,z2");
    const auto meta = nlohmann::json::parse(read(path("a.csv.json")));
    EXPECT_EQ(meta.at("records").get<int>(), 600);
    EXPECT_EQ(meta.at("seed").get<int>(), 5);
    ASSERT_EQ(run("simulate --scenario set1 --seed 6 --out " + path("c.csv")).code, 0);
    EXPECT_NE(a, read(path("c.csv")));
}

TEST_F(Cli, SimulateRejectsBadScenario) {
    const auto r = run("simulate --theta 0 --out " + path("a.csv"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("theta"), std::string::npos);
    EXPECT_EQ(run("simulate --scenario nope --out " + path("a.csv")).code, 2);
}

TEST_F(Cli, FitResolvesBandwidthFractionAndWritesOutputs) {
    ASSERT_EQ(run("simulate --scenario cohort --seed 3 --out " + path("cohort.csv")).code, 0);
    const auto r = run("fit --input " + path("cohort.csv") + " --h-frac 0.15 --out-dir " + path("out"));
    ASSERT_EQ(r.code, 0) << r.out;
    const auto summary = nlohmann::json::parse(read(path("out/summary.json")));
    const auto range = summary.at("v_range");
    const double h = summary.at("h").get<double>();
    EXPECT_NEAR(h, 0.15 * (range[1].get<double>() - range[0].get<double>()), 1e-12);
    EXPECT_NEAR(h, 10.905, 0.15);
    EXPECT_EQ(summary.at("covariates").get<int>(), 5);
    EXPECT_EQ(summary.at("members").get<int>(), 2);

    const auto curve = read(path("out/curve.csv"));
    const auto header = curve.substr(0, curve.find('\n'));
    EXPECT_EQ(header.rfind("v,beta1,beta2,beta3,beta4,beta5,se1", 0), 0u);
    EXPECT_NE(header.find("hr_upper5,gprime,g"), std::string::npos);
    EXPECT_GE(lines(curve), 2u);
    EXPECT_LE(lines(curve), 201u);
    EXPECT_EQ(lines(curve) - 1, summary.at("fitted_points").get<std::size_t>());
    EXPECT_EQ(lines(read(path("out/inference.csv"))), 201u);

    // hr = exp(beta) on every row
    std::istringstream rows(curve);
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line)) {
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
        ASSERT_EQ(cells.size(), 1u + 7u * 5u + 2u);
        for (int k = 0; k < 5; ++k) EXPECT_NEAR(cells[1 + 4 * 5 + k], std::exp(cells[1 + k]), 1e-12 * cells[1 + 4 * 5 + k]);
    }
}

TEST_F(Cli, FitReportsDataErrors) {
    {
        std::ofstream bad(path("bad.csv"));
        bad << "cluster,member,time,status,v,z1\n1,1,1.0,1,0.5,0.1\n1,1,2.0,0,0.5,0.1\n";
    }
    const auto r = run("fit --input " + path("bad.csv") + " --h 0.2 --out-dir " + path("out"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("row 3"), std::string::npos);
    EXPECT_EQ(run("fit --input " + path("none.csv") + " --h 0.2 --out-dir " + path("out")).code, 2);
}

TEST_F(Cli, ConfigFileWithFlagPrecedence) {
    {
        std::ofstream cfg(path("sim.cfg"));
        cfg << "# simulation\n[simulate]\nscenario = set2\nn = 50\nseed = 9\n";
    }
    ASSERT_EQ(run("simulate --config " + path("sim.cfg") + " --n 20 --out " + path("a.csv")).code, 0);
    const auto meta = nlohmann::json::parse(read(path("a.csv.json")));
    EXPECT_EQ(meta.at("scenario").get<std::string>(), "set2");
    EXPECT_EQ(meta.at("n").get<int>(), 20);
    EXPECT_EQ(meta.at("seed").get<int>(), 9);
}

TEST_F(Cli, BenchResumesFromCheckpoint) {
    const std::string common = "bench --preset table1 --reps 3 --n 120 --h 0.3 --seed 4 --reference-grid 40";
    ASSERT_EQ(run(common + " --out-dir " + path("full")).code, 0);
    ASSERT_EQ(run(common + " --out-dir " + path("part") + " --checkpoint-dir " + path("ck") + " --stop-after 1").code, 0);
    EXPECT_FALSE(fs::exists(path("part/table1_beta1.csv")));
    ASSERT_EQ(run(common + " --out-dir " + path("part") + " --checkpoint-dir " + path("ck")).code, 0);
    for (const auto* f : {"table1_beta1.csv", "table1_beta2.csv", "table1_gprime.txt", "table1_counts.csv"})
        EXPECT_EQ(read(path(std::string("full/") + f)), read(path(std::string("part/") + f))) << f;
    EXPECT_EQ(lines(read(path("full/table1_beta1.csv"))), 6u);
}

TEST_F(Cli, BaselineWritesPerMemberFiles) {
    ASSERT_EQ(run("simulate --scenario set2 --n 100 --seed 2 --out " + path("d.csv")).code, 0);
    const auto r = run("baseline --input " + path("d.csv") + " --h 0.2 --reference-grid 40 --smooth --out-dir " +
                       path("b"));
    ASSERT_EQ(r.code, 0) << r.out;
    for (int j = 1; j <= 3; ++j) {
        const auto step = read(path("b/baseline_member" + std::to_string(j) + ".csv"));
        EXPECT_EQ(step.substr(0, step.find('\n')), "member,time,increment,cumulative");
        EXPECT_GT(lines(step), 10u);
        const auto smooth = read(path("b/smoothed_member" + std::to_string(j) + ".csv"));
        EXPECT_EQ(lines(smooth), 101u);
    }
}
