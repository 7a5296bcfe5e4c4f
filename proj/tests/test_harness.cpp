#include "h2skel/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <regex>
#include <sstream>

using namespace h2skel;

namespace {

const RunReport& cov2d_report()
{
    static const RunReport r = [] {
        ExperimentConfig c = ExperimentConfig::defaults("cov2d");
        c.n = 4096;
        return run(c);
    }();
    return r;
}

std::vector<std::string> lines(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST(Config, PublishedDefaults)
{
    const auto c2 = ExperimentConfig::defaults("cov2d");
    EXPECT_EQ(c2.m, 64);
    EXPECT_EQ(c2.p0, 8);
    EXPECT_EQ(c2.d, 2);
    EXPECT_DOUBLE_EQ(c2.eta, 0.9);
    EXPECT_DOUBLE_EQ(c2.alpha_r, 1e-2);
    EXPECT_DOUBLE_EQ(c2.eps, 1e-7);
    EXPECT_DOUBLE_EQ(c2.eps_lu, 1e-6);
    EXPECT_DOUBLE_EQ(c2.length, 0.1);

    const auto c3 = ExperimentConfig::defaults("cov3d");
    EXPECT_EQ(c3.p0, 4);
    EXPECT_EQ(c3.d, 3);
    EXPECT_DOUBLE_EQ(c3.eta, 0.7);
    EXPECT_DOUBLE_EQ(c3.length, 0.2);

    EXPECT_DOUBLE_EQ(ExperimentConfig::defaults("laplace2d").alpha_r, 1e-5);
    EXPECT_DOUBLE_EQ(ExperimentConfig::defaults("helmholtz3d").wavenumber, 3.0);
    EXPECT_EQ(ExperimentConfig::defaults("helmholtz3d").family(), KernelFamily::helmholtz3d);

    const auto lru = ExperimentConfig::defaults("lru_cov3d");
    EXPECT_EQ(lru.m, 128);
    EXPECT_DOUBLE_EQ(lru.eta, 0.9);
    EXPECT_DOUBLE_EQ(lru.eps, 1e-8);
    EXPECT_DOUBLE_EQ(lru.eps_lu, 1e-7);
    EXPECT_EQ(lru.lru_rank, 32);

    EXPECT_THROW(ExperimentConfig::defaults("poisson"), std::invalid_argument);
}

TEST(Run, Cov2dBackwardError)
{
    const RunReport& r = cov2d_report();
    EXPECT_LE(r.backward_error, 1e-4);
    EXPECT_EQ(r.solution.size(), 4096);
    EXPECT_GT(r.factor_bytes, 0u);
    EXPECT_GT(r.h2_bytes, 0u);
    EXPECT_FALSE(r.oracle_forward_error.has_value());
}

TEST(Run, ValidateAddsOracleErrors)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    c.n = 512;
    c.validate = true;
    const RunReport r = run(c);
    ASSERT_TRUE(r.oracle_forward_error.has_value());
    ASSERT_TRUE(r.oracle_backward_error.has_value());
    EXPECT_LT(*r.oracle_backward_error, 1e-5);
    EXPECT_LT(*r.oracle_forward_error, 1e-3);
}

TEST(Run, ValidateAboveOracleCapFailsInOracleStage)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    c.n = 1024;
    c.oracle_cap = 512;
    c.validate = true;
    try {
        run(c);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "oracle");
    }
}

TEST(Run, InvalidConfigFailsInConfigStage)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    c.n = 0;
    try {
        run(c);
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "config");
    }
}

TEST(Run, DeterministicAcrossThreadCounts)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    c.n = 4096;
    c.threads = 4;
    const RunReport r = run(c);
    const RunReport& base = cov2d_report();
    EXPECT_EQ(r.solution, base.solution);
    EXPECT_EQ(r.backward_error, base.backward_error);
    EXPECT_EQ(r.ranks, base.ranks);
}

TEST(Run, PhasesCoverFactorizationTime)
{
    const RunReport& r = cov2d_report();
    const std::vector<std::string> names{"construction", "compression",      "norm_estimate",    "coloring",
                                         "basis_augmentation", "projection", "partial_lu",       "level_transition",
                                         "top_factorization",  "solve"};
    ASSERT_EQ(r.phases.size(), names.size());
    for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(r.phases[i].first, names[i]);
    double inner = 0;
    for (const char* k : {"norm_estimate", "coloring", "basis_augmentation", "projection", "partial_lu",
                          "level_transition", "top_factorization"})
        inner += r.phase(k);
    EXPECT_NEAR(inner, r.factor_seconds, 0.05 * r.factor_seconds);
    EXPECT_THROW(r.phase("nope"), std::out_of_range);
}

TEST(Run, LevelRowsMatchStructure)
{
    const RunReport& r = cov2d_report();
    ASSERT_EQ(static_cast<int>(r.levels.size()), r.depth - r.top_level + 1);
    Index csp = 0;
    for (const auto& l : r.levels) {
        csp = std::max(csp, l.csp);
        if (l.level > r.top_level) {
            EXPECT_LE(l.colors, l.csp);
        }
    }
    EXPECT_LE(csp, r.max_csp);
    EXPECT_EQ(r.levels.front().level, r.depth);
    EXPECT_EQ(r.levels.back().level, r.top_level);
}

TEST(Output, CsvHeadersAndNumberFormat)
{
    const RunReport& r = cov2d_report();
    std::ostringstream lv, ph;
    write_levels_csv(r, lv);
    write_phases_csv(r, ph);
    const auto l = lines(lv.str());
    const auto p = lines(ph.str());
    EXPECT_EQ(l.front(), "level,time_s,csp,max_rank");
    EXPECT_EQ(p.front(), "phase,time_s,fraction");
    EXPECT_EQ(l.size(), r.levels.size() + 1);
    EXPECT_EQ(p.size(), r.phases.size() + 1);
    const std::regex sci(R"(-?\d\.\d{6}e[+-]\d{2,3})");
    double frac = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
        const auto c1 = p[i].find(',');
        const auto c2 = p[i].rfind(',');
        EXPECT_TRUE(std::regex_match(p[i].substr(c1 + 1, c2 - c1 - 1), sci)) << p[i];
        EXPECT_TRUE(std::regex_match(p[i].substr(c2 + 1), sci)) << p[i];
        frac += std::stod(p[i].substr(c2 + 1));
    }
    EXPECT_NEAR(frac, 1.0, 1e-5);
    EXPECT_EQ(format_number(0.5), "5.000000e-01");
}

TEST(Output, JsonReportAndFiles)
{
    const RunReport& r = cov2d_report();
    const auto j = to_json(r);
    EXPECT_EQ(j["version"], version);
    EXPECT_EQ(j["config"]["problem"], "cov2d");
    EXPECT_EQ(j["config"]["n"], 4096);
    EXPECT_EQ(j["structure"]["depth"], r.depth);
    EXPECT_DOUBLE_EQ(j["backward_error"].get<double>(), r.backward_error);

    const auto dir = std::filesystem::temp_directory_path() / "h2skel_harness_test";
    std::filesystem::remove_all(dir);
    write_outputs(r, dir);
    for (const char* f : {"report.json", "levels.csv", "phases.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / f));
    std::ifstream in(dir / "report.json");
    const auto back = nlohmann::json::parse(in);
    EXPECT_EQ(back["config"]["seed"], 42);
    std::filesystem::remove_all(dir);
}

TEST(Sweep, NeedsAtLeastThreeSizes)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    EXPECT_THROW(scaling_sweep(c, {4096}), std::invalid_argument);
    EXPECT_THROW(scaling_sweep(c, {1024, 4096}), std::invalid_argument);
}

TEST(Sweep, SlopeOfPowerLaw)
{
    EXPECT_NEAR(loglog_slope({1, 2, 4, 8}, {3, 6, 12, 24}), 1.0, 1e-14);
    EXPECT_NEAR(loglog_slope({1, 10, 100}, {1, 100, 10000}), 2.0, 1e-14);
    EXPECT_THROW(loglog_slope({1}, {1}), std::invalid_argument);
    EXPECT_THROW(loglog_slope({1, 2}, {0, 1}), std::invalid_argument);
}

TEST(Sweep, ThreadSweepCsv)
{
    ExperimentConfig c = ExperimentConfig::defaults("cov2d");
    c.n = 1024;
    const auto runs = thread_sweep(c, {1, 2});
    ASSERT_EQ(runs.size(), 2u);
    EXPECT_EQ(runs[0].solution, runs[1].solution);
    std::ostringstream os;
    write_threads_csv(runs, os);
    const auto l = lines(os.str());
    EXPECT_EQ(l.front(), "threads,factor_s,solve_s,speedup,backward_error");
    EXPECT_EQ(l.size(), 3u);
    EXPECT_THROW(thread_sweep(c, {0}), std::invalid_argument);
}

#ifdef H2FACTOR_PATH
namespace {
int run_cli(const std::string& args)
{
    const int status = std::system((std::string(H2FACTOR_PATH) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Cli, ExitCodes)
{
    EXPECT_EQ(run_cli("run --problem cov2d --n 1024"), 0);
    EXPECT_EQ(run_cli("validate --problem cov2d --n 1024"), 0);
    // a factorization accuracy far below what the compression delivers fails validation
    EXPECT_EQ(run_cli("validate --problem cov2d --n 1024 --eps 1e-3 --eps-lu 1e-12"), 2);
    EXPECT_EQ(run_cli("run --problem cov2d --n 0"), 1);
    EXPECT_NE(run_cli("run --problem nope"), 0);
}
#endif
