// h2factor: build, factor and solve one of the benchmark problems.
//
//   h2factor run      --problem cov2d --n 16384 --out results/
//   h2factor validate --problem laplace2d --n 1024
//   h2factor sweep    --problem cov2d --sizes 4096,8192,16384
//   h2factor threads  --problem cov3d --n 32768 --thread-list 1,2,4

#include "h2skel/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using h2skel::Index;

struct Overrides {
    std::optional<Index> m;
    std::optional<int> p0;
    std::optional<double> eta, alpha_r, eps, eps_lu;
};

void add_common(CLI::App* cmd, std::string& problem, h2skel::ExperimentConfig& c, Overrides& o)
{
    cmd->add_option("--problem", problem, "cov2d | cov3d | laplace2d | helmholtz3d | lru_cov3d")
        ->check(CLI::IsMember({"cov2d", "cov3d", "laplace2d", "helmholtz3d", "lru_cov3d"}));
    cmd->add_option("--n", c.n, "number of points");
    cmd->add_option("--m", o.m, "leaf size");
    cmd->add_option("--p0", o.p0, "leaf Chebyshev order");
    cmd->add_option("--eta", o.eta, "admissibility parameter");
    cmd->add_option("--alpha-r", o.alpha_r, "diagonal regularization");
    cmd->add_option("--eps", o.eps, "compression accuracy");
    cmd->add_option("--eps-lu", o.eps_lu, "factorization accuracy");
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", c.seed, "random seed");
    cmd->add_option("--deterministic", c.deterministic, "bitwise reproducible schedule (true/false)");
    cmd->add_option("--oracle-cap", c.oracle_cap, "largest n for the dense oracle");
    cmd->add_option("--out", c.out_dir, "output directory");
}

h2skel::ExperimentConfig resolve(const std::string& problem, const h2skel::ExperimentConfig& cli, const Overrides& o)
{
    h2skel::ExperimentConfig c = h2skel::ExperimentConfig::defaults(problem);
    c.n = cli.n;
    c.threads = cli.threads;
    c.seed = cli.seed;
    c.deterministic = cli.deterministic;
    c.oracle_cap = cli.oracle_cap;
    c.out_dir = cli.out_dir;
    if (o.m) c.m = *o.m;
    if (o.p0) c.p0 = *o.p0;
    if (o.eta) c.eta = *o.eta;
    if (o.alpha_r) c.alpha_r = *o.alpha_r;
    if (o.eps) c.eps = *o.eps;
    if (o.eps_lu) c.eps_lu = *o.eps_lu;
    return c;
}

void print_summary(const h2skel::RunReport& r)
{
    std::cout << r.config.problem << " n=" << r.config.n << " depth=" << r.depth << " top=" << r.top_level
              << " max_csp=" << r.max_csp << " k_max=" << r.h2_max_rank << '\n'
              << "  factor " << h2skel::format_number(r.factor_seconds) << " s, solve "
              << h2skel::format_number(r.solve_seconds) << " s, factor memory " << r.factor_bytes << " B\n"
              << "  backward error " << h2skel::format_number(r.backward_error) << '\n';
    if (r.oracle_forward_error)
        std::cout << "  oracle forward error " << h2skel::format_number(*r.oracle_forward_error)
                  << ", oracle backward error " << h2skel::format_number(*r.oracle_backward_error) << '\n';
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"H2 strong recursive skeletonization solver"};
    app.require_subcommand(1);

    std::string problem = "cov2d";
    h2skel::ExperimentConfig cli;
    Overrides o;
    std::vector<Index> sizes{4096, 8192, 16384};
    std::vector<int> thread_list{1, 2, 4};

    auto* run_cmd = app.add_subcommand("run", "single run");
    auto* validate_cmd = app.add_subcommand("validate", "single run checked against the dense oracle");
    auto* sweep_cmd = app.add_subcommand("sweep", "scaling sweep over --sizes");
    auto* threads_cmd = app.add_subcommand("threads", "thread sweep over --thread-list");
    for (auto* cmd : {run_cmd, validate_cmd, sweep_cmd, threads_cmd}) add_common(cmd, problem, cli, o);
    sweep_cmd->add_option("--sizes", sizes, "problem sizes")->delimiter(',');
    threads_cmd->add_option("--thread-list", thread_list, "thread counts")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        h2skel::ExperimentConfig cfg = resolve(problem, cli, o);
        const std::filesystem::path out = std::filesystem::path(cfg.out_dir.empty() ? "." : cfg.out_dir);

        if (run_cmd->parsed() || validate_cmd->parsed()) {
            cfg.validate = validate_cmd->parsed();
            const h2skel::RunReport r = h2skel::run(cfg);
            print_summary(r);
            if (!cfg.out_dir.empty()) h2skel::write_outputs(r, out);
            bool ok = r.backward_error <= 100 * cfg.eps_lu;
            if (r.oracle_backward_error) ok = ok && *r.oracle_backward_error <= 100 * cfg.eps_lu;
            if (cfg.validate && !ok) {
                std::cerr << "validation failed: backward error above 100 * eps_lu\n";
                return 2;
            }
            return 0;
        }
        if (sweep_cmd->parsed()) {
            const h2skel::SweepResult s = h2skel::scaling_sweep(cfg, sizes);
            h2skel::write_sweep_csv(s, std::cout);
            std::cout << "slopes: factor " << h2skel::format_number(s.factor_slope) << ", solve "
                      << h2skel::format_number(s.solve_slope) << ", memory " << h2skel::format_number(s.memory_slope)
                      << '\n';
            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(out);
                std::ofstream f(out / "sweep.csv");
                h2skel::write_sweep_csv(s, f);
            }
            return 0;
        }
        if (threads_cmd->parsed()) {
            const auto runs = h2skel::thread_sweep(cfg, thread_list);
            h2skel::write_threads_csv(runs, std::cout);
            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(out);
                std::ofstream f(out / "threads.csv");
                h2skel::write_threads_csv(runs, f);
            }
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
