#pragma once

#include "h2skel/h2skel.hpp"
#include "h2skel/oracle.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace h2skel {

inline constexpr const char* version = "0.1.0";

/// One experiment. `defaults(problem)` fills the published per-problem parameters.
struct ExperimentConfig {
    std::string problem = "cov2d";
    Index n = 4096;
    Index m = 64;        ///< leaf size
    int p0 = 8;          ///< leaf Chebyshev order
    int d = 2;
    double eta = 0.9;
    double alpha_r = 1e-2;
    double eps = 1e-7;     ///< compression accuracy
    double eps_lu = 1e-6;  ///< factorization accuracy
    double length = 0.1;
    double wavenumber = 3.0;
    Index lru_rank = 0;
    int threads = 1;
    std::uint64_t seed = 42;
    bool deterministic = true;
    Index oracle_cap = 4096;
    bool validate = false;
    std::string out_dir;

    KernelFamily family() const
    {
        if (problem == "laplace2d") return KernelFamily::laplace2d;
        if (problem == "helmholtz3d") return KernelFamily::helmholtz3d;
        return KernelFamily::exp_covariance;
    }

    static ExperimentConfig defaults(const std::string& problem)
    {
        ExperimentConfig c;
        c.problem = problem;
        if (problem == "cov2d") {
            c.m = 64, c.p0 = 8, c.d = 2, c.eta = 0.9, c.alpha_r = 1e-2, c.eps = 1e-7, c.eps_lu = 1e-6;
            c.length = 0.1;
        } else if (problem == "cov3d") {
            c.m = 64, c.p0 = 4, c.d = 3, c.eta = 0.7, c.alpha_r = 1e-2, c.eps = 1e-7, c.eps_lu = 1e-6;
            c.length = 0.2;
        } else if (problem == "laplace2d") {
            c.m = 64, c.p0 = 8, c.d = 2, c.eta = 0.9, c.alpha_r = 1e-5, c.eps = 1e-7, c.eps_lu = 1e-6;
        } else if (problem == "helmholtz3d") {
            c.m = 64, c.p0 = 4, c.d = 3, c.eta = 0.7, c.alpha_r = 1e-2, c.eps = 1e-7, c.eps_lu = 1e-6;
            c.wavenumber = 3.0;
        } else if (problem == "lru_cov3d") {
            c.m = 128, c.p0 = 4, c.d = 3, c.eta = 0.9, c.alpha_r = 1e-2, c.eps = 1e-8, c.eps_lu = 1e-7;
            c.length = 0.2;
            c.lru_rank = 32;
        } else {
            throw std::invalid_argument("unknown problem '" + problem + "'");
        }
        return c;
    }

    Execution execution() const { return {threads, deterministic}; }
};

struct LevelRow {
    int level = 0;
    double seconds = 0;
    Index csp = 0;
    Index max_rank = 0;
    Index colors = 0;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<std::pair<std::string, double>> phases;  ///< fixed order
    std::vector<LevelRow> levels;
    double factor_seconds = 0;
    double solve_seconds = 0;
    double construction_seconds = 0;
    std::size_t h2_bytes = 0;
    std::size_t factor_bytes = 0;
    Index h2_max_rank = 0;
    Index max_csp = 0;
    int depth = 0;
    int top_level = 0;
    Index top_size = 0;
    double norm_estimate = 0;
    double eps_fill = 0;
    double backward_error = 0;
    std::optional<double> oracle_forward_error;   ///< ||x~ - x*|| / ||x*||
    std::optional<double> oracle_backward_error;  ///< with the exact dense matrix
    Vector solution;                              ///< original point order
    std::vector<Index> ranks;                     ///< compressed H^2 rank per cluster

    double phase(const std::string& name) const
    {
        for (const auto& [k, v] : phases)
            if (k == name) return v;
        throw std::out_of_range("RunReport::phase: unknown phase " + name);
    }
};

/// Stage-tagged failure raised by run().
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(stage) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

namespace detail {

/// Hands freed heap pages back to the OS so consecutive runs do not stack up per-thread arenas.
inline void release_heap()
{
#if defined(__GLIBC__)
    malloc_trim(0);
#endif
}

/// Streams through a buffer larger than the factors of mid-sized problems.
inline void evict_cache(std::vector<double>& buf)
{
    volatile double sink = 0;
    double acc = 0;
    for (double& v : buf) {
        v += 1e-12;
        acc += v;
    }
    sink = acc;
    (void)sink;
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f())
{
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

inline void validate_config(const ExperimentConfig& c)
{
    if (c.n < 1) throw std::invalid_argument("n must be positive");
    if (c.m < 1) throw std::invalid_argument("leaf size must be positive");
    if (c.p0 < 1) throw std::invalid_argument("p0 must be positive");
    if (c.d != 2 && c.d != 3) throw std::invalid_argument("dimension must be 2 or 3");
    if (!(c.eta > 0)) throw std::invalid_argument("eta must be positive");
    if (!(c.eps > 0) || !(c.eps_lu >= 0)) throw std::invalid_argument("tolerances must be positive");
    if (c.threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (c.lru_rank < 0) throw std::invalid_argument("low-rank update rank must be >= 0");
}

}  // namespace detail

/// points -> tree -> partition -> H^2 -> (low-rank update) -> factorization -> solve.
inline RunReport run(const ExperimentConfig& cfg)
{
    detail::stage("config", [&] {
        detail::validate_config(cfg);
        return 0;
    });
    const Execution exec = cfg.execution();
    RunReport rep;
    rep.config = cfg;

    Stopwatch sw;
    const PointSet points = detail::stage("points", [&] { return generate_uniform_grid(cfg.n, cfg.d); });
    auto tree = detail::stage("tree", [&] {
        return std::make_shared<const ClusterTree>(build_cluster_tree(points, cfg.m));
    });
    auto partition = detail::stage("partition", [&] {
        return std::make_shared<const BlockPartition>(dual_tree_traversal(*tree, cfg.eta));
    });
    const double structure_s = sw.seconds();

    KernelSpec spec = detail::stage("kernel", [&] {
        return make_kernel(cfg.family(), points, cfg.alpha_r, cfg.length, cfg.wavenumber);
    });

    sw.reset();
    H2Matrix h = detail::stage("construction", [&] {
        return build_compressed_h2(tree, partition, spec, cfg.p0, cfg.eps, exec);
    });
    rep.construction_seconds = structure_s + sw.seconds();

    sw.reset();
    if (cfg.lru_rank > 0) {
        detail::stage("low_rank_update", [&] {
            auto w = std::make_shared<const Matrix>(make_low_rank_factor(cfg.n, cfg.lru_rank, cfg.seed));
            spec.low_rank = w;
            absorb_low_rank(h, *w, cfg.eps, exec);
            return 0;
        });
    }
    const double compression_s = sw.seconds();
    rep.h2_bytes = h.memory_bytes();
    rep.h2_max_rank = h.max_rank();
    rep.ranks = h.ranks();
    rep.depth = tree->depth();
    rep.top_level = partition->top_level();
    rep.max_csp = max_sparsity_constant(*partition, *tree);

    const Factorization z = detail::stage("factorization", [&] { return factorize(h, cfg.eps_lu, exec); });
    rep.factor_seconds = z.times.total;
    rep.factor_bytes = z.memory_bytes();
    rep.norm_estimate = z.norm_estimate;
    rep.eps_fill = z.eps_fill;
    rep.top_size = z.top_offsets.empty() ? 0 : z.top_offsets.back();

    const Vector x_true = CounterRng(cfg.seed, 0x58ULL).normal_vector(cfg.n);
    const Vector x_tree = tree->to_tree_order(Matrix(x_true)).col(0);
    const Vector b = h.matvec(x_tree, exec);
    Vector x;
    detail::stage("solve", [&] {
        // repeat short solves so the timing is not dominated by clock resolution;
        // the cache is flushed before each one so small factors do not stay resident
        std::vector<double> flush(std::size_t{8} << 20, 1.0);
        int reps = 0;
        double total = 0;
        do {
            detail::evict_cache(flush);
            Stopwatch solve_sw;
            x = solve(z, b, exec);
            total += solve_sw.seconds();
            ++reps;
        } while (total < 0.2 && reps < 50);
        rep.solve_seconds = total / reps;
        return 0;
    });
    rep.backward_error = (h.matvec(x, exec) - b).norm() / b.norm();
    rep.solution = tree->to_original_order(Matrix(x)).col(0);

    rep.phases = {
        {"construction", rep.construction_seconds},
        {"compression", compression_s},
        {"norm_estimate", z.times.setup},
        {"coloring", z.times.coloring},
        {"basis_augmentation", z.times.augmentation},
        {"projection", z.times.projection},
        {"partial_lu", z.times.partial_lu},
        {"level_transition", z.times.transition},
        {"top_factorization", z.times.top},
        {"solve", rep.solve_seconds},
    };
    for (const auto& lr : z.levels)
        rep.levels.push_back({lr.level, lr.seconds, lr.csp, lr.max_rank, lr.num_colors});
    rep.levels.push_back({z.top_level, z.times.top, sparsity_constant(*partition, *tree, z.top_level),
                          partition->dense_only() ? 0 : h.max_rank(z.top_level), 0});

    if (cfg.validate) {
        detail::stage("oracle", [&] {
            if (cfg.n > cfg.oracle_cap) throw std::invalid_argument("n exceeds the oracle cap");
            const oracle::DenseMatrix A = oracle::assemble_dense(spec, points, tree->perm(), cfg.oracle_cap);
            const std::vector<double> xt(x_tree.data(), x_tree.data() + cfg.n);
            const std::vector<double> bd = A.apply(xt);
            const std::vector<double> xstar = oracle::dense_lu_solve(A, bd);
            const Vector xs = solve(z, Eigen::Map<const Vector>(bd.data(), cfg.n).eval(), exec);
            const std::vector<double> xsv(xs.data(), xs.data() + cfg.n);
            const std::vector<double> ax = A.apply(xsv);
            double num = 0, den = 0, rn = 0, bn = 0;
            for (Index i = 0; i < cfg.n; ++i) {
                const auto k = static_cast<std::size_t>(i);
                num += (xsv[k] - xstar[k]) * (xsv[k] - xstar[k]);
                den += xstar[k] * xstar[k];
                rn += (ax[k] - bd[k]) * (ax[k] - bd[k]);
                bn += bd[k] * bd[k];
            }
            rep.oracle_forward_error = std::sqrt(num / den);
            rep.oracle_backward_error = std::sqrt(rn / bn);
            return 0;
        });
    }
    return rep;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0)) throw std::invalid_argument("loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

struct SweepResult {
    std::vector<RunReport> runs;
    double factor_slope = 0;
    double solve_slope = 0;
    double memory_slope = 0;
};

inline SweepResult scaling_sweep(const ExperimentConfig& base, const std::vector<Index>& sizes)
{
    if (sizes.size() < 3) throw std::invalid_argument("scaling_sweep: need at least three sizes");
    SweepResult out;
    std::vector<double> n, tf, ts, mem;
    for (Index size : sizes) {
        ExperimentConfig c = base;
        c.n = size;
        c.validate = false;
        out.runs.push_back(run(c));
        detail::release_heap();
        const auto& r = out.runs.back();
        n.push_back(static_cast<double>(size));
        tf.push_back(r.factor_seconds);
        ts.push_back(r.solve_seconds);
        mem.push_back(static_cast<double>(r.factor_bytes));
    }
    out.factor_slope = loglog_slope(n, tf);
    out.solve_slope = loglog_slope(n, ts);
    out.memory_slope = loglog_slope(n, mem);
    return out;
}

inline std::vector<RunReport> thread_sweep(const ExperimentConfig& base, const std::vector<int>& threads)
{
    std::vector<RunReport> out;
    for (int t : threads) {
        if (t < 1) throw std::invalid_argument("thread_sweep: thread counts must be >= 1");
        ExperimentConfig c = base;
        c.threads = t;
        out.push_back(run(c));
        detail::release_heap();
    }
    return out;
}

// ---- output ----

inline std::string format_number(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6e", v);
    return buf;
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c)
{
    nlohmann::ordered_json j;
    j["problem"] = c.problem;
    j["n"] = c.n;
    j["m"] = c.m;
    j["p0"] = c.p0;
    j["d"] = c.d;
    j["eta"] = c.eta;
    j["alpha_r"] = c.alpha_r;
    j["eps"] = c.eps;
    j["eps_lu"] = c.eps_lu;
    j["length"] = c.length;
    j["wavenumber"] = c.wavenumber;
    j["lru_rank"] = c.lru_rank;
    j["threads"] = c.threads;
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["oracle_cap"] = c.oracle_cap;
    return j;
}

inline nlohmann::ordered_json to_json(const RunReport& r)
{
    nlohmann::ordered_json j;
    j["version"] = version;
    j["config"] = to_json(r.config);
    nlohmann::ordered_json phases;
    for (const auto& [k, v] : r.phases) phases[k] = v;
    j["phases"] = phases;
    j["factor_seconds"] = r.factor_seconds;
    j["solve_seconds"] = r.solve_seconds;
    auto levels = nlohmann::ordered_json::array();
    for (const auto& l : r.levels)
        levels.push_back({{"level", l.level}, {"time_s", l.seconds}, {"csp", l.csp}, {"max_rank", l.max_rank},
                          {"colors", l.colors}});
    j["levels"] = levels;
    j["memory"] = {{"h2_bytes", r.h2_bytes}, {"factor_bytes", r.factor_bytes}};
    j["structure"] = {{"depth", r.depth},         {"top_level", r.top_level}, {"top_size", r.top_size},
                      {"max_csp", r.max_csp},     {"h2_max_rank", r.h2_max_rank}};
    j["norm_estimate"] = r.norm_estimate;
    j["eps_fill"] = r.eps_fill;
    j["backward_error"] = r.backward_error;
    if (r.oracle_forward_error) j["oracle_forward_error"] = *r.oracle_forward_error;
    if (r.oracle_backward_error) j["oracle_backward_error"] = *r.oracle_backward_error;
    return j;
}

inline void write_levels_csv(const RunReport& r, std::ostream& os)
{
    os << "level,time_s,csp,max_rank\n";
    for (const auto& l : r.levels)
        os << l.level << ',' << format_number(l.seconds) << ',' << l.csp << ',' << l.max_rank << '\n';
}

inline void write_phases_csv(const RunReport& r, std::ostream& os)
{
    double total = 0;
    for (const auto& [k, v] : r.phases) total += v;
    os << "phase,time_s,fraction\n";
    for (const auto& [k, v] : r.phases)
        os << k << ',' << format_number(v) << ',' << format_number(total > 0 ? v / total : 0.0) << '\n';
}

inline void write_sweep_csv(const SweepResult& s, std::ostream& os)
{
    os << "n,factor_s,solve_s,factor_bytes,h2_bytes,backward_error\n";
    for (const auto& r : s.runs)
        os << r.config.n << ',' << format_number(r.factor_seconds) << ',' << format_number(r.solve_seconds) << ','
           << r.factor_bytes << ',' << r.h2_bytes << ',' << format_number(r.backward_error) << '\n';
}

inline void write_threads_csv(const std::vector<RunReport>& runs, std::ostream& os)
{
    os << "threads,factor_s,solve_s,speedup,backward_error\n";
    const double base = runs.empty() ? 0.0 : runs.front().factor_seconds;
    for (const auto& r : runs)
        os << r.config.threads << ',' << format_number(r.factor_seconds) << ',' << format_number(r.solve_seconds)
           << ',' << format_number(r.factor_seconds > 0 ? base / r.factor_seconds : 0.0) << ','
           << format_number(r.backward_error) << '\n';
}

/// report.json, levels.csv and phases.csv in `dir`.
inline void write_outputs(const RunReport& r, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.json") << to_json(r).dump(2) << '\n';
    std::ofstream levels(dir / "levels.csv");
    write_levels_csv(r, levels);
    std::ofstream phases(dir / "phases.csv");
    write_phases_csv(r, phases);
}

}  // namespace h2skel
