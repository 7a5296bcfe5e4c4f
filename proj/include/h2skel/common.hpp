#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace h2skel {

using Index = std::ptrdiff_t;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a redundant diagonal block cannot be factored.
class FactorizationError : public std::runtime_error {
public:
    FactorizationError(const std::string& what, Index cluster, int level)
        : std::runtime_error(what), cluster_(cluster), level_(level) {}
    Index cluster() const noexcept { return cluster_; }
    int level() const noexcept { return level_; }

private:
    Index cluster_;
    int level_;
};

/// Parallel width and reproducibility switch passed down to every batched phase.
struct Execution {
    int threads = 1;
    /// Fixed reduction orders everywhere; results are bitwise independent of `threads`.
    bool deterministic = true;
};

/// Runs f(0..n-1), possibly concurrently. The first exception (lowest index) is rethrown.
template <class F>
void parallel_for(Index n, const Execution& exec, F&& f)
{
    if (n <= 0) return;
    if (exec.threads <= 1 || n == 1) {
        for (Index i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr error;
    Index error_index = n;
    std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic, 1) num_threads(exec.threads)
    for (Index i = 0; i < n; ++i) {
        try {
            f(i);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (i < error_index) {
                error_index = i;
                error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

/// Counter-based generator (SplitMix64 finalizer over seed + counter). Every draw is a pure
/// function of (seed, counter), so sequences are identical across platforms and thread counts.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : seed_(seed ^ (stream * 0xD1B54A32D192ED03ULL)) {}

    std::uint64_t bits(std::uint64_t counter) const noexcept
    {
        std::uint64_t z = seed_ + (counter + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in (0, 1].
    double uniform(std::uint64_t counter) const noexcept
    {
        return (static_cast<double>(bits(counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters (2i, 2i+1).
    double normal(std::uint64_t i) const noexcept
    {
        const double u1 = uniform(2 * i);
        const double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
    }

    Vector normal_vector(Index n, std::uint64_t offset = 0) const
    {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v[i] = normal(offset + static_cast<std::uint64_t>(i));
        return v;
    }

private:
    std::uint64_t seed_;
};

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    void reset() { start_ = std::chrono::steady_clock::now(); }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Bytes held by a dense block.
inline std::size_t bytes_of(const Matrix& m)
{
    return static_cast<std::size_t>(m.size()) * sizeof(double);
}

}  // namespace h2skel
