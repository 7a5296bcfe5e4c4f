#pragma once

#include "h2skel/geometry.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

namespace h2skel {

enum class KernelFamily {
    exp_covariance,  ///< exp(-|x-y| / length)
    laplace2d,       ///< -(1/2pi) log |x-y|
    helmholtz3d,     ///< cos(kappa |x-y|) / |x-y|
};

inline std::string to_string(KernelFamily f)
{
    switch (f) {
    case KernelFamily::exp_covariance: return "exp_covariance";
    case KernelFamily::laplace2d: return "laplace2d";
    case KernelFamily::helmholtz3d: return "helmholtz3d";
    }
    return "unknown";
}

struct KernelSpec {
    KernelFamily family = KernelFamily::exp_covariance;
    double length = 0.1;      ///< correlation length of the exponential kernel
    double wavenumber = 3.0;  ///< Helmholtz wavenumber
    double alpha_r = 0.0;     ///< diagonal regularization
    /// K(x,x) for the singular kernels; 1 is used for the exponential kernel regardless.
    double diag_value = 0.0;
    /// Optional n x r factor W (original point order); entries gain (W W^T)_ij.
    std::shared_ptr<const Matrix> low_rank;

    double base_diagonal() const noexcept
    {
        return family == KernelFamily::exp_covariance ? 1.0 : diag_value;
    }
};

inline double eval_distance(const KernelSpec& spec, double r)
{
    switch (spec.family) {
    case KernelFamily::exp_covariance: return std::exp(-r / spec.length);
    case KernelFamily::laplace2d: return -std::log(r) / (2.0 * std::numbers::pi);
    case KernelFamily::helmholtz3d: return std::cos(spec.wavenumber * r) / r;
    }
    return 0.0;
}

/// Kernel value between two distinct points (no overlay, no regularization).
inline double eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> y)
{
    double s = 0;
    for (std::size_t a = 0; a < x.size(); ++a) s += (x[a] - y[a]) * (x[a] - y[a]);
    return eval_distance(spec, std::sqrt(s));
}

/// Kernel value without the low-rank overlay; the diagonal carries K(x,x) + alpha_r.
inline double base_entry(const KernelSpec& spec, std::span<const double> x, std::span<const double> y, bool diagonal)
{
    if (diagonal) return spec.base_diagonal() + spec.alpha_r;
    return eval(spec, x, y);
}

/// Matrix entry A(i,j) with indices into the original point order.
inline double entry(const KernelSpec& spec, const PointSet& points, Index i, Index j)
{
    double v = base_entry(spec, points.point(i), points.point(j), i == j);
    if (spec.low_rank) v += spec.low_rank->row(i).dot(spec.low_rank->row(j));
    return v;
}

/// Self-interaction used for the singular kernels on a grid of spacing h.
inline double singular_diagonal(KernelFamily family, double h)
{
    switch (family) {
    case KernelFamily::exp_covariance: return 1.0;
    case KernelFamily::laplace2d: return std::max(0.0, -std::log(h) / (2.0 * std::numbers::pi));
    case KernelFamily::helmholtz3d: return 1.0 / h;
    }
    return 0.0;
}

inline KernelSpec make_kernel(KernelFamily family, const PointSet& points, double alpha_r, double length = 0.1,
                              double wavenumber = 3.0)
{
    if (!(length > 0) || wavenumber < 0 || alpha_r < 0) throw std::invalid_argument("make_kernel: invalid parameters");
    KernelSpec spec;
    spec.family = family;
    spec.length = length;
    spec.wavenumber = wavenumber;
    spec.alpha_r = alpha_r;
    if (family != KernelFamily::exp_covariance) {
        const double h = points.spacing();
        if (!(h > 0)) throw std::invalid_argument("make_kernel: singular kernels need a grid spacing");
        spec.diag_value = singular_diagonal(family, h);
    } else {
        spec.diag_value = 1.0;
    }
    return spec;
}

/// n x r factor with i.i.d. N(0,1) entries scaled by 1/sqrt(n); W(i,k) uses counter i*r + k.
inline Matrix make_low_rank_factor(Index n, Index r, std::uint64_t seed)
{
    if (r < 0 || r > n) throw std::invalid_argument("make_low_rank_factor: need 0 <= r <= n");
    const CounterRng rng(seed, 0x4C5255ULL);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    Matrix w(n, r);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < r; ++k) w(i, k) = scale * rng.normal(static_cast<std::uint64_t>(i * r + k));
    return w;
}

}  // namespace h2skel
