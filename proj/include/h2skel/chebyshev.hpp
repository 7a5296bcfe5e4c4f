#pragma once

#include "h2skel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace h2skel {

/// cos((2i+1) pi / (2p)), i = 0..p-1, on [-1,1].
inline std::vector<double> chebyshev_nodes(int p)
{
    std::vector<double> x(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) x[static_cast<std::size_t>(i)] = std::cos((2.0 * i + 1.0) * std::numbers::pi / (2.0 * p));
    return x;
}

namespace detail {

// Axes of zero width would make the Lagrange denominators vanish.
inline BoundingBox interpolation_box(const BoundingBox& box)
{
    BoundingBox b = box;
    double widest = 0;
    for (int a = 0; a < b.dim; ++a) widest = std::max(widest, b.width(a));
    const double floor_width = std::max(widest, 1.0) * 1e-10;
    for (int a = 0; a < b.dim; ++a) {
        if (b.width(a) < floor_width) {
            const double c = b.center(a);
            b.lo[static_cast<std::size_t>(a)] = c - 0.5 * floor_width;
            b.hi[static_cast<std::size_t>(a)] = c + 0.5 * floor_width;
        }
    }
    return b;
}

inline std::vector<double> mapped_nodes(const BoundingBox& box, int axis, int p)
{
    auto x = chebyshev_nodes(p);
    for (double& v : x) v = box.center(axis) + 0.5 * box.width(axis) * v;
    return x;
}

}  // namespace detail

inline Index chebyshev_grid_size(int p, int d)
{
    Index k = 1;
    for (int a = 0; a < d; ++a) k *= p;
    return k;
}

/// Tensor grid of p^d Chebyshev points mapped into `box`; lexicographic with axis 0 slowest.
inline Matrix chebyshev_grid(const BoundingBox& box, int p)
{
    const BoundingBox b = detail::interpolation_box(box);
    const int d = b.dim;
    const Index k = chebyshev_grid_size(p, d);
    std::vector<std::vector<double>> nodes;
    for (int a = 0; a < d; ++a) nodes.push_back(detail::mapped_nodes(b, a, p));
    Matrix grid(k, d);
    for (Index j = 0; j < k; ++j) {
        Index rem = j;
        for (int a = d - 1; a >= 0; --a) {
            grid(j, a) = nodes[static_cast<std::size_t>(a)][static_cast<std::size_t>(rem % p)];
            rem /= p;
        }
    }
    return grid;
}

/// Row i holds the tensor Lagrange basis of `box`'s Chebyshev grid evaluated at target i.
inline Matrix interpolation_matrix(const Matrix& targets, const BoundingBox& box, int p)
{
    const BoundingBox b = detail::interpolation_box(box);
    const int d = b.dim;
    const Index n = targets.rows();
    const Index k = chebyshev_grid_size(p, d);

    // per axis: n x p table of 1-D Lagrange values
    std::vector<Matrix> tables;
    for (int a = 0; a < d; ++a) {
        const auto x = detail::mapped_nodes(b, a, p);
        Matrix t(n, p);
        for (Index i = 0; i < n; ++i) {
            const double xi = targets(i, a);
            for (int j = 0; j < p; ++j) {
                double v = 1.0;
                for (int m = 0; m < p; ++m)
                    if (m != j)
                        v *= (xi - x[static_cast<std::size_t>(m)]) /
                             (x[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(m)]);
                t(i, j) = v;
            }
        }
        tables.push_back(std::move(t));
    }

    Matrix out(n, k);
    for (Index j = 0; j < k; ++j) {
        Index rem = j;
        std::array<Index, max_dim> idx{0, 0, 0};
        for (int a = d - 1; a >= 0; --a) {
            idx[static_cast<std::size_t>(a)] = rem % p;
            rem /= p;
        }
        for (Index i = 0; i < n; ++i) {
            double v = 1.0;
            for (int a = 0; a < d; ++a) v *= tables[static_cast<std::size_t>(a)](i, idx[static_cast<std::size_t>(a)]);
            out(i, j) = v;
        }
    }
    return out;
}

}  // namespace h2skel
