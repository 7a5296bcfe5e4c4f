#pragma once

// Naive dense reference routines. Deliberately free of Eigen and of the fast-path numerics.

#include "h2skel/geometry.hpp"
#include "h2skel/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace h2skel::oracle {

/// Column-major dense matrix.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(Index rows, Index cols, double value = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), value)
    {
        if (rows < 0 || cols < 0) throw std::invalid_argument("DenseMatrix: negative dimension");
    }

    static DenseMatrix identity(Index n)
    {
        DenseMatrix m(n, n);
        for (Index i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    double& operator()(Index i, Index j) { return data_[static_cast<std::size_t>(j * rows_ + i)]; }
    double operator()(Index i, Index j) const { return data_[static_cast<std::size_t>(j * rows_ + i)]; }
    const std::vector<double>& data() const noexcept { return data_; }

    std::vector<double> apply(const std::vector<double>& x) const
    {
        if (static_cast<Index>(x.size()) != cols_) throw std::invalid_argument("DenseMatrix::apply: size mismatch");
        std::vector<double> y(static_cast<std::size_t>(rows_), 0.0);
        for (Index j = 0; j < cols_; ++j) {
            const double xj = x[static_cast<std::size_t>(j)];
            for (Index i = 0; i < rows_; ++i) y[static_cast<std::size_t>(i)] += (*this)(i, j) * xj;
        }
        return y;
    }

    DenseMatrix transpose() const
    {
        DenseMatrix t(cols_, rows_);
        for (Index j = 0; j < cols_; ++j)
            for (Index i = 0; i < rows_; ++i) t(j, i) = (*this)(i, j);
        return t;
    }

private:
    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<double> data_;
};

inline DenseMatrix multiply(const DenseMatrix& a, const DenseMatrix& b)
{
    if (a.cols() != b.rows()) throw std::invalid_argument("multiply: inner dimension mismatch");
    DenseMatrix c(a.rows(), b.cols());
    for (Index j = 0; j < b.cols(); ++j)
        for (Index k = 0; k < a.cols(); ++k) {
            const double bkj = b(k, j);
            for (Index i = 0; i < a.rows(); ++i) c(i, j) += a(i, k) * bkj;
        }
    return c;
}

inline double norm2(const std::vector<double>& v)
{
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double frobenius(const DenseMatrix& a)
{
    return norm2(a.data());
}

/// Exact matrix in tree order: rows and columns follow `perm`.
inline DenseMatrix assemble_dense(const KernelSpec& spec, const PointSet& points, const std::vector<Index>& perm,
                                  Index cap = 4096)
{
    const Index n = points.size();
    if (n > cap) throw std::invalid_argument("assemble_dense: n exceeds the oracle cap");
    if (static_cast<Index>(perm.size()) != n) throw std::invalid_argument("assemble_dense: permutation size mismatch");
    DenseMatrix a(n, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < n; ++i)
            a(i, j) = entry(spec, points, perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    return a;
}

/// Exact matrix in the original point order.
inline DenseMatrix assemble_dense(const KernelSpec& spec, const PointSet& points, Index cap = 4096)
{
    std::vector<Index> id(static_cast<std::size_t>(points.size()));
    for (std::size_t i = 0; i < id.size(); ++i) id[i] = static_cast<Index>(i);
    return assemble_dense(spec, points, id, cap);
}

/// Gaussian elimination with partial pivoting.
inline std::vector<double> dense_lu_solve(DenseMatrix a, std::vector<double> b)
{
    const Index n = a.rows();
    if (a.cols() != n || static_cast<Index>(b.size()) != n) throw std::invalid_argument("dense_lu_solve: shape mismatch");
    double scale = 0;
    for (double v : a.data()) scale = std::max(scale, std::abs(v));
    const double tiny = scale * 1e-15 * static_cast<double>(std::max<Index>(n, 1));
    for (Index k = 0; k < n; ++k) {
        Index p = k;
        for (Index i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
        if (!(std::abs(a(p, k)) > tiny)) throw std::runtime_error("dense_lu_solve: matrix is singular to working precision");
        if (p != k) {
            for (Index j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
            std::swap(b[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(p)]);
        }
        for (Index i = k + 1; i < n; ++i) {
            const double l = a(i, k) / a(k, k);
            a(i, k) = l;
            if (l == 0) continue;
            for (Index j = k + 1; j < n; ++j) a(i, j) -= l * a(k, j);
            b[static_cast<std::size_t>(i)] -= l * b[static_cast<std::size_t>(k)];
        }
    }
    for (Index k = n - 1; k >= 0; --k) {
        double s = b[static_cast<std::size_t>(k)];
        for (Index j = k + 1; j < n; ++j) s -= a(k, j) * b[static_cast<std::size_t>(j)];
        b[static_cast<std::size_t>(k)] = s / a(k, k);
    }
    return b;
}

struct Svd {
    DenseMatrix U;
    std::vector<double> sigma;  ///< descending
    DenseMatrix V;
};

/// One-sided Jacobi SVD of an m x n matrix; thin factors with min(m,n) columns.
inline Svd dense_svd(const DenseMatrix& a)
{
    const bool wide = a.cols() > a.rows();
    DenseMatrix w = wide ? a.transpose() : a;
    const Index m = w.rows();
    const Index n = w.cols();
    DenseMatrix v = DenseMatrix::identity(n);
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (Index i = 0; i < m; ++i) {
                    alpha += w(i, p) * w(i, p);
                    beta += w(i, q) * w(i, q);
                    gamma += w(i, p) * w(i, q);
                }
                if (gamma == 0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Index i = 0; i < m; ++i) {
                    const double x = w(i, p), y = w(i, q);
                    w(i, p) = c * x - s * y;
                    w(i, q) = s * x + c * y;
                }
                for (Index i = 0; i < n; ++i) {
                    const double x = v(i, p), y = v(i, q);
                    v(i, p) = c * x - s * y;
                    v(i, q) = s * x + c * y;
                }
            }
        if (off < 1e-15) break;
    }
    std::vector<double> sigma(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) {
        double s = 0;
        for (Index i = 0; i < m; ++i) s += w(i, j) * w(i, j);
        sigma[static_cast<std::size_t>(j)] = std::sqrt(s);
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) order[static_cast<std::size_t>(j)] = j;
    std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) {
        return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
    });
    Svd out{DenseMatrix(m, n), std::vector<double>(static_cast<std::size_t>(n)), DenseMatrix(n, n)};
    for (Index jj = 0; jj < n; ++jj) {
        const Index j = order[static_cast<std::size_t>(jj)];
        const double s = sigma[static_cast<std::size_t>(j)];
        out.sigma[static_cast<std::size_t>(jj)] = s;
        for (Index i = 0; i < m; ++i) out.U(i, jj) = s > 0 ? w(i, j) / s : 0.0;
        for (Index i = 0; i < n; ++i) out.V(i, jj) = v(i, j);
    }
    if (wide) std::swap(out.U, out.V);
    return out;
}

/// Largest singular value of a symmetric matrix by Lanczos with full reorthogonalization.
inline double symmetric_norm2(const DenseMatrix& a, int steps = 80, std::uint64_t seed = 0x4F52ULL)
{
    const Index n = a.rows();
    if (n == 0) return 0.0;
    const int kmax = static_cast<int>(std::min<Index>(steps, n));
    const CounterRng rng(seed, 0x4C414EULL);
    std::vector<std::vector<double>> q;
    std::vector<double> x(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = rng.normal(static_cast<std::uint64_t>(i));
    double nx = norm2(x);
    for (double& v : x) v /= nx;
    std::vector<double> alpha, beta;
    q.push_back(x);
    for (int k = 0; k < kmax; ++k) {
        std::vector<double> w = a.apply(q.back());
        double al = 0;
        for (Index i = 0; i < n; ++i) al += w[static_cast<std::size_t>(i)] * q.back()[static_cast<std::size_t>(i)];
        alpha.push_back(al);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& qq : q) {
                double d = 0;
                for (Index i = 0; i < n; ++i) d += w[static_cast<std::size_t>(i)] * qq[static_cast<std::size_t>(i)];
                for (Index i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] -= d * qq[static_cast<std::size_t>(i)];
            }
        const double b = norm2(w);
        if (b < 1e-14 * std::abs(alpha.front()) || k + 1 == kmax) break;
        beta.push_back(b);
        for (double& v : w) v /= b;
        q.push_back(std::move(w));
    }
    // eigenvalues of the tridiagonal matrix through the Jacobi SVD
    const Index kk = static_cast<Index>(alpha.size());
    DenseMatrix t(kk, kk);
    for (Index i = 0; i < kk; ++i) {
        t(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < kk) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    return dense_svd(t).sigma.front();
}

/// Spectral norm: Jacobi SVD for small matrices, Lanczos for large symmetric ones.
inline double dense_norm2(const DenseMatrix& a)
{
    if (a.rows() == 0 || a.cols() == 0) return 0.0;
    bool symmetric = a.rows() == a.cols();
    for (Index j = 0; symmetric && j < a.cols(); ++j)
        for (Index i = 0; i < j; ++i)
            if (a(i, j) != a(j, i)) {
                symmetric = false;
                break;
            }
    if (symmetric && a.rows() > 256) return symmetric_norm2(a);
    return dense_svd(a).sigma.front();
}

}  // namespace h2skel::oracle
