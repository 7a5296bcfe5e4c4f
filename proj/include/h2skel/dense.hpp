#pragma once

#include "h2skel/common.hpp"

#include <algorithm>
#include <utility>

namespace h2skel {

/// Thin Householder QR: a = q * r with q (m x kk) orthonormal, r (kk x n), kk = min(m, n).
inline std::pair<Matrix, Matrix> thin_qr(const Matrix& a)
{
    const Index m = a.rows();
    const Index n = a.cols();
    const Index kk = std::min(m, n);
    if (kk == 0) return {Matrix(m, 0), Matrix(0, n)};
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(m, kk);
    Matrix r = qr.matrixQR().topRows(kk).triangularView<Eigen::Upper>();
    return {std::move(q), std::move(r)};
}

/// R factor of a thin QR; its Gram matrix equals a^T a.
inline Matrix qr_r_factor(const Matrix& a)
{
    const Index kk = std::min(a.rows(), a.cols());
    if (kk == 0) return Matrix(0, a.cols());
    Eigen::HouseholderQR<Matrix> qr(a);
    return qr.matrixQR().topRows(kk).triangularView<Eigen::Upper>();
}

/// Left singular vectors and values of `a` (thin).
inline std::pair<Matrix, Vector> left_singular(const Matrix& a)
{
    if (a.rows() == 0 || a.cols() == 0) return {Matrix(a.rows(), 0), Vector(0)};
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU);
    return {svd.matrixU(), svd.singularValues()};
}

/// Forward half of a pivoted LU solve: b <- L^{-1} P b.
inline void lu_forward(const Eigen::PartialPivLU<Matrix>& lu, Eigen::Ref<Matrix> b)
{
    b = lu.permutationP() * b;
    lu.matrixLU().triangularView<Eigen::UnitLower>().solveInPlace(b);
}

/// Backward half: b <- U^{-1} b.
inline void lu_backward(const Eigen::PartialPivLU<Matrix>& lu, Eigen::Ref<Matrix> b)
{
    lu.matrixLU().triangularView<Eigen::Upper>().solveInPlace(b);
}

}  // namespace h2skel
