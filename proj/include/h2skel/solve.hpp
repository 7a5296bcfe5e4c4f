#pragma once

#include "h2skel/factorization.hpp"

namespace h2skel {

/// One segmented block of right-hand sides per level, segments laid out by index_in_level.
struct TreeVector {
    std::vector<Matrix> levels;  ///< indexed by level; empty above the top level

    Matrix& at(int l) { return levels.at(static_cast<std::size_t>(l)); }
    const Matrix& at(int l) const { return levels.at(static_cast<std::size_t>(l)); }
};

namespace detail {

inline auto segment(Matrix& b, const LevelRecord& rec, Index cluster_local)
{
    const auto i = static_cast<std::size_t>(cluster_local);
    return b.middleRows(rec.offsets[i], rec.offsets[i + 1] - rec.offsets[i]);
}

}  // namespace detail

/// Q~^T on every cluster of the color, then the inverse lower elementary factors.
inline void apply_forward(const Factorization& z, const ColorRecord& color, Matrix& b, const Execution& exec = {})
{
    const ClusterTree& tree = *z.tree;
    const LevelRecord& rec = z.level_record(color.level);
    parallel_for(static_cast<Index>(color.factors.size()), exec, [&](Index i) {
        const ClusterFactor& f = color.factors[static_cast<std::size_t>(i)];
        auto seg = detail::segment(b, rec, tree.cluster(f.cluster).index_in_level);
        seg = f.Qt.transpose() * seg;
    });
    for (const auto& batch : color.solve_batches) {
        parallel_for(static_cast<Index>(batch.size()), exec, [&](Index e) {
            const auto [fi, bi] = batch[static_cast<std::size_t>(e)];
            const ClusterFactor& f = color.factors[static_cast<std::size_t>(fi)];
            const auto& [j, U] = f.U_blocks[static_cast<std::size_t>(bi)];
            auto src = detail::segment(b, rec, tree.cluster(f.cluster).index_in_level).topRows(f.r);
            auto dst = detail::segment(b, rec, tree.cluster(j).index_in_level);
            dst.bottomRows(U.cols()).noalias() += U.transpose() * src;
        });
    }
}

/// Inverse upper elementary factors, then Q~, for every cluster of the color.
inline void apply_backward(const Factorization& z, const ColorRecord& color, Matrix& b, const Execution& exec = {})
{
    const ClusterTree& tree = *z.tree;
    const LevelRecord& rec = z.level_record(color.level);
    parallel_for(static_cast<Index>(color.factors.size()), exec, [&](Index i) {
        const ClusterFactor& f = color.factors[static_cast<std::size_t>(i)];
        auto seg = detail::segment(b, rec, tree.cluster(f.cluster).index_in_level);
        for (const auto& [j, U] : f.U_blocks) {
            auto src = detail::segment(b, rec, tree.cluster(j).index_in_level).bottomRows(U.cols());
            seg.topRows(f.r).noalias() += U * src;
        }
        seg = f.Qt * seg;
    });
}

/// Lower half of the redundant diagonal solves at one level.
inline void diagonal_forward(const Factorization& z, int level, Matrix& b, const Execution& exec = {})
{
    const ClusterTree& tree = *z.tree;
    const LevelRecord& rec = z.level_record(level);
    for (const auto& color : z.colors) {
        if (color.level != level) continue;
        parallel_for(static_cast<Index>(color.factors.size()), exec, [&](Index i) {
            const ClusterFactor& f = color.factors[static_cast<std::size_t>(i)];
            if (f.r == 0) return;
            auto seg = detail::segment(b, rec, tree.cluster(f.cluster).index_in_level);
            lu_forward(f.lu_RR, seg.topRows(f.r));
        });
    }
}

inline void diagonal_backward(const Factorization& z, int level, Matrix& b, const Execution& exec = {})
{
    const ClusterTree& tree = *z.tree;
    const LevelRecord& rec = z.level_record(level);
    for (const auto& color : z.colors) {
        if (color.level != level) continue;
        parallel_for(static_cast<Index>(color.factors.size()), exec, [&](Index i) {
            const ClusterFactor& f = color.factors[static_cast<std::size_t>(i)];
            if (f.r == 0) return;
            auto seg = detail::segment(b, rec, tree.cluster(f.cluster).index_in_level);
            lu_backward(f.lu_RR, seg.topRows(f.r));
        });
    }
}

/// Gathers the skeleton entries of level `level` into the segments of level-1.
inline Matrix upsweep(const Factorization& z, int level, const Matrix& b)
{
    const LevelRecord& rec = z.level_record(level);
    Index total = 0;
    for (Index k : rec.skeleton) total += k;
    Matrix out(total, b.cols());
    Index off = 0;
    // children of consecutive parents are consecutive within the level
    for (std::size_t i = 0; i < rec.ids.size(); ++i) {
        const Index k = rec.skeleton[i];
        out.middleRows(off, k) = b.middleRows(rec.offsets[i + 1] - k, k);
        off += k;
    }
    return out;
}

/// Exact inverse of upsweep on the skeleton entries; redundant entries are left untouched.
inline void downsweep(const Factorization& z, int level, const Matrix& parent, Matrix& b)
{
    const LevelRecord& rec = z.level_record(level);
    Index off = 0;
    for (std::size_t i = 0; i < rec.ids.size(); ++i) {
        const Index k = rec.skeleton[i];
        b.middleRows(rec.offsets[i + 1] - k, k) = parent.middleRows(off, k);
        off += k;
    }
}

/// Solves A X = B for every column of B (tree order).
inline Matrix solve(const Factorization& z, const Matrix& rhs, const Execution& exec = {})
{
    if (rhs.rows() != z.n) throw std::invalid_argument("solve: right-hand side has wrong length");
    TreeVector tv;
    tv.levels.resize(static_cast<std::size_t>(z.depth + 1));
    tv.at(z.depth) = rhs;

    for (int l = z.depth; l > z.top_level; --l) {
        Matrix& b = tv.at(l);
        for (const auto& color : z.colors)
            if (color.level == l) apply_forward(z, color, b, exec);
        diagonal_forward(z, l, b, exec);
        tv.at(l - 1) = upsweep(z, l, b);
    }

    Matrix& top = tv.at(z.top_level);
    if (top.rows() > 0) top = z.top_lu.solve(top);

    for (int l = z.top_level + 1; l <= z.depth; ++l) {
        Matrix& b = tv.at(l);
        downsweep(z, l, tv.at(l - 1), b);
        diagonal_backward(z, l, b, exec);
        for (auto it = z.colors.rbegin(); it != z.colors.rend(); ++it)
            if (it->level == l) apply_backward(z, *it, b, exec);
    }
    return tv.at(z.depth);
}

inline Vector solve(const Factorization& z, const Vector& rhs, const Execution& exec = {})
{
    return solve(z, Matrix(rhs), exec).col(0);
}

}  // namespace h2skel
