#pragma once

#include "h2skel/chebyshev.hpp"
#include "h2skel/dense.hpp"
#include "h2skel/kernels.hpp"
#include "h2skel/structure.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace h2skel {

/// A stored block keyed by (row cluster, col cluster).
struct KeyedBlock {
    Index row = 0;
    Index col = 0;
    Matrix data;
};

namespace detail {

inline bool key_less(const KeyedBlock& b, std::pair<Index, Index> key)
{
    return b.row < key.first || (b.row == key.first && b.col < key.second);
}

inline const KeyedBlock* find_block(const std::vector<KeyedBlock>& blocks, Index r, Index c)
{
    auto it = std::lower_bound(blocks.begin(), blocks.end(), std::pair{r, c}, key_less);
    if (it == blocks.end() || it->row != r || it->col != c) return nullptr;
    return &*it;
}

}  // namespace detail

/// Chebyshev order at `level`: p0 at the leaves, one more for every two levels towards the root.
inline int chebyshev_order(int level, int depth, int p0)
{
    return p0 + (depth - level) / 2;
}

/// Symmetric H^2 matrix in tree order. Bases exist for every cluster at levels
/// [top_level, depth]; leaves store V explicitly, other clusters reach their parent through a
/// transfer matrix (k_child x k_parent). Couplings and dense leaves are stored for row <= col
/// and mirrored on access.
class H2Matrix {
public:
    H2Matrix(std::shared_ptr<const ClusterTree> tree, std::shared_ptr<const BlockPartition> partition)
        : tree_(std::move(tree)), partition_(std::move(partition))
    {
        const auto nc = static_cast<std::size_t>(tree_->num_clusters());
        ranks_.assign(nc, 0);
        leaf_bases_.resize(nc);
        transfers_.resize(nc);
    }

    const ClusterTree& tree() const noexcept { return *tree_; }
    const BlockPartition& partition() const noexcept { return *partition_; }
    std::shared_ptr<const ClusterTree> tree_ptr() const noexcept { return tree_; }
    std::shared_ptr<const BlockPartition> partition_ptr() const noexcept { return partition_; }
    Index size() const noexcept { return tree_->size(); }
    int depth() const noexcept { return tree_->depth(); }
    int top_level() const noexcept { return partition_->top_level(); }
    bool has_basis(Index c) const
    {
        return !partition_->dense_only() && tree_->cluster(c).level >= partition_->top_level();
    }

    Index rank(Index c) const { return ranks_[static_cast<std::size_t>(c)]; }
    const Matrix& leaf_basis(Index c) const { return leaf_bases_[static_cast<std::size_t>(c)]; }
    const Matrix& transfer(Index c) const { return transfers_[static_cast<std::size_t>(c)]; }

    /// Coupling S_st (k_s x k_t) of an admissible pair, mirrored if stored as (t,s).
    Matrix coupling(Index s, Index t) const
    {
        if (s <= t) {
            const auto* b = detail::find_block(couplings_, s, t);
            if (!b) throw std::out_of_range("H2Matrix::coupling: pair is not admissible");
            return b->data;
        }
        return coupling(t, s).transpose();
    }
    const KeyedBlock* find_coupling(Index s, Index t) const { return detail::find_block(couplings_, s, t); }

    /// Dense block of an inadmissible leaf pair, mirrored if stored as (t,s).
    Matrix dense_block(Index s, Index t) const
    {
        if (s <= t) {
            const auto* b = detail::find_block(dense_, s, t);
            if (!b) throw std::out_of_range("H2Matrix::dense_block: pair is not a dense leaf");
            return b->data;
        }
        return dense_block(t, s).transpose();
    }

    const std::vector<KeyedBlock>& couplings() const noexcept { return couplings_; }
    const std::vector<KeyedBlock>& dense_blocks() const noexcept { return dense_; }
    bool orthogonal() const noexcept { return orthogonal_; }
    const std::vector<int>& orders() const noexcept { return orders_; }

    Index max_rank() const { return ranks_.empty() ? 0 : *std::max_element(ranks_.begin(), ranks_.end()); }
    Index max_rank(int level) const
    {
        Index best = 0;
        for (Index c : tree_->level(level)) best = std::max(best, rank(c));
        return best;
    }

    std::size_t memory_bytes() const
    {
        std::size_t total = 0;
        for (const auto& m : leaf_bases_) total += bytes_of(m);
        for (const auto& m : transfers_) total += bytes_of(m);
        for (const auto& b : couplings_) total += bytes_of(b.data);
        for (const auto& b : dense_) total += bytes_of(b.data);
        return total;
    }

    /// y = A x in tree order; x may hold several columns.
    Matrix matvec(const Matrix& x, const Execution& exec = {}) const;
    Vector matvec(const Vector& x, const Execution& exec = {}) const
    {
        return matvec(Matrix(x), exec).col(0);
    }

    // Mutable storage for the construction algorithms.
    std::vector<Index>& ranks() noexcept { return ranks_; }
    const std::vector<Index>& ranks() const noexcept { return ranks_; }
    std::vector<Matrix>& leaf_bases() noexcept { return leaf_bases_; }
    std::vector<Matrix>& transfers() noexcept { return transfers_; }
    std::vector<KeyedBlock>& mutable_couplings() noexcept { return couplings_; }
    std::vector<KeyedBlock>& mutable_dense_blocks() noexcept { return dense_; }
    void set_orthogonal(bool v) noexcept { orthogonal_ = v; }
    void set_orders(std::vector<int> o) { orders_ = std::move(o); }

private:
    std::shared_ptr<const ClusterTree> tree_;
    std::shared_ptr<const BlockPartition> partition_;
    std::vector<Index> ranks_;
    std::vector<Matrix> leaf_bases_;
    std::vector<Matrix> transfers_;
    std::vector<KeyedBlock> couplings_;
    std::vector<KeyedBlock> dense_;
    std::vector<int> orders_;
    bool orthogonal_ = false;
};

inline Matrix H2Matrix::matvec(const Matrix& x, const Execution& exec) const
{
    if (x.rows() != size()) throw std::invalid_argument("H2Matrix::matvec: dimension mismatch");
    const ClusterTree& t = *tree_;
    const BlockPartition& p = *partition_;
    const Index q = x.cols();
    Matrix y = Matrix::Zero(size(), q);

    if (!p.dense_only()) {
        const int top = p.top_level();
        const auto nc = static_cast<std::size_t>(t.num_clusters());
        std::vector<Matrix> xhat(nc);
        std::vector<Matrix> yhat(nc);

        // upsweep
        for (int l = t.depth(); l >= top; --l) {
            const auto& ids = t.level(l);
            parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
                const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
                auto& xc = xhat[static_cast<std::size_t>(c.id)];
                if (c.is_leaf()) {
                    xc.noalias() = leaf_basis(c.id).transpose() * x.middleRows(c.begin, c.size());
                } else {
                    xc = Matrix::Zero(rank(c.id), q);
                    for (Index ch : c.children)
                        xc.noalias() += transfer(ch).transpose() * xhat[static_cast<std::size_t>(ch)];
                }
            });
        }
        // couplings, gathered per block row
        for (int l = top; l <= t.depth(); ++l) {
            const auto& ids = t.level(l);
            parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
                const Index s = ids[static_cast<std::size_t>(i)];
                auto& ys = yhat[static_cast<std::size_t>(s)];
                ys = Matrix::Zero(rank(s), q);
                for (Index c : p.admissible_row(s)) {
                    if (s < c)
                        ys.noalias() += find_coupling(s, c)->data * xhat[static_cast<std::size_t>(c)];
                    else
                        ys.noalias() += find_coupling(c, s)->data.transpose() * xhat[static_cast<std::size_t>(c)];
                }
            });
        }
        // downsweep
        for (int l = top; l <= t.depth(); ++l) {
            const auto& ids = t.level(l);
            parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
                const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
                auto& yc = yhat[static_cast<std::size_t>(c.id)];
                if (l > top) yc.noalias() += transfer(c.id) * yhat[static_cast<std::size_t>(c.parent)];
                if (c.is_leaf()) y.middleRows(c.begin, c.size()).noalias() += leaf_basis(c.id) * yc;
            });
        }
    }

    // dense leaves
    const auto& leaves = t.level(t.depth());
    parallel_for(static_cast<Index>(leaves.size()), exec, [&](Index i) {
        const Cluster& s = t.cluster(leaves[static_cast<std::size_t>(i)]);
        for (Index c : p.inadmissible_row(s.id)) {
            const Cluster& ct = t.cluster(c);
            if (s.id <= c)
                y.middleRows(s.begin, s.size()).noalias() +=
                    detail::find_block(dense_, s.id, c)->data * x.middleRows(ct.begin, ct.size());
            else
                y.middleRows(s.begin, s.size()).noalias() +=
                    detail::find_block(dense_, c, s.id)->data.transpose() * x.middleRows(ct.begin, ct.size());
        }
    });
    return y;
}

namespace detail {

inline Matrix cluster_points(const ClusterTree& t, const Cluster& c)
{
    Matrix pts(c.size(), t.dim());
    for (Index i = 0; i < c.size(); ++i)
        for (int a = 0; a < t.dim(); ++a) pts(i, a) = t.point(c.begin + i)[static_cast<std::size_t>(a)];
    return pts;
}

inline Matrix kernel_block(const KernelSpec& spec, const Matrix& xs, const Matrix& ys)
{
    Matrix out(xs.rows(), ys.rows());
    const int d = static_cast<int>(xs.cols());
    for (Index j = 0; j < ys.rows(); ++j)
        for (Index i = 0; i < xs.rows(); ++i) {
            double s = 0;
            for (int a = 0; a < d; ++a) s += (xs(i, a) - ys(j, a)) * (xs(i, a) - ys(j, a));
            out(i, j) = eval_distance(spec, std::sqrt(s));
        }
    return out;
}

/// Exact entries of an inadmissible leaf block (no low-rank overlay).
inline Matrix dense_leaf(const ClusterTree& t, const KernelSpec& spec, const Cluster& s, const Cluster& c)
{
    Matrix out(s.size(), c.size());
    for (Index j = 0; j < c.size(); ++j)
        for (Index i = 0; i < s.size(); ++i)
            out(i, j) = base_entry(spec, t.point(s.begin + i), t.point(c.begin + j), s.begin + i == c.begin + j);
    return out;
}

/// Pairs (s,t), s < t, of every admissible block at levels [top, depth], sorted.
inline std::vector<ClusterPair> upper_admissible_pairs(const BlockPartition& p)
{
    std::vector<ClusterPair> out;
    if (p.dense_only()) return out;
    for (int l = p.top_level(); l <= p.depth(); ++l)
        for (const auto& st : p.admissible(l))
            if (st.first < st.second) out.push_back(st);
    std::sort(out.begin(), out.end());
    return out;
}

inline BoundingBox point_box(const ClusterTree& t, const Cluster& c)
{
    BoundingBox b;
    b.dim = t.dim();
    for (int a = 0; a < b.dim; ++a) {
        b.lo[static_cast<std::size_t>(a)] = std::numeric_limits<double>::infinity();
        b.hi[static_cast<std::size_t>(a)] = -std::numeric_limits<double>::infinity();
    }
    for (Index i = c.begin; i < c.end; ++i)
        for (int a = 0; a < b.dim; ++a) {
            const auto s = static_cast<std::size_t>(a);
            b.lo[s] = std::min(b.lo[s], t.point(i)[s]);
            b.hi[s] = std::max(b.hi[s], t.point(i)[s]);
        }
    return b;
}

inline std::vector<BoundingBox> point_boxes(const ClusterTree& t)
{
    std::vector<BoundingBox> boxes(static_cast<std::size_t>(t.num_clusters()));
    for (Index id = 0; id < t.num_clusters(); ++id) boxes[static_cast<std::size_t>(id)] = point_box(t, t.cluster(id));
    return boxes;
}

/// Chebyshev grids of every cluster that carries a basis.
inline std::vector<Matrix> interpolation_grids(const H2Matrix& h)
{
    const ClusterTree& t = h.tree();
    const BlockPartition& p = h.partition();
    std::vector<Matrix> grids(static_cast<std::size_t>(t.num_clusters()));
    if (p.dense_only()) return grids;
    const auto boxes = point_boxes(t);
    for (int l = p.top_level(); l <= t.depth(); ++l)
        for (Index c : t.level(l))
            grids[static_cast<std::size_t>(c)] =
                chebyshev_grid(boxes[static_cast<std::size_t>(c)], h.orders()[static_cast<std::size_t>(l)]);
    return grids;
}

/// Chebyshev bases, transfers, and dense leaves; couplings are left to the caller.
inline H2Matrix chebyshev_skeleton(std::shared_ptr<const ClusterTree> tree,
                                   std::shared_ptr<const BlockPartition> partition, const KernelSpec& spec, int p0,
                                   const Execution& exec)
{
    if (p0 < 1) throw std::invalid_argument("build_h2: leaf order must be >= 1");
    H2Matrix h(tree, partition);
    const ClusterTree& t = *tree;
    const BlockPartition& p = *partition;
    std::vector<int> orders(static_cast<std::size_t>(t.num_levels()), 0);

    if (!p.dense_only()) {
        // interpolate on the boxes spanned by the points; cell boxes only drive admissibility
        const auto boxes = point_boxes(t);
        for (int l = p.top_level(); l <= t.depth(); ++l) {
            const int order = chebyshev_order(l, t.depth(), p0);
            orders[static_cast<std::size_t>(l)] = order;
            const auto& ids = t.level(l);
            parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
                const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
                h.ranks()[static_cast<std::size_t>(c.id)] = chebyshev_grid_size(order, t.dim());
                if (c.is_leaf())
                    h.leaf_bases()[static_cast<std::size_t>(c.id)] = interpolation_matrix(cluster_points(t, c), boxes[static_cast<std::size_t>(c.id)], order);
                if (l > p.top_level()) {
                    const Cluster& parent = t.cluster(c.parent);
                    const int parent_order = chebyshev_order(l - 1, t.depth(), p0);
                    h.transfers()[static_cast<std::size_t>(c.id)] =
                        interpolation_matrix(chebyshev_grid(boxes[static_cast<std::size_t>(c.id)], order),
                                             boxes[static_cast<std::size_t>(parent.id)], parent_order);
                }
            });
        }
    }
    h.set_orders(std::move(orders));

    std::vector<ClusterPair> dense_pairs;
    for (const auto& st : p.inadmissible(t.depth()))
        if (st.first <= st.second) dense_pairs.push_back(st);
    auto& dense = h.mutable_dense_blocks();
    dense.resize(dense_pairs.size());
    parallel_for(static_cast<Index>(dense_pairs.size()), exec, [&](Index i) {
        const auto [s, c] = dense_pairs[static_cast<std::size_t>(i)];
        dense[static_cast<std::size_t>(i)] = {s, c, dense_leaf(t, spec, t.cluster(s), t.cluster(c))};
    });
    return h;
}

inline Index count_kept(const Vector& sigma, double eps)
{
    if (sigma.size() == 0 || !(sigma[0] > 0)) return 0;
    const double cut = eps * sigma[0];
    Index k = 0;
    while (k < sigma.size() && sigma[k] > cut) ++k;
    return k;
}

/// Orthogonalizes and truncates the nested bases of `h` in place. `coupling(s,t)` returns S_st
/// in the bases as they were on entry. Returns, per cluster, the map G_c from entry
/// coefficients to the new ones, so that new couplings are G_s S_st G_t^T.
template <class CouplingFn>
std::vector<Matrix> compress_bases(H2Matrix& h, CouplingFn&& coupling, double eps, const Execution& exec)
{
    const ClusterTree& t = h.tree();
    const BlockPartition& p = h.partition();
    const auto nc = static_cast<std::size_t>(t.num_clusters());
    std::vector<Matrix> g(nc);
    if (p.dense_only()) return g;
    const int top = p.top_level();
    auto& ranks = h.ranks();
    auto& bases = h.leaf_bases();
    auto& transfers = h.transfers();

    // 1. orthogonalize bottom-up; r1[c] maps entry coefficients to orthonormal ones
    std::vector<Matrix> r1(nc);
    for (int l = t.depth(); l >= top; --l) {
        const auto& ids = t.level(l);
        parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
            const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
            const auto cid = static_cast<std::size_t>(c.id);
            if (c.is_leaf()) {
                auto [q, r] = thin_qr(bases[cid]);
                bases[cid] = std::move(q);
                r1[cid] = std::move(r);
                return;
            }
            const auto a = static_cast<std::size_t>(c.children[0]);
            const auto b = static_cast<std::size_t>(c.children[1]);
            Matrix stacked(r1[a].rows() + r1[b].rows(), ranks[cid]);
            stacked.topRows(r1[a].rows()).noalias() = r1[a] * transfers[a];
            stacked.bottomRows(r1[b].rows()).noalias() = r1[b] * transfers[b];
            auto [q, r] = thin_qr(stacked);
            transfers[a] = q.topRows(r1[a].rows());
            transfers[b] = q.bottomRows(r1[b].rows());
            r1[cid] = std::move(r);
        });
    }
    auto orthogonal_coupling = [&](Index s, Index c) -> Matrix {
        return r1[static_cast<std::size_t>(s)] * coupling(s, c) * r1[static_cast<std::size_t>(c)].transpose();
    };

    // 2. top-down weights: z[c]^T z[c] is the Gram matrix of the far-field block row of c
    std::vector<Matrix> z(nc);
    for (int l = top; l <= t.depth(); ++l) {
        const auto& ids = t.level(l);
        parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
            const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
            const auto cid = static_cast<std::size_t>(c.id);
            const Index k = r1[cid].rows();
            std::vector<Matrix> parts;
            Index rows = 0;
            for (Index other : p.admissible_row(c.id)) {
                parts.push_back(orthogonal_coupling(c.id, other).transpose());
                rows += parts.back().rows();
            }
            if (l > top) {
                const auto& zp = z[static_cast<std::size_t>(c.parent)];
                parts.push_back(zp * transfers[cid].transpose());
                rows += parts.back().rows();
            }
            Matrix stack(rows, k);
            Index off = 0;
            for (const auto& m : parts) {
                stack.middleRows(off, m.rows()) = m;
                off += m.rows();
            }
            z[cid] = qr_r_factor(stack);
        });
    }

    // 3. truncate bottom-up; proj[c] maps orthonormal coefficients to truncated ones
    std::vector<Matrix> proj(nc);
    for (int l = t.depth(); l >= top; --l) {
        const auto& ids = t.level(l);
        parallel_for(static_cast<Index>(ids.size()), exec, [&](Index i) {
            const Cluster& c = t.cluster(ids[static_cast<std::size_t>(i)]);
            const auto cid = static_cast<std::size_t>(c.id);
            if (c.is_leaf()) {
                auto [u, sigma] = left_singular(z[cid].transpose());
                const Index kept = count_kept(sigma, eps);
                Matrix uk = u.leftCols(kept);
                bases[cid] = bases[cid] * uk;
                proj[cid] = uk.transpose();
                ranks[cid] = kept;
                return;
            }
            const auto a = static_cast<std::size_t>(c.children[0]);
            const auto b = static_cast<std::size_t>(c.children[1]);
            Matrix stacked(proj[a].rows() + proj[b].rows(), r1[cid].rows());
            stacked.topRows(proj[a].rows()).noalias() = proj[a] * transfers[a];
            stacked.bottomRows(proj[b].rows()).noalias() = proj[b] * transfers[b];
            auto [u, sigma] = left_singular(stacked * z[cid].transpose());
            const Index kept = count_kept(sigma, eps);
            Matrix uk = u.leftCols(kept);
            // children transfers become rows of uk; parent transfers are fixed one level up
            transfers[a] = uk.topRows(proj[a].rows());
            transfers[b] = uk.bottomRows(proj[b].rows());
            proj[cid] = uk.transpose() * stacked;
            ranks[cid] = kept;
        });
    }

    for (std::size_t c = 0; c < nc; ++c)
        if (h.has_basis(static_cast<Index>(c))) g[c] = proj[c] * r1[c];
    h.set_orthogonal(true);
    return g;
}

inline void recompute_couplings(H2Matrix& h, const std::vector<Matrix>& g,
                                const std::function<Matrix(Index, Index)>& coupling, const Execution& exec)
{
    const auto pairs = upper_admissible_pairs(h.partition());
    std::vector<KeyedBlock> out(pairs.size());
    parallel_for(static_cast<Index>(pairs.size()), exec, [&](Index i) {
        const auto [s, c] = pairs[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] = {
            s, c, g[static_cast<std::size_t>(s)] * coupling(s, c) * g[static_cast<std::size_t>(c)].transpose()};
    });
    h.mutable_couplings() = std::move(out);
}

}  // namespace detail

/// Chebyshev-interpolation H^2 matrix (bases not orthogonal). The low-rank overlay of `spec`
/// is ignored here; see absorb_low_rank.
inline H2Matrix build_h2(std::shared_ptr<const ClusterTree> tree, std::shared_ptr<const BlockPartition> partition,
                         const KernelSpec& spec, int p0, const Execution& exec = {})
{
    H2Matrix h = detail::chebyshev_skeleton(tree, partition, spec, p0, exec);
    const auto grids = detail::interpolation_grids(h);
    const auto pairs = detail::upper_admissible_pairs(*partition);
    auto& couplings = h.mutable_couplings();
    couplings.resize(pairs.size());
    parallel_for(static_cast<Index>(pairs.size()), exec, [&](Index i) {
        const auto [s, c] = pairs[static_cast<std::size_t>(i)];
        couplings[static_cast<std::size_t>(i)] = {
            s, c, detail::kernel_block(spec, grids[static_cast<std::size_t>(s)], grids[static_cast<std::size_t>(c)])};
    });
    return h;
}

/// Orthogonalizes the nested bases and truncates them to relative accuracy `eps` per cluster.
inline void orthogonalize_recompress(H2Matrix& h, double eps, const Execution& exec = {})
{
    std::vector<KeyedBlock> old = std::move(h.mutable_couplings());
    h.mutable_couplings().clear();
    auto coupling = [&](Index s, Index c) -> Matrix {
        if (s < c) return detail::find_block(old, s, c)->data;
        return detail::find_block(old, c, s)->data.transpose();
    };
    const auto g = detail::compress_bases(h, coupling, eps, exec);
    detail::recompute_couplings(h, g, coupling, exec);
}

/// build_h2 followed by orthogonalize_recompress without ever storing the uncompressed
/// couplings; they are regenerated from the kernel when needed.
inline H2Matrix build_compressed_h2(std::shared_ptr<const ClusterTree> tree,
                                    std::shared_ptr<const BlockPartition> partition, const KernelSpec& spec, int p0,
                                    double eps, const Execution& exec = {})
{
    H2Matrix h = detail::chebyshev_skeleton(tree, partition, spec, p0, exec);
    const auto grids = detail::interpolation_grids(h);
    auto coupling = [&](Index s, Index c) -> Matrix {
        return detail::kernel_block(spec, grids[static_cast<std::size_t>(s)], grids[static_cast<std::size_t>(c)]);
    };
    const auto g = detail::compress_bases(h, coupling, eps, exec);
    detail::recompute_couplings(h, g, coupling, exec);
    return h;
}

/// Adds W W^T (W: n x r in original point order) and recompresses to `eps`.
inline void absorb_low_rank(H2Matrix& h, const Matrix& w, double eps, const Execution& exec = {})
{
    if (w.rows() != h.size()) throw std::invalid_argument("absorb_low_rank: factor has wrong row count");
    const Index r = w.cols();
    if (r == 0) return;
    const ClusterTree& t = h.tree();
    const Matrix wt = t.to_tree_order(w);

    for (auto& b : h.mutable_dense_blocks()) {
        const Cluster& s = t.cluster(b.row);
        const Cluster& c = t.cluster(b.col);
        b.data.noalias() += wt.middleRows(s.begin, s.size()) * wt.middleRows(c.begin, c.size()).transpose();
    }
    if (h.partition().dense_only()) return;

    for (Index c = 0; c < t.num_clusters(); ++c) {
        if (!h.has_basis(c)) continue;
        const Cluster& cl = t.cluster(c);
        const auto ci = static_cast<std::size_t>(c);
        const Index k = h.rank(c);
        if (cl.is_leaf()) {
            Matrix v(cl.size(), k + r);
            v << h.leaf_bases()[ci], wt.middleRows(cl.begin, cl.size());
            h.leaf_bases()[ci] = std::move(v);
        }
        if (cl.level > h.top_level()) {
            const Index kp = h.rank(cl.parent);
            Matrix tr = Matrix::Zero(k + r, kp + r);
            tr.topLeftCorner(k, kp) = h.transfers()[ci];
            tr.bottomRightCorner(r, r).setIdentity();
            h.transfers()[ci] = std::move(tr);
        }
    }
    for (auto& b : h.mutable_couplings()) {
        Matrix s = Matrix::Zero(b.data.rows() + r, b.data.cols() + r);
        s.topLeftCorner(b.data.rows(), b.data.cols()) = b.data;
        s.bottomRightCorner(r, r).setIdentity();
        b.data = std::move(s);
    }
    for (Index c = 0; c < t.num_clusters(); ++c)
        if (h.has_basis(c)) h.ranks()[static_cast<std::size_t>(c)] += r;
    orthogonalize_recompress(h, eps, exec);
}

/// Power iteration on a symmetric operator; returns the final |Rayleigh quotient|.
template <class Op>
double estimate_norm2(Op&& apply, Index n, int iterations = 30, std::uint64_t seed = 0x5EEDULL)
{
    if (n == 0) return 0.0;
    Vector x = CounterRng(seed, 0x504F57ULL).normal_vector(n);
    x.normalize();
    double rq = 0;
    for (int it = 0; it < iterations; ++it) {
        Vector y = apply(x);
        rq = x.dot(y);
        const double nrm = y.norm();
        if (nrm == 0) return 0.0;
        x = y / nrm;
    }
    return std::abs(rq);
}

inline double estimate_norm2(const H2Matrix& h, const Execution& exec = {})
{
    return estimate_norm2([&](const Vector& v) { return h.matvec(v, exec); }, h.size());
}

}  // namespace h2skel
