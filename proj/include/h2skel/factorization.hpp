#pragma once

#include "h2skel/h2matrix.hpp"

#include <map>
#include <set>
#include <utility>

namespace h2skel {

/// Dense blocks keyed by an unordered cluster pair. The block for key (a,b), a <= b, has rows on
/// the live indices of a and columns on those of b; `get` mirrors it for the other orientation.
class BlockStore {
public:
    using Key = std::pair<Index, Index>;

    explicit BlockStore(Index num_clusters = 0) : partners_(static_cast<std::size_t>(num_clusters)) {}

    static Key key(Index a, Index b) noexcept { return a <= b ? Key{a, b} : Key{b, a}; }

    bool contains(Index a, Index b) const { return blocks_.count(key(a, b)) != 0; }
    Matrix* find(Index a, Index b)
    {
        auto it = blocks_.find(key(a, b));
        return it == blocks_.end() ? nullptr : &it->second;
    }
    const Matrix* find(Index a, Index b) const
    {
        auto it = blocks_.find(key(a, b));
        return it == blocks_.end() ? nullptr : &it->second;
    }
    /// Block with rows on a and columns on b.
    Matrix get(Index a, Index b) const
    {
        const Matrix* m = find(a, b);
        if (!m) throw std::out_of_range("BlockStore::get: missing block");
        return a <= b ? *m : Matrix(m->transpose());
    }
    /// Stores `m` (rows on a, columns on b).
    void set(Index a, Index b, Matrix m)
    {
        if (a > b) m.transposeInPlace();
        partners_[static_cast<std::size_t>(a)].insert(b);
        partners_[static_cast<std::size_t>(b)].insert(a);
        blocks_[key(a, b)] = std::move(m);
    }
    /// Zero block created if absent; `rows`/`cols` refer to the (min,max) orientation.
    Matrix& ensure(Index a, Index b, Index rows, Index cols)
    {
        auto [it, inserted] = blocks_.try_emplace(key(a, b));
        if (inserted) {
            it->second = Matrix::Zero(rows, cols);
            partners_[static_cast<std::size_t>(a)].insert(b);
            partners_[static_cast<std::size_t>(b)].insert(a);
        }
        return it->second;
    }
    void erase(Index a, Index b)
    {
        blocks_.erase(key(a, b));
        partners_[static_cast<std::size_t>(a)].erase(b);
        partners_[static_cast<std::size_t>(b)].erase(a);
    }
    const std::set<Index>& partners(Index a) const { return partners_[static_cast<std::size_t>(a)]; }
    /// Moves every block out and leaves the store empty.
    std::map<Key, Matrix> release()
    {
        for (auto& p : partners_) p.clear();
        return std::exchange(blocks_, {});
    }
    const std::map<Key, Matrix>& blocks() const noexcept { return blocks_; }
    std::size_t size() const noexcept { return blocks_.size(); }
    std::size_t memory_bytes() const
    {
        std::size_t total = 0;
        for (const auto& [k, m] : blocks_) total += bytes_of(m);
        return total;
    }

private:
    std::map<Key, Matrix> blocks_;
    std::vector<std::set<Index>> partners_;
};

/// Working matrix at one level: the inadmissible blocks D, the fill-in F, and per-cluster live
/// sizes and orthonormal bases. Admissible blocks stay implicit in the H^2 couplings.
struct LevelState {
    int level = 0;
    std::vector<Index> ids;
    std::vector<Index> slot;      ///< cluster id -> position in ids, -1 elsewhere
    std::vector<Index> full;      ///< live size on entry to the level, per index_in_level
    std::vector<Index> skeleton;  ///< k~ once skeletonized, else -1
    std::vector<Matrix> basis;    ///< m x k orthonormal, k = H^2 rank
    BlockStore D;
    BlockStore F;

    Index local(Index id) const { return slot[static_cast<std::size_t>(id)]; }
    void set_ids(std::vector<Index> level_ids, Index num_clusters)
    {
        ids = std::move(level_ids);
        slot.assign(static_cast<std::size_t>(num_clusters), -1);
        for (std::size_t i = 0; i < ids.size(); ++i) slot[static_cast<std::size_t>(ids[i])] = static_cast<Index>(i);
        full.assign(ids.size(), 0);
        skeleton.assign(ids.size(), -1);
        basis.assign(ids.size(), Matrix());
        D = BlockStore(num_clusters);
        F = BlockStore(num_clusters);
    }
    bool skeletonized(Index local) const { return skeleton[static_cast<std::size_t>(local)] >= 0; }
    Index live(Index local) const
    {
        const auto i = static_cast<std::size_t>(local);
        return skeleton[i] >= 0 ? skeleton[i] : full[i];
    }
};

/// Elimination data of one cluster.
struct ClusterFactor {
    Index cluster = 0;
    int level = 0;
    Matrix Qt;      ///< [V~perp, V~], m x m
    Index r = 0;    ///< redundant size
    Eigen::PartialPivLU<Matrix> lu_RR;
    /// (neighbor, -D_RR^{-1} D_{tau_R, j}); columns span the neighbor's live indices at
    /// elimination time, which are always the trailing entries of its segment. The lower
    /// factor is the transpose by symmetry.
    std::vector<std::pair<Index, Matrix>> U_blocks;

    std::size_t memory_bytes() const
    {
        std::size_t total = bytes_of(Qt) + static_cast<std::size_t>(r * r) * sizeof(double);
        for (const auto& [j, u] : U_blocks) total += bytes_of(u);
        return total;
    }
};

struct ColorRecord {
    int level = 0;
    std::vector<ClusterFactor> factors;  ///< ascending cluster id
    /// Neighbor updates of the solve, (factor, block) pairs; no two entries of one batch
    /// touch the same segment.
    std::vector<std::vector<std::pair<Index, Index>>> solve_batches;
};

struct LevelRecord {
    int level = 0;
    std::vector<Index> ids;
    std::vector<Index> offsets;   ///< segment offsets by index_in_level, size ids+1
    std::vector<Index> skeleton;  ///< k~ per cluster
    Index num_colors = 0;
    Index csp = 0;
    Index max_rank = 0;       ///< largest k~
    Index max_added = 0;      ///< largest basis growth
    std::size_t fill_blocks = 0;
    double seconds = 0;

    Index redundant(Index local) const
    {
        const auto i = static_cast<std::size_t>(local);
        return offsets[i + 1] - offsets[i] - skeleton[i];
    }
};

struct PhaseTimes {
    double coloring = 0;
    double augmentation = 0;
    double projection = 0;
    double partial_lu = 0;
    double transition = 0;
    double top = 0;
    double setup = 0;
    double total = 0;
};

struct Factorization {
    Index n = 0;
    int depth = 0;
    int top_level = 0;
    std::shared_ptr<const ClusterTree> tree;
    std::vector<LevelRecord> levels;  ///< leaf level first
    std::vector<ColorRecord> colors;  ///< elimination order
    std::vector<Index> top_ids;
    std::vector<Index> top_offsets;
    Eigen::PartialPivLU<Matrix> top_lu;
    double eps_lu = 0;
    double norm_estimate = 0;
    double eps_fill = 0;
    PhaseTimes times;

    const LevelRecord& level_record(int l) const { return levels.at(static_cast<std::size_t>(depth - l)); }

    std::size_t memory_bytes() const
    {
        std::size_t total = static_cast<std::size_t>(top_lu.matrixLU().size()) * sizeof(double);
        for (const auto& c : colors)
            for (const auto& f : c.factors) total += f.memory_bytes();
        return total;
    }
};

inline Matrix orthogonal_complement(const Matrix& Vt);

/// Core of augment_basis. `visit(add)` calls add(block, transposed) once per fill block, with
/// rows of the block (or of its transpose) on the cluster; `width` is the total column count.
template <class Visit>
std::pair<Matrix, Index> augment_basis_visit(const Matrix& V, Index width, Visit&& visit, double eps_fill)
{
    const Index m = V.rows();
    const Index k = V.cols();
    if (width == 0 || k >= m) return {V, 0};

    // the fill outside span(V) lives in the complement P, so only P^T F is factored
    const Matrix P = k == 0 ? Matrix(Matrix::Identity(m, m)) : Matrix(orthogonal_complement(V).leftCols(m - k));
    Matrix Zt(width, m - k);
    Index off = 0;
    visit([&](const Matrix& b, bool transposed) {
        if (transposed) {
            if (b.cols() != m) throw std::invalid_argument("augment_basis: fill block row count mismatch");
            Zt.middleRows(off, b.rows()).noalias() = b * P;
            off += b.rows();
        } else {
            if (b.rows() != m) throw std::invalid_argument("augment_basis: fill block row count mismatch");
            Zt.middleRows(off, b.cols()).noalias() = b.transpose() * P;
            off += b.cols();
        }
    });

    const Matrix R = qr_r_factor(Zt);  // P^T F = R^T Q^T
    auto [u, sigma] = left_singular(R.transpose());
    Index added = 0;
    while (added < sigma.size() && sigma[added] >= eps_fill && sigma[added] > 0) ++added;
    if (added == 0) return {V, 0};

    Matrix bar = P * u.leftCols(added);
    if (k > 0) bar -= V * (V.transpose() * bar);
    bar = thin_qr(bar).first;
    Matrix out(m, k + added);
    out << V, bar;
    return {std::move(out), added};
}

/// Extends V (orthonormal) by the dominant left singular vectors of (I - V V^T) [F_row],
/// keeping singular values >= eps_fill. Returns [V, V_bar] and the number of added columns.
inline std::pair<Matrix, Index> augment_basis(const Matrix& V, const std::vector<Matrix>& F_row, double eps_fill)
{
    Index width = 0;
    for (const auto& f : F_row) {
        if (f.rows() != V.rows()) throw std::invalid_argument("augment_basis: fill block row count mismatch");
        width += f.cols();
    }
    return augment_basis_visit(
        V, width,
        [&](auto&& add) {
            for (const auto& f : F_row) add(f, false);
        },
        eps_fill);
}

/// Full orthogonal Q~ = [V~perp, V~] whose trailing columns are V~ itself.
inline Matrix orthogonal_complement(const Matrix& Vt)
{
    const Index m = Vt.rows();
    const Index k = Vt.cols();
    if (k > m) throw std::invalid_argument("orthogonal_complement: more columns than rows");
    Matrix Q(m, m);
    if (k == 0) {
        Q.setIdentity();
        return Q;
    }
    if (k < m) {
        Eigen::HouseholderQR<Matrix> qr(Vt);
        const Matrix full = qr.householderQ() * Matrix::Identity(m, m);
        Q.leftCols(m - k) = full.rightCols(m - k);
    }
    Q.rightCols(k) = Vt;
    return Q;
}

namespace detail {

/// Multiplies the tau side of a stored block by Qt^T (rows) or Qt (columns).
inline void project_side(Matrix& block, Index tau, const BlockStore::Key& key, const Matrix& Qt)
{
    if (key.first == tau) block = Qt.transpose() * block;
    if (key.second == tau) block = block * Qt;
}

/// Keeps the trailing `k` indices on the tau side of a stored block.
inline void restrict_side(Matrix& block, Index tau, const BlockStore::Key& key, Index k)
{
    if (key.first == tau) block = Matrix(block.bottomRows(k));
    if (key.second == tau) block = Matrix(block.rightCols(k));
}

}  // namespace detail

/// Applies Qt to every live block in row and column tau of D and F. F blocks are cut to the
/// skeleton rows of tau; D blocks keep all rows for the elimination. F blocks whose partner is in
/// `skip` are left alone.
inline void project_cluster(LevelState& s, Index tau, const Matrix& Qt, Index k_tilde,
                            const std::set<Index>& skip = {})
{
    for (Index j : std::vector<Index>(s.D.partners(tau).begin(), s.D.partners(tau).end())) {
        const auto key = BlockStore::key(tau, j);
        Matrix& b = *s.D.find(tau, j);
        detail::project_side(b, tau, key, Qt);
        if (j == tau) b = 0.5 * (b + b.transpose()).eval();
    }
    for (Index j : std::vector<Index>(s.F.partners(tau).begin(), s.F.partners(tau).end())) {
        if (skip.count(j)) continue;
        const auto key = BlockStore::key(tau, j);
        Matrix& b = *s.F.find(tau, j);
        detail::project_side(b, tau, key, Qt);
        detail::restrict_side(b, tau, key, k_tilde);
    }
}

namespace detail {

struct EliminationPanel {
    Index cluster = 0;
    Index r = 0;
    Index k_tilde = 0;
    std::vector<Index> neighbors;  ///< inadmissible row, ascending, self included
    std::vector<Index> x_offset;   ///< into the panel arena, per neighbor
    std::vector<Index> x_cols;
};

struct SchurUpdate {
    std::size_t panel = 0;
    std::size_t a = 0;  ///< neighbor positions; a indexes the row side of the target
    std::size_t b = 0;
    Matrix* target = nullptr;
};

}  // namespace detail

/// Factors the redundant block of tau and removes its redundant rows from D. X panels are
/// written into `arena`; the caller applies the Schur updates.
inline ClusterFactor partial_lu(LevelState& s, const detail::EliminationPanel& p, Matrix Qt, double* arena)
{
    const Index tau = p.cluster;
    ClusterFactor f;
    f.cluster = tau;
    f.level = s.level;
    f.Qt = std::move(Qt);
    f.r = p.r;
    const Index r = p.r;
    const Index k = p.k_tilde;
    if (r == 0) return f;

    Matrix& diag = *s.D.find(tau, tau);
    const Matrix Drr = diag.topLeftCorner(r, r);
    f.lu_RR.compute(Drr);
    const double scale = Drr.cwiseAbs().maxCoeff();
    const double pivot = f.lu_RR.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(pivot >= 1e-14 * scale) || !(scale > 0))
        throw FactorizationError("partial_lu: singular redundant block at cluster " + std::to_string(tau) +
                                     ", level " + std::to_string(s.level),
                                 tau, s.level);

    for (std::size_t i = 0; i < p.neighbors.size(); ++i) {
        const Index j = p.neighbors[i];
        Eigen::Map<Matrix> X(arena + p.x_offset[i], r, p.x_cols[i]);
        if (j == tau) {
            X = diag.block(0, r, r, k);
            diag = Matrix(diag.bottomRightCorner(k, k));
        } else {
            Matrix& b = *s.D.find(tau, j);
            const auto key = BlockStore::key(tau, j);
            if (key.first == tau) {
                X = b.topRows(r);
                b = Matrix(b.bottomRows(k));
            } else {
                X = b.leftCols(r).transpose();
                b = Matrix(b.rightCols(k));
            }
        }
        f.U_blocks.emplace_back(j, -f.lu_RR.solve(Matrix(X)));
    }
    return f;
}

namespace detail {

/// Sub-batch k holds the k-th update of every target in the given order.
template <class Key>
std::vector<std::vector<std::size_t>> sub_batches(const std::vector<Key>& targets)
{
    std::map<Key, std::size_t> seen;
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::size_t k = seen[targets[i]]++;
        if (k >= out.size()) out.resize(k + 1);
        out[k].push_back(i);
    }
    return out;
}

}  // namespace detail

/// Eliminates the redundant part of every (already projected) cluster of an independent set.
/// `neighbors(tau)` lists the inadmissible row of tau; `is_dense(a,b)` tells whether a Schur
/// target is stored in D (otherwise it goes to F).
template <class Neighbors, class IsDense>
ColorRecord eliminate_color(LevelState& s, const std::vector<Index>& color, std::vector<Matrix> qt,
                            const std::vector<Index>& k_tilde, Neighbors&& neighbors, IsDense&& is_dense,
                            const Execution& exec)
{
    const auto nc = color.size();
    ColorRecord rec;
    rec.level = s.level;
    std::vector<detail::EliminationPanel> panels(nc);
    Index arena_size = 0;
    for (std::size_t i = 0; i < nc; ++i) {
        const Index tau = color[i];
        const Index loc = s.local(tau);
        s.skeleton[static_cast<std::size_t>(loc)] = k_tilde[i];
        auto& p = panels[i];
        p.cluster = tau;
        p.k_tilde = k_tilde[i];
        p.r = s.full[static_cast<std::size_t>(loc)] - k_tilde[i];
        if (p.r == 0) continue;
        p.neighbors = neighbors(tau);
        for (Index j : p.neighbors) {
            p.x_offset.push_back(arena_size);
            p.x_cols.push_back(s.live(s.local(j)));
            arena_size += p.r * p.x_cols.back();
        }
    }
    std::vector<double> arena(static_cast<std::size_t>(arena_size));

    // targets of the Schur updates, created before any concurrent write
    std::vector<detail::SchurUpdate> updates;
    std::vector<BlockStore::Key> update_keys;
    for (std::size_t i = 0; i < nc; ++i) {
        const auto& p = panels[i];
        for (std::size_t a = 0; a < p.neighbors.size(); ++a)
            for (std::size_t b = a; b < p.neighbors.size(); ++b) {
                const Index ja = p.neighbors[a];
                const Index jb = p.neighbors[b];
                Matrix* target = nullptr;
                if (is_dense(ja, jb)) {
                    target = s.D.find(ja, jb);
                    if (!target) throw std::logic_error("eliminate_color: missing inadmissible block");
                } else {
                    target = &s.F.ensure(ja, jb, p.x_cols[a], p.x_cols[b]);
                }
                updates.push_back({i, a, b, target});
                update_keys.push_back(BlockStore::key(ja, jb));
            }
    }

    rec.factors.resize(nc);
    parallel_for(static_cast<Index>(nc), exec, [&](Index i) {
        const auto ii = static_cast<std::size_t>(i);
        rec.factors[ii] = partial_lu(s, panels[ii], std::move(qt[ii]), arena.data());
    });

    for (const auto& batch : detail::sub_batches(update_keys)) {
        parallel_for(static_cast<Index>(batch.size()), exec, [&](Index e) {
            const auto& u = updates[batch[static_cast<std::size_t>(e)]];
            const auto& p = panels[u.panel];
            const auto& f = rec.factors[u.panel];
            const Eigen::Map<const Matrix> Xa(arena.data() + p.x_offset[u.a], p.r, p.x_cols[u.a]);
            u.target->noalias() += Xa.transpose() * f.U_blocks[u.b].second;
        });
    }

    // solve-time neighbor updates, grouped by target segment
    std::vector<std::pair<Index, Index>> refs;
    std::vector<Index> seg_targets;
    for (std::size_t i = 0; i < nc; ++i)
        for (std::size_t b = 0; b < rec.factors[i].U_blocks.size(); ++b) {
            refs.emplace_back(static_cast<Index>(i), static_cast<Index>(b));
            seg_targets.push_back(rec.factors[i].U_blocks[b].first);
        }
    for (const auto& batch : detail::sub_batches(seg_targets)) {
        rec.solve_batches.emplace_back();
        for (std::size_t e : batch) rec.solve_batches.back().push_back(refs[e]);
    }
    return rec;
}

/// Skeletonizes one independent set of clusters: augment, complete, project, eliminate.
inline ColorRecord skeletonize_color(const H2Matrix& h, LevelState& s, const std::vector<Index>& color,
                                     double eps_fill, const Execution& exec, PhaseTimes* times = nullptr)
{
    const BlockPartition& part = h.partition();
    const auto nc = color.size();

    Stopwatch sw;
    std::vector<Matrix> qt(nc);
    std::vector<Index> k_tilde(nc);
    parallel_for(static_cast<Index>(nc), exec, [&](Index i) {
        const Index tau = color[static_cast<std::size_t>(i)];
        const Index loc = s.local(tau);
        const auto& partners = s.F.partners(tau);
        Index width = 0;
        for (Index j : partners) {
            const Matrix& b = *s.F.find(tau, j);
            width += j < tau ? b.rows() : b.cols();
        }
        Matrix vt = augment_basis_visit(
                        s.basis[static_cast<std::size_t>(loc)], width,
                        [&](auto&& add) {
                            for (Index j : partners) add(*s.F.find(tau, j), j < tau);
                        },
                        eps_fill)
                        .first;
        k_tilde[static_cast<std::size_t>(i)] = vt.cols();
        qt[static_cast<std::size_t>(i)] = orthogonal_complement(vt);
    });
    if (times) times->augmentation += sw.seconds();

    sw.reset();
    const std::set<Index> members(color.begin(), color.end());
    parallel_for(static_cast<Index>(nc), exec, [&](Index i) {
        const auto ii = static_cast<std::size_t>(i);
        project_cluster(s, color[ii], qt[ii], k_tilde[ii], members);
    });
    // fill shared by two members of the color is projected on both sides here
    std::vector<std::pair<std::size_t, std::size_t>> shared;
    for (std::size_t i = 0; i < nc; ++i)
        for (Index j : s.F.partners(color[i]))
            if (j > color[i] && members.count(j))
                shared.emplace_back(i, static_cast<std::size_t>(
                                           std::lower_bound(color.begin(), color.end(), j) - color.begin()));
    parallel_for(static_cast<Index>(shared.size()), exec, [&](Index e) {
        const auto [i, j] = shared[static_cast<std::size_t>(e)];
        Matrix& b = *s.F.find(color[i], color[j]);
        b = qt[i].transpose() * b * qt[j];
        b = Matrix(b.bottomRightCorner(k_tilde[i], k_tilde[j]));
    });
    if (times) times->projection += sw.seconds();

    sw.reset();
    ColorRecord rec = eliminate_color(
        s, color, std::move(qt), k_tilde, [&](Index tau) -> const std::vector<Index>& { return part.inadmissible_row(tau); },
        [&](Index a, Index b) { return part.is_inadmissible(a, b); }, exec);
    if (times) times->partial_lu += sw.seconds();
    return rec;
}

/// Level-l skeleton blocks of the admissible pair (a,b): padded coupling plus remaining fill.
inline Matrix skeleton_far_block(const H2Matrix& h, LevelState& s, Index a, Index b)
{
    const Index ka = s.skeleton[static_cast<std::size_t>(s.local(a))];
    const Index kb = s.skeleton[static_cast<std::size_t>(s.local(b))];
    Matrix out = s.F.contains(a, b) ? s.F.get(a, b) : Matrix::Zero(ka, kb);
    const Matrix S = h.coupling(a, b);
    out.topLeftCorner(S.rows(), S.cols()) += S;
    return out;
}

/// Moves the skeletonized level-l matrix to level l-1. The blocks of `s` are released on the way.
inline LevelState level_transition(const H2Matrix& h, LevelState&& s, const Execution& exec)
{
    const ClusterTree& tree = h.tree();
    const BlockPartition& part = h.partition();
    const int l = s.level;
    LevelState up;
    up.level = l - 1;
    up.set_ids(tree.level(l - 1), tree.num_clusters());
    const auto np = up.ids.size();

    auto skel = [&](Index c) { return s.skeleton[static_cast<std::size_t>(s.local(c))]; };
    for (std::size_t i = 0; i < np; ++i) {
        const Cluster& c = tree.cluster(up.ids[i]);
        up.full[i] = skel(c.children[0]) + skel(c.children[1]);
        if (h.has_basis(c.id)) {
            const Index k = h.rank(c.id);
            Matrix V = Matrix::Zero(up.full[i], k);
            Index off = 0;
            for (Index ch : c.children) {
                const Matrix& T = h.transfer(ch);
                V.block(off, 0, T.rows(), k) = T;
                off += skel(ch);
            }
            up.basis[i] = std::move(V);
        }
    }
    auto offset_in_parent = [&](Index c) -> Index {
        const Cluster& p = tree.cluster(tree.cluster(c).parent);
        return c == p.children[0] ? 0 : skel(p.children[0]);
    };

    // inadmissible parent pairs gather their four child blocks
    std::vector<BlockStore::Key> pairs;
    for (const auto& st : part.inadmissible(l - 1))
        if (st.first <= st.second) pairs.push_back(st);
    std::vector<Matrix> blocks(pairs.size());
    parallel_for(static_cast<Index>(pairs.size()), exec, [&](Index e) {
        const auto [sg, rh] = pairs[static_cast<std::size_t>(e)];
        const Cluster& cs = tree.cluster(sg);
        const Cluster& cr = tree.cluster(rh);
        Matrix B = Matrix::Zero(up.full[static_cast<std::size_t>(cs.index_in_level)],
                                up.full[static_cast<std::size_t>(cr.index_in_level)]);
        for (Index a : cs.children)
            for (Index b : cr.children) {
                Matrix sub = part.is_inadmissible(a, b) ? s.D.get(a, b) : skeleton_far_block(h, s, a, b);
                B.block(offset_in_parent(a), offset_in_parent(b), sub.rows(), sub.cols()) = sub;
            }
        if (sg == rh) B = 0.5 * (B + B.transpose()).eval();
        blocks[static_cast<std::size_t>(e)] = std::move(B);
    });
    for (std::size_t e = 0; e < pairs.size(); ++e) up.D.set(pairs[e].first, pairs[e].second, std::move(blocks[e]));
    blocks = {};
    s.D = BlockStore();

    // fill below a coarser admissible block moves to the parent pair
    auto fill = s.F.release();
    for (auto it = fill.begin(); it != fill.end(); it = fill.erase(it)) {
        const auto [a, b] = it->first;
        const Matrix& block = it->second;
        if (part.is_admissible(a, b)) continue;  // consumed above
        const Index pa = tree.cluster(a).parent;
        const Index pb = tree.cluster(b).parent;
        Matrix& target = up.F.ensure(pa, pb, up.full[static_cast<std::size_t>(up.local(std::min(pa, pb)))],
                                     up.full[static_cast<std::size_t>(up.local(std::max(pa, pb)))]);
        if (pa <= pb)
            target.block(offset_in_parent(a), offset_in_parent(b), block.rows(), block.cols()) += block;
        else
            target.block(offset_in_parent(b), offset_in_parent(a), block.cols(), block.rows()) += block.transpose();
    }
    return up;
}

/// Dense matrix of the remaining level: D + V S V^T + F over every cluster of the level.
inline Matrix assemble_top(const H2Matrix& h, const LevelState& s, std::vector<Index>& offsets)
{
    const BlockPartition& part = h.partition();
    offsets.assign(s.ids.size() + 1, 0);
    for (std::size_t i = 0; i < s.ids.size(); ++i) offsets[i + 1] = offsets[i] + s.full[i];
    Matrix M = Matrix::Zero(offsets.back(), offsets.back());
    auto place = [&](Index a, Index b, const Matrix& blk) {
        const auto ia = static_cast<std::size_t>(s.local(a));
        const auto ib = static_cast<std::size_t>(s.local(b));
        M.block(offsets[ia], offsets[ib], blk.rows(), blk.cols()) += blk;
        if (a != b) M.block(offsets[ib], offsets[ia], blk.cols(), blk.rows()) += blk.transpose();
    };
    for (const auto& [key, blk] : s.D.blocks()) place(key.first, key.second, blk);
    for (const auto& [key, blk] : s.F.blocks()) place(key.first, key.second, blk);
    if (!part.dense_only())
        for (const auto& st : part.admissible(s.level))
            if (st.first < st.second) {
                const auto ia = static_cast<std::size_t>(s.local(st.first));
                const auto ib = static_cast<std::size_t>(s.local(st.second));
                place(st.first, st.second, s.basis[ia] * h.coupling(st.first, st.second) * s.basis[ib].transpose());
            }
    return M;
}

/// Leaf-level working matrix taken from the dense leaves and leaf bases of `h`.
inline LevelState leaf_state(const H2Matrix& h)
{
    const ClusterTree& tree = h.tree();
    LevelState s;
    s.level = tree.depth();
    s.set_ids(tree.level(s.level), tree.num_clusters());
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
        s.full[i] = tree.cluster(s.ids[i]).size();
        if (h.has_basis(s.ids[i])) s.basis[i] = h.leaf_basis(s.ids[i]);
    }
    for (const auto& b : h.dense_blocks()) s.D.set(b.row, b.col, b.data);
    return s;
}

/// Strong recursive skeletonization of a compressed symmetric H^2 matrix.
inline Factorization factorize(const H2Matrix& h, double eps_lu, const Execution& exec = {})
{
    const ClusterTree& tree = h.tree();
    const BlockPartition& part = h.partition();
    if (!part.dense_only() && !h.orthogonal())
        throw std::invalid_argument("factorize: bases must be orthonormal (run orthogonalize_recompress)");
    if (!(eps_lu >= 0)) throw std::invalid_argument("factorize: eps_lu must be non-negative");

    Stopwatch total;
    Factorization z;
    z.n = h.size();
    z.depth = tree.depth();
    z.top_level = part.top_level();
    z.tree = h.tree_ptr();
    z.eps_lu = eps_lu;

    Stopwatch sw;
    z.norm_estimate = estimate_norm2(h, exec);
    z.eps_fill = eps_lu * z.norm_estimate;
    LevelState s = leaf_state(h);
    z.times.setup = sw.seconds();

    for (int l = z.depth; l > z.top_level; --l) {
        Stopwatch level_sw;
        sw.reset();
        const Coloring coloring = greedy_coloring(level_graph(part, tree, l));
        z.times.coloring += sw.seconds();

        LevelRecord rec;
        rec.level = l;
        rec.ids = s.ids;
        rec.offsets.assign(s.ids.size() + 1, 0);
        for (std::size_t i = 0; i < s.ids.size(); ++i) rec.offsets[i + 1] = rec.offsets[i] + s.full[i];
        rec.num_colors = coloring.num_colors();
        rec.csp = sparsity_constant(part, tree, l);

        for (const auto& color : coloring.colors)
            z.colors.push_back(skeletonize_color(h, s, color, z.eps_fill, exec, &z.times));

        rec.skeleton = s.skeleton;
        for (std::size_t i = 0; i < s.ids.size(); ++i) {
            rec.max_rank = std::max(rec.max_rank, s.skeleton[i]);
            const Index k = s.basis[i].cols();
            rec.max_added = std::max(rec.max_added, s.skeleton[i] - k);
        }
        rec.fill_blocks = s.F.size();

        sw.reset();
        s = level_transition(h, std::move(s), exec);
        z.times.transition += sw.seconds();
        rec.seconds = level_sw.seconds();
        z.levels.push_back(std::move(rec));
    }

    sw.reset();
    z.top_ids = s.ids;
    const Matrix top = assemble_top(h, s, z.top_offsets);
    z.top_lu.compute(top);
    if (top.size() > 0) {
        const double scale = top.cwiseAbs().maxCoeff();
        const double pivot = z.top_lu.matrixLU().diagonal().cwiseAbs().minCoeff();
        if (!(pivot >= 1e-14 * scale) || !(scale > 0))
            throw FactorizationError("factorize: singular top-level matrix", -1, z.top_level);
    }
    z.times.top = sw.seconds();
    z.times.total = total.seconds();
    return z;
}

}  // namespace h2skel
