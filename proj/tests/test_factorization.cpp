#include "chain_fixture.hpp"
#include "h2skel/oracle.hpp"

#include <gtest/gtest.h>

using namespace h2skel;

namespace {

Matrix random_matrix(Index m, Index n, std::uint64_t seed)
{
    const CounterRng rng(seed, 7);
    Matrix g(m, n);
    for (Index i = 0; i < m * n; ++i) g.data()[i] = rng.normal(static_cast<std::uint64_t>(i));
    return g;
}

Matrix random_orthonormal(Index m, Index k, std::uint64_t seed) { return thin_qr(random_matrix(m, k, seed)).first; }

}  // namespace

TEST(AugmentBasis, EmptyOrZeroFillAddsNothing)
{
    const Matrix V = random_orthonormal(16, 4, 1);
    auto [a, added] = augment_basis(V, {}, 1e-8);
    EXPECT_EQ(added, 0);
    EXPECT_EQ(a, V);
    auto [b, added2] = augment_basis(V, {Matrix::Zero(16, 5)}, 1e-8);
    EXPECT_EQ(added2, 0);
    EXPECT_EQ(b, V);
}

TEST(AugmentBasis, FullSpaceAddsNothing)
{
    const Matrix V = random_orthonormal(8, 8, 2);
    auto [a, added] = augment_basis(V, {random_matrix(8, 3, 3)}, 1e-8);
    EXPECT_EQ(added, 0);
    EXPECT_EQ(a.cols(), 8);
}

TEST(AugmentBasis, MatchesDirectSvd)
{
    const Index m = 32, k = 8;
    const Matrix V = random_orthonormal(m, k, 4);
    // fill of total width 40 with a decaying spectrum
    std::vector<Matrix> F;
    for (int b = 0; b < 4; ++b) {
        Matrix f = random_matrix(m, 10, 10 + b);
        for (Index i = 0; i < m; ++i) f.row(i) *= std::pow(10.0, -static_cast<double>(i) / 3.0);
        F.push_back(f);
    }
    const double eps = 1e-8;
    auto [Vt, added] = augment_basis(V, F, eps);

    Matrix Y(m, 40);
    for (int b = 0; b < 4; ++b) Y.middleCols(10 * b, 10) = F[static_cast<std::size_t>(b)];
    const Matrix P = Y - V * (V.transpose() * Y);
    const Eigen::JacobiSVD<Matrix> svd(P, Eigen::ComputeThinU);
    Index want = 0;
    while (want < svd.singularValues().size() && svd.singularValues()[want] >= eps) ++want;
    ASSERT_EQ(added, want);
    ASSERT_GT(added, 0);
    EXPECT_EQ(Vt.leftCols(k), V);
    EXPECT_LT((Vt.transpose() * Vt - Matrix::Identity(k + added, k + added)).norm(), 1e-12);
    // same subspace as the leading left singular vectors (sign and rotation free)
    const Matrix U = svd.matrixU().leftCols(added);
    const Matrix bar = Vt.rightCols(added);
    EXPECT_LT((U - bar * (bar.transpose() * U)).norm(), 1e-6);
    // discarded part bounded by the threshold
    const double resid = (Vt * (Vt.transpose() * Y) - Y).norm();
    EXPECT_LE(resid, eps * std::sqrt(static_cast<double>(40)));
}

TEST(AugmentBasis, RejectsMismatchedFill)
{
    EXPECT_THROW(augment_basis(random_orthonormal(8, 2, 5), {Matrix::Zero(7, 2)}, 1e-8), std::invalid_argument);
}

TEST(OrthogonalComplement, TwoByOne)
{
    Matrix v(2, 1);
    v << 1, 0;
    const Matrix q = orthogonal_complement(v);
    EXPECT_NEAR(std::abs(q(1, 0)), 1.0, 1e-15);
    EXPECT_NEAR(q(0, 0), 0.0, 1e-15);
    EXPECT_EQ(q.col(1), v.col(0));
}

TEST(OrthogonalComplement, FullRankAndEmpty)
{
    const Matrix v = random_orthonormal(5, 5, 6);
    EXPECT_EQ(orthogonal_complement(v), v);
    EXPECT_EQ(orthogonal_complement(Matrix(4, 0)), Matrix::Identity(4, 4));
    EXPECT_THROW(orthogonal_complement(Matrix(3, 4)), std::invalid_argument);
}

TEST(OrthogonalComplement, RandomIsOrthogonal)
{
    const Matrix v = random_orthonormal(16, 5, 7);
    const Matrix q = orthogonal_complement(v);
    EXPECT_LE((q.transpose() * q - Matrix::Identity(16, 16)).norm(), 1e-13);
    EXPECT_EQ(q.rightCols(5), v);
}

TEST(ProjectCluster, IdentityIsNoOp)
{
    chain::Chain c = chain::make_chain(1);
    const auto before = c.state.D.blocks();
    project_cluster(c.state, c.ids[1], Matrix::Identity(c.size(1), c.size(1)), c.size(1));
    EXPECT_EQ(c.state.D.blocks(), before);
}

TEST(ProjectCluster, PreservesNormsAndCutsFillInRange)
{
    chain::Chain c = chain::make_chain(2);
    const Index tau = c.ids[1];
    const Index m = c.size(1), k = 12;
    const Matrix Vt = random_orthonormal(m, k, 8);
    const Matrix M = random_matrix(k, c.size(3), 9);
    c.state.F.set(tau, c.ids[3], Vt * M);
    const Matrix Q = orthogonal_complement(Vt);
    std::map<BlockStore::Key, double> norms;
    for (const auto& [key, b] : c.state.D.blocks()) norms[key] = b.norm();

    // full projection of the fill block before the cut, for the top-row check
    const Matrix projected = Q.transpose() * (Vt * M);
    EXPECT_LE(projected.topRows(m - k).norm(), 1e-12 * M.norm());

    project_cluster(c.state, tau, Q, k);
    for (const auto& [key, b] : c.state.D.blocks()) EXPECT_NEAR(b.norm(), norms[key], 1e-12 * norms[key]);
    const Matrix f = c.state.F.get(tau, c.ids[3]);
    ASSERT_EQ(f.rows(), k);
    EXPECT_LT((f - M).norm(), 1e-12 * M.norm());
}

TEST(PartialLu, ChainMatchesDenseSchurComplement)
{
    for (std::uint64_t seed : {3u, 4u, 5u}) {
        chain::Chain c = chain::make_chain(seed);
        const ColorRecord rec = chain::eliminate(c);
        const chain::Reference ref = chain::reference(c);
        const Matrix got = chain::assemble_remaining(c, ref.offset);
        EXPECT_LE((got - ref.schur).norm(), 1e-12 * ref.schur.norm()) << "seed " << seed;
        ASSERT_EQ(rec.factors.size(), 2u);
        EXPECT_EQ(rec.factors[0].r, c.size(1) - c.k_tilde[0]);
        // fill between the two neighbours of cluster 1 is not a chain block
        EXPECT_TRUE(c.state.F.contains(c.ids[0], c.ids[2]));
        EXPECT_FALSE(c.state.D.contains(c.ids[0], c.ids[2]));
    }
}

TEST(PartialLu, IsolatedClusterIsDenseLu)
{
    LevelState s;
    s.level = 0;
    s.set_ids({0}, 1);
    s.full = {6};
    const Matrix a = random_matrix(6, 6, 11) + 6 * Matrix::Identity(6, 6);
    s.D.set(0, 0, a);
    const ColorRecord rec = eliminate_color(
        s, {0}, {Matrix::Identity(6, 6)}, {0}, [](Index) { return std::vector<Index>{0}; },
        [](Index, Index) { return true; }, {});
    ASSERT_EQ(rec.factors.size(), 1u);
    const auto& f = rec.factors[0];
    EXPECT_EQ(f.r, 6);
    EXPECT_LT((f.lu_RR.reconstructedMatrix() - a).norm(), 1e-13 * a.norm());
    EXPECT_EQ(s.F.size(), 0u);
    EXPECT_EQ(s.D.get(0, 0).size(), 0);
}

TEST(PartialLu, SingularBlockNamesClusterAndLevel)
{
    LevelState s;
    s.level = 3;
    s.set_ids({0, 1}, 2);
    s.full = {4, 4};
    s.D.set(0, 0, Matrix::Identity(4, 4));
    s.D.set(1, 1, Matrix::Zero(4, 4));
    try {
        eliminate_color(
            s, {1}, {Matrix::Identity(4, 4)}, {1}, [](Index) { return std::vector<Index>{1}; },
            [](Index, Index) { return true; }, {});
        FAIL() << "expected FactorizationError";
    } catch (const FactorizationError& e) {
        EXPECT_EQ(e.cluster(), 1);
        EXPECT_EQ(e.level(), 3);
    }
}

TEST(EliminateColor, ConcurrentMatchesSequentialBitwise)
{
    chain::Chain a = chain::make_chain(6);
    chain::Chain b = chain::make_chain(6);
    const ColorRecord ra = chain::eliminate(a, {1, true});
    const ColorRecord rb = chain::eliminate(b, {4, true});
    EXPECT_EQ(a.state.D.blocks(), b.state.D.blocks());
    EXPECT_EQ(a.state.F.blocks(), b.state.F.blocks());
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < ra.factors[i].U_blocks.size(); ++j)
            EXPECT_EQ(ra.factors[i].U_blocks[j].second, rb.factors[i].U_blocks[j].second);
}

TEST(EliminateColor, SingleClusterMatchesTwoSequentialColors)
{
    // eliminating 1 and 3 together equals eliminating them one after the other
    chain::Chain a = chain::make_chain(7);
    chain::eliminate(a);
    chain::Chain b = chain::make_chain(7);
    for (std::size_t i = 0; i < 2; ++i) {
        const Index tau = b.ids[i == 0 ? 1 : 3];
        project_cluster(b.state, tau, b.qt[i], b.k_tilde[i]);
        eliminate_color(
            b.state, {tau}, {b.qt[i]}, {b.k_tilde[i]}, [&](Index t) { return chain::neighbors(b, t); },
            [&](Index x, Index y) { return chain::is_dense(b, x, y); }, {});
    }
    for (const auto& [key, blk] : a.state.D.blocks()) EXPECT_LT((blk - b.state.D.get(key.first, key.second)).norm(), 1e-12);
}

namespace {

struct Problem {
    PointSet points;
    KernelSpec spec;
    std::shared_ptr<const ClusterTree> tree;
    H2Matrix h;
};

Problem make_problem(KernelFamily fam, Index n, int d, double eta, int p0, double alpha, double length)
{
    PointSet pts = generate_uniform_grid(n, d);
    auto tree = std::make_shared<const ClusterTree>(build_cluster_tree(pts, 64));
    auto part = std::make_shared<const BlockPartition>(dual_tree_traversal(*tree, eta));
    KernelSpec spec = make_kernel(fam, pts, alpha, length, 3.0);
    H2Matrix h = build_compressed_h2(tree, part, spec, p0, 1e-7);
    return {std::move(pts), spec, tree, std::move(h)};
}

}  // namespace

TEST(Factorize, SingleBlockIsDenseLu)
{
    Problem p = make_problem(KernelFamily::exp_covariance, 36, 2, 0.9, 8, 1e-2, 0.1);
    const Factorization z = factorize(p.h, 1e-6);
    EXPECT_TRUE(z.colors.empty());
    const Vector b = CounterRng(1).normal_vector(36);
    const Matrix a = p.h.dense_block(0, 0);
    EXPECT_LT((solve(z, b) - a.partialPivLu().solve(b)).norm(), 1e-13 * b.norm());
}

TEST(Factorize, IdentityHasZeroElementaryBlocks)
{
    Problem p = make_problem(KernelFamily::exp_covariance, 4096, 2, 0.9, 8, 1e-2, 0.1);
    for (auto& blk : p.h.mutable_dense_blocks())
        blk.data = blk.row == blk.col ? Matrix(Matrix::Identity(blk.data.rows(), blk.data.cols()))
                                      : Matrix(Matrix::Zero(blk.data.rows(), blk.data.cols()));
    for (auto& blk : p.h.mutable_couplings()) blk.data.setZero();
    const Factorization z = factorize(p.h, 1e-6);
    for (const auto& color : z.colors)
        for (const auto& f : color.factors)
            for (const auto& [j, u] : f.U_blocks) EXPECT_LT(u.norm(), 1e-13);
    const Vector b = CounterRng(2).normal_vector(4096);
    EXPECT_LT((solve(z, b) - b).norm(), 1e-14 * b.norm());
}

TEST(Factorize, Cov2dBackwardErrorAgainstDenseMatrix)
{
    Problem p = make_problem(KernelFamily::exp_covariance, 1024, 2, 0.9, 8, 1e-2, 0.1);
    const Factorization z = factorize(p.h, 1e-6);
    EXPECT_LT(z.top_level, z.depth);
    EXPECT_FALSE(z.colors.empty());
    const auto a = oracle::assemble_dense(p.spec, p.points, p.tree->perm());
    const Vector x = CounterRng(3).normal_vector(1024);
    const auto bd = a.apply(std::vector<double>(x.data(), x.data() + 1024));
    const Vector b = Eigen::Map<const Vector>(bd.data(), 1024);
    const Vector xs = solve(z, b);
    const auto r = a.apply(std::vector<double>(xs.data(), xs.data() + 1024));
    const Vector rv = Eigen::Map<const Vector>(r.data(), 1024) - b;
    EXPECT_LE(rv.norm() / b.norm(), 1e-5);
}

TEST(Factorize, FillOnlyOnAdmissiblePairs)
{
    Problem p = make_problem(KernelFamily::exp_covariance, 4096, 2, 0.9, 8, 1e-2, 0.1);
    const BlockPartition& part = p.h.partition();
    LevelState s = leaf_state(p.h);
    const ClusterTree& tree = p.h.tree();
    const int l = tree.depth();
    const double eps_fill = 1e-6 * estimate_norm2(p.h);
    for (const auto& color : greedy_coloring(level_graph(part, tree, l)).colors)
        skeletonize_color(p.h, s, color, eps_fill, {}, nullptr);
    // fill sits on an admissible pair or below one
    auto covered = [&](Index a, Index b) {
        for (; a >= 0 && b >= 0; a = tree.cluster(a).parent, b = tree.cluster(b).parent)
            if (part.is_admissible(a, b)) return true;
        return false;
    };
    for (const auto& [key, blk] : s.F.blocks()) EXPECT_TRUE(covered(key.first, key.second));
    for (const auto& [key, blk] : s.D.blocks()) EXPECT_TRUE(part.is_inadmissible(key.first, key.second));
}

TEST(Factorize, RequiresOrthogonalBases)
{
    PointSet pts = generate_uniform_grid(4096, 2);
    auto tree = std::make_shared<const ClusterTree>(build_cluster_tree(pts, 64));
    auto part = std::make_shared<const BlockPartition>(dual_tree_traversal(*tree, 0.9));
    const H2Matrix raw = build_h2(tree, part, make_kernel(KernelFamily::exp_covariance, pts, 1e-2), 8);
    EXPECT_THROW(factorize(raw, 1e-6), std::invalid_argument);
}

TEST(Factorize, ThreadCountDoesNotChangeFactors)
{
    Problem p = make_problem(KernelFamily::exp_covariance, 4096, 2, 0.9, 8, 1e-2, 0.1);
    const Factorization a = factorize(p.h, 1e-6, {1, true});
    const Factorization b = factorize(p.h, 1e-6, {4, true});
    ASSERT_EQ(a.colors.size(), b.colors.size());
    const Vector rhs = CounterRng(4).normal_vector(4096);
    EXPECT_EQ(solve(a, rhs, {1, true}), solve(b, rhs, {4, true}));
    EXPECT_EQ(a.memory_bytes(), b.memory_bytes());
}
