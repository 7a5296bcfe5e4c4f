#include "h2skel/h2matrix.hpp"
#include "h2skel/oracle.hpp"

#include <gtest/gtest.h>

using namespace h2skel;

namespace {

struct Fixture {
    PointSet points;
    std::shared_ptr<const ClusterTree> tree;
    std::shared_ptr<const BlockPartition> part;
    KernelSpec spec;
};

Fixture make_setup(KernelFamily fam, Index n, int d, Index m, double eta, double alpha, double length = 0.1)
{
    Fixture s;
    s.points = generate_uniform_grid(n, d);
    s.tree = std::make_shared<const ClusterTree>(build_cluster_tree(s.points, m));
    s.part = std::make_shared<const BlockPartition>(dual_tree_traversal(*s.tree, eta));
    s.spec = make_kernel(fam, s.points, alpha, length, 3.0);
    return s;
}

Fixture cov2d(Index n) { return make_setup(KernelFamily::exp_covariance, n, 2, 64, 0.9, 1e-2); }

Matrix dense_tree_order(const Fixture& s)
{
    const auto a = oracle::assemble_dense(s.spec, s.points, s.tree->perm());
    Matrix out(a.rows(), a.cols());
    for (Index j = 0; j < a.cols(); ++j)
        for (Index i = 0; i < a.rows(); ++i) out(i, j) = a(i, j);
    return out;
}

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

H2Matrix dense_only_with(const Matrix& block)
{
    const Index n = block.rows();
    std::vector<double> coords;
    for (Index i = 0; i < n; ++i) {
        coords.push_back((i + 0.5) / static_cast<double>(n));
        coords.push_back(0.5);
    }
    const PointSet p(2, coords);
    auto tree = std::make_shared<const ClusterTree>(build_cluster_tree(p, n));
    auto part = std::make_shared<const BlockPartition>(dual_tree_traversal(*tree, 0.9));
    H2Matrix h(tree, part);
    h.mutable_dense_blocks().push_back({0, 0, block});
    return h;
}

}  // namespace

TEST(ChebyshevOrder, GrowsEveryTwoLevels)
{
    EXPECT_EQ(chebyshev_order(8, 8, 4), 4);
    EXPECT_EQ(chebyshev_order(7, 8, 4), 4);
    EXPECT_EQ(chebyshev_order(6, 8, 4), 5);
    EXPECT_EQ(chebyshev_order(2, 8, 4), 7);
}

TEST(BuildH2, SingleClusterIsExactDenseBlock)
{
    const Fixture s = cov2d(36);
    const H2Matrix h = build_h2(s.tree, s.part, s.spec, 8);
    ASSERT_TRUE(s.part->dense_only());
    ASSERT_EQ(h.dense_blocks().size(), 1u);
    EXPECT_EQ(h.dense_block(0, 0), dense_tree_order(s));
    EXPECT_TRUE(h.couplings().empty());
}

TEST(BuildH2, UnitVectorGivesColumnAndZeroGivesZero)
{
    const Fixture s = cov2d(64);
    const H2Matrix h = build_h2(s.tree, s.part, s.spec, 8);
    const Matrix a = dense_tree_order(s);
    for (Index j : {0, 17, 63}) {
        Vector e = Vector::Zero(64);
        e[j] = 1;
        EXPECT_EQ(h.matvec(e), Vector(a.col(j)));
    }
    EXPECT_EQ(h.matvec(Vector(Vector::Zero(64))).norm(), 0.0);
}

TEST(BuildH2, RanksAreTensorGridSizes)
{
    const Fixture s = cov2d(4096);
    const H2Matrix h = build_h2(s.tree, s.part, s.spec, 8);
    const int d = s.tree->depth();
    for (int l = s.part->top_level(); l <= d; ++l)
        for (Index c : s.tree->level(l)) {
            const Index p = chebyshev_order(l, d, 8);
            EXPECT_EQ(h.rank(c), p * p);
        }
    EXPECT_FALSE(h.orthogonal());
}

TEST(BuildH2, MatvecIsSymmetric)
{
    const Fixture s = cov2d(1024);
    const H2Matrix h = build_h2(s.tree, s.part, s.spec, 8);
    const Vector x = CounterRng(1).normal_vector(1024);
    const Vector y = CounterRng(2).normal_vector(1024);
    EXPECT_NEAR(y.dot(h.matvec(x)), x.dot(h.matvec(y)), 1e-12 * x.norm() * y.norm());
}

TEST(Recompress, ZeroToleranceKeepsOperator)
{
    const Fixture s = cov2d(1024);
    H2Matrix h = build_h2(s.tree, s.part, s.spec, 6);
    const Vector x = CounterRng(3).normal_vector(1024);
    const Vector y0 = h.matvec(x);
    const auto ranks0 = h.ranks();
    orthogonalize_recompress(h, 0.0);
    EXPECT_LT(rel(h.matvec(x), y0), 1e-12);
    for (std::size_t c = 0; c < ranks0.size(); ++c) EXPECT_LE(h.ranks()[c], ranks0[c]);
    EXPECT_TRUE(h.orthogonal());
}

TEST(Recompress, BasesAreOrthonormalAndRanksBounded)
{
    const Fixture s = make_setup(KernelFamily::exp_covariance, 4096, 3, 64, 0.7, 1e-2, 0.2);
    H2Matrix h = build_h2(s.tree, s.part, s.spec, 4);
    const auto ranks0 = h.ranks();
    orthogonalize_recompress(h, 1e-7);
    const ClusterTree& t = *s.tree;
    for (int l = s.part->top_level(); l <= t.depth(); ++l)
        for (Index c : t.level(l)) {
            EXPECT_LE(h.rank(c), ranks0[static_cast<std::size_t>(c)]);
            EXPECT_LE(h.rank(c), t.cluster(c).size());
            if (t.cluster(c).is_leaf()) {
                const Matrix& v = h.leaf_basis(c);
                EXPECT_LT((v.transpose() * v - Matrix::Identity(v.cols(), v.cols())).norm(), 1e-12);
            } else {
                // stacked child transfers are orthonormal as well
                const Cluster& cl = t.cluster(c);
                const Matrix& t0 = h.transfer(cl.children[0]);
                const Matrix& t1 = h.transfer(cl.children[1]);
                const Matrix g = t0.transpose() * t0 + t1.transpose() * t1;
                EXPECT_LT((g - Matrix::Identity(g.rows(), g.cols())).norm(), 1e-12);
            }
        }
}

TEST(Recompress, FusedBuildMatchesTwoStep)
{
    const Fixture s = cov2d(4096);
    H2Matrix a = build_h2(s.tree, s.part, s.spec, 8);
    orthogonalize_recompress(a, 1e-7);
    const H2Matrix b = build_compressed_h2(s.tree, s.part, s.spec, 8, 1e-7);
    EXPECT_EQ(a.ranks(), b.ranks());
    const Vector x = CounterRng(4).normal_vector(4096);
    EXPECT_LT(rel(b.matvec(x), a.matvec(x)), 1e-12);
}

TEST(Matvec, CompressionErrorWithinTenEps)
{
    const double eps = 1e-7;
    struct Case {
        KernelFamily fam;
        int d;
        double eta, alpha, length;
        int p0;
        double construction_tol;  // interpolation error of the uncompressed operator
    };
    const Case cases[] = {
        {KernelFamily::exp_covariance, 2, 0.9, 1e-2, 0.1, 8, 2e-6},
        {KernelFamily::laplace2d, 2, 0.9, 1e-5, 0.1, 8, 1e-6},
        {KernelFamily::exp_covariance, 3, 0.7, 1e-2, 0.2, 4, 1e-6},
        {KernelFamily::helmholtz3d, 3, 0.7, 1e-2, 0.2, 4, 1e-6},
    };
    for (const auto& c : cases) {
        const Fixture s = make_setup(c.fam, 1024, c.d, 64, c.eta, c.alpha, c.length);
        const Matrix a = dense_tree_order(s);
        H2Matrix raw = build_h2(s.tree, s.part, s.spec, c.p0);
        const H2Matrix h = build_compressed_h2(s.tree, s.part, s.spec, c.p0, eps);
        const Vector x = CounterRng(5).normal_vector(1024);
        const Vector exact = a * x;
        EXPECT_LT(rel(h.matvec(x), raw.matvec(x)), 10 * eps) << to_string(c.fam);
        EXPECT_LT(rel(h.matvec(x), exact), c.construction_tol) << to_string(c.fam);
    }
}

TEST(Matvec, ThreadCountDoesNotChangeResult)
{
    const Fixture s = cov2d(4096);
    const H2Matrix h1 = build_compressed_h2(s.tree, s.part, s.spec, 8, 1e-7, {1, true});
    const H2Matrix h4 = build_compressed_h2(s.tree, s.part, s.spec, 8, 1e-7, {4, true});
    const Matrix x = Matrix::Random(4096, 2);
    EXPECT_EQ(h1.matvec(x, {1, true}), h4.matvec(x, {4, true}));
}

TEST(NormEstimate, IdentityAndDiagonal)
{
    const H2Matrix id = dense_only_with(Matrix::Identity(10, 10));
    EXPECT_NEAR(estimate_norm2(id), 1.0, 1e-6);
    Vector d(10);
    for (Index i = 0; i < 10; ++i) d[i] = static_cast<double>(i + 1);
    const H2Matrix dg = dense_only_with(d.asDiagonal().toDenseMatrix());
    EXPECT_NEAR(estimate_norm2(dg), 10.0, 0.05);
}

TEST(NormEstimate, CovarianceWithinTwoPercent)
{
    const Fixture s = cov2d(1024);
    const H2Matrix h = build_compressed_h2(s.tree, s.part, s.spec, 8, 1e-7);
    const double ref = oracle::dense_norm2(oracle::assemble_dense(s.spec, s.points, s.tree->perm()));
    EXPECT_NEAR(estimate_norm2(h), ref, 0.02 * ref);
}

TEST(LowRankUpdate, ZeroRankLeavesMatrixUnchanged)
{
    const Fixture s = cov2d(1024);
    H2Matrix h = build_compressed_h2(s.tree, s.part, s.spec, 8, 1e-7);
    const Vector x = CounterRng(6).normal_vector(1024);
    const Vector y0 = h.matvec(x);
    absorb_low_rank(h, Matrix(1024, 0), 1e-7);
    EXPECT_EQ(h.matvec(x), y0);
    EXPECT_THROW(absorb_low_rank(h, Matrix(10, 2), 1e-7), std::invalid_argument);
}

TEST(LowRankUpdate, MatchesDenseUpdatedMatrix)
{
    const double eps = 1e-8;
    Fixture s = make_setup(KernelFamily::exp_covariance, 4096, 3, 128, 0.9, 1e-2, 0.2);
    H2Matrix h = build_compressed_h2(s.tree, s.part, s.spec, 4, eps);
    const Matrix w = make_low_rank_factor(4096, 32, 42);
    const Vector x = CounterRng(7).normal_vector(4096);
    const Vector before = h.matvec(x);
    absorb_low_rank(h, w, eps);
    const Matrix wt = s.tree->to_tree_order(w);
    const Vector expect = before + wt * (wt.transpose() * x);
    EXPECT_LT(rel(h.matvec(x), expect), 10 * eps);
    EXPECT_TRUE(h.orthogonal());
}

TEST(LowRankUpdate, DenseOracleAtDeskScale)
{
    const double eps = 1e-8;
    Fixture s = make_setup(KernelFamily::exp_covariance, 1024, 3, 128, 0.9, 1e-2, 0.2);
    H2Matrix h = build_compressed_h2(s.tree, s.part, s.spec, 4, eps);
    auto w = std::make_shared<const Matrix>(make_low_rank_factor(1024, 32, 42));
    absorb_low_rank(h, *w, eps);
    s.spec.low_rank = w;
    const Vector x = CounterRng(8).normal_vector(1024);
    EXPECT_LT(rel(h.matvec(x), dense_tree_order(s) * x), 10 * eps);
}
