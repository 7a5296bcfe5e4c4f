#pragma once

#include "h2skel/common.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace h2skel {

inline constexpr int max_dim = 3;

/// Points in the unit box [0,1]^d, stored row-major (n x d).
class PointSet {
public:
    PointSet() = default;

    PointSet(int dim, std::vector<double> coords, double spacing = std::numeric_limits<double>::quiet_NaN())
        : dim_(dim), coords_(std::move(coords)), spacing_(spacing)
    {
        if (dim_ != 2 && dim_ != 3) throw std::invalid_argument("PointSet: dimension must be 2 or 3");
        if (coords_.empty() || coords_.size() % static_cast<std::size_t>(dim_) != 0)
            throw std::invalid_argument("PointSet: coordinate count must be a positive multiple of the dimension");
        for (double c : coords_)
            if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("PointSet: coordinates must lie in [0,1]");
    }

    Index size() const noexcept { return static_cast<Index>(coords_.size()) / dim_; }
    int dim() const noexcept { return dim_; }
    std::span<const double> point(Index i) const noexcept
    {
        return {coords_.data() + i * dim_, static_cast<std::size_t>(dim_)};
    }
    double coord(Index i, int axis) const noexcept { return coords_[static_cast<std::size_t>(i * dim_ + axis)]; }
    const std::vector<double>& coords() const noexcept { return coords_; }

    /// Smallest grid spacing for generated grids; NaN for arbitrary point sets.
    double spacing() const noexcept { return spacing_; }
    const std::array<Index, max_dim>& grid_counts() const noexcept { return grid_; }

private:
    friend PointSet generate_uniform_grid(Index n, int d);

    int dim_ = 2;
    std::vector<double> coords_;
    double spacing_ = std::numeric_limits<double>::quiet_NaN();
    std::array<Index, max_dim> grid_{0, 0, 0};
};

/// Per-axis counts for an n-point grid: the most isotropic descending factorization whose
/// largest and smallest counts differ by at most a factor of two.
inline std::array<Index, max_dim> grid_axis_counts(Index n, int d)
{
    if (n <= 0) throw std::invalid_argument("generate_uniform_grid: n must be positive");
    if (d != 2 && d != 3) throw std::invalid_argument("generate_uniform_grid: d must be 2 or 3");

    std::array<Index, max_dim> best{0, 0, 0};
    double best_ratio = std::numeric_limits<double>::infinity();
    auto consider = [&](std::array<Index, max_dim> c) {
        const Index hi = c[0];
        const Index lo = c[static_cast<std::size_t>(d - 1)];
        if (hi > 2 * lo) return;
        const double ratio = static_cast<double>(hi) / static_cast<double>(lo);
        if (ratio < best_ratio) {
            best_ratio = ratio;
            best = c;
        }
    };
    for (Index a = 1; a <= n; ++a) {
        if (n % a) continue;
        const Index rest = n / a;
        if (d == 2) {
            if (rest <= a) consider({a, rest, 1});
            continue;
        }
        for (Index b = 1; b <= a; ++b) {
            if (rest % b) continue;
            const Index c = rest / b;
            if (c <= b) consider({a, b, c});
        }
    }
    if (best[0] == 0)
        throw std::invalid_argument("generate_uniform_grid: n has no axis factorization within a 2x aspect ratio");
    return best;
}

/// Cell-centred grid in [0,1]^d, lexicographic with axis 0 slowest; largest counts on the first axes.
inline PointSet generate_uniform_grid(Index n, int d)
{
    const auto counts = grid_axis_counts(n, d);
    d = std::min(d, max_dim);
    std::vector<double> coords(static_cast<std::size_t>(n * d));
    std::array<Index, max_dim> idx{0, 0, 0};
    for (Index p = 0; p < n; ++p) {
        Index rem = p;
        for (int a = d - 1; a >= 0; --a) {
            idx[static_cast<std::size_t>(a)] = rem % counts[static_cast<std::size_t>(a)];
            rem /= counts[static_cast<std::size_t>(a)];
        }
        for (int a = 0; a < d; ++a)
            coords[static_cast<std::size_t>(p * d + a)] =
                (static_cast<double>(idx[static_cast<std::size_t>(a)]) + 0.5) /
                static_cast<double>(counts[static_cast<std::size_t>(a)]);
    }
    PointSet ps(d, std::move(coords), 1.0 / static_cast<double>(counts[0]));
    ps.grid_ = counts;
    return ps;
}

struct BoundingBox {
    int dim = 2;
    std::array<double, max_dim> lo{0, 0, 0};
    std::array<double, max_dim> hi{0, 0, 0};

    static BoundingBox unit(int d)
    {
        BoundingBox b;
        b.dim = d;
        for (int a = 0; a < d; ++a) b.hi[static_cast<std::size_t>(a)] = 1.0;
        return b;
    }

    double width(int axis) const noexcept { return hi[static_cast<std::size_t>(axis)] - lo[static_cast<std::size_t>(axis)]; }
    double center(int axis) const noexcept
    {
        return 0.5 * (hi[static_cast<std::size_t>(axis)] + lo[static_cast<std::size_t>(axis)]);
    }
    int widest_axis() const noexcept
    {
        int best = 0;
        for (int a = 1; a < dim; ++a)
            if (width(a) > width(best)) best = a;
        return best;
    }
    bool contains(std::span<const double> x, double tol = 0.0) const noexcept
    {
        for (int a = 0; a < dim; ++a) {
            const auto s = static_cast<std::size_t>(a);
            if (x[s] < lo[s] - tol || x[s] > hi[s] + tol) return false;
        }
        return true;
    }
};

inline double diameter(const BoundingBox& box) noexcept
{
    double s = 0;
    for (int a = 0; a < box.dim; ++a) s += box.width(a) * box.width(a);
    return std::sqrt(s);
}

/// Euclidean distance between the boxes as point sets; 0 when they overlap or touch.
inline double distance(const BoundingBox& a, const BoundingBox& b) noexcept
{
    double s = 0;
    for (int ax = 0; ax < a.dim; ++ax) {
        const auto i = static_cast<std::size_t>(ax);
        const double gap = std::max({0.0, a.lo[i] - b.hi[i], b.lo[i] - a.hi[i]});
        s += gap * gap;
    }
    return std::sqrt(s);
}

inline double center_distance(const BoundingBox& a, const BoundingBox& b) noexcept
{
    double s = 0;
    for (int ax = 0; ax < a.dim; ++ax) {
        const double g = a.center(ax) - b.center(ax);
        s += g * g;
    }
    return std::sqrt(s);
}

struct Cluster {
    Index id = 0;
    int level = 0;
    Index index_in_level = 0;
    Index begin = 0;
    Index end = 0;
    BoundingBox box;
    Index parent = -1;
    std::array<Index, 2> children{-1, -1};

    Index size() const noexcept { return end - begin; }
    bool is_leaf() const noexcept { return children[0] < 0; }
};

/// Binary KD partition with uniform depth. Cluster ids are pre-order; within a level, ids and
/// index ranges both increase left to right. `perm()[i]` is the original index of tree position i.
class ClusterTree {
public:
    Index size() const noexcept { return static_cast<Index>(perm_.size()); }
    int dim() const noexcept { return dim_; }
    int depth() const noexcept { return depth_; }
    Index leaf_size() const noexcept { return leaf_size_; }
    Index num_clusters() const noexcept { return static_cast<Index>(clusters_.size()); }
    const Cluster& cluster(Index id) const { return clusters_[static_cast<std::size_t>(id)]; }
    const Cluster& root() const { return clusters_.front(); }
    const std::vector<Index>& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
    int num_levels() const noexcept { return depth_ + 1; }
    const std::vector<Index>& perm() const noexcept { return perm_; }
    const std::vector<Index>& inverse_perm() const noexcept { return inverse_perm_; }

    /// Point coordinates in tree order.
    std::span<const double> point(Index tree_index) const noexcept
    {
        return {points_.data() + tree_index * dim_, static_cast<std::size_t>(dim_)};
    }

    template <class Dense>
    Dense to_tree_order(const Dense& v) const
    {
        Dense out(v.rows(), v.cols());
        for (Index i = 0; i < size(); ++i) out.row(i) = v.row(perm_[static_cast<std::size_t>(i)]);
        return out;
    }
    template <class Dense>
    Dense to_original_order(const Dense& v) const
    {
        Dense out(v.rows(), v.cols());
        for (Index i = 0; i < size(); ++i) out.row(perm_[static_cast<std::size_t>(i)]) = v.row(i);
        return out;
    }

private:
    friend ClusterTree build_cluster_tree(const PointSet& points, Index leaf_size);

    Index build(const PointSet& points, Index begin, Index end, const BoundingBox& box, int level, Index parent)
    {
        const Index id = static_cast<Index>(clusters_.size());
        clusters_.push_back({});
        {
            Cluster& c = clusters_.back();
            c.id = id;
            c.level = level;
            c.begin = begin;
            c.end = end;
            c.box = box;
            c.parent = parent;
            c.index_in_level = static_cast<Index>(levels_[static_cast<std::size_t>(level)].size());
        }
        levels_[static_cast<std::size_t>(level)].push_back(id);
        if (level == depth_) return id;

        const int axis = box.widest_axis();
        auto first = perm_.begin() + begin;
        auto last = perm_.begin() + end;
        std::sort(first, last, [&](Index a, Index b) {
            const double ca = points.coord(a, axis);
            const double cb = points.coord(b, axis);
            return ca < cb || (ca == cb && a < b);
        });
        const Index mid = begin + (end - begin) / 2;
        const double plane = 0.5 * (points.coord(perm_[static_cast<std::size_t>(mid - 1)], axis) +
                                    points.coord(perm_[static_cast<std::size_t>(mid)], axis));
        BoundingBox left = box;
        BoundingBox right = box;
        left.hi[static_cast<std::size_t>(axis)] = plane;
        right.lo[static_cast<std::size_t>(axis)] = plane;

        const Index l = build(points, begin, mid, left, level + 1, id);
        const Index r = build(points, mid, end, right, level + 1, id);
        clusters_[static_cast<std::size_t>(id)].children = {l, r};
        return id;
    }

    int dim_ = 2;
    int depth_ = 0;
    Index leaf_size_ = 1;
    std::vector<Cluster> clusters_;
    std::vector<std::vector<Index>> levels_;
    std::vector<Index> perm_;
    std::vector<Index> inverse_perm_;
    std::vector<double> points_;
};

/// Uniform-depth depth: smallest L with ceil(n / 2^L) <= leaf_size.
inline int uniform_tree_depth(Index n, Index leaf_size)
{
    int depth = 0;
    Index largest = n;
    while (largest > leaf_size) {
        largest = (largest + 1) / 2;
        ++depth;
    }
    return depth;
}

/// Recursive median split along the widest axis of the cell box. Every leaf sits at the same
/// depth; children boxes are the parent box cut at the plane between the two median points.
inline ClusterTree build_cluster_tree(const PointSet& points, Index leaf_size)
{
    if (leaf_size < 1) throw std::invalid_argument("build_cluster_tree: leaf size must be >= 1");
    const Index n = points.size();
    if (n < 1) throw std::invalid_argument("build_cluster_tree: empty point set");

    ClusterTree tree;
    tree.dim_ = points.dim();
    tree.leaf_size_ = leaf_size;
    tree.depth_ = uniform_tree_depth(n, leaf_size);
    if ((n >> tree.depth_) < 1)
        throw std::invalid_argument("build_cluster_tree: uniform depth would produce empty leaves (leaf size 1 needs n = 2^k)");
    tree.levels_.resize(static_cast<std::size_t>(tree.depth_ + 1));
    tree.perm_.resize(static_cast<std::size_t>(n));
    std::iota(tree.perm_.begin(), tree.perm_.end(), Index{0});
    tree.clusters_.reserve(static_cast<std::size_t>((Index{2} << tree.depth_) - 1));
    tree.build(points, 0, n, BoundingBox::unit(points.dim()), 0, -1);

    tree.inverse_perm_.resize(static_cast<std::size_t>(n));
    tree.points_.resize(static_cast<std::size_t>(n * points.dim()));
    for (Index i = 0; i < n; ++i) {
        const Index orig = tree.perm_[static_cast<std::size_t>(i)];
        tree.inverse_perm_[static_cast<std::size_t>(orig)] = i;
        for (int a = 0; a < points.dim(); ++a)
            tree.points_[static_cast<std::size_t>(i * points.dim() + a)] = points.coord(orig, a);
    }
    return tree;
}

}  // namespace h2skel
