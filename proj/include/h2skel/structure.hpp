#pragma once

#include "h2skel/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

namespace h2skel {

/// How Dist(s,t) in the admissibility test is measured.
enum class Separation {
    centers,  ///< distance between box centres (reproduces the published sparsity constants)
    boxes,    ///< gap between the boxes as point sets
};

inline bool admissible(double diam_s, double diam_t, double dist, double eta) noexcept
{
    return 0.5 * (diam_s + diam_t) <= eta * dist;
}

inline bool admissible(const BoundingBox& s, const BoundingBox& t, double eta,
                       Separation sep = Separation::centers) noexcept
{
    const double dist = sep == Separation::centers ? center_distance(s, t) : distance(s, t);
    return admissible(diameter(s), diameter(t), dist, eta);
}

using ClusterPair = std::pair<Index, Index>;

/// Leaves of the matrix tree, grouped by level. Every list holds both orientations of each
/// pair and is sorted. Inadmissible pairs at the leaf level are the dense leaves; above it
/// they are inner nodes of the matrix tree.
class BlockPartition {
public:
    double eta() const noexcept { return eta_; }
    Separation separation() const noexcept { return separation_; }
    int depth() const noexcept { return depth_; }
    int num_levels() const noexcept { return depth_ + 1; }
    /// Shallowest level holding an admissible block; equals depth() when dense_only().
    int top_level() const noexcept { return top_level_; }
    bool dense_only() const noexcept { return dense_only_; }

    const std::vector<ClusterPair>& admissible(int l) const { return admissible_.at(static_cast<std::size_t>(l)); }
    const std::vector<ClusterPair>& inadmissible(int l) const { return inadmissible_.at(static_cast<std::size_t>(l)); }

    /// Column cluster ids of the inadmissible blocks in the block row of `cluster` (sorted, self included).
    const std::vector<Index>& inadmissible_row(Index cluster) const
    {
        return inadmissible_rows_[static_cast<std::size_t>(cluster)];
    }
    const std::vector<Index>& admissible_row(Index cluster) const
    {
        return admissible_rows_[static_cast<std::size_t>(cluster)];
    }

    bool is_inadmissible(Index s, Index t) const
    {
        const auto& row = inadmissible_row(s);
        return std::binary_search(row.begin(), row.end(), t);
    }
    bool is_admissible(Index s, Index t) const
    {
        const auto& row = admissible_row(s);
        return std::binary_search(row.begin(), row.end(), t);
    }

private:
    friend BlockPartition dual_tree_traversal(const ClusterTree& tree, double eta, Separation sep);

    double eta_ = 0;
    Separation separation_ = Separation::centers;
    int depth_ = 0;
    int top_level_ = 0;
    bool dense_only_ = true;
    std::vector<std::vector<ClusterPair>> admissible_;
    std::vector<std::vector<ClusterPair>> inadmissible_;
    std::vector<std::vector<Index>> admissible_rows_;
    std::vector<std::vector<Index>> inadmissible_rows_;
};

inline BlockPartition dual_tree_traversal(const ClusterTree& tree, double eta,
                                          Separation sep = Separation::centers)
{
    BlockPartition p;
    p.eta_ = eta;
    p.separation_ = sep;
    p.depth_ = tree.depth();
    const auto levels = static_cast<std::size_t>(tree.num_levels());
    p.admissible_.resize(levels);
    p.inadmissible_.resize(levels);
    p.admissible_rows_.resize(static_cast<std::size_t>(tree.num_clusters()));
    p.inadmissible_rows_.resize(static_cast<std::size_t>(tree.num_clusters()));

    std::vector<ClusterPair> stack{{tree.root().id, tree.root().id}};
    while (!stack.empty()) {
        const auto [s, t] = stack.back();
        stack.pop_back();
        const Cluster& cs = tree.cluster(s);
        const Cluster& ct = tree.cluster(t);
        const auto l = static_cast<std::size_t>(cs.level);
        if (admissible(cs.box, ct.box, eta, sep)) {
            p.admissible_[l].emplace_back(s, t);
            continue;
        }
        p.inadmissible_[l].emplace_back(s, t);
        if (cs.is_leaf() || ct.is_leaf()) continue;
        for (Index a : cs.children)
            for (Index b : ct.children) stack.emplace_back(a, b);
    }

    p.top_level_ = p.depth_;
    p.dense_only_ = true;
    for (int l = 0; l <= p.depth_; ++l) {
        auto& adm = p.admissible_[static_cast<std::size_t>(l)];
        auto& inad = p.inadmissible_[static_cast<std::size_t>(l)];
        std::sort(adm.begin(), adm.end());
        std::sort(inad.begin(), inad.end());
        for (const auto& [s, t] : adm) p.admissible_rows_[static_cast<std::size_t>(s)].push_back(t);
        for (const auto& [s, t] : inad) p.inadmissible_rows_[static_cast<std::size_t>(s)].push_back(t);
        if (!adm.empty() && p.dense_only_) {
            p.top_level_ = l;
            p.dense_only_ = false;
        }
    }
    return p;
}

/// Largest number of inadmissible blocks in any block row at `level`.
inline Index sparsity_constant(const BlockPartition& partition, const ClusterTree& tree, int level)
{
    if (level < 0 || level >= partition.num_levels())
        throw std::out_of_range("sparsity_constant: level out of range");
    Index best = 0;
    for (Index id : tree.level(level))
        best = std::max(best, static_cast<Index>(partition.inadmissible_row(id).size()));
    return best;
}

inline Index max_sparsity_constant(const BlockPartition& partition, const ClusterTree& tree)
{
    Index best = 0;
    for (int l = 0; l < partition.num_levels(); ++l) best = std::max(best, sparsity_constant(partition, tree, l));
    return best;
}

/// Connectivity of the inadmissible block-sparse matrix at one level.
struct LevelGraph {
    int level = 0;
    std::vector<Index> nodes;                    ///< cluster ids, ascending
    std::vector<std::vector<Index>> adjacency;   ///< per node: sorted local indices, self included

    Index max_degree() const
    {
        Index best = 0;
        for (std::size_t i = 0; i < adjacency.size(); ++i) {
            Index deg = 0;
            for (Index j : adjacency[i]) deg += (j != static_cast<Index>(i));
            best = std::max(best, deg);
        }
        return best;
    }
};

inline LevelGraph level_graph(const BlockPartition& partition, const ClusterTree& tree, int level)
{
    LevelGraph g;
    g.level = level;
    g.nodes = tree.level(level);
    g.adjacency.resize(g.nodes.size());
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        for (Index t : partition.inadmissible_row(g.nodes[i]))
            g.adjacency[i].push_back(tree.cluster(t).index_in_level);
        std::sort(g.adjacency[i].begin(), g.adjacency[i].end());
    }
    return g;
}

struct Coloring {
    int level = 0;
    std::vector<std::vector<Index>> colors;  ///< cluster ids per colour, ascending

    Index num_colors() const noexcept { return static_cast<Index>(colors.size()); }
};

/// Greedy colouring in ascending node order; each node takes the smallest colour unused by its neighbours.
inline Coloring greedy_coloring(const LevelGraph& graph)
{
    const auto n = graph.nodes.size();
    std::vector<Index> color(n, -1);
    std::vector<char> used;
    Index num_colors = 0;
    for (std::size_t i = 0; i < n; ++i) {
        used.assign(static_cast<std::size_t>(num_colors + 1), 0);
        for (Index j : graph.adjacency[i])
            if (j != static_cast<Index>(i) && color[static_cast<std::size_t>(j)] >= 0)
                used[static_cast<std::size_t>(color[static_cast<std::size_t>(j)])] = 1;
        Index c = 0;
        while (used[static_cast<std::size_t>(c)]) ++c;
        color[i] = c;
        num_colors = std::max(num_colors, c + 1);
    }
    Coloring out;
    out.level = graph.level;
    out.colors.resize(static_cast<std::size_t>(num_colors));
    for (std::size_t i = 0; i < n; ++i) out.colors[static_cast<std::size_t>(color[i])].push_back(graph.nodes[i]);
    return out;
}

}  // namespace h2skel
