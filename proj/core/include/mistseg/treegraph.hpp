#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mistseg/scribble.hpp"
#include "mistseg/tensor.hpp"

namespace mistseg::tree {

inline constexpr double kLowLevelSigma = 0.02;
inline constexpr double kHighLevelSigma = 1.0;

/// 4-connected neighbour pair with squared Euclidean distance over channels.
struct GridEdge {
  std::uint32_t u = 0;
  std::uint32_t v = 0;
  double weight = 0.0;
};

/// Minimum spanning tree over the pixel grid, rooted and in BFS order.
struct SpanningTree {
  std::size_t root = 0;
  std::vector<std::size_t> parent;       // parent[root] == root
  std::vector<double> parent_weight;     // weight of the edge to parent (0 at root)
  std::vector<std::size_t> bfs_order;    // root first
  std::vector<std::size_t> depth;        // hop count from root

  std::size_t size() const { return parent.size(); }
  double total_weight() const;
};

struct FilterLevel {
  enum class Kind { Low, High };
  Kind kind = Kind::Low;
  double sigma = kLowLevelSigma;

  static FilterLevel low(double sigma = kLowLevelSigma) { return {Kind::Low, sigma}; }
  static FilterLevel high(double sigma = kHighLevelSigma) { return {Kind::High, sigma}; }
};

/// Edges of a C x H x W map (a leading batch axis of 1 is accepted).
std::vector<GridEdge> build_grid_edges(const Tensor& map);

/// Kruskal over `edges`, ties broken by (weight, u, v). Throws if the graph
/// does not connect all `n_pixels`.
SpanningTree mst(std::span<const GridEdge> edges, std::size_t n_pixels);

/// Convenience: MST of the 4-connected graph of `map`.
SpanningTree grid_tree(const Tensor& map);

/// Sum of edge weights on the unique u-v path.
double tree_distance(const SpanningTree& tree, std::size_t u, std::size_t v);

/// out(u) = sum_v exp(-D(u,v)/sigma) s(v) / sum_v exp(-D(u,v)/sigma), computed in
/// linear time with one leaf-to-root and one root-to-leaf pass. `s` may have
/// any shape whose element count equals the tree size; the output keeps it.
/// Differentiable with respect to `s`.
Tensor tree_filter(const SpanningTree& tree, double sigma, const Tensor& s);

/// Same filter by explicit O(N^2) summation over every pixel pair. Reference
/// only; no gradient.
std::vector<double> tree_filter_dense(const SpanningTree& tree, double sigma, std::span<const double> s);

/// Cascaded refinement: the image-level filter first, then the feature-level
/// filter. `s_init` is 1 x H x W (or 1 x 1 x H x W), `image` C x H x W,
/// `feature` C' x h x w, bilinearly resized to H x W before graph construction.
Tensor refine(const Tensor& s_init, const Tensor& image, const Tensor& feature,
              double sigma_low = kLowLevelSigma, double sigma_high = kHighLevelSigma);

/// Same cascade over prebuilt trees.
Tensor refine(const Tensor& s_init, const SpanningTree& image_tree, const SpanningTree& feature_tree,
              double sigma_low = kLowLevelSigma, double sigma_high = kHighLevelSigma);

/// Mean |s_init - s_ref| over unlabeled pixels; `s_ref` is treated as a
/// constant target. Zero when every pixel is labeled.
Tensor tree_energy_loss(const Tensor& s_init, const Tensor& s_ref, std::span<const Label> labels);

}  // namespace mistseg::tree
