#include "mistseg/treegraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mistseg/errors.hpp"
#include "mistseg/ops.hpp"

namespace mistseg {

std::size_t ScribbleMask::count(Label l) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

std::vector<Label> stack_labels(std::span<const ScribbleMask* const> masks) {
  std::vector<Label> out;
  for (const auto* m : masks) out.insert(out.end(), m->labels.begin(), m->labels.end());
  return out;
}

}  // namespace mistseg

namespace mistseg::tree {

namespace {

struct MapView {
  std::size_t c, h, w;
  std::span<const double> data;
};

MapView map_view(const Tensor& map, const char* op) {
  const auto& s = map.shape();
  if (s.size() == 4 && s[0] == 1) return {s[1], s[2], s[3], map.data()};
  if (s.size() == 3) return {s[0], s[1], s[2], map.data()};
  if (s.size() == 2) return {1, s[0], s[1], map.data()};
  throw ShapeError(std::string(op) + ": expected C x H x W map, got " + shape_str(s));
}

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

// Two-pass aggregation of sum_v prod_{e in path(u,v)} factor_e * values[v].
std::vector<double> aggregate(const SpanningTree& tree, std::span<const double> factor, std::span<const double> values) {
  std::vector<double> up(values.begin(), values.end());
  const auto& order = tree.bfs_order;
  for (std::size_t i = order.size(); i-- > 1;) {
    const std::size_t v = order[i];
    up[tree.parent[v]] += factor[v] * up[v];
  }
  std::vector<double> out(up.size());
  out[tree.root] = up[tree.root];
  for (std::size_t i = 1; i < order.size(); ++i) {
    const std::size_t v = order[i];
    const double f = factor[v];
    out[v] = f * out[tree.parent[v]] + (1.0 - f * f) * up[v];
  }
  return out;
}

std::vector<double> edge_factors(const SpanningTree& tree, double sigma) {
  std::vector<double> f(tree.size());
  for (std::size_t v = 0; v < tree.size(); ++v) f[v] = v == tree.root ? 0.0 : std::exp(-tree.parent_weight[v] / sigma);
  return f;
}

}  // namespace

double SpanningTree::total_weight() const {
  return std::accumulate(parent_weight.begin(), parent_weight.end(), 0.0);
}

std::vector<GridEdge> build_grid_edges(const Tensor& map) {
  const auto m = map_view(map, "build_grid_edges");
  if (m.c == 0 || m.h == 0 || m.w == 0) throw ShapeError("build_grid_edges: empty map " + shape_str(map.shape()));
  const std::size_t hw = m.h * m.w;
  std::vector<GridEdge> edges;
  edges.reserve(m.h * (m.w - 1) + m.w * (m.h - 1));
  auto dist = [&](std::size_t a, std::size_t b) {
    double d = 0.0;
    for (std::size_t c = 0; c < m.c; ++c) {
      const double diff = m.data[c * hw + a] - m.data[c * hw + b];
      d += diff * diff;
    }
    return d;
  };
  for (std::size_t y = 0; y < m.h; ++y) {
    for (std::size_t x = 0; x < m.w; ++x) {
      const std::size_t p = y * m.w + x;
      if (x + 1 < m.w) edges.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p + 1), dist(p, p + 1)});
      if (y + 1 < m.h) edges.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p + m.w), dist(p, p + m.w)});
    }
  }
  return edges;
}

SpanningTree mst(std::span<const GridEdge> edges, std::size_t n_pixels) {
  if (n_pixels == 0) throw std::invalid_argument("mst: no pixels");
  std::vector<std::uint32_t> idx(edges.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
    const auto& ea = edges[a];
    const auto& eb = edges[b];
    if (ea.weight != eb.weight) return ea.weight < eb.weight;
    if (ea.u != eb.u) return ea.u < eb.u;
    return ea.v < eb.v;
  });

  // Tree adjacency in CSR form.
  DisjointSet dsu(n_pixels);
  std::vector<std::uint32_t> chosen;
  chosen.reserve(n_pixels - 1);
  for (auto i : idx) {
    const auto& e = edges[i];
    if (e.u >= n_pixels || e.v >= n_pixels || e.u == e.v) throw std::invalid_argument("mst: invalid edge endpoint");
    if (dsu.unite(e.u, e.v)) {
      chosen.push_back(i);
      if (chosen.size() + 1 == n_pixels) break;
    }
  }
  if (chosen.size() + 1 != n_pixels) {
    throw std::invalid_argument("mst: graph is disconnected (" + std::to_string(chosen.size() + 1) + " of " +
                                std::to_string(n_pixels) + " pixels reachable at most)");
  }
  std::vector<std::size_t> offset(n_pixels + 1, 0);
  for (auto i : chosen) {
    ++offset[edges[i].u + 1];
    ++offset[edges[i].v + 1];
  }
  std::partial_sum(offset.begin(), offset.end(), offset.begin());
  std::vector<std::uint32_t> adj(offset.back());
  std::vector<std::size_t> fill(offset.begin(), offset.end() - 1);
  for (auto i : chosen) {
    adj[fill[edges[i].u]++] = i;
    adj[fill[edges[i].v]++] = i;
  }

  SpanningTree tree;
  tree.root = 0;
  tree.parent.assign(n_pixels, n_pixels);
  tree.parent_weight.assign(n_pixels, 0.0);
  tree.depth.assign(n_pixels, 0);
  tree.bfs_order.reserve(n_pixels);
  tree.parent[0] = 0;
  tree.bfs_order.push_back(0);
  for (std::size_t head = 0; head < tree.bfs_order.size(); ++head) {
    const std::size_t u = tree.bfs_order[head];
    for (std::size_t k = offset[u]; k < offset[u + 1]; ++k) {
      const auto& e = edges[adj[k]];
      const std::size_t v = e.u == u ? e.v : e.u;
      if (tree.parent[v] != n_pixels) continue;
      tree.parent[v] = u;
      tree.parent_weight[v] = e.weight;
      tree.depth[v] = tree.depth[u] + 1;
      tree.bfs_order.push_back(v);
    }
  }
  return tree;
}

SpanningTree grid_tree(const Tensor& map) {
  const auto m = map_view(map, "grid_tree");
  return mst(build_grid_edges(map), m.h * m.w);
}

double tree_distance(const SpanningTree& tree, std::size_t u, std::size_t v) {
  if (u >= tree.size() || v >= tree.size()) throw std::out_of_range("tree_distance: pixel index out of range");
  double d = 0.0;
  while (tree.depth[u] > tree.depth[v]) {
    d += tree.parent_weight[u];
    u = tree.parent[u];
  }
  while (tree.depth[v] > tree.depth[u]) {
    d += tree.parent_weight[v];
    v = tree.parent[v];
  }
  while (u != v) {
    d += tree.parent_weight[u] + tree.parent_weight[v];
    u = tree.parent[u];
    v = tree.parent[v];
  }
  return d;
}

Tensor tree_filter(const SpanningTree& tree, double sigma, const Tensor& s) {
  if (!(sigma > 0.0)) throw std::invalid_argument("tree_filter: sigma must be positive");
  if (s.numel() != tree.size()) {
    throw ShapeError("tree_filter: signal has " + std::to_string(s.numel()) + " elements, tree spans " +
                     std::to_string(tree.size()) + " pixels");
  }
  auto factor = edge_factors(tree, sigma);
  const std::vector<double> ones(tree.size(), 1.0);
  auto z = aggregate(tree, factor, ones);
  auto num = aggregate(tree, factor, s.data());
  for (std::size_t i = 0; i < num.size(); ++i) num[i] /= z[i];

  auto node = std::make_shared<detail::Node>();
  node->shape = s.shape();
  node->data = std::move(num);
  node->op = "tree_filter";
  if (grad_enabled() && s.requires_grad()) {
    node->requires_grad = true;
    node->inputs = {s.node()};
    // The affinity matrix is symmetric, so the adjoint is the same
    // aggregation applied to grad / z.
    node->backward = [tree_copy = tree, factor = std::move(factor), z = std::move(z)](detail::Node& self) {
      std::vector<double> scaled(self.grad.size());
      for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = self.grad[i] / z[i];
      auto g = aggregate(tree_copy, factor, scaled);
      auto& dst = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
  }
  return Tensor(std::move(node));
}

std::vector<double> tree_filter_dense(const SpanningTree& tree, double sigma, std::span<const double> s) {
  if (!(sigma > 0.0)) throw std::invalid_argument("tree_filter_dense: sigma must be positive");
  const std::size_t n = tree.size();
  if (s.size() != n) throw ShapeError("tree_filter_dense: signal and tree sizes differ");
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (tree.parent[v] == v) continue;
    adj[v].push_back(tree.parent[v]);
    adj[tree.parent[v]].push_back(v);
  }
  std::vector<double> out(n), dist(n);
  std::vector<std::size_t> from(n), stack;
  for (std::size_t u = 0; u < n; ++u) {
    double num = 0.0, den = 0.0;
    dist[u] = 0.0;
    from[u] = u;
    stack.assign(1, u);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const double a = std::exp(-dist[v] / sigma);
      num += a * s[v];
      den += a;
      for (std::size_t w : adj[v]) {
        if (w == from[v]) continue;
        from[w] = v;
        dist[w] = dist[v] + (tree.parent[w] == v ? tree.parent_weight[w] : tree.parent_weight[v]);
        stack.push_back(w);
      }
    }
    out[u] = num / den;
  }
  return out;
}

Tensor refine(const Tensor& s_init, const SpanningTree& image_tree, const SpanningTree& feature_tree, double sigma_low,
              double sigma_high) {
  if (image_tree.size() != feature_tree.size()) throw ShapeError("refine: image and feature trees differ in size");
  return tree_filter(feature_tree, sigma_high, tree_filter(image_tree, sigma_low, s_init));
}

Tensor refine(const Tensor& s_init, const Tensor& image, const Tensor& feature, double sigma_low, double sigma_high) {
  const auto img = map_view(image, "refine");
  if (s_init.numel() != img.h * img.w) {
    throw ShapeError("refine: prediction " + shape_str(s_init.shape()) + " does not match image " +
                     shape_str(image.shape()));
  }
  const auto feat = map_view(feature, "refine");
  Tensor resized;
  {
    NoGradGuard no_grad;
    Tensor f4 = reshape(feature.detach(), Shape{1, feat.c, feat.h, feat.w});
    resized = (feat.h == img.h && feat.w == img.w) ? f4 : resize_bilinear(f4, img.h, img.w);
  }
  const auto image_tree = grid_tree(image);
  const auto feature_tree = grid_tree(resized);
  return refine(s_init, image_tree, feature_tree, sigma_low, sigma_high);
}

Tensor tree_energy_loss(const Tensor& s_init, const Tensor& s_ref, std::span<const Label> labels) {
  if (s_init.numel() != s_ref.numel() || s_init.numel() != labels.size()) {
    throw ShapeError("tree_energy_loss: prediction " + shape_str(s_init.shape()) + ", target " +
                     shape_str(s_ref.shape()) + " and mask of " + std::to_string(labels.size()) + " pixels disagree");
  }
  std::size_t unlabeled = 0;
  for (auto l : labels) unlabeled += l == Label::Unlabeled;
  if (unlabeled == 0) return Tensor::scalar(0.0);
  const double w = 1.0 / static_cast<double>(unlabeled);
  std::vector<double> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) weights[i] = labels[i] == Label::Unlabeled ? w : 0.0;
  Tensor target = reshape(s_ref.detach(), s_init.shape());
  return sum(mul(abs(sub(s_init, target)), Tensor(s_init.shape(), std::move(weights))));
}

}  // namespace mistseg::tree
