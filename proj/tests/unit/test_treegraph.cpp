#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "mistseg/errors.hpp"
#include "mistseg/ops.hpp"
#include "mistseg/random.hpp"
#include "mistseg/treegraph.hpp"
#include "oracles.hpp"

using namespace mistseg;
using namespace mistseg::tree;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Builds a chain 0 - 1 - 2 - ... with the given edge weights, rooted at 0.
SpanningTree chain(const std::vector<double>& w) {
  std::vector<GridEdge> edges;
  for (std::size_t i = 0; i < w.size(); ++i)
    edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1), w[i]});
  return mst(edges, w.size() + 1);
}

}  // namespace

TEST(GridEdges, ConstantMapHasZeroWeights) {
  const auto edges = build_grid_edges(Tensor({2, 3, 4}, 0.7));
  EXPECT_EQ(edges.size(), 3u * 3 + 4u * 2);
  for (const auto& e : edges) EXPECT_EQ(e.weight, 0.0);
}

TEST(GridEdges, SingleEdge) {
  const auto edges = build_grid_edges(Tensor({1, 1, 1, 2}, std::vector<double>{0, 1}));
  ASSERT_EQ(edges.size(), 1u);
  EXPECT_EQ(edges[0].weight, 1.0);
}

TEST(GridEdges, MatchLoopOracle) {
  Rng rng(1);
  Tensor m = rng.uniform_tensor({3, 4, 4}, 0.0, 1.0);
  const auto got = build_grid_edges(m);
  const auto expect = oracle::grid_edges(vec(m), 3, 4, 4);
  ASSERT_EQ(got.size(), expect.size());
  // Compare as sets keyed by endpoints: ordering is an implementation detail.
  std::map<std::pair<std::size_t, std::size_t>, double> ref;
  for (const auto& e : expect) ref[{e.u, e.v}] = e.w;
  for (const auto& e : got) {
    auto key = std::make_pair<std::size_t, std::size_t>(std::min(e.u, e.v), std::max(e.u, e.v));
    ASSERT_TRUE(ref.count(key));
    EXPECT_NEAR(e.weight, ref[key], 1e-12);
  }
}

TEST(GridEdges, EmptyMapIsAnError) { EXPECT_THROW(build_grid_edges(Tensor(Shape{1, 0, 3})), ShapeError); }

TEST(Mst, TwoByTwo) {
  const auto t = grid_tree(Tensor({1, 2, 2}, std::vector<double>{0, 1, 0, 1}));
  EXPECT_EQ(t.total_weight(), 1.0);
  EXPECT_EQ(t.root, 0u);
}

TEST(Mst, ConstantImage) { EXPECT_EQ(grid_tree(Tensor({3, 5, 5}, 0.3)).total_weight(), 0.0); }

TEST(Mst, StructureInvariants) {
  Rng rng(2);
  const auto t = grid_tree(rng.uniform_tensor({3, 8, 8}, 0.0, 1.0));
  ASSERT_EQ(t.size(), 64u);
  EXPECT_EQ(t.parent[t.root], t.root);
  std::size_t edges = 0;
  for (std::size_t v = 0; v < 64; ++v) {
    if (v != t.root) ++edges;
    std::size_t u = v, hops = 0;
    while (u != t.root && hops <= 64) u = t.parent[u], ++hops;
    EXPECT_EQ(u, t.root) << "pixel " << v << " does not reach the root";
  }
  EXPECT_EQ(edges, 63u);
  std::vector<bool> seen(64, false);
  for (std::size_t i = 0; i < 64; ++i) {
    const auto v = t.bfs_order[i];
    if (v != t.root) EXPECT_TRUE(seen[t.parent[v]]) << "parent after child in bfs order";
    seen[v] = true;
  }
}

TEST(Mst, MatchesPrimOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor img = rng.uniform_tensor({1, 8, 8}, 0.0, 1.0);
    EXPECT_NEAR(grid_tree(img).total_weight(), oracle::mst_weight(oracle::grid_edges(vec(img), 1, 8, 8), 64), 1e-12);
  }
}

TEST(Mst, TiesAreDeterministic) {
  Tensor img({1, 6, 6}, 0.0);
  const auto a = grid_tree(img), b = grid_tree(img);
  EXPECT_EQ(a.parent, b.parent);
}

TEST(Mst, DisconnectedInputIsAnError) {
  std::vector<GridEdge> edges = {{0, 1, 1.0}, {2, 3, 1.0}};
  EXPECT_THROW(mst(edges, 4), std::invalid_argument);
}

TEST(TreeDistance, Basics) {
  const auto t = chain({1.0, 2.0});
  EXPECT_EQ(tree_distance(t, 1, 1), 0.0);
  EXPECT_EQ(tree_distance(t, 0, 2), 3.0);
  EXPECT_EQ(tree_distance(t, 2, 0), 3.0);
}

TEST(TreeDistance, MatchesDijkstra) {
  Rng rng(4);
  const auto t = grid_tree(rng.uniform_tensor({3, 6, 7}, 0.0, 1.0));
  for (std::size_t src : {0u, 5u, 41u}) {
    const auto d = oracle::tree_distances(t, src);
    for (std::size_t v = 0; v < t.size(); ++v) EXPECT_NEAR(tree_distance(t, src, v), d[v], 1e-12);
  }
}

TEST(TreeFilter, ConstantSignal) {
  Rng rng(5);
  const auto t = grid_tree(rng.uniform_tensor({3, 8, 8}, 0.0, 1.0));
  for (const auto out = tree_filter(t, 0.02, Tensor({1, 8, 8}, 0.37)); double v : out.data()) EXPECT_NEAR(v, 0.37, 1e-14);
}

TEST(TreeFilter, ZeroWeightsGiveMean) {
  Rng rng(6);
  const auto t = grid_tree(Tensor({1, 5, 5}, 0.0));
  Tensor s = rng.uniform_tensor({1, 5, 5}, 0.0, 1.0);
  double m = 0.0;
  for (double v : s.data()) m += v / 25.0;
  for (const auto out = tree_filter(t, 0.02, s); double v : out.data()) EXPECT_NEAR(v, m, 1e-14);
}

TEST(TreeFilter, MatchesBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = grid_tree(rng.uniform_tensor({3, 16, 16}, 0.0, 1.0));
    Tensor s = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
    const double sigma = rng.uniform(0.05, 2.0);
    const auto fast = vec(tree_filter(t, sigma, s));
    const auto slow = oracle::tree_filter(t, sigma, vec(s));
    for (std::size_t i = 0; i < fast.size(); ++i) EXPECT_NEAR(fast[i], slow[i], 1e-10);
  }
}

TEST(TreeFilter, ConvexCombination) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = grid_tree(rng.uniform_tensor({3, 8, 8}, 0.0, 1.0));
    Tensor s = rng.normal_tensor({1, 8, 8});
    const auto in = vec(s);
    const double lo = *std::min_element(in.begin(), in.end()), hi = *std::max_element(in.begin(), in.end());
    for (const auto out = tree_filter(t, rng.uniform(0.01, 5.0), s); double v : out.data()) {
      EXPECT_GE(v, lo - 1e-12);
      EXPECT_LE(v, hi + 1e-12);
    }
  }
}

TEST(TreeFilter, SigmaLimits) {
  Rng rng(9);
  Tensor img = rng.uniform_tensor({1, 6, 6}, 0.0, 1.0);
  const auto t = grid_tree(img);
  Tensor s = rng.uniform_tensor({1, 6, 6}, 0.0, 1.0);
  const auto in = vec(s);
  const auto sharp = vec(tree_filter(t, 1e-9, s));
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_NEAR(sharp[i], in[i], 1e-6);
  double m = 0.0;
  for (double v : in) m += v / 36.0;
  for (const auto out = tree_filter(t, 1e9, s); double v : out.data()) EXPECT_NEAR(v, m, 1e-6);
}

TEST(TreeFilter, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  const auto t = grid_tree(rng.uniform_tensor({3, 5, 5}, 0.0, 1.0));
  for (int trial = 0; trial < 20; ++trial) {
    Tensor w = rng.normal_tensor({1, 5, 5});
    Tensor s = rng.uniform_tensor({1, 5, 5}, 0.0, 1.0);
    EXPECT_LT(oracle::grad_check([&](auto& v) { return sum(tree_filter(t, 0.3, v[0]) * v[1]); }, {s, w}), 1e-4);
  }
}

TEST(TreeFilter, RejectsBadSigma) {
  const auto t = grid_tree(Tensor({1, 2, 2}, 0.0));
  EXPECT_THROW(tree_filter(t, 0.0, Tensor({1, 2, 2}, 0.0)), std::invalid_argument);
  EXPECT_THROW(tree_filter(t, -1.0, Tensor({1, 2, 2}, 0.0)), std::invalid_argument);
  EXPECT_THROW(tree_filter(t, 1.0, Tensor({1, 3, 2}, 0.0)), ShapeError);
}

TEST(Refine, ConstantPredictionIsFixed) {
  Rng rng(11);
  Tensor s({1, 8, 8}, 0.6);
  for (const auto out = refine(s, rng.uniform_tensor({3, 8, 8}, 0, 1), rng.normal_tensor({4, 4, 4})); double v : out.data())
    EXPECT_NEAR(v, 0.6, 1e-14);
}

TEST(Refine, ZeroWeightsGiveMean) {
  Rng rng(12);
  Tensor s = rng.uniform_tensor({1, 8, 8}, 0.0, 1.0);
  double m = 0.0;
  for (double v : s.data()) m += v / 64.0;
  for (const auto out = refine(s, Tensor({3, 8, 8}, 0.2), Tensor({5, 2, 2}, -1.0)); double v : out.data()) EXPECT_NEAR(v, m, 1e-13);
}

TEST(Refine, EqualsComposedOracleFilters) {
  Rng rng(13);
  Tensor img = rng.uniform_tensor({3, 8, 8}, 0.0, 1.0);
  Tensor feat = rng.normal_tensor({4, 4, 4});
  Tensor s = rng.uniform_tensor({1, 8, 8}, 0.0, 1.0);
  const auto img_tree = grid_tree(img);
  const auto big = resize_bilinear(reshape(feat, Shape{1, 4, 4, 4}), 8, 8);
  const auto feat_tree = grid_tree(big);
  const auto expect = oracle::tree_filter(feat_tree, 1.0, oracle::tree_filter(img_tree, 0.02, vec(s)));
  const auto got = vec(refine(s, img, feat));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10);
  for (double v : got) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Refine, ShapeMismatch) {
  EXPECT_THROW(refine(Tensor({1, 4, 4}, 0.5), Tensor({3, 8, 8}, 0.0), Tensor({2, 2, 2}, 0.0)), ShapeError);
}

TEST(TreeEnergy, Examples) {
  std::vector<Label> none(4, Label::Unlabeled);
  Tensor a({1, 2, 2}, 0.3);
  EXPECT_EQ(tree_energy_loss(a, a, none).item(), 0.0);
  EXPECT_EQ(tree_energy_loss(Tensor({1, 2, 2}, 1.0), Tensor({1, 2, 2}, 0.0), none).item(), 1.0);
  std::vector<Label> half = {Label::Foreground, Label::Unlabeled, Label::Background, Label::Unlabeled};
  Tensor init({1, 2, 2}, std::vector<double>{0.0, 0.9, 1.0, 0.2});
  Tensor ref({1, 2, 2}, std::vector<double>{1.0, 0.4, 0.0, 0.7});
  EXPECT_DOUBLE_EQ(tree_energy_loss(init, ref, half).item(), 0.5);
  std::vector<Label> all(4, Label::Foreground);
  EXPECT_EQ(tree_energy_loss(init, ref, all).item(), 0.0);
}

TEST(TreeEnergy, NoGradientThroughTarget) {
  Tensor init = Tensor({1, 2, 2}, std::vector<double>{0.1, 0.9, 0.4, 0.2}).set_requires_grad(true);
  Tensor ref = Tensor({1, 2, 2}, std::vector<double>{0.5, 0.5, 0.5, 0.5}).set_requires_grad(true);
  std::vector<Label> none(4, Label::Unlabeled);
  backward(tree_energy_loss(init, ref, none));
  EXPECT_TRUE(init.has_grad());
  EXPECT_FALSE(ref.has_grad());
  EXPECT_DOUBLE_EQ(init.grad()[0], -0.25);
  EXPECT_DOUBLE_EQ(init.grad()[1], 0.25);
}

TEST(TreeFilterDense, MatchesOracleAndDp) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto tr = tree::grid_tree(rng.uniform_tensor({3, 9, 7}, 0, 1));
    const Tensor s = rng.uniform_tensor({1, 9, 7}, 0, 1);
    const double sigma = rng.uniform(0.01, 2.0);
    const auto dense = tree::tree_filter_dense(tr, sigma, s.data());
    const auto ref = oracle::tree_filter(tr, sigma, std::vector<double>(s.data().begin(), s.data().end()));
    const auto dp = tree::tree_filter(tr, sigma, s);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(dense[i], ref[i], 1e-12);
      EXPECT_NEAR(dense[i], dp.data()[i], 1e-12);
    }
  }
  EXPECT_THROW(tree::tree_filter_dense(tree::grid_tree(Tensor({1, 2, 2}, 0.0)), 0.0, std::vector<double>(4, 0.0)),
               std::invalid_argument);
}
