#include <gtest/gtest.h>

#include "mistseg/errors.hpp"
#include "mistseg/refine_net.hpp"
#include "mistseg/saliencynet.hpp"

using namespace mistseg;
using namespace mistseg::net;

namespace {

struct Inputs {
  Tensor rgb, depth;
};

Inputs random_inputs(Rng& rng, std::size_t n = 1, std::size_t size = 64) {
  return {rng.uniform_tensor({n, 3, size, size}, 0, 1), rng.uniform_tensor({n, 1, size, size}, 0, 1)};
}

bool any_nonzero(const Tensor& t) {
  if (!t.has_grad()) return false;
  for (double g : t.grad())
    if (g != 0.0) return true;
  return false;
}

}  // namespace

TEST(SaliencyNet, ShapesAndRange) {
  Rng rng(1);
  SaliencyNet net({64, 16}, rng);
  auto in = random_inputs(rng, 2);
  const auto out = net.forward(in.rgb, in.depth);
  EXPECT_EQ(out.s_r_init.shape(), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(out.s_rgbd_init.shape(), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(out.f_r_info.shape(), (Shape{2, 16, 16, 16}));
  EXPECT_EQ(out.f_rgbd_info.shape(), (Shape{2, 16, 16, 16}));
  for (const Tensor* t : {&out.s_r_init, &out.s_rgbd_init})
    for (double v : t->data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(SaliencyNet, DepthOnlyAffectsRgbdBranch) {
  Rng rng(2);
  SaliencyNet net({64, 16}, rng);
  auto in = random_inputs(rng);
  const auto a = net.forward(in.rgb, in.depth);
  const auto b = net.forward(in.rgb, rng.uniform_tensor({1, 1, 64, 64}, 0, 1));
  EXPECT_TRUE(std::equal(a.s_r_init.data().begin(), a.s_r_init.data().end(), b.s_r_init.data().begin()));
  EXPECT_FALSE(std::equal(a.s_rgbd_init.data().begin(), a.s_rgbd_init.data().end(), b.s_rgbd_init.data().begin()));
}

TEST(SaliencyNet, RgbdLossReachesBothEncoders) {
  Rng rng(3);
  SaliencyNet net({64, 16}, rng);
  auto in = random_inputs(rng);
  backward(mean(net.forward(in.rgb, in.depth).s_rgbd_init));
  bool rgb = false, depth = false;
  for (const auto& [name, t] : net.rgb_encoder_parameters()) rgb = rgb || any_nonzero(t);
  for (const auto& [name, t] : net.depth_encoder_parameters()) depth = depth || any_nonzero(t);
  EXPECT_TRUE(rgb);
  EXPECT_TRUE(depth);
}

TEST(SaliencyNet, Deterministic) {
  Rng a(4), b(4);
  SaliencyNet n1({64, 16}, a), n2({64, 16}, b);
  Rng rng(5);
  auto in = random_inputs(rng);
  const auto o1 = n1.forward(in.rgb, in.depth), o2 = n1.forward(in.rgb, in.depth), o3 = n2.forward(in.rgb, in.depth);
  EXPECT_TRUE(std::equal(o1.s_rgbd_init.data().begin(), o1.s_rgbd_init.data().end(), o2.s_rgbd_init.data().begin()));
  EXPECT_TRUE(std::equal(o1.s_rgbd_init.data().begin(), o1.s_rgbd_init.data().end(), o3.s_rgbd_init.data().begin()));
}

TEST(SaliencyNet, RejectsBadSizes) {
  Rng rng(6);
  SaliencyNet net({64, 16}, rng);
  EXPECT_THROW(net.forward(Tensor({1, 3, 48, 64}), Tensor({1, 1, 48, 64})), ShapeError);
  EXPECT_THROW(net.forward(Tensor({1, 3, 64, 64}), Tensor({1, 2, 64, 64})), ShapeError);
  EXPECT_THROW(net.forward(Tensor({1, 3, 64, 64}), Tensor({1, 1, 32, 32})), ShapeError);
  EXPECT_THROW(SaliencyNet({40, 16}, rng), std::invalid_argument);
}

TEST(SaliencyNet, AsymmetricEncoders) {
  Rng rng(7);
  SaliencyNet net({64, 16}, rng);
  EXPECT_LT(parameter_count(net.depth_encoder_parameters()), parameter_count(net.rgb_encoder_parameters()));
}

TEST(Encoders, StageCountsAndSizes) {
  Rng rng(8);
  EncoderSemantic sem(3, rng);
  EncoderDetail det(1, rng);
  const auto fs = sem.forward(rng.normal_tensor({1, 3, 64, 64}));
  const auto fd = det.forward(rng.normal_tensor({1, 1, 64, 64}));
  ASSERT_EQ(fs.size(), 4u);
  ASSERT_EQ(fd.size(), 5u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(fs[i].dim(2), 32u >> i);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(fd[i].dim(2), 32u >> i);
}

TEST(DuplicateTop, FiveHalvingStagesAndPoolingOracle) {
  Rng rng(9);
  std::vector<Tensor> stages;
  for (std::size_t i = 0; i < 4; ++i) stages.push_back(rng.normal_tensor({1, 2, 32u >> i, 32u >> i}));
  const auto top = stages.back();
  const auto out = duplicate_top(stages);
  ASSERT_EQ(out.size(), 5u);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_EQ(out[i].dim(2) * 2, out[i - 1].dim(2));
  const auto& p = out[4];
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) s += top.data()[(c * 4 + 2 * y + dy) * 4 + 2 * x + dx];
        EXPECT_NEAR(p.data()[(c * 2 + y) * 2 + x], s / 4.0, 1e-15);
      }
}

TEST(CvaeRefineNet, PriorPathPredictsInRange) {
  Rng rng(10);
  CvaeRefineNet net({64, 16, 8}, rng);
  auto in = random_inputs(rng);
  Tensor pred = net.predict(in.rgb, in.depth, rng.normal_tensor({1, 8}));
  EXPECT_EQ(pred.shape(), (Shape{1, 1, 64, 64}));
  for (double v : pred.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto post = net.posterior(in.rgb, in.depth, rng.uniform_tensor({1, 1, 64, 64}, 0, 1));
  EXPECT_EQ(post.mu.shape(), (Shape{1, 8}));
}

TEST(CvaeRefineNet, LatentChangesOutput) {
  Rng rng(11);
  CvaeRefineNet net({64, 16, 8}, rng);
  auto in = random_inputs(rng);
  Tensor a = net.predict(in.rgb, in.depth, rng.normal_tensor({1, 8}));
  Tensor b = net.predict(in.rgb, in.depth, rng.normal_tensor({1, 8}));
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += std::fabs(a.data()[i] - b.data()[i]);
  EXPECT_GT(diff, 0.0);
}
