#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mistseg/config.hpp"
#include "mistseg/dataset.hpp"
#include "mistseg/metrics.hpp"
#include "mistseg/miclub.hpp"
#include "mistseg/refine_net.hpp"
#include "mistseg/saliencynet.hpp"
#include "mistseg/treegraph.hpp"

namespace mistseg::pipeline {

/// A stacked minibatch. Trees are built from the RGB images and cached by the
/// caller; they do not change across epochs.
struct Batch {
  Tensor rgb;    // N x 3 x H x W
  Tensor depth;  // N x 1 x H x W
  std::vector<Label> labels;
  std::vector<const tree::SpanningTree*> image_trees;
  std::optional<Tensor> target;  // N x 1 x H x W pseudo labels (stage 2)
};

Batch make_batch(std::span<const SampleRecord> samples, std::span<const std::size_t> indices,
                 std::span<const tree::SpanningTree> image_trees = {}, std::span<const Tensor> targets = {});

std::vector<tree::SpanningTree> build_image_trees(std::span<const SampleRecord> samples);

struct Stage1Options {
  bool use_tree_energy = true;
  bool use_mi = true;
};

struct LossBreakdown {
  double pce_r = 0.0;
  double tree_r = 0.0;
  double pce_rgbd = 0.0;
  double tree_rgbd = 0.0;
  double mi = 0.0;     // unweighted vCLUB estimate
  double alpha = 0.0;  // weight applied to `mi` in `total`
  double q_nll = 0.0;  // likelihood loss of the approximation network before its update
  double total = 0.0;

  double component_sum() const { return pce_r + tree_r + pce_rgbd + tree_rgbd + alpha * mi; }
};

struct Stage1Model {
  net::SaliencyNet net;
  mi::ApproxNet q;

  Stage1Model() = default;
  Stage1Model(const RunConfig& cfg, std::uint64_t seed);
};

struct Stage1Optimizers {
  Adam net;
  Adam q;

  Stage1Optimizers(const Stage1Model& model, double lr);
  void set_lr(double lr);
};

/// Refined maps for each sample of a batch, computed without gradient.
std::vector<Tensor> refine_batch(const Tensor& s_init, const Tensor& f_info,
                                 std::span<const tree::SpanningTree* const> image_trees, const RunConfig& cfg);

/// One alternating update: the approximation network takes a likelihood step
/// on detached features, then the saliency network minimizes
/// pce_r + tree_r + pce_rgbd + tree_rgbd + alpha * mi.
LossBreakdown stage1_step(const Batch& batch, Stage1Model& model, Stage1Optimizers& opt, const RunConfig& cfg,
                          const Stage1Options& options = {});

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown mean;
  std::optional<double> train_mae;
};

struct Stage1Result {
  Stage1Model model;
  std::vector<EpochLog> epochs;
  std::vector<Tensor> pseudo_labels;  // quantized to 1/255 steps, 1 x H x W
  std::optional<double> final_train_mae;  // of the quantized predictions
};

struct TrainHooks {
  bool track_train_mae = false;
  std::function<void(const EpochLog&)> on_epoch;
};

Stage1Result stage1_train(std::span<const SampleRecord> samples, const RunConfig& cfg, const Stage1Options& options = {},
                          const TrainHooks& hooks = {});

/// RGB-D branch output per sample (1 x H x W), raw.
std::vector<Tensor> stage1_predict(const net::SaliencyNet& net, std::span<const SampleRecord> samples);

/// Tree-refined RGB-D predictions, quantized to what a PNG stores.
std::vector<Tensor> export_pseudo_labels(const net::SaliencyNet& net, std::span<const SampleRecord> samples,
                                         const RunConfig& cfg);

struct Stage2Breakdown {
  double recon = 0.0;
  double kl = 0.0;
  double anneal = 0.0;
  double total = 0.0;
};

struct Stage2EpochLog {
  int epoch = 0;
  double lr = 0.0;
  Stage2Breakdown mean;
  std::optional<double> train_mae;
};

struct Stage2Result {
  net::CvaeRefineNet net;
  std::vector<Stage2EpochLog> epochs;
  std::optional<double> final_train_mae;
};

Stage2Breakdown stage2_step(const Batch& batch, const net::CvaeRefineNet& model, Adam& optimizer, const RunConfig& cfg,
                            double anneal, Rng& rng);

struct Stage2Hooks {
  bool track_train_mae = false;
  std::function<void(const Stage2EpochLog&)> on_epoch;
};

Stage2Result stage2_train(std::span<const SampleRecord> samples, std::span<const Tensor> pseudo_labels,
                          const RunConfig& cfg, const Stage2Hooks& hooks = {});

/// Decodes `n_samples` latent draws from the joint prior per input and returns
/// the draws and their pixelwise mean. Draws for sample i come from
/// Rng(seed).fork(i), so results do not depend on evaluation order.
struct StochasticPrediction {
  std::vector<Tensor> draws;
  Tensor mean;
};
std::vector<StochasticPrediction> stage2_predict(const net::CvaeRefineNet& net, std::span<const SampleRecord> samples,
                                                 std::size_t n_samples, std::uint64_t seed);

Tensor quantize_map(const Tensor& map);

/// Per-sample metrics against sample ground truth (samples must carry gt).
std::vector<MetricsReport> evaluate_predictions(std::span<const Tensor> preds, std::span<const SampleRecord> samples);

net::NetConfig net_config(const RunConfig& cfg);
net::RefineConfig refine_config(const RunConfig& cfg);

}  // namespace mistseg::pipeline
