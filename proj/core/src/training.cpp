#include "mistseg/training.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "mistseg/errors.hpp"
#include "mistseg/image_io.hpp"
#include "mistseg/losses.hpp"
#include "mistseg/parallel.hpp"

namespace mistseg::pipeline {

namespace {

Tensor stack(std::span<const Tensor> maps) {
  std::vector<Tensor> parts;
  parts.reserve(maps.size());
  for (const auto& m : maps) parts.push_back(reshape(m, Shape{1, m.dim(0), m.dim(1), m.dim(2)}));
  return concat(parts, 0);
}

Tensor sample_map(const Tensor& batch, std::size_t i) {
  Tensor s = slice(batch, i, i + 1);
  return reshape(s, Shape{s.dim(1), s.dim(2), s.dim(3)});
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) out.emplace_back(order.begin() + static_cast<long>(i),
                                                               order.begin() + static_cast<long>(std::min(n, i + batch)));
  return out;
}

void check_samples(std::span<const SampleRecord> samples, const RunConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("training needs at least one sample");
  for (const auto& s : samples) {
    if (s.height() != cfg.image_size || s.width() != cfg.image_size) {
      throw ShapeError("sample of size " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                       " does not match image_size " + std::to_string(cfg.image_size));
    }
  }
}

std::optional<double> mean_mae(std::span<const Tensor> preds, std::span<const SampleRecord> samples) {
  for (const auto& s : samples)
    if (!s.gt) return std::nullopt;
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += mae(view_of(preds[i]), view_of(*samples[i].gt));
  return total / static_cast<double>(preds.size());
}

std::vector<Tensor> quantize_all(std::vector<Tensor> maps) {
  for (auto& m : maps) m = quantize_map(m);
  return maps;
}

}  // namespace

net::NetConfig net_config(const RunConfig& cfg) { return {cfg.image_size, 16}; }

net::RefineConfig refine_config(const RunConfig& cfg) { return {cfg.image_size, 16, cfg.latent_dim}; }

Tensor quantize_map(const Tensor& map) {
  Tensor out = map.detach();
  for (double& v : out.mutable_data()) v = io::dequantize(io::quantize(v));
  return out;
}

std::vector<tree::SpanningTree> build_image_trees(std::span<const SampleRecord> samples) {
  std::vector<tree::SpanningTree> trees(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { trees[i] = tree::grid_tree(samples[i].rgb); });
  return trees;
}

Batch make_batch(std::span<const SampleRecord> samples, std::span<const std::size_t> indices,
                 std::span<const tree::SpanningTree> image_trees, std::span<const Tensor> targets) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<Tensor> rgb, depth, target;
  Batch b;
  for (auto i : indices) {
    if (i >= samples.size()) throw std::out_of_range("make_batch: sample index out of range");
    rgb.push_back(samples[i].rgb);
    depth.push_back(samples[i].depth);
    const auto& l = samples[i].scribble.labels;
    b.labels.insert(b.labels.end(), l.begin(), l.end());
    if (!image_trees.empty()) b.image_trees.push_back(&image_trees[i]);
    if (!targets.empty()) target.push_back(targets[i]);
  }
  b.rgb = stack(rgb);
  b.depth = stack(depth);
  if (!targets.empty()) b.target = stack(target);
  return b;
}

Stage1Model::Stage1Model(const RunConfig& cfg, std::uint64_t seed) {
  Rng root(seed);
  Rng net_rng = root.fork(1);
  Rng q_rng = root.fork(2);
  net = net::SaliencyNet(net_config(cfg), net_rng);
  q = mi::ApproxNet(16, 16, q_rng);
}

Stage1Optimizers::Stage1Optimizers(const Stage1Model& model, double lr)
    : net(model.net.parameters(), {.lr = lr}), q(param_values(model.q.named_parameters()), {.lr = lr}) {}

void Stage1Optimizers::set_lr(double lr) {
  net.set_lr(lr);
  q.set_lr(lr);
}

std::vector<Tensor> refine_batch(const Tensor& s_init, const Tensor& f_info,
                                 std::span<const tree::SpanningTree* const> image_trees, const RunConfig& cfg) {
  NoGradGuard no_grad;
  const std::size_t n = s_init.dim(0);
  if (image_trees.size() != n) throw std::invalid_argument("refine_batch: one image tree per sample required");
  const std::size_t h = s_init.dim(2), w = s_init.dim(3);
  const Tensor s = s_init.detach();
  const Tensor f = f_info.detach();
  std::vector<Tensor> out(n);
  parallel_for(n, [&](std::size_t i) {
    Tensor fi = slice(f, i, i + 1);
    if (fi.dim(2) != h || fi.dim(3) != w) fi = resize_bilinear(fi, h, w);
    const auto feature_tree = tree::grid_tree(fi);
    out[i] = reshape(tree::refine(sample_map(s, i), *image_trees[i], feature_tree, cfg.sigma_low, cfg.sigma_high),
                     Shape{1, h, w});
  });
  return out;
}

LossBreakdown stage1_step(const Batch& batch, Stage1Model& model, Stage1Optimizers& opt, const RunConfig& cfg,
                          const Stage1Options& options) {
  LossBreakdown out;
  const bool with_mi = options.use_mi && cfg.alpha > 0.0;
  if (options.use_tree_energy && batch.image_trees.size() != batch.rgb.dim(0)) {
    throw std::invalid_argument("stage1_step: tree energy needs cached image trees for the batch");
  }
  auto fwd = model.net.forward(batch.rgb, batch.depth);

  Tensor pce_r = partial_ce(fwd.s_r_init, batch.labels);
  Tensor pce_rgbd = partial_ce(fwd.s_rgbd_init, batch.labels);
  out.pce_r = pce_r.item();
  out.pce_rgbd = pce_rgbd.item();
  Tensor total = add(pce_r, pce_rgbd);

  if (options.use_tree_energy) {
    const auto ref_r = refine_batch(fwd.s_r_init, fwd.f_r_info, batch.image_trees, cfg);
    const auto ref_rgbd = refine_batch(fwd.s_rgbd_init, fwd.f_rgbd_info, batch.image_trees, cfg);
    Tensor tree_r = tree::tree_energy_loss(fwd.s_r_init, stack(ref_r), batch.labels);
    Tensor tree_rgbd = tree::tree_energy_loss(fwd.s_rgbd_init, stack(ref_rgbd), batch.labels);
    out.tree_r = tree_r.item();
    out.tree_rgbd = tree_rgbd.item();
    total = add(add(pce_r, tree_r), add(pce_rgbd, tree_rgbd));
  }

  if (with_mi) {
    const Tensor x = mi::estimator_input(fwd.f_rgbd_info);
    const Tensor y = mi::estimator_input(fwd.f_r_info);
    out.q_nll = mi::train_q_step(x, y, model.q, opt.q);
    Tensor mi_term = mi::vclub_sampled(x, y, model.q, false);
    out.mi = mi_term.item();
    out.alpha = cfg.alpha;
    total = add(total, mul_scalar(mi_term, cfg.alpha));
  }

  opt.net.zero_grad();
  backward(total);
  opt.net.step();
  out.total = total.item();
  return out;
}

std::vector<Tensor> stage1_predict(const net::SaliencyNet& net, std::span<const SampleRecord> samples) {
  NoGradGuard no_grad;
  std::vector<Tensor> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t idx[] = {i};
    const auto b = make_batch(samples, idx);
    out[i] = sample_map(net.forward(b.rgb, b.depth).s_rgbd_init, 0);
  }
  return out;
}

std::vector<Tensor> export_pseudo_labels(const net::SaliencyNet& net, std::span<const SampleRecord> samples,
                                         const RunConfig& cfg) {
  NoGradGuard no_grad;
  const auto trees = build_image_trees(samples);
  std::vector<Tensor> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t idx[] = {i};
    const auto b = make_batch(samples, idx, trees);
    const auto fwd = net.forward(b.rgb, b.depth);
    out[i] = quantize_map(refine_batch(fwd.s_rgbd_init, fwd.f_rgbd_info, b.image_trees, cfg)[0]);
  }
  return out;
}

Stage1Result stage1_train(std::span<const SampleRecord> samples, const RunConfig& cfg, const Stage1Options& options,
                          const TrainHooks& hooks) {
  cfg.validate();
  check_samples(samples, cfg);
  Stage1Result result;
  result.model = Stage1Model(cfg, cfg.seed);
  Stage1Optimizers opt(result.model, cfg.lr_stage1);
  Rng order_rng = Rng(cfg.seed).fork(3);
  const auto trees = options.use_tree_energy ? build_image_trees(samples) : std::vector<tree::SpanningTree>{};

  for (int epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = step_decay_lr(cfg.lr_stage1, epoch, cfg.decay_step, cfg.decay_rate);
    opt.set_lr(log.lr);
    const auto batches = epoch_batches(samples.size(), static_cast<std::size_t>(cfg.batch), order_rng);
    for (const auto& idx : batches) {
      const auto b = make_batch(samples, idx, trees);
      const auto l = stage1_step(b, result.model, opt, cfg, options);
      log.mean.pce_r += l.pce_r;
      log.mean.tree_r += l.tree_r;
      log.mean.pce_rgbd += l.pce_rgbd;
      log.mean.tree_rgbd += l.tree_rgbd;
      log.mean.mi += l.mi;
      log.mean.q_nll += l.q_nll;
      log.mean.total += l.total;
      log.mean.alpha = l.alpha;
    }
    const double nb = static_cast<double>(batches.size());
    for (double* v : {&log.mean.pce_r, &log.mean.tree_r, &log.mean.pce_rgbd, &log.mean.tree_rgbd, &log.mean.mi,
                      &log.mean.q_nll, &log.mean.total})
      *v /= nb;
    if (hooks.track_train_mae) log.train_mae = mean_mae(stage1_predict(result.model.net, samples), samples);
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.epochs.push_back(log);
  }
  result.pseudo_labels = export_pseudo_labels(result.model.net, samples, cfg);
  result.final_train_mae = mean_mae(quantize_all(stage1_predict(result.model.net, samples)), samples);
  return result;
}

Stage2Breakdown stage2_step(const Batch& batch, const net::CvaeRefineNet& model, Adam& optimizer, const RunConfig& cfg,
                            double anneal, Rng& rng) {
  if (!batch.target) throw std::invalid_argument("stage2_step: batch carries no pseudo labels");
  const auto fused = model.fused_features(batch.rgb, batch.depth);
  const auto prior = model.prior(batch.rgb, batch.depth);
  const auto post = model.posterior(batch.rgb, batch.depth, *batch.target);
  const auto z = poe::reparameterize(post, rng.normal_tensor(post.mu.shape()));
  Tensor pred = model.decode(fused, z.z);
  Tensor recon = structure_aware_loss(pred, *batch.target);
  Tensor kl = poe::kl_diag(post, prior);
  Tensor loss = poe::elbo_loss(recon, kl, cfg.lambda, cfg.beta, anneal);
  optimizer.zero_grad();
  backward(loss);
  optimizer.step();
  return {recon.item(), kl.item(), anneal, loss.item()};
}

Stage2Result stage2_train(std::span<const SampleRecord> samples, std::span<const Tensor> pseudo_labels,
                          const RunConfig& cfg, const Stage2Hooks& hooks) {
  cfg.validate();
  check_samples(samples, cfg);
  if (pseudo_labels.size() != samples.size()) {
    throw std::invalid_argument("stage2_train: " + std::to_string(pseudo_labels.size()) + " pseudo labels for " +
                                std::to_string(samples.size()) + " samples");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (pseudo_labels[i].numel() != samples[i].height() * samples[i].width()) {
      throw ShapeError("stage2_train: pseudo label " + std::to_string(i) + " has shape " +
                       shape_str(pseudo_labels[i].shape()));
    }
  }
  std::vector<Tensor> targets;
  for (const auto& p : pseudo_labels) targets.push_back(reshape(p.detach(), Shape{1, cfg.image_size, cfg.image_size}));

  Stage2Result result;
  Rng root(cfg.seed);
  Rng init_rng = root.fork(11);
  Rng order_rng = root.fork(12);
  Rng noise_rng = root.fork(13);
  result.net = net::CvaeRefineNet(refine_config(cfg), init_rng);
  Adam opt(result.net.parameters(), {.lr = cfg.lr_stage2});
  const long per_epoch = static_cast<long>((samples.size() + static_cast<std::size_t>(cfg.batch) - 1) /
                                          static_cast<std::size_t>(cfg.batch));
  const long total_iters = per_epoch * cfg.epochs_stage2;
  long iter = 0;
  for (int epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
    Stage2EpochLog log;
    log.epoch = epoch;
    log.lr = step_decay_lr(cfg.lr_stage2, epoch, cfg.decay_step, cfg.decay_rate);
    opt.set_lr(log.lr);
    const auto batches = epoch_batches(samples.size(), static_cast<std::size_t>(cfg.batch), order_rng);
    for (const auto& idx : batches) {
      const auto b = make_batch(samples, idx, {}, targets);
      const auto l = stage2_step(b, result.net, opt, cfg, poe::linear_anneal(iter++, total_iters), noise_rng);
      log.mean.recon += l.recon;
      log.mean.kl += l.kl;
      log.mean.anneal += l.anneal;
      log.mean.total += l.total;
    }
    const double nb = static_cast<double>(batches.size());
    for (double* v : {&log.mean.recon, &log.mean.kl, &log.mean.anneal, &log.mean.total}) *v /= nb;
    if (hooks.track_train_mae) {
      std::vector<Tensor> means;
      for (auto& p : stage2_predict(result.net, samples, 1, cfg.seed)) means.push_back(p.mean);
      log.train_mae = mean_mae(means, samples);
    }
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.epochs.push_back(log);
  }
  std::vector<Tensor> means;
  for (auto& p : stage2_predict(result.net, samples, 1, cfg.seed)) means.push_back(quantize_map(p.mean));
  result.final_train_mae = mean_mae(means, samples);
  return result;
}

std::vector<StochasticPrediction> stage2_predict(const net::CvaeRefineNet& net, std::span<const SampleRecord> samples,
                                                 std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("stage2_predict: need at least one latent sample");
  NoGradGuard no_grad;
  Rng root(seed);
  std::vector<StochasticPrediction> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng = root.fork(i);
    const std::size_t idx[] = {i};
    const auto b = make_batch(samples, idx);
    const auto fused = net.fused_features(b.rgb, b.depth);
    const auto prior = net.prior(b.rgb, b.depth);
    auto& p = out[i];
    std::vector<double> acc(samples[i].height() * samples[i].width(), 0.0);
    for (std::size_t k = 0; k < n_samples; ++k) {
      const auto z = poe::reparameterize(prior, rng.normal_tensor(prior.mu.shape()), poe::LatentSample::Source::Prior);
      Tensor draw = sample_map(net.decode(fused, z.z), 0);
      const auto d = draw.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += d[j];
      p.draws.push_back(draw);
    }
    for (double& v : acc) v /= static_cast<double>(n_samples);
    p.mean = Tensor(Shape{1, samples[i].height(), samples[i].width()}, std::move(acc));
  }
  return out;
}

std::vector<MetricsReport> evaluate_predictions(std::span<const Tensor> preds, std::span<const SampleRecord> samples) {
  if (preds.size() != samples.size()) throw std::invalid_argument("evaluate_predictions: count mismatch");
  std::vector<MetricsReport> out(preds.size());
  parallel_for(preds.size(), [&](std::size_t i) {
    if (!samples[i].gt) throw std::invalid_argument("evaluate_predictions: sample " + std::to_string(i) + " has no gt");
    out[i] = evaluate(preds[i], *samples[i].gt);
  });
  return out;
}

}  // namespace mistseg::pipeline
