#include "mistseg_cli/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mistseg/checkpoint.hpp"
#include "mistseg/config.hpp"
#include "mistseg/dataset.hpp"
#include "mistseg/errors.hpp"
#include "mistseg/image_io.hpp"
#include "mistseg/metrics.hpp"
#include "mistseg/poecvae.hpp"
#include "mistseg/training.hpp"
#include "mistseg/treegraph.hpp"

namespace mistseg::cli {

namespace fs = std::filesystem;
using pipeline::RunConfig;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  RunConfig load(const fs::path& fallback = {}) const {
    RunConfig cfg;
    if (!config_path.empty()) {
      cfg = pipeline::load_config(config_path);
    } else if (!fallback.empty() && fs::exists(fallback)) {
      cfg = pipeline::load_config(fallback);
    }
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for every random choice");
}

std::vector<std::string> sample_names(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(fs::path(pipeline::sample_file_name(i)).stem().string());
  return names;
}

Tensor load_gray_map(const fs::path& path) {
  auto img = io::read_png(path);
  if (img.channels != 1) throw IoError(path.string() + ": expected a grayscale PNG");
  return io::to_tensor(img);
}

bool is_stage2_checkpoint(const std::vector<CheckpointRecord>& records) {
  return !records.empty() && records.front().name.rfind("stage2.", 0) == 0;
}

// Sized from the data: the configured image size must agree with it.
RunConfig fit_to_data(RunConfig cfg, std::span<const pipeline::SampleRecord> samples) {
  if (samples.empty()) throw IoError("dataset is empty");
  cfg.image_size = samples.front().height();
  cfg.validate();
  return cfg;
}

struct GenData {
  Common common;
  std::string out;
  std::size_t n = 16;
  std::size_t size = 64;

  int run(std::ostream& os) const {
    const auto cfg = common.load();
    const auto samples = pipeline::gen_synthetic(n, size, cfg.seed);
    pipeline::save_dataset(out, samples);
    os << "wrote " << n << " samples to " << out << "\n";
    return kExitOk;
  }
};

struct TrainStage1 {
  Common common;
  std::string data;
  std::string out;
  std::string pseudo;
  bool no_tree = false;
  bool no_mi = false;

  int run(std::ostream& os) const {
    const auto samples = pipeline::load_dataset(data);
    const auto cfg = fit_to_data(common.load(), samples);
    pipeline::Stage1Options options;
    options.use_tree_energy = !no_tree;
    options.use_mi = !no_mi;
    pipeline::TrainHooks hooks;
    os << "epoch,lr,pce_r,tree_r,pce_rgbd,tree_rgbd,mi,q_nll,total\n";
    hooks.on_epoch = [&](const pipeline::EpochLog& e) {
      const auto& m = e.mean;
      os << e.epoch << ',' << num(e.lr) << ',' << num(m.pce_r) << ',' << num(m.tree_r) << ',' << num(m.pce_rgbd) << ','
         << num(m.tree_rgbd) << ',' << num(m.mi) << ',' << num(m.q_nll) << ',' << num(m.total) << '\n';
    };
    const auto result = pipeline::stage1_train(samples, cfg, options, hooks);
    fs::create_directories(out);
    save_checkpoint(fs::path(out) / "stage1.mstw", result.model.net.named_parameters());
    pipeline::save_config(fs::path(out) / "config.cfg", cfg);
    const fs::path pseudo_dir = pseudo.empty() ? fs::path(data) / "pseudo" : fs::path(pseudo);
    pipeline::save_maps(pseudo_dir, result.pseudo_labels);
    if (result.final_train_mae) os << "final_train_mae," << num(*result.final_train_mae) << '\n';
    return kExitOk;
  }
};

struct TrainStage2 {
  Common common;
  std::string data;
  std::string pseudo;
  std::string out;

  int run(std::ostream& os) const {
    const auto samples = pipeline::load_dataset(data);
    const auto cfg = fit_to_data(common.load(), samples);
    const fs::path pseudo_dir = pseudo.empty() ? fs::path(data) / "pseudo" : fs::path(pseudo);
    if (!fs::is_directory(pseudo_dir)) throw IoError("missing pseudo labels at " + pseudo_dir.string());
    const auto labels = pipeline::load_maps(pseudo_dir);
    pipeline::Stage2Hooks hooks;
    os << "epoch,lr,recon,kl,anneal,total\n";
    hooks.on_epoch = [&](const pipeline::Stage2EpochLog& e) {
      os << e.epoch << ',' << num(e.lr) << ',' << num(e.mean.recon) << ',' << num(e.mean.kl) << ',' << num(e.mean.anneal)
         << ',' << num(e.mean.total) << '\n';
    };
    const auto result = pipeline::stage2_train(samples, labels, cfg, hooks);
    fs::create_directories(out);
    save_checkpoint(fs::path(out) / "stage2.mstw", result.net.named_parameters());
    pipeline::save_config(fs::path(out) / "config.cfg", cfg);
    if (result.final_train_mae) os << "final_train_mae," << num(*result.final_train_mae) << '\n';
    return kExitOk;
  }
};

struct Infer {
  Common common;
  std::string model;
  std::string data;
  std::string out;
  std::size_t stochastic = 1;

  int run(std::ostream& os) const {
    const auto samples = pipeline::load_dataset(data);
    const auto cfg = fit_to_data(common.load(fs::path(model).parent_path() / "config.cfg"), samples);
    const auto records = read_checkpoint(model);
    if (is_stage2_checkpoint(records)) {
      Rng init(cfg.seed);
      net::CvaeRefineNet refine_net(pipeline::refine_config(cfg), init);
      load_checkpoint(model, refine_net.named_parameters());
      const auto preds = pipeline::stage2_predict(refine_net, samples, stochastic, cfg.seed);
      std::vector<Tensor> means;
      for (const auto& p : preds) means.push_back(p.mean);
      pipeline::save_maps(out, means);
      if (stochastic > 1) {
        for (std::size_t k = 0; k < stochastic; ++k) {
          std::vector<Tensor> draws;
          for (const auto& p : preds) draws.push_back(p.draws[k]);
          pipeline::save_maps(fs::path(out) / "draws" / std::to_string(k), draws);
        }
      }
    } else {
      if (stochastic != 1) throw std::invalid_argument("--stochastic applies to stage-2 models only");
      Rng init(cfg.seed);
      net::SaliencyNet saliency(pipeline::net_config(cfg), init);
      load_checkpoint(model, saliency.named_parameters());
      pipeline::save_maps(out, pipeline::stage1_predict(saliency, samples));
    }
    os << "wrote " << samples.size() << " maps to " << out << "\n";
    return kExitOk;
  }
};

struct Eval {
  Common common;
  std::string pred;
  std::string gt;
  std::string out;

  int run(std::ostream& os) const {
    common.load();
    const auto preds = pipeline::load_maps(pred);
    const auto gts = pipeline::load_maps(gt);
    if (preds.size() != gts.size()) {
      throw IoError("prediction folder holds " + std::to_string(preds.size()) + " maps, ground truth " +
                    std::to_string(gts.size()));
    }
    std::vector<pipeline::MetricsReport> reports(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) reports[i] = pipeline::evaluate(preds[i], gts[i]);
    const auto csv = pipeline::metrics_csv(sample_names(preds.size()), reports);
    if (!out.empty()) io::write_file_atomic(out, std::vector<std::uint8_t>(csv.begin(), csv.end()));
    os << csv;
    return kExitOk;
  }
};

struct TreeFilter {
  Common common;
  std::string image;
  std::string signal;
  std::string out;
  double sigma = tree::kLowLevelSigma;

  int run(std::ostream& os) const {
    common.load();
    const Tensor img = io::to_tensor(io::read_png(image));
    const Tensor s = load_gray_map(signal);
    if (s.dim(1) != img.dim(1) || s.dim(2) != img.dim(2)) throw ShapeError("signal and image sizes differ");
    const auto tr = tree::grid_tree(img);
    const Tensor filtered = tree::tree_filter(tr, sigma, s);
    io::write_png(out, io::from_tensor(filtered));
    os << "mst_weight," << num(tr.total_weight()) << '\n';
    return kExitOk;
  }
};

struct MiDemo {
  Common common;
  std::vector<double> rhos{0.5, 0.9};
  int steps = 1500;
  std::size_t batch = 512;
  std::size_t eval = 10000;

  int run(std::ostream& os) const {
    const auto cfg = common.load();
    mi::GaussianDemoOptions options;
    options.steps = steps;
    options.batch = batch;
    options.eval_samples = eval;
    os << "rho,true_mi,estimate\n";
    for (double rho : rhos) {
      os << num(rho) << ',' << num(mi::gaussian_mi(rho)) << ',' << num(mi::estimate_gaussian_mi(rho, cfg.seed, options))
         << '\n';
    }
    return kExitOk;
  }
};

struct PoeDemo {
  Common common;
  std::vector<std::string> experts;
  bool no_prior = false;

  int run(std::ostream& os) const {
    common.load();
    std::vector<DiagGaussian> gs;
    for (const auto& e : experts) {
      const auto comma = e.find(',');
      if (comma == std::string::npos) throw std::invalid_argument("expert '" + e + "' must be MU,VAR");
      const double mu = std::stod(e.substr(0, comma));
      const double var = std::stod(e.substr(comma + 1));
      if (!(var > 0.0)) throw std::invalid_argument("expert '" + e + "' needs a positive variance");
      gs.push_back({Tensor({1, 1}, std::vector<double>{mu}), Tensor({1, 1}, std::vector<double>{std::log(var)})});
    }
    const auto product = poe::poe_combine(gs, !no_prior, {1, 1});
    const DiagGaussian standard{Tensor::zeros({1, 1}), Tensor::zeros({1, 1})};
    os << "name,mu,var,kl_to_product,kl_to_standard\n";
    auto row = [&](const std::string& name, const DiagGaussian& g) {
      os << name << ',' << num(g.mu.item()) << ',' << num(std::exp(g.log_var.item())) << ','
         << num(poe::kl_diag(g, product).item()) << ',' << num(poe::kl_diag(g, standard).item()) << '\n';
    };
    for (std::size_t i = 0; i < gs.size(); ++i) row("expert" + std::to_string(i), gs[i]);
    row("product", product);
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly-supervised RGB-D saliency toolkit", "mistseg"};
  app.require_subcommand(1);

  GenData gen;
  auto* c_gen = app.add_subcommand("gen-data", "write a synthetic RGB-D scribble dataset");
  add_common(c_gen, gen.common);
  c_gen->add_option("--out", gen.out, "dataset root")->required();
  c_gen->add_option("--n", gen.n, "number of samples");
  c_gen->add_option("--size", gen.size, "image side, a multiple of 32");

  TrainStage1 t1;
  auto* c_t1 = app.add_subcommand("train-stage1", "scribble training with tree energy and MI regularization");
  add_common(c_t1, t1.common);
  c_t1->add_option("--data", t1.data, "dataset root")->required()->check(CLI::ExistingDirectory);
  c_t1->add_option("--out", t1.out, "run directory for checkpoint and config")->required();
  c_t1->add_option("--pseudo", t1.pseudo, "pseudo label folder (default <data>/pseudo)");
  c_t1->add_flag("--no-tree-energy", t1.no_tree, "drop the tree-energy terms");
  c_t1->add_flag("--no-mi", t1.no_mi, "drop the mutual-information term");

  TrainStage2 t2;
  auto* c_t2 = app.add_subcommand("train-stage2", "CVAE refinement on stage-1 pseudo labels");
  add_common(c_t2, t2.common);
  c_t2->add_option("--data", t2.data, "dataset root")->required()->check(CLI::ExistingDirectory);
  c_t2->add_option("--pseudo", t2.pseudo, "pseudo label folder (default <data>/pseudo)");
  c_t2->add_option("--out", t2.out, "run directory for checkpoint and config")->required();

  Infer inf;
  auto* c_inf = app.add_subcommand("infer", "predict saliency maps with a trained checkpoint");
  add_common(c_inf, inf.common);
  c_inf->add_option("--model", inf.model, "checkpoint file")->required()->check(CLI::ExistingFile);
  c_inf->add_option("--data", inf.data, "dataset root")->required()->check(CLI::ExistingDirectory);
  c_inf->add_option("--out", inf.out, "output folder")->required();
  c_inf->add_option("--stochastic", inf.stochastic, "prior samples per input (stage-2 models)")
      ->check(CLI::PositiveNumber);

  Eval ev;
  auto* c_ev = app.add_subcommand("eval", "MAE, F, S and E measures as CSV");
  add_common(c_ev, ev.common);
  c_ev->add_option("--pred", ev.pred, "prediction folder")->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--gt", ev.gt, "ground truth folder")->required()->check(CLI::ExistingDirectory);
  c_ev->add_option("--out", ev.out, "also write the CSV here");

  TreeFilter tf;
  auto* c_tf = app.add_subcommand("tree-filter", "filter a map along the image's minimum spanning tree");
  add_common(c_tf, tf.common);
  c_tf->add_option("--image", tf.image, "guide image PNG")->required()->check(CLI::ExistingFile);
  c_tf->add_option("--signal", tf.signal, "grayscale map PNG")->required()->check(CLI::ExistingFile);
  c_tf->add_option("--sigma", tf.sigma, "affinity scale")->check(CLI::PositiveNumber);
  c_tf->add_option("--out", tf.out, "output PNG")->required();

  MiDemo md;
  auto* c_md = app.add_subcommand("mi-demo", "vCLUB estimates on correlated Gaussians");
  add_common(c_md, md.common);
  c_md->add_option("--rho", md.rhos, "correlations in (-1, 1)")->expected(1, -1);
  c_md->add_option("--steps", md.steps, "training steps")->check(CLI::PositiveNumber);
  c_md->add_option("--batch", md.batch, "training batch size")->check(CLI::PositiveNumber);
  c_md->add_option("--eval", md.eval, "evaluation pairs")->check(CLI::PositiveNumber);

  PoeDemo pd;
  auto* c_pd = app.add_subcommand("poe-demo", "product of 1-D Gaussian experts");
  add_common(c_pd, pd.common);
  c_pd->add_option("--expert", pd.experts, "MU,VAR (repeatable)");
  c_pd->add_flag("--no-prior", pd.no_prior, "leave out the standard normal expert");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "mistseg: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (c_gen->parsed()) return gen.run(out);
    if (c_t1->parsed()) return t1.run(out);
    if (c_t2->parsed()) return t2.run(out);
    if (c_inf->parsed()) return inf.run(out);
    if (c_ev->parsed()) return ev.run(out);
    if (c_tf->parsed()) return tf.run(out);
    if (c_md->parsed()) return md.run(out);
    if (c_pd->parsed()) return pd.run(out);
  } catch (const std::exception& e) {
    err << "mistseg: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int main_entry(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace mistseg::cli
