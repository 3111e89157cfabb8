#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mistseg::pipeline {

/// Every hyperparameter of a run. Defaults are the published settings; toy
/// runs override learning rates and epoch counts from a config file.
struct RunConfig {
  double alpha = 0.005;        // weight of the mutual-information term
  double sigma_low = 0.02;     // image-level tree filter
  double sigma_high = 1.0;     // feature-level tree filter
  double lambda = 1.0;         // reconstruction weight in the ELBO
  double beta = 5.0;           // KL weight in the ELBO (annealed)
  double lr_stage1 = 3e-5;
  double lr_stage2 = 2.5e-5;
  int epochs_stage1 = 30;
  int epochs_stage2 = 50;
  int batch = 3;
  int decay_step = 1;
  double decay_rate = 0.95;
  std::size_t image_size = 64;
  std::size_t latent_dim = 8;
  std::uint64_t seed = 0;

  bool operator==(const RunConfig&) const = default;

  /// Throws ConfigError naming the first out-of-range key.
  void validate() const;
};

/// Parses `key = value` lines; `#` starts a comment. Missing keys keep their
/// defaults, unknown keys and malformed values raise ConfigError with the
/// line number.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key, in declaration order, with round-trip precision.
std::string format_config(const RunConfig& config);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace mistseg::pipeline
