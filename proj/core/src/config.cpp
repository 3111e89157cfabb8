#include "mistseg/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mistseg/errors.hpp"

namespace mistseg::pipeline {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
bool parse_number(std::string_view text, T& out) {
  if (text.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for doubles is incomplete in older libstdc++; strtod is exact.
    std::string buf(text);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(buf.c_str(), &end);
    if (end != buf.c_str() + buf.size() || errno == ERANGE || !std::isfinite(v)) return false;
    out = v;
    return true;
  } else {
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
  }
}

using Setter = std::function<bool(RunConfig&, std::string_view)>;

template <class T>
Setter setter(T RunConfig::*member) {
  return [member](RunConfig& c, std::string_view v) { return parse_number(v, c.*member); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"alpha", setter(&RunConfig::alpha)},
      {"sigma_low", setter(&RunConfig::sigma_low)},
      {"sigma_high", setter(&RunConfig::sigma_high)},
      {"lambda", setter(&RunConfig::lambda)},
      {"beta", setter(&RunConfig::beta)},
      {"lr_stage1", setter(&RunConfig::lr_stage1)},
      {"lr_stage2", setter(&RunConfig::lr_stage2)},
      {"epochs_stage1", setter(&RunConfig::epochs_stage1)},
      {"epochs_stage2", setter(&RunConfig::epochs_stage2)},
      {"batch", setter(&RunConfig::batch)},
      {"decay_step", setter(&RunConfig::decay_step)},
      {"decay_rate", setter(&RunConfig::decay_rate)},
      {"image_size", setter(&RunConfig::image_size)},
      {"latent_dim", setter(&RunConfig::latent_dim)},
      {"seed", setter(&RunConfig::seed)},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const char* key, const char* why) { throw ConfigError(std::string(key) + ": " + why); };
  if (alpha < 0.0) fail("alpha", "must be non-negative");
  if (!(sigma_low > 0.0)) fail("sigma_low", "must be positive");
  if (!(sigma_high > 0.0)) fail("sigma_high", "must be positive");
  if (lambda < 0.0) fail("lambda", "must be non-negative");
  if (beta < 0.0) fail("beta", "must be non-negative");
  if (!(lr_stage1 > 0.0)) fail("lr_stage1", "must be positive");
  if (!(lr_stage2 > 0.0)) fail("lr_stage2", "must be positive");
  if (epochs_stage1 < 0) fail("epochs_stage1", "must be non-negative");
  if (epochs_stage2 < 0) fail("epochs_stage2", "must be non-negative");
  if (batch < 1) fail("batch", "must be at least 1");
  if (decay_step < 1) fail("decay_step", "must be at least 1");
  if (!(decay_rate > 0.0) || decay_rate > 1.0) fail("decay_rate", "must lie in (0, 1]");
  if (image_size == 0 || image_size % 32 != 0) fail("image_size", "must be a positive multiple of 32");
  if (latent_dim == 0) fail("latent_dim", "must be positive");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!it->second(config, value)) {
      throw ConfigError(where + "invalid value '" + std::string(value) + "' for '" + std::string(key) + "'");
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "alpha = " << c.alpha << '\n'
     << "sigma_low = " << c.sigma_low << '\n'
     << "sigma_high = " << c.sigma_high << '\n'
     << "lambda = " << c.lambda << '\n'
     << "beta = " << c.beta << '\n'
     << "lr_stage1 = " << c.lr_stage1 << '\n'
     << "lr_stage2 = " << c.lr_stage2 << '\n'
     << "epochs_stage1 = " << c.epochs_stage1 << '\n'
     << "epochs_stage2 = " << c.epochs_stage2 << '\n'
     << "batch = " << c.batch << '\n'
     << "decay_step = " << c.decay_step << '\n'
     << "decay_rate = " << c.decay_rate << '\n'
     << "image_size = " << c.image_size << '\n'
     << "latent_dim = " << c.latent_dim << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config " + path.string());
  out << format_config(config);
}

}  // namespace mistseg::pipeline
