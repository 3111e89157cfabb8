#include "mistseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mistseg/errors.hpp"

namespace mistseg::pipeline {

namespace {

constexpr double kEps = 1e-16;

void check_pair(MapView pred, MapView gt, const char* op) {
  if (pred.height != gt.height || pred.width != gt.width || pred.values.size() != gt.values.size() ||
      pred.values.size() != pred.height * pred.width) {
    throw ShapeError(std::string(op) + ": prediction and ground truth sizes differ");
  }
  if (pred.values.empty()) throw ShapeError(std::string(op) + ": empty map");
}

bool is_fg(double g) { return g >= 0.5; }

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double fg_fraction(std::span<const double> gt) {
  std::size_t n = 0;
  for (double g : gt) n += is_fg(g);
  return static_cast<double>(n) / static_cast<double>(gt.size());
}

std::vector<bool> binarize(std::span<const double> pred) {
  const double th = adaptive_threshold(pred);
  std::vector<bool> out(pred.size(), false);
  // A threshold of zero means an all-zero map, which predicts nothing.
  if (th <= 0.0) return out;
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] >= th;
  return out;
}

// Mean and unbiased deviation of the values picked by `take`.
template <class Pick>
double object_score(std::span<const double> pred, std::span<const double> gt, Pick take) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!take(gt[i])) continue;
    s += pred[i];
    ++n;
  }
  if (n == 0) return 0.0;
  const double x = s / static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (take(gt[i])) var += (pred[i] - x) * (pred[i] - x);
  const double sigma = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

struct Block {
  std::size_t y0, y1, x0, x1;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

double block_ssim(MapView pred, MapView gt, Block b) {
  const std::size_t n = b.area();
  if (n == 0) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) {
      mx += pred.values[y * pred.width + x];
      my += is_fg(gt.values[y * gt.width + x]) ? 1.0 : 0.0;
    }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) {
      const double dx = pred.values[y * pred.width + x] - mx;
      const double dy = (is_fg(gt.values[y * gt.width + x]) ? 1.0 : 0.0) - my;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  sx /= denom;
  sy /= denom;
  sxy /= denom;
  const double alpha = 4.0 * mx * my * sxy;
  const double beta = (mx * mx + my * my) * (sx + sy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

double region_score(MapView pred, MapView gt) {
  const std::size_t h = gt.height, w = gt.width;
  double cy = 0.0, cx = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (is_fg(gt.values[y * w + x])) cy += static_cast<double>(y), cx += static_cast<double>(x), ++n;
  // Split after the centroid pixel so both halves are non-empty when possible.
  const auto sx = std::min(w, static_cast<std::size_t>(std::lround(cx / static_cast<double>(n))) + 1);
  const auto sy = std::min(h, static_cast<std::size_t>(std::lround(cy / static_cast<double>(n))) + 1);
  const double area = static_cast<double>(h * w);
  const Block blocks[4] = {{0, sy, 0, sx}, {0, sy, sx, w}, {sy, h, 0, sx}, {sy, h, sx, w}};
  double score = 0.0;
  for (const auto& b : blocks) score += static_cast<double>(b.area()) / area * block_ssim(pred, gt, b);
  return score;
}

}  // namespace

MapView view_of(const Tensor& map) {
  if (map.rank() < 2) throw ShapeError("metrics: expected a 2-D map, got " + shape_str(map.shape()));
  const std::size_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  if (map.numel() != h * w) throw ShapeError("metrics: expected a single-channel map, got " + shape_str(map.shape()));
  return {map.data(), h, w};
}

double adaptive_threshold(std::span<const double> pred) { return std::clamp(2.0 * mean_of(pred), 0.0, 1.0); }

double mae(MapView pred, MapView gt) {
  check_pair(pred, gt, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) s += std::fabs(pred.values[i] - (is_fg(gt.values[i]) ? 1.0 : 0.0));
  return s / static_cast<double>(pred.values.size());
}

double f_measure(MapView pred, MapView gt) {
  check_pair(pred, gt, "f_measure");
  const auto bin = binarize(pred.values);
  std::size_t tp = 0, predicted = 0, positive = 0;
  for (std::size_t i = 0; i < bin.size(); ++i) {
    const bool g = is_fg(gt.values[i]);
    tp += bin[i] && g;
    predicted += bin[i];
    positive += g;
  }
  if (positive == 0) return predicted == 0 ? 1.0 : 0.0;
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
  const double recall = static_cast<double>(tp) / static_cast<double>(positive);
  return (1.0 + kFBeta2) * precision * recall / (kFBeta2 * precision + recall);
}

double s_measure(MapView pred, MapView gt) {
  check_pair(pred, gt, "s_measure");
  const double u = fg_fraction(gt.values);
  if (u == 0.0) return 1.0 - mean_of(pred.values);
  if (u == 1.0) return mean_of(pred.values);
  std::vector<double> inverted(pred.values.size());
  for (std::size_t i = 0; i < inverted.size(); ++i) inverted[i] = 1.0 - pred.values[i];
  const double so = u * object_score(pred.values, gt.values, is_fg) +
                    (1.0 - u) * object_score(inverted, gt.values, [](double g) { return !is_fg(g); });
  const double sr = region_score(pred, gt);
  return std::clamp(0.5 * so + 0.5 * sr, 0.0, 1.0);
}

double e_measure(MapView pred, MapView gt) {
  check_pair(pred, gt, "e_measure");
  const double u = fg_fraction(gt.values);
  if (u == 0.0) return 1.0 - mean_of(pred.values);
  if (u == 1.0) return mean_of(pred.values);
  const auto bin = binarize(pred.values);
  const std::size_t n = bin.size();
  double mf = 0.0;
  for (bool b : bin) mf += b;
  mf /= static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double df = (bin[i] ? 1.0 : 0.0) - mf;
    const double dg = (is_fg(gt.values[i]) ? 1.0 : 0.0) - u;
    const double align = 2.0 * df * dg / (df * df + dg * dg + kEps);
    total += (align + 1.0) * (align + 1.0) / 4.0;
  }
  return total / static_cast<double>(n);
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt) {
  const auto p = view_of(pred), g = view_of(gt);
  return {mae(p, g), f_measure(p, g), s_measure(p, g), e_measure(p, g)};
}

MetricsReport mean_report(std::span<const MetricsReport> reports) {
  MetricsReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.mae += r.mae;
    m.f_measure += r.f_measure;
    m.s_measure += r.s_measure;
    m.e_measure += r.e_measure;
  }
  const double n = static_cast<double>(reports.size());
  return {m.mae / n, m.f_measure / n, m.s_measure / n, m.e_measure / n};
}

std::string format_metric(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  std::string s = buf;
  s.erase(s.find_last_not_of('0') + 1);
  if (s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

std::string metrics_csv(std::span<const std::string> names, std::span<const MetricsReport> reports) {
  if (names.size() != reports.size()) throw std::invalid_argument("metrics_csv: names and reports differ in length");
  std::string out = "sample,mae,f,s,e\n";
  auto row = [&](const std::string& name, const MetricsReport& r) {
    out += name + ',' + format_metric(r.mae) + ',' + format_metric(r.f_measure) + ',' + format_metric(r.s_measure) + ',' +
           format_metric(r.e_measure) + '\n';
  };
  for (std::size_t i = 0; i < names.size(); ++i) row(names[i], reports[i]);
  row("*", mean_report(reports));
  return out;
}

}  // namespace mistseg::pipeline
