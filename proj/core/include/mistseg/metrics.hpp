#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mistseg/tensor.hpp"

namespace mistseg::pipeline {

inline constexpr double kFBeta2 = 0.3;

struct MetricsReport {
  double mae = 0.0;
  double f_measure = 0.0;
  double s_measure = 0.0;
  double e_measure = 0.0;
};

/// Maps are H x W row-major; `gt` is binary (anything >= 0.5 counts as FG).
struct MapView {
  std::span<const double> values;
  std::size_t height = 0;
  std::size_t width = 0;
};

MapView view_of(const Tensor& map);

double adaptive_threshold(std::span<const double> pred);
double mae(MapView pred, MapView gt);
double f_measure(MapView pred, MapView gt);
double s_measure(MapView pred, MapView gt);
double e_measure(MapView pred, MapView gt);

MetricsReport evaluate(const Tensor& pred, const Tensor& gt);
MetricsReport mean_report(std::span<const MetricsReport> reports);

/// `sample,mae,f,s,e` rows plus a final `*` row holding the column means.
std::string metrics_csv(std::span<const std::string> names, std::span<const MetricsReport> reports);
std::string format_metric(double value);

}  // namespace mistseg::pipeline
