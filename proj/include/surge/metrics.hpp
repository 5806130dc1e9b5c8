#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "surge/errors.hpp"

namespace surge {

inline double mse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw dimension_error("mse: series lengths " + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

// 1 - SS_res / SS_tot. Undefined for constant truth.
inline double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw dimension_error("r_squared: series lengths differ");
  }
  const std::size_t n = pred.size();
  if (n < 2) throw metric_error("r_squared: need at least 2 points");
  double mean = 0.0;
  for (double y : truth) mean += y;
  mean /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = truth[i] - pred[i];
    const double d = truth[i] - mean;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) throw metric_error("r_squared: truth series is constant");
  return 1.0 - ss_res / ss_tot;
}

// Pearson correlation. Undefined when either series is constant.
inline double correlation_coefficient(std::span<const double> pred,
                                      std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw dimension_error("correlation_coefficient: series lengths differ");
  }
  const std::size_t n = pred.size();
  if (n < 2) throw metric_error("correlation_coefficient: need at least 2 points");
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mp += pred[i];
    mt += truth[i];
  }
  mp /= static_cast<double>(n);
  mt /= static_cast<double>(n);
  double spt = 0.0, spp = 0.0, stt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = pred[i] - mp;
    const double dt = truth[i] - mt;
    spt += dp * dt;
    spp += dp * dp;
    stt += dt * dt;
  }
  if (spp == 0.0 || stt == 0.0) {
    throw metric_error("correlation_coefficient: constant series");
  }
  return spt / std::sqrt(spp * stt);
}

}  // namespace surge
