#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace dtx {

/** Count, mean, sample standard deviation, and percentiles, in ms. */
struct LatencySummary {
  std::size_t count = 0;
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  double p50_ms = 0.0;
  double p99_ms = 0.0;

  [[nodiscard]] nlohmann::json to_json() const {
    return nlohmann::json{{"count", count},
                          {"mean_ms", mean_ms},
                          {"stddev_ms", stddev_ms},
                          {"p50_ms", p50_ms},
                          {"p99_ms", p99_ms}};
  }
};

[[nodiscard]] inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (const double x : xs) {
    sum += x;
  }
  return sum / static_cast<double>(xs.size());
}

/** Sample (n−1) standard deviation. */
[[nodiscard]] inline double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) {
    return 0.0;
  }
  const double m = mean_of(xs);
  double ss = 0.0;
  for (const double x : xs) {
    ss += (x - m) * (x - m);
  }
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/** Nearest-rank percentile of an ascending-sorted sample. p in [0, 1]. */
[[nodiscard]] inline double percentile_sorted(const std::vector<double>& xs,
                                              double p) {
  if (xs.empty()) {
    return 0.0;
  }
  const auto n = static_cast<double>(xs.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n));
  if (rank == 0) {
    rank = 1;
  }
  return xs[std::min(rank, xs.size()) - 1];
}

[[nodiscard]] inline LatencySummary summarize_latency(
    std::vector<double> samples_ms) {
  LatencySummary s;
  s.count = samples_ms.size();
  if (samples_ms.empty()) {
    return s;
  }
  s.mean_ms = mean_of(samples_ms);
  s.stddev_ms = stddev_of(samples_ms);
  std::sort(samples_ms.begin(), samples_ms.end());
  s.p50_ms = percentile_sorted(samples_ms, 0.50);
  s.p99_ms = percentile_sorted(samples_ms, 0.99);
  return s;
}

/** Two-sided 95% confidence interval for the mean (Student's t). */
struct Ci95 {
  double mean = 0.0;
  double half_width = 0.0;

  [[nodiscard]] nlohmann::json to_json() const {
    return nlohmann::json{{"mean", mean}, {"ci95_half_width", half_width}};
  }
};

[[nodiscard]] inline double student_t_975(std::size_t df) {
  // Critical values of the t distribution at p = 0.975.
  static constexpr double kTable[] = {
      12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
      2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
      2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df == 0) {
    return 0.0;
  }
  if (df <= 30) {
    return kTable[df - 1];
  }
  return 1.96;
}

[[nodiscard]] inline Ci95 ci95(const std::vector<double>& xs) {
  Ci95 ci;
  ci.mean = mean_of(xs);
  if (xs.size() < 2) {
    return ci;
  }
  const double se = stddev_of(xs) / std::sqrt(static_cast<double>(xs.size()));
  ci.half_width = student_t_975(xs.size() - 1) * se;
  return ci;
}

}  // namespace dtx
