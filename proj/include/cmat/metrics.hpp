#pragma once

#include <string>
#include <vector>

#include "cmat/trainer.hpp"

namespace cmat {

// metrics.csv header, in this exact order. Wall-clock timings live in a
// separate timing.csv so metrics.csv stays bit-identical across reruns.
extern const char* kMetricsHeader;

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);
void write_timing_csv(const std::string& path, const std::vector<double>& seconds);

struct CurvePoint {
  long env_steps = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population convention
};

// Aligns per-seed mean_return curves on a common env-step grid. Identical
// grids pass through; otherwise every run is linearly resampled onto the
// coarsest grid and *resampled is set.
std::vector<CurvePoint> aligned_curve(const std::vector<std::vector<MetricRow>>& runs, bool* resampled);

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

}  // namespace cmat
