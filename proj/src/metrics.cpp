#include "cmat/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cmat {

const char* kMetricsHeader =
    "update,env_steps,mean_return,std_return,critic_loss,actor_loss,entropy,clip_fraction,approx_kl";

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    os << r.update << "," << r.env_steps << "," << fmt(r.mean_return) << "," << fmt(r.std_return) << ","
       << fmt(r.critic_loss) << "," << fmt(r.actor_loss) << "," << fmt(r.entropy) << ","
       << fmt(r.clip_fraction) << "," << fmt(r.approx_kl) << "\n";
  }
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty metrics file: " + path);
  if (line != kMetricsHeader) throw IoError("unexpected metrics header in " + path);
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cols = split_line(line);
    if (cols.size() != 9) throw IoError("bad metrics row in " + path);
    MetricRow r;
    r.update = std::stoi(cols[0]);
    r.env_steps = std::stol(cols[1]);
    r.mean_return = std::stod(cols[2]);
    r.std_return = std::stod(cols[3]);
    r.critic_loss = std::stod(cols[4]);
    r.actor_loss = std::stod(cols[5]);
    r.entropy = std::stod(cols[6]);
    r.clip_fraction = std::stod(cols[7]);
    r.approx_kl = std::stod(cols[8]);
    rows.push_back(r);
  }
  return rows;
}

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "update,env_steps,episodes,mean_return,std_return,min_return,max_return\n";
  for (const auto& r : rows) {
    os << r.update << "," << r.env_steps << "," << r.stats.episodes << "," << fmt(r.stats.mean) << ","
       << fmt(r.stats.stddev) << "," << fmt(r.stats.min) << "," << fmt(r.stats.max) << "\n";
  }
}

void write_timing_csv(const std::string& path, const std::vector<double>& seconds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "update,wall_clock_seconds\n";
  for (std::size_t i = 0; i < seconds.size(); ++i) os << (i + 1) << "," << fmt(seconds[i]) << "\n";
}

std::vector<CurvePoint> aligned_curve(const std::vector<std::vector<MetricRow>>& runs, bool* resampled) {
  if (resampled) *resampled = false;
  if (runs.empty()) throw ContractError("aligned_curve: need at least one run");
  // pick the coarsest grid
  std::size_t coarsest = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].size() < runs[coarsest].size()) coarsest = i;
  }
  std::vector<long> grid;
  for (const auto& r : runs[coarsest]) grid.push_back(r.env_steps);
  bool identical = true;
  for (const auto& run : runs) {
    if (run.size() != grid.size()) identical = false;
    for (std::size_t i = 0; identical && i < run.size(); ++i) identical = run[i].env_steps == grid[i];
  }
  if (!identical && resampled) *resampled = true;

  auto value_at = [](const std::vector<MetricRow>& run, long step) {
    if (run.empty()) throw ContractError("aligned_curve: empty run");
    if (step <= run.front().env_steps) return run.front().mean_return;
    if (step >= run.back().env_steps) return run.back().mean_return;
    for (std::size_t i = 1; i < run.size(); ++i) {
      if (run[i].env_steps >= step) {
        long x0 = run[i - 1].env_steps, x1 = run[i].env_steps;
        double y0 = run[i - 1].mean_return, y1 = run[i].mean_return;
        if (x1 == x0) return y1;
        double w = static_cast<double>(step - x0) / static_cast<double>(x1 - x0);
        return y0 + w * (y1 - y0);
      }
    }
    return run.back().mean_return;
  };

  std::vector<CurvePoint> curve;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    CurvePoint p;
    p.env_steps = grid[gi];
    std::vector<double> vals;
    for (const auto& run : runs) {
      vals.push_back(identical ? run[gi].mean_return : value_at(run, grid[gi]));
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= vals.size();
    p.mean = mean;
    p.stddev = std::sqrt(var);
    curve.push_back(p);
  }
  return curve;
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "env_steps,mean_return,std_return\n";
  for (const auto& p : curve) os << p.env_steps << "," << fmt(p.mean) << "," << fmt(p.stddev) << "\n";
}

}  // namespace cmat
