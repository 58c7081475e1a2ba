#include "ssd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ssd {

MetricsRecord::MetricsRecord(int num_tasks)
    : num_tasks_(num_tasks),
      acc_(static_cast<std::size_t>(num_tasks) * static_cast<std::size_t>(num_tasks),
           std::numeric_limits<double>::quiet_NaN()) {
  if (num_tasks < 0) throw std::invalid_argument("metrics: negative task count");
}

void MetricsRecord::set(int after_task, int eval_task, double accuracy) {
  if (after_task < 0 || after_task >= num_tasks_ || eval_task < 0 || eval_task >= num_tasks_) {
    throw std::out_of_range("metrics: task index out of range");
  }
  acc_[static_cast<std::size_t>(after_task * num_tasks_ + eval_task)] = accuracy;
}

double MetricsRecord::at(int after_task, int eval_task) const {
  if (after_task < 0 || after_task >= num_tasks_ || eval_task < 0 || eval_task >= num_tasks_) {
    throw std::out_of_range("metrics: task index out of range");
  }
  return acc_[static_cast<std::size_t>(after_task * num_tasks_ + eval_task)];
}

int MetricsRecord::last_task() const {
  for (int a = num_tasks_ - 1; a >= 0; --a) {
    for (int e = 0; e < num_tasks_; ++e) {
      if (!std::isnan(at(a, e))) return a;
    }
  }
  return -1;
}

double MetricsRecord::average_end() const {
  const int last = last_task();
  if (last < 0) return std::numeric_limits<double>::quiet_NaN();
  double total = 0;
  int n = 0;
  for (int e = 0; e < num_tasks_; ++e) {
    const double v = at(last, e);
    if (std::isnan(v)) continue;
    total += v;
    ++n;
  }
  return total / n;
}

std::string format_fixed(double value, int decimals) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  return buf;
}

std::string MetricsRecord::to_csv() const {
  std::ostringstream out;
  out << "after_task,eval_task,accuracy\n";
  for (int a = 0; a < num_tasks_; ++a) {
    for (int e = 0; e < num_tasks_; ++e) {
      const double v = at(a, e);
      if (!std::isnan(v)) out << a << ',' << e << ',' << format_fixed(v) << '\n';
    }
  }
  const int last = last_task();
  if (last >= 0) out << last << ",avg_end," << format_fixed(average_end()) << '\n';
  return out.str();
}

void MetricsRecord::write_csv(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error("metrics: cannot open " + file.string());
  out << to_csv();
  if (!out) throw std::runtime_error("metrics: write failed for " + file.string());
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  const double n = static_cast<double>(s.values.size());
  s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / n;
  if (s.values.size() > 1) {
    double ss = 0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1));
  }
  return s;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "seed";
  for (const auto& r : rows) out << ',' << r.name;
  out << '\n';
  const std::size_t seeds = rows.empty() ? 0 : rows.front().result.runs.size();
  for (std::size_t i = 0; i < seeds; ++i) {
    out << rows.front().result.runs[i].seed;
    for (const auto& r : rows) out << ',' << format_fixed(r.result.average_end.values.at(i));
    out << '\n';
  }
  out << "mean";
  for (const auto& r : rows) out << ',' << format_fixed(r.result.average_end.mean);
  out << "\nstd";
  for (const auto& r : rows) out << ',' << format_fixed(r.result.average_end.stddev);
  out << '\n';
  return out.str();
}

}  // namespace ssd
