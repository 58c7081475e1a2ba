#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ssd {

/// Counters the harness checks after a run.
struct MemoryStats {
  std::int64_t reservoir_offers = 0;
  std::int64_t reservoir_inserts = 0;       // went into an empty slot
  std::int64_t reservoir_replacements = 0;  // displaced an original slot
  std::int64_t reservoir_skips = 0;
  std::int64_t replay_batches = 0;
  std::int64_t replay_examples = 0;
  std::int64_t summarized_writes = 0;
  std::int64_t displaced_by_summary = 0;    // original slots taken over at class init
};

/// Accuracy after each training task on each task seen so far.
class MetricsRecord {
 public:
  explicit MetricsRecord(int num_tasks = 0);

  int num_tasks() const { return num_tasks_; }
  void set(int after_task, int eval_task, double accuracy);
  /// NaN when the pair was never evaluated.
  double at(int after_task, int eval_task) const;
  /// Highest task index with at least one evaluation, -1 if none.
  int last_task() const;
  /// Unweighted mean over the tasks evaluated after the last trained task.
  double average_end() const;

  /// Rows `after_task,eval_task,accuracy` then `<last>,avg_end,<value>`.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& file) const;

 private:
  int num_tasks_;
  std::vector<double> acc_;  // row-major [after][eval]
};

/// Per-seed values with their mean and sample standard deviation.
struct Summary {
  std::vector<double> values;
  double mean = 0;
  double stddev = 0;  // n - 1 denominator; 0 for a single value
};

Summary summarize(std::vector<double> values);

/// Fixed six-decimal rendering used in every CSV.
std::string format_fixed(double value, int decimals = 6);

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsRecord metrics{0};
  MemoryStats memory;
  std::int64_t capacity = 0;
  std::int64_t filled = 0;
  std::int64_t summarized_slots = 0;
  std::int64_t queue_leaks = 0;  // replayed examples not resident in memory
  std::int64_t summarize_events = 0;
  std::int64_t reinit_count = 0;
  std::vector<std::string> violations;
  double seconds = 0;
};

struct ExperimentResult {
  std::vector<SeedResult> runs;
  Summary average_end;
};

/// One row of the component ablation.
struct AblationRow {
  std::string name;
  bool dynamic_memory;
  bool summarize;
  bool past_assist;
  ExperimentResult result;
};

/// `seed,<row names...>` then one line per seed, then mean and std lines.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace ssd
