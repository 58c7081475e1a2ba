#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include "ssd/config.hpp"
#include "ssd/data.hpp"
#include "ssd/learner.hpp"
#include "ssd/memory.hpp"
#include "ssd/metrics.hpp"
#include "ssd/summarizer.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// Builds the configured dataset (synthetic, optionally cached, or CIFAR-100).
Dataset load_dataset(const RunConfig& config);

LearnerConfig learner_config(const RunConfig& config);
SummarizerConfig summarizer_config(const RunConfig& config);

/// Live objects of one seed's run, exposed so tests and tools can inspect
/// them after (or during) training.
struct RunState {
  TaskSequence tasks;
  std::unique_ptr<MemoryBuffer> memory;
  std::unique_ptr<RecentQueue> queue;
  std::unique_ptr<Summarizer> summarizer;  // null without dynamic memory
  std::unique_ptr<Learner> learner;
  MetricsRecord metrics{0};
  std::int64_t queue_leaks = 0;
};

/// Called after each stream iteration with the task index and iteration.
using IterationHook = std::function<void(const RunState&, int task, std::int64_t iteration)>;

/// One seed of the full training loop: per stream batch, summarize (and
/// reserve slots), offer the rest to the reservoir, update the summarizing
/// network, sample replay and train the learner; evaluate after each task.
SeedResult run_seed(const RunConfig& config, const Dataset& dataset, std::uint64_t seed, RunState* keep = nullptr,
                    const IterationHook& hook = {}, std::ostream* log = nullptr);

/// Checks the memory invariants of a finished run; returns the violations.
std::vector<std::string> check_invariants(const RunConfig& config, const RunState& state);

/// All seeds, plus artifacts under `output_dir` when it is set.
ExperimentResult run_experiment(const RunConfig& config, std::ostream* log = nullptr);

/// The four component rows {none, D, D+S, D+S+P} over the configured seeds.
std::vector<AblationRow> ablation_suite(const RunConfig& config, std::ostream* log = nullptr);

/// Rough wall-clock estimate in seconds, from timing one step of each kind.
double estimate_cost_seconds(const RunConfig& config, const Dataset& dataset);

/// Learner parameters, normalization statistics and memory slots.
void save_run_checkpoint(const std::filesystem::path& file, RunState& state, ImageShape shape);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
