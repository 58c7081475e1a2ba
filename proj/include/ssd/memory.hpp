#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ssd/data.hpp"
#include "ssd/metrics.hpp"
#include "ssd/rng.hpp"

namespace ssd {

inline namespace SSD_PRECISION_NS {

enum class SlotTag { Empty, Summarized, Original };

const char* slot_tag_name(SlotTag tag);

struct Slot {
  SlotTag tag = SlotTag::Empty;
  Example example;  // label doubles as the owning class for summarized slots
};

/// floor(K / C); throws when the memory cannot hold one slot per class.
int per_class_budget(std::int64_t capacity, int total_classes);

/// Fixed-capacity replay memory with per-class summarized slots and a
/// reservoir-managed remainder.
///
/// Summarized slots are allocated once per class (k of them) and afterwards
/// only change through `write_summarized`; reservoir updates never touch them.
class MemoryBuffer {
 public:
  MemoryBuffer(std::int64_t capacity, int total_classes);
  /// Plain reservoir memory: no per-class reservation.
  static MemoryBuffer reservoir_only(std::int64_t capacity);

  std::int64_t capacity() const { return static_cast<std::int64_t>(slots_.size()); }
  int per_class_budget() const { return budget_; }
  int total_classes() const { return total_classes_; }
  std::int64_t n_seen() const { return n_seen_; }

  const std::vector<Slot>& slots() const { return slots_; }
  const Slot& slot(std::size_t index) const { return slots_.at(index); }
  std::int64_t filled() const;
  std::int64_t count(SlotTag tag) const;
  bool initialized(int c) const { return seen_.contains(c); }
  const std::set<int>& initialized_classes() const { return seen_; }

  /// Reserves k slots for class `c` drawn uniformly among empty and original
  /// slots, seeded with the images in `first` (cycled when there are fewer
  /// than k). No-op when `c` is already initialized. Returns the slot indices.
  std::vector<std::size_t> init_class_slots(int c, std::span<const Example> first, Rng& rng);

  enum class Offer { Inserted, Replaced, Skipped };
  /// Standard reservoir step over the non-summarized slots.
  Offer reservoir_update(const Example& example, Rng& rng);

  /// Up to `batch_size` filled slots, uniformly without replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, Rng& rng);
  std::vector<Example> sample_replay_batch(std::size_t batch_size, Rng& rng);

  /// Slot indices of M_c (throws for an uninitialized class), M_S \ M_c and M_O.
  std::vector<std::size_t> summarized_of(int c) const;
  std::vector<std::size_t> other_summarized(int c) const;
  std::vector<std::size_t> originals() const;
  std::vector<std::size_t> filled_indices() const;
  std::vector<Example> examples_at(std::span<const std::size_t> indices) const;

  /// Replaces the pixels of a summarized slot. Label and tag are untouched.
  void write_summarized(std::size_t index, Pixels pixels);

  const MemoryStats& stats() const { return stats_; }

 private:
  MemoryBuffer() = default;

  std::vector<Slot> slots_;
  int total_classes_ = 0;
  int budget_ = 0;
  std::set<int> seen_;
  std::int64_t n_seen_ = 0;
  MemoryStats stats_;
};

inline constexpr std::size_t kDefaultReplayBatch = 100;
inline constexpr std::size_t kDefaultQueueCapacity = 64;

/// Per-class FIFO of the most recent stream images. Only the summarizer
/// reads it; it is never part of the replay memory.
class RecentQueue {
 public:
  explicit RecentQueue(std::size_t capacity = kDefaultQueueCapacity);

  void push(const Example& example);
  /// Oldest first, newest last.
  std::vector<Example> recent_of(int c) const;
  std::size_t size_of(int c) const;
  std::size_t capacity() const { return capacity_; }
  bool contains(const Example& example) const;

 private:
  std::size_t capacity_;
  std::map<int, std::deque<Example>> queues_;
};

/// Writes one binary PPM per filled slot named `<slot>_<tag>_<class>.ppm`
/// plus `manifest.csv` (slot,tag,class,stream_index). Returns the number of
/// images written.
std::size_t dump_memory(const MemoryBuffer& buffer, ImageShape shape, const std::filesystem::path& dir);

/// P6 with maxval 255; single-channel images are replicated to grey.
void write_ppm(const std::filesystem::path& file, const Pixels& pixels, ImageShape shape);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
