#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssd/image_shape.hpp"
#include "ssd/tensor.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

using Pixels = std::vector<Real>;

/// One labelled image. Pixels are shared, so copying an Example is cheap.
struct Example {
  std::shared_ptr<const Pixels> pixels;
  int label = -1;
  std::int64_t stream_index = -1;  // position in the full stream, -1 until streamed
};

struct Dataset {
  ImageShape shape;
  int num_classes = 0;
  std::vector<Example> train;
  std::vector<Example> test;
};

// --- CIFAR-style binary records ----------------------------------------------
//
// Each record is 2 label bytes (coarse, fine) followed by C*H*W pixel bytes,
// channel-planar and row-major. Pixels are scaled by 1/255.

inline constexpr std::int64_t kCifarLabelBytes = 2;
inline constexpr std::int64_t kCifar100Train = 50000;
inline constexpr std::int64_t kCifar100Test = 10000;

std::int64_t cifar_record_bytes(ImageShape shape);

/// Reads `expected_records` records; the file size must match exactly.
std::vector<Example> read_cifar_records(const std::filesystem::path& file, ImageShape shape,
                                        std::int64_t expected_records);
/// Writes records with the label in both label bytes; pixels are rounded to
/// the nearest 1/255 step.
void write_cifar_records(const std::filesystem::path& file, std::span<const Example> examples, ImageShape shape);

/// Loads `train.bin` and `test.bin` from a CIFAR-100 binary directory (fine labels).
Dataset load_cifar100(const std::filesystem::path& dir);

// --- Class-incremental tasks ---------------------------------------------------

struct Task {
  std::vector<int> classes;  // in the order they were drawn
  std::vector<Example> train;
  std::vector<Example> test;
};

struct TaskSequence {
  std::vector<Task> tasks;
  std::vector<int> task_of_class;  // -1 for classes absent from the dataset
  std::int64_t stream_length() const;
};

/// Shuffles the class order with `seed`, cuts it into `num_tasks` equal
/// groups and shuffles each task's examples. Stream indices are assigned in
/// the resulting order across the whole sequence.
TaskSequence make_tasks(const Dataset& dataset, int num_tasks, std::uint64_t seed);

/// Forward-only view over one task; every example is handed out once.
class BatchStream {
 public:
  BatchStream(const Task& task, std::size_t batch_size);

  std::optional<std::span<const Example>> next();
  std::size_t remaining() const { return examples_.size() - position_; }
  std::size_t batch_count() const { return (examples_.size() + batch_size_ - 1) / batch_size_; }

 private:
  std::span<const Example> examples_;
  std::size_t batch_size_;
  std::size_t position_ = 0;
};

inline constexpr std::size_t kDefaultStreamBatch = 10;

BatchStream stream_batches(const Task& task, std::size_t batch_size = kDefaultStreamBatch);

// --- Synthetic textures --------------------------------------------------------

/// Per class: an oriented grating with a class-specific angle and frequency,
/// plus a class-coloured gaussian blob; each sample jitters phase, angle and
/// blob position and adds pixel noise.
struct SyntheticSpec {
  int num_classes = 10;
  int per_class = 500;
  int test_per_class = 100;
  ImageShape shape{3, 16, 16};
  std::uint64_t seed = 7;
  double noise = 0.08;
};

Dataset generate_synthetic(const SyntheticSpec& spec);

// --- Batching ------------------------------------------------------------------

/// Stacks example images into a [B, C, H, W] tensor.
Tensor stack_images(std::span<const Example> examples, ImageShape shape, bool requires_grad = false);
std::vector<int> labels_of(std::span<const Example> examples);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
