#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ssd/memory.hpp"
#include "ssd/models.hpp"
#include "ssd/optim.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

enum class LearnerMode { ER, SCR };

struct LearnerConfig {
  Backbone backbone = Backbone::ReducedResNet18;
  std::int64_t width = 20;  // base width (ResNet) or channel count (ConvNet3)
  double lr = 0.1;
  double lambda = 1.0;
  LearnerMode mode = LearnerMode::ER;
  int replays_per_iter = 1;
  double temperature = 0.09;
  bool augment = false;  // random crop + horizontal flip, SCR mode only
};

/// Mean backbone feature per class, L2-normalized. `classes` is ascending.
struct ClassMeans {
  std::vector<int> classes;
  std::vector<std::vector<Real>> means;
  bool empty() const { return classes.empty(); }
};

/// Means of the rows of `features` grouped by label, then normalized.
ClassMeans compute_class_means(const Tensor& features, std::span<const int> labels);

/// Nearest class mean under euclidean distance after normalizing each row of
/// `features`. Ties go to the lowest class id.
std::vector<int> ncm_classify(const ClassMeans& means, const Tensor& features);

struct TrainStepResult {
  double stream_loss = 0;
  double replay_loss = 0;  // 0 when no replay batch
  double total_loss = 0;
};

/// The continual learner: a backbone (plus a projection head in SCR mode)
/// trained on the stream batch and a replay batch from memory.
class Learner {
 public:
  Learner(LearnerConfig config, ImageShape shape, int num_classes, std::uint64_t seed);

  const LearnerConfig& config() const { return config_; }
  Network& network() { return *network_; }
  const Network& network() const { return *network_; }
  ProjectionHead* head() { return head_ ? head_.get() : nullptr; }
  std::vector<Tensor> parameters() const;

  /// One SGD step on L_t(stream) + lambda * L_m(replay). An empty replay
  /// batch drops the second term.
  TrainStepResult train_step(std::span<const Example> stream, std::span<const Example> replay);
  /// One SGD step on the replay term alone.
  TrainStepResult replay_step(std::span<const Example> replay);

  /// The remaining r-1 memory-only steps of an iteration, each on a fresh
  /// replay batch. Returns how many steps ran.
  int replay_repeat(MemoryBuffer& memory, Rng& rng, std::size_t replay_batch);

  /// Eval-mode backbone features of `examples`, in chunks.
  Tensor features_of(std::span<const Example> examples);
  ClassMeans class_means(const MemoryBuffer& memory);
  /// Softmax argmax (ER) or nearest class mean (SCR, needs `means`).
  std::vector<int> predict(std::span<const Example> examples, const ClassMeans* means);
  double accuracy(std::span<const Example> examples, const ClassMeans* means);

 private:
  Tensor scr_embeddings(const Tensor& images);
  Tensor augment(const Tensor& images);

  LearnerConfig config_;
  ImageShape shape_;
  std::unique_ptr<Network> network_;
  std::unique_ptr<ProjectionHead> head_;
  SgdOptimizer opt_;
  Rng aug_rng_;
};

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
