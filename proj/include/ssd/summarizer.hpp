#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <vector>

#include "ssd/memory.hpp"
#include "ssd/models.hpp"
#include "ssd/optim.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// Maps a batch of images and labels to a scalar training loss.
using LossFn = std::function<Tensor(const Tensor& images, std::span<const int> labels)>;
/// Maps a batch of images to a [B, F] feature matrix.
using FeatureFn = std::function<Tensor(const Tensor& images)>;

/// Sum over parameter tensors of ||grad_syn - grad_real||_2. The real-side
/// gradients are constants; with `create_graph` the result is differentiable
/// with respect to `syn`. Every label on both sides must be the same class.
Tensor gradient_match_loss(const LossFn& loss, std::span<const Tensor> params, const Tensor& syn,
                           std::span<const int> syn_labels, const Tensor& real, std::span<const int> real_labels,
                           bool create_graph = true);

/// Distances from the mean feature of `x` to each anchor's feature; anchor
/// features are constants. An undefined or zero-row `anchors` gives an empty vector.
Tensor relationship(const FeatureFn& features, const Tensor& x, const Tensor& anchors);

/// ||rho(syn) - rho(real)||_2 with the real side held constant; 0 without anchors.
Tensor relationship_loss(const FeatureFn& features, const Tensor& syn, const Tensor& real, const Tensor& anchors);

/// Pixel step size by images per class: 2e-4, 1e-3 and 4e-3 at 1, 5 and 10,
/// log-linear in k between and beyond those points.
double pixel_learning_rate(int images_per_class);

struct SummarizerConfig {
  std::int64_t width = 128;
  double model_lr = 0.01;
  double model_momentum = 0.9;
  double pixel_lr = 0;  // 0 selects pixel_learning_rate(k)
  double pixel_momentum = 0.5;
  int interval = 6;  // tau
  double gamma = 1.0;
  bool summarize = true;
  bool past_assist = true;
  /// Ablation hook: build the synthetic-side gradients without a tape. A
  /// summarize step then has no pixel gradient and refuses to run.
  bool create_graph = true;
};

struct SummarizeEvent {
  std::int64_t iteration;
  int cls;
  double grad_loss;
  double relation_loss;
  double total_loss;
};

/// Owns the summarizing network and drives one stream iteration of the
/// memory-summarizing algorithm.
class Summarizer {
 public:
  Summarizer(SummarizerConfig config, ImageShape shape, int num_classes, int images_per_class, std::uint64_t seed);

  const SummarizerConfig& config() const { return config_; }
  ConvNet3& network() { return *network_; }
  const ConvNet3& network() const { return *network_; }
  std::int64_t iteration() const { return iteration_; }
  std::int64_t reinit_count() const { return reinit_count_; }
  double pixel_lr() const { return pixel_lr_; }
  const std::vector<SummarizeEvent>& trace() const { return trace_; }
  /// Examples of `batch` used to seed newly reserved slots in the last
  /// `maybe_summarize` call; these are not offered to the reservoir.
  const std::vector<std::int64_t>& last_seed_indices() const { return last_seeds_; }

  /// One iteration: bump n, push the batch into the recent queue,
  /// reinitialize the network when the batch opens a new class set, reserve
  /// slots for unseen classes and, every `interval` iterations, summarize the
  /// other classes present.
  void maybe_summarize(MemoryBuffer& memory, RecentQueue& queue, std::span<const Example> batch);

  /// Reinitializes the network if `batch` holds a class outside the seen
  /// set and none inside it. Returns true when it did.
  bool on_new_classes(std::span<const Example> batch);

  /// One pixel step on M_c against the queued real images of `c`. Returns
  /// false (and logs) when the queue holds nothing for `c`.
  bool summarize_step(MemoryBuffer& memory, const RecentQueue& queue, int c);

  /// L_s = L_g + gamma * L_r for the given images, with L_g taken over the
  /// conv and linear weights; also reports the parts.
  Tensor summarize_loss(const Tensor& syn, int c, const Tensor& real, const Tensor& anchors, double* grad_part,
                        double* relation_part);

  /// One SGD step on the network with the stream batch and, when past
  /// assistance is on and `originals` is nonempty, the stored original images.
  void update_model(std::span<const Example> batch, std::span<const Example> originals);

 private:
  LossFn loss_fn();
  FeatureFn feature_fn();

  SummarizerConfig config_;
  ImageShape shape_;
  int num_classes_;
  int per_class_;
  std::uint64_t seed_;
  std::unique_ptr<ConvNet3> network_;
  SgdOptimizer model_opt_;
  double pixel_lr_;
  std::map<int, SgdOptimizer> pixel_opts_;
  std::set<int> seen_;
  std::int64_t iteration_ = 0;
  std::int64_t reinit_count_ = 0;
  std::vector<SummarizeEvent> trace_;
  std::vector<std::int64_t> last_seeds_;
  Rng slot_rng_;
};

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
