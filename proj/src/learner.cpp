#include "ssd/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "ssd/autograd.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<Example> concat(std::span<const Example> a, std::span<const Example> b) {
  std::vector<Example> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

ClassMeans compute_class_means(const Tensor& features, std::span<const int> labels) {
  if (features.rank() != 2) throw ShapeError("compute_class_means: features must be [N, F], got " + to_string(features.shape()));
  const auto n = static_cast<std::size_t>(features.dim(0));
  const auto f = static_cast<std::size_t>(features.dim(1));
  if (labels.size() != n) throw ShapeError("compute_class_means: label count mismatch");
  const auto x = features.data();
  std::map<int, std::pair<std::vector<double>, std::size_t>> acc;
  for (std::size_t i = 0; i < n; ++i) {
    auto& [sum, count] = acc[labels[i]];
    sum.resize(f, 0.0);
    for (std::size_t j = 0; j < f; ++j) sum[j] += static_cast<double>(x[i * f + j]);
    ++count;
  }
  ClassMeans out;
  for (auto& [c, entry] : acc) {
    auto& [sum, count] = entry;
    double norm = 0;
    for (auto& v : sum) {
      v /= static_cast<double>(count);
      norm += v * v;
    }
    norm = std::max(std::sqrt(norm), 1e-12);
    std::vector<Real> mean(f);
    for (std::size_t j = 0; j < f; ++j) mean[j] = static_cast<Real>(sum[j] / norm);
    out.classes.push_back(c);
    out.means.push_back(std::move(mean));
  }
  return out;
}

std::vector<int> ncm_classify(const ClassMeans& means, const Tensor& features) {
  if (means.empty()) throw std::invalid_argument("ncm_classify: no class means");
  if (features.rank() != 2) throw ShapeError("ncm_classify: features must be [N, F], got " + to_string(features.shape()));
  const auto n = static_cast<std::size_t>(features.dim(0));
  const auto f = static_cast<std::size_t>(features.dim(1));
  if (means.means.front().size() != f) throw ShapeError("ncm_classify: feature width differs from the class means");
  const auto x = features.data();
  std::vector<int> out(n);
  std::vector<double> q(f);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t j = 0; j < f; ++j) {
      q[j] = static_cast<double>(x[i * f + j]);
      norm += q[j] * q[j];
    }
    norm = std::max(std::sqrt(norm), 1e-12);
    for (auto& v : q) v /= norm;
    double best = std::numeric_limits<double>::infinity();
    int best_class = means.classes.front();
    for (std::size_t c = 0; c < means.classes.size(); ++c) {  // ascending ids: strict < keeps the lowest on ties
      double d = 0;
      for (std::size_t j = 0; j < f; ++j) {
        const double diff = q[j] - static_cast<double>(means.means[c][j]);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_class = means.classes[c];
      }
    }
    out[i] = best_class;
  }
  return out;
}

Learner::Learner(LearnerConfig config, ImageShape shape, int num_classes, std::uint64_t seed)
    : config_(config),
      shape_(shape),
      opt_(static_cast<Real>(config.lr)),
      aug_rng_(SeedSplitter(seed).stream("augment")) {
  if (config_.lambda < 0) throw std::invalid_argument("learner: lambda must be >= 0");
  if (config_.replays_per_iter < 1) throw std::invalid_argument("learner: replays_per_iter must be >= 1");
  const SeedSplitter seeds(seed);
  network_ = make_network(config_.backbone, shape, config_.width, num_classes, seeds.derive("learner_init"));
  if (config_.mode == LearnerMode::SCR) {
    head_ = std::make_unique<ProjectionHead>(network_->feature_dim(), seeds.derive("head_init"));
  }
}

std::vector<Tensor> Learner::parameters() const {
  auto params = network_->parameters();
  if (head_) {
    for (const auto& p : head_->named_parameters()) params.push_back(p.tensor);
  }
  return params;
}

Tensor Learner::augment(const Tensor& images) {
  const auto n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::int64_t pad = std::max<std::int64_t>(1, h / 8);
  const auto src = images.data();
  std::vector<Real> out(src.size(), Real(0));
  for (std::int64_t b = 0; b < n; ++b) {
    const auto dy = static_cast<std::int64_t>(uniform_below(aug_rng_, static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const auto dx = static_cast<std::int64_t>(uniform_below(aug_rng_, static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const bool flip = uniform_below(aug_rng_, 2) == 1;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t sy = y + dy;
          const std::int64_t sx = (flip ? w - 1 - x : x) + dx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          out[static_cast<std::size_t>(((b * c + ch) * h + y) * w + x)] =
              src[static_cast<std::size_t>(((b * c + ch) * h + sy) * w + sx)];
        }
      }
    }
  }
  return Tensor::from(images.shape(), std::move(out));
}

Tensor Learner::scr_embeddings(const Tensor& images) {
  return normalize_rows(head_->forward(network_->features(images, true)));
}

TrainStepResult Learner::train_step(std::span<const Example> stream, std::span<const Example> replay) {
  if (stream.empty()) throw std::invalid_argument("learner: empty stream batch");
  auto params = parameters();
  TrainStepResult result;
  std::vector<Tensor> grads;
  {
    GradModeGuard on(true);
    Tensor loss;
    if (config_.mode == LearnerMode::ER) {
      const auto labels = labels_of(stream);
      Tensor lt = cross_entropy(network_->logits(stack_images(stream, shape_), true), labels);
      result.stream_loss = static_cast<double>(lt.item());
      loss = lt;
      if (!replay.empty() && config_.lambda != 0) {
        const auto replay_labels = labels_of(replay);
        Tensor lm = cross_entropy(network_->logits(stack_images(replay, shape_), true), replay_labels);
        result.replay_loss = static_cast<double>(lm.item());
        loss = add(loss, scale(lm, static_cast<Real>(config_.lambda)));
      }
    } else {
      const auto pooled = concat(stream, replay);
      Tensor images = stack_images(pooled, shape_);
      auto labels = labels_of(pooled);
      if (config_.augment) {
        const Tensor views = augment(images);
        std::vector<Real> both(images.data().begin(), images.data().end());
        both.insert(both.end(), views.data().begin(), views.data().end());
        Shape s = images.shape();
        s[0] *= 2;
        images = Tensor::from(s, std::move(both));
        const auto copy = labels;
        labels.insert(labels.end(), copy.begin(), copy.end());
      }
      loss = supervised_contrastive(scr_embeddings(images), labels, static_cast<Real>(config_.temperature));
      result.stream_loss = static_cast<double>(loss.item());
    }
    result.total_loss = static_cast<double>(loss.item());
    grads = grad(loss, params, {.create_graph = false, .allow_unused = true});
  }
  opt_.step(params, grads);
  return result;
}

TrainStepResult Learner::replay_step(std::span<const Example> replay) {
  if (replay.empty()) return {};
  if (config_.mode == LearnerMode::SCR) return train_step(replay, {});
  auto params = parameters();
  TrainStepResult result;
  std::vector<Tensor> grads;
  {
    GradModeGuard on(true);
    const auto labels = labels_of(replay);
    Tensor lm = cross_entropy(network_->logits(stack_images(replay, shape_), true), labels);
    result.replay_loss = static_cast<double>(lm.item());
    Tensor loss = scale(lm, static_cast<Real>(config_.lambda));
    result.total_loss = static_cast<double>(loss.item());
    grads = grad(loss, params, {.create_graph = false, .allow_unused = true});
  }
  opt_.step(params, grads);
  return result;
}

int Learner::replay_repeat(MemoryBuffer& memory, Rng& rng, std::size_t replay_batch) {
  int steps = 0;
  for (int r = 1; r < config_.replays_per_iter; ++r) {
    const auto batch = memory.sample_replay_batch(replay_batch, rng);
    if (batch.empty()) break;
    replay_step(batch);
    ++steps;
  }
  return steps;
}

Tensor Learner::features_of(std::span<const Example> examples) {
  NoGradGuard off;
  std::vector<Real> values;
  std::int64_t width = network_->feature_dim();
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const auto chunk = examples.subspan(start, std::min(kEvalChunk, examples.size() - start));
    const Tensor f = network_->features(stack_images(chunk, shape_), false);
    values.insert(values.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from({static_cast<std::int64_t>(examples.size()), width}, std::move(values));
}

ClassMeans Learner::class_means(const MemoryBuffer& memory) {
  const auto examples = memory.examples_at(memory.filled_indices());
  if (examples.empty()) return {};
  const auto labels = labels_of(examples);
  return compute_class_means(features_of(examples), labels);
}

std::vector<int> Learner::predict(std::span<const Example> examples, const ClassMeans* means) {
  if (means) return ncm_classify(*means, features_of(examples));
  NoGradGuard off;
  std::vector<int> out;
  out.reserve(examples.size());
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const auto chunk = examples.subspan(start, std::min(kEvalChunk, examples.size() - start));
    const Tensor logits = network_->logits(stack_images(chunk, shape_), false);
    const auto k = static_cast<std::size_t>(logits.dim(1));
    const auto v = logits.data();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto row = v.subspan(i * k, k);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double Learner::accuracy(std::span<const Example> examples, const ClassMeans* means) {
  if (examples.empty()) return 0.0;
  const auto predicted = predict(examples, means);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) correct += predicted[i] == examples[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
