#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "ssd/autograd.hpp"
#include "ssd/learner.hpp"

using namespace ssd;

namespace {

const ImageShape kShape{3, 8, 8};

LearnerConfig small_config(LearnerMode mode = LearnerMode::ER) {
  LearnerConfig c;
  c.backbone = Backbone::ConvNet3;
  c.width = 4;
  c.mode = mode;
  return c;
}

std::vector<Example> examples(std::initializer_list<int> labels, Rng& rng) {
  std::vector<Example> out;
  for (int c : labels) out.push_back(test::random_example(kShape, rng, c));
  return out;
}

ClassMeans means_of(std::vector<int> classes, std::vector<std::vector<Real>> means) {
  ClassMeans m;
  m.classes = std::move(classes);
  m.means = std::move(means);
  return m;
}

}  // namespace

TEST_SUITE("learner") {

TEST_CASE("class mean of orthogonal unit features") {
  const Tensor f = Tensor::from({2, 2}, {1, 0, 0, 1});
  const std::vector<int> y{4, 4};
  const auto m = compute_class_means(f, y);
  REQUIRE(m.classes == std::vector<int>{4});
  CHECK(m.means[0][0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(m.means[0][1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("single and duplicated exemplars") {
  const Tensor one = Tensor::from({1, 2}, {3, 4});
  const Tensor two = Tensor::from({2, 2}, {3, 4, 3, 4});
  const std::vector<int> y1{0}, y2{0, 0};
  const auto a = compute_class_means(one, y1), b = compute_class_means(two, y2);
  CHECK(a.means[0][0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(a.means[0][1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(a.means == b.means);
}

TEST_CASE("nearest class mean") {
  const auto m = means_of({1, 5}, {{0.6, 0.8}, {1, 0}});
  CHECK(ncm_classify(m, Tensor::from({1, 2}, {3, 4})) == std::vector<int>{1});
  // equidistant from both means: the lower id wins
  const auto tie = means_of({2, 7}, {{1, 0}, {0, 1}});
  CHECK(ncm_classify(tie, Tensor::from({1, 2}, {1, 1})) == std::vector<int>{2});
  // 1-D means -1 and +1; feature 0.2 normalizes to +1
  const auto line = means_of({0, 1}, {{-1}, {1}});
  CHECK(ncm_classify(line, Tensor::from({1, 1}, {0.2})) == std::vector<int>{1});
  CHECK_THROWS(ncm_classify(ClassMeans{}, Tensor::from({1, 1}, {0.2})));
}

TEST_CASE("ER step equals a hand-rolled SGD step on both cross-entropy terms") {
  auto config = small_config();
  config.lambda = 0.5;
  Learner a(config, kShape, 4, 11), b(config, kShape, 4, 11);
  Rng rng(1);
  const auto stream = examples({0, 1, 1}, rng);
  const auto replay = examples({2, 3, 0, 2}, rng);

  auto params = b.parameters();
  const auto before = test::snapshot(params);
  std::vector<Tensor> g;
  double lt = 0, lm = 0;
  {
    GradModeGuard on(true);
    const auto ys = labels_of(stream), ym = labels_of(replay);
    const Tensor t = cross_entropy(b.network().logits(stack_images(stream, kShape), true), ys);
    const Tensor m = cross_entropy(b.network().logits(stack_images(replay, kShape), true), ym);
    lt = t.item();
    lm = m.item();
    g = grad(add(t, scale(m, 0.5)), params);
  }
  const auto r = a.train_step(stream, replay);
  CHECK(r.stream_loss == doctest::Approx(lt).epsilon(1e-14));
  CHECK(r.replay_loss == doctest::Approx(lm).epsilon(1e-14));
  CHECK(r.total_loss == doctest::Approx(lt + 0.5 * lm).epsilon(1e-14));
  const auto after = test::snapshot(a.parameters());
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto gi = g[i].to_vector();
    for (std::size_t j = 0; j < gi.size(); ++j) {
      CHECK(after[i][j] == doctest::Approx(before[i][j] - 0.1 * gi[j]).epsilon(1e-13));
    }
  }
}

TEST_CASE("lambda zero and empty replay both reduce to the stream term") {
  auto zero = small_config();
  zero.lambda = 0;
  Learner a(zero, kShape, 4, 12), b(small_config(), kShape, 4, 12);
  Rng rng(2);
  const auto stream = examples({0, 1}, rng);
  const auto replay = examples({2, 3}, rng);
  a.train_step(stream, replay);
  const auto r = b.train_step(stream, {});
  CHECK(r.replay_loss == 0);
  CHECK(test::snapshot(a.parameters()) == test::snapshot(b.parameters()));
}

TEST_CASE("replay_repeat runs r-1 memory-only steps on fresh batches") {
  MemoryBuffer memory = MemoryBuffer::reservoir_only(40);
  Rng fill(3);
  for (int i = 0; i < 40; ++i) memory.reservoir_update(test::random_example(kShape, fill, i % 4, i), fill);

  auto five = small_config();
  five.replays_per_iter = 5;
  Learner l(five, kShape, 4, 13);
  Rng rng(4);
  const auto before = memory.stats().replay_batches;
  CHECK(l.replay_repeat(memory, rng, 10) == 4);
  CHECK(memory.stats().replay_batches - before == 4);

  Learner one(small_config(), kShape, 4, 13);
  const auto p = test::snapshot(one.parameters());
  CHECK(one.replay_repeat(memory, rng, 10) == 0);
  CHECK(test::snapshot(one.parameters()) == p);

  MemoryBuffer empty = MemoryBuffer::reservoir_only(5);
  CHECK(l.replay_repeat(empty, rng, 10) == 0);
}

TEST_CASE("SCR step trains backbone and projection head") {
  auto config = small_config(LearnerMode::SCR);
  config.augment = true;
  Learner l(config, kShape, 4, 14);
  REQUIRE(l.head() != nullptr);
  Rng rng(5);
  const auto before = test::snapshot(l.parameters());
  const auto r = l.train_step(examples({0, 1, 1}, rng), examples({0, 2, 2}, rng));
  CHECK(std::isfinite(r.total_loss));
  CHECK(r.total_loss > 0);
  CHECK(test::snapshot(l.parameters()) != before);
}

TEST_CASE("NCM prediction on memory exemplars") {
  Learner l(small_config(LearnerMode::SCR), kShape, 3, 15);
  MemoryBuffer memory(3, 3);
  Rng rng(6);
  std::vector<Example> exemplars;
  for (int c = 0; c < 3; ++c) {
    exemplars.push_back(test::random_example(kShape, rng, c, c));
    memory.init_class_slots(c, std::span(&exemplars.back(), 1), rng);
  }
  const auto means = l.class_means(memory);
  CHECK(means.classes == std::vector<int>{0, 1, 2});
  // each stored exemplar is its own class mean
  CHECK(l.predict(exemplars, &means) == std::vector<int>{0, 1, 2});
  CHECK(l.accuracy(exemplars, &means) == 1.0);
}

TEST_CASE("perfect and chance-level accuracy") {
  Learner l(small_config(), kShape, 100, 16);
  Rng rng(7);
  std::vector<Example> test_set;
  for (int i = 0; i < 2000; ++i) test_set.push_back(test::random_example(kShape, rng, static_cast<int>(uniform_below(rng, 100))));
  const auto predicted = l.predict(test_set, nullptr);
  // relabel with the model's own output: a perfect classifier by construction
  std::vector<Example> relabelled = test_set;
  for (std::size_t i = 0; i < relabelled.size(); ++i) relabelled[i].label = predicted[i];
  CHECK(l.accuracy(relabelled, nullptr) == 1.0);
  // labels drawn independently of the input: near 1/100
  CHECK(l.accuracy(test_set, nullptr) < 0.05);
}

}  // TEST_SUITE
