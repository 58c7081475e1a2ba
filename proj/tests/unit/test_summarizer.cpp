#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "ssd/autograd.hpp"
#include "ssd/summarizer.hpp"
#include "ssd/verify.hpp"

using namespace ssd;

namespace {

const ImageShape kShape{3, 8, 8};

SummarizerConfig small_config() {
  SummarizerConfig c;
  c.width = 4;
  return c;
}

std::vector<Example> batch_of(std::initializer_list<int> labels, Rng& rng, std::int64_t& index) {
  std::vector<Example> out;
  for (int c : labels) out.push_back(test::random_example(kShape, rng, c, index++));
  return out;
}

Tensor rows(std::initializer_list<std::initializer_list<double>> values) {
  std::vector<Real> flat;
  std::int64_t r = 0, f = 0;
  for (const auto& row : values) {
    f = static_cast<std::int64_t>(row.size());
    for (double v : row) flat.push_back(static_cast<Real>(v));
    ++r;
  }
  return Tensor::from({r, f}, std::move(flat));
}

const FeatureFn identity_features = [](const Tensor& x) { return x; };

}  // namespace

TEST_SUITE("summarizer") {

TEST_CASE("gradient matching of a set against itself is zero") {
  ConvNet3 net({kShape, 4, 3}, 1);
  const LossFn loss = [&](const Tensor& x, std::span<const int> y) { return cross_entropy(net.logits(x, false), y); };
  Rng rng(1);
  std::int64_t idx = 0;
  const auto ex = batch_of({2, 2, 2}, rng, idx);
  const Tensor x = stack_images(ex, kShape, true);
  const auto y = labels_of(ex);
  const Tensor lg = gradient_match_loss(loss, net.parameters(), x, y, stack_images(ex, kShape), y);
  CHECK(lg.item() == 0);
}

// Two logits (w0 x, w1 x) with w = (0.3, -0.2), class 0; M_c = {1}, B_c = {2}.
// Reference from torch.autograd: ||g(1) - g(2)||_2 = 0.22675807700894279.
TEST_CASE("gradient matching on a two-logit linear model") {
  Tensor w = Tensor::from({2}, {0.3, -0.2}, true);
  const LossFn loss = [&](const Tensor& x, std::span<const int> y) {
    return cross_entropy(mul(reshape(x, {-1, 1}), reshape(w, {1, 2})), y);
  };
  const std::vector<int> y{0};
  const std::vector<Tensor> params{w};
  const Tensor lg = gradient_match_loss(loss, params, Tensor::from({1}, {1}, true), y, Tensor::from({1}, {2}), y);
  CHECK(lg.item() == doctest::Approx(0.22675807700894279).epsilon(1e-14));
}

TEST_CASE("gradient matching rejects mixed classes") {
  Tensor w = Tensor::from({2}, {0.3, -0.2}, true);
  const LossFn loss = [&](const Tensor& x, std::span<const int> y) {
    return cross_entropy(mul(reshape(x, {-1, 1}), reshape(w, {1, 2})), y);
  };
  const std::vector<Tensor> params{w};
  const std::vector<int> a{0}, b{1};
  CHECK_THROWS(gradient_match_loss(loss, params, Tensor::from({1}, {1}, true), a, Tensor::from({1}, {2}), b));
}

TEST_CASE("relationship vector through a stub feature map") {
  const Tensor one = rows({{0.4, -1.0}});
  CHECK(relationship(identity_features, one, one).to_vector() == std::vector<Real>{0});
  const Tensor rho = relationship(identity_features, rows({{1}, {3}}), rows({{0}, {5}}));
  CHECK(rho.to_vector() == std::vector<Real>{2, 3});
  CHECK(relationship(identity_features, one, Tensor()).numel() == 0);
}

TEST_CASE("relationship loss") {
  const Tensor syn = rows({{1}, {3}});
  CHECK(relationship_loss(identity_features, syn, rows({{7}}), Tensor()).item() == 0);
  CHECK(relationship_loss(identity_features, syn, rows({{2}, {2}, {2}}), rows({{0}, {5}})).item() == 0);
  // rho_syn = [2, 3] and rho_real = [2, 5] against anchors (0,0) and (5,0)
  const Tensor anchors = rows({{0, 0}, {5, 0}});
  const Tensor s2 = rows({{2, 0}});
  const Tensor r2 = rows({{0.4, std::sqrt(3.84)}});
  CHECK(relationship(identity_features, s2, anchors).to_vector() == std::vector<Real>{2, 3});
  const auto rr = relationship(identity_features, r2, anchors).to_vector();
  CHECK(rr[0] == doctest::Approx(2).epsilon(1e-14));
  CHECK(rr[1] == doctest::Approx(5).epsilon(1e-14));
  CHECK(relationship_loss(identity_features, s2, r2, anchors).item() == doctest::Approx(2).epsilon(1e-14));
}

TEST_CASE("pixel learning rate by images per class") {
  CHECK(pixel_learning_rate(1) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(pixel_learning_rate(5) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(pixel_learning_rate(10) == doctest::Approx(4e-3).epsilon(1e-12));
  CHECK(pixel_learning_rate(3) == doctest::Approx(2e-4 * std::sqrt(5.0)).epsilon(1e-12));
  CHECK(pixel_learning_rate(20) == doctest::Approx(4e-3 * 16).epsilon(1e-12));
  CHECK_THROWS(pixel_learning_rate(0));
}

TEST_CASE("gamma zero reduces to pure gradient matching") {
  auto config = small_config();
  config.gamma = 0;
  Summarizer s(config, kShape, 4, 2, 3);
  Rng rng(2);
  std::int64_t idx = 0;
  const Tensor syn = stack_images(batch_of({1, 1}, rng, idx), kShape, true);
  const Tensor real = stack_images(batch_of({1, 1, 1}, rng, idx), kShape);
  const Tensor anchors = stack_images(batch_of({0, 2}, rng, idx), kShape);
  double lg = -1, lr = -1;
  GradModeGuard on(true);
  const Tensor ls = s.summarize_loss(syn, 1, real, anchors, &lg, &lr);
  CHECK(static_cast<double>(ls.item()) == lg);
  CHECK(lr == 0);
}

TEST_CASE("identity inputs collapse both losses") {
  const auto outcome = verify_identity_collapse(5);
  INFO(outcome.detail);
  CHECK(outcome.passed);
}

TEST_CASE("summarize step changes only the class's slots") {
  Summarizer s(small_config(), kShape, 4, 2, 4);
  MemoryBuffer memory(8, 4);
  RecentQueue queue;
  Rng rng(3);
  std::int64_t idx = 0;
  s.maybe_summarize(memory, queue, batch_of({0, 0, 1, 1, 2}, rng, idx));
  for (const auto& e : batch_of({0, 0, 0, 1}, rng, idx)) queue.push(e);
  const auto before = memory.slots();
  REQUIRE(s.summarize_step(memory, queue, 0));
  const auto mine = memory.summarized_of(0);
  bool moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& now = memory.slot(i);
    CHECK(now.tag == before[i].tag);
    CHECK(now.example.label == before[i].example.label);
    const bool is_mine = std::find(mine.begin(), mine.end(), i) != mine.end();
    if (!is_mine) {
      CHECK(now.example.pixels == before[i].example.pixels);
    } else {
      moved = moved || *now.example.pixels != *before[i].example.pixels;
      for (Real v : *now.example.pixels) CHECK((v >= 0 && v <= 1));
    }
  }
  CHECK(moved);
  REQUIRE(s.trace().size() == 1);
  CHECK(s.trace()[0].cls == 0);
  CHECK(s.trace()[0].grad_loss >= 0);
  CHECK(s.trace()[0].relation_loss >= 0);
  CHECK(!s.summarize_step(memory, RecentQueue(), 1));
  CHECK(s.trace().size() == 1);
}

TEST_CASE("summarize step fails loudly without second-order gradients") {
  auto config = small_config();
  config.create_graph = false;
  Summarizer s(config, kShape, 4, 1, 5);
  MemoryBuffer memory(4, 4);
  RecentQueue queue;
  Rng rng(4);
  std::int64_t idx = 0;
  s.maybe_summarize(memory, queue, batch_of({0, 0}, rng, idx));
  CHECK_THROWS_AS(s.summarize_step(memory, queue, 0), AutogradError);
}

TEST_CASE("summarize events fire every tau iterations") {
  for (int tau : {6, 1}) {
    auto config = small_config();
    config.interval = tau;
    Summarizer s(config, kShape, 4, 1, 6);
    MemoryBuffer memory(4, 4);
    RecentQueue queue;
    Rng rng(5);
    std::int64_t idx = 0;
    for (int n = 0; n < 18; ++n) s.maybe_summarize(memory, queue, batch_of({1, 1}, rng, idx));
    std::vector<std::int64_t> fired;
    for (const auto& e : s.trace()) fired.push_back(e.iteration);
    if (tau == 6) {
      CHECK(fired == std::vector<std::int64_t>{6, 12, 18});
    } else {
      CHECK(fired.size() == 17);  // iteration 1 initializes instead
      CHECK(fired.front() == 2);
    }
  }
}

TEST_CASE("an unseen class is initialized regardless of the iteration") {
  Summarizer s(small_config(), kShape, 4, 1, 7);
  MemoryBuffer memory(4, 4);
  RecentQueue queue;
  Rng rng(6);
  std::int64_t idx = 0;
  for (int n = 0; n < 5; ++n) s.maybe_summarize(memory, queue, batch_of({0}, rng, idx));
  const auto b = batch_of({0, 3}, rng, idx);
  s.maybe_summarize(memory, queue, b);  // n = 6: class 0 summarizes, class 3 initializes
  CHECK(memory.initialized(3));
  CHECK(s.last_seed_indices() == std::vector<std::int64_t>{b[1].stream_index});
  REQUIRE(s.trace().size() == 1);
  CHECK(s.trace()[0].cls == 0);
}

TEST_CASE("summarizing network reinitializes only on a wholly new class set") {
  Summarizer s(small_config(), kShape, 6, 1, 8);
  Rng rng(7);
  std::int64_t idx = 0;
  CHECK(s.on_new_classes(batch_of({0, 1}, rng, idx)));
  const auto after_first = test::snapshot(s.network().parameters());
  CHECK(!s.on_new_classes(batch_of({1, 2}, rng, idx)));  // 2 arrives mid-task
  CHECK(!s.on_new_classes(batch_of({0}, rng, idx)));
  CHECK(s.on_new_classes(batch_of({3, 4}, rng, idx)));
  CHECK(s.reinit_count() == 2);

  Summarizer t(small_config(), kShape, 6, 1, 8);
  CHECK(t.on_new_classes(batch_of({0, 1}, rng, idx)));
  CHECK(test::snapshot(t.network().parameters()) == after_first);
}

TEST_CASE("model update without originals is a plain SGD step on the stream batch") {
  Summarizer a(small_config(), kShape, 4, 1, 9), b(small_config(), kShape, 4, 1, 9);
  Rng rng(8);
  std::int64_t idx = 0;
  const auto batch = batch_of({0, 1, 2}, rng, idx);
  const auto originals = batch_of({3, 3}, rng, idx);

  auto params = b.network().parameters();
  const auto before = test::snapshot(params);
  const auto labels = labels_of(batch);
  std::vector<Tensor> g;
  {
    GradModeGuard on(true);
    g = grad(cross_entropy(b.network().logits(stack_images(batch, kShape), true), labels), params);
  }
  a.update_model(batch, {});
  const auto after = test::snapshot(a.network().parameters());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto gi = g[i].to_vector();
    for (std::size_t j = 0; j < gi.size(); ++j) {
      CHECK(after[i][j] == doctest::Approx(before[i][j] - 0.01 * gi[j]).epsilon(1e-13));
    }
  }

  Summarizer c(small_config(), kShape, 4, 1, 9), d(small_config(), kShape, 4, 1, 9);
  c.update_model(batch, originals);
  d.update_model(batch, {});
  CHECK(test::snapshot(c.network().parameters()) != test::snapshot(d.network().parameters()));

  auto no_past = small_config();
  no_past.past_assist = false;
  Summarizer e(no_past, kShape, 4, 1, 9);
  e.update_model(batch, originals);
  CHECK(test::snapshot(e.network().parameters()) == test::snapshot(d.network().parameters()));
}

}  // TEST_SUITE
