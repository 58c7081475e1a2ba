#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "ssd/autograd.hpp"
#include "ssd/data.hpp"
#include "ssd/models.hpp"
#include "ssd/optim.hpp"

using namespace ssd;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ssd_data_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& file, const std::vector<unsigned char>& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

bool same_bytes(const Dataset& a, const Dataset& b) {
  auto same = [](const std::vector<Example>& x, const std::vector<Example>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].label != y[i].label || *x[i].pixels != *y[i].pixels) return false;
    }
    return true;
  };
  return a.shape == b.shape && a.num_classes == b.num_classes && same(a.train, b.train) && same(a.test, b.test);
}

}  // namespace

TEST_SUITE("stream-data") {

TEST_CASE("cifar record reader takes the fine label and scales pixels") {
  const ImageShape s{3, 2, 2};
  std::vector<unsigned char> bytes;
  for (int r = 0; r < 2; ++r) {
    bytes.push_back(static_cast<unsigned char>(9));       // coarse
    bytes.push_back(static_cast<unsigned char>(40 + r));  // fine
    for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<unsigned char>(i * 20 + r));
  }
  const auto file = scratch("two.bin");
  write_bytes(file, bytes);
  CHECK(cifar_record_bytes(s) == 14);
  const auto ex = read_cifar_records(file, s, 2);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].label == 40);
  CHECK(ex[1].label == 41);
  CHECK((*ex[0].pixels)[0] == 0);
  CHECK((*ex[0].pixels)[11] == doctest::Approx(220.0 / 255.0).epsilon(1e-15));
  CHECK((*ex[1].pixels)[1] == doctest::Approx(21.0 / 255.0).epsilon(1e-15));
}

TEST_CASE("truncated cifar file names expected and actual size") {
  const ImageShape s{3, 32, 32};
  const auto file = scratch("truncated.bin");
  write_bytes(file, std::vector<unsigned char>(3073 * 2 + 100, 0));
  try {
    (void)read_cifar_records(file, s, 3);
    FAIL("expected a size error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(std::to_string(3074 * 3)) != std::string::npos);
    CHECK(msg.find(std::to_string(3073 * 2 + 100)) != std::string::npos);
  }
}

TEST_CASE("full cifar-100 directory must hold 50000 and 10000 records") {
  const auto dir = scratch("fake_cifar");
  std::filesystem::create_directories(dir);
  write_bytes(dir / "train.bin", std::vector<unsigned char>(3074, 0));
  write_bytes(dir / "test.bin", std::vector<unsigned char>(3074, 0));
  try {
    (void)load_cifar100(dir);
    FAIL("expected a size error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(std::to_string(kCifar100Train * 3074)) != std::string::npos);
  }
}

TEST_CASE("cifar writer and reader round trip") {
  const ImageShape s{3, 4, 4};
  Rng rng(3);
  std::vector<Example> ex;
  for (int i = 0; i < 5; ++i) ex.push_back(test::random_example(s, rng, i * 7));
  const auto file = scratch("roundtrip.bin");
  write_cifar_records(file, ex, s);
  const auto back = read_cifar_records(file, s, 5);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    CHECK(back[i].label == ex[i].label);
    for (std::size_t j = 0; j < ex[i].pixels->size(); ++j) {
      CHECK(std::abs((*back[i].pixels)[j] - (*ex[i].pixels)[j]) <= 0.5 / 255.0 + 1e-12);
    }
  }
}

TEST_CASE("make_tasks partitions 100 classes into 10 disjoint tasks") {
  SyntheticSpec spec;
  spec.num_classes = 100;
  spec.per_class = 2;
  spec.test_per_class = 1;
  spec.shape = {1, 4, 4};
  const Dataset d = generate_synthetic(spec);
  const auto seq = make_tasks(d, 10, 5);
  REQUIRE(seq.tasks.size() == 10);
  std::set<int> all;
  std::set<std::int64_t> indices;
  for (std::size_t t = 0; t < seq.tasks.size(); ++t) {
    const auto& task = seq.tasks[t];
    CHECK(task.classes.size() == 10);
    CHECK(task.train.size() == 20);
    CHECK(task.test.size() == 10);
    for (int c : task.classes) {
      CHECK(all.insert(c).second);
      CHECK(seq.task_of_class[c] == static_cast<int>(t));
    }
    for (const auto& e : task.train) {
      CHECK(std::count(task.classes.begin(), task.classes.end(), e.label) == 1);
      CHECK(indices.insert(e.stream_index).second);
    }
  }
  CHECK(all.size() == 100);
  CHECK(seq.stream_length() == 200);
  CHECK(*indices.begin() == 0);
  CHECK(*indices.rbegin() == 199);
}

TEST_CASE("make_tasks is deterministic and seed dependent") {
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.per_class = 3;
  spec.test_per_class = 1;
  spec.shape = {1, 4, 4};
  const Dataset d = generate_synthetic(spec);
  const auto a = make_tasks(d, 5, 1), b = make_tasks(d, 5, 1), c = make_tasks(d, 5, 2);
  bool differs = false;
  for (std::size_t t = 0; t < a.tasks.size(); ++t) {
    CHECK(a.tasks[t].classes == b.tasks[t].classes);
    for (std::size_t i = 0; i < a.tasks[t].train.size(); ++i) {
      CHECK(a.tasks[t].train[i].pixels == b.tasks[t].train[i].pixels);
    }
    differs = differs || a.tasks[t].classes != c.tasks[t].classes;
  }
  CHECK(differs);

  const auto one = make_tasks(d, 1, 1);
  REQUIRE(one.tasks.size() == 1);
  CHECK(one.tasks[0].classes.size() == 10);
  CHECK(one.tasks[0].train.size() == 30);
  CHECK_THROWS_AS(make_tasks(d, 3, 1), std::invalid_argument);
}

TEST_CASE("stream batches of 10 over 25 examples") {
  Task task;
  for (int i = 0; i < 25; ++i) task.train.push_back(test::constant_example({1, 1, 1}, Real(i), 0, i));
  auto stream = stream_batches(task, 10);
  CHECK(stream.batch_count() == 3);
  std::vector<std::size_t> sizes;
  std::vector<std::int64_t> seen;
  while (auto b = stream.next()) {
    sizes.push_back(b->size());
    for (const auto& e : *b) seen.push_back(e.stream_index);
  }
  CHECK(sizes == std::vector<std::size_t>{10, 10, 5});
  std::vector<std::int64_t> expected(25);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(seen == expected);
  CHECK(!stream.next().has_value());
}

TEST_CASE("synthetic generation is byte-identical for a fixed spec") {
  SyntheticSpec spec;  // 10 classes, 500 per class, 16x16, seed 7
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a.train.size() == 5000);
  CHECK(a.test.size() == 1000);
  CHECK(same_bytes(a, b));
  spec.seed = 8;
  CHECK(!same_bytes(a, generate_synthetic(spec)));
  for (const auto& e : a.train) {
    CHECK(e.pixels->size() == 3 * 16 * 16);
    const auto [lo, hi] = std::minmax_element(e.pixels->begin(), e.pixels->end());
    if (*lo < 0 || *hi > 1) FAIL("pixel outside [0, 1]");
  }
}

TEST_CASE("stack_images lays examples out as [B,C,H,W]") {
  const ImageShape s{2, 1, 2};
  const std::vector<Example> ex{Example{std::make_shared<const Pixels>(Pixels{1, 2, 3, 4}), 0, -1},
                                Example{std::make_shared<const Pixels>(Pixels{5, 6, 7, 8}), 1, -1}};
  const Tensor t = stack_images(ex, s);
  CHECK(t.shape() == Shape{2, 2, 1, 2});
  CHECK(t.to_vector() == std::vector<Real>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(labels_of(ex) == std::vector<int>{0, 1});
}

// Offline oracle for the default synthetic spec: ConvNet3 (width 32), SGD lr
// 0.05 momentum 0.9, batch 50, five shuffled epochs. Calibrated once; the
// observed accuracy (every test image correct) is pinned.
TEST_CASE("offline ConvNet3 separates the synthetic classes") {
  const SyntheticSpec spec;
  const Dataset d = generate_synthetic(spec);
  ConvNet3 net({spec.shape, 32, spec.num_classes}, 0);
  SgdOptimizer opt(0.05, 0.9);
  Rng rng(0);
  std::vector<std::size_t> order(d.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < 5; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += 50) {
      std::vector<Example> batch;
      for (std::size_t i = start; i < start + 50; ++i) batch.push_back(d.train[order[i]]);
      auto params = net.parameters();
      const auto labels = labels_of(batch);
      const auto g = grad(cross_entropy(net.logits(stack_images(batch, spec.shape), true), labels), params);
      opt.step(params, g);
    }
  }
  NoGradGuard off;
  const Tensor logits = net.logits(stack_images(d.test, spec.shape), false);
  int correct = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto row = logits.data().subspan(i * 10, 10);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    correct += best == d.test[i].label;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(d.test.size());
  MESSAGE("offline accuracy " << acc);
  CHECK(acc > 0.9);
  CHECK(acc == 1.0);
}

}  // TEST_SUITE
