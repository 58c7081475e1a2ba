#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "ssd/memory.hpp"

using namespace ssd;

namespace {

const ImageShape kShape{3, 2, 2};

std::vector<Example> of_class(int c, int n, Real base = 0) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i) out.push_back(test::constant_example(kShape, base + Real(i) / 10, c, i));
  return out;
}

}  // namespace

TEST_SUITE("replay-memory") {

TEST_CASE("per-class budget uses the floor") {
  CHECK(per_class_budget(100, 100) == 1);
  CHECK(per_class_budget(1000, 100) == 10);
  CHECK(per_class_budget(105, 100) == 1);
  CHECK_THROWS_AS(per_class_budget(99, 100), std::invalid_argument);
  MemoryBuffer m(105, 100);
  CHECK(m.per_class_budget() == 1);
  CHECK(m.capacity() == 105);
}

TEST_CASE("k=1 reserves one slot holding the single image") {
  MemoryBuffer m(10, 10);
  Rng rng(1);
  const auto batch = of_class(4, 1, 0.5);
  const auto idx = m.init_class_slots(4, batch, rng);
  REQUIRE(idx.size() == 1);
  CHECK(m.slot(idx[0]).tag == SlotTag::Summarized);
  CHECK(m.slot(idx[0]).example.label == 4);
  CHECK(m.slot(idx[0]).example.pixels == batch[0].pixels);
  CHECK(m.count(SlotTag::Summarized) == 1);
  CHECK(m.initialized(4));
}

TEST_CASE("k=5 with three images cycles them") {
  MemoryBuffer m(50, 10);
  Rng rng(2);
  auto batch = of_class(2, 3);
  batch.push_back(test::constant_example(kShape, 0.9, 7));  // other class ignored
  const auto idx = m.init_class_slots(2, batch, rng);
  REQUIRE(idx.size() == 5);
  const int expected[] = {0, 1, 2, 0, 1};
  for (std::size_t i = 0; i < 5; ++i) CHECK(m.slot(idx[i]).example.pixels == batch[expected[i]].pixels);
  CHECK(m.summarized_of(2).size() == 5);
}

TEST_CASE("re-offering an initialized class leaves summarized slots alone") {
  MemoryBuffer m(20, 4);
  Rng rng(3);
  m.init_class_slots(1, of_class(1, 5), rng);
  const auto before = m.slots();
  CHECK(m.init_class_slots(1, of_class(1, 5, 0.3), rng).empty());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.slot(i).example.pixels == before[i].example.pixels);
  CHECK_THROWS_AS(m.init_class_slots(3, of_class(1, 2), rng), std::invalid_argument);
}

TEST_CASE("reservoir inserts while empty slots exist") {
  MemoryBuffer m = MemoryBuffer::reservoir_only(5);
  Rng rng(4);
  for (int i = 0; i < 5; ++i) CHECK(m.reservoir_update(test::constant_example(kShape, 0, 0, i), rng) == MemoryBuffer::Offer::Inserted);
  CHECK(m.filled() == 5);
  CHECK(m.n_seen() == 5);
  for (int i = 5; i < 200; ++i) CHECK(m.reservoir_update(test::constant_example(kShape, 0, 0, i), rng) != MemoryBuffer::Offer::Inserted);
  CHECK(m.filled() == 5);
  CHECK(m.n_seen() == 200);
  CHECK(m.stats().reservoir_replacements + m.stats().reservoir_skips == 195);
}

TEST_CASE("reservoir traffic never touches summarized slots") {
  MemoryBuffer m(30, 5);
  Rng rng(5);
  for (int c = 0; c < 3; ++c) m.init_class_slots(c, of_class(c, 6, Real(c) / 5), rng);
  std::vector<Pixels> before;
  std::vector<std::size_t> summarized;
  for (std::size_t i = 0; i < m.slots().size(); ++i) {
    if (m.slot(i).tag == SlotTag::Summarized) {
      summarized.push_back(i);
      before.push_back(*m.slot(i).example.pixels);
    }
  }
  for (int i = 0; i < 2000; ++i) m.reservoir_update(test::constant_example(kShape, Real(0.99), 4, i), rng);
  for (std::size_t j = 0; j < summarized.size(); ++j) {
    CHECK(m.slot(summarized[j]).tag == SlotTag::Summarized);
    CHECK(*m.slot(summarized[j]).example.pixels == before[j]);
  }
  CHECK(m.count(SlotTag::Original) == 30 - 18);
}

TEST_CASE("replay sampling returns all filled slots when short") {
  MemoryBuffer m = MemoryBuffer::reservoir_only(20);
  Rng rng(6);
  CHECK(m.sample_replay_batch(100, rng).empty());
  for (int i = 0; i < 5; ++i) m.reservoir_update(test::constant_example(kShape, 0, i, i), rng);
  const auto batch = m.sample_replay_batch(100, rng);
  CHECK(batch.size() == 5);
  std::set<std::int64_t> ids;
  for (const auto& e : batch) ids.insert(e.stream_index);
  CHECK(ids.size() == 5);
}

TEST_CASE("replay sampling is uniform over filled slots") {
  MemoryBuffer m(12, 2);
  Rng rng(7);
  m.init_class_slots(0, of_class(0, 6), rng);
  m.init_class_slots(1, of_class(1, 6), rng);
  for (int i = 0; i < 2; ++i) m.reservoir_update(test::constant_example(kShape, 0, 1, 100 + i), rng);
  const auto filled = m.filled_indices();
  REQUIRE(filled.size() == 12);
  std::vector<int> hits(12, 0);
  const int draws = 30000;
  for (int t = 0; t < draws; ++t) {
    const auto idx = m.sample_indices(3, rng);
    CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 3);
    for (auto i : idx) ++hits[i];
  }
  const double expected = draws * 3.0 / 12.0;
  double chi2 = 0;
  for (int h : hits) chi2 += (h - expected) * (h - expected) / expected;
  CHECK(chi2 < 31.3);  // 11 dof, p = 0.001
}

TEST_CASE("summarized and original views") {
  MemoryBuffer m(12, 4);
  Rng rng(8);
  CHECK(m.originals().empty());
  for (int c = 0; c < 3; ++c) m.init_class_slots(c, of_class(c, 3), rng);
  CHECK(m.per_class_budget() == 3);
  CHECK(m.count(SlotTag::Summarized) == 9);
  CHECK(m.other_summarized(0).size() == 6);
  CHECK(m.originals().empty());
  CHECK_THROWS_AS(m.summarized_of(3), std::invalid_argument);

  MemoryBuffer k2(8, 4);
  for (int c = 0; c < 3; ++c) k2.init_class_slots(c, of_class(c, 2), rng);
  CHECK(k2.count(SlotTag::Summarized) == 6);
  CHECK(k2.other_summarized(1).size() == 4);
}

TEST_CASE("write_summarized changes pixels only") {
  MemoryBuffer m(4, 2);
  Rng rng(9);
  const auto idx = m.init_class_slots(1, of_class(1, 2), rng);
  m.write_summarized(idx[0], Pixels(static_cast<std::size_t>(kShape.numel()), Real(0.25)));
  CHECK(m.slot(idx[0]).example.label == 1);
  CHECK(m.slot(idx[0]).tag == SlotTag::Summarized);
  CHECK((*m.slot(idx[0]).example.pixels)[5] == Real(0.25));
  CHECK_THROWS_AS(m.write_summarized(idx[0], Pixels(3, 0)), ShapeError);
}

TEST_CASE("recent queue keeps the newest 64 per class") {
  RecentQueue q;
  CHECK(q.capacity() == 64);
  for (int i = 0; i < 70; ++i) q.push(test::constant_example(kShape, 0, 3, i));
  q.push(test::constant_example(kShape, 0, 5, 1000));
  const auto r = q.recent_of(3);
  REQUIRE(r.size() == 64);
  CHECK(r.front().stream_index == 6);
  CHECK(r.back().stream_index == 69);
  CHECK(q.size_of(5) == 1);
  CHECK(q.recent_of(9).empty());
}

TEST_CASE("ppm files carry the P6 header") {
  const auto dir = std::filesystem::temp_directory_path() / "ssd_memory_dump";
  std::filesystem::remove_all(dir);
  MemoryBuffer m(6, 2);
  Rng rng(10);
  m.init_class_slots(0, of_class(0, 1), rng);
  m.reservoir_update(test::constant_example(kShape, 1, 1, 50), rng);
  const auto written = dump_memory(m, kShape, dir);
  CHECK(written == 4);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) files += entry.path().extension() == ".ppm";
  CHECK(files == written);
  CHECK(files <= static_cast<std::size_t>(m.capacity()));
  CHECK(std::filesystem::exists(dir / "manifest.csv"));

  const auto file = dir / "probe.ppm";
  write_ppm(file, Pixels{0, 1, 0.5, 0.5, 0, 1, 1, 1, 0, 0, 0.2, 0.2}, kShape);
  std::ifstream in(file, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(bytes.substr(0, header.size()) == header);
  // channel-planar input becomes interleaved RGB
  const unsigned char expected[6] = {0, 0, 0, 255, 255, 0};
  for (std::size_t i = 0; i < 6; ++i) CHECK(static_cast<unsigned char>(bytes[header.size() + i]) == expected[i]);
}

}  // TEST_SUITE
