#include "ssd/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace ssd {
inline namespace SSD_PRECISION_NS {

const char* slot_tag_name(SlotTag tag) {
  switch (tag) {
    case SlotTag::Empty:
      return "empty";
    case SlotTag::Summarized:
      return "summarized";
    case SlotTag::Original:
      return "original";
  }
  return "?";
}

int per_class_budget(std::int64_t capacity, int total_classes) {
  if (total_classes < 1) throw std::invalid_argument("memory: total class count must be >= 1");
  if (capacity < total_classes) {
    throw std::invalid_argument("memory: capacity " + std::to_string(capacity) + " is smaller than the class count " +
                                std::to_string(total_classes));
  }
  return static_cast<int>(capacity / total_classes);
}

MemoryBuffer::MemoryBuffer(std::int64_t capacity, int total_classes)
    : slots_(static_cast<std::size_t>(capacity)),
      total_classes_(total_classes),
      budget_(ssd::per_class_budget(capacity, total_classes)) {}

MemoryBuffer MemoryBuffer::reservoir_only(std::int64_t capacity) {
  if (capacity < 1) throw std::invalid_argument("memory: capacity must be >= 1");
  MemoryBuffer m;
  m.slots_.resize(static_cast<std::size_t>(capacity));
  return m;
}

std::int64_t MemoryBuffer::filled() const { return capacity() - count(SlotTag::Empty); }

std::int64_t MemoryBuffer::count(SlotTag tag) const {
  return std::count_if(slots_.begin(), slots_.end(), [tag](const Slot& s) { return s.tag == tag; });
}

std::vector<std::size_t> MemoryBuffer::init_class_slots(int c, std::span<const Example> first, Rng& rng) {
  if (budget_ == 0) throw std::logic_error("memory: buffer has no per-class reservation");
  if (c < 0 || c >= total_classes_) throw std::out_of_range("memory: class " + std::to_string(c) + " out of range");
  if (seen_.contains(c)) return {};
  std::vector<Example> seeds;
  for (const auto& e : first) {
    if (e.label == c) seeds.push_back(e);
  }
  if (seeds.empty()) throw std::invalid_argument("memory: no example of class " + std::to_string(c) + " to seed from");

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].tag != SlotTag::Summarized) eligible.push_back(i);
  }
  if (eligible.size() < static_cast<std::size_t>(budget_)) {
    throw std::logic_error("memory: only " + std::to_string(eligible.size()) + " free slots for class " +
                           std::to_string(c) + ", need " + std::to_string(budget_));
  }
  // Partial Fisher-Yates: the first k entries become the chosen slots.
  for (std::size_t i = 0; i < static_cast<std::size_t>(budget_); ++i) {
    const auto j = i + uniform_below(rng, eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(static_cast<std::size_t>(budget_));
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    Slot& s = slots_[eligible[i]];
    if (s.tag == SlotTag::Original) ++stats_.displaced_by_summary;
    s.tag = SlotTag::Summarized;
    s.example = seeds[i % seeds.size()];
  }
  seen_.insert(c);
  return eligible;
}

MemoryBuffer::Offer MemoryBuffer::reservoir_update(const Example& example, Rng& rng) {
  ++stats_.reservoir_offers;
  ++n_seen_;
  for (auto& s : slots_) {
    if (s.tag == SlotTag::Empty) {
      s.tag = SlotTag::Original;
      s.example = example;
      ++stats_.reservoir_inserts;
      return Offer::Inserted;
    }
  }
  const auto j = uniform_below(rng, static_cast<std::uint64_t>(n_seen_));
  std::uint64_t r = 0;
  for (auto& s : slots_) {
    if (s.tag != SlotTag::Original) continue;
    if (r == j) {
      s.example = example;
      ++stats_.reservoir_replacements;
      return Offer::Replaced;
    }
    ++r;
  }
  ++stats_.reservoir_skips;
  return Offer::Skipped;
}

std::vector<std::size_t> MemoryBuffer::sample_indices(std::size_t batch_size, Rng& rng) {
  auto pool = filled_indices();
  const std::size_t n = std::min(batch_size, pool.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  if (n > 0) {
    ++stats_.replay_batches;
    stats_.replay_examples += static_cast<std::int64_t>(n);
  }
  return pool;
}

std::vector<Example> MemoryBuffer::sample_replay_batch(std::size_t batch_size, Rng& rng) {
  const auto idx = sample_indices(batch_size, rng);
  return examples_at(idx);
}

std::vector<std::size_t> MemoryBuffer::summarized_of(int c) const {
  if (!seen_.contains(c)) throw std::invalid_argument("memory: class " + std::to_string(c) + " has no summarized slots");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].tag == SlotTag::Summarized && slots_[i].example.label == c) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> MemoryBuffer::other_summarized(int c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].tag == SlotTag::Summarized && slots_[i].example.label != c) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> MemoryBuffer::originals() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].tag == SlotTag::Original) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> MemoryBuffer::filled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].tag != SlotTag::Empty) out.push_back(i);
  }
  return out;
}

std::vector<Example> MemoryBuffer::examples_at(std::span<const std::size_t> indices) const {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(slots_.at(i).example);
  return out;
}

void MemoryBuffer::write_summarized(std::size_t index, Pixels pixels) {
  Slot& s = slots_.at(index);
  if (s.tag != SlotTag::Summarized) throw std::logic_error("memory: slot " + std::to_string(index) + " is not summarized");
  if (pixels.size() != s.example.pixels->size()) throw ShapeError("memory: summarized image size changed");
  s.example.pixels = std::make_shared<const Pixels>(std::move(pixels));
  ++stats_.summarized_writes;
}

RecentQueue::RecentQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("recent queue: capacity must be >= 1");
}

void RecentQueue::push(const Example& example) {
  auto& q = queues_[example.label];
  q.push_back(example);
  while (q.size() > capacity_) q.pop_front();
}

std::vector<Example> RecentQueue::recent_of(int c) const {
  const auto it = queues_.find(c);
  if (it == queues_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::size_t RecentQueue::size_of(int c) const {
  const auto it = queues_.find(c);
  return it == queues_.end() ? 0 : it->second.size();
}

bool RecentQueue::contains(const Example& example) const {
  const auto it = queues_.find(example.label);
  if (it == queues_.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(),
                     [&](const Example& e) { return e.pixels == example.pixels; });
}

void write_ppm(const std::filesystem::path& file, const Pixels& pixels, ImageShape shape) {
  if (static_cast<std::int64_t>(pixels.size()) != shape.numel()) throw ShapeError("write_ppm: pixel count mismatch");
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + file.string());
  out << "P6\n" << shape.width << ' ' << shape.height << "\n255\n";
  const auto plane = shape.height * shape.width;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(plane * 3));
  for (std::int64_t p = 0; p < plane; ++p) {
    for (std::int64_t k = 0; k < 3; ++k) {
      const auto ch = shape.channels == 1 ? 0 : std::min(k, shape.channels - 1);
      const double v = std::clamp(static_cast<double>(pixels[static_cast<std::size_t>(ch * plane + p)]), 0.0, 1.0);
      rgb[static_cast<std::size_t>(p * 3 + k)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + file.string());
}

std::size_t dump_memory(const MemoryBuffer& buffer, ImageShape shape, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("dump_memory: cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("dump_memory: cannot write to " + dir.string());
  manifest << "slot,tag,class,stream_index\n";
  std::size_t written = 0;
  for (std::size_t i = 0; i < buffer.slots().size(); ++i) {
    const Slot& s = buffer.slots()[i];
    if (s.tag == SlotTag::Empty) continue;
    const std::string name =
        std::to_string(i) + "_" + slot_tag_name(s.tag) + "_" + std::to_string(s.example.label) + ".ppm";
    write_ppm(dir / name, *s.example.pixels, shape);
    manifest << i << ',' << slot_tag_name(s.tag) << ',' << s.example.label << ',' << s.example.stream_index << '\n';
    ++written;
  }
  if (!manifest) throw std::runtime_error("dump_memory: manifest write failed in " + dir.string());
  return written;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
