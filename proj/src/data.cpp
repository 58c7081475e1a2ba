#include "ssd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "ssd/rng.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

std::int64_t cifar_record_bytes(ImageShape shape) { return kCifarLabelBytes + shape.numel(); }

std::vector<Example> read_cifar_records(const std::filesystem::path& file, ImageShape shape,
                                        std::int64_t expected_records) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(file, ec);
  if (ec) throw std::runtime_error("cifar: cannot stat " + file.string() + ": " + ec.message());
  const std::int64_t record = cifar_record_bytes(shape);
  const std::int64_t expected = record * expected_records;
  if (static_cast<std::int64_t>(actual) != expected) {
    throw std::runtime_error("cifar: " + file.string() + " has " + std::to_string(actual) + " bytes, expected " +
                             std::to_string(expected) + " (" + std::to_string(expected_records) + " records of " +
                             std::to_string(record) + " bytes)");
  }
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cifar: cannot open " + file.string());

  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(expected_records));
  std::vector<unsigned char> buffer(static_cast<std::size_t>(record));
  for (std::int64_t r = 0; r < expected_records; ++r) {
    if (!in.read(reinterpret_cast<char*>(buffer.data()), record)) {
      throw std::runtime_error("cifar: " + file.string() + ": short read at record " + std::to_string(r));
    }
    auto pixels = std::make_shared<Pixels>(static_cast<std::size_t>(shape.numel()));
    for (std::size_t i = 0; i < pixels->size(); ++i) {
      (*pixels)[i] = static_cast<Real>(buffer[i + kCifarLabelBytes]) / Real(255);
    }
    out.push_back({std::move(pixels), static_cast<int>(buffer[1]), -1});
  }
  return out;
}

void write_cifar_records(const std::filesystem::path& file, std::span<const Example> examples, ImageShape shape) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cifar: cannot open " + file.string() + " for writing");
  std::vector<unsigned char> buffer(static_cast<std::size_t>(cifar_record_bytes(shape)));
  for (const auto& e : examples) {
    if (e.label < 0 || e.label > 255) throw std::invalid_argument("cifar: label does not fit in a byte");
    if (static_cast<std::int64_t>(e.pixels->size()) != shape.numel()) {
      throw ShapeError("cifar: example has " + std::to_string(e.pixels->size()) + " pixels, expected " +
                       std::to_string(shape.numel()));
    }
    buffer[0] = buffer[1] = static_cast<unsigned char>(e.label);
    for (std::size_t i = 0; i < e.pixels->size(); ++i) {
      const double v = std::clamp(static_cast<double>((*e.pixels)[i]), 0.0, 1.0);
      buffer[i + kCifarLabelBytes] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
  }
  if (!out) throw std::runtime_error("cifar: write failed for " + file.string());
}

Dataset load_cifar100(const std::filesystem::path& dir) {
  Dataset d;
  d.shape = ImageShape{3, 32, 32};
  d.num_classes = 100;
  d.train = read_cifar_records(dir / "train.bin", d.shape, kCifar100Train);
  d.test = read_cifar_records(dir / "test.bin", d.shape, kCifar100Test);
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& e : *split) {
      if (e.label >= d.num_classes) throw std::runtime_error("cifar: fine label out of range: " + std::to_string(e.label));
    }
  }
  return d;
}

std::int64_t TaskSequence::stream_length() const {
  std::int64_t n = 0;
  for (const auto& t : tasks) n += static_cast<std::int64_t>(t.train.size());
  return n;
}

TaskSequence make_tasks(const Dataset& dataset, int num_tasks, std::uint64_t seed) {
  if (num_tasks < 1) throw std::invalid_argument("make_tasks: num_tasks must be >= 1");
  if (dataset.num_classes % num_tasks != 0) {
    throw std::invalid_argument("make_tasks: " + std::to_string(dataset.num_classes) + " classes cannot be split into " +
                                std::to_string(num_tasks) + " equal tasks");
  }
  const SeedSplitter seeds(seed);
  std::vector<int> order(static_cast<std::size_t>(dataset.num_classes));
  std::iota(order.begin(), order.end(), 0);
  Rng class_rng = seeds.stream("class_order");
  std::shuffle(order.begin(), order.end(), class_rng);

  const int per_task = dataset.num_classes / num_tasks;
  TaskSequence seq;
  seq.task_of_class.assign(static_cast<std::size_t>(dataset.num_classes), -1);
  seq.tasks.resize(static_cast<std::size_t>(num_tasks));
  for (int t = 0; t < num_tasks; ++t) {
    auto& task = seq.tasks[static_cast<std::size_t>(t)];
    task.classes.assign(order.begin() + t * per_task, order.begin() + (t + 1) * per_task);
    for (int c : task.classes) seq.task_of_class[static_cast<std::size_t>(c)] = t;
  }
  for (const auto* split : {&dataset.train, &dataset.test}) {
    for (const auto& e : *split) {
      if (e.label < 0 || e.label >= dataset.num_classes) {
        throw std::invalid_argument("make_tasks: label " + std::to_string(e.label) + " outside [0, " +
                                    std::to_string(dataset.num_classes) + ")");
      }
    }
  }
  for (const auto& e : dataset.train) {
    seq.tasks[static_cast<std::size_t>(seq.task_of_class[static_cast<std::size_t>(e.label)])].train.push_back(e);
  }
  for (const auto& e : dataset.test) {
    seq.tasks[static_cast<std::size_t>(seq.task_of_class[static_cast<std::size_t>(e.label)])].test.push_back(e);
  }
  std::int64_t index = 0;
  for (int t = 0; t < num_tasks; ++t) {
    auto& task = seq.tasks[static_cast<std::size_t>(t)];
    Rng rng = seeds.stream("task_order", static_cast<std::uint64_t>(t));
    std::shuffle(task.train.begin(), task.train.end(), rng);
    for (auto& e : task.train) e.stream_index = index++;
  }
  return seq;
}

BatchStream::BatchStream(const Task& task, std::size_t batch_size) : examples_(task.train), batch_size_(batch_size) {
  if (batch_size_ == 0) throw std::invalid_argument("stream_batches: batch size must be >= 1");
}

std::optional<std::span<const Example>> BatchStream::next() {
  if (position_ >= examples_.size()) return std::nullopt;
  const std::size_t n = std::min(batch_size_, examples_.size() - position_);
  auto batch = examples_.subspan(position_, n);
  position_ += n;
  return batch;
}

BatchStream stream_batches(const Task& task, std::size_t batch_size) { return BatchStream(task, batch_size); }

namespace {

struct ClassStyle {
  double angle;
  double frequency;
  double color[3];
  double blob_x, blob_y;
  double blob_color[3];
};

void hue_to_rgb(double hue, double out[3]) {
  for (int k = 0; k < 3; ++k) {
    const double phase = hue + static_cast<double>(k) / 3.0;
    out[k] = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * phase);
  }
}

ClassStyle style_for(int c, int num_classes, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassStyle s{};
  s.angle = std::numbers::pi * (static_cast<double>(c) + 0.3 * u(rng)) / num_classes;
  s.frequency = 1.5 + 0.5 * static_cast<double>(c % 3) + 0.25 * u(rng);
  hue_to_rgb(static_cast<double>(c) / num_classes, s.color);
  const double around = 2.0 * std::numbers::pi * (static_cast<double>(c) * 0.618034 + 0.1 * u(rng));
  s.blob_x = 0.5 + 0.28 * std::cos(around);
  s.blob_y = 0.5 + 0.28 * std::sin(around);
  hue_to_rgb(static_cast<double>(c) / num_classes + 0.5, s.blob_color);
  return s;
}

Pixels render(const ClassStyle& s, ImageShape shape, double noise, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * u(rng);
  const double angle = s.angle + 0.15 * gauss(rng);
  const double bx = s.blob_x + 0.08 * gauss(rng);
  const double by = s.blob_y + 0.08 * gauss(rng);
  const double contrast = 0.6 + 0.4 * u(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const auto H = shape.height, W = shape.width, C = shape.channels;
  Pixels px(static_cast<std::size_t>(shape.numel()));
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(W);
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(H);
      const double wave = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * s.frequency * (fx * ca + fy * sa) + phase);
      const double d2 = (fx - bx) * (fx - bx) + (fy - by) * (fy - by);
      const double blob = std::exp(-d2 / (2.0 * 0.12 * 0.12));
      for (std::int64_t ch = 0; ch < C; ++ch) {
        const int k = static_cast<int>(ch % 3);
        double v = 0.15 + 0.55 * contrast * wave * s.color[k] + 0.5 * blob * s.blob_color[k];
        v += noise * gauss(rng);
        v = std::clamp(v, 0.0, 1.0);
        px[static_cast<std::size_t>((ch * H + y) * W + x)] = static_cast<Real>(std::round(v * 255.0) / 255.0);
      }
    }
  }
  return px;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.per_class < 1 || spec.test_per_class < 0) {
    throw std::invalid_argument("generate_synthetic: class and sample counts must be positive");
  }
  if (spec.shape.channels < 1 || spec.shape.height < 1 || spec.shape.width < 1) {
    throw std::invalid_argument("generate_synthetic: image shape must be positive");
  }
  const SeedSplitter seeds(spec.seed);
  Dataset d;
  d.shape = spec.shape;
  d.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) {
    Rng style_rng = seeds.stream("style", static_cast<std::uint64_t>(c));
    const ClassStyle style = style_for(c, spec.num_classes, style_rng);
    for (int i = 0; i < spec.per_class + spec.test_per_class; ++i) {
      const bool is_test = i >= spec.per_class;
      Rng rng(seeds.derive(is_test ? "test" : "train", static_cast<std::uint64_t>(c) << 32 | static_cast<std::uint64_t>(i)));
      Example e{std::make_shared<const Pixels>(render(style, spec.shape, spec.noise, rng)), c, -1};
      (is_test ? d.test : d.train).push_back(std::move(e));
    }
  }
  return d;
}

Tensor stack_images(std::span<const Example> examples, ImageShape shape, bool requires_grad) {
  const auto per = static_cast<std::size_t>(shape.numel());
  std::vector<Real> values;
  values.reserve(per * examples.size());
  for (const auto& e : examples) {
    if (!e.pixels || e.pixels->size() != per) {
      throw ShapeError("stack_images: example has " + std::to_string(e.pixels ? e.pixels->size() : 0) +
                       " pixels, expected " + std::to_string(per));
    }
    values.insert(values.end(), e.pixels->begin(), e.pixels->end());
  }
  return Tensor::from({static_cast<std::int64_t>(examples.size()), shape.channels, shape.height, shape.width},
                      std::move(values), requires_grad);
}

std::vector<int> labels_of(std::span<const Example> examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
