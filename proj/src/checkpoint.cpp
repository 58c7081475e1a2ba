#include "ssd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw std::runtime_error("checkpoint " + path.string() + ": unexpected end of file");
  }
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::filesystem::path& path) {
  const std::uint64_t lo = get_u32(in, path);
  const std::uint64_t hi = get_u32(in, path);
  return lo | (hi << 32);
}

std::vector<std::uint64_t> dims_of(const Shape& shape) { return {shape.begin(), shape.end()}; }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    std::uint64_t count = 1;
    for (auto d : e.dims) count *= d;
    if (count != e.values.size()) throw std::invalid_argument("checkpoint: entry '" + e.name + "' has inconsistent size");
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) put_u64(out, d);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto count = get_u32(in, path);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(get_u32(in, path));
    if (!in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw std::runtime_error("checkpoint " + path.string() + ": truncated name");
    }
    const auto rank = get_u32(in, path);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.dims.push_back(get_u64(in, path));
      n *= e.dims.back();
    }
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(get_u32(in, path));
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<CheckpointEntry> export_state(Network& network, const std::string& prefix) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : network.named_parameters()) {
    const auto d = p.tensor.data();
    out.push_back({prefix + p.name, dims_of(p.tensor.shape()), std::vector<float>(d.begin(), d.end())});
  }
  for (const auto& b : network.named_buffers()) {
    out.push_back({prefix + b.name, {b.values->size()}, std::vector<float>(b.values->begin(), b.values->end())});
  }
  return out;
}

void import_state(Network& network, std::span<const CheckpointEntry> entries, const std::string& prefix) {
  auto find = [&](const std::string& name) -> const CheckpointEntry& {
    for (const auto& e : entries) {
      if (e.name == prefix + name) return e;
    }
    throw std::runtime_error("checkpoint: missing entry '" + prefix + name + "'");
  };
  for (auto& p : network.named_parameters()) {
    const auto& e = find(p.name);
    if (e.dims != dims_of(p.tensor.shape())) throw ShapeError("checkpoint: shape mismatch for '" + p.name + "'");
    p.tensor.assign(std::vector<Real>(e.values.begin(), e.values.end()));
  }
  for (auto& b : network.named_buffers()) {
    const auto& e = find(b.name);
    if (e.values.size() != b.values->size()) throw ShapeError("checkpoint: size mismatch for '" + b.name + "'");
    b.values->assign(e.values.begin(), e.values.end());
  }
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
