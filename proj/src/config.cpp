#include "ssd/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace ssd {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno != 0 || !std::isfinite(out)) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

/// Comma-separated seeds; `a-b` expands to an inclusive range.
std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const auto lo = parse_integer<std::uint64_t>(key, trim(item.substr(0, dash)));
      const auto hi = parse_integer<std::uint64_t>(key, trim(item.substr(dash + 1)));
      if (hi < lo || hi - lo > 100000) throw std::invalid_argument("config: bad seed range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(parse_integer<std::uint64_t>(key, item));
    }
  }
  return out;
}

std::string render_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  ConfigKeyInfo info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SSD_STRING(name, help) \
  Field{{#name, help}, [](RunConfig& c, const std::string& v) { c.name = v; }, [](const RunConfig& c) { return c.name; }}
#define SSD_INT(name, type, help)                                                                    \
  Field{{#name, help}, [](RunConfig& c, const std::string& v) { c.name = parse_integer<type>(#name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.name); }}
#define SSD_DOUBLE(name, help)                                                                \
  Field{{#name, help}, [](RunConfig& c, const std::string& v) { c.name = parse_double(#name, v); }, \
        [](const RunConfig& c) { return render_double(c.name); }}
#define SSD_BOOL(name, help)                                                                \
  Field{{#name, help}, [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
        [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SSD_STRING(dataset, "synthetic or cifar100"),
      SSD_STRING(data_path, "directory holding CIFAR-100 train.bin and test.bin"),
      SSD_STRING(synthetic_cache, "record file to cache the synthetic train split"),
      SSD_INT(synthetic_classes, int, "synthetic class count"),
      SSD_INT(synthetic_per_class, int, "synthetic training images per class"),
      SSD_INT(synthetic_test_per_class, int, "synthetic test images per class"),
      SSD_INT(image_size, int, "synthetic image height and width"),
      SSD_INT(image_channels, int, "synthetic image channels"),
      SSD_INT(synthetic_seed, std::uint64_t, "synthetic generator seed"),
      SSD_DOUBLE(synthetic_noise, "synthetic per-pixel noise level"),
      SSD_INT(num_tasks, int, "number of class-incremental tasks"),
      SSD_INT(memory_size, std::int64_t, "memory capacity K"),
      SSD_INT(queue_capacity, int, "recent images kept per class for summarizing"),
      SSD_INT(stream_batch, int, "stream mini-batch size"),
      SSD_INT(replay_batch, int, "replay mini-batch size"),
      SSD_INT(tau, int, "summarizing interval"),
      SSD_DOUBLE(gamma, "relationship matching coefficient"),
      SSD_INT(summarizer_width, int, "summarizer ConvNet channels"),
      SSD_DOUBLE(summarizer_lr, "summarizer network learning rate"),
      SSD_DOUBLE(summarizer_momentum, "summarizer network momentum"),
      SSD_DOUBLE(pixel_lr, "summarized pixel learning rate, 0 = by images per class"),
      SSD_DOUBLE(pixel_momentum, "summarized pixel momentum"),
      SSD_STRING(learner_mode, "er or scr"),
      SSD_STRING(backbone, "resnet18 or convnet3"),
      SSD_INT(learner_width, int, "learner base width"),
      SSD_DOUBLE(learner_lr, "learner learning rate"),
      SSD_DOUBLE(lambda, "replay loss weight"),
      SSD_INT(replays_per_iter, int, "replay steps per stream iteration"),
      SSD_DOUBLE(temperature, "supervised contrastive temperature"),
      SSD_BOOL(augment, "random crop and flip views (scr mode)"),
      SSD_BOOL(dynamic_memory, "reserve per-class summarized slots (D)"),
      SSD_BOOL(summarize, "optimize summarized slots (S)"),
      SSD_BOOL(past_assist, "past-assisted model update and relationship matching (P)"),
      Field{{"seeds", "comma list or ranges, e.g. 0-9"},
            [](RunConfig& c, const std::string& v) { c.seeds = parse_seeds("seeds", v); },
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
              return out;
            }},
      SSD_STRING(precision, "f32 or f64"),
      SSD_STRING(output_dir, "where run artifacts go"),
      SSD_BOOL(write_trace, "write per-event summarizer traces"),
      SSD_BOOL(dump_memory, "dump final memory images"),
      SSD_BOOL(save_checkpoint, "save learner and memory checkpoint"),
      SSD_BOOL(full_scale, "allow long CIFAR-100 runs"),
      SSD_BOOL(quiet, "suppress progress output"),
  };
  return table;
}

#undef SSD_STRING
#undef SSD_INT
#undef SSD_DOUBLE
#undef SSD_BOOL

}  // namespace

ConfigMap parse_config(std::string_view text, std::string_view origin) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw std::invalid_argument(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("config: cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.string());
}

const std::vector<ConfigKeyInfo>& config_keys() {
  static const std::vector<ConfigKeyInfo> keys = [] {
    std::vector<ConfigKeyInfo> out;
    for (const auto& f : fields()) out.push_back(f.info);
    return out;
  }();
  return keys;
}

void RunConfig::apply(const ConfigMap& map) {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : map) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.info.name == key; });
    if (it == table.end()) {
      unknown.push_back(key);
      continue;
    }
    it->set(*this, value);
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown key(s):";
    for (const auto& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
}

RunConfig RunConfig::from_map(const ConfigMap& map) {
  RunConfig c;
  c.apply(map);
  return c;
}

ConfigMap RunConfig::to_map() const {
  ConfigMap out;
  for (const auto& f : fields()) out[f.info.name] = f.get(*this);
  return out;
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> errors;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  int classes = synthetic_classes;
  if (dataset == "cifar100") {
    classes = 100;
    need(!data_path.empty(), "data_path is required for dataset = cifar100");
    need(full_scale, "dataset = cifar100 is a long run; pass full_scale = true to confirm");
  } else {
    need(dataset == "synthetic", "dataset must be synthetic or cifar100");
    need(synthetic_classes >= 1, "synthetic_classes must be >= 1");
    need(synthetic_per_class >= 1, "synthetic_per_class must be >= 1");
    need(synthetic_test_per_class >= 1, "synthetic_test_per_class must be >= 1");
    need(image_size >= 8, "image_size must be >= 8");
    need(image_channels >= 1, "image_channels must be >= 1");
  }
  need(num_tasks >= 1, "num_tasks must be >= 1");
  need(num_tasks < 1 || classes % num_tasks == 0, "class count must be divisible by num_tasks");
  need(memory_size >= 1, "memory_size must be >= 1");
  need(!dynamic_memory || memory_size >= classes, "memory_size must be >= the class count with dynamic_memory");
  need(queue_capacity >= 1, "queue_capacity must be >= 1");
  need(stream_batch >= 1, "stream_batch must be >= 1");
  need(replay_batch >= 1, "replay_batch must be >= 1");
  need(tau >= 1, "tau must be >= 1");
  need(gamma >= 0, "gamma must be >= 0");
  need(summarizer_width >= 1, "summarizer_width must be >= 1");
  need(summarizer_lr > 0, "summarizer_lr must be > 0");
  need(summarizer_momentum >= 0 && summarizer_momentum < 1, "summarizer_momentum must be in [0, 1)");
  need(pixel_lr >= 0, "pixel_lr must be >= 0");
  need(pixel_momentum >= 0 && pixel_momentum < 1, "pixel_momentum must be in [0, 1)");
  need(learner_mode == "er" || learner_mode == "scr", "learner_mode must be er or scr");
  need(backbone == "resnet18" || backbone == "convnet3", "backbone must be resnet18 or convnet3");
  need(learner_width >= 1, "learner_width must be >= 1");
  need(learner_lr > 0, "learner_lr must be > 0");
  need(lambda >= 0, "lambda must be >= 0");
  need(replays_per_iter >= 1, "replays_per_iter must be >= 1");
  need(temperature > 0, "temperature must be > 0");
  need(!summarize || dynamic_memory, "summarize requires dynamic_memory");
  need(!past_assist || summarize, "past_assist requires summarize");
  need(!seeds.empty(), "seeds must list at least one seed");
  need(precision == "f32" || precision == "f64", "precision must be f32 or f64");
  return errors;
}

void RunConfig::check() const {
  const auto errors = validate();
  if (errors.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw std::invalid_argument(msg);
}

std::filesystem::path resolve_output_dir(const std::string& output_dir) {
  std::filesystem::path p(output_dir);
  if (p.is_absolute()) return p;
  const char* root = std::getenv(kOutputRootEnv);
  return std::filesystem::path(root && *root ? root : "runs") / p;
}

}  // namespace ssd
