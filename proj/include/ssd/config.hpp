#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ssd {

using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped. Throws with the origin and line number on malformed input.
ConfigMap parse_config(std::string_view text, std::string_view origin = "<config>");
ConfigMap read_config_file(const std::filesystem::path& file);

/// Everything a run needs. Field names match the config keys.
struct RunConfig {
  // data
  std::string dataset = "synthetic";  // synthetic | cifar100
  std::string data_path;              // CIFAR-100 binary directory
  std::string synthetic_cache;        // optional record file for the synthetic train split
  int synthetic_classes = 10;
  int synthetic_per_class = 500;
  int synthetic_test_per_class = 100;
  int image_size = 16;
  int image_channels = 3;
  std::uint64_t synthetic_seed = 7;
  double synthetic_noise = 0.08;
  int num_tasks = 5;

  // memory
  std::int64_t memory_size = 10;
  int queue_capacity = 64;
  int stream_batch = 10;
  int replay_batch = 100;

  // summarizer
  int tau = 6;
  double gamma = 1.0;
  int summarizer_width = 128;
  double summarizer_lr = 0.01;
  double summarizer_momentum = 0.9;
  double pixel_lr = 0;  // 0 = by images per class
  double pixel_momentum = 0.5;

  // learner
  std::string learner_mode = "er";     // er | scr
  std::string backbone = "resnet18";   // resnet18 | convnet3
  int learner_width = 20;
  double learner_lr = 0.1;
  double lambda = 1.0;
  int replays_per_iter = 1;
  double temperature = 0.09;
  bool augment = false;

  // ablation flags
  bool dynamic_memory = true;
  bool summarize = true;
  bool past_assist = true;

  // run
  std::vector<std::uint64_t> seeds{0};
  std::string precision = "f32";  // f32 | f64
  std::string output_dir;         // relative paths resolve under the output root
  bool write_trace = false;
  bool dump_memory = false;
  bool save_checkpoint = false;
  bool full_scale = false;  // required for CIFAR-100 runs
  bool quiet = false;

  /// Every problem found, empty when the config is usable.
  std::vector<std::string> validate() const;
  /// Throws std::invalid_argument listing every problem.
  void check() const;

  ConfigMap to_map() const;
  /// Unknown keys and unparsable values are errors.
  static RunConfig from_map(const ConfigMap& map);
  /// Applies `map` on top of this config.
  void apply(const ConfigMap& map);
};

struct ConfigKeyInfo {
  std::string name;
  std::string help;
};

/// Every accepted key, in declaration order.
const std::vector<ConfigKeyInfo>& config_keys();

/// Resolves `output_dir` against $SSD_OUTPUT_ROOT (default "runs").
std::filesystem::path resolve_output_dir(const std::string& output_dir);

inline constexpr const char* kOutputRootEnv = "SSD_OUTPUT_ROOT";

}  // namespace ssd
