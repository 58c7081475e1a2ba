#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "ssd/commands.hpp"
#include "ssd/config.hpp"
#include "ssd/entry.hpp"
#include "ssd/harness.hpp"

using namespace ssd;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.synthetic_classes = 4;
  c.synthetic_per_class = 30;
  c.synthetic_test_per_class = 10;
  c.image_size = 8;
  c.num_tasks = 2;
  c.memory_size = 8;
  c.replay_batch = 20;
  c.summarizer_width = 4;
  c.backbone = "convnet3";
  c.learner_width = 4;
  c.precision = "f64";
  c.quiet = true;
  return c;
}

std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ssd_harness_tests" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

const Example* find_streamed(const TaskSequence& tasks, std::int64_t index) {
  for (const auto& t : tasks.tasks) {
    for (const auto& e : t.train) {
      if (e.stream_index == index) return &e;
    }
  }
  return nullptr;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ssd");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config text parsing") {
  const auto map = parse_config("# comment\n tau = 3 \n\nseeds = 0-2, 7\nlearner_mode = scr # trailing\n");
  const auto c = RunConfig::from_map(map);
  CHECK(c.tau == 3);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2, 7});
  CHECK(c.learner_mode == "scr");
  CHECK_THROWS_AS(parse_config("tau 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_map({{"no_such_key", "1"}}), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_map({{"tau", "six"}}), std::invalid_argument);

  const RunConfig round = RunConfig::from_map(c.to_map());
  CHECK(round.to_map() == c.to_map());
}

TEST_CASE("every invalid field is reported") {
  RunConfig c;
  c.tau = 0;
  c.memory_size = 0;
  c.dynamic_memory = false;  // summarize stays on, which needs dynamic memory
  c.precision = "f16";
  const auto errors = c.validate();
  CHECK(errors.size() == 4);
  CHECK_THROWS_AS(c.check(), std::invalid_argument);
  RunConfig cifar;
  cifar.dataset = "cifar100";
  cifar.data_path = "/data";
  cifar.memory_size = 100;
  CHECK(cifar.validate().size() == 1);  // needs full_scale
  cifar.full_scale = true;
  CHECK(cifar.validate().empty());
}

TEST_CASE("command line flags override config files") {
  const auto dir = fresh_dir("flags");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "base.conf") << "tau = 3\ngamma = 0.5\n";
  const auto cfg = tiny_config().to_map();
  std::ofstream tiny(dir / "tiny.conf");
  for (const auto& [k, v] : cfg) tiny << k << " = " << v << '\n';
  tiny.close();
  const int code = cli({"run", "-c", (dir / "tiny.conf").string(), "-c", (dir / "base.conf").string(), "--tau",
                        "2", "--output_dir", (dir / "out").string(), "--seeds", "0"});
  CHECK(code == kExitOk);
  const std::string written = slurp(dir / "out" / "config.txt");
  CHECK(written.find("tau = 2\n") != std::string::npos);
  CHECK(written.find("gamma = 0.5\n") != std::string::npos);
  CHECK(cli({"run", "--tau", "0"}) == kExitUsage);
  CHECK(cli({"run", "--no_such_flag", "1"}) == kExitUsage);
  CHECK(cli({}) == kExitUsage);
}

TEST_CASE("metrics CSV rows and average end accuracy") {
  MetricsRecord m(2);
  m.set(0, 0, 0.5);
  m.set(1, 0, 0.25);
  m.set(1, 1, 0.75);
  CHECK(m.average_end() == doctest::Approx(0.5));
  CHECK(m.to_csv() ==
        "after_task,eval_task,accuracy\n0,0,0.500000\n1,0,0.250000\n1,1,0.750000\n1,avg_end,0.500000\n");
  MetricsRecord perfect(3);
  for (int a = 0; a < 3; ++a) {
    for (int e = 0; e <= a; ++e) perfect.set(a, e, 1.0);
  }
  CHECK(perfect.average_end() == 1.0);
  const auto s = summarize({0.5, 0.7, 0.9});
  CHECK(s.mean == doctest::Approx(0.7));
  CHECK(s.stddev == doctest::Approx(0.2));
}

TEST_CASE("ablation table header names the rows") {
  std::vector<AblationRow> rows;
  for (const char* name : {"none", "D", "D+S", "D+S+P"}) {
    AblationRow r{name, false, false, false, {}};
    r.result.runs.emplace_back();
    r.result.average_end = summarize({0.5});
    rows.push_back(std::move(r));
  }
  const std::string csv = ablation_csv(rows);
  CHECK(csv.substr(0, csv.find('\n')) == "seed,none,D,D+S,D+S+P");
}

TEST_CASE("a full run keeps the memory invariants") {
  const RunConfig config = tiny_config();
  const Dataset data = load_dataset(config);
  RunState state;
  std::int64_t iterations = 0;
  const auto r = run_seed(config, data, 3, &state, [&](const RunState&, int, std::int64_t) { ++iterations; });
  CHECK(iterations == 12);  // 120 examples, batches of 10
  CHECK(r.violations.empty());
  CHECK(r.queue_leaks == 0);
  CHECK(r.filled <= r.capacity);
  CHECK(r.summarized_slots == 8);
  CHECK(r.summarize_events > 0);
  CHECK(r.reinit_count == 2);  // one per task
  CHECK(r.metrics.last_task() == 1);
  CHECK(check_invariants(config, state).empty());
}

TEST_CASE("summarized images move away from their seed images") {
  const RunConfig config = tiny_config();
  const Dataset data = load_dataset(config);
  RunState state;
  run_seed(config, data, 4, &state);
  int moved = 0;
  for (const auto& slot : state.memory->slots()) {
    if (slot.tag != SlotTag::Summarized) continue;
    const Example* seed = find_streamed(state.tasks, slot.example.stream_index);
    REQUIRE(seed != nullptr);
    double linf = 0;
    for (std::size_t i = 0; i < seed->pixels->size(); ++i) {
      linf = std::max(linf, static_cast<double>(std::abs((*slot.example.pixels)[i] - (*seed->pixels)[i])));
    }
    moved += linf > 0;
  }
  CHECK(moved == 8);
}

TEST_CASE("dynamic memory without summarizing keeps the seed images") {
  RunConfig config = tiny_config();
  config.summarize = false;
  config.past_assist = false;
  const Dataset data = load_dataset(config);
  RunState state;
  const auto r = run_seed(config, data, 4, &state);
  CHECK(r.summarize_events == 0);
  for (const auto& slot : state.memory->slots()) {
    if (slot.tag != SlotTag::Summarized) continue;
    const Example* seed = find_streamed(state.tasks, slot.example.stream_index);
    REQUIRE(seed != nullptr);
    CHECK(*slot.example.pixels == *seed->pixels);
  }
}

TEST_CASE("without dynamic memory the run is plain reservoir replay") {
  RunConfig config = tiny_config();
  config.dynamic_memory = config.summarize = config.past_assist = false;
  const Dataset data = load_dataset(config);
  RunState state;
  const auto r = run_seed(config, data, 4, &state);
  CHECK(state.summarizer == nullptr);
  CHECK(r.summarized_slots == 0);
  CHECK(r.memory.reservoir_offers == 120);
  CHECK(r.violations.empty());
}

TEST_CASE("same config and seed give byte-identical CSVs") {
  RunConfig config = tiny_config();
  config.seeds = {5};
  config.write_trace = true;
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  config.output_dir = a.string();
  run_experiment(config);
  config.output_dir = b.string();
  run_experiment(config);
  for (const char* f : {"seed_5/metrics.csv", "seed_5/trace.csv", "summary.csv"}) {
    INFO(f);
    const auto x = slurp(a / f), y = slurp(b / f);
    CHECK(!x.empty());
    CHECK(x == y);
  }
}

TEST_CASE("checkpoint dump writes at most K images") {
  RunConfig config = tiny_config();
  config.save_checkpoint = true;
  const auto dir = fresh_dir("dump");
  config.output_dir = dir.string();
  run_experiment(config);
  std::ostringstream out, err;
  CHECK(command_dump(dir / "seed_0" / "checkpoint.ssdc", dir / "images", out, err) == kExitOk);
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "images")) images += e.path().extension() == ".ppm";
  CHECK(images > 0);
  CHECK(images <= static_cast<std::size_t>(config.memory_size));
}

TEST_CASE("summarizing every iteration costs more time than every sixth") {
  RunConfig config = tiny_config();
  config.memory_size = 20;
  config.summarizer_width = 8;
  const Dataset data = load_dataset(config);
  config.tau = 1;
  const auto every = run_seed(config, data, 6);
  config.tau = 6;
  const auto sixth = run_seed(config, data, 6);
  CHECK(every.summarize_events > 4 * sixth.summarize_events);
  CHECK(every.seconds > sixth.seconds);
}

TEST_CASE("SCR mode evaluates with class means") {
  RunConfig config = tiny_config();
  config.learner_mode = "scr";
  const Dataset data = load_dataset(config);
  const auto r = run_seed(config, data, 7);
  CHECK(r.violations.empty());
  const double acc = r.metrics.average_end();
  CHECK((acc >= 0 && acc <= 1));
}

TEST_CASE("output root comes from the environment") {
  CHECK(resolve_output_dir("/abs/path") == std::filesystem::path("/abs/path"));
  const char* root = std::getenv(kOutputRootEnv);
  const auto expected = std::filesystem::path(root && *root ? root : "runs") / "rel";
  CHECK(resolve_output_dir("rel") == expected);
}

}  // TEST_SUITE
